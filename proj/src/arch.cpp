#include "dynet/arch.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dynet {

namespace {

struct KindName {
  BlockKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {BlockKind::DyMobile, "dy-mobile"},
    {BlockKind::DyShuffle, "dy-shuffle"},
    {BlockKind::DyResNetBasic, "dy-resnet-basic"},
    {BlockKind::DyResNetBottleneck, "dy-resnet-bottleneck"},
    {BlockKind::FixMobile, "fix-mobile"},
    {BlockKind::FixShuffle, "fix-shuffle"},
    {BlockKind::FixResNetBasic, "fix-resnet-basic"},
    {BlockKind::FixResNetBottleneck, "fix-resnet-bottleneck"},
    {BlockKind::MobileV2, "mobilenetv2"},
    {BlockKind::ShuffleV2, "shufflenetv2"},
    {BlockKind::ResNetBasic, "resnet-basic"},
    {BlockKind::ResNetBottleneck, "resnet-bottleneck"},
};

bool is_mobile(BlockKind k) { return k == BlockKind::DyMobile || k == BlockKind::FixMobile; }
bool is_shuffle(BlockKind k) {
  return k == BlockKind::DyShuffle || k == BlockKind::FixShuffle || k == BlockKind::ShuffleV2;
}
bool is_basic(BlockKind k) {
  return k == BlockKind::DyResNetBasic || k == BlockKind::FixResNetBasic || k == BlockKind::ResNetBasic;
}
bool is_bottleneck(BlockKind k) {
  return k == BlockKind::DyResNetBottleneck || k == BlockKind::FixResNetBottleneck ||
         k == BlockKind::ResNetBottleneck;
}

LayerPlan layer(std::string name, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                std::size_t groups, bool relu) {
  LayerPlan p;
  p.name = std::move(name);
  p.geom = ConvGeometry{in, out, k, stride, k / 2, groups};
  p.relu = relu;
  return p;
}

std::string spec_label(const BlockSpec& s) {
  return std::string(block_kind_name(s.kind)) + " " + std::to_string(s.in_channels) + "->" +
         std::to_string(s.out_channels);
}

}  // namespace

const char* block_kind_name(BlockKind kind) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == kind) return kn.name;
  }
  return "?";
}

BlockKind parse_block_kind(const std::string& name) {
  for (const auto& kn : kKindNames) {
    if (name == kn.name) return kn.kind;
  }
  throw Error("unknown block kind '" + name + "'");
}

bool is_dynamic(BlockKind kind) {
  return kind == BlockKind::DyMobile || kind == BlockKind::DyShuffle || kind == BlockKind::DyResNetBasic ||
         kind == BlockKind::DyResNetBottleneck;
}

BlockSpec BlockSpec::normalized() const {
  BlockSpec s = *this;
  if (is_mobile(kind)) s.out_channels = (out_channels + 5) / 6 * 6;
  if (!is_dynamic(kind)) s.bank_size = 1;
  return s;
}

void BlockSpec::validate() const {
  const std::string label = spec_label(*this);
  if (in_channels == 0 || out_channels == 0) throw Error(label + ": channel counts must be positive");
  if (stride != 1 && stride != 2) throw Error(label + ": stride must be 1 or 2, got " + std::to_string(stride));
  if (bank_size == 0) throw Error(label + ": bank size must be >= 1");
  if (!is_dynamic(kind) && bank_size != 1) throw Error(label + ": fixed blocks use a single kernel per channel");
  if (is_mobile(kind) && out_channels % 6 != 0) {
    throw Error(label + ": output channels must be a multiple of 6 (normalize the spec first)");
  }
  if (is_shuffle(kind)) {
    if (stride == 1) {
      if (in_channels != out_channels) throw Error(label + ": stride-1 shuffle units keep the channel count");
      const std::size_t mult = kind == BlockKind::ShuffleV2 ? 4 : 8;
      if (out_channels % mult != 0) {
        throw Error(label + ": channels must be a multiple of " + std::to_string(mult));
      }
    } else if (out_channels % 4 != 0) {
      throw Error(label + ": downsampling shuffle units need output channels divisible by 4");
    }
  }
  if (is_basic(kind) && kind != BlockKind::ResNetBasic && out_channels % 2 != 0) {
    throw Error(label + ": output channels must be even");
  }
  if (is_bottleneck(kind) && out_channels % (kind == BlockKind::ResNetBottleneck ? 4 : 8) != 0) {
    throw Error(label + ": bottleneck output channels not divisible by its inner reduction");
  }
}

std::size_t BlockPlan::coefficient_total() const {
  std::size_t t = 0;
  for (const auto& l : main) {
    if (l.dynamic) t += l.geom.out_channels * l.bank_size;
  }
  return t;
}

BlockPlan plan_block(const BlockSpec& raw) {
  const BlockSpec s = raw.normalized();
  s.validate();
  BlockPlan p;
  p.spec = s;
  const std::size_t in = s.in_channels, out = s.out_channels, st = s.stride;
  if (is_mobile(s.kind)) {
    p.topology = BlockTopology::Mobile;
    p.main = {layer("pw1", in, out, 1, 1, 1, true), layer("dw", out, out, 3, st, out / 6, true),
              layer("pw2", out, out, 1, 1, 1, false)};
    p.residual = st == 1 && in == out;
  } else if (s.kind == BlockKind::MobileV2) {
    p.topology = BlockTopology::Mobile;
    const std::size_t e = 6 * in;
    p.main = {layer("pw1", in, e, 1, 1, 1, true), layer("dw", e, e, 3, st, e, true),
              layer("pw2", e, out, 1, 1, 1, false)};
    p.residual = st == 1 && in == out;
  } else if (is_shuffle(s.kind) && st == 1) {
    p.topology = BlockTopology::ShuffleSplit;
    const bool original = s.kind == BlockKind::ShuffleV2;
    const std::size_t b = original ? out / 2 : out / 4;
    p.branch_channels = b;
    // dynamic variant: a quarter-width branch with 2 channels per group keeps the depthwise cost
    p.main = {layer("pw1", b, b, 1, 1, 1, true), layer("dw", b, b, 3, 1, original ? b : b / 2, false),
              layer("pw2", b, b, 1, 1, 1, true)};
  } else if (is_shuffle(s.kind)) {
    p.topology = BlockTopology::ShuffleDown;
    const std::size_t h = out / 2;
    p.side = {layer("ldw", in, in, 3, 2, in, false), layer("lpw", in, h, 1, 1, 1, true)};
    p.main = {layer("pw1", in, h, 1, 1, 1, true), layer("dw", h, h, 3, 2, h, false),
              layer("pw2", h, h, 1, 1, 1, true)};
  } else if (is_basic(s.kind)) {
    p.topology = BlockTopology::ResNet;
    const std::size_t mid = s.kind == BlockKind::ResNetBasic ? out : out / 2;
    p.main = {layer("conv1", in, mid, 3, st, 1, true), layer("conv2", mid, out, 3, 1, 1, false)};
    p.residual = true;
  } else {
    p.topology = BlockTopology::ResNet;
    const std::size_t mid = s.kind == BlockKind::ResNetBottleneck ? out / 4 : out / 8;
    p.main = {layer("conv1", in, mid, 1, 1, 1, true), layer("conv2", mid, mid, 3, st, 1, true),
              layer("conv3", mid, out, 1, 1, 1, false)};
    p.residual = true;
  }
  if (p.topology == BlockTopology::ResNet && (st != 1 || in != out)) {
    p.side = {layer("proj", in, out, 1, st, 1, false)};
  }
  if (is_dynamic(s.kind)) {
    for (auto& l : p.main) {
      l.dynamic = true;
      l.bank_size = s.bank_size;
    }
    p.predictor_in = p.topology == BlockTopology::ShuffleSplit ? p.branch_channels : in;
    if (p.topology == BlockTopology::ResNet) p.predictor_hidden = std::max<std::size_t>(1, in / 4);
  }
  return p;
}

void NetworkSpec::validate() const {
  if (input_channels == 0 || input_size == 0 || num_classes == 0) {
    throw Error("network '" + name + "': input channels, size and classes must be positive");
  }
  if (stem.out_channels == 0 || stem.kernel == 0 || stem.stride == 0) {
    throw Error("network '" + name + "': invalid stem");
  }
  std::size_t c = stem.out_channels;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].in_channels != c) {
      throw Error("network '" + name + "': block " + std::to_string(i) + " expects " +
                  std::to_string(blocks[i].in_channels) + " input channels but receives " + std::to_string(c));
    }
    plan_block(blocks[i]);
    c = blocks[i].normalized().out_channels;
  }
}

std::size_t NetworkSpec::feature_channels() const {
  return blocks.empty() ? stem.out_channels : blocks.back().normalized().out_channels;
}

std::string network_spec_to_text(const NetworkSpec& spec) {
  std::ostringstream os;
  os << "network " << spec.name << "\n";
  os << "input " << spec.input_channels << " " << spec.input_size << "\n";
  os << "classes " << spec.num_classes << "\n";
  os << "stem " << spec.stem.out_channels << " " << spec.stem.kernel << " " << spec.stem.stride << "\n";
  for (const auto& b : spec.blocks) {
    os << "block " << block_kind_name(b.kind) << " " << b.in_channels << " " << b.out_channels << " " << b.stride
       << " " << b.bank_size << "\n";
  }
  return os.str();
}

NetworkSpec parse_network_spec(const std::string& text) {
  NetworkSpec spec;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool seen_stem = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    auto fail = [&](const std::string& why) -> Error {
      return Error("network spec line " + std::to_string(lineno) + ": " + why);
    };
    bool ok = true;
    if (key == "network") {
      ok = static_cast<bool>(ls >> spec.name);
    } else if (key == "input") {
      ok = static_cast<bool>(ls >> spec.input_channels >> spec.input_size);
    } else if (key == "classes") {
      ok = static_cast<bool>(ls >> spec.num_classes);
    } else if (key == "stem") {
      ok = static_cast<bool>(ls >> spec.stem.out_channels >> spec.stem.kernel >> spec.stem.stride);
      seen_stem = true;
    } else if (key == "block") {
      std::string kind;
      BlockSpec b;
      ok = static_cast<bool>(ls >> kind >> b.in_channels >> b.out_channels >> b.stride);
      if (ok) {
        b.kind = parse_block_kind(kind);
        if (!(ls >> b.bank_size)) b.bank_size = is_dynamic(b.kind) ? 6 : 1;
        spec.blocks.push_back(b);
      }
    } else {
      throw fail("unknown key '" + key + "'");
    }
    if (!ok) throw fail("malformed '" + key + "' entry");
    std::string extra;
    if (ls >> extra) throw fail("unexpected trailing token '" + extra + "'");
  }
  if (!seen_stem) throw Error("network spec: missing 'stem' line");
  spec.validate();
  return spec;
}

NetworkSpec load_network_spec(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open network spec '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_network_spec(ss.str());
}

NetworkSpec tiny_mobile_spec(bool dynamic, std::size_t bank_size) {
  NetworkSpec s;
  s.name = dynamic ? "dy-tiny-mobile" : "fix-tiny-mobile";
  s.input_channels = 3;
  s.input_size = 32;
  s.num_classes = 10;
  s.stem = {12, 3, 2};
  const BlockKind k = dynamic ? BlockKind::DyMobile : BlockKind::FixMobile;
  const std::size_t g = dynamic ? bank_size : 1;
  s.blocks = {{k, 12, 12, 1, g}, {k, 12, 24, 2, g}, {k, 24, 24, 1, g}, {k, 24, 48, 2, g}};
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Runtime blocks

namespace {

template <typename T>
ConvUnit<T> make_unit(const LayerPlan& plan, const std::string& prefix, Rng& rng) {
  ConvUnit<T> u;
  u.plan = plan;
  const ConvGeometry& g = plan.geom;
  Shape wshape = g.weight_shape();
  wshape[0] *= plan.dynamic ? plan.bank_size : 1;
  const double fan_in = static_cast<double>(g.in_per_group() * g.kernel * g.kernel);
  const T bound = static_cast<T>(std::sqrt(6.0 / fan_in));
  u.weight = Parameter<T>(prefix + plan.name + ".weight", uniform_tensor<T>(wshape, -bound, bound, rng));
  u.bn_scale = Parameter<T>(prefix + plan.name + ".bn.scale", Tensor<T>({g.out_channels}, T(1)), false);
  u.bn_shift = Parameter<T>(prefix + plan.name + ".bn.shift", Tensor<T>({g.out_channels}, T(0)), false);
  u.bn_stats = BatchNormStats<T>(g.out_channels);
  return u;
}

}  // namespace

template <typename T>
CoefficientPredictor<T> PredictorParams<T>::snapshot() const {
  CoefficientPredictor<T> p;
  p.in_channels = in_channels;
  p.hidden = hidden;
  p.w1 = w1.value;
  p.b1 = b1.value;
  if (hidden) {
    p.w2 = w2.value;
    p.b2 = b2.value;
  }
  p.served = served;
  p.validate();
  return p;
}

template <typename T>
Block<T> build_block(const BlockSpec& spec, const std::string& prefix, Rng& rng) {
  Block<T> b;
  b.plan = plan_block(spec);
  for (const auto& l : b.plan.main) b.main.push_back(make_unit<T>(l, prefix, rng));
  for (const auto& l : b.plan.side) b.side.push_back(make_unit<T>(l, prefix, rng));
  if (b.plan.predictor_in) {
    std::vector<std::pair<std::string, std::size_t>> layers;
    for (const auto& l : b.plan.main) layers.emplace_back(l.name, l.geom.out_channels * l.bank_size);
    auto cp = CoefficientPredictor<T>::make(b.plan.predictor_in, b.plan.predictor_hidden, layers, rng);
    PredictorParams<T> p;
    p.in_channels = cp.in_channels;
    p.hidden = cp.hidden;
    p.w1 = Parameter<T>(prefix + "predictor.w1", cp.w1);
    p.b1 = Parameter<T>(prefix + "predictor.b1", cp.b1, false);
    if (cp.hidden) {
      p.w2 = Parameter<T>(prefix + "predictor.w2", cp.w2);
      p.b2 = Parameter<T>(prefix + "predictor.b2", cp.b2, false);
    }
    p.served = cp.served;
    b.predictor = std::move(p);
  }
  return b;
}

template <typename T>
Network<T>::Network(const NetworkSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  Rng rng(seed);
  const ConvGeometry sg{spec.input_channels, spec.stem.out_channels, spec.stem.kernel, spec.stem.stride,
                        spec.stem.kernel / 2, 1};
  stem_ = make_unit<T>(LayerPlan{"stem", sg, false, 1, true}, "", rng);
  for (std::size_t i = 0; i < spec_.blocks.size(); ++i) {
    blocks_.push_back(build_block<T>(spec_.blocks[i], "blocks." + std::to_string(i) + ".", rng));
  }
  const std::size_t f = spec_.feature_channels();
  const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(f)));
  fc_weight_ = Parameter<T>("fc.weight", uniform_tensor<T>({spec_.num_classes, f}, -bound, bound, rng));
  fc_bias_ = Parameter<T>("fc.bias", Tensor<T>({spec_.num_classes}), false);
}

template <typename T>
NodeId Network<T>::conv_unit(Graph<T>& g, ConvUnit<T>& unit, NodeId x, Mode mode, FusionPath path, NodeId eta_all,
                             std::size_t eta_offset) {
  const LayerPlan& p = unit.plan;
  NodeId w = g.parameter(unit.weight);
  NodeId y;
  if (p.dynamic) {
    NodeId eta = g.slice_columns(eta_all, eta_offset, p.geom.out_channels * p.bank_size);
    if (path == FusionPath::FeatureFusion) {
      ConvGeometry bank_geom = p.geom;
      bank_geom.out_channels *= p.bank_size;
      y = g.bank_combine(g.conv2d(x, w, bank_geom), eta, p.bank_size);
    } else {
      y = g.dynamic_conv_fused(x, w, eta, p.geom, p.bank_size);
    }
  } else {
    y = g.conv2d(x, w, p.geom);
  }
  y = g.batch_norm(y, g.parameter(unit.bn_scale), g.parameter(unit.bn_shift), unit.bn_stats, mode);
  return p.relu ? g.relu(y) : y;
}

template <typename T>
NodeId Network<T>::block_forward(Graph<T>& g, Block<T>& block, NodeId x, Mode mode, FusionPath path,
                                 ForwardTaps* taps) {
  const BlockPlan& plan = block.plan;
  NodeId main_in = x;
  NodeId left = x;
  if (plan.topology == BlockTopology::ShuffleSplit) {
    const std::size_t c = plan.spec.in_channels, b = plan.branch_channels;
    left = g.slice_channels(x, 0, c - b);
    main_in = g.slice_channels(x, c - b, b);
  }
  NodeId eta_all = 0;
  if (block.predictor) {
    auto& p = *block.predictor;
    NodeId h = g.linear(g.global_avg_pool(main_in), g.parameter(p.w1), g.parameter(p.b1));
    if (p.hidden) h = g.linear(g.relu(h), g.parameter(p.w2), g.parameter(p.b2));
    eta_all = g.sigmoid(h);
  }
  if (taps) taps->coefficients.push_back(block.predictor ? std::optional<NodeId>(eta_all) : std::nullopt);
  NodeId h = main_in;
  std::size_t offset = 0;
  for (auto& unit : block.main) {
    h = conv_unit(g, unit, h, mode, path, eta_all, offset);
    if (unit.plan.dynamic) offset += unit.plan.geom.out_channels * unit.plan.bank_size;
  }
  switch (plan.topology) {
    case BlockTopology::Mobile:
      return plan.residual ? g.add(h, x) : h;
    case BlockTopology::ShuffleSplit:
      return g.channel_shuffle(g.concat_channels(left, h), 2);
    case BlockTopology::ShuffleDown: {
      NodeId l = x;
      for (auto& unit : block.side) l = conv_unit(g, unit, l, mode, path, 0, 0);
      return g.channel_shuffle(g.concat_channels(l, h), 2);
    }
    case BlockTopology::ResNet: {
      NodeId skip = x;
      for (auto& unit : block.side) skip = conv_unit(g, unit, skip, mode, path, 0, 0);
      return g.relu(g.add(h, skip));
    }
  }
  return h;
}

template <typename T>
NodeId Network<T>::forward(Graph<T>& g, NodeId input, Mode mode, FusionPath path, ForwardTaps* taps) {
  const Tensor<T>& x = g.value(input);
  if (x.rank() != 4 || x.dim(1) != spec_.input_channels) {
    throw Error("network '" + spec_.name + "': input " + shape_str(x.shape()) + " but expects " +
                std::to_string(spec_.input_channels) + " channels");
  }
  NodeId h = conv_unit(g, stem_, input, mode, path, 0, 0);
  for (auto& b : blocks_) {
    h = block_forward(g, b, h, mode, path, taps);
    if (taps) taps->block_outputs.push_back(h);
  }
  NodeId pooled = g.global_avg_pool(h);
  return g.linear(pooled, g.parameter(fc_weight_), g.parameter(fc_bias_));
}

template <typename T>
Tensor<T> Network<T>::predict(const Tensor<T>& input) {
  Graph<T> g;
  NodeId logits = forward(g, g.constant(input), Mode::Eval, FusionPath::KernelFusion);
  return g.value(logits);
}

template <typename T>
std::vector<Parameter<T>*> Network<T>::parameters() {
  std::vector<Parameter<T>*> out;
  auto add_unit = [&](ConvUnit<T>& u) {
    out.push_back(&u.weight);
    out.push_back(&u.bn_scale);
    out.push_back(&u.bn_shift);
  };
  add_unit(stem_);
  for (auto& b : blocks_) {
    if (b.predictor) {
      out.push_back(&b.predictor->w1);
      out.push_back(&b.predictor->b1);
      if (b.predictor->hidden) {
        out.push_back(&b.predictor->w2);
        out.push_back(&b.predictor->b2);
      }
    }
    for (auto& u : b.main) add_unit(u);
    for (auto& u : b.side) add_unit(u);
  }
  out.push_back(&fc_weight_);
  out.push_back(&fc_bias_);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Network<T>::state() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  auto add_unit = [&](ConvUnit<T>& u) {
    out.emplace_back(u.weight.name, &u.weight.value);
    out.emplace_back(u.bn_scale.name, &u.bn_scale.value);
    out.emplace_back(u.bn_shift.name, &u.bn_shift.value);
    const std::string base = u.weight.name.substr(0, u.weight.name.size() - std::string(".weight").size());
    out.emplace_back(base + ".bn.running_mean", &u.bn_stats.running_mean);
    out.emplace_back(base + ".bn.running_var", &u.bn_stats.running_var);
  };
  add_unit(stem_);
  for (auto& b : blocks_) {
    if (b.predictor) {
      out.emplace_back(b.predictor->w1.name, &b.predictor->w1.value);
      out.emplace_back(b.predictor->b1.name, &b.predictor->b1.value);
      if (b.predictor->hidden) {
        out.emplace_back(b.predictor->w2.name, &b.predictor->w2.value);
        out.emplace_back(b.predictor->b2.name, &b.predictor->b2.value);
      }
    }
    for (auto& u : b.main) add_unit(u);
    for (auto& u : b.side) add_unit(u);
  }
  out.emplace_back(fc_weight_.name, &fc_weight_.value);
  out.emplace_back(fc_bias_.name, &fc_bias_.value);
  return out;
}

template <typename T>
void Network<T>::mark_stats_initialized() {
  stem_.bn_stats.initialized = true;
  for (auto& b : blocks_) {
    for (auto& u : b.main) u.bn_stats.initialized = true;
    for (auto& u : b.side) u.bn_stats.initialized = true;
  }
}

template struct PredictorParams<float>;
template struct PredictorParams<double>;
template Block<float> build_block(const BlockSpec&, const std::string&, Rng&);
template Block<double> build_block(const BlockSpec&, const std::string&, Rng&);
template class Network<float>;
template class Network<double>;

// ---------------------------------------------------------------------------
// FLOPs accounting

Rational::Rational(std::int64_t n, std::int64_t d) {
  if (d == 0) throw Error("rational with zero denominator");
  if (d < 0) {
    n = -n;
    d = -d;
  }
  const std::int64_t g = std::gcd(n < 0 ? -n : n, d);
  num = g ? n / g : n;
  den = g ? d / g : d;
}

Rational flops_ratio_dy_mobile(std::int64_t channels) {
  if (channels <= 0 || channels % 6 != 0) {
    throw Error("flops_ratio_dy_mobile: channels must be a positive multiple of 6, got " + std::to_string(channels));
  }
  return Rational(6 * channels + 27, channels + 27);
}

std::uint64_t conv_macs(const ConvGeometry& geom, std::size_t out_h, std::size_t out_w) {
  return static_cast<std::uint64_t>(geom.in_per_group()) * geom.out_channels * out_h * out_w * geom.kernel *
         geom.kernel;
}

std::uint64_t FlopsReport::total() const {
  std::uint64_t t = 0;
  for (const auto& e : entries) t += e.macs;
  return t;
}

std::uint64_t FlopsReport::conv_total() const { return total() - overhead_total(); }

std::uint64_t FlopsReport::overhead_total() const {
  std::uint64_t t = 0;
  for (const auto& e : entries) {
    if (e.kind == "fusion" || e.kind == "predictor") t += e.macs;
  }
  return t;
}

std::uint64_t FlopsReport::block_conv(const std::string& block) const {
  std::uint64_t t = 0;
  for (const auto& e : entries) {
    if (e.block == block && (e.kind == "conv" || e.kind == "dynconv")) t += e.macs;
  }
  return t;
}

std::uint64_t FlopsReport::block_overhead(const std::string& block) const {
  std::uint64_t t = 0;
  for (const auto& e : entries) {
    if (e.block == block && (e.kind == "fusion" || e.kind == "predictor")) t += e.macs;
  }
  return t;
}

namespace {

// Appends the block's entries; returns the output spatial extent.
std::size_t add_block_flops(FlopsReport& r, const BlockPlan& plan, std::size_t extent, const std::string& label) {
  auto chain = [&](const std::vector<LayerPlan>& layers, std::size_t e) {
    for (const auto& l : layers) {
      const std::size_t out = l.geom.out_extent(e);
      r.entries.push_back({label, l.name, l.dynamic ? "dynconv" : "conv", conv_macs(l.geom, out, out)});
      if (l.dynamic) {
        const std::uint64_t fusion = static_cast<std::uint64_t>(l.geom.out_channels) * l.bank_size *
                                     l.geom.in_per_group() * l.geom.kernel * l.geom.kernel;
        r.entries.push_back({label, l.name + ".fuse", "fusion", fusion});
      }
      e = out;
    }
    return e;
  };
  if (plan.predictor_in) {
    const std::uint64_t total = plan.coefficient_total();
    const std::uint64_t macs = plan.predictor_hidden
                                   ? plan.predictor_in * plan.predictor_hidden + plan.predictor_hidden * total
                                   : plan.predictor_in * total;
    r.entries.push_back({label, "predictor", "predictor", macs});
  }
  const std::size_t out = chain(plan.main, extent);
  chain(plan.side, extent);
  return out;
}

}  // namespace

FlopsReport count_block_flops(const BlockSpec& spec, std::size_t input_size, const std::string& label) {
  FlopsReport r;
  add_block_flops(r, plan_block(spec), input_size, label);
  return r;
}

FlopsReport count_flops(const NetworkSpec& net, std::size_t input_size) {
  net.validate();
  const std::size_t size = input_size ? input_size : net.input_size;
  FlopsReport r;
  const ConvGeometry sg{net.input_channels, net.stem.out_channels, net.stem.kernel, net.stem.stride,
                        net.stem.kernel / 2, 1};
  std::size_t e = sg.out_extent(size);
  r.entries.push_back({"stem", "stem", "conv", conv_macs(sg, e, e)});
  for (std::size_t i = 0; i < net.blocks.size(); ++i) {
    e = add_block_flops(r, plan_block(net.blocks[i]), e, "block" + std::to_string(i));
  }
  r.entries.push_back({"head", "fc", "fc", static_cast<std::uint64_t>(net.feature_channels()) * net.num_classes});
  return r;
}

}  // namespace dynet
