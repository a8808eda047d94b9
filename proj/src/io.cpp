#include "dynet/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <map>
#include <sstream>

#include "binary.hpp"

namespace dynet {

namespace {

std::size_t dtype_bytes(DType d) { return d == DType::F32 ? 4 : 8; }

template <typename Src, typename Dst>
void convert_into(const std::uint8_t* bytes, std::size_t count, Dst* out) {
  for (std::size_t i = 0; i < count; ++i) {
    Src v;
    std::memcpy(&v, bytes + i * sizeof(Src), sizeof(Src));
    out[i] = static_cast<Dst>(v);
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

/// Line reader that remembers the byte offset of each line start.
class HeaderReader {
 public:
  explicit HeaderReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::string next() {
    line_start_ = pos_;
    std::string line;
    while (pos_ < bytes_.size() && bytes_[pos_] != '\n') line.push_back(static_cast<char>(bytes_[pos_++]));
    if (pos_ >= bytes_.size()) fail("header truncated (no newline)");
    ++pos_;
    return line;
  }

  /// Reads a line of the form `<key> <value...>` and returns the value part.
  std::string keyed(const std::string& key) {
    const std::string line = next();
    if (line.rfind(key + ' ', 0) != 0) fail("expected '" + key + "', found '" + line.substr(0, 40) + "'");
    return line.substr(key.size() + 1);
  }

  std::uint64_t number(const std::string& key) {
    const std::string v = keyed(key);
    std::istringstream is(v);
    std::uint64_t n = 0;
    if (!(is >> n) || !is.eof()) fail("bad number '" + v + "' for " + key);
    return n;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error("model file: byte " + std::to_string(line_start_) + ": " + msg);
  }

  std::size_t pos() const { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
  std::size_t line_start_ = 0;
};

}  // namespace

template <typename T>
void ModelFile::add(const std::string& name, const Tensor<T>& t) {
  if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
    throw Error("model file: invalid tensor name '" + name + "'");
  }
  if (find(name)) throw Error("model file: duplicate tensor '" + name + "'");
  TensorEntry e{name, t.shape(), payload.size(), t.numel() * dtype_bytes(dtype)};
  if (dtype == DType::F32) {
    const Tensor<float> c = t.template cast<float>();
    detail::put_values(payload, c.data().data(), c.numel());
  } else {
    const Tensor<double> c = t.template cast<double>();
    detail::put_values(payload, c.data().data(), c.numel());
  }
  entries.push_back(std::move(e));
}

const TensorEntry* ModelFile::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

template <typename T>
Tensor<T> ModelFile::tensor(const std::string& name) const {
  const TensorEntry* e = find(name);
  if (!e) throw Error("model file: missing tensor '" + name + "'");
  Tensor<T> t(e->shape);
  const std::uint8_t* src = payload.data() + e->offset;
  if (dtype == DType::F32) {
    convert_into<float>(src, t.numel(), t.data().data());
  } else {
    convert_into<double>(src, t.numel(), t.data().data());
  }
  return t;
}

std::vector<std::uint8_t> serialize_model_file(const ModelFile& file) {
  std::ostringstream h;
  h << "DYNET-MODEL " << ModelFile::kVersion << '\n';
  h << "dtype " << dtype_name(file.dtype) << '\n';
  std::vector<std::string> spec_lines;
  {
    std::istringstream is(file.spec_text);
    std::string l;
    while (std::getline(is, l)) spec_lines.push_back(l);
  }
  h << "spec-lines " << spec_lines.size() << '\n';
  for (const auto& l : spec_lines) h << l << '\n';
  h << "tensors " << file.entries.size() << '\n';
  for (const auto& e : file.entries) {
    h << "tensor " << e.name << ' ' << e.shape.size();
    for (auto d : e.shape) h << ' ' << d;
    h << ' ' << e.offset << ' ' << e.nbytes << '\n';
  }
  h << "checksum " << hex64(detail::fnv1a64(file.payload.data(), file.payload.size())) << '\n';
  h << "payload-bytes " << file.payload.size() << '\n';
  h << "end\n";
  const std::string head = h.str();
  std::vector<std::uint8_t> out(head.begin(), head.end());
  out.insert(out.end(), file.payload.begin(), file.payload.end());
  return out;
}

ModelFile parse_model_file(const std::vector<std::uint8_t>& bytes) {
  HeaderReader r(bytes);
  ModelFile f;
  const std::uint64_t version = r.number("DYNET-MODEL");
  if (version != ModelFile::kVersion) {
    r.fail("unsupported format version " + std::to_string(version) + " (expected " +
           std::to_string(ModelFile::kVersion) + ")");
  }
  const std::string dt = r.keyed("dtype");
  try {
    f.dtype = parse_dtype(dt);
  } catch (const Error&) {
    r.fail("unknown dtype '" + dt + "'");
  }
  const std::uint64_t spec_lines = r.number("spec-lines");
  for (std::uint64_t i = 0; i < spec_lines; ++i) f.spec_text += r.next() + '\n';
  const std::uint64_t count = r.number("tensors");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::istringstream is(r.keyed("tensor"));
    TensorEntry e;
    std::size_t rank = 0;
    if (!(is >> e.name >> rank) || rank < 1 || rank > 4) r.fail("malformed tensor line");
    e.shape.resize(rank);
    for (auto& d : e.shape) {
      if (!(is >> d) || d == 0) r.fail("bad extent for tensor '" + e.name + "'");
    }
    if (!(is >> e.offset >> e.nbytes) || !(is >> std::ws).eof()) r.fail("malformed tensor line for '" + e.name + "'");
    if (e.nbytes != shape_numel(e.shape) * dtype_bytes(f.dtype)) {
      r.fail("tensor '" + e.name + "' byte size " + std::to_string(e.nbytes) + " disagrees with its shape");
    }
    if (f.find(e.name)) r.fail("duplicate tensor '" + e.name + "'");
    f.entries.push_back(std::move(e));
  }
  const std::string checksum = r.keyed("checksum");
  const std::uint64_t payload_bytes = r.number("payload-bytes");
  if (r.next() != "end") r.fail("expected 'end'");
  const std::size_t start = r.pos();

  const std::uint64_t actual = bytes.size() - start;
  if (actual < payload_bytes) {
    throw Error("model file: payload truncated at byte " + std::to_string(bytes.size()) + ": expected " +
                std::to_string(payload_bytes) + " payload bytes, got " + std::to_string(actual));
  }
  if (actual > payload_bytes) {
    throw Error("model file: " + std::to_string(actual - payload_bytes) + " trailing bytes after payload at byte " +
                std::to_string(start + payload_bytes));
  }
  // entries must tile the payload exactly, in any header order
  std::map<std::uint64_t, const TensorEntry*> by_offset;
  for (const auto& e : f.entries) by_offset[e.offset] = &e;
  std::uint64_t cursor = 0;
  for (const auto& [off, e] : by_offset) {
    if (off != cursor) {
      throw Error("model file: tensor '" + e->name + "' at payload offset " + std::to_string(off) + ", expected " +
                  std::to_string(cursor) + " (gap or overlap)");
    }
    cursor += e->nbytes;
  }
  if (cursor != payload_bytes) {
    throw Error("model file: tensors cover " + std::to_string(cursor) + " bytes but payload-bytes is " +
                std::to_string(payload_bytes));
  }
  f.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.end());
  const std::string computed = hex64(detail::fnv1a64(f.payload.data(), f.payload.size()));
  if (computed != checksum) {
    throw Error("model file: checksum mismatch over payload at byte " + std::to_string(start) + ": header says " +
                checksum + ", payload hashes to " + computed);
  }
  return f;
}

void write_model_file(const std::string& path, const ModelFile& file) {
  detail::write_file(path, serialize_model_file(file));
}

ModelFile read_model_file(const std::string& path) { return parse_model_file(detail::read_file(path)); }

template <typename T>
ModelFile model_to_file(Network<T>& net) {
  ModelFile f;
  f.dtype = dtype_of<T>();
  f.spec_text = network_spec_to_text(net.spec());
  for (const auto& [name, t] : net.state()) f.add(name, *t);
  return f;
}

template <typename T>
Network<T> model_from_file(const ModelFile& file) {
  Network<T> net(parse_network_spec(file.spec_text), 0);
  std::map<std::string, bool> used;
  for (const auto& e : file.entries) used[e.name] = false;
  for (auto& [name, t] : net.state()) {
    const TensorEntry* e = file.find(name);
    if (!e) throw Error("model file: spec requires tensor '" + name + "' which is missing");
    if (e->shape != t->shape()) {
      throw Error("model file: tensor '" + name + "' has shape " + shape_str(e->shape) + " but the spec needs " +
                  shape_str(t->shape()));
    }
    *t = file.tensor<T>(name);
    used[name] = true;
  }
  for (const auto& [name, seen] : used) {
    if (!seen) throw Error("model file: tensor '" + name + "' is not part of the spec");
  }
  net.mark_stats_initialized();
  return net;
}

template <typename T>
ModelFile export_fused_kernels(Network<T>& net, const Tensor<T>& image) {
  if (image.rank() != 4 || image.dim(0) != 1) {
    throw Error("fuse-export: expected a single image [1, C, H, W], got " + shape_str(image.shape()));
  }
  Graph<T> g;
  ForwardTaps taps;
  net.forward(g, g.constant(image), Mode::Eval, FusionPath::KernelFusion, &taps);
  ModelFile f;
  f.dtype = dtype_of<T>();
  f.spec_text = network_spec_to_text(net.spec());
  auto& blocks = net.blocks();
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (!taps.coefficients[i]) continue;
    const Tensor<T>& eta = g.value(*taps.coefficients[i]);
    const std::string prefix = "blocks." + std::to_string(i) + ".";
    f.add(prefix + "coefficients", eta);
    std::size_t offset = 0;
    for (const auto& unit : blocks[i].main) {
      if (!unit.plan.dynamic) continue;
      const DynamicConvLayer<T> layer{unit.plan.geom, unit.plan.bank_size, unit.weight.value, std::nullopt};
      const std::size_t len = layer.coefficient_count();
      f.add(prefix + unit.plan.name + ".fused", fuse_kernels(layer, eta.data().subspan(offset, len)));
      offset += len;
    }
  }
  return f;
}

template <typename T>
void save_model(const std::string& path, Network<T>& net) {
  write_model_file(path, model_to_file(net));
}

template <typename T>
Network<T> load_model(const std::string& path) {
  return model_from_file<T>(read_model_file(path));
}

#define DYNET_INSTANTIATE_IO(T)                                                  \
  template void ModelFile::add(const std::string&, const Tensor<T>&);           \
  template Tensor<T> ModelFile::tensor(const std::string&) const;               \
  template ModelFile model_to_file(Network<T>&);                                \
  template Network<T> model_from_file(const ModelFile&);                        \
  template ModelFile export_fused_kernels(Network<T>&, const Tensor<T>&);       \
  template void save_model(const std::string&, Network<T>&);                    \
  template Network<T> load_model(const std::string&);

DYNET_INSTANTIATE_IO(float)
DYNET_INSTANTIATE_IO(double)

}  // namespace dynet
