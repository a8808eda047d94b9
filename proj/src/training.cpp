#include "dynet/training.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dynet {

void TrainConfig::validate() const {
  if (epochs == 0) throw Error("train config: epochs must be >= 1");
  if (batch_size == 0) throw Error("train config: batch_size must be >= 1");
  if (eval_batch == 0) throw Error("train config: eval_batch must be >= 1");
  if (!(base_lr > 0)) throw Error("train config: base_lr must be positive");
  if (momentum < 0 || momentum >= 1) throw Error("train config: momentum must be in [0, 1)");
  if (weight_decay < 0) throw Error("train config: weight_decay must be >= 0");
  if (label_smoothing < 0 || label_smoothing >= 1) throw Error("train config: label_smoothing must be in [0, 1)");
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "epochs = " << epochs << "\nbatch_size = " << batch_size << "\nbase_lr = " << base_lr
     << "\nmomentum = " << momentum << "\nweight_decay = " << weight_decay
     << "\nlabel_smoothing = " << label_smoothing << "\nseed = " << seed << "\ncrop_padding = " << crop_padding
     << "\nflip = " << (flip ? "true" : "false") << "\neval_batch = " << eval_batch << '\n';
  return os.str();
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename V>
V parse_number(const std::string& key, const std::string& value, std::size_t line) {
  std::istringstream is(value);
  V v{};
  if (!(is >> v) || !is.eof()) {
    throw Error("train config line " + std::to_string(line) + ": bad value '" + value + "' for " + key);
  }
  return v;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = trim(raw.substr(0, raw.find('#')));
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error("train config line " + std::to_string(line) + ": expected key = value");
    const std::string key = trim(s.substr(0, eq)), value = trim(s.substr(eq + 1));
    if (key == "epochs") {
      c.epochs = parse_number<std::size_t>(key, value, line);
    } else if (key == "batch_size") {
      c.batch_size = parse_number<std::size_t>(key, value, line);
    } else if (key == "base_lr") {
      c.base_lr = parse_number<double>(key, value, line);
    } else if (key == "momentum") {
      c.momentum = parse_number<double>(key, value, line);
    } else if (key == "weight_decay") {
      c.weight_decay = parse_number<double>(key, value, line);
    } else if (key == "label_smoothing") {
      c.label_smoothing = parse_number<double>(key, value, line);
    } else if (key == "seed") {
      c.seed = parse_number<std::uint64_t>(key, value, line);
    } else if (key == "crop_padding") {
      c.crop_padding = parse_number<std::size_t>(key, value, line);
    } else if (key == "eval_batch") {
      c.eval_batch = parse_number<std::size_t>(key, value, line);
    } else if (key == "flip") {
      if (value == "true" || value == "1") {
        c.flip = true;
      } else if (value == "false" || value == "0") {
        c.flip = false;
      } else {
        throw Error("train config line " + std::to_string(line) + ": flip must be true or false");
      }
    } else {
      throw Error("train config line " + std::to_string(line) + ": unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open train config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

std::string format_metric_line(const MetricRow& row) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu %.9g %.9g %.6g", row.step, row.lr, row.loss, row.top1);
  return buf;
}

namespace {

template <typename T>
std::size_t count_correct(const Tensor<T>& logits, std::span<const int> labels) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  const auto v = logits.data();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = v.subspan(i * k, k);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    hits += static_cast<int>(best) == labels[i] ? 1 : 0;
  }
  return hits;
}

}  // namespace

template <typename T>
std::vector<MetricRow> train_network(Network<T>& net, const Dataset& data, const TrainConfig& config,
                                     const std::function<void(const MetricRow&)>& on_step) {
  config.validate();
  data.validate();
  const auto& spec = net.spec();
  if (data.channels() != spec.input_channels || data.num_classes != spec.num_classes) {
    throw Error("train: dataset has " + std::to_string(data.channels()) + " channels / " +
                std::to_string(data.num_classes) + " classes, network '" + spec.name + "' expects " +
                std::to_string(spec.input_channels) + " / " + std::to_string(spec.num_classes));
  }
  const std::size_t n = data.size();
  const std::size_t batch = std::min(config.batch_size, n);
  const std::size_t steps_per_epoch = n / batch;
  OptimizerConfig opt;
  opt.base_lr = config.base_lr;
  opt.momentum = config.momentum;
  opt.weight_decay = config.weight_decay;
  opt.label_smoothing = config.label_smoothing;
  opt.total_steps = steps_per_epoch * config.epochs;

  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto params = net.parameters();
  std::vector<MetricRow> log;
  log.reserve(opt.total_steps);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::vector<std::size_t> idx(order.begin() + s * batch, order.begin() + (s + 1) * batch);
      const Batch b = make_batch(data, idx, config.crop_padding, config.flip, &rng);
      Graph<T> g;
      const NodeId logits =
          net.forward(g, g.constant(b.images.template cast<T>()), Mode::Train, FusionPath::FeatureFusion);
      const NodeId loss = g.smoothed_cross_entropy(logits, b.labels, static_cast<T>(config.label_smoothing));
      for (auto* p : params) p->zero_grad();
      g.backward(loss);

      MetricRow row;
      row.step = step;
      row.lr = cosine_lr(opt.base_lr, step, opt.total_steps);
      row.loss = static_cast<double>(g.value(loss)[0]);
      row.top1 = 100.0 * static_cast<double>(count_correct(g.value(logits), b.labels)) / static_cast<double>(batch);
      sgd_step<T>(params, opt, step);
      log.push_back(row);
      if (on_step) on_step(row);
      ++step;
    }
  }
  return log;
}

template <typename T>
double evaluate_top1(Network<T>& net, const Dataset& data, std::size_t batch, FusionPath path) {
  data.validate();
  if (batch == 0) throw Error("evaluate_top1: batch must be >= 1");
  std::size_t hits = 0;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    const std::size_t end = std::min(data.size(), start + batch);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Batch b = make_batch(data, idx, 0, false, nullptr);
    Graph<T> g;
    const NodeId logits = net.forward(g, g.constant(b.images.template cast<T>()), Mode::Eval, path);
    hits += count_correct(g.value(logits), b.labels);
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(data.size());
}

template std::vector<MetricRow> train_network(Network<float>&, const Dataset&, const TrainConfig&,
                                              const std::function<void(const MetricRow&)>&);
template std::vector<MetricRow> train_network(Network<double>&, const Dataset&, const TrainConfig&,
                                              const std::function<void(const MetricRow&)>&);
template double evaluate_top1(Network<float>&, const Dataset&, std::size_t, FusionPath);
template double evaluate_top1(Network<double>&, const Dataset&, std::size_t, FusionPath);

}  // namespace dynet
