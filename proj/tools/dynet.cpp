// Command-line front end: training, evaluation, FLOPs, benchmarks, kernel
// correlation, the noise-recovery oracle and fused-kernel export.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "dynet/arch.hpp"
#include "dynet/bench.hpp"
#include "dynet/correlation.hpp"
#include "dynet/data.hpp"
#include "dynet/io.hpp"
#include "dynet/noise_oracle.hpp"
#include "dynet/training.hpp"

namespace {

using namespace dynet;

NetworkSpec resolve_spec(const std::string& arg, std::size_t bank_override) {
  NetworkSpec spec;
  if (arg == "dy-tiny-mobile") {
    spec = tiny_mobile_spec(true);
  } else if (arg == "fix-tiny-mobile") {
    spec = tiny_mobile_spec(false);
  } else {
    spec = load_network_spec(arg);
  }
  if (bank_override) {
    for (auto& b : spec.blocks) {
      if (is_dynamic(b.kind)) b.bank_size = bank_override;
    }
    spec.validate();
  }
  return spec;
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoul(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error("bad list element '" + item + "' in '" + s + "'");
    }
  }
  if (out.empty()) throw Error("empty list '" + s + "'");
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << text;
}

template <typename T>
int run_train(const NetworkSpec& spec, const std::string& data_path, const std::string& test_path,
              const TrainConfig& config, const std::string& model_out, const std::string& log_out) {
  const Dataset train = load_dataset(data_path);
  Network<T> net(spec, config.seed);
  std::ofstream log;
  if (!log_out.empty()) {
    log.open(log_out);
    if (!log) throw Error("cannot open metrics log '" + log_out + "'");
  }
  train_network(net, train, config, [&](const MetricRow& row) {
    if (log.is_open()) log << format_metric_line(row) << '\n';
  });
  if (!model_out.empty()) save_model(model_out, net);
  if (!test_path.empty()) {
    const Dataset test = load_dataset(test_path);
    std::printf("top1 %.2f\n", evaluate_top1(net, test, config.eval_batch, FusionPath::KernelFusion));
  }
  return 0;
}

template <typename T>
int run_eval(const std::string& model_path, const std::string& data_path) {
  Network<T> net = load_model<T>(model_path);
  const Dataset data = load_dataset(data_path);
  std::printf("top1 %.2f\n", evaluate_top1(net, data, 500, FusionPath::KernelFusion));
  return 0;
}

template <typename T>
int run_corr(const std::string& model_path, const std::string& data_path, std::size_t layer, std::size_t count,
             std::size_t bins, const std::string& out) {
  Network<T> net = load_model<T>(model_path);
  const Dataset data = load_dataset(data_path);
  if (layer >= net.blocks().size()) {
    throw Error("corr: block " + std::to_string(layer) + " out of range (network has " +
                std::to_string(net.blocks().size()) + ")");
  }
  std::vector<std::size_t> idx(std::min(count, data.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const Batch b = make_batch(data, idx, 0, false, nullptr);
  Graph<T> g;
  ForwardTaps taps;
  net.forward(g, g.constant(b.images.template cast<T>()), Mode::Eval, FusionPath::KernelFusion, &taps);
  const auto hist = correlation_histogram(g.value(taps.block_outputs[layer]), bins);
  write_text(out, hist.to_text());
  return 0;
}

template <typename T>
int run_fuse_export(const std::string& model_path, const std::string& data_path, std::size_t index,
                    const std::string& out) {
  Network<T> net = load_model<T>(model_path);
  const Dataset data = load_dataset(data_path);
  const Batch b = make_batch(data, {index}, 0, false, nullptr);
  const ModelFile f = export_fused_kernels(net, b.images.template cast<T>());
  write_model_file(out, f);
  std::printf("exported %zu tensors to %s\n", f.entries.size(), out.c_str());
  return 0;
}

int run_flops(const NetworkSpec& spec, std::size_t input_size) {
  const FlopsReport r = count_flops(spec, input_size);
  std::printf("# block layer kind macs\n");
  for (const auto& e : r.entries) {
    std::printf("%s %s %s %llu\n", e.block.c_str(), e.layer.c_str(), e.kind.c_str(),
                static_cast<unsigned long long>(e.macs));
  }
  std::printf("# block conv_macs overhead_macs ratio_vs_original\n");
  std::size_t size = input_size ? input_size : spec.input_size;
  const ConvGeometry sg{spec.input_channels, spec.stem.out_channels, spec.stem.kernel, spec.stem.stride,
                        spec.stem.kernel / 2, 1};
  size = sg.out_extent(size);
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const std::string label = "block" + std::to_string(i);
    const BlockSpec& b = spec.blocks[i];
    std::string ratio = "-";
    if (b.kind == BlockKind::DyMobile || b.kind == BlockKind::FixMobile) {
      BlockSpec orig = b.normalized();
      orig.kind = BlockKind::MobileV2;
      const auto o = count_block_flops(orig, size, label).conv_total();
      const auto d = r.block_conv(label);
      const Rational q(static_cast<std::int64_t>(o), static_cast<std::int64_t>(d));
      ratio = std::to_string(q.num) + "/" + std::to_string(q.den);
      if (b.stride == 1 && b.in_channels == b.out_channels) {
        const Rational eq = flops_ratio_dy_mobile(static_cast<std::int64_t>(b.normalized().out_channels));
        ratio += eq == q ? " (closed form agrees)" : " (closed form " + std::to_string(eq.num) + "/" +
                                                         std::to_string(eq.den) + ")";
      }
    }
    std::printf("%s %llu %llu %s\n", label.c_str(), static_cast<unsigned long long>(r.block_conv(label)),
                static_cast<unsigned long long>(r.block_overhead(label)), ratio.c_str());
    for (const auto& l : plan_block(b).main) size = l.geom.out_extent(size);
  }
  std::printf("total %llu conv %llu overhead %llu\n", static_cast<unsigned long long>(r.total()),
              static_cast<unsigned long long>(r.conv_total()), static_cast<unsigned long long>(r.overhead_total()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynet: dynamic convolution toolkit"};
  app.require_subcommand(1);

  std::string spec_arg = "dy-tiny-mobile", model_path, data_path, test_path, out, log_out, config_path;
  std::string dtype = "f32", sizes = "56,112,224", channels = "64,128";
  std::uint64_t seed = 0;
  std::size_t gt = 0, input_size = 0, trials = 1000, count = 1000, layer = 0, bins = 20, index = 0, repeats = 7;
  double noise = SyntheticOptions{}.noise;

  auto* make_data = app.add_subcommand("make-data", "Write a seeded synthetic dataset file");
  make_data->add_option("--out", out, "Output dataset path")->required();
  make_data->add_option("--count", count, "Number of samples");
  make_data->add_option("--seed", seed, "Generator seed");
  make_data->add_option("--noise", noise, "Additive noise standard deviation");

  auto* train = app.add_subcommand("train", "Train a network and write a model file plus metrics log");
  train->add_option("--spec", spec_arg, "Spec file or dy-tiny-mobile / fix-tiny-mobile");
  train->add_option("--data", data_path, "Training dataset")->required();
  train->add_option("--test", test_path, "Optional test dataset, top-1 printed after training");
  train->add_option("--config", config_path, "key = value training config");
  train->add_option("--seed", seed, "Seed (overrides the config)");
  train->add_option("--gt", gt, "Bank size for every dynamic block");
  train->add_option("--out", out, "Model file to write");
  train->add_option("--log", log_out, "Metrics log (step lr loss top1)");
  train->add_option("--dtype", dtype, "f32 or f64");

  auto* eval = app.add_subcommand("eval", "Print top-1 of a model on a dataset");
  eval->add_option("--model", model_path, "Model file")->required();
  eval->add_option("--data", data_path, "Dataset")->required();
  eval->add_option("--dtype", dtype, "f32 or f64");

  auto* flops = app.add_subcommand("flops", "Print the multiply-accumulate report of a spec");
  flops->add_option("--spec", spec_arg, "Spec file or dy-tiny-mobile / fix-tiny-mobile");
  flops->add_option("--input-size", input_size, "Input resolution (defaults to the spec's)");
  flops->add_option("--gt", gt, "Bank size for every dynamic block");

  auto* bench = app.add_subcommand("bench", "Time kernel fusion against feature fusion");
  bench->add_option("--gt", gt, "Bank size (default 6)");
  bench->add_option("--input-size", sizes, "Comma-separated input sizes");
  bench->add_option("--channels", channels, "Comma-separated channel counts");
  bench->add_option("--repeats", repeats, "Timed runs per configuration (>= 5)");
  bench->add_option("--seed", seed, "Seed for weights and inputs");
  bench->add_option("--out", out, "Report path (stdout by default)");

  auto* corr = app.add_subcommand("corr", "Feature-map correlation histogram at a block output");
  corr->add_option("--model", model_path, "Model file")->required();
  corr->add_option("--data", data_path, "Dataset")->required();
  corr->add_option("--layer", layer, "Block index");
  corr->add_option("--count", count, "Number of samples");
  corr->add_option("--bins", bins, "Histogram bins");
  corr->add_option("--out", out, "Table path (stdout by default)");
  corr->add_option("--dtype", dtype, "f32 or f64");

  auto* oracle = app.add_subcommand("oracle", "Seeded noise-recovery checks; exit 0 iff all errors < 1e-8");
  oracle->add_option("--seed", seed, "Seed");
  oracle->add_option("--trials", trials, "Number of random instances");

  auto* fuse = app.add_subcommand("fuse-export", "Dump per-input fused kernels of a model");
  fuse->add_option("--model", model_path, "Model file")->required();
  fuse->add_option("--data", data_path, "Dataset")->required();
  fuse->add_option("--index", index, "Sample index in the dataset");
  fuse->add_option("--out", out, "Output model-format file")->required();
  fuse->add_option("--dtype", dtype, "f32 or f64");

  CLI11_PARSE(app, argc, argv);

  try {
    const bool f64 = parse_dtype(dtype) == DType::F64;
    if (*make_data) {
      SyntheticOptions opts;
      opts.noise = noise;
      save_dataset(out, make_synthetic_dataset(count, seed, opts));
      return 0;
    }
    if (*train) {
      TrainConfig config = config_path.empty() ? TrainConfig{} : load_train_config(config_path);
      if (train->count("--seed")) config.seed = seed;
      const NetworkSpec spec = resolve_spec(spec_arg, gt);
      return f64 ? run_train<double>(spec, data_path, test_path, config, out, log_out)
                 : run_train<float>(spec, data_path, test_path, config, out, log_out);
    }
    if (*eval) return f64 ? run_eval<double>(model_path, data_path) : run_eval<float>(model_path, data_path);
    if (*flops) return run_flops(resolve_spec(spec_arg, gt), input_size);
    if (*bench) {
      BenchConfig cfg;
      if (gt) cfg.bank_size = gt;
      cfg.input_sizes = parse_list(sizes);
      cfg.channels = parse_list(channels);
      cfg.repeats = repeats;
      cfg.seed = seed;
      const BenchReport r = run_bench(cfg);
      write_text(out, r.to_text());
      std::printf("fused faster everywhere: %s\nreduced ratio non-decreasing in size: %s\n",
                  r.fused_always_faster() ? "yes" : "no", r.ratio_nondecreasing() ? "yes" : "no");
      return 0;
    }
    if (*corr) {
      return f64 ? run_corr<double>(model_path, data_path, layer, count, bins, out)
                 : run_corr<float>(model_path, data_path, layer, count, bins, out);
    }
    if (*oracle) {
      const OracleSummary s = run_noise_oracle(seed, trials);
      std::cout << s.to_text();
      return s.passes(1e-8) ? 0 : 1;
    }
    if (*fuse) {
      return f64 ? run_fuse_export<double>(model_path, data_path, index, out)
                 : run_fuse_export<float>(model_path, data_path, index, out);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
