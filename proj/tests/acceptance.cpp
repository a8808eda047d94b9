// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numeric>
#include <string>

#include "dynet/arch.hpp"
#include "dynet/bench.hpp"
#include "dynet/correlation.hpp"
#include "dynet/data.hpp"
#include "dynet/io.hpp"
#include "dynet/noise_oracle.hpp"
#include "dynet/training.hpp"
#include "oracles.hpp"

using namespace dynet;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename T>
Coefficients<T> random_coeffs(std::size_t n, std::size_t count, Rng& rng) {
  return {uniform_tensor<T>({n, count}, T(0), T(1), rng)};
}

double max_abs(const auto& t) {
  double m = 0;
  for (auto v : t.data()) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

// ---------------------------------------------------------------------------

Outcome path_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  const std::size_t banks[] = {1, 2, 4, 6};
  double worst64 = 0, worst32 = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const bool depthwise = pick(0, 1) == 1;
    const std::size_t cin = pick(1, 32), cout = depthwise ? cin : pick(1, 32), k = pick(0, 1) ? 3 : 1;
    const ConvGeometry geom{cin, cout, k, pick(1, 2), k / 2, depthwise ? cin : 1};
    const std::size_t g = banks[pick(0, 3)], n = pick(1, 4), h = pick(3, 10), w = pick(3, 10);
    const bool bias = pick(0, 1) == 1;
    const std::uint64_t seed = rng();

    Rng r64(seed);
    const auto l64 = DynamicConvLayer<double>::random(geom, g, bias, r64);
    const auto x64 = uniform_tensor<double>({n, cin, h, w}, -1, 1, r64);
    const auto c64 = random_coeffs<double>(n, l64.coefficient_count(), r64);
    worst64 = std::max(worst64, max_abs_diff(forward_train(l64, c64, x64), forward_infer(l64, c64, x64)));

    Rng r32(seed);
    const auto l32 = DynamicConvLayer<float>::random(geom, g, bias, r32);
    const auto x32 = uniform_tensor<float>({n, cin, h, w}, -1, 1, r32);
    const auto c32 = random_coeffs<float>(n, l32.coefficient_count(), r32);
    const auto a = forward_train(l32, c32, x32);
    const double scale = std::max(max_abs(a), 1e-30);
    worst32 = std::max(worst32, static_cast<double>(max_abs_diff(a, forward_infer(l32, c32, x32))) / scale);
  }
  const double secs = seconds_since(t0);
  return {worst64 <= 1e-10 && worst32 <= 1e-5 && secs < 60,
          fmt("200 configs, f64 max abs %.2e (<= 1e-10), f32 max rel %.2e (<= 1e-5), %.1fs", worst64, worst32, secs)};
}

Outcome noise_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const OracleSummary s = run_noise_oracle(7, 1000, 32, 8);
  const double secs = seconds_since(t0);
  return {s.trials == 1000 && s.passes(1e-8) && secs < 30,
          fmt("1000 instances, det %.1e, beta %.1e, reconstruction %.1e, fused %.1e (all < 1e-8), %.1fs",
              s.max_det_error, s.max_beta_error, s.max_reconstruction_error, s.max_fused_error, secs)};
}

Outcome flops_ratio() {
  bool ok = true;
  std::string bad;
  for (std::int64_t c = 6; c <= 96; c += 6) {
    const auto cu = static_cast<std::size_t>(c);
    const auto dy = count_block_flops({BlockKind::DyMobile, cu, cu, 1, 6}, 14);
    const auto orig = count_block_flops({BlockKind::MobileV2, cu, cu, 1, 1}, 14);
    const Rational counted(static_cast<std::int64_t>(orig.conv_total()), static_cast<std::int64_t>(dy.conv_total()));
    const Rational closed(6 * c + 27, c + 27);
    if (!(counted == closed) || !(flops_ratio_dy_mobile(c) == closed)) {
      ok = false;
      bad += " C=" + std::to_string(c);
    }
  }
  const Rational r30 = flops_ratio_dy_mobile(30);
  ok = ok && r30 == Rational(207, 57);
  return {ok, fmt("C = 6..96 exact, C=30 -> %lld/%lld%s", static_cast<long long>(r30.num),
                  static_cast<long long>(r30.den), bad.empty() ? "" : (" mismatch at" + bad).c_str())};
}

// ---------------------------------------------------------------------------

Parameter<double> rand_param(const std::string& name, Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  return Parameter<double>(name, uniform_tensor<double>(std::move(shape), lo, hi, rng));
}

NodeId project(Graph<double>& g, NodeId y) {
  Rng rng(99);
  return g.sum(g.mul(y, g.constant(uniform_tensor<double>(g.value(y).shape(), -1, 1, rng))));
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(31);
  double worst = 0;
  std::string worst_case;
  std::size_t checked = 0, cases = 0;
  auto run = [&](const std::string& label, std::vector<Parameter<double>*> params,
                 const std::function<NodeId(Graph<double>&)>& loss, std::size_t per_param = 0) {
    const auto r = oracle::grad_check(std::move(params), loss, 1e-5, per_param);
    checked += r.checked;
    ++cases;
    if (worst_case.empty() || r.max_rel_err > worst) {
      worst = r.max_rel_err;
      worst_case = label + " " + r.worst;
    }
  };

  auto x = rand_param("x", {2, 4, 5, 5}, rng), w = rand_param("w", {6, 2, 3, 3}, rng);
  run("conv", {&x, &w}, [&](Graph<double>& g) { return project(g, g.conv2d(g.parameter(x), g.parameter(w), {4, 6, 3, 2, 1, 2})); });

  auto pb = rand_param("b", {6}, rng);
  run("bias", {&x, &w, &pb}, [&](Graph<double>& g) {
    return project(g, g.add_channel_bias(g.conv2d(g.parameter(x), g.parameter(w), {4, 6, 3, 1, 1, 2}), g.parameter(pb)));
  });

  auto fx = rand_param("fx", {3, 7}, rng), fw = rand_param("fw", {4, 7}, rng), fb = rand_param("fb", {4}, rng);
  run("fc", {&fx, &fw, &fb}, [&](Graph<double>& g) { return project(g, g.linear(g.parameter(fx), g.parameter(fw), g.parameter(fb))); });

  auto s = rand_param("s", {4, 9}, rng, -3, 3);
  run("sigmoid", {&s}, [&](Graph<double>& g) { return project(g, g.sigmoid(g.parameter(s))); });
  run("relu", {&s}, [&](Graph<double>& g) { return project(g, g.relu(g.parameter(s))); });

  auto bx = rand_param("bx", {3, 2, 4, 4}, rng, -2, 2), bs = rand_param("scale", {2}, rng, 0.5, 1.5),
       bsh = rand_param("shift", {2}, rng);
  BatchNormStats<double> stats(2);
  run("bn-train", {&bx, &bs, &bsh}, [&](Graph<double>& g) {
    return project(g, g.batch_norm(g.parameter(bx), g.parameter(bs), g.parameter(bsh), stats, Mode::Train));
  });
  stats.running_var = uniform_tensor<double>({2}, 0.5, 2, rng);
  run("bn-eval", {&bx, &bs, &bsh}, [&](Graph<double>& g) {
    return project(g, g.batch_norm(g.parameter(bx), g.parameter(bs), g.parameter(bsh), stats, Mode::Eval));
  });

  run("gap", {&x}, [&](Graph<double>& g) { return project(g, g.global_avg_pool(g.parameter(x))); });

  auto dx = rand_param("dx", {2, 4, 4, 4}, rng), bank = rand_param("bank", {6, 4, 3, 3}, rng),
       eta = rand_param("eta", {2, 6}, rng, 0, 1);
  run("feature-fusion", {&dx, &bank, &eta}, [&](Graph<double>& g) {
    return project(g, g.bank_combine(g.conv2d(g.parameter(dx), g.parameter(bank), {4, 6, 3, 1, 1, 1}), g.parameter(eta), 2));
  });
  run("kernel-fusion", {&dx, &bank, &eta}, [&](Graph<double>& g) {
    return project(g, g.dynamic_conv_fused(g.parameter(dx), g.parameter(bank), g.parameter(eta), {4, 3, 3, 1, 1, 1}, 2));
  });

  auto ca = rand_param("a", {2, 4, 3, 3}, rng), cb = rand_param("c", {2, 2, 3, 3}, rng);
  run("channels", {&ca, &cb}, [&](Graph<double>& g) {
    return project(g, g.channel_shuffle(g.concat_channels(g.slice_channels(g.parameter(ca), 1, 2), g.parameter(cb)), 2));
  });
  auto m = rand_param("m", {3, 8}, rng);
  run("columns", {&m}, [&](Graph<double>& g) { return project(g, g.slice_columns(g.parameter(m), 2, 5)); });

  auto logits = rand_param("logits", {4, 10}, rng, -3, 3);
  const std::vector<int> labels{3, 0, 9, 3};
  run("cross-entropy", {&logits}, [&](Graph<double>& g) { return g.smoothed_cross_entropy(g.parameter(logits), labels, 0.1); });

  NetworkSpec spec;
  spec.name = "two-block";
  spec.input_size = 8;
  spec.num_classes = 4;
  spec.stem = {6, 3, 1};
  spec.blocks = {{BlockKind::DyMobile, 6, 6, 1, 3}, {BlockKind::DyMobile, 6, 12, 2, 3}};
  bool predictor_reached = false;
  for (FusionPath path : {FusionPath::FeatureFusion, FusionPath::KernelFusion}) {
    Network<double> net(spec, 5);
    Rng r(6);
    const auto input = uniform_tensor<double>({3, 3, 8, 8}, -1, 1, r);
    const std::vector<int> y{0, 3, 1};
    auto params = net.parameters();
    run("network", params,
        [&](Graph<double>& g) {
          return g.smoothed_cross_entropy(net.forward(g, g.constant(input), Mode::Train, path), y, 0.1);
        },
        10);
    for (auto* p : params) {
      if (p->name.find("predictor.w") == std::string::npos) continue;
      for (double v : p->grad.data()) predictor_reached |= v != 0.0;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && predictor_reached && secs < 120,
          fmt("%zu cases, %zu entries, max rel err %.2e (< 1e-4), predictor gradient %s, %.1fs%s", cases, checked,
              worst, predictor_reached ? "nonzero" : "ZERO", secs,
              worst < 1e-4 ? "" : (", worst: " + worst_case).c_str())};
}

Outcome single_kernel_degeneration() {
  Rng rng(55);
  double worst = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const bool depthwise = trial % 3 == 0;
    const std::size_t cin = 1 + trial % 9, cout = depthwise ? cin : 2 + trial % 7, k = trial % 2 ? 3 : 1;
    const ConvGeometry geom{cin, cout, k, static_cast<std::size_t>(1 + trial % 2), k / 2, depthwise ? cin : 1};
    const auto layer = DynamicConvLayer<double>::random(geom, 1, false, rng);
    const std::size_t n = 1 + trial % 4;
    const auto x = uniform_tensor<double>({n, cin, 7, 6}, -1, 1, rng);
    const auto c = random_coeffs<double>(n, cout, rng);
    const auto base = oracle::conv<double>(x, layer.fixed_kernels, nullptr, geom);
    const std::size_t plane = base.dim(2) * base.dim(3);
    for (const auto& y : {forward_train(layer, c, x), forward_infer(layer, c, x)}) {
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t t = 0; t < cout; ++t) {
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t i = (s * cout + t) * plane + p;
            worst = std::max(worst, std::abs(y[i] - c.row(s)[t] * base[i]));
          }
        }
      }
    }
  }
  return {worst <= 1e-12, fmt("30 configs, both paths, max |y - eta_t * conv| %.2e (<= 1e-12)", worst)};
}

// ---------------------------------------------------------------------------

struct AblationResults {
  // top-1 per seed
  std::vector<double> fix, g1, g2, g6;
  double seconds = 0;
  std::size_t epochs = 0;
};

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

std::string join(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : "/") + fmt("%.2f", x);
  return s;
}

AblationResults run_ablation() {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset train = make_synthetic_dataset(20000, 1);
  const Dataset test = make_synthetic_dataset(4000, 2);
  TrainConfig config;
  config.epochs = 1;
  AblationResults r;
  r.epochs = config.epochs;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    config.seed = seed;
    auto run = [&](bool dynamic, std::size_t bank) {
      Network<float> net(tiny_mobile_spec(dynamic, bank), seed);
      train_network(net, train, config);
      return evaluate_top1(net, test, config.eval_batch, FusionPath::KernelFusion);
    };
    r.fix.push_back(run(false, 1));
    r.g1.push_back(run(true, 1));
    r.g2.push_back(run(true, 2));
    r.g6.push_back(run(true, 6));
    std::fprintf(stderr, "  seed %llu: fix %.2f g1 %.2f g2 %.2f g6 %.2f (%.0fs elapsed)\n",
                 static_cast<unsigned long long>(seed), r.fix.back(), r.g1.back(), r.g2.back(), r.g6.back(),
                 seconds_since(t0));
  }
  r.seconds = seconds_since(t0);
  return r;
}

Outcome ablation_direction(const AblationResults& r) {
  int wins = 0;
  for (std::size_t i = 0; i < r.fix.size(); ++i) wins += r.g6[i] > r.fix[i];
  const double margin = mean(r.g6) - mean(r.fix);
  return {wins >= 2 && margin >= 1.0 && r.seconds < 1800,
          fmt("dynamic g6 %s vs fixed %s, wins %d/3 (>= 2), mean margin %+.2f (>= 1), %zu epoch(s), %.0fs for all runs",
              join(r.g6).c_str(), join(r.fix).c_str(), wins, margin, r.epochs, r.seconds)};
}

Outcome bank_size_trend(const AblationResults& r) {
  const double m1 = mean(r.g1), m2 = mean(r.g2), m6 = mean(r.g6);
  return {m2 >= m1 - 0.5 && m6 >= m2 - 0.5,
          fmt("3-seed means g1 %.2f, g2 %.2f, g6 %.2f (non-decreasing within 0.5)", m1, m2, m6)};
}

Outcome bench_direction() {
  const BenchReport r = run_bench(BenchConfig{});
  std::string rows;
  for (const auto& row : r.rows) rows += fmt(" C%zu/%zu:%.1f%%", row.channels, row.input_size, 100 * row.reduced_ratio());
  return {r.fused_always_faster() && r.ratio_nondecreasing(),
          fmt("fused faster everywhere %s, ratio non-decreasing %s; reduced%s", r.fused_always_faster() ? "yes" : "no",
              r.ratio_nondecreasing() ? "yes" : "no", rows.c_str())};
}

Outcome analysis_machinery() {
  Rng rng(77);
  std::normal_distribution<double> nd;
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 2 + rng() % 300;
    std::vector<double> u(n), v(n);
    for (std::size_t j = 0; j < n; ++j) {
      u[j] = nd(rng);
      v[j] = 0.3 * u[j] + nd(rng);
    }
    worst = std::max(worst, std::abs(pearson(u, v) - oracle::pearson(u, v)));
  }
  // u = 1..5, 2u and e_1: one pair at r = 1, two at r = -1/sqrt(8)
  Tensor<double> t({1, 3, 1, 5}, {1, 2, 3, 4, 5, 2, 4, 6, 8, 10, 0, 1, 0, 0, 0});
  const auto h = correlation_histogram(t);
  std::vector<std::size_t> expect(20, 0);
  expect[19] = 1;
  expect[6] = 2;
  const bool fixture = h.pairs == 3 && h.none == 0 && h.weak == 2 && h.middle == 0 && h.strong == 1 && h.counts == expect;
  Tensor<double> dup({1, 2, 1, 4}, {1, 5, 2, 8, 1, 5, 2, 8});
  const auto hd = correlation_histogram(dup);
  const bool duplicated = hd.strong == 1 && hd.counts.back() == 1;
  return {worst <= 1e-12 && fixture && duplicated,
          fmt("100 random pairs max |diff| %.2e (<= 1e-12), 3-channel fixture %s, duplicated channels %s", worst,
              fixture ? "exact" : "WRONG", duplicated ? "exact" : "WRONG")};
}

template <typename T>
bool state_bitwise_equal(Network<T>& a, Network<T>& b) {
  auto sa = a.state(), sb = b.state();
  if (sa.size() != sb.size()) return false;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i].first != sb[i].first || sa[i].second->shape() != sb[i].second->shape()) return false;
    if (std::memcmp(sa[i].second->data().data(), sb[i].second->data().data(), sa[i].second->numel() * sizeof(T)) != 0)
      return false;
  }
  return true;
}

template <typename T>
bool round_trip(std::uint64_t seed) {
  Rng rng(seed);
  Network<T> net(tiny_mobile_spec(seed % 3 != 0, 1 + seed % 6), seed);
  Graph<T> g;
  net.forward(g, g.constant(uniform_tensor<T>({2, 3, 32, 32}, -1, 1, rng)), Mode::Train, FusionPath::FeatureFusion);
  const auto bytes = serialize_model_file(model_to_file(net));
  auto back = model_from_file<T>(parse_model_file(bytes));
  return state_bitwise_equal(net, back) && serialize_model_file(model_to_file(back)) == bytes;
}

bool error_contains(const std::function<void()>& fn, const std::string& needle) {
  try {
    fn();
  } catch (const Error& e) {
    return std::string(e.what()).find(needle) != std::string::npos;
  }
  return false;
}

Outcome serialization() {
  std::size_t ok = 0;
  for (std::uint64_t s = 0; s < 50; ++s) ok += s % 2 ? round_trip<double>(s) : round_trip<float>(s);

  Network<float> net(tiny_mobile_spec(true), 3);
  const ModelFile file = model_to_file(net);
  const auto good = serialize_model_file(file);
  auto with = [&](auto edit) {
    auto b = good;
    edit(b);
    return b;
  };
  auto text_edit = [&](const std::string& from, const std::string& to) {
    std::string s(good.begin(), good.end());
    s.replace(s.find(from), from.size(), to);
    return std::vector<std::uint8_t>(s.begin(), s.end());
  };
  std::size_t fixtures = 0, passed = 0;
  auto fixture = [&](bool r) {
    ++fixtures;
    passed += r;
  };
  const auto cut = with([](auto& b) { b.resize(b.size() - 100); });
  fixture(error_contains([&] { parse_model_file(cut); }, "expected " + std::to_string(file.payload.size()) +
                                                               " payload bytes, got " +
                                                               std::to_string(file.payload.size() - 100)));
  fixture(error_contains([&] { parse_model_file(text_edit("DYNET-MODEL 1", "DYNET-MODEL 9")); },
                         "byte 0: unsupported format version 9"));
  fixture(error_contains([&] { parse_model_file(with([](auto& b) { b[b.size() - 3] ^= 0x40; })); },
                         "checksum mismatch"));
  ModelFile missing = file;
  missing.entries.pop_back();
  fixture(error_contains([&] { model_from_file<float>(missing); },
                         "tensor '" + file.entries.back().name + "' which is missing"));
  const auto ds = serialize_dataset(make_synthetic_dataset(2, 1, {.size = 8}));
  fixture(error_contains([&] { parse_dataset({ds.begin(), ds.end() - 1}); },
                         "size mismatch, expected " + std::to_string(ds.size()) + " bytes, got " +
                             std::to_string(ds.size() - 1)));
  return {ok == 50 && passed == fixtures,
          fmt("%zu/50 round trips bitwise identical, %zu/%zu corrupted fixtures raise the expected error", ok, passed,
              fixtures)};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* what, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, what, o.detail.c_str());
    std::fflush(stdout);
  };
  report(1, "train/infer path equivalence", path_equivalence);
  report(2, "noise-irrelevance oracle", noise_oracle);
  report(3, "dy-mobile FLOPs ratio", flops_ratio);
  report(4, "gradient suite", gradient_suite);
  report(5, "single-kernel degeneration", single_kernel_degeneration);
  AblationResults ablation;
  bool ablation_ok = true;
  std::string ablation_error;
  try {
    ablation = run_ablation();
  } catch (const std::exception& e) {
    ablation_ok = false;
    ablation_error = e.what();
  }
  auto ablation_check = [&](auto check) {
    return [&, check]() -> Outcome {
      if (!ablation_ok) return {false, "exception: " + ablation_error};
      return check(ablation);
    };
  };
  report(6, "dynamic beats fixed", ablation_check(ablation_direction));
  report(7, "bank size trend", ablation_check(bank_size_trend));
  report(8, "fused inference latency", bench_direction);
  report(9, "correlation machinery", analysis_machinery);
  report(10, "serialization", serialization);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
