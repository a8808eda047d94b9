#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "dynet/correlation.hpp"
#include "dynet/noise_oracle.hpp"
#include "oracles.hpp"

using namespace dynet;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

/// [N=1, C, 1, L] tensor with the given channel rows.
Tensor<double> channels(const std::vector<std::vector<double>>& rows) {
  Tensor<double> t({1, rows.size(), 1, rows[0].size()});
  for (std::size_t c = 0; c < rows.size(); ++c) std::copy(rows[c].begin(), rows[c].end(), &t.at(0, c, 0, 0));
  return t;
}

}  // namespace

TEST(Pearson, Identities) {
  Rng rng(1);
  const auto x = random_vec(50, rng);
  std::vector<double> neg(x.size());
  std::transform(x.begin(), x.end(), neg.begin(), [](double v) { return -v; });
  EXPECT_NEAR(pearson(x, x), 1.0, 1e-12);
  EXPECT_NEAR(pearson(x, neg), -1.0, 1e-12);
}

TEST(Pearson, SmallExampleMatchesOracle) {
  const std::vector<double> u{1, 2, 3}, v{1, 2, 4};
  // centered: (-1,0,1) and (-4/3,-1/3,5/3); r = 3 / sqrt(2 * 14/3)
  EXPECT_NEAR(pearson(u, v), 3.0 / std::sqrt(28.0 / 3.0), 1e-12);
  EXPECT_NEAR(pearson(u, v), oracle::pearson(u, v), 1e-12);
}

TEST(Pearson, RandomPairsMatchOracle) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 2 + rng() % 200;
    const auto u = random_vec(n, rng), v = random_vec(n, rng);
    EXPECT_NEAR(pearson(u, v), oracle::pearson(u, v), 1e-12);
  }
}

TEST(Pearson, PositiveAffineInvariance) {
  Rng rng(3);
  const auto u = random_vec(64, rng), v = random_vec(64, rng);
  std::vector<double> w(u.size());
  std::transform(u.begin(), u.end(), w.begin(), [](double x) { return 3.5 * x - 2.0; });
  EXPECT_NEAR(pearson(w, v), pearson(u, v), 1e-12);
  EXPECT_NEAR(pearson(v, w), pearson(u, v), 1e-12);
}

TEST(Pearson, Errors) {
  const std::vector<double> a{1, 2, 3}, b{1, 2}, c{4, 4, 4}, one{1};
  EXPECT_THROW(pearson(a, b), Error);
  EXPECT_THROW(pearson(one, one), Error);
  try {
    pearson(a, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("zero-variance"), std::string::npos);
  }
}

TEST(Histogram, DuplicatedChannels) {
  const auto h = correlation_histogram(channels({{1, 5, 2, 8}, {1, 5, 2, 8}}));
  EXPECT_EQ(h.pairs, 1u);
  EXPECT_EQ(h.strong, 1u);
  EXPECT_EQ(h.counts.back(), 1u);
  EXPECT_EQ(h.edges.size(), 21u);
}

TEST(Histogram, HandcraftedThreeChannels) {
  // u = 1..5, 2u, e_1. Pairs: (u,2u) r=1; (u,e_1) and (2u,e_1) r=-1/sqrt(8)=-0.354
  const auto h = correlation_histogram(channels({{1, 2, 3, 4, 5}, {2, 4, 6, 8, 10}, {0, 1, 0, 0, 0}}));
  EXPECT_EQ(h.pairs, 3u);
  EXPECT_EQ(h.none, 0u);
  EXPECT_EQ(h.weak, 2u);
  EXPECT_EQ(h.middle, 0u);
  EXPECT_EQ(h.strong, 1u);
  std::vector<std::size_t> expect(20, 0);
  expect[19] = 1;
  expect[6] = 2;  // floor((1 - 0.354) * 10)
  EXPECT_EQ(h.counts, expect);
}

TEST(Histogram, HandcraftedMixedBands) {
  // b swaps the last two entries of a; c is a two-level pattern
  const std::vector<double> a{1, 2, 3, 4, 5, 6}, b{1, 2, 3, 4, 6, 5}, c{2, 1, 1, 2, 2, 1};
  const double rab = oracle::pearson(a, b), rac = oracle::pearson(a, c), rbc = oracle::pearson(b, c);
  const auto h = correlation_histogram(channels({a, b, c}));
  std::size_t tally[4] = {0, 0, 0, 0};
  std::vector<std::size_t> counts(20, 0);
  for (double r : {rab, rac, rbc}) {
    const double m = std::abs(r);
    ++tally[m < 0.2 ? 0 : m < 0.4 ? 1 : m < 0.6 ? 2 : 3];
    ++counts[std::min<std::size_t>(19, static_cast<std::size_t>(std::floor((r + 1) * 10)))];
  }
  EXPECT_EQ(h.none, tally[0]);
  EXPECT_EQ(h.weak, tally[1]);
  EXPECT_EQ(h.middle, tally[2]);
  EXPECT_EQ(h.strong, tally[3]);
  EXPECT_EQ(h.counts, counts);
  EXPECT_EQ(h.strong, 1u);
}

TEST(Histogram, IndependentNoiseConcentratesInNone) {
  Rng rng(4);
  const auto t = normal_tensor<double>({8, 16, 8, 8}, 0, 1, rng);
  const auto h = correlation_histogram(t);
  EXPECT_EQ(h.pairs, 16u * 15 / 2);
  EXPECT_EQ(h.none, h.pairs);
}

TEST(Histogram, PermutationInvariant) {
  Rng rng(5);
  auto t = normal_tensor<double>({2, 6, 3, 3}, 0, 1, rng);
  // correlate channel 1 with channel 0
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 9; ++i) (&t.at(n, 1, 0, 0))[i] += 2 * (&t.at(n, 0, 0, 0))[i];
  const auto h = correlation_histogram(t);
  std::vector<std::size_t> perm{4, 1, 5, 0, 3, 2};
  Tensor<double> p(t.shape());
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 6; ++c) std::copy_n(&t.at(n, perm[c], 0, 0), 9, &p.at(n, c, 0, 0));
  const auto hp = correlation_histogram(p);
  EXPECT_EQ(h.counts, hp.counts);
  EXPECT_EQ(h.none, hp.none);
  EXPECT_EQ(h.strong, hp.strong);
  EXPECT_GE(h.strong, 1u);
}

TEST(Histogram, DegenerateChannelsSkipped) {
  const auto h = correlation_histogram(channels({{1, 2, 3}, {7, 7, 7}, {3, 1, 2}, {0, 0, 0}}));
  EXPECT_EQ(h.skipped_channels, 2u);
  EXPECT_EQ(h.skipped_pairs, 5u);
  EXPECT_EQ(h.pairs, 1u);
}

TEST(Histogram, Errors) {
  EXPECT_THROW(correlation_histogram(Tensor<double>({1, 1, 2, 2})), Error);
  EXPECT_THROW(correlation_histogram(Tensor<double>({2, 2})), Error);
}

TEST(Histogram, TextTable) {
  const auto h = correlation_histogram(channels({{1, 2, 3}, {2, 4, 6}}), 4);
  EXPECT_EQ(h.to_text(),
            "bands 0.200 0.400 0.600\n"
            "bin -1.000 -0.500 0\n"
            "bin -0.500 +0.000 0\n"
            "bin +0.000 +0.500 0\n"
            "bin +0.500 +1.000 1\n"
            "tally 0 0 0 1\n"
            "pairs 1 0\n");
}

TEST(NoiseInstance, OrthogonalKernelInThreeDims) {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(3, 1);
  y(0, 0) = 1;
  Eigen::VectorXd w = Eigen::VectorXd::Unit(3, 1), clean = 0.7 * Eigen::VectorXd::Unit(3, 2);
  Eigen::VectorXd alpha(1);
  alpha << -1.25;
  const auto inst = assemble_noise_instance(y, w, clean, 1.5, alpha);
  EXPECT_NO_THROW(inst.check_invariants());
  EXPECT_EQ(inst.gamma(0), 0.0);
  EXPECT_EQ(inst.gamma_perp, 1.0);
  const auto s = solve_white_response(inst);
  EXPECT_TRUE(s.system.isIdentity(0));
  EXPECT_EQ(s.beta_hat(), inst.shifted().dot(w));
  EXPECT_NEAR(s.beta_hat(), 1.5, 1e-15);
}

TEST(NoiseInstance, RandomInstancesSatisfyInvariants) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const std::size_t d = 1 + seed % 8, n = d + 1 + seed % 13;
    const auto inst = make_noise_instance(n, d, seed, seed % n);
    EXPECT_NO_THROW(inst.check_invariants());
    EXPECT_GE(inst.gamma_perp, 0.1);
    EXPECT_EQ(inst.shifted(), circular_shift(inst.input, inst.shift));
  }
  EXPECT_THROW(make_noise_instance(4, 4, 1), Error);
  EXPECT_THROW(make_noise_instance(4, 0, 1), Error);
}

TEST(NoiseInstance, CircularShift) {
  Eigen::VectorXd x(4);
  x << 1, 2, 3, 4;
  Eigen::VectorXd e(4);
  e << 2, 3, 4, 1;
  EXPECT_EQ(circular_shift(x, 1), e);
  EXPECT_EQ(circular_shift(x, 4), x);
}

TEST(SolveWhiteResponse, NoiseFreeInput) {
  auto inst = make_noise_instance(10, 3, 11);
  inst = assemble_noise_instance(inst.noise_basis, inst.kernel, inst.clean, inst.beta, Eigen::VectorXd::Zero(3));
  const auto s = solve_white_response(inst);
  EXPECT_NEAR(s.rhs(0), inst.beta, 1e-12);
  EXPECT_NEAR(s.beta_hat(), inst.beta, 1e-12);
  EXPECT_LT(s.solution.tail(3).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SolveWhiteResponse, RecoversPlantedValues) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto inst = make_noise_instance(32, 8, seed, seed);
    const auto s = solve_white_response(inst);
    // det of the bordered identity is 1 - |gamma|^2, which is gamma_perp^2
    const Eigen::VectorXd perp = inst.kernel - inst.noise_basis * (inst.noise_basis.transpose() * inst.kernel);
    EXPECT_NEAR(s.determinant, perp.squaredNorm(), 1e-8);
    EXPECT_NEAR(s.beta_hat(), inst.beta, 1e-8);
    EXPECT_LT((s.solution.tail(8) - inst.alpha).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(SolveWhiteResponse, KernelInsideNoiseSpaceThrows) {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(3, 2);
  y(0, 0) = y(1, 1) = 1;
  Eigen::VectorXd w = (Eigen::VectorXd::Unit(3, 0) + Eigen::VectorXd::Unit(3, 1)) / std::sqrt(2.0);
  const auto inst = assemble_noise_instance(y, w, Eigen::VectorXd::Unit(3, 2), 1, Eigen::VectorXd::Ones(2));
  try {
    solve_white_response(inst);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("inside the noise space"), std::string::npos);
  }
}

TEST(Reconstruct, BasisCase) {
  const auto inst = make_noise_instance(12, 4, 21);
  Eigen::MatrixXd w(12, 5);
  w << inst.kernel, inst.noise_basis;
  const auto rec = reconstruct_white_response(inst, w, 0);
  EXPECT_LT(rec.error, 1e-10);
  EXPECT_LT(rec.fit_residual, 1e-10);
  const auto s = solve_white_response(inst);
  EXPECT_LT((rec.coefficients.tail(4) - s.first_row_inverse.tail(4).transpose()).cwiseAbs().maxCoeff(), 1e-10);
  const auto fused = fuse_white_kernel(inst, w, rec);
  EXPECT_LT(fused.error, 1e-10);
  EXPECT_EQ(fused.inner_products, 1u);
  EXPECT_EQ(fused.naive_products, 5u);
}

TEST(Reconstruct, MixedBasisAndExtraKernels) {
  Rng rng(6);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto inst = make_noise_instance(20, 5, 100 + seed);
    Eigen::MatrixXd mix = Eigen::MatrixXd::Identity(5, 5);
    for (Eigen::Index i = 0; i < 25; ++i) mix(i) += u(rng);
    Eigen::MatrixXd w(20, 8);
    w << inst.noise_basis * mix, inst.kernel, Eigen::MatrixXd::Random(20, 2);
    const auto rec = reconstruct_white_response(inst, w, 5);
    EXPECT_LT(rec.error, 1e-8);
    const auto fused = fuse_white_kernel(inst, w, rec);
    EXPECT_LT(fused.error, 1e-8);
    EXPECT_NEAR(fused.kernel.dot(inst.shifted()), inst.beta, 1e-8);
  }
}

TEST(Reconstruct, MissingNoiseDirectionThrows) {
  const auto inst = make_noise_instance(12, 4, 31);
  Eigen::MatrixXd w(12, 4);
  w << inst.kernel, inst.noise_basis.leftCols(3);
  try {
    reconstruct_white_response(inst, w, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("not inside span(W)"), std::string::npos);
  }
}

TEST(Reconstruct, KernelColumnMustBeWk) {
  const auto inst = make_noise_instance(12, 4, 41);
  Eigen::MatrixXd w(12, 5);
  w << inst.kernel, inst.noise_basis;
  EXPECT_THROW(reconstruct_white_response(inst, w, 1), Error);
  EXPECT_THROW(reconstruct_white_response(inst, w, 7), Error);
}

TEST(NoiseOracle, ThousandTrials) {
  const auto s = run_noise_oracle(7, 1000);
  EXPECT_EQ(s.trials, 1000u);
  EXPECT_TRUE(s.passes(1e-8)) << s.to_text();
}
