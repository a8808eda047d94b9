#include "dynet/noise_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "dynet/random.hpp"

namespace dynet {

namespace {

Eigen::VectorXd gaussian(std::size_t n, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = dist(rng);
  return v;
}

double uniform(double lo, double hi, Rng& rng) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

}  // namespace

Eigen::VectorXd circular_shift(const Eigen::VectorXd& x, std::size_t shift) {
  const auto n = static_cast<std::size_t>(x.size());
  Eigen::VectorXd out(x.size());
  for (std::size_t m = 0; m < n; ++m) out(m) = x((m + shift) % n);
  return out;
}

Eigen::VectorXd NoiseInstance::shifted() const { return circular_shift(input, shift); }

void NoiseInstance::check_invariants(double tol) const {
  auto fail = [](const std::string& what) { throw Error("noise instance invariant violated: " + what); };
  if (std::abs(kernel.norm() - 1.0) > tol) fail("|w_k| != 1");
  const Eigen::MatrixXd gram = noise_basis.transpose() * noise_basis;
  if ((gram - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff() > tol) fail("noise basis not orthonormal");
  if (std::abs(gamma_perp * gamma_perp + gamma.squaredNorm() - 1.0) > tol) fail("gamma_perp^2 + sum gamma_j^2 != 1");
  if (std::abs(clean.dot(kernel)) > tol) fail("clean part not orthogonal to w_k");
  if ((noise_basis.transpose() * clean).cwiseAbs().maxCoeff() > tol) fail("clean part not orthogonal to noise");
  const Eigen::VectorXd rebuilt = clean + beta * kernel + noise_basis * alpha;
  if ((rebuilt - shifted()).cwiseAbs().maxCoeff() > tol) fail("decomposition does not reproduce x_(i)");
}

NoiseInstance assemble_noise_instance(const Eigen::MatrixXd& noise_basis, const Eigen::VectorXd& kernel,
                                      const Eigen::VectorXd& clean, double beta, const Eigen::VectorXd& alpha,
                                      std::size_t shift) {
  const auto n = static_cast<std::size_t>(kernel.size());
  const auto d = static_cast<std::size_t>(noise_basis.cols());
  if (d < 1 || d >= n) {
    throw Error("noise instance needs 1 <= d < n, got d=" + std::to_string(d) + " n=" + std::to_string(n));
  }
  if (static_cast<std::size_t>(noise_basis.rows()) != n || static_cast<std::size_t>(clean.size()) != n ||
      static_cast<std::size_t>(alpha.size()) != d) {
    throw Error("noise instance parts have inconsistent sizes");
  }
  NoiseInstance inst;
  inst.n = n;
  inst.d = d;
  inst.shift = shift % n;
  inst.noise_basis = noise_basis;
  inst.kernel = kernel;
  inst.gamma = noise_basis.transpose() * kernel;
  inst.gamma_perp = std::sqrt(std::max(0.0, (kernel - noise_basis * inst.gamma).squaredNorm()));
  inst.clean = clean;
  inst.beta = beta;
  inst.alpha = alpha;
  const Eigen::VectorXd shifted = clean + beta * kernel + noise_basis * alpha;
  // input is the unshifted signal: rotating it left by `shift` gives x_(i)
  inst.input = circular_shift(shifted, n - inst.shift);
  return inst;
}

NoiseInstance make_noise_instance(std::size_t n, std::size_t d, std::uint64_t seed, std::size_t shift) {
  if (d < 1 || d >= n) {
    throw Error("make_noise_instance: need 1 <= d < n to fit a kernel outside the noise space, got d=" +
                std::to_string(d) + " n=" + std::to_string(n));
  }
  Rng rng(seed);
  Eigen::MatrixXd g(n, d);
  for (std::size_t j = 0; j < d; ++j) g.col(j) = gaussian(n, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  const Eigen::MatrixXd y = qr.householderQ() * Eigen::MatrixXd::Identity(n, d);

  Eigen::VectorXd w;
  for (;;) {
    w = gaussian(n, rng).normalized();
    const Eigen::VectorXd perp = w - y * (y.transpose() * w);
    if (perp.norm() >= 0.1) break;
  }

  Eigen::MatrixXd span(n, d + 1);
  span << y, w;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr_span(span);
  const Eigen::MatrixXd q = qr_span.householderQ() * Eigen::MatrixXd::Identity(n, d + 1);
  Eigen::VectorXd clean = gaussian(n, rng);
  clean -= q * (q.transpose() * clean);
  clean -= q * (q.transpose() * clean);

  const double beta = uniform(-2.0, 2.0, rng);
  Eigen::VectorXd alpha(d);
  for (std::size_t j = 0; j < d; ++j) alpha(j) = uniform(-2.0, 2.0, rng);
  return assemble_noise_instance(y, w, clean, beta, alpha, shift);
}

SolveResult solve_white_response(const NoiseInstance& inst) {
  const std::size_t d = inst.d;
  const Eigen::VectorXd x = inst.shifted();
  SolveResult r;
  r.system.resize(d + 1, d + 1);
  r.rhs.resize(d + 1);
  // row 0: <w_k, w_k>, <y_j, w_k>; row j+1: <w_k, y_j>, <y_t, y_j>
  r.system(0, 0) = inst.kernel.dot(inst.kernel);
  for (std::size_t j = 0; j < d; ++j) {
    r.system(0, j + 1) = inst.noise_basis.col(j).dot(inst.kernel);
    r.system(j + 1, 0) = inst.kernel.dot(inst.noise_basis.col(j));
    for (std::size_t t = 0; t < d; ++t) r.system(j + 1, t + 1) = inst.noise_basis.col(t).dot(inst.noise_basis.col(j));
  }
  r.rhs(0) = x.dot(inst.kernel);
  for (std::size_t j = 0; j < d; ++j) r.rhs(j + 1) = x.dot(inst.noise_basis.col(j));

  Eigen::PartialPivLU<Eigen::MatrixXd> lu(r.system);
  r.determinant = lu.determinant();
  if (std::abs(r.determinant) < 1e-12) {
    throw Error("solve_white_response: system is singular (det " + std::to_string(r.determinant) +
                "); the kernel w_k lies inside the noise space");
  }
  r.solution = lu.solve(r.rhs);
  r.first_row_inverse = lu.inverse().row(0);
  return r;
}

Reconstruction reconstruct_white_response(const NoiseInstance& inst, const Eigen::MatrixXd& kernels,
                                          std::size_t kernel_index, double residual_threshold) {
  if (static_cast<std::size_t>(kernels.rows()) != inst.n) {
    throw Error("reconstruct: kernels have length " + std::to_string(kernels.rows()) + ", instance has " +
                std::to_string(inst.n));
  }
  if (kernel_index >= static_cast<std::size_t>(kernels.cols())) {
    throw Error("reconstruct: kernel index " + std::to_string(kernel_index) + " out of range");
  }
  if ((kernels.col(kernel_index) - inst.kernel).cwiseAbs().maxCoeff() > 1e-12) {
    throw Error("reconstruct: column " + std::to_string(kernel_index) + " is not the instance kernel w_k");
  }
  const SolveResult solved = solve_white_response(inst);
  Reconstruction rec;
  rec.first_row_inverse = solved.first_row_inverse;
  rec.kernel_index = kernel_index;

  Eigen::VectorXd target = Eigen::VectorXd::Zero(inst.n);
  for (std::size_t j = 0; j < inst.d; ++j) target += solved.first_row_inverse(j + 1) * inst.noise_basis.col(j);
  rec.coefficients = kernels.completeOrthogonalDecomposition().solve(target);
  rec.fit_residual = (kernels * rec.coefficients - target).norm();
  if (rec.fit_residual > residual_threshold) {
    throw Error("reconstruct: noise space is not inside span(W) (least-squares residual " +
                std::to_string(rec.fit_residual) + ")");
  }

  const Eigen::VectorXd x = inst.shifted();
  const double a00 = solved.first_row_inverse(0);
  rec.white_response = 0;
  for (Eigen::Index t = 0; t < kernels.cols(); ++t) {
    double c = rec.coefficients(t);
    if (static_cast<std::size_t>(t) == kernel_index) c += a00;
    if (c != 0.0) {
      rec.white_response += c * kernels.col(t).dot(x);
      ++rec.naive_products;
    }
  }
  rec.error = std::abs(rec.white_response - inst.beta);
  return rec;
}

FusedWhiteKernel fuse_white_kernel(const NoiseInstance& inst, const Eigen::MatrixXd& kernels,
                                   const Reconstruction& rec) {
  FusedWhiteKernel f;
  f.kernel = kernels * rec.coefficients;
  f.kernel += rec.first_row_inverse(0) * kernels.col(rec.kernel_index);
  f.response = f.kernel.dot(inst.shifted());
  f.error = std::abs(f.response - inst.beta);
  f.naive_products = rec.naive_products;
  return f;
}

bool OracleSummary::passes(double tol) const {
  return max_det_error < tol && max_beta_error < tol && max_alpha_error < tol && max_reconstruction_error < tol &&
         max_fused_error < tol;
}

std::string OracleSummary::to_text() const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "trials %zu\nmax_det_error %.3e\nmax_beta_error %.3e\nmax_alpha_error %.3e\n"
                "max_reconstruction_error %.3e\nmax_fused_error %.3e\nmax_fit_residual %.3e\n",
                trials, max_det_error, max_beta_error, max_alpha_error, max_reconstruction_error, max_fused_error,
                max_fit_residual);
  return buf;
}

OracleSummary run_noise_oracle(std::uint64_t seed, std::size_t trials, std::size_t max_n, std::size_t max_d) {
  if (max_d < 1 || max_n < max_d + 1) throw Error("run_noise_oracle: need max_n > max_d >= 1");
  Rng rng(seed);
  OracleSummary s;
  s.trials = trials;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    const std::size_t d = std::uniform_int_distribution<std::size_t>(1, max_d)(rng);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(d + 1, max_n)(rng);
    const std::size_t shift = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    const NoiseInstance inst = make_noise_instance(n, d, rng(), shift);

    const SolveResult solved = solve_white_response(inst);
    s.max_det_error = std::max(s.max_det_error, std::abs(solved.determinant - inst.gamma_perp * inst.gamma_perp));
    s.max_beta_error = std::max(s.max_beta_error, std::abs(solved.beta_hat() - inst.beta));
    s.max_alpha_error = std::max(s.max_alpha_error, (solved.solution.tail(d) - inst.alpha).cwiseAbs().maxCoeff());

    // W = shuffled {w_k, Y R, extras}; R is well conditioned by construction (I + small perturbation)
    Eigen::MatrixXd mix = Eigen::MatrixXd::Identity(d, d);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) mix(i, j) += std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    }
    const std::size_t extras = std::uniform_int_distribution<std::size_t>(0, 3)(rng);
    Eigen::MatrixXd kernels(n, d + 1 + extras);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, d + extras)(rng);
    const Eigen::MatrixXd mixed = inst.noise_basis * mix;
    std::size_t next = 0;
    for (std::size_t col = 0; col < static_cast<std::size_t>(kernels.cols()); ++col) {
      if (col == k) {
        kernels.col(col) = inst.kernel;
      } else if (next < d) {
        kernels.col(col) = mixed.col(next++);
      } else {
        kernels.col(col) = gaussian(n, rng).normalized();
      }
    }
    const Reconstruction rec = reconstruct_white_response(inst, kernels, k);
    const FusedWhiteKernel fused = fuse_white_kernel(inst, kernels, rec);
    s.max_reconstruction_error = std::max(s.max_reconstruction_error, rec.error);
    s.max_fused_error = std::max(s.max_fused_error, fused.error);
    s.max_fit_residual = std::max(s.max_fit_residual, rec.fit_residual);
  }
  return s;
}

}  // namespace dynet
