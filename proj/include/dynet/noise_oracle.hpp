#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

namespace dynet {

/// A vectorized input decomposed against one unit kernel w_k and an
/// orthonormal noise basis {y_j}:
///
///   x_(i) = clean + beta * w_k + sum_j alpha_j * y_j,   clean ⟂ w_k, y_j
///
/// where x_(i) is `input` circularly shifted by `shift`. The kernel splits as
/// w_k = gamma_perp * w_perp + sum_j gamma_j * y_j with w_perp ⟂ all y_j.
struct NoiseInstance {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t shift = 0;
  Eigen::MatrixXd noise_basis;  ///< n x d, columns y_j
  Eigen::VectorXd kernel;       ///< w_k
  Eigen::VectorXd gamma;        ///< <w_k, y_j>
  double gamma_perp = 0;
  Eigen::VectorXd clean;
  double beta = 0;
  Eigen::VectorXd alpha;
  Eigen::VectorXd input;

  /// x_(i): `input` rotated left by `shift`.
  Eigen::VectorXd shifted() const;
  /// Throws if unit norms, orthogonality or the gamma identity fail.
  void check_invariants(double tol = 1e-10) const;
};

/// out[m] = x[(m + shift) mod n].
Eigen::VectorXd circular_shift(const Eigen::VectorXd& x, std::size_t shift);

/// Builds an instance from explicit parts; `clean` is used as given.
NoiseInstance assemble_noise_instance(const Eigen::MatrixXd& noise_basis, const Eigen::VectorXd& kernel,
                                      const Eigen::VectorXd& clean, double beta, const Eigen::VectorXd& alpha,
                                      std::size_t shift = 0);

/// Random instance: orthonormal basis from QR of a Gaussian matrix, unit
/// kernel redrawn until gamma_perp >= 0.1, clean part projected off
/// span(Y, w_k), beta and alpha uniform on [-2, 2]. Requires 1 <= d < n.
NoiseInstance make_noise_instance(std::size_t n, std::size_t d, std::uint64_t seed, std::size_t shift = 0);

/// The (d+1)x(d+1) system A [beta, alpha] = [f_i(x), g_i0(x), ...] with
/// A built from the inner products of w_k and the y_j.
struct SolveResult {
  Eigen::MatrixXd system;
  Eigen::VectorXd rhs;
  Eigen::VectorXd solution;   ///< (beta_hat, alpha_hat_0..)
  Eigen::RowVectorXd first_row_inverse;  ///< a_00 .. a_0d
  double determinant = 0;

  double beta_hat() const { return solution(0); }
};

/// Throws when A is singular, i.e. w_k lies inside the noise space.
SolveResult solve_white_response(const NoiseInstance& inst);

/// Recovery of the noise-free response from the responses of a kernel set
/// W (columns, w_k at `kernel_index`) whose span contains the noise space.
struct Reconstruction {
  Eigen::RowVectorXd first_row_inverse;
  Eigen::VectorXd coefficients;  ///< beta_t per column of W
  std::size_t kernel_index = 0;
  double fit_residual = 0;       ///< |W beta - sum_j a_0(j+1) y_j|
  double white_response = 0;     ///< (a_00 + beta_k)<w_k,x> + sum_{t != k} beta_t <w_t,x>
  double error = 0;              ///< |white_response - beta|
  std::size_t naive_products = 0;  ///< inner products the term-by-term sum needs
};

Reconstruction reconstruct_white_response(const NoiseInstance& inst, const Eigen::MatrixXd& kernels,
                                          std::size_t kernel_index, double residual_threshold = 1e-6);

/// The single kernel (a_00 + beta_k) w_k + sum_{t != k} beta_t w_t whose one
/// inner product with x_(i) yields the noise-free response.
struct FusedWhiteKernel {
  Eigen::VectorXd kernel;
  double response = 0;
  double error = 0;
  std::size_t inner_products = 1;
  std::size_t naive_products = 0;
};

FusedWhiteKernel fuse_white_kernel(const NoiseInstance& inst, const Eigen::MatrixXd& kernels,
                                   const Reconstruction& rec);

/// Worst-case errors over a seeded batch of random instances (n <= max_n,
/// d <= max_d), each checked with a random kernel set containing w_k, a
/// random invertible recombination of the noise basis and extra kernels.
struct OracleSummary {
  std::size_t trials = 0;
  double max_det_error = 0;
  double max_beta_error = 0;
  double max_alpha_error = 0;
  double max_reconstruction_error = 0;
  double max_fused_error = 0;
  double max_fit_residual = 0;

  bool passes(double tol) const;
  std::string to_text() const;
};

OracleSummary run_noise_oracle(std::uint64_t seed, std::size_t trials, std::size_t max_n = 32,
                               std::size_t max_d = 8);

}  // namespace dynet
