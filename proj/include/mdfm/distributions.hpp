#pragma once

#include "mdfm/linalg.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace mdfm {

/// Seeded random stream. Every sampler takes one explicitly; a stream must
/// not be shared across threads.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform(); // open interval (0, 1)
  double normal();
  double gamma(double shape, double scale);
  double chi2(double nu) { return gamma(0.5 * nu, 2.0); }
  double beta(double a, double b);
  Vector normal_vector(Eigen::Index n);
  Matrix normal_matrix(Eigen::Index r, Eigen::Index c);

  /// Independent child stream derived from the current state and a label.
  Rng split(std::uint64_t stream);

  std::mt19937_64 &engine() { return engine_; }

private:
  std::mt19937_64 engine_;
};

/// M x = a0 restricting a d-vector.
struct LinearConstraint {
  Matrix M;  // r x d
  Vector a0; // r
};

struct WishartFit {
  double delta = 0;
  Matrix psi;
  int iterations = 0;
  bool converged = false;
};

struct InverseWishartFit {
  double nu = 0;
  Matrix S;
  int iterations = 0;
  bool converged = false;
};

struct ScalarFit {
  double a = 0; // location / shape
  double b = 0; // scale / variance / second shape
  int iterations = 0;
  bool converged = false;
  bool degenerate = false;
  std::string message;
};

// ---- samplers ----

/// M + L_K^{-T} Z L_Sigma^T; vec of the result ~ N(vec M, Sigma (x) K^{-1}).
Matrix sample_matrix_normal(const Matrix &mean, const Eigen::LLT<Matrix> &row_prec,
                            const Eigen::LLT<Matrix> &col_cov, Rng &rng);

/// Draw of X (p x m) with vec(X) ~ N(vec(mean), Sigma (x) K^{-1}) conditioned on
/// M vec(X) = a0. Entries hit by unit-vector constraint rows are set exactly.
Matrix sample_constrained_gaussian(const Matrix &mean,
                                   const Eigen::LLT<Matrix> &row_prec,
                                   const Matrix &sigma,
                                   const LinearConstraint &c, Rng &rng);

/// Projection step alone: x_u + C M'(M C M')^{-1}(a0 - M x_u) for the
/// Kronecker covariance C = Sigma (x) K^{-1}, applied to an unconstrained draw.
Matrix project_onto_constraint(const Matrix &x_u, const Eigen::LLT<Matrix> &row_prec,
                               const Matrix &sigma, const LinearConstraint &c);

/// Sigma ~ IW(nu, S): Sigma^{-1} ~ W(nu, S^{-1}), E[Sigma] = S / (nu - d - 1).
Matrix sample_inverse_wishart(double nu, const Matrix &S, Rng &rng);
/// K ~ W(delta, Psi), E[K] = delta * Psi.
Matrix sample_wishart(double delta, const Matrix &psi, Rng &rng);

/// IW(nu, S) conditioned on Sigma(0,0) = 1 via the Bartlett construction with
/// the last diagonal pivot fixed.
Matrix sample_restricted_inverse_wishart(double nu, const Matrix &S, Rng &rng);

/// Same law drawn through the partition sigma_11 = 1, b = sigma_21 | .,
/// Sigma_22.1; used as an independent check and by the importance density.
Matrix sample_restricted_inverse_wishart_partitioned(double nu, const Matrix &S,
                                                     Rng &rng);

double sample_truncated_normal(double mu, double var, double lo, double hi,
                               Rng &rng);
double sample_inverse_gamma(double shape, double scale, Rng &rng);

/// Mean/covariance draw from a Gaussian given through the Cholesky factor of
/// its covariance.
Vector sample_mvn(const Vector &mean, const Eigen::LLT<Matrix> &cov, Rng &rng);

// ---- log densities ----

double normal_logpdf(double x, double mu, double var);
double mvn_logpdf(const Vector &x, const Vector &mean, const Eigen::LLT<Matrix> &cov);
double inverse_gamma_logpdf(double x, double shape, double scale);
double beta_logpdf(double x, double a, double b);
/// log P(lo < N(mu, var) < hi), stable in the tails.
double normal_log_mass(double mu, double var, double lo, double hi);
double truncated_normal_logpdf(double x, double mu, double var, double lo,
                               double hi);
double log_multigamma(double a, int d);
double wishart_logpdf(const Matrix &K, double delta, const Matrix &psi);
double inverse_wishart_logpdf(const Matrix &sigma, double nu, const Matrix &S);
/// Density of the restricted law on the set {Sigma(0,0) = 1} with respect to
/// Lebesgue measure on the remaining free entries.
double restricted_inverse_wishart_logpdf(const Matrix &sigma, double nu,
                                         const Matrix &S);

/// Analytic mean of N(mu, var) restricted to (lo, hi).
double truncated_normal_mean(double mu, double var, double lo, double hi);

// ---- maximum-likelihood fitters ----

/// Multivariate digamma sum_{i=1}^d psi(x + (1 - i)/2) and its derivative.
double multi_digamma(double x, int d);
double multi_trigamma(double x, int d);

WishartFit mle_wishart(const std::vector<Matrix> &samples);
/// Fits IW(nu, S) by fitting W(delta, Psi) to the inverses; nu = delta and
/// S = Psi^{-1}.
InverseWishartFit mle_inverse_wishart(const std::vector<Matrix> &samples);
/// Restricted IW fit for draws with Sigma(0,0) = 1.
InverseWishartFit mle_restricted_inverse_wishart(const std::vector<Matrix> &samples);
double wishart_loglik(const std::vector<Matrix> &samples, double delta,
                      const Matrix &psi);

/// Returns mu in a, variance in b.
ScalarFit mle_truncated_normal(const std::vector<double> &x, double lo = -1.0,
                               double hi = 1.0);
/// Returns shape in a, scale in b.
ScalarFit mle_inverse_gamma(const std::vector<double> &x);
ScalarFit mle_beta(const std::vector<double> &x);

} // namespace mdfm
