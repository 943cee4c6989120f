#pragma once

#include <Eigen/Dense>

#include <string_view>

namespace mdfm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Column-major vectorization, the single convention used for vec(F_t),
/// vec(Y_t) and vec(A') everywhere in the library.
inline Vector vec(const Matrix &m) {
  return Eigen::Map<const Vector>(m.data(), m.size());
}

inline Matrix unvec(const Vector &v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

inline Matrix symmetrize(const Matrix &m) { return 0.5 * (m + m.transpose()); }

/// Symmetry residual below tol (relative to the largest entry) and a
/// successful Cholesky factorization of the symmetric part.
bool is_spd(const Matrix &m, double tol = 1e-10);

/// Cholesky of the symmetric part. On failure a 1e-10 * I jitter is added
/// once; a second failure throws NumericalError naming `what`.
Eigen::LLT<Matrix> checked_llt(const Matrix &m, std::string_view what);

inline double log_det(const Eigen::LLT<Matrix> &llt) {
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

/// Inverse of an SPD matrix via its Cholesky factor.
Matrix spd_inverse(const Matrix &m, std::string_view what);

/// Factor of a covariance used to whiten from the right; diagonal
/// matrices skip the Cholesky.
struct CovFactor {
  bool diagonal = false;
  Vector dinv_sqrt;
  Matrix linv_t; // L^{-T}
  Matrix inverse;
  double logdet = 0;

  CovFactor(const Matrix &sigma, std::string_view what);
  /// X L^{-T}, so that right(X) right(X)' = X Sigma^{-1} X'.
  Matrix right(const Matrix &X) const;
};

/// Symmetric positive-definite banded matrix in lower band storage,
/// band(d, j) = M(j + d, j) for 0 <= d <= bandwidth. factorize() replaces
/// the band with its Cholesky factor L (M = L L').
class BandedSpd {
public:
  BandedSpd(Eigen::Index size, Eigen::Index bandwidth);

  Eigen::Index size() const { return n_; }
  Eigen::Index bandwidth() const { return bw_; }

  /// Adds v to entry (i, j); requires |i - j| <= bandwidth. Symmetric, so
  /// only the lower triangle is stored and (i, j) / (j, i) alias.
  void add(Eigen::Index i, Eigen::Index j, double v);
  double operator()(Eigen::Index i, Eigen::Index j) const;

  void factorize(std::string_view what);
  bool factorized() const { return factorized_; }

  /// Solves M x = b using the factor.
  Vector solve(const Vector &b) const;
  /// Solves L' x = z; with z standard normal x ~ N(0, M^{-1}).
  Vector solve_upper(const Vector &z) const;
  /// Solves L x = b.
  Vector solve_lower(const Vector &b) const;
  double log_det() const;

  /// Dense copy of the (unfactorized or factorized) band, for tests.
  Matrix dense() const;

private:
  Eigen::Index n_;
  Eigen::Index bw_;
  Matrix band_;
  bool factorized_ = false;
};

} // namespace mdfm
