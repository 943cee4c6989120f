#include "mdfm/linalg.hpp"
#include "mdfm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mdfm {

bool is_spd(const Matrix &m, double tol) {
  if (m.rows() != m.cols() || m.size() == 0)
    return false;
  if (!m.allFinite())
    return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > tol * scale)
    return false;
  Eigen::LLT<Matrix> llt(symmetrize(m));
  return llt.info() == Eigen::Success;
}

Eigen::LLT<Matrix> checked_llt(const Matrix &m, std::string_view what) {
  Matrix s = symmetrize(m);
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() == Eigen::Success && s.allFinite())
    return llt;
  s.diagonal().array() += 1e-10;
  llt.compute(s);
  if (llt.info() != Eigen::Success || !s.allFinite())
    throw NumericalError("Cholesky factorization failed: " + std::string(what));
  return llt;
}

Matrix spd_inverse(const Matrix &m, std::string_view what) {
  auto llt = checked_llt(m, what);
  return symmetrize(llt.solve(Matrix::Identity(m.rows(), m.cols())));
}

CovFactor::CovFactor(const Matrix &sigma, std::string_view what) {
  diagonal = sigma.isDiagonal(0.0);
  if (diagonal) {
    const Vector d = sigma.diagonal();
    if (!(d.array() > 0).all() || !d.allFinite())
      throw NumericalError(std::string(what) + " has a non-positive diagonal");
    dinv_sqrt = d.cwiseInverse().cwiseSqrt();
    inverse = d.cwiseInverse().asDiagonal();
    logdet = d.array().log().sum();
  } else {
    auto llt = checked_llt(sigma, what);
    const auto n = sigma.rows();
    Matrix linv = llt.matrixL().solve(Matrix::Identity(n, n));
    linv_t = linv.transpose();
    inverse = linv_t * linv;
    logdet = log_det(llt);
  }
}

Matrix CovFactor::right(const Matrix &X) const {
  if (diagonal)
    return X * dinv_sqrt.asDiagonal();
  return X * linv_t;
}

BandedSpd::BandedSpd(Eigen::Index size, Eigen::Index bandwidth)
    : n_(size), bw_(std::min(bandwidth, std::max<Eigen::Index>(size - 1, 0))),
      band_(Matrix::Zero(bw_ + 1, size)) {}

void BandedSpd::add(Eigen::Index i, Eigen::Index j, double v) {
  if (i < j)
    std::swap(i, j);
  band_(i - j, j) += v;
}

double BandedSpd::operator()(Eigen::Index i, Eigen::Index j) const {
  if (i < j)
    std::swap(i, j);
  if (i - j > bw_)
    return 0.0;
  return band_(i - j, j);
}

void BandedSpd::factorize(std::string_view what) {
  // Column-oriented banded Cholesky, O(n * bw^2).
  auto attempt = [&](Matrix &b) {
    for (Eigen::Index j = 0; j < n_; ++j) {
      const Eigen::Index k0 = std::max<Eigen::Index>(0, j - bw_);
      double s = b(0, j);
      for (Eigen::Index k = k0; k < j; ++k) {
        const double ljk = b(j - k, k);
        s -= ljk * ljk;
      }
      if (!(s > 0.0) || !std::isfinite(s))
        return false;
      const double ljj = std::sqrt(s);
      b(0, j) = ljj;
      const Eigen::Index iend = std::min(n_ - 1, j + bw_);
      for (Eigen::Index i = j + 1; i <= iend; ++i) {
        double v = b(i - j, j);
        const Eigen::Index kk0 = std::max<Eigen::Index>(0, i - bw_);
        for (Eigen::Index k = kk0; k < j; ++k)
          v -= b(i - k, k) * b(j - k, k);
        b(i - j, j) = v / ljj;
      }
    }
    return true;
  };
  Matrix work = band_;
  if (!attempt(work)) {
    work = band_;
    work.row(0).array() += 1e-10;
    if (!attempt(work))
      throw NumericalError("banded Cholesky failed: " + std::string(what));
  }
  band_ = std::move(work);
  factorized_ = true;
}

Vector BandedSpd::solve_lower(const Vector &b) const {
  Vector x = b;
  for (Eigen::Index i = 0; i < n_; ++i) {
    double v = x(i);
    const Eigen::Index k0 = std::max<Eigen::Index>(0, i - bw_);
    for (Eigen::Index k = k0; k < i; ++k)
      v -= band_(i - k, k) * x(k);
    x(i) = v / band_(0, i);
  }
  return x;
}

Vector BandedSpd::solve_upper(const Vector &z) const {
  Vector x = z;
  for (Eigen::Index i = n_ - 1; i >= 0; --i) {
    double v = x(i);
    const Eigen::Index iend = std::min(n_ - 1, i + bw_);
    for (Eigen::Index k = i + 1; k <= iend; ++k)
      v -= band_(k - i, i) * x(k);
    x(i) = v / band_(0, i);
  }
  return x;
}

Vector BandedSpd::solve(const Vector &b) const {
  return solve_upper(solve_lower(b));
}

double BandedSpd::log_det() const {
  return 2.0 * band_.row(0).array().log().sum();
}

Matrix BandedSpd::dense() const {
  Matrix m = Matrix::Zero(n_, n_);
  for (Eigen::Index j = 0; j < n_; ++j)
    for (Eigen::Index d = 0; d <= bw_ && j + d < n_; ++d) {
      m(j + d, j) = band_(d, j);
      if (!factorized_)
        m(j, j + d) = band_(d, j);
    }
  return m;
}

} // namespace mdfm
