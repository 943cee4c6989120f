#include "mdfm/distributions.hpp"
#include "mdfm/errors.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <limits>
#include <numbers>

namespace mdfm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kInf = std::numeric_limits<double>::infinity();

// log Q(z) with Q the standard normal upper tail.
double log_upper_tail(double z) {
  if (z < 30.0)
    return std::log(0.5 * std::erfc(z / std::numbers::sqrt2));
  const double z2 = z * z;
  return -0.5 * z2 - std::log(z) - 0.5 * kLog2Pi +
         std::log1p(-1.0 / z2 + 3.0 / (z2 * z2));
}

double upper_tail(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

// z with Q(z) = q.
double upper_tail_inv(double q) {
  return std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * q);
}

double log_sum_sub(double la, double lb) {
  // log(exp(la) - exp(lb)), la >= lb
  if (lb == -kInf)
    return la;
  return la + std::log1p(-std::exp(lb - la));
}

} // namespace

double Rng::uniform() {
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::normal() {
  // Marsaglia polar method without caching, so the stream position depends
  // only on the number of calls.
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  return u * std::sqrt(-2.0 * std::log(s) / s);
}

double Rng::gamma(double shape, double scale) {
  if (!(shape > 0) || !(scale > 0))
    throw UsageError("gamma draw requires positive shape and scale");
  if (shape < 1.0) {
    const double g = gamma(shape + 1.0, 1.0);
    return scale * g * std::pow(uniform(), 1.0 / shape);
  }
  // Marsaglia and Tsang
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x)
      return scale * d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
      return scale * d * v;
  }
}

double Rng::beta(double a, double b) {
  const double x = gamma(a, 1.0);
  const double y = gamma(b, 1.0);
  return x / (x + y);
}

Vector Rng::normal_vector(Eigen::Index n) {
  Vector z(n);
  for (Eigen::Index i = 0; i < n; ++i)
    z(i) = normal();
  return z;
}

Matrix Rng::normal_matrix(Eigen::Index r, Eigen::Index c) {
  Matrix z(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i)
      z(i, j) = normal();
  return z;
}

Rng Rng::split(std::uint64_t stream) {
  const std::uint64_t base = engine_();
  std::seed_seq seq{static_cast<std::uint32_t>(base),
                    static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32)};
  Rng child;
  child.engine_.seed(seq);
  return child;
}

Matrix sample_matrix_normal(const Matrix &mean, const Eigen::LLT<Matrix> &row_prec,
                            const Eigen::LLT<Matrix> &col_cov, Rng &rng) {
  const auto p = mean.rows();
  const auto m = mean.cols();
  if (row_prec.rows() != p || col_cov.rows() != m)
    throw UsageError("sample_matrix_normal: Cholesky factors do not conform");
  Matrix Z = rng.normal_matrix(p, m);
  Matrix X = row_prec.matrixU().solve(Z);
  X = X * col_cov.matrixL().transpose();
  return mean + X;
}

Matrix project_onto_constraint(const Matrix &x_u, const Eigen::LLT<Matrix> &row_prec,
                               const Matrix &sigma, const LinearConstraint &c) {
  const auto p = x_u.rows();
  const auto m = x_u.cols();
  const auto d = p * m;
  const auto r = c.M.rows();
  if (r == 0)
    return x_u;
  if (c.M.cols() != d || c.a0.size() != r)
    throw UsageError("constraint does not conform to the draw");
  const Matrix Kinv = row_prec.solve(Matrix::Identity(p, p));
  // U = (Sigma (x) K^{-1}) M', column a is vec(K^{-1} M_a Sigma).
  Matrix U(d, r);
  std::vector<Eigen::Index> unit(r, -1);
  for (Eigen::Index a = 0; a < r; ++a) {
    Eigen::Index nz = -1;
    int count = 0;
    for (Eigen::Index j = 0; j < d; ++j)
      if (c.M(a, j) != 0.0) {
        ++count;
        nz = j;
      }
    if (count == 1 && c.M(a, nz) == 1.0) {
      unit[a] = nz;
      const Eigen::Index i = nz % p;
      const Eigen::Index jj = nz / p;
      Matrix col = Kinv.col(i) * sigma.row(jj);
      U.col(a) = vec(col);
    } else {
      Matrix Ma = unvec(c.M.row(a).transpose(), p, m);
      U.col(a) = vec(Kinv * Ma * sigma);
    }
  }
  const Matrix MU = c.M * U;
  Eigen::FullPivLU<Matrix> lu(MU);
  if (!lu.isInvertible())
    throw NumericalError("singular constraint system M C M' (redundant constraints)");
  const Vector xu = vec(x_u);
  const Vector w = lu.solve(c.a0 - c.M * xu);
  Vector x = xu + U * w;
  for (Eigen::Index a = 0; a < r; ++a)
    if (unit[a] >= 0)
      x(unit[a]) = c.a0(a);
  return unvec(x, p, m);
}

Matrix sample_constrained_gaussian(const Matrix &mean,
                                   const Eigen::LLT<Matrix> &row_prec,
                                   const Matrix &sigma,
                                   const LinearConstraint &c, Rng &rng) {
  auto col = checked_llt(sigma, "constrained Gaussian column covariance");
  Matrix xu = sample_matrix_normal(mean, row_prec, col, rng);
  return project_onto_constraint(xu, row_prec, sigma, c);
}

namespace {

Matrix bartlett(double nu, Eigen::Index d, Rng &rng) {
  Matrix T = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    T(i, i) = std::sqrt(rng.chi2(nu - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j)
      T(i, j) = rng.normal();
  }
  return T;
}

} // namespace

Matrix sample_wishart(double delta, const Matrix &psi, Rng &rng) {
  const auto d = psi.rows();
  if (!(delta > static_cast<double>(d) - 1.0))
    throw UsageError("Wishart degrees of freedom must exceed d - 1");
  auto llt = checked_llt(psi, "Wishart scale");
  Matrix LT = llt.matrixL() * bartlett(delta, d, rng);
  return symmetrize(LT * LT.transpose());
}

Matrix sample_inverse_wishart(double nu, const Matrix &S, Rng &rng) {
  const auto d = S.rows();
  if (!(nu > static_cast<double>(d) - 1.0))
    throw UsageError("inverse-Wishart degrees of freedom must exceed d - 1");
  auto llt = checked_llt(S, "inverse-Wishart scale");
  Matrix T = bartlett(nu, d, rng);
  // Sigma = L_S T^{-T} T^{-1} L_S'
  Matrix X = T.transpose().triangularView<Eigen::Upper>().solve(
      Matrix::Identity(d, d));
  Matrix G = llt.matrixL() * X;
  return symmetrize(G * G.transpose());
}

Matrix sample_restricted_inverse_wishart(double nu, const Matrix &S, Rng &rng) {
  const auto d = S.rows();
  if (d == 1)
    return Matrix::Ones(1, 1);
  if (!(nu > static_cast<double>(d) - 1.0))
    throw UsageError("restricted inverse-Wishart degrees of freedom must exceed d - 1");
  Eigen::PermutationMatrix<Eigen::Dynamic> P(d);
  P.setIdentity();
  P.indices()(0) = static_cast<int>(d - 1);
  P.indices()(d - 1) = 0;
  const Matrix St = P.transpose() * S * P;
  const Matrix psi = spd_inverse(St, "restricted inverse-Wishart scale");
  auto llt = checked_llt(psi, "restricted inverse-Wishart scale");
  Matrix L = llt.matrixL();
  Matrix Delta = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i + 1 < d; ++i) {
    Delta(i, i) = std::sqrt(rng.chi2(nu - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j)
      Delta(i, j) = rng.normal();
  }
  for (Eigen::Index j = 0; j + 1 < d; ++j)
    Delta(d - 1, j) = rng.normal();
  Delta(d - 1, d - 1) = 1.0 / L(d - 1, d - 1);
  Matrix R = L * Delta;
  Matrix Rinv = R.triangularView<Eigen::Lower>().solve(Matrix::Identity(d, d));
  Matrix sigma_t = Rinv.transpose() * Rinv;
  Matrix sigma = symmetrize(P * sigma_t * P.transpose());
  sigma(0, 0) = 1.0;
  return sigma;
}

Matrix sample_restricted_inverse_wishart_partitioned(double nu, const Matrix &S,
                                                     Rng &rng) {
  const auto d = S.rows();
  if (d == 1)
    return Matrix::Ones(1, 1);
  const double s11 = S(0, 0);
  const Vector s21 = S.block(1, 0, d - 1, 1);
  const Matrix S221 = symmetrize(S.block(1, 1, d - 1, d - 1) - s21 * s21.transpose() / s11);
  const Matrix G = sample_inverse_wishart(nu, S221, rng);
  auto gl = checked_llt(G / s11, "restricted inverse-Wishart block");
  const Vector b = sample_mvn(s21 / s11, gl, rng);
  Matrix sigma(d, d);
  sigma(0, 0) = 1.0;
  sigma.block(1, 0, d - 1, 1) = b;
  sigma.block(0, 1, 1, d - 1) = b.transpose();
  sigma.block(1, 1, d - 1, d - 1) = symmetrize(G + b * b.transpose());
  return sigma;
}

Vector sample_mvn(const Vector &mean, const Eigen::LLT<Matrix> &cov, Rng &rng) {
  return mean + cov.matrixL() * rng.normal_vector(mean.size());
}

double sample_inverse_gamma(double shape, double scale, Rng &rng) {
  if (!(shape > 0) || !(scale > 0))
    throw UsageError("inverse-gamma parameters must be positive");
  return 1.0 / rng.gamma(shape, 1.0 / scale);
}

double sample_truncated_normal(double mu, double var, double lo, double hi,
                               Rng &rng) {
  if (!(var > 0) || !(lo < hi) || !std::isfinite(mu))
    throw UsageError("truncated normal requires var > 0 and lo < hi");
  const double s = std::sqrt(var);
  double a = (lo - mu) / s;
  double b = (hi - mu) / s;
  bool flip = false;
  if (b <= 0.0) {
    flip = true;
    const double t = a;
    a = -b;
    b = -t;
  }
  const double u = rng.uniform();
  double z;
  if (a >= 0.0) {
    if (a > 8.0) {
      const double w = std::isfinite(b) ? -std::expm1(-a * (b - a)) : 1.0;
      z = a - std::log1p(-u * w) / a;
    } else {
      const double qa = upper_tail(a);
      const double qb = std::isfinite(b) ? upper_tail(b) : 0.0;
      if (!(qa - qb > 0.0))
        throw NumericalError("truncated normal interval carries zero mass");
      z = upper_tail_inv(qa - u * (qa - qb));
    }
  } else {
    // a < 0 < b
    const double pa = std::isfinite(a) ? upper_tail(-a) : 0.0;
    const double qb = std::isfinite(b) ? upper_tail(b) : 0.0;
    const double mass = 1.0 - pa - qb;
    if (!(mass > 0.0))
      throw NumericalError("truncated normal interval carries zero mass");
    const double p = pa + u * mass; // lower-tail probability of z
    z = p < 0.5 ? -upper_tail_inv(p) : upper_tail_inv(1.0 - p);
  }
  z = std::clamp(z, a, b);
  if (flip)
    z = -z;
  double x = mu + s * z;
  if (x <= lo)
    x = std::nextafter(lo, hi);
  if (x >= hi)
    x = std::nextafter(hi, lo);
  return x;
}

double normal_logpdf(double x, double mu, double var) {
  const double r = x - mu;
  return -0.5 * (kLog2Pi + std::log(var) + r * r / var);
}

double mvn_logpdf(const Vector &x, const Vector &mean, const Eigen::LLT<Matrix> &cov) {
  const Vector z = cov.matrixL().solve(x - mean);
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + log_det(cov) +
                 z.squaredNorm());
}

double inverse_gamma_logpdf(double x, double shape, double scale) {
  if (!(x > 0))
    return -kInf;
  return shape * std::log(scale) - std::lgamma(shape) -
         (shape + 1.0) * std::log(x) - scale / x;
}

double beta_logpdf(double x, double a, double b) {
  if (!(x > 0 && x < 1))
    return -kInf;
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) +
         std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
}

double normal_log_mass(double mu, double var, double lo, double hi) {
  const double s = std::sqrt(var);
  double a = (lo - mu) / s;
  double b = (hi - mu) / s;
  if (b <= 0.0) {
    const double t = a;
    a = -b;
    b = -t;
  }
  if (a >= 0.0)
    return log_sum_sub(log_upper_tail(a),
                       std::isfinite(b) ? log_upper_tail(b) : -kInf);
  const double pa = std::isfinite(a) ? upper_tail(-a) : 0.0;
  const double qb = std::isfinite(b) ? upper_tail(b) : 0.0;
  return std::log1p(-(pa + qb));
}

double truncated_normal_logpdf(double x, double mu, double var, double lo,
                               double hi) {
  if (!(x > lo && x < hi))
    return -kInf;
  return normal_logpdf(x, mu, var) - normal_log_mass(mu, var, lo, hi);
}

double truncated_normal_mean(double mu, double var, double lo, double hi) {
  const double s = std::sqrt(var);
  const double a = (lo - mu) / s;
  const double b = (hi - mu) / s;
  const double lz = normal_log_mass(mu, var, lo, hi);
  auto phi_ratio = [&](double z) {
    if (!std::isfinite(z))
      return 0.0;
    return std::exp(-0.5 * z * z - 0.5 * kLog2Pi - lz);
  };
  return mu + s * (phi_ratio(a) - phi_ratio(b));
}

double log_multigamma(double a, int d) {
  double out = 0.25 * d * (d - 1) * std::log(std::numbers::pi);
  for (int i = 1; i <= d; ++i)
    out += std::lgamma(a + 0.5 * (1 - i));
  return out;
}

double wishart_logpdf(const Matrix &K, double delta, const Matrix &psi) {
  const int d = static_cast<int>(K.rows());
  auto lk = checked_llt(K, "Wishart argument");
  auto lp = checked_llt(psi, "Wishart scale");
  const double tr = lp.solve(K).trace();
  return 0.5 * (delta - d - 1.0) * log_det(lk) - 0.5 * tr -
         0.5 * delta * d * std::numbers::ln2 - 0.5 * delta * log_det(lp) -
         log_multigamma(0.5 * delta, d);
}

double inverse_wishart_logpdf(const Matrix &sigma, double nu, const Matrix &S) {
  const int d = static_cast<int>(sigma.rows());
  auto ls = checked_llt(sigma, "inverse-Wishart argument");
  auto lS = checked_llt(S, "inverse-Wishart scale");
  const double tr = ls.solve(S).trace();
  return 0.5 * nu * log_det(lS) - 0.5 * nu * d * std::numbers::ln2 -
         log_multigamma(0.5 * nu, d) - 0.5 * (nu + d + 1.0) * log_det(ls) -
         0.5 * tr;
}

double restricted_inverse_wishart_logpdf(const Matrix &sigma, double nu,
                                         const Matrix &S) {
  const auto d = sigma.rows();
  if (std::abs(sigma(0, 0) - 1.0) > 1e-9)
    return -kInf;
  if (d == 1)
    return 0.0;
  const double s11 = S(0, 0);
  const Vector s21 = S.block(1, 0, d - 1, 1);
  const Matrix S221 = S.block(1, 1, d - 1, d - 1) - s21 * s21.transpose() / s11;
  const Vector b = sigma.block(1, 0, d - 1, 1);
  const Matrix G = sigma.block(1, 1, d - 1, d - 1) - b * b.transpose();
  if (!is_spd(symmetrize(G), 1e-8))
    return -kInf;
  auto gl = checked_llt(G / s11, "restricted inverse-Wishart block");
  return mvn_logpdf(b, s21 / s11, gl) +
         inverse_wishart_logpdf(symmetrize(G), nu, symmetrize(S221));
}

} // namespace mdfm
