#include "mdfm/model.hpp"
#include "mdfm/errors.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>

namespace mdfm {

std::string to_string(Volatility v) {
  switch (v) {
  case Volatility::none:
    return "none";
  case Volatility::common_sv:
    return "common-sv";
  case Volatility::outlier:
    return "outlier";
  case Volatility::fat_tail:
    return "fat-tail";
  }
  return "none";
}

std::string to_string(Idio v) {
  return v == Idio::exact_diagonal ? "exact-diagonal" : "kronecker-cross";
}

std::string to_string(Identification v) {
  return v == Identification::unit_loadings ? "unit-loadings"
                                            : "unit-factor-variance";
}

Volatility volatility_from_string(const std::string &s) {
  if (s == "none")
    return Volatility::none;
  if (s == "common-sv")
    return Volatility::common_sv;
  if (s == "outlier")
    return Volatility::outlier;
  if (s == "fat-tail")
    return Volatility::fat_tail;
  throw UsageError("unknown volatility variant '" + s + "'");
}

Idio idio_from_string(const std::string &s) {
  if (s == "exact-diagonal" || s == "exact")
    return Idio::exact_diagonal;
  if (s == "kronecker-cross" || s == "cross")
    return Idio::kronecker_cross;
  throw UsageError("unknown idiosyncratic structure '" + s + "'");
}

Identification identification_from_string(const std::string &s) {
  if (s == "unit-loadings")
    return Identification::unit_loadings;
  if (s == "unit-factor-variance")
    return Identification::unit_factor_variance;
  throw UsageError("unknown identification flavor '" + s + "'");
}

Volatility VolatilityState::variant() const {
  switch (payload.index()) {
  case 1:
    return Volatility::common_sv;
  case 2:
    return Volatility::outlier;
  case 3:
    return Volatility::fat_tail;
  default:
    return Volatility::none;
  }
}

double VolatilityState::omega(int t) const {
  if (auto *sv = std::get_if<CommonSv>(&payload))
    return std::exp(sv->h(t));
  if (auto *o = std::get_if<OutlierState>(&payload)) {
    const double v = o->o(t);
    return v * v;
  }
  if (auto *ft = std::get_if<FatTailState>(&payload))
    return ft->q2(t);
  return 1.0;
}

Vector VolatilityState::omegas(int T) const {
  Vector w(T);
  for (int t = 0; t < T; ++t)
    w(t) = omega(t);
  return w;
}

PriorConfig default_prior(const ModelSpec &spec) {
  const int p = spec.factor_count();
  PriorConfig pr;
  pr.nu_r = spec.n + 3.0;
  pr.S_r = 0.01 * Matrix::Identity(spec.n, spec.n);
  pr.nu_c = spec.k + 3.0;
  pr.S_c = 0.01 * Matrix::Identity(spec.k, spec.k);
  pr.A0 = Matrix::Zero(spec.n, spec.p1);
  pr.V_A = 10.0 * Matrix::Identity(spec.p1, spec.p1);
  pr.B0 = Matrix::Zero(spec.k, spec.p2);
  pr.V_B = 10.0 * Matrix::Identity(spec.p2, spec.p2);
  pr.rho0 = Matrix::Zero(p, spec.q);
  pr.V_rho = Matrix::Ones(p, spec.q);
  pr.nu_lambda = Vector::Constant(p, 3.0);
  pr.S_lambda = Vector::Constant(p, 2.0);
  return pr;
}

Matrix common_component(const Loadings &loadings, const Vector &f_t) {
  const auto p1 = loadings.A.cols();
  const auto p2 = loadings.B.cols();
  if (f_t.size() != p1 * p2)
    throw UsageError("common_component: factor vector has length " +
                     std::to_string(f_t.size()) + ", expected " +
                     std::to_string(p1 * p2));
  return loadings.A * unvec(f_t, p1, p2) * loadings.B.transpose();
}

namespace {

void project_unit_lower(Matrix &m) {
  const auto p = std::min(m.rows(), m.cols());
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index i = 0; i < j; ++i)
      m(i, j) = 0.0;
    m(j, j) = 1.0;
  }
}

bool is_unit_lower(const Matrix &m) {
  const auto p = m.cols();
  if (m.rows() < p)
    return false;
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index i = 0; i < j; ++i)
      if (m(i, j) != 0.0)
        return false;
    if (m(j, j) != 1.0)
      return false;
  }
  return true;
}

} // namespace

Loadings enforce_identification(const Matrix &raw_A, const Matrix &raw_B) {
  Loadings out{raw_A, raw_B};
  project_unit_lower(out.A);
  project_unit_lower(out.B);
  return out;
}

std::vector<std::pair<int, int>> free_loading_entries(int m, int p) {
  std::vector<std::pair<int, int>> out;
  for (int i = 1; i < m; ++i)
    for (int j = 0; j < std::min(i, p); ++j)
      out.emplace_back(i, j);
  return out;
}

bool satisfies_identification(const Loadings &loadings) {
  return is_unit_lower(loadings.A) && is_unit_lower(loadings.B);
}

bool is_stationary(const Eigen::Ref<const Vector> &rho) {
  const auto q = rho.size();
  if (q == 0)
    return true;
  if (!rho.allFinite() || rho.squaredNorm() >= 1.0)
    return false;
  if (q == 1)
    return std::abs(rho(0)) < 1.0;
  Matrix companion = Matrix::Zero(q, q);
  companion.row(0) = rho.transpose();
  companion.block(1, 0, q - 1, q - 1).setIdentity();
  Eigen::EigenSolver<Matrix> es(companion, false);
  return es.eigenvalues().cwiseAbs().maxCoeff() < 1.0;
}

std::vector<Diagnostic> validate_spec(const ModelSpec &spec,
                                      const PriorConfig &prior) {
  std::vector<Diagnostic> out;
  auto fail = [&](std::string field, std::string msg) {
    out.push_back({std::move(field), std::move(msg)});
  };
  if (spec.n < 1)
    fail("n", "n must be a positive integer");
  if (spec.k < 1)
    fail("k", "k must be a positive integer");
  if (spec.p1 < 1)
    fail("p1", "p1 must be a positive integer");
  if (spec.p2 < 1)
    fail("p2", "p2 must be a positive integer");
  if (spec.q < 1)
    fail("q", "q must be a positive integer");
  if (spec.p1 > spec.n)
    fail("p1", "p1 (" + std::to_string(spec.p1) + ") exceeds n (" +
                   std::to_string(spec.n) + ")");
  if (spec.p2 > spec.k)
    fail("p2", "p2 (" + std::to_string(spec.p2) + ") exceeds k (" +
                   std::to_string(spec.k) + ")");
  if (spec.T <= spec.q)
    fail("T", "T (" + std::to_string(spec.T) + ") must exceed q (" +
                  std::to_string(spec.q) + ")");
  if (!out.empty())
    return out;

  const int p = spec.factor_count();
  auto check_matrix = [&](const std::string &name, const Matrix &m,
                          Eigen::Index r, Eigen::Index c) {
    if (m.rows() != r || m.cols() != c) {
      fail(name, name + " must be " + std::to_string(r) + "x" +
                     std::to_string(c) + ", got " + std::to_string(m.rows()) +
                     "x" + std::to_string(m.cols()));
      return false;
    }
    return true;
  };
  if (!(prior.nu_r > spec.n + 1))
    fail("nu_r", "improper prior: nu_r must exceed n + 1 = " +
                     std::to_string(spec.n + 1));
  if (!(prior.nu_c > spec.k + 1))
    fail("nu_c", "improper prior: nu_c must exceed k + 1 = " +
                     std::to_string(spec.k + 1));
  if (check_matrix("S_r", prior.S_r, spec.n, spec.n) && !is_spd(prior.S_r))
    fail("S_r", "S_r must be symmetric positive definite");
  if (check_matrix("S_c", prior.S_c, spec.k, spec.k) && !is_spd(prior.S_c))
    fail("S_c", "S_c must be symmetric positive definite");
  check_matrix("A0", prior.A0, spec.n, spec.p1);
  if (check_matrix("V_A", prior.V_A, spec.p1, spec.p1) && !is_spd(prior.V_A))
    fail("V_A", "V_A must be symmetric positive definite");
  check_matrix("B0", prior.B0, spec.k, spec.p2);
  if (check_matrix("V_B", prior.V_B, spec.p2, spec.p2) && !is_spd(prior.V_B))
    fail("V_B", "V_B must be symmetric positive definite");
  check_matrix("rho0", prior.rho0, p, spec.q);
  if (check_matrix("V_rho", prior.V_rho, p, spec.q) &&
      !(prior.V_rho.array() > 0).all())
    fail("V_rho", "V_rho entries must be positive");
  if (prior.nu_lambda.size() != p || !(prior.nu_lambda.array() > 0).all())
    fail("nu_lambda", "nu_lambda must hold p1*p2 positive values");
  if (prior.S_lambda.size() != p || !(prior.S_lambda.array() > 0).all())
    fail("S_lambda", "S_lambda must hold p1*p2 positive values");
  if (spec.volatility == Volatility::common_sv) {
    if (!(prior.V_phi > 0))
      fail("V_phi", "V_phi must be positive");
    if (!(prior.a_sh > 0) || !(prior.b_sh > 0))
      fail("a_sh", "sigma_h2 inverse-gamma parameters must be positive");
  }
  if (spec.volatility == Volatility::outlier &&
      (!(prior.a_po > 0) || !(prior.b_po > 0)))
    fail("a_po", "p_o beta parameters must be positive");
  if (spec.volatility == Volatility::fat_tail && !(prior.dof > 0))
    fail("dof", "degrees of freedom must be positive");
  return out;
}

std::vector<Diagnostic> check_state(const ModelSpec &spec,
                                    const ParameterState &s) {
  std::vector<Diagnostic> out;
  auto fail = [&](std::string f, std::string m) {
    out.push_back({std::move(f), std::move(m)});
  };
  const int p = spec.factor_count();
  if (s.loadings.A.rows() != spec.n || s.loadings.A.cols() != spec.p1 ||
      s.loadings.B.rows() != spec.k || s.loadings.B.cols() != spec.p2) {
    fail("loadings", "loading dimensions do not match the spec");
    return out;
  }
  if (!satisfies_identification(s.loadings))
    fail("loadings", "leading blocks are not unit lower triangular");
  if (!is_spd(s.cov.sigma_r))
    fail("sigma_r", "sigma_r is not symmetric positive definite");
  if (!is_spd(s.cov.sigma_c))
    fail("sigma_c", "sigma_c is not symmetric positive definite");
  else if (s.cov.sigma_c(0, 0) != 1.0 &&
           std::abs(s.cov.sigma_c(0, 0) - 1.0) > 1e-12)
    fail("sigma_c", "sigma_c(1,1) is not 1");
  if (spec.idio == Idio::exact_diagonal) {
    if (!s.cov.sigma_r.isDiagonal(0.0) || !s.cov.sigma_c.isDiagonal(0.0))
      fail("idio", "exact-diagonal model carries off-diagonal covariance");
  }
  if (s.dynamics.rho.rows() != p || s.dynamics.rho.cols() != spec.q)
    fail("rho", "rho dimensions do not match the spec");
  else
    for (int j = 0; j < p; ++j)
      if (!is_stationary(s.dynamics.rho.row(j).transpose()))
        fail("rho", "factor series " + std::to_string(j) +
                        " has a non-stationary AR polynomial");
  if (s.dynamics.lambda2.size() != p ||
      !(s.dynamics.lambda2.array() > 0).all())
    fail("lambda2", "lambda2 must be positive");
  if (s.vol.variant() != spec.volatility)
    fail("volatility", "volatility payload does not match the spec");
  if (auto *sv = std::get_if<CommonSv>(&s.vol.payload)) {
    if (!(std::abs(sv->phi) < 1.0))
      fail("phi", "|phi| must be below 1");
    if (!(sv->sigma_h2 > 0))
      fail("sigma_h2", "sigma_h2 must be positive");
    if (sv->h.size() != spec.T || !sv->h.allFinite())
      fail("h", "log-volatility path must be finite with length T");
  }
  if (auto *o = std::get_if<OutlierState>(&s.vol.payload)) {
    if (o->o.size() != spec.T || (o->o.array() < 1).any() ||
        (o->o.array() > 20).any())
      fail("o", "outlier path must lie on the grid {1..20}");
    if (!(o->p_o > 0 && o->p_o < 1))
      fail("p_o", "p_o must lie in (0, 1)");
  }
  if (auto *ft = std::get_if<FatTailState>(&s.vol.payload)) {
    if (ft->q2.size() != spec.T || !(ft->q2.array() > 0).all())
      fail("q2", "fat-tail scales must be positive");
    if (!(ft->dof > 0))
      fail("dof", "degrees of freedom must be positive");
  }
  for (int t = 0; t < spec.T && out.empty(); ++t)
    if (!(s.vol.omega(t) > 0) || !std::isfinite(s.vol.omega(t)))
      fail("omega", "omega_t must be positive at t=" + std::to_string(t));
  return out;
}

double kron_gaussian_logpdf(const Matrix &E, const Matrix &sigma_r,
                            const Matrix &sigma_c, double omega) {
  const auto n = E.rows();
  const auto k = E.cols();
  if (sigma_r.rows() != n || sigma_c.rows() != k)
    throw UsageError("kron_gaussian_logpdf: dimension mismatch");
  auto lr = checked_llt(sigma_r, "sigma_r");
  auto lc = checked_llt(sigma_c, "sigma_c");
  // ||L_r^{-1} E L_c^{-T}||_F^2 = vec(E)' (Sigma_c (x) Sigma_r)^{-1} vec(E)
  Matrix W = lr.matrixL().solve(E);
  Matrix Wt = lc.matrixL().solve(W.transpose());
  const double quad = Wt.squaredNorm() / omega;
  const double logdet = static_cast<double>(n * k) * std::log(omega) +
                        static_cast<double>(k) * log_det(lr) +
                        static_cast<double>(n) * log_det(lc);
  return -0.5 * (static_cast<double>(n * k) * std::log(2.0 * std::numbers::pi) +
                 logdet + quad);
}

} // namespace mdfm
