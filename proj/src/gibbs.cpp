#include "mdfm/gibbs.hpp"
#include "mdfm/errors.hpp"
#include "mdfm/vdfm.hpp"
#include "mdfm/volatility.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <sstream>

#ifndef MDFM_GIT_DESCRIBE
#define MDFM_GIT_DESCRIBE "unknown"
#endif

namespace mdfm {

std::string to_string(InitMode m) {
  switch (m) {
  case InitMode::prior_draw:
    return "prior-draw";
  case InitMode::vdfm_warm_start:
    return "vdfm-warm-start";
  case InitMode::user_supplied:
    return "user-supplied";
  case InitMode::spectral:
    return "spectral";
  }
  return "prior-draw";
}

InitMode init_mode_from_string(const std::string &s) {
  if (s == "prior-draw")
    return InitMode::prior_draw;
  if (s == "vdfm-warm-start")
    return InitMode::vdfm_warm_start;
  if (s == "user-supplied")
    return InitMode::user_supplied;
  if (s == "spectral")
    return InitMode::spectral;
  throw UsageError("unknown init mode '" + s + "'");
}

std::vector<Diagnostic> validate_config(const McmcConfig &c) {
  std::vector<Diagnostic> out;
  if (c.burn_in < 0)
    out.push_back({"burn_in", "burn_in must be >= 0"});
  if (c.draws < 1)
    out.push_back({"draws", "draws must be >= 1"});
  if (c.thin < 1)
    out.push_back({"thin", "thin must be >= 1"});
  if (c.init == InitMode::user_supplied && !c.user_init)
    out.push_back({"init", "user-supplied init requires an initial state"});
  if (c.init == InitMode::vdfm_warm_start && (c.warm_draws < 1 || c.warm_burn_in < 0))
    out.push_back({"warm_draws", "warm-start chain length must be positive"});
  return out;
}

Matrix kron(const Matrix &a, const Matrix &b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

void check_panel(const ModelSpec &spec, const Panel &Y) {
  if (static_cast<int>(Y.size()) != spec.T)
    throw DataError("panel has " + std::to_string(Y.size()) +
                    " periods, spec expects T = " + std::to_string(spec.T));
  for (std::size_t t = 0; t < Y.size(); ++t) {
    if (Y[t].rows() != spec.n || Y[t].cols() != spec.k)
      throw DataError("observation " + std::to_string(t) + " is " +
                      std::to_string(Y[t].rows()) + "x" + std::to_string(Y[t].cols()) +
                      ", expected " + std::to_string(spec.n) + "x" +
                      std::to_string(spec.k));
    if (!Y[t].allFinite())
      throw DataError("observation " + std::to_string(t) +
                      " contains missing or non-finite values");
  }
}

LinearConstraint identification_constraint(int p, int m) {
  const int r = p * (p + 1) / 2;
  LinearConstraint c;
  c.M = Matrix::Zero(r, static_cast<Eigen::Index>(p) * m);
  c.a0 = Vector::Zero(r);
  int row = 0;
  for (int i = 0; i < p; ++i)     // row of the loading matrix
    for (int j = i; j < p; ++j) { // column, on or above the diagonal
      c.M(row, j + static_cast<Eigen::Index>(i) * p) = 1.0;
      c.a0(row) = i == j ? 1.0 : 0.0;
      ++row;
    }
  return c;
}

// ---- scalar bookkeeping ----

namespace {

std::string idx2(const char *name, Eigen::Index i, Eigen::Index j) {
  return std::string(name) + "[" + std::to_string(i + 1) + "," + std::to_string(j + 1) +
         "]";
}

template <class Fn> void for_each_free_loading(int rows, int p, Fn fn) {
  for (auto [i, j] : free_loading_entries(rows, p))
    fn(i, j);
}

template <class Fn>
void for_each_cov_entry(Eigen::Index d, bool diagonal, bool skip_first, Fn fn) {
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = j; i < d; ++i) {
      if (diagonal && i != j)
        continue;
      if (skip_first && i == 0 && j == 0)
        continue;
      fn(i, j);
    }
}

} // namespace

std::vector<std::string> scalar_parameter_names(const ModelSpec &spec) {
  std::vector<std::string> names;
  const bool diag = spec.idio == Idio::exact_diagonal;
  for_each_free_loading(spec.n, spec.p1,
                        [&](auto i, auto j) { names.push_back(idx2("A", i, j)); });
  for_each_free_loading(spec.k, spec.p2,
                        [&](auto i, auto j) { names.push_back(idx2("B", i, j)); });
  for_each_cov_entry(spec.n, diag, false,
                     [&](auto i, auto j) { names.push_back(idx2("sigma_r", i, j)); });
  for_each_cov_entry(spec.k, diag, true,
                     [&](auto i, auto j) { names.push_back(idx2("sigma_c", i, j)); });
  const int p = spec.factor_count();
  for (int j = 0; j < p; ++j)
    for (int m = 0; m < spec.q; ++m)
      names.push_back(idx2("rho", j, m));
  if (spec.identification == Identification::unit_loadings)
    for (int j = 0; j < p; ++j)
      names.push_back("lambda2[" + std::to_string(j + 1) + "]");
  if (spec.volatility == Volatility::common_sv) {
    names.push_back("phi");
    names.push_back("sigma_h2");
  } else if (spec.volatility == Volatility::outlier) {
    names.push_back("p_o");
  }
  return names;
}

Vector scalar_parameters(const ModelSpec &spec, const ParameterState &s) {
  std::vector<double> v;
  const bool diag = spec.idio == Idio::exact_diagonal;
  for_each_free_loading(spec.n, spec.p1,
                        [&](auto i, auto j) { v.push_back(s.loadings.A(i, j)); });
  for_each_free_loading(spec.k, spec.p2,
                        [&](auto i, auto j) { v.push_back(s.loadings.B(i, j)); });
  for_each_cov_entry(spec.n, diag, false,
                     [&](auto i, auto j) { v.push_back(s.cov.sigma_r(i, j)); });
  for_each_cov_entry(spec.k, diag, true,
                     [&](auto i, auto j) { v.push_back(s.cov.sigma_c(i, j)); });
  const int p = spec.factor_count();
  for (int j = 0; j < p; ++j)
    for (int m = 0; m < spec.q; ++m)
      v.push_back(s.dynamics.rho(j, m));
  if (spec.identification == Identification::unit_loadings)
    for (int j = 0; j < p; ++j)
      v.push_back(s.dynamics.lambda2(j));
  if (auto *sv = std::get_if<CommonSv>(&s.vol.payload)) {
    v.push_back(sv->phi);
    v.push_back(sv->sigma_h2);
  } else if (auto *o = std::get_if<OutlierState>(&s.vol.payload)) {
    v.push_back(o->p_o);
  }
  return Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

namespace {

// Bartlett-kernel long-run variance with bandwidth sqrt(n).
double long_run_variance(const Eigen::Ref<const Vector> &x) {
  const auto n = x.size();
  const double mean = x.mean();
  const Vector d = x.array() - mean;
  const auto L = static_cast<Eigen::Index>(std::floor(std::sqrt(static_cast<double>(n))));
  double s = d.squaredNorm() / n;
  for (Eigen::Index l = 1; l <= L && l < n; ++l) {
    const double g = d.head(n - l).dot(d.tail(n - l)) / n;
    s += 2.0 * (1.0 - static_cast<double>(l) / (L + 1)) * g;
  }
  return std::max(s, 0.0);
}

} // namespace

double geweke_z(const Eigen::Ref<const Vector> &chain) {
  const auto n = chain.size();
  const auto na = std::max<Eigen::Index>(2, n / 10);
  const auto nb = std::max<Eigen::Index>(2, n / 2);
  if (n < 20)
    return std::numeric_limits<double>::quiet_NaN();
  const auto a = chain.head(na);
  const auto b = chain.tail(nb);
  const double va = long_run_variance(a) / na;
  const double vb = long_run_variance(b) / nb;
  const double diff = a.mean() - b.mean();
  if (!(va + vb > 0))
    return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return diff / std::sqrt(va + vb);
}

// ---- step 1 / step 2 ----

namespace {

LoadingsPosterior conjugate_update(const Matrix &V, const Matrix &M0, double nu0,
                                   const Matrix &S0, const Matrix &H, const Matrix &G,
                                   double nu_add, bool full_scale) {
  // H: p x N stacked whitened regressors, G: m x N stacked whitened responses.
  LoadingsPosterior post;
  const Matrix Vinv = spd_inverse(V, "loading prior covariance");
  post.K = symmetrize(Vinv + H * H.transpose());
  const Matrix rhs = Vinv * M0.transpose() + H * G.transpose();
  auto llt = checked_llt(post.K, "loading posterior precision");
  post.mean = llt.solve(rhs);
  post.nu = nu0 + nu_add;
  const Matrix prior_part = M0 * Vinv * M0.transpose();
  if (full_scale) {
    post.S = symmetrize(S0 + prior_part + G * G.transpose() - rhs.transpose() * post.mean);
  } else {
    const auto m = G.rows();
    Vector d = S0.diagonal() + prior_part.diagonal() + G.rowwise().squaredNorm();
    const Matrix L_inv_rhs = llt.matrixL().solve(rhs);
    d -= L_inv_rhs.colwise().squaredNorm().transpose();
    post.S = Matrix::Zero(m, m);
    post.S.diagonal() = d;
  }
  return post;
}

Vector omegas_of(const ParameterState &s, int T) { return s.vol.omegas(T); }

} // namespace

LoadingsPosterior loadings_row_posterior(const ModelSpec &spec, const PriorConfig &prior,
                                         const Panel &Y, const FactorPath &f,
                                         const ParameterState &state) {
  const int T = static_cast<int>(Y.size());
  const auto n = spec.n, k = spec.k, p1 = spec.p1, p2 = spec.p2;
  CovFactor wc(state.cov.sigma_c, "sigma_c");
  const Vector w = omegas_of(state, T);
  const Matrix BtLc = wc.right(state.loadings.B.transpose()); // p2 x k
  Matrix H(p1, static_cast<Eigen::Index>(T) * k);
  Matrix G(n, static_cast<Eigen::Index>(T) * k);
  for (int t = 0; t < T; ++t) {
    const double sw = 1.0 / std::sqrt(w(t));
    Matrix F = unvec(f.row(t).transpose(), p1, p2);
    H.middleCols(static_cast<Eigen::Index>(t) * k, k) = sw * F * BtLc;
    G.middleCols(static_cast<Eigen::Index>(t) * k, k) = sw * wc.right(Y[t]);
  }
  return conjugate_update(prior.V_A, prior.A0, prior.nu_r, prior.S_r, H, G,
                          static_cast<double>(T) * k,
                          spec.idio == Idio::kronecker_cross);
}

LoadingsPosterior loadings_col_posterior(const ModelSpec &spec, const PriorConfig &prior,
                                         const Panel &Y, const FactorPath &f,
                                         const ParameterState &state) {
  const int T = static_cast<int>(Y.size());
  const auto n = spec.n, k = spec.k, p1 = spec.p1, p2 = spec.p2;
  CovFactor wr(state.cov.sigma_r, "sigma_r");
  const Vector w = omegas_of(state, T);
  const Matrix AtLr = wr.right(state.loadings.A.transpose()); // p1 x n
  Matrix H(p2, static_cast<Eigen::Index>(T) * n);
  Matrix G(k, static_cast<Eigen::Index>(T) * n);
  for (int t = 0; t < T; ++t) {
    const double sw = 1.0 / std::sqrt(w(t));
    Matrix F = unvec(f.row(t).transpose(), p1, p2);
    H.middleCols(static_cast<Eigen::Index>(t) * n, n) = sw * F.transpose() * AtLr;
    G.middleCols(static_cast<Eigen::Index>(t) * n, n) = sw * wr.right(Y[t].transpose());
  }
  return conjugate_update(prior.V_B, prior.B0, prior.nu_c, prior.S_c, H, G,
                          static_cast<double>(T) * n,
                          spec.idio == Idio::kronecker_cross);
}

void step_loadings_row(const ModelSpec &spec, const PriorConfig &prior, const Panel &Y,
                       const FactorPath &f, ParameterState &state, Rng &rng) {
  auto post = loadings_row_posterior(spec, prior, Y, f, state);
  if (spec.idio == Idio::kronecker_cross) {
    state.cov.sigma_r = sample_inverse_wishart(post.nu, post.S, rng);
  } else {
    const double shape = 0.5 * (post.nu - spec.n + 1.0);
    Matrix s = Matrix::Zero(spec.n, spec.n);
    for (int i = 0; i < spec.n; ++i)
      s(i, i) = sample_inverse_gamma(shape, 0.5 * post.S(i, i), rng);
    state.cov.sigma_r = s;
  }
  auto llt = checked_llt(post.K, "K_A");
  Matrix At = sample_constrained_gaussian(post.mean, llt, state.cov.sigma_r,
                                          identification_constraint(spec.p1, spec.n), rng);
  state.loadings.A = At.transpose();
}

void step_loadings_col(const ModelSpec &spec, const PriorConfig &prior, const Panel &Y,
                       const FactorPath &f, ParameterState &state, Rng &rng) {
  auto post = loadings_col_posterior(spec, prior, Y, f, state);
  if (spec.idio == Idio::kronecker_cross) {
    state.cov.sigma_c = sample_restricted_inverse_wishart(post.nu, post.S, rng);
  } else {
    const double shape = 0.5 * (post.nu - spec.k + 1.0);
    Matrix s = Matrix::Zero(spec.k, spec.k);
    s(0, 0) = 1.0;
    for (int j = 1; j < spec.k; ++j)
      s(j, j) = sample_inverse_gamma(shape, 0.5 * post.S(j, j), rng);
    state.cov.sigma_c = s;
  }
  auto llt = checked_llt(post.K, "K_B");
  Matrix Bt = sample_constrained_gaussian(post.mean, llt, state.cov.sigma_c,
                                          identification_constraint(spec.p2, spec.k), rng);
  state.loadings.B = Bt.transpose();
}

// ---- step 3 ----

BandedSpd factor_prior_precision(const ModelSpec &spec, const FactorDynamics &dyn,
                                 int T) {
  const int p = spec.factor_count();
  const int q = spec.q;
  BandedSpd P(static_cast<Eigen::Index>(T) * p, static_cast<Eigen::Index>(p) * q);
  std::vector<double> c(q + 1);
  for (int j = 0; j < p; ++j) {
    const double l2 = dyn.lambda2(j);
    const double s = dyn.rho.row(j).squaredNorm();
    c[0] = 1.0;
    for (int m = 1; m <= q; ++m)
      c[m] = -dyn.rho(j, m - 1);
    for (int t = 0; t < T; ++t) {
      if (t < q) {
        P.add(static_cast<Eigen::Index>(t) * p + j, static_cast<Eigen::Index>(t) * p + j,
              (1.0 - s) / l2);
        continue;
      }
      for (int a = 0; a <= q; ++a)
        for (int b = 0; b <= a; ++b) {
          const double v = c[a] * c[b] / l2;
          const Eigen::Index ia = static_cast<Eigen::Index>(t - a) * p + j;
          const Eigen::Index ib = static_cast<Eigen::Index>(t - b) * p + j;
          P.add(ia, ib, v);
        }
    }
  }
  return P;
}

namespace {

struct ObservationBlocks {
  Matrix Ob;       // B' Sigma_c^{-1} B (x) A' Sigma_r^{-1} A
  Matrix Ar;       // Sigma_r^{-1} A
  Matrix Bc;       // Sigma_c^{-1} B
};

ObservationBlocks observation_blocks(const ParameterState &s) {
  CovFactor wr(s.cov.sigma_r, "sigma_r");
  CovFactor wc(s.cov.sigma_c, "sigma_c");
  ObservationBlocks o;
  o.Ar = wr.inverse * s.loadings.A;
  o.Bc = wc.inverse * s.loadings.B;
  const Matrix AtA = symmetrize(s.loadings.A.transpose() * o.Ar);
  const Matrix BtB = symmetrize(s.loadings.B.transpose() * o.Bc);
  o.Ob = kron(BtB, AtA);
  return o;
}

} // namespace

FactorSystem factor_system(const ModelSpec &spec, const Panel &Y,
                           const ParameterState &state) {
  const int T = static_cast<int>(Y.size());
  const int p = spec.factor_count();
  FactorSystem sys{factor_prior_precision(spec, state.dynamics, T),
                   Vector::Zero(static_cast<Eigen::Index>(T) * p)};
  const auto ob = observation_blocks(state);
  const Vector w = state.vol.omegas(T);
  for (int t = 0; t < T; ++t) {
    const double iw = 1.0 / w(t);
    const Eigen::Index base = static_cast<Eigen::Index>(t) * p;
    for (int a = 0; a < p; ++a)
      for (int b = 0; b <= a; ++b)
        sys.precision.add(base + a, base + b, iw * ob.Ob(a, b));
    Matrix G = ob.Ar.transpose() * Y[t] * ob.Bc;
    sys.linear.segment(base, p) = iw * vec(G);
  }
  return sys;
}

FactorPath step_factors(const ModelSpec &spec, const Panel &Y,
                        const ParameterState &state, Rng &rng, FactorSampler sampler) {
  const int T = static_cast<int>(Y.size());
  const int p = spec.factor_count();
  FactorPath f(T, p);
  if (sampler == FactorSampler::joint) {
    auto sys = factor_system(spec, Y, state);
    sys.precision.factorize("factor path precision");
    const Vector mean = sys.precision.solve(sys.linear);
    const Vector draw =
        mean + sys.precision.solve_upper(rng.normal_vector(static_cast<Eigen::Index>(T) * p));
    for (int t = 0; t < T; ++t)
      f.row(t) = draw.segment(static_cast<Eigen::Index>(t) * p, p).transpose();
    return f;
  }
  // Single-move forward recursion conditioning only on the past.
  const auto ob = observation_blocks(state);
  const Vector w = state.vol.omegas(T);
  const auto &dyn = state.dynamics;
  for (int t = 0; t < T; ++t) {
    Vector prior_mean = Vector::Zero(p);
    Vector prior_prec(p);
    for (int j = 0; j < p; ++j) {
      if (t < spec.q) {
        prior_prec(j) = (1.0 - dyn.rho.row(j).squaredNorm()) / dyn.lambda2(j);
      } else {
        prior_prec(j) = 1.0 / dyn.lambda2(j);
        for (int m = 1; m <= spec.q; ++m)
          prior_mean(j) += dyn.rho(j, m - 1) * f(t - m, j);
      }
    }
    Matrix K = ob.Ob / w(t);
    K.diagonal() += prior_prec;
    Matrix G = ob.Ar.transpose() * Y[t] * ob.Bc;
    Vector rhs = vec(G) / w(t) + prior_prec.cwiseProduct(prior_mean);
    auto llt = checked_llt(K, "per-period factor precision");
    Vector mean = llt.solve(rhs);
    Vector z = rng.normal_vector(p);
    f.row(t) = (mean + llt.matrixU().solve(z)).transpose();
  }
  return f;
}

// ---- step 4 / step 5 ----

std::pair<Vector, Vector> lambda_posterior(const ModelSpec &spec,
                                           const PriorConfig &prior,
                                           const FactorPath &f, const Matrix &rho) {
  const int p = spec.factor_count();
  const int q = spec.q;
  const auto T = f.rows();
  Vector shape = prior.nu_lambda.array() + 0.5 * static_cast<double>(T);
  Vector scale = prior.S_lambda;
  for (int j = 0; j < p; ++j) {
    const double s = rho.row(j).squaredNorm();
    double ss = 0;
    for (Eigen::Index t = 0; t < T; ++t) {
      if (t < q) {
        ss += f(t, j) * f(t, j) * (1.0 - s);
      } else {
        double r = f(t, j);
        for (int m = 1; m <= q; ++m)
          r -= rho(j, m - 1) * f(t - m, j);
        ss += r * r;
      }
    }
    scale(j) += 0.5 * ss;
  }
  return {shape, scale};
}

void step_lambda(const ModelSpec &spec, const PriorConfig &prior, const FactorPath &f,
                 ParameterState &state, Rng &rng) {
  const int p = spec.factor_count();
  if (spec.identification == Identification::unit_factor_variance) {
    state.dynamics.lambda2 = Vector::Ones(p);
    return;
  }
  auto [shape, scale] = lambda_posterior(spec, prior, f, state.dynamics.rho);
  for (int j = 0; j < p; ++j)
    state.dynamics.lambda2(j) = sample_inverse_gamma(shape(j), scale(j), rng);
}

double rho_log_acceptance(const FactorPath &f, int j, double lambda2, const Vector &rho,
                          const Vector &rho_star, int q) {
  auto init = [&](const Vector &r) {
    const double v = lambda2 / (1.0 - r.squaredNorm());
    double s = 0;
    for (int t = 0; t < q && t < f.rows(); ++t)
      s += normal_logpdf(f(t, j), 0.0, v);
    return s;
  };
  return init(rho_star) - init(rho);
}

int step_rho(const ModelSpec &spec, const PriorConfig &prior, const FactorPath &f,
             ParameterState &state, Rng &rng) {
  const int p = spec.factor_count();
  const int q = spec.q;
  const auto T = f.rows();
  int accepted = 0;
  for (int j = 0; j < p; ++j) {
    const double l2 = state.dynamics.lambda2(j);
    Matrix XtX = Matrix::Zero(q, q);
    Vector Xty = Vector::Zero(q);
    Vector x(q);
    for (Eigen::Index t = q; t < T; ++t) {
      for (int m = 1; m <= q; ++m)
        x(m - 1) = f(t - m, j);
      XtX += x * x.transpose();
      Xty += x * f(t, j);
    }
    Matrix K = XtX / l2;
    Vector rhs = Xty / l2;
    for (int m = 0; m < q; ++m) {
      K(m, m) += 1.0 / prior.V_rho(j, m);
      rhs(m) += prior.rho0(j, m) / prior.V_rho(j, m);
    }
    auto llt = checked_llt(K, "K_rho");
    const Vector mean = llt.solve(rhs);
    const Vector cand = mean + llt.matrixU().solve(rng.normal_vector(q));
    const Vector cur = state.dynamics.rho.row(j).transpose();
    const double u = rng.uniform();
    if (!is_stationary(cand))
      continue;
    if (std::log(u) < rho_log_acceptance(f, j, l2, cur, cand, q)) {
      state.dynamics.rho.row(j) = cand.transpose();
      ++accepted;
    }
  }
  return accepted;
}

// ---- initialization ----

namespace {

Matrix prior_mean_cov(double nu, const Matrix &S, bool diagonal) {
  const auto d = S.rows();
  Matrix m = nu > d + 1 ? Matrix(S / (nu - d - 1.0)) : S;
  if (diagonal)
    m = Matrix(m.diagonal().asDiagonal());
  return m;
}

ParameterState prior_draw_state(const ModelSpec &spec, const PriorConfig &prior,
                                Rng &rng) {
  const bool diag = spec.idio == Idio::exact_diagonal;
  const int p = spec.factor_count();
  ParameterState s;
  s.loadings = enforce_identification(0.1 * rng.normal_matrix(spec.n, spec.p1),
                                      0.1 * rng.normal_matrix(spec.k, spec.p2));
  s.cov.sigma_r = prior_mean_cov(prior.nu_r, prior.S_r, diag);
  Matrix sc = prior_mean_cov(prior.nu_c, prior.S_c, diag);
  s.cov.sigma_c = sc / sc(0, 0);
  s.cov.sigma_c(0, 0) = 1.0;
  s.dynamics.rho = prior.rho0;
  for (int j = 0; j < p; ++j)
    if (!is_stationary(s.dynamics.rho.row(j).transpose()))
      s.dynamics.rho.row(j).setZero();
  s.dynamics.lambda2.resize(p);
  for (int j = 0; j < p; ++j)
    s.dynamics.lambda2(j) = prior.nu_lambda(j) > 1
                                ? prior.S_lambda(j) / (prior.nu_lambda(j) - 1.0)
                                : prior.S_lambda(j);
  if (spec.identification == Identification::unit_factor_variance)
    s.dynamics.lambda2.setOnes();
  s.vol = initial_volatility(spec, prior);
  return s;
}

Matrix top_eigenvectors(const Matrix &M, int r) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(M));
  const auto d = M.rows();
  Matrix out(d, r);
  for (int i = 0; i < r; ++i)
    out.col(i) = es.eigenvectors().col(d - 1 - i);
  return out;
}

bool spectral_start(const ModelSpec &spec, const Panel &Y, ParameterState &s,
                    FactorPath &f) {
  const int T = static_cast<int>(Y.size());
  if (T < 2)
    return false;
  const int p1 = spec.p1, p2 = spec.p2, p = spec.factor_count();
  Matrix Mr = Matrix::Zero(spec.n, spec.n);
  Matrix Mc = Matrix::Zero(spec.k, spec.k);
  for (const auto &y : Y) {
    Mr.noalias() += y * y.transpose();
    Mc.noalias() += y.transpose() * y;
  }
  const Matrix A0 = top_eigenvectors(Mr, p1);
  const Matrix B0 = top_eigenvectors(Mc, p2);
  const Matrix Ta = A0.topRows(p1);
  const Matrix Tb = B0.topRows(p2);
  Eigen::FullPivLU<Matrix> la(Ta), lb(Tb);
  if (!la.isInvertible() || !lb.isInvertible())
    return false;
  const double ca = 1.0 / la.rcond(), cb = 1.0 / lb.rcond();
  if (!(ca < 1e6) || !(cb < 1e6))
    return false;
  Matrix A = A0 * la.inverse();
  Matrix B = B0 * lb.inverse();
  f.resize(T, p);
  Vector rms = Vector::Zero(spec.n), cms = Vector::Zero(spec.k);
  for (int t = 0; t < T; ++t) {
    Matrix F0 = A0.transpose() * Y[t] * B0;
    Matrix F = Ta * F0 * Tb.transpose();
    f.row(t) = vec(F).transpose();
    Matrix E = Y[t] - A * F * B.transpose();
    rms += E.cwiseAbs2().rowwise().sum();
    cms += E.cwiseAbs2().colwise().sum().transpose();
  }
  rms /= static_cast<double>(T) * spec.k;
  cms /= static_cast<double>(T) * spec.n;
  const double ms = rms.mean();
  if (!(ms > 0) || !(cms(0) > 0))
    return false;
  s.loadings = enforce_identification(A, B);
  Vector cd = cms / cms(0);
  Vector rd = rms * cms(0) / ms;
  rd = rd.cwiseMax(1e-6 * ms);
  cd = cd.cwiseMax(1e-6);
  cd(0) = 1.0;
  s.cov.sigma_r = rd.asDiagonal();
  s.cov.sigma_c = cd.asDiagonal();
  s.dynamics.rho.setZero(p, spec.q);
  s.dynamics.lambda2.resize(p);
  for (int j = 0; j < p; ++j) {
    const Vector x = f.col(j);
    const double sxx = x.head(T - 1).squaredNorm();
    double r = sxx > 0 ? x.tail(T - 1).dot(x.head(T - 1)) / sxx : 0.0;
    r = std::clamp(r, -0.95, 0.95);
    s.dynamics.rho(j, 0) = r;
    const Vector e = x.tail(T - 1) - r * x.head(T - 1);
    s.dynamics.lambda2(j) = std::max(e.squaredNorm() / (T - 1), 1e-6);
  }
  if (spec.identification == Identification::unit_factor_variance)
    s.dynamics.lambda2.setOnes();
  return f.allFinite();
}

} // namespace

ChainStart initial_state(const ModelSpec &spec, const PriorConfig &prior,
                         const McmcConfig &config, const Panel &Y, Rng &rng) {
  ChainStart out;
  const int T = static_cast<int>(Y.size());
  const int p = spec.factor_count();
  switch (config.init) {
  case InitMode::user_supplied:
    out.state = *config.user_init;
    out.f = config.user_factors ? *config.user_factors : FactorPath::Zero(T, p);
    break;
  case InitMode::spectral:
    out.state = prior_draw_state(spec, prior, rng);
    if (!spectral_start(spec, Y, out.state, out.f)) {
      out.state = prior_draw_state(spec, prior, rng);
      out.f = FactorPath::Zero(T, p);
    }
    break;
  case InitMode::vdfm_warm_start: {
    out.state = prior_draw_state(spec, prior, rng);
    VdfmSpec vs{spec.n * spec.k, p, spec.T, spec.q, Volatility::none};
    McmcConfig wc;
    wc.burn_in = config.warm_burn_in;
    wc.draws = config.warm_draws;
    wc.seed = config.seed ^ 0x9e3779b97f4a7c15ULL;
    wc.init = InitMode::spectral;
    wc.validate_draws = false;
    const ModelSpec ms = to_model_spec(vs);
    auto store = vdfm_run_chain(vs, default_prior(ms), wc, vectorize_panel(Y));
    out.f = store.factor_mean;
    break;
  }
  case InitMode::prior_draw:
  default:
    out.state = prior_draw_state(spec, prior, rng);
    out.f = FactorPath::Zero(T, p);
    break;
  }
  if (out.state.vol.variant() != spec.volatility)
    out.state.vol = initial_volatility(spec, prior);
  return out;
}

// ---- chain ----

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string join_diagnostics(const std::vector<Diagnostic> &d) {
  std::ostringstream os;
  for (std::size_t i = 0; i < d.size(); ++i)
    os << (i ? "; " : "") << d[i].field << ": " << d[i].message;
  return os.str();
}

} // namespace

PosteriorStore run_chain(const ModelSpec &spec, const PriorConfig &prior,
                         const McmcConfig &config, const Panel &Y) {
  if (auto d = validate_spec(spec, prior); !d.empty())
    throw UsageError("invalid model: " + join_diagnostics(d));
  if (auto d = validate_config(config); !d.empty())
    throw UsageError("invalid MCMC config: " + join_diagnostics(d));
  check_panel(spec, Y);

  PosteriorStore store;
  store.spec = spec;
  store.prior = prior;
  store.config = config;
  store.config.user_init.reset();
  store.config.user_factors.reset();
  store.git_describe = MDFM_GIT_DESCRIBE;
  store.scalar_names = scalar_parameter_names(spec);

  Rng rng(config.seed);
  auto start = initial_state(spec, prior, config, Y, rng);
  ParameterState state = std::move(start.state);
  FactorPath f = std::move(start.f);
  if (auto d = check_state(spec, state); !d.empty())
    throw UsageError("invalid initial state: " + join_diagnostics(d));

  const int p = spec.factor_count();
  const int total = config.burn_in + config.draws * config.thin;
  store.draws.reserve(config.draws);
  Matrix fsum = Matrix::Zero(spec.T, p), fsq = Matrix::Zero(spec.T, p);
  VolatilityWorkspace ws;
  const char *step = "";
  int iter = 0;
  try {
    for (iter = 0; iter < total; ++iter) {
      auto t0 = Clock::now();
      step = "loadings_row";
      step_loadings_row(spec, prior, Y, f, state, rng);
      store.timings.loadings_row += seconds_since(t0);
      t0 = Clock::now();
      step = "loadings_col";
      step_loadings_col(spec, prior, Y, f, state, rng);
      store.timings.loadings_col += seconds_since(t0);
      t0 = Clock::now();
      step = "factors";
      f = step_factors(spec, Y, state, rng, config.factor_sampler);
      store.timings.factors += seconds_since(t0);
      t0 = Clock::now();
      step = "lambda";
      step_lambda(spec, prior, f, state, rng);
      store.timings.lambda += seconds_since(t0);
      t0 = Clock::now();
      step = "rho";
      store.stats.rho_accepted += step_rho(spec, prior, f, state, rng);
      store.stats.rho_proposed += p;
      store.timings.rho += seconds_since(t0);
      t0 = Clock::now();
      step = "volatility";
      step_volatility(spec, prior, Y, f, state, ws, rng);
      if (ws.last.proposed) {
        ++store.stats.sv_proposed;
        store.stats.sv_accepted += ws.last.accepted;
        store.stats.sv_fallbacks += ws.last.fallback;
        ++store.stats.phi_proposed;
        store.stats.phi_accepted += ws.last.phi_accepted;
        ws.last = {};
      }
      store.timings.volatility += seconds_since(t0);

      if (iter >= config.burn_in && (iter - config.burn_in + 1) % config.thin == 0) {
        step = "store";
        if (config.validate_draws)
          if (auto d = check_state(spec, state); !d.empty())
            throw NumericalError("retained draw violates invariants: " +
                                 join_diagnostics(d));
        store.draws.push_back(state);
        fsum += f;
        fsq += f.cwiseAbs2();
        if (config.store_factor_paths)
          store.factor_paths.push_back(f);
      }
    }
  } catch (const Error &e) {
    throw Error(e.kind(), "iteration " + std::to_string(iter) + ", step " + step +
                              ": " + e.what());
  }
  const double m = static_cast<double>(store.draws.size());
  store.factor_mean = fsum / m;
  store.factor_sd = (fsq / m - store.factor_mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();

  const auto ns = static_cast<Eigen::Index>(store.scalar_names.size());
  Matrix trace(static_cast<Eigen::Index>(store.draws.size()), ns);
  for (std::size_t i = 0; i < store.draws.size(); ++i)
    trace.row(static_cast<Eigen::Index>(i)) = scalar_parameters(spec, store.draws[i]).transpose();
  store.geweke_z.resize(ns);
  for (Eigen::Index j = 0; j < ns; ++j)
    store.geweke_z[j] = geweke_z(trace.col(j));
  return store;
}

} // namespace mdfm
