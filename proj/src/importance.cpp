#include "mdfm/importance.hpp"

#include "mdfm/errors.hpp"
#include "mdfm/volatility.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>

namespace mdfm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double log_sum_exp(const std::vector<double> &x) {
  double m = kNegInf;
  for (double v : x)
    m = std::max(m, v);
  if (!std::isfinite(m))
    return m;
  double s = 0;
  for (double v : x)
    s += std::exp(v - m);
  return m + std::log(s);
}

bool exact(const ModelSpec &spec) { return spec.idio == Idio::exact_diagonal; }
bool has_lambda(const ModelSpec &spec) {
  return spec.identification == Identification::unit_loadings;
}

} // namespace

// ---- likelihood ----

double integrated_loglik(const ModelSpec &spec, const Panel &Y,
                         const ParameterState &state) {
  check_panel(spec, Y);
  const int T = static_cast<int>(Y.size());
  const int p = spec.factor_count();
  const int q = spec.q;
  const int d = p * q;
  const auto &rho = state.dynamics.rho;
  const auto &l2 = state.dynamics.lambda2;
  for (int j = 0; j < p; ++j)
    if (!is_stationary(rho.row(j).transpose()))
      throw NumericalError("integrated likelihood: rho of factor " + std::to_string(j) +
                           " is not stationary");

  // GLS collapse: vec(Y_t) = H f_t + e_t reduces to y*_t = f_t + u_t with
  // u_t ~ N(0, omega_t W^{-1}), W = H' Omega^{-1} H, plus a constant c_t.
  CovFactor wr(state.cov.sigma_r, "sigma_r");
  CovFactor wc(state.cov.sigma_c, "sigma_c");
  const Matrix &A = state.loadings.A, &B = state.loadings.B;
  const Matrix Ar = wr.inverse * A, Bc = wc.inverse * B;
  const Matrix Ga = symmetrize(A.transpose() * Ar), Gb = symmetrize(B.transpose() * Bc);
  auto la = checked_llt(Ga, "A' Sigma_r^-1 A");
  auto lb = checked_llt(Gb, "B' Sigma_c^-1 B");
  const Matrix Ga_inv = la.solve(Matrix::Identity(spec.p1, spec.p1));
  const Matrix Gb_inv = lb.solve(Matrix::Identity(spec.p2, spec.p2));
  const Matrix W_inv = kron(Gb_inv, Ga_inv);
  const double logdet_W = spec.p2 * log_det(la) + spec.p1 * log_det(lb);
  const double logdet_Omega = spec.n * wc.logdet + spec.k * wr.logdet;
  const double nk = static_cast<double>(spec.n) * spec.k;
  const Vector w = state.vol.omegas(T);

  Vector v0(p);
  for (int j = 0; j < p; ++j)
    v0(j) = l2(j) / (1.0 - rho.row(j).squaredNorm());

  // Companion state (f_t, f_{t-1}, ..., f_{t-q+1}); f_0..f_{q-1} are drawn
  // independently from the initial law, later values follow the AR.
  Vector a = Vector::Zero(d);
  Matrix P = Matrix::Zero(d, d);
  double ll = 0;
  for (int t = 0; t < T; ++t) {
    const bool init = t < q;
    Vector an = Vector::Zero(d);
    Matrix Fa = Matrix::Zero(d, d); // F P
    if (d > p) {
      an.tail(d - p) = a.head(d - p);
      Fa.bottomRows(d - p) = P.topRows(d - p);
    }
    if (!init)
      for (int m = 0; m < q; ++m)
        for (int j = 0; j < p; ++j) {
          an(j) += rho(j, m) * a(m * p + j);
          Fa.row(j) += rho(j, m) * P.row(m * p + j);
        }
    Matrix Pn = Matrix::Zero(d, d);
    if (d > p)
      Pn.rightCols(d - p) = Fa.leftCols(d - p);
    if (!init)
      for (int m = 0; m < q; ++m)
        for (int j = 0; j < p; ++j)
          Pn.col(j) += rho(j, m) * Fa.col(m * p + j);
    for (int j = 0; j < p; ++j)
      Pn(j, j) += init ? v0(j) : l2(j);
    P = symmetrize(Pn);
    a = an;

    const Matrix Ystar = Ga_inv * (Ar.transpose() * Y[t] * Bc) * Gb_inv;
    const Matrix E = Y[t] - A * Ystar * B.transpose();
    const double Q = wc.right(wr.right(E.transpose()).transpose()).squaredNorm();
    ll += -0.5 * ((nk - p) * std::log(2.0 * std::numbers::pi * w(t)) + logdet_Omega +
                  logdet_W + Q / w(t));

    const Vector v = vec(Ystar) - a.head(p);
    auto ls = checked_llt(symmetrize(P.topLeftCorner(p, p) + w(t) * W_inv),
                          "innovation covariance");
    const Vector Siv = ls.solve(v);
    ll += -0.5 * (p * kLog2Pi + log_det(ls) + v.dot(Siv));
    const Matrix PZ = P.leftCols(p);
    a += PZ * Siv;
    P = symmetrize(P - PZ * ls.solve(PZ.transpose()));
  }
  return ll;
}

double integrated_loglik_banded(const ModelSpec &spec, const Panel &Y,
                                const ParameterState &state) {
  // log p(Y) = log p(Y | f) + log p(f) - log p(f | Y) at f = E[f | Y]; all
  // three pieces are Gaussian and the path precisions are banded.
  check_panel(spec, Y);
  const int T = static_cast<int>(Y.size());
  const int p = spec.factor_count();
  const int q = spec.q;
  auto sys = factor_system(spec, Y, state);
  sys.precision.factorize("posterior factor precision");
  const Vector mean = sys.precision.solve(sys.linear);
  const Vector w = state.vol.omegas(T);

  double ll = 0;
  for (int t = 0; t < T; ++t) {
    const Vector ft = mean.segment(static_cast<Eigen::Index>(t) * p, p);
    const Matrix E = Y[t] - common_component(state.loadings, ft);
    ll += kron_gaussian_logpdf(E, state.cov.sigma_r, state.cov.sigma_c, w(t));
  }

  double lp = 0;
  const auto &rho = state.dynamics.rho;
  for (int j = 0; j < p; ++j) {
    const double l2 = state.dynamics.lambda2(j);
    const double v0 = l2 / (1.0 - rho.row(j).squaredNorm());
    for (int t = 0; t < T; ++t) {
      const double x = mean(static_cast<Eigen::Index>(t) * p + j);
      if (t < q) {
        lp += normal_logpdf(x, 0.0, v0);
        continue;
      }
      double m = 0;
      for (int s = 1; s <= q; ++s)
        m += rho(j, s - 1) * mean(static_cast<Eigen::Index>(t - s) * p + j);
      lp += normal_logpdf(x, m, l2);
    }
  }

  const double lq =
      -0.5 * static_cast<double>(T) * p * kLog2Pi + 0.5 * sys.precision.log_det();
  return ll + lp - lq;
}

double period_marginal_loglik(const ModelSpec &spec, const Panel &Y,
                              const ParameterState &state) {
  check_panel(spec, Y);
  const int T = static_cast<int>(Y.size());
  const int p = spec.factor_count();
  const Matrix H = kron(state.loadings.B, state.loadings.A);
  Vector v(p);
  for (int j = 0; j < p; ++j)
    v(j) = state.dynamics.lambda2(j) / (1.0 - state.dynamics.rho.row(j).squaredNorm());
  const Matrix common = H * v.asDiagonal() * H.transpose();
  const Matrix idio = kron(state.cov.sigma_c, state.cov.sigma_r);
  const Vector w = state.vol.omegas(T);
  double ll = 0;
  for (int t = 0; t < T; ++t) {
    auto llt = checked_llt(symmetrize(w(t) * idio + common), "period covariance");
    ll += mvn_logpdf(vec(Y[t]), Vector::Zero(vec(Y[t]).size()), llt);
  }
  return ll;
}

// ---- prior ----

double stationary_log_mass(const Vector &rho0, const Vector &v_rho) {
  const auto q = rho0.size();
  if (q == 1)
    return normal_log_mass(rho0(0), v_rho(0), -1.0, 1.0);
  static std::mutex mu;
  static std::map<std::vector<double>, double> memo;
  std::vector<double> key(rho0.data(), rho0.data() + q);
  key.insert(key.end(), v_rho.data(), v_rho.data() + q);
  std::lock_guard<std::mutex> lock(mu);
  if (auto it = memo.find(key); it != memo.end())
    return it->second;
  constexpr int kDraws = 200000;
  Rng rng(0x5eed);
  long hits = 0;
  Vector r(q);
  for (int i = 0; i < kDraws; ++i) {
    for (Eigen::Index m = 0; m < q; ++m)
      r(m) = rho0(m) + std::sqrt(v_rho(m)) * rng.normal();
    hits += is_stationary(r) ? 1 : 0;
  }
  const double lm = std::log((static_cast<double>(hits) + 0.5) / (kDraws + 1.0));
  memo.emplace(std::move(key), lm);
  return lm;
}

double conditional_loading_logpdf(const Matrix &L, const Matrix &M0, const Matrix &sigma,
                                  const Matrix &V) {
  // vec(X) ~ N(vec(M0'), Sigma (x) V) with X = L' (p x m); the density of
  // the free entries given the fixed ones is joint / marginal(fixed).
  const auto m = L.rows(), p = L.cols();
  const Matrix E = (L - M0).transpose();
  const double joint = kron_gaussian_logpdf(E, V, sigma);
  std::vector<std::pair<int, int>> fixed;
  for (int i = 0; i < std::min<Eigen::Index>(m, p); ++i)
    for (int j = i; j < p; ++j)
      fixed.emplace_back(i, j);
  if (fixed.empty())
    return joint;
  const auto r = static_cast<Eigen::Index>(fixed.size());
  Matrix C(r, r);
  Vector x(r);
  for (Eigen::Index a = 0; a < r; ++a) {
    const auto [ia, ja] = fixed[a];
    x(a) = L(ia, ja) - M0(ia, ja);
    for (Eigen::Index b = 0; b < r; ++b) {
      const auto [ib, jb] = fixed[b];
      C(a, b) = sigma(ia, ib) * V(ja, jb);
    }
  }
  return joint - mvn_logpdf(x, Vector::Zero(r), checked_llt(C, "fixed-loading covariance"));
}

double log_prior(const ModelSpec &spec, const PriorConfig &prior,
                 const ParameterState &state) {
  if (!check_state(spec, state).empty())
    return kNegInf;
  const auto &s = state;
  double lp = conditional_loading_logpdf(s.loadings.A, prior.A0, s.cov.sigma_r, prior.V_A) +
              conditional_loading_logpdf(s.loadings.B, prior.B0, s.cov.sigma_c, prior.V_B);
  if (exact(spec)) {
    const double ar = 0.5 * (prior.nu_r - spec.n + 1.0);
    for (int i = 0; i < spec.n; ++i)
      lp += inverse_gamma_logpdf(s.cov.sigma_r(i, i), ar, 0.5 * prior.S_r(i, i));
    const double ac = 0.5 * (prior.nu_c - spec.k + 1.0);
    for (int j = 1; j < spec.k; ++j)
      lp += inverse_gamma_logpdf(s.cov.sigma_c(j, j), ac, 0.5 * prior.S_c(j, j));
  } else {
    lp += inverse_wishart_logpdf(s.cov.sigma_r, prior.nu_r, prior.S_r);
    if (spec.k > 1)
      lp += restricted_inverse_wishart_logpdf(s.cov.sigma_c, prior.nu_c, prior.S_c);
  }
  const int p = spec.factor_count();
  for (int j = 0; j < p; ++j) {
    for (int m = 0; m < spec.q; ++m)
      lp += normal_logpdf(s.dynamics.rho(j, m), prior.rho0(j, m), prior.V_rho(j, m));
    lp -= stationary_log_mass(prior.rho0.row(j).transpose(),
                              prior.V_rho.row(j).transpose());
    if (has_lambda(spec))
      lp += inverse_gamma_logpdf(s.dynamics.lambda2(j), prior.nu_lambda(j),
                                 prior.S_lambda(j));
  }
  return lp + volatility_log_prior(spec, prior, s.vol);
}

// ---- importance density ----

namespace {

Matrix sample_cov_chol(const Matrix &C, double denom, std::string_view what) {
  Matrix S = symmetrize(C.transpose() * C / denom);
  const double floor = 1e-12 * std::max(1.0, S.diagonal().maxCoeff());
  S.diagonal().array() += floor;
  return checked_llt(S, what).matrixL();
}

// X: draws x dims; row_of[j] is the loading row of free entry j.
GaussianBlock fit_gaussian(const Matrix &X, const std::vector<int> &row_of, int max_full) {
  GaussianBlock g;
  const auto n = X.rows(), d = X.cols();
  g.mean = X.colwise().mean().transpose();
  if (d == 0)
    return g;
  const Matrix C = X.rowwise() - g.mean.transpose();
  const double denom = static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
  g.full = d <= max_full && n > 2 * d;
  if (g.full) {
    g.chol = sample_cov_chol(C, denom, "loading proposal covariance");
    return g;
  }
  std::map<int, std::vector<Eigen::Index>> by_row;
  for (Eigen::Index j = 0; j < d; ++j)
    by_row[row_of[static_cast<std::size_t>(j)]].push_back(j);
  for (auto &[row, idx] : by_row) {
    const auto m = static_cast<Eigen::Index>(idx.size());
    if (n > 2 * m) {
      g.groups.push_back(idx);
      g.group_chol.push_back(sample_cov_chol(C(Eigen::all, idx), denom, "loading proposal covariance"));
    } else {
      for (auto j : idx) {
        g.groups.push_back({j});
        g.group_chol.push_back(sample_cov_chol(C.col(j), denom, "loading proposal covariance"));
      }
    }
  }
  return g;
}

Vector draw_gaussian(const GaussianBlock &g, Rng &rng) {
  const auto d = g.mean.size();
  const Vector z = rng.normal_vector(d);
  if (g.full)
    return g.mean + g.chol * z;
  Vector x = g.mean;
  for (std::size_t b = 0; b < g.groups.size(); ++b) {
    const auto &idx = g.groups[b];
    x(idx) += g.group_chol[b] * z(idx);
  }
  return x;
}

double gaussian_logpdf(const GaussianBlock &g, const Vector &x) {
  const auto d = g.mean.size();
  if (d == 0)
    return 0.0;
  const Vector r = x - g.mean;
  if (g.full) {
    const Vector z = g.chol.triangularView<Eigen::Lower>().solve(r);
    return -0.5 * (d * kLog2Pi + z.squaredNorm()) -
           g.chol.diagonal().array().log().sum();
  }
  double lp = -0.5 * d * kLog2Pi;
  for (std::size_t b = 0; b < g.groups.size(); ++b) {
    const Matrix &L = g.group_chol[b];
    const Vector z = L.triangularView<Eigen::Lower>().solve(Vector(r(g.groups[b])));
    lp -= 0.5 * z.squaredNorm() + L.diagonal().array().log().sum();
  }
  return lp;
}

Vector free_values(const Matrix &L) {
  const auto idx = free_loading_entries(static_cast<int>(L.rows()), static_cast<int>(L.cols()));
  Vector v(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i)
    v(static_cast<Eigen::Index>(i)) = L(idx[i].first, idx[i].second);
  return v;
}

Matrix loadings_from_free(const Vector &v, int m, int p) {
  Matrix L = Matrix::Zero(m, p);
  for (int i = 0; i < std::min(m, p); ++i)
    L(i, i) = 1.0;
  const auto idx = free_loading_entries(m, p);
  for (std::size_t i = 0; i < idx.size(); ++i)
    L(idx[i].first, idx[i].second) = v(static_cast<Eigen::Index>(i));
  return L;
}

double sample_var(const std::vector<double> &x) {
  const double n = static_cast<double>(x.size());
  double m = 0;
  for (double v : x)
    m += v;
  m /= n;
  double s = 0;
  for (double v : x)
    s += (v - m) * (v - m);
  return s / std::max(n - 1.0, 1.0);
}

double sample_mean(const std::vector<double> &x) {
  double m = 0;
  for (double v : x)
    m += v;
  return m / static_cast<double>(x.size());
}

// IG by maximum likelihood; moments when the fit fails.
std::pair<double, double> fit_ig(const std::vector<double> &x, const std::string &what,
                                 std::vector<std::string> &warnings) {
  auto fit = mle_inverse_gamma(x);
  if (fit.converged && !fit.degenerate && fit.a > 0 && fit.b > 0)
    return {fit.a, fit.b};
  const double m = sample_mean(x);
  const double v = std::max(sample_var(x), 1e-12 * m * m);
  const double a = 2.0 + m * m / v;
  warnings.push_back(what + ": inverse-gamma fit fell back to moments");
  return {a, m * (a - 1.0)};
}

std::pair<double, double> fit_tn(const std::vector<double> &x, const std::string &what,
                                 std::vector<std::string> &warnings) {
  auto fit = mle_truncated_normal(x, -1.0, 1.0);
  if (fit.converged && !fit.degenerate && fit.b > 0)
    return {fit.a, fit.b};
  warnings.push_back(what + ": truncated-normal fit fell back to moments");
  return {sample_mean(x), std::max(sample_var(x), 1e-10)};
}

} // namespace

ImportanceDensity fit_importance_density(const PosteriorStore &store,
                                         const IsConfig &config) {
  const auto &spec = store.spec;
  const auto &draws = store.draws;
  if (draws.size() < 100)
    throw UsageError("importance density needs at least 100 posterior draws, got " +
                     std::to_string(draws.size()));
  const auto N = static_cast<Eigen::Index>(draws.size());
  const int T = spec.T;
  const int p = spec.factor_count();
  ImportanceDensity g;
  g.spec = spec;
  auto &warn = g.warnings;

  auto stack_free = [&](bool rows) {
    const int m = rows ? spec.n : spec.k;
    const int pp = rows ? spec.p1 : spec.p2;
    const auto idx = free_loading_entries(m, pp);
    const auto d = static_cast<Eigen::Index>(idx.size());
    Matrix X(N, d);
    for (Eigen::Index i = 0; i < N; ++i)
      X.row(i) = free_values(rows ? draws[i].loadings.A : draws[i].loadings.B).transpose();
    std::vector<int> row_of;
    for (auto [r, c] : idx)
      row_of.push_back(r);
    return fit_gaussian(X, row_of, config.max_full_cov);
  };
  g.a = stack_free(true);
  g.b = stack_free(false);

  if (exact(spec)) {
    g.r_shape.resize(spec.n);
    g.r_scale.resize(spec.n);
    for (int i = 0; i < spec.n; ++i) {
      std::vector<double> x(N);
      for (Eigen::Index d = 0; d < N; ++d)
        x[d] = draws[d].cov.sigma_r(i, i);
      std::tie(g.r_shape(i), g.r_scale(i)) = fit_ig(x, "sigma_r", warn);
    }
    g.c_shape = Vector::Ones(spec.k);
    g.c_scale = Vector::Ones(spec.k);
    for (int j = 1; j < spec.k; ++j) {
      std::vector<double> x(N);
      for (Eigen::Index d = 0; d < N; ++d)
        x[d] = draws[d].cov.sigma_c(j, j);
      std::tie(g.c_shape(j), g.c_scale(j)) = fit_ig(x, "sigma_c", warn);
    }
  } else {
    std::vector<Matrix> r, c;
    for (const auto &d : draws) {
      r.push_back(d.cov.sigma_r);
      c.push_back(d.cov.sigma_c);
    }
    auto fr = mle_inverse_wishart(r);
    if (!fr.converged)
      warn.emplace_back("sigma_r: inverse-Wishart fit did not converge");
    g.nu_r = fr.nu;
    g.S_r = fr.S;
    if (spec.k > 1) {
      auto fc = mle_restricted_inverse_wishart(c);
      if (!fc.converged)
        warn.emplace_back("sigma_c: restricted inverse-Wishart fit did not converge");
      g.nu_c = fc.nu;
      g.S_c = fc.S;
    }
  }

  g.rho_mean.resize(p, spec.q);
  g.rho_var.resize(p, spec.q);
  for (int j = 0; j < p; ++j)
    for (int m = 0; m < spec.q; ++m) {
      std::vector<double> x(N);
      for (Eigen::Index d = 0; d < N; ++d)
        x[d] = draws[d].dynamics.rho(j, m);
      std::tie(g.rho_mean(j, m), g.rho_var(j, m)) = fit_tn(x, "rho", warn);
    }
  if (has_lambda(spec)) {
    g.lambda_shape.resize(p);
    g.lambda_scale.resize(p);
    for (int j = 0; j < p; ++j) {
      std::vector<double> x(N);
      for (Eigen::Index d = 0; d < N; ++d)
        x[d] = draws[d].dynamics.lambda2(j);
      std::tie(g.lambda_shape(j), g.lambda_scale(j)) = fit_ig(x, "lambda2", warn);
    }
  }

  switch (spec.volatility) {
  case Volatility::none:
    break;
  case Volatility::common_sv: {
    Matrix H(N, T);
    std::vector<double> phi(N), sh(N);
    for (Eigen::Index d = 0; d < N; ++d) {
      const auto &sv = std::get<CommonSv>(draws[d].vol.payload);
      H.row(d) = sv.h.transpose();
      phi[d] = sv.phi;
      sh[d] = sv.sigma_h2;
    }
    g.h_mean = H.colwise().mean().transpose();
    const Matrix D = H.rowwise() - g.h_mean.transpose();
    // Pooled lag-one regression of the deviations.
    double num = 0, den = 0;
    for (int t = 1; t < T; ++t) {
      num += D.col(t).dot(D.col(t - 1));
      den += D.col(t - 1).squaredNorm();
    }
    g.h_phi = den > 0 ? std::clamp(num / den, -0.999, 0.999) : 0.0;
    g.h_var.resize(T);
    const double denom = std::max<double>(static_cast<double>(N) - 1.0, 1.0);
    for (int t = 0; t < T; ++t) {
      const Vector e = t == 0 ? Vector(D.col(0)) : Vector(D.col(t) - g.h_phi * D.col(t - 1));
      g.h_var(t) = std::max(e.squaredNorm() / denom, 1e-10);
    }
    std::tie(g.phi_mean, g.phi_var) = fit_tn(phi, "phi", warn);
    std::tie(g.sh_shape, g.sh_scale) = fit_ig(sh, "sigma_h2", warn);
    break;
  }
  case Volatility::outlier: {
    g.o_prob = Matrix::Zero(T, kOutlierGridMax);
    std::vector<double> po(N);
    for (Eigen::Index d = 0; d < N; ++d) {
      const auto &o = std::get<OutlierState>(draws[d].vol.payload);
      for (int t = 0; t < T; ++t)
        g.o_prob(t, o.o(t) - 1) += 1.0;
      po[d] = o.p_o;
    }
    const double floor = 1.0 / (20.0 * static_cast<double>(N));
    for (int t = 0; t < T; ++t) {
      g.o_prob.row(t) /= static_cast<double>(N);
      g.o_prob.row(t) = g.o_prob.row(t).cwiseMax(floor);
      g.o_prob.row(t) /= g.o_prob.row(t).sum();
    }
    auto fb = mle_beta(po);
    if (fb.converged && !fb.degenerate) {
      g.po_a = fb.a;
      g.po_b = fb.b;
    } else {
      const double m = sample_mean(po), v = std::max(sample_var(po), 1e-12);
      const double c = std::max(m * (1 - m) / v - 1.0, 1e-3);
      g.po_a = m * c;
      g.po_b = (1 - m) * c;
      warn.emplace_back("p_o: beta fit fell back to moments");
    }
    break;
  }
  case Volatility::fat_tail: {
    g.q2_shape.resize(T);
    g.q2_scale.resize(T);
    g.dof = std::get<FatTailState>(draws[0].vol.payload).dof;
    for (int t = 0; t < T; ++t) {
      std::vector<double> x(N);
      for (Eigen::Index d = 0; d < N; ++d)
        x[d] = std::get<FatTailState>(draws[d].vol.payload).q2(t);
      std::tie(g.q2_shape(t), g.q2_scale(t)) = fit_ig(x, "q2", warn);
    }
    break;
  }
  }
  return g;
}

std::pair<Vector, Vector> sv_proposal_precision(const ImportanceDensity &g) {
  const auto T = g.h_var.size();
  Vector diag(T), sub(std::max<Eigen::Index>(T - 1, 0));
  for (Eigen::Index t = 0; t < T; ++t) {
    diag(t) = 1.0 / g.h_var(t);
    if (t + 1 < T) {
      diag(t) += g.h_phi * g.h_phi / g.h_var(t + 1);
      sub(t) = -g.h_phi / g.h_var(t + 1);
    }
  }
  return {diag, sub};
}

ParameterState sample_importance(const ImportanceDensity &g, Rng &rng) {
  const auto &spec = g.spec;
  const int p = spec.factor_count();
  const int T = spec.T;
  ParameterState s;
  s.loadings.A = loadings_from_free(draw_gaussian(g.a, rng), spec.n, spec.p1);
  s.loadings.B = loadings_from_free(draw_gaussian(g.b, rng), spec.k, spec.p2);
  if (exact(spec)) {
    s.cov.sigma_r = Matrix::Zero(spec.n, spec.n);
    for (int i = 0; i < spec.n; ++i)
      s.cov.sigma_r(i, i) = sample_inverse_gamma(g.r_shape(i), g.r_scale(i), rng);
    s.cov.sigma_c = Matrix::Zero(spec.k, spec.k);
    s.cov.sigma_c(0, 0) = 1.0;
    for (int j = 1; j < spec.k; ++j)
      s.cov.sigma_c(j, j) = sample_inverse_gamma(g.c_shape(j), g.c_scale(j), rng);
  } else {
    s.cov.sigma_r = sample_inverse_wishart(g.nu_r, g.S_r, rng);
    s.cov.sigma_c = spec.k > 1 ? sample_restricted_inverse_wishart(g.nu_c, g.S_c, rng)
                               : Matrix::Ones(1, 1);
  }
  s.dynamics.rho.resize(p, spec.q);
  for (int j = 0; j < p; ++j)
    for (int m = 0; m < spec.q; ++m)
      s.dynamics.rho(j, m) =
          sample_truncated_normal(g.rho_mean(j, m), g.rho_var(j, m), -1.0, 1.0, rng);
  s.dynamics.lambda2 = Vector::Ones(p);
  if (has_lambda(spec))
    for (int j = 0; j < p; ++j)
      s.dynamics.lambda2(j) = sample_inverse_gamma(g.lambda_shape(j), g.lambda_scale(j), rng);

  switch (spec.volatility) {
  case Volatility::none:
    break;
  case Volatility::common_sv: {
    CommonSv sv;
    sv.h.resize(T);
    double d = 0;
    for (int t = 0; t < T; ++t) {
      d = (t == 0 ? 0.0 : g.h_phi * d) + std::sqrt(g.h_var(t)) * rng.normal();
      sv.h(t) = g.h_mean(t) + d;
    }
    sv.phi = sample_truncated_normal(g.phi_mean, g.phi_var, -1.0, 1.0, rng);
    sv.sigma_h2 = sample_inverse_gamma(g.sh_shape, g.sh_scale, rng);
    s.vol.payload = sv;
    break;
  }
  case Volatility::outlier: {
    OutlierState o;
    o.o.resize(T);
    for (int t = 0; t < T; ++t) {
      double u = rng.uniform(), c = 0;
      int k = kOutlierGridMax;
      for (int j = 0; j < kOutlierGridMax; ++j) {
        c += g.o_prob(t, j);
        if (u <= c) {
          k = j + 1;
          break;
        }
      }
      o.o(t) = k;
    }
    o.p_o = rng.beta(g.po_a, g.po_b);
    s.vol.payload = o;
    break;
  }
  case Volatility::fat_tail: {
    FatTailState ft;
    ft.dof = g.dof;
    ft.q2.resize(T);
    for (int t = 0; t < T; ++t)
      ft.q2(t) = sample_inverse_gamma(g.q2_shape(t), g.q2_scale(t), rng);
    s.vol.payload = ft;
    break;
  }
  }
  return s;
}

double importance_logpdf(const ImportanceDensity &g, const ParameterState &s) {
  const auto &spec = g.spec;
  const int p = spec.factor_count();
  const int T = spec.T;
  double lp = gaussian_logpdf(g.a, free_values(s.loadings.A)) +
              gaussian_logpdf(g.b, free_values(s.loadings.B));
  if (exact(spec)) {
    for (int i = 0; i < spec.n; ++i)
      lp += inverse_gamma_logpdf(s.cov.sigma_r(i, i), g.r_shape(i), g.r_scale(i));
    for (int j = 1; j < spec.k; ++j)
      lp += inverse_gamma_logpdf(s.cov.sigma_c(j, j), g.c_shape(j), g.c_scale(j));
  } else {
    lp += inverse_wishart_logpdf(s.cov.sigma_r, g.nu_r, g.S_r);
    if (spec.k > 1)
      lp += restricted_inverse_wishart_logpdf(s.cov.sigma_c, g.nu_c, g.S_c);
  }
  for (int j = 0; j < p; ++j) {
    for (int m = 0; m < spec.q; ++m)
      lp += truncated_normal_logpdf(s.dynamics.rho(j, m), g.rho_mean(j, m), g.rho_var(j, m),
                                    -1.0, 1.0);
    if (has_lambda(spec))
      lp += inverse_gamma_logpdf(s.dynamics.lambda2(j), g.lambda_shape(j), g.lambda_scale(j));
  }
  switch (spec.volatility) {
  case Volatility::none:
    break;
  case Volatility::common_sv: {
    const auto &sv = std::get<CommonSv>(s.vol.payload);
    double prev = 0;
    for (int t = 0; t < T; ++t) {
      const double d = sv.h(t) - g.h_mean(t);
      lp += normal_logpdf(d, t == 0 ? 0.0 : g.h_phi * prev, g.h_var(t));
      prev = d;
    }
    lp += truncated_normal_logpdf(sv.phi, g.phi_mean, g.phi_var, -1.0, 1.0) +
          inverse_gamma_logpdf(sv.sigma_h2, g.sh_shape, g.sh_scale);
    break;
  }
  case Volatility::outlier: {
    const auto &o = std::get<OutlierState>(s.vol.payload);
    for (int t = 0; t < T; ++t)
      lp += std::log(g.o_prob(t, o.o(t) - 1));
    lp += beta_logpdf(o.p_o, g.po_a, g.po_b);
    break;
  }
  case Volatility::fat_tail: {
    const auto &ft = std::get<FatTailState>(s.vol.payload);
    for (int t = 0; t < T; ++t)
      lp += inverse_gamma_logpdf(ft.q2(t), g.q2_shape(t), g.q2_scale(t));
    break;
  }
  }
  return lp;
}

// ---- estimator ----

MlEstimate combine_log_weights(const std::vector<double> &log_w, int batches) {
  const auto n = static_cast<int>(log_w.size());
  if (n == 0)
    throw UsageError("no importance weights");
  for (double v : log_w)
    if (std::isnan(v))
      throw NumericalError("importance log-weight is NaN");
  MlEstimate est;
  est.n_is = n;
  const double lse = log_sum_exp(log_w);
  if (!std::isfinite(lse))
    throw NumericalError("every importance weight is zero");
  est.log_ml = lse - std::log(static_cast<double>(n));

  double s1 = 0, s2 = 0, wmax = 0;
  for (double v : log_w) {
    const double w = std::exp(v - lse); // normalized, sums to 1
    s1 += w;
    s2 += w * w;
    wmax = std::max(wmax, w);
  }
  est.ess = s1 * s1 / s2;
  est.max_weight_share = wmax;

  // Batch means of the scaled weights; delta method for the log.
  const int B = std::clamp(batches, 2, std::max(2, n / 2));
  const int per = n / B;
  std::vector<double> bm(B, 0.0);
  for (int b = 0; b < B; ++b) {
    for (int i = b * per; i < (b + 1) * per; ++i)
      bm[b] += std::exp(log_w[i] - lse);
    bm[b] *= n / static_cast<double>(per); // in units of the overall mean
  }
  double mean = 0;
  for (double v : bm)
    mean += v;
  mean /= B;
  double var = 0;
  for (double v : bm)
    var += (v - mean) * (v - mean);
  var /= (B - 1);
  // Each batch mean estimates 1 (scaled mean); the full-sample mean has
  // variance var / B.
  est.nse = std::sqrt(var / B);

  est.degenerate = est.ess < 0.01 * n;
  std::ostringstream os;
  os << "ESS " << est.ess << " of " << n << ", largest weight share " << wmax;
  if (est.degenerate)
    os << "; ESS below 1% of draws, estimate unreliable";
  est.diagnostic = os.str();
  return est;
}

MlEstimate importance_estimate(const std::function<double(Rng &)> &draw, int n,
                               std::uint64_t seed, int batches) {
  if (n < 2)
    throw UsageError("importance sampling needs at least 2 draws");
  Rng base(seed);
  std::vector<double> lw(n);
  for (int i = 0; i < n; ++i) {
    Rng r = base.split(static_cast<std::uint64_t>(i));
    lw[i] = draw(r);
  }
  return combine_log_weights(lw, batches);
}

MlEstimate estimate_log_ml(const ModelSpec &spec, const PriorConfig &prior, const Panel &Y,
                           const ImportanceDensity &g, const IsConfig &config) {
  if (!(g.spec == spec))
    throw UsageError("importance density was fitted for a different model");
  check_panel(spec, Y);
  auto draw = [&](Rng &rng) {
    const ParameterState s = sample_importance(g, rng);
    const double lp = log_prior(spec, prior, s);
    if (!std::isfinite(lp))
      return kNegInf;
    return integrated_loglik(spec, Y, s) + lp - importance_logpdf(g, s);
  };
  auto est = importance_estimate(draw, config.draws, config.seed, config.batches);
  for (const auto &w : g.warnings)
    est.diagnostic += "; " + w;
  return est;
}

MlEstimate fit_and_estimate(const ModelSpec &spec, const PriorConfig &prior, const Panel &Y,
                            const McmcConfig &mcmc, const IsConfig &is) {
  const auto store = run_chain(spec, prior, mcmc, Y);
  const auto g = fit_importance_density(store, is);
  return estimate_log_ml(spec, prior, Y, g, is);
}

// ---- conjugate check model ----

double ConjugateToy::log_ml() const {
  const double N = static_cast<double>(y.size());
  const double vn = 1.0 / (1.0 / V0 + x.squaredNorm());
  const double bn = vn * (beta0 / V0 + x.dot(y));
  const double an = a0 + 0.5 * N;
  const double sn = b0 + 0.5 * (y.squaredNorm() + beta0 * beta0 / V0 - bn * bn / vn);
  return -0.5 * N * kLog2Pi + 0.5 * std::log(vn / V0) + a0 * std::log(b0) -
         an * std::log(sn) + std::lgamma(an) - std::lgamma(a0);
}

double ConjugateToy::log_likelihood(double beta, double s2) const {
  const double N = static_cast<double>(y.size());
  return -0.5 * N * (kLog2Pi + std::log(s2)) - 0.5 * (y - beta * x).squaredNorm() / s2;
}

double ConjugateToy::log_prior(double beta, double s2) const {
  return normal_logpdf(beta, beta0, s2 * V0) + inverse_gamma_logpdf(s2, a0, b0);
}

MlEstimate ConjugateToy::is_estimate(int posterior_draws, int n_is, std::uint64_t seed,
                                     int batches) const {
  const double N = static_cast<double>(y.size());
  const double vn = 1.0 / (1.0 / V0 + x.squaredNorm());
  const double bn = vn * (beta0 / V0 + x.dot(y));
  const double an = a0 + 0.5 * N;
  const double sn = b0 + 0.5 * (y.squaredNorm() + beta0 * beta0 / V0 - bn * bn / vn);
  Rng rng(seed);
  Rng post = rng.split(0xfeed);
  std::vector<double> beta(posterior_draws), s2(posterior_draws);
  for (int i = 0; i < posterior_draws; ++i) {
    s2[i] = sample_inverse_gamma(an, sn, post);
    beta[i] = bn + std::sqrt(s2[i] * vn) * post.normal();
  }
  const double bm = sample_mean(beta), bv = sample_var(beta);
  std::vector<std::string> warn;
  const auto [sa, sb] = fit_ig(s2, "s2", warn);
  auto draw = [&](Rng &r) {
    const double b = bm + std::sqrt(bv) * r.normal();
    const double v = sample_inverse_gamma(sa, sb, r);
    return log_likelihood(b, v) + log_prior(b, v) - normal_logpdf(b, bm, bv) -
           inverse_gamma_logpdf(v, sa, sb);
  };
  return importance_estimate(draw, n_is, seed + 1, batches);
}

} // namespace mdfm
