#include "mdfm/volatility.hpp"
#include "mdfm/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mdfm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Tridiagonal precision of the stationary AR(1) prior on h.
void ar1_precision(int T, double phi, double sigma_h2, Vector &diag, Vector &off) {
  diag.setConstant(T, (1.0 + phi * phi) / sigma_h2);
  off.setConstant(std::max(T - 1, 0), -phi / sigma_h2);
  if (T >= 1) {
    diag(0) = 1.0 / sigma_h2;
    diag(T - 1) = 1.0 / sigma_h2;
  }
  if (T == 1)
    diag(0) = (1.0 - phi * phi) / sigma_h2;
}

// Q h for the tridiagonal (diag, off).
Vector tri_mul(const Vector &diag, const Vector &off, const Vector &x) {
  Vector y = diag.cwiseProduct(x);
  for (Eigen::Index t = 0; t < off.size(); ++t) {
    y(t) += off(t) * x(t + 1);
    y(t + 1) += off(t) * x(t);
  }
  return y;
}

// Cholesky of a symmetric tridiagonal matrix: L has diagonal l and
// subdiagonal m. Returns false if not positive definite.
bool tri_chol(const Vector &diag, const Vector &off, Vector &l, Vector &m) {
  const auto T = diag.size();
  l.resize(T);
  m.resize(std::max<Eigen::Index>(T - 1, 0));
  for (Eigen::Index t = 0; t < T; ++t) {
    double d = diag(t);
    if (t > 0)
      d -= m(t - 1) * m(t - 1);
    if (!(d > 0))
      return false;
    l(t) = std::sqrt(d);
    if (t + 1 < T)
      m(t) = off(t) / l(t);
  }
  return true;
}

Vector tri_solve(const Vector &l, const Vector &m, const Vector &b) {
  const auto T = l.size();
  Vector y(T);
  for (Eigen::Index t = 0; t < T; ++t)
    y(t) = (b(t) - (t > 0 ? m(t - 1) * y(t - 1) : 0.0)) / l(t);
  Vector x(T);
  for (Eigen::Index t = T - 1; t >= 0; --t)
    x(t) = (y(t) - (t + 1 < T ? m(t) * x(t + 1) : 0.0)) / l(t);
  return x;
}

// Solves L' x = z.
Vector tri_solve_upper(const Vector &l, const Vector &m, const Vector &z) {
  const auto T = l.size();
  Vector x(T);
  for (Eigen::Index t = T - 1; t >= 0; --t)
    x(t) = (z(t) - (t + 1 < T ? m(t) * x(t + 1) : 0.0)) / l(t);
  return x;
}

struct GaussianApprox {
  Vector mean;
  Vector l, m; // Cholesky of the precision
  double logdet_half = 0;

  double logpdf(const Vector &h) const {
    // log N(h; mean, P^{-1}) up to -T/2 log 2pi
    Vector r = h - mean;
    // ||L' r||^2
    double q = 0;
    for (Eigen::Index t = 0; t < r.size(); ++t) {
      double v = l(t) * r(t) + (t + 1 < r.size() ? m(t) * r(t + 1) : 0.0);
      q += v * v;
    }
    return logdet_half - 0.5 * q;
  }
};

} // namespace

Vector residual_quadratic(const Panel &Y, const ParameterState &state,
                          const FactorPath &f) {
  const auto &A = state.loadings.A;
  const auto &B = state.loadings.B;
  const auto p1 = A.cols(), p2 = B.cols();
  const bool diag_r = state.cov.sigma_r.isDiagonal(0.0);
  const bool diag_c = state.cov.sigma_c.isDiagonal(0.0);
  Eigen::LLT<Matrix> lr, lc;
  Vector ir, ic;
  if (diag_r)
    ir = state.cov.sigma_r.diagonal().cwiseInverse();
  else
    lr = checked_llt(state.cov.sigma_r, "sigma_r");
  if (diag_c)
    ic = state.cov.sigma_c.diagonal().cwiseInverse();
  else
    lc = checked_llt(state.cov.sigma_c, "sigma_c");
  Vector s2(static_cast<Eigen::Index>(Y.size()));
  for (std::size_t t = 0; t < Y.size(); ++t) {
    Matrix F = unvec(f.row(static_cast<Eigen::Index>(t)).transpose(), p1, p2);
    Matrix E = Y[t] - A * F * B.transpose();
    if (diag_r && diag_c) {
      s2(t) = (ir.asDiagonal() * E.cwiseAbs2() * ic).sum();
    } else {
      Matrix W = diag_r ? Matrix(ir.cwiseSqrt().asDiagonal() * E)
                        : Matrix(lr.matrixL().solve(E));
      Matrix V = diag_c ? Matrix(W * ic.cwiseSqrt().asDiagonal())
                        : Matrix(lc.matrixL().solve(W.transpose()).transpose());
      s2(t) = V.squaredNorm();
    }
  }
  return s2;
}

double sv_log_posterior(const Vector &h, const Vector &s2, double N, double phi,
                        double sigma_h2) {
  Vector d, o;
  ar1_precision(static_cast<int>(h.size()), phi, sigma_h2, d, o);
  double lp = -0.5 * h.dot(tri_mul(d, o, h));
  for (Eigen::Index t = 0; t < h.size(); ++t)
    lp += -0.5 * N * h(t) - 0.5 * s2(t) * std::exp(-h(t));
  return lp;
}

Vector sv_gradient(const Vector &h, const Vector &s2, double N, double phi,
                   double sigma_h2) {
  Vector d, o;
  ar1_precision(static_cast<int>(h.size()), phi, sigma_h2, d, o);
  Vector g = -tri_mul(d, o, h);
  for (Eigen::Index t = 0; t < h.size(); ++t)
    g(t) += -0.5 * N + 0.5 * s2(t) * std::exp(-h(t));
  return g;
}

SvMode sv_posterior_mode(const Vector &s2, double N, double phi, double sigma_h2,
                         const Vector &start, int max_iter, double tol) {
  const auto T = s2.size();
  Vector d, o;
  ar1_precision(static_cast<int>(T), phi, sigma_h2, d, o);
  SvMode out;
  out.h = start.size() == T ? start : Vector::Zero(T);
  double f = sv_log_posterior(out.h, s2, N, phi, sigma_h2);
  for (int it = 0; it < max_iter; ++it) {
    out.gradient = sv_gradient(out.h, s2, N, phi, sigma_h2);
    if (out.gradient.cwiseAbs().maxCoeff() < tol) {
      out.converged = true;
      out.iterations = it;
      return out;
    }
    Vector nd = d;
    for (Eigen::Index t = 0; t < T; ++t)
      nd(t) += 0.5 * s2(t) * std::exp(-out.h(t));
    Vector l, m;
    if (!tri_chol(nd, o, l, m))
      break;
    Vector step = tri_solve(l, m, out.gradient);
    double a = 1.0;
    for (int ls = 0; ls < 40; ++ls, a *= 0.5) {
      Vector cand = out.h + a * step;
      const double fc = sv_log_posterior(cand, s2, N, phi, sigma_h2);
      // near the optimum f is flat to roundoff
      if (std::isfinite(fc) && fc >= f - 1e-13 * std::max(1.0, std::abs(f))) {
        out.h = std::move(cand);
        f = fc;
        break;
      }
    }
    out.iterations = it + 1;
  }
  out.gradient = sv_gradient(out.h, s2, N, phi, sigma_h2);
  out.converged = out.gradient.cwiseAbs().maxCoeff() < tol;
  return out;
}

SvUpdateStats sample_common_sv(const PriorConfig &prior, const Vector &s2, double N,
                               CommonSv &sv, Vector &mode_cache, Rng &rng) {
  SvUpdateStats st;
  const auto T = s2.size();
  if (sv.h.size() != T)
    sv.h = Vector::Zero(T);
  if (sv.sigma_h2 == 0.0) {
    sv.h.setZero();
    return st;
  }

  // h | rest
  st.proposed = true;
  const Vector start = mode_cache.size() == T ? mode_cache : sv.h;
  SvMode mode = sv_posterior_mode(s2, N, sv.phi, sv.sigma_h2, start);
  mode_cache = mode.h;
  if (!mode.converged) {
    // keep iterating from the partial mode next time; h stays put
    st.fallback = true;
  } else {
    Vector d, o;
    ar1_precision(static_cast<int>(T), sv.phi, sv.sigma_h2, d, o);
    for (Eigen::Index t = 0; t < T; ++t)
      d(t) += 0.5 * s2(t) * std::exp(-mode.h(t));
    GaussianApprox g;
    g.mean = mode.h;
    if (!tri_chol(d, o, g.l, g.m)) {
      st.fallback = true;
    } else {
      g.logdet_half = g.l.array().log().sum();
      auto logf = [&](const Vector &h) {
        return sv_log_posterior(h, s2, N, sv.phi, sv.sigma_h2);
      };
      const double logc = logf(mode.h) - g.logpdf(mode.h);
      auto logw = [&](const Vector &h, double lf) { return lf - logc - g.logpdf(h); };
      Vector prop;
      double lf_prop = kNegInf;
      bool got = false;
      for (int attempt = 0; attempt < 100; ++attempt) {
        Vector cand = mode.h + tri_solve_upper(g.l, g.m, rng.normal_vector(T));
        const double lf = logf(cand);
        const double lw = logw(cand, lf);
        if (std::log(rng.uniform()) < std::min(0.0, lw)) {
          prop = std::move(cand);
          lf_prop = lf;
          got = true;
          break;
        }
      }
      if (got) {
        const double lw_cur = logw(sv.h, logf(sv.h));
        const double lw_prop = logw(prop, lf_prop);
        double log_alpha;
        if (lw_cur < 0)
          log_alpha = 0.0;
        else if (lw_prop < 0)
          log_alpha = -lw_cur;
        else
          log_alpha = std::min(0.0, lw_prop - lw_cur);
        if (std::log(rng.uniform()) < log_alpha) {
          sv.h = std::move(prop);
          st.accepted = true;
        }
      }
    }
  }

  // phi | h, sigma_h2: truncated-normal proposal from the t >= 2 terms,
  // MH on the initial-condition term.
  {
    double sxx = 0, sxy = 0;
    for (Eigen::Index t = 1; t < T; ++t) {
      sxx += sv.h(t - 1) * sv.h(t - 1);
      sxy += sv.h(t) * sv.h(t - 1);
    }
    const double K = 1.0 / prior.V_phi + sxx / sv.sigma_h2;
    const double mean = (prior.phi0 / prior.V_phi + sxy / sv.sigma_h2) / K;
    const double cand = sample_truncated_normal(mean, 1.0 / K, -1.0, 1.0, rng);
    const double h1 = T > 0 ? sv.h(0) : 0.0;
    auto init = [&](double ph) {
      return normal_logpdf(h1, 0.0, sv.sigma_h2 / (1.0 - ph * ph));
    };
    if (std::log(rng.uniform()) < init(cand) - init(sv.phi)) {
      sv.phi = cand;
      st.phi_accepted = true;
    }
  }

  // sigma_h2 | h, phi
  {
    double ss = T > 0 ? (1.0 - sv.phi * sv.phi) * sv.h(0) * sv.h(0) : 0.0;
    for (Eigen::Index t = 1; t < T; ++t) {
      const double r = sv.h(t) - sv.phi * sv.h(t - 1);
      ss += r * r;
    }
    sv.sigma_h2 = sample_inverse_gamma(prior.a_sh + 0.5 * static_cast<double>(T),
                                       prior.b_sh + 0.5 * ss, rng);
  }
  return st;
}

double outlier_log_prior(int o, double p_o) {
  if (o == 1)
    return std::log1p(-p_o);
  if (o >= 2 && o <= kOutlierGridMax)
    return std::log(p_o) - std::log(static_cast<double>(kOutlierGridMax - 1));
  return kNegInf;
}

Vector outlier_probabilities(double s2, double N, double p_o) {
  Vector lp(kOutlierGridMax);
  for (int j = 1; j <= kOutlierGridMax; ++j) {
    const double w = static_cast<double>(j) * j;
    lp(j - 1) = outlier_log_prior(j, p_o) - N * std::log(static_cast<double>(j)) -
                0.5 * s2 / w;
  }
  const double mx = lp.maxCoeff();
  Vector p = (lp.array() - mx).exp();
  return p / p.sum();
}

void sample_outliers(const PriorConfig &prior, const Vector &s2, double N,
                     OutlierState &state, Rng &rng) {
  const auto T = s2.size();
  state.o.resize(T);
  int n1 = 0;
  for (Eigen::Index t = 0; t < T; ++t) {
    const Vector p = outlier_probabilities(s2(t), N, state.p_o);
    const double u = rng.uniform();
    double c = 0;
    int pick = kOutlierGridMax;
    for (int j = 0; j < kOutlierGridMax; ++j) {
      c += p(j);
      if (u < c) {
        pick = j + 1;
        break;
      }
    }
    state.o(t) = pick;
    if (pick == 1)
      ++n1;
  }
  const double n2 = static_cast<double>(T - n1);
  state.p_o = rng.beta(prior.a_po + n2, prior.b_po + n1);
  state.p_o = std::clamp(state.p_o, 1e-300, 1.0 - 1e-16);
}

void sample_fat_tail(const Vector &s2, double N, FatTailState &state, Rng &rng) {
  const auto T = s2.size();
  state.q2.resize(T);
  for (Eigen::Index t = 0; t < T; ++t)
    state.q2(t) = sample_inverse_gamma(0.5 * (N + state.dof),
                                       0.5 * (s2(t) + state.dof), rng);
}

void step_volatility(const ModelSpec &spec, const PriorConfig &prior, const Panel &Y,
                     const FactorPath &f, ParameterState &state,
                     VolatilityWorkspace &ws, Rng &rng) {
  if (spec.volatility == Volatility::none)
    return;
  const Vector s2 = residual_quadratic(Y, state, f);
  const double N = static_cast<double>(spec.n) * spec.k;
  if (auto *sv = std::get_if<CommonSv>(&state.vol.payload))
    ws.last = sample_common_sv(prior, s2, N, *sv, ws.sv_mode, rng);
  else if (auto *o = std::get_if<OutlierState>(&state.vol.payload))
    sample_outliers(prior, s2, N, *o, rng);
  else if (auto *ft = std::get_if<FatTailState>(&state.vol.payload))
    sample_fat_tail(s2, N, *ft, rng);
}

VolatilityState initial_volatility(const ModelSpec &spec, const PriorConfig &prior) {
  VolatilityState v;
  switch (spec.volatility) {
  case Volatility::none:
    break;
  case Volatility::common_sv: {
    CommonSv sv;
    sv.h = Vector::Zero(spec.T);
    sv.phi = std::clamp(prior.phi0, -0.99, 0.99);
    sv.sigma_h2 = prior.a_sh > 1 ? prior.b_sh / (prior.a_sh - 1) : prior.b_sh;
    v.payload = sv;
    break;
  }
  case Volatility::outlier: {
    OutlierState o;
    o.o = Eigen::VectorXi::Ones(spec.T);
    o.p_o = prior.a_po / (prior.a_po + prior.b_po);
    v.payload = o;
    break;
  }
  case Volatility::fat_tail: {
    FatTailState ft;
    ft.q2 = Vector::Ones(spec.T);
    ft.dof = prior.dof;
    v.payload = ft;
    break;
  }
  }
  return v;
}

double volatility_log_prior(const ModelSpec &spec, const PriorConfig &prior,
                            const VolatilityState &vol) {
  (void)spec;
  if (auto *sv = std::get_if<CommonSv>(&vol.payload)) {
    if (!(std::abs(sv->phi) < 1.0) || !(sv->sigma_h2 > 0))
      return kNegInf;
    const auto T = sv->h.size();
    double lp = truncated_normal_logpdf(sv->phi, prior.phi0, prior.V_phi, -1.0, 1.0) +
                inverse_gamma_logpdf(sv->sigma_h2, prior.a_sh, prior.b_sh);
    if (T > 0)
      lp += normal_logpdf(sv->h(0), 0.0, sv->sigma_h2 / (1.0 - sv->phi * sv->phi));
    for (Eigen::Index t = 1; t < T; ++t)
      lp += normal_logpdf(sv->h(t), sv->phi * sv->h(t - 1), sv->sigma_h2);
    return lp;
  }
  if (auto *o = std::get_if<OutlierState>(&vol.payload)) {
    double lp = beta_logpdf(o->p_o, prior.a_po, prior.b_po);
    for (Eigen::Index t = 0; t < o->o.size(); ++t)
      lp += outlier_log_prior(o->o(t), o->p_o);
    return lp;
  }
  if (auto *ft = std::get_if<FatTailState>(&vol.payload)) {
    double lp = 0;
    for (Eigen::Index t = 0; t < ft->q2.size(); ++t)
      lp += inverse_gamma_logpdf(ft->q2(t), 0.5 * ft->dof, 0.5 * ft->dof);
    return lp;
  }
  return 0.0;
}

} // namespace mdfm
