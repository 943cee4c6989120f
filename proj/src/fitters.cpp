#include "mdfm/distributions.hpp"
#include "mdfm/errors.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <boost/math/tools/roots.hpp>

#include <cmath>
#include <numbers>
#include <numeric>

namespace mdfm {

namespace bm = boost::math;

double multi_digamma(double x, int d) {
  double s = 0;
  for (int i = 1; i <= d; ++i)
    s += bm::digamma(x + 0.5 * (1 - i));
  return s;
}

double multi_trigamma(double x, int d) {
  double s = 0;
  for (int i = 1; i <= d; ++i)
    s += bm::trigamma(x + 0.5 * (1 - i));
  return s;
}

double wishart_loglik(const std::vector<Matrix> &samples, double delta,
                      const Matrix &psi) {
  double s = 0;
  for (const auto &K : samples)
    s += wishart_logpdf(K, delta, psi);
  return s;
}

WishartFit mle_wishart(const std::vector<Matrix> &samples) {
  if (samples.size() < 2)
    throw UsageError("mle_wishart needs at least two samples");
  const auto d = samples.front().rows();
  const double M = static_cast<double>(samples.size());
  Matrix Sbar = Matrix::Zero(d, d);
  double mean_logdet = 0;
  for (const auto &K : samples) {
    if (K.rows() != d || !is_spd(K, 1e-8))
      throw DataError("mle_wishart: sample is not SPD");
    Sbar += K;
    mean_logdet += log_det(checked_llt(K, "Wishart sample"));
  }
  Sbar /= M;
  mean_logdet /= M;
  const double rhs = log_det(checked_llt(Sbar, "Wishart sample mean")) - mean_logdet;
  const int di = static_cast<int>(d);
  auto f = [&](double delta) {
    return di * std::log(0.5 * delta) - multi_digamma(0.5 * delta, di) - rhs;
  };
  auto fp = [&](double delta) {
    return di / delta - 0.5 * multi_trigamma(0.5 * delta, di);
  };

  WishartFit fit;
  double lo = static_cast<double>(d) - 1.0 + 1e-10;
  double hi = 1e6;
  if (!(rhs > 0) || f(hi) > 0) {
    fit.delta = hi;
    fit.psi = symmetrize(Sbar / hi);
    fit.converged = false;
    return fit;
  }
  double x = std::clamp(0.5 * d * (d + 1.0) / rhs, lo * 1.0001 + 1e-6, hi);
  for (int it = 1; it <= 200; ++it) {
    const double fx = f(x);
    fit.iterations = it;
    if (std::abs(fx) < 1e-8) {
      fit.converged = true;
      break;
    }
    if (fx > 0)
      lo = x;
    else
      hi = x;
    double next = x - fx / fp(x);
    if (!(next > lo && next < hi))
      next = 0.5 * (lo + hi);
    x = next;
  }
  fit.delta = x;
  fit.psi = symmetrize(Sbar / x);
  return fit;
}

InverseWishartFit mle_inverse_wishart(const std::vector<Matrix> &samples) {
  std::vector<Matrix> inv;
  inv.reserve(samples.size());
  for (const auto &s : samples) {
    if (!is_spd(s, 1e-8))
      throw DataError("mle_inverse_wishart: singular or non-SPD sample");
    inv.push_back(spd_inverse(s, "inverse-Wishart sample"));
  }
  auto w = mle_wishart(inv);
  InverseWishartFit out;
  out.nu = w.delta;
  out.S = spd_inverse(w.psi, "Wishart scale estimate");
  out.iterations = w.iterations;
  out.converged = w.converged;
  return out;
}

InverseWishartFit mle_restricted_inverse_wishart(const std::vector<Matrix> &samples) {
  if (samples.size() < 2)
    throw UsageError("restricted inverse-Wishart fit needs at least two samples");
  const auto d = samples.front().rows();
  InverseWishartFit out;
  if (d == 1) {
    out.nu = 1.0;
    out.S = Matrix::Ones(1, 1);
    out.converged = true;
    return out;
  }
  const auto m = d - 1;
  std::vector<Matrix> G;
  std::vector<Vector> b;
  G.reserve(samples.size());
  b.reserve(samples.size());
  for (const auto &s : samples) {
    Vector bi = s.block(1, 0, m, 1);
    G.push_back(symmetrize(s.block(1, 1, m, m) - bi * bi.transpose()));
    b.push_back(std::move(bi));
  }
  auto iw = mle_inverse_wishart(G);
  Matrix sumW = Matrix::Zero(m, m);
  Vector sumWb = Vector::Zero(m);
  std::vector<Matrix> W;
  W.reserve(G.size());
  for (std::size_t i = 0; i < G.size(); ++i) {
    W.push_back(spd_inverse(G[i], "restricted inverse-Wishart block"));
    sumW += W.back();
    sumWb += W.back() * b[i];
  }
  const Vector beta = checked_llt(sumW, "GLS normal equations").solve(sumWb);
  double q = 0;
  for (std::size_t i = 0; i < G.size(); ++i) {
    const Vector r = b[i] - beta;
    q += r.dot(W[i] * r);
  }
  const double tau = static_cast<double>(m) * static_cast<double>(G.size()) / q;
  out.nu = iw.nu;
  out.S.resize(d, d);
  out.S(0, 0) = tau;
  out.S.block(1, 0, m, 1) = tau * beta;
  out.S.block(0, 1, 1, m) = tau * beta.transpose();
  out.S.block(1, 1, m, m) = symmetrize(iw.S + tau * beta * beta.transpose());
  out.iterations = iw.iterations;
  out.converged = iw.converged;
  return out;
}

namespace {

struct TnMoments {
  double logZ; // log of the unnormalized integral of exp(eta1 x + eta2 x^2)
  double m[5];
};

TnMoments tn_moments(double mu, double var, double lo, double hi) {
  constexpr double kLog2Pi = 1.8378770664093454836;
  const double s = std::sqrt(var);
  const double a = (lo - mu) / s;
  const double b = (hi - mu) / s;
  const double lz = normal_log_mass(mu, var, lo, hi);
  TnMoments out{};
  out.logZ = lz + 0.5 * (kLog2Pi + std::log(var)) + 0.5 * mu * mu / var;
  const double ra = std::exp(-0.5 * a * a - 0.5 * kLog2Pi - lz);
  const double rb = std::exp(-0.5 * b * b - 0.5 * kLog2Pi - lz);
  out.m[0] = 1.0;
  double lok = 1.0, hik = 1.0; // lo^{k-1}, hi^{k-1}
  for (int k = 1; k <= 4; ++k) {
    const double prev2 = k >= 2 ? out.m[k - 2] : 0.0;
    out.m[k] = mu * out.m[k - 1] + (k - 1) * var * prev2 - s * (hik * rb - lok * ra);
    lok *= lo;
    hik *= hi;
  }
  return out;
}

} // namespace

ScalarFit mle_truncated_normal(const std::vector<double> &x, double lo, double hi) {
  if (x.size() < 2)
    throw UsageError("truncated-normal fit needs at least two samples");
  const double M = static_cast<double>(x.size());
  double s1 = 0, s2 = 0;
  for (double v : x) {
    if (!(v > lo && v < hi))
      throw DataError("truncated-normal fit: sample outside the support");
    s1 += v;
    s2 += v * v;
  }
  const double xbar = s1 / M;
  const double x2bar = s2 / M;
  const double var0 = x2bar - xbar * xbar;
  ScalarFit fit;
  if (!(var0 > 1e-300)) {
    fit.a = xbar;
    fit.b = 1e-12;
    fit.degenerate = true;
    fit.message = "all samples equal";
    return fit;
  }
  auto loglik = [&](double e1, double e2) {
    const double var = -0.5 / e2;
    const double mu = e1 * var;
    return e1 * xbar + e2 * x2bar - tn_moments(mu, var, lo, hi).logZ;
  };
  double e1 = xbar / var0, e2 = -0.5 / var0;
  double ll = loglik(e1, e2);
  for (int it = 1; it <= 200; ++it) {
    fit.iterations = it;
    const double var = -0.5 / e2;
    const double mu = e1 * var;
    const auto mom = tn_moments(mu, var, lo, hi);
    Eigen::Vector2d g(xbar - mom.m[1], x2bar - mom.m[2]);
    Eigen::Matrix2d C;
    C << mom.m[2] - mom.m[1] * mom.m[1], mom.m[3] - mom.m[1] * mom.m[2],
        mom.m[3] - mom.m[1] * mom.m[2], mom.m[4] - mom.m[2] * mom.m[2];
    Eigen::Vector2d step = C.ldlt().solve(g);
    if (!step.allFinite())
      step = g;
    // Newton decrement: scale-free, unlike the raw moment gap.
    if (g.dot(step) < 1e-14 || g.cwiseAbs().maxCoeff() < 1e-10 * std::max(1.0, x2bar)) {
      fit.converged = true;
      break;
    }
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      const double n1 = e1 + t * step(0), n2 = e2 + t * step(1);
      if (!(n2 < 0))
        continue;
      const double nl = loglik(n1, n2);
      if (std::isfinite(nl) && nl >= ll) {
        e1 = n1;
        e2 = n2;
        moved = nl > ll || t * step.norm() > 0;
        ll = nl;
        break;
      }
    }
    if (!moved) {
      fit.converged = true;
      break;
    }
  }
  fit.b = -0.5 / e2;
  fit.a = e1 * fit.b;
  return fit;
}

ScalarFit mle_inverse_gamma(const std::vector<double> &x) {
  if (x.size() < 2)
    throw UsageError("inverse-gamma fit needs at least two samples");
  const double M = static_cast<double>(x.size());
  double sinv = 0, slog = 0;
  for (double v : x) {
    if (!(v > 0))
      throw DataError("inverse-gamma fit: non-positive sample");
    sinv += 1.0 / v;
    slog += std::log(v);
  }
  const double r = std::log(sinv / M) + slog / M;
  ScalarFit fit;
  if (!(r > 1e-14)) {
    fit.a = 1e8;
    fit.b = fit.a * M / sinv;
    fit.degenerate = true;
    fit.message = "all samples equal";
    return fit;
  }
  auto h = [&](double a) { return std::log(a) - bm::digamma(a) - r; };
  double lo = 1e-3, hi = std::max(1.0, 1.0 / r);
  while (h(lo) < 0)
    lo *= 0.5;
  while (h(hi) > 0)
    hi *= 2.0;
  std::uintmax_t iters = 200;
  auto res = bm::tools::toms748_solve(h, lo, hi, bm::tools::eps_tolerance<double>(50),
                                      iters);
  fit.a = 0.5 * (res.first + res.second);
  fit.b = fit.a * M / sinv;
  fit.iterations = static_cast<int>(iters);
  fit.converged = iters < 200;
  return fit;
}

ScalarFit mle_beta(const std::vector<double> &x) {
  if (x.size() < 2)
    throw UsageError("beta fit needs at least two samples");
  const double M = static_cast<double>(x.size());
  double s = 0, ss = 0, sl = 0, sl1 = 0;
  for (double v : x) {
    if (!(v > 0 && v < 1))
      throw DataError("beta fit: sample outside (0, 1)");
    s += v;
    ss += v * v;
    sl += std::log(v);
    sl1 += std::log1p(-v);
  }
  const double mean = s / M;
  const double var = ss / M - mean * mean;
  ScalarFit fit;
  if (!(var > 1e-14 * std::max(mean * mean, 1e-300))) {
    fit.a = mean * 1e8;
    fit.b = (1 - mean) * 1e8;
    fit.degenerate = true;
    fit.message = "degenerate beta fit: all samples equal";
    return fit;
  }
  sl /= M;
  sl1 /= M;
  const double common = std::max(mean * (1 - mean) / var - 1.0, 1e-3);
  double a = mean * common, b = (1 - mean) * common;
  auto ll = [&](double a_, double b_) {
    return (a_ - 1) * sl + (b_ - 1) * sl1 + std::lgamma(a_ + b_) - std::lgamma(a_) -
           std::lgamma(b_);
  };
  double cur = ll(a, b);
  for (int it = 1; it <= 200; ++it) {
    fit.iterations = it;
    const double dab = bm::digamma(a + b);
    Eigen::Vector2d g(sl - bm::digamma(a) + dab, sl1 - bm::digamma(b) + dab);
    if (g.cwiseAbs().maxCoeff() < 1e-12) {
      fit.converged = true;
      break;
    }
    const double tab = bm::trigamma(a + b);
    Eigen::Matrix2d H;
    H << bm::trigamma(a) - tab, -tab, -tab, bm::trigamma(b) - tab;
    Eigen::Vector2d step = H.ldlt().solve(g);
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      const double na = a + t * step(0), nb = b + t * step(1);
      if (!(na > 0 && nb > 0))
        continue;
      const double nl = ll(na, nb);
      if (nl >= cur) {
        a = na;
        b = nb;
        cur = nl;
        moved = true;
        break;
      }
    }
    if (!moved) {
      fit.converged = true;
      break;
    }
  }
  fit.a = a;
  fit.b = b;
  return fit;
}

} // namespace mdfm
