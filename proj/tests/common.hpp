#pragma once

#include "mdfm/errors.hpp"
#include "mdfm/gibbs.hpp"
#include "mdfm/importance.hpp"
#include "mdfm/volatility.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace mdfm::test {

inline Matrix random_spd(int d, Rng &rng, double ridge = 0.5) {
  const Matrix G = rng.normal_matrix(d, d);
  return G * G.transpose() / d + ridge * Matrix::Identity(d, d);
}

/// Random valid state: identified loadings, SPD covariances with
/// sigma_c(0,0) = 1, stationary rho, positive lambda2 and volatility.
inline ParameterState random_state(const ModelSpec &s, Rng &rng) {
  ParameterState st;
  st.loadings = enforce_identification(rng.normal_matrix(s.n, s.p1),
                                       rng.normal_matrix(s.k, s.p2));
  if (s.idio == Idio::exact_diagonal) {
    st.cov.sigma_r = (0.3 + rng.normal_vector(s.n).array().abs()).matrix().asDiagonal();
    st.cov.sigma_c = (0.3 + rng.normal_vector(s.k).array().abs()).matrix().asDiagonal();
  } else {
    st.cov.sigma_r = random_spd(s.n, rng);
    st.cov.sigma_c = random_spd(s.k, rng);
  }
  const double c = st.cov.sigma_c(0, 0);
  st.cov.sigma_c /= c;
  st.cov.sigma_r *= c;
  const int p = s.factor_count();
  st.dynamics.rho = Matrix(p, s.q);
  for (int j = 0; j < p; ++j) {
    for (int l = 0; l < s.q; ++l)
      st.dynamics.rho(j, l) = (0.6 / s.q) * (2 * rng.uniform() - 1);
  }
  st.dynamics.lambda2 = (0.5 + rng.normal_vector(p).array().abs()).matrix();
  switch (s.volatility) {
  case Volatility::none:
    break;
  case Volatility::common_sv: {
    CommonSv sv;
    sv.h = 0.5 * rng.normal_vector(s.T);
    sv.phi = 0.8;
    sv.sigma_h2 = 0.2;
    st.vol.payload = sv;
    break;
  }
  case Volatility::outlier: {
    OutlierState o;
    o.o = Eigen::VectorXi::Ones(s.T);
    for (int t = 0; t < s.T; t += 3)
      o.o(t) = 1 + (t % 5);
    o.p_o = 0.1;
    st.vol.payload = o;
    break;
  }
  case Volatility::fat_tail: {
    FatTailState f;
    f.q2 = (0.5 + rng.normal_vector(s.T).array().abs()).matrix();
    st.vol.payload = f;
    break;
  }
  }
  return st;
}

inline Panel random_panel(const ModelSpec &s, Rng &rng) {
  Panel Y(s.T);
  for (auto &y : Y)
    y = rng.normal_matrix(s.n, s.k);
  return Y;
}

/// Prior covariance of the stacked path (index t * p + j), built from the
/// AR recursion f_t = sum rho_l f_{t-l} + u_t with f_t = u_t for t < q.
inline Matrix dense_path_covariance(const ModelSpec &s, const FactorDynamics &d) {
  const int p = s.factor_count(), T = s.T;
  Matrix G = Matrix::Identity(T * p, T * p);
  Vector var(T * p);
  for (int j = 0; j < p; ++j) {
    const double ss = d.rho.row(j).squaredNorm();
    for (int t = 0; t < T; ++t) {
      if (t < s.q) {
        var(t * p + j) = d.lambda2(j) / (1 - ss);
      } else {
        var(t * p + j) = d.lambda2(j);
        for (int l = 1; l <= s.q; ++l)
          G(t * p + j, (t - l) * p + j) = -d.rho(j, l - 1);
      }
    }
  }
  const Matrix Gi = G.inverse();
  return Gi * var.asDiagonal() * Gi.transpose();
}

/// log N(vec Y; 0, H V H' + blockdiag(omega_t Sc (x) Sr)), fully dense.
inline double dense_integrated_loglik(const ModelSpec &s, const Panel &Y,
                                      const ParameterState &st) {
  const int p = s.factor_count(), T = s.T, N = s.n * s.k;
  const Matrix H1 = kron(st.loadings.B, st.loadings.A);
  Matrix H = Matrix::Zero(T * N, T * p);
  for (int t = 0; t < T; ++t)
    H.block(t * N, t * p, N, p) = H1;
  Matrix C = H * dense_path_covariance(s, st.dynamics) * H.transpose();
  const Matrix R = kron(st.cov.sigma_c, st.cov.sigma_r);
  Vector y(T * N);
  for (int t = 0; t < T; ++t) {
    C.block(t * N, t * N, N, N) += st.vol.omega(t) * R;
    y.segment(t * N, N) = vec(Y[t]);
  }
  Eigen::LLT<Matrix> llt(C);
  const Vector z = llt.matrixL().solve(y);
  return -0.5 * (T * N * std::log(2 * std::numbers::pi) + log_det(llt) + z.squaredNorm());
}

inline double mean(const std::vector<double> &x) {
  double s = 0;
  for (double v : x)
    s += v;
  return s / x.size();
}

inline double variance(const std::vector<double> &x) {
  const double m = mean(x);
  double s = 0;
  for (double v : x)
    s += (v - m) * (v - m);
  return s / (x.size() - 1);
}

/// Two-sample Kolmogorov-Smirnov p-value (asymptotic).
inline double ks_pvalue(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x)
      ++i;
    while (j < b.size() && b[j] <= x)
      ++j;
    d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  const double ne = double(a.size()) * b.size() / (a.size() + b.size());
  const double lam = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  double p = 0;
  for (int k = 1; k <= 100; ++k)
    p += 2 * std::pow(-1.0, k - 1) * std::exp(-2 * lam * lam * k * k);
  return std::clamp(p, 0.0, 1.0);
}

} // namespace mdfm::test
