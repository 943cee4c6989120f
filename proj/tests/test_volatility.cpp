#include "common.hpp"

#include <doctest.h>

using namespace mdfm;
using namespace mdfm::test;

TEST_CASE("residual quadratic equals the vectorized form") {
  Rng rng(1);
  ModelSpec s{4, 3, 6, 2, 2, 1};
  const auto st = random_state(s, rng);
  const Panel Y = random_panel(s, rng);
  const FactorPath f = rng.normal_matrix(6, 4);
  const Vector s2 = residual_quadratic(Y, st, f);
  const Matrix Ci = kron(st.cov.sigma_c, st.cov.sigma_r).inverse();
  for (int t = 0; t < 6; ++t) {
    const Vector e = vec(Y[t]) - kron(st.loadings.B, st.loadings.A) * f.row(t).transpose();
    CHECK(std::abs(s2(t) - e.dot(Ci * e)) < 1e-10 * std::max(1.0, s2(t)));
  }
}

TEST_CASE("SV mode: gradient vanishes and matches finite differences") {
  Rng rng(2);
  for (int rep = 0; rep < 5; ++rep) {
    const int T = 40;
    Vector s2(T);
    for (int t = 0; t < T; ++t)
      s2(t) = rng.chi2(12) * std::exp(0.5 * rng.normal());
    const auto m = sv_posterior_mode(s2, 12, 0.9, 0.1, Vector::Zero(T), 50, 1e-12);
    CHECK(m.converged);
    CHECK(sv_gradient(m.h, s2, 12, 0.9, 0.1).norm() < 1e-8);
    const Vector h = rng.normal_vector(T);
    const Vector g = sv_gradient(h, s2, 12, 0.9, 0.1);
    for (int t = 0; t < T; t += 7) {
      Vector a = h, b = h;
      a(t) += 1e-6;
      b(t) -= 1e-6;
      const double fd = (sv_log_posterior(a, s2, 12, 0.9, 0.1) -
                         sv_log_posterior(b, s2, 12, 0.9, 0.1)) /
                        2e-6;
      CHECK(fd == doctest::Approx(g(t)).epsilon(1e-5));
    }
  }
}

TEST_CASE("SV with zero variance keeps h at zero") {
  Rng rng(3);
  const auto prior = default_prior(ModelSpec{});
  CommonSv sv;
  sv.h = Vector::Constant(10, 0.3);
  sv.sigma_h2 = 0.0;
  sv.phi = 0.5;
  Vector cache;
  sample_common_sv(prior, Vector::Constant(10, 5.0), 4, sv, cache, rng);
  CHECK(sv.h.isZero(0.0));
}

TEST_CASE("SV sampler recovers a simulated volatility path") {
  Rng rng(4);
  const int T = 500, N = 20;
  Vector h(T), s2(T);
  h(0) = rng.normal() * std::sqrt(0.1 / (1 - 0.97 * 0.97));
  for (int t = 1; t < T; ++t)
    h(t) = 0.97 * h(t - 1) + std::sqrt(0.1) * rng.normal();
  for (int t = 0; t < T; ++t)
    s2(t) = std::exp(h(t)) * rng.chi2(N);
  const auto prior = default_prior(ModelSpec{});
  CommonSv sv;
  sv.h = Vector::Zero(T);
  sv.phi = 0.9;
  sv.sigma_h2 = 0.1;
  Vector cache;
  Vector acc = Vector::Zero(T);
  int kept = 0;
  for (int it = 0; it < 3000; ++it) {
    sample_common_sv(prior, s2, N, sv, cache, rng);
    if (it >= 1000) {
      acc += (0.5 * sv.h.array()).exp().matrix();
      ++kept;
    }
  }
  const Vector est = acc / kept;
  const Vector truth = (0.5 * h.array()).exp().matrix();
  const double corr = ((est.array() - est.mean()) * (truth.array() - truth.mean())).sum() /
                      std::sqrt((est.array() - est.mean()).square().sum() *
                                (truth.array() - truth.mean()).square().sum());
  CHECK(corr > 0.8);
}

TEST_CASE("outlier conditional") {
  SUBCASE("probabilities match hand normalization") {
    const double s2 = 40, N = 6, po = 0.1;
    std::vector<double> w(20);
    double z = 0;
    for (int o = 1; o <= 20; ++o) {
      const double prior = o == 1 ? 1 - po : po / 19;
      w[o - 1] = prior * std::pow(o, -N) * std::exp(-0.5 * s2 / (o * o));
      z += w[o - 1];
    }
    const Vector p = outlier_probabilities(s2, N, po);
    for (int o = 0; o < 20; ++o)
      CHECK(std::abs(p(o) - w[o] / z) < 1e-12);

    // Sampled frequencies over a long identical path.
    Rng rng(5);
    const int T = 100000;
    PriorConfig prior = default_prior(ModelSpec{});
    OutlierState st;
    st.p_o = po;
    sample_outliers(prior, Vector::Constant(T, s2), N, st, rng);
    std::vector<double> freq(20, 0.0);
    for (int t = 0; t < T; ++t) {
      REQUIRE(st.o(t) >= 1);
      REQUIRE(st.o(t) <= 20);
      freq[st.o(t) - 1] += 1.0 / T;
    }
    for (int o = 0; o < 3; ++o) {
      const double pr = w[o] / z;
      CHECK(std::abs(freq[o] - pr) < 3 * std::sqrt(pr * (1 - pr) / T) + 1e-12);
    }
  }
  SUBCASE("all ones gives the Beta(a, b + T) conditional") {
    Rng rng(6);
    PriorConfig prior = default_prior(ModelSpec{});
    const int T = 50, R = 20000;
    std::vector<double> draws(R);
    for (auto &d : draws) {
      OutlierState st;
      st.p_o = 0.05;
      // A huge N puts all mass on o = 1.
      sample_outliers(prior, Vector::Zero(T), 1000, st, rng);
      REQUIRE(st.o.sum() == T);
      d = st.p_o;
    }
    const double a = prior.a_po, b = prior.b_po + T;
    const double m = a / (a + b), v = a * b / ((a + b) * (a + b) * (a + b + 1));
    CHECK(std::abs(mean(draws) - m) < 3 * std::sqrt(v / R));
    CHECK(variance(draws) == doctest::Approx(v).epsilon(0.05));
  }
}

TEST_CASE("fat tails with zero residual") {
  Rng rng(7);
  FatTailState st;
  st.dof = 5;
  const int T = 100000;
  const double N = 12;
  sample_fat_tail(Vector::Zero(T), N, st, rng);
  CHECK((st.q2.array() > 0).all());
  // IG((N + l)/2, l/2)
  const double a = 0.5 * (N + 5), b = 2.5;
  const double m = b / (a - 1), v = m * m / (a - 2);
  CHECK(std::abs(st.q2.mean() - m) < 4 * std::sqrt(v / T));
}

TEST_CASE("volatility prior and initial states") {
  for (auto vol : {Volatility::none, Volatility::common_sv, Volatility::outlier,
                   Volatility::fat_tail}) {
    ModelSpec s{3, 3, 20, 1, 1, 1};
    s.volatility = vol;
    const auto prior = default_prior(s);
    const auto v = initial_volatility(s, prior);
    CHECK(v.variant() == vol);
    CHECK((v.omegas(20).array() > 0).all());
    CHECK(std::isfinite(volatility_log_prior(s, prior, v)));
  }
}
