#include "common.hpp"

#include <doctest.h>

using namespace mdfm;
using namespace mdfm::test;

namespace {

std::vector<ModelSpec> small_specs() {
  std::vector<ModelSpec> out;
  for (int p1 = 1; p1 <= 2; ++p1)
    for (int p2 = 1; p2 <= 2; ++p2)
      for (int q = 1; q <= 2; ++q)
        for (int T = q + 1; T * p1 * p2 <= 12; ++T) {
          ModelSpec s{p1 + 1, p2 + 1, T, p1, p2, q};
          out.push_back(s);
        }
  return out;
}

} // namespace

TEST_CASE("integrated likelihood: Kalman, banded and dense agree") {
  Rng rng(1);
  int cases = 0;
  for (auto s : small_specs())
    for (auto vol : {Volatility::none, Volatility::common_sv, Volatility::outlier}) {
      for (auto idio : {Idio::kronecker_cross, Idio::exact_diagonal}) {
        s.volatility = vol;
        s.idio = idio;
        const auto st = random_state(s, rng);
        const Panel Y = random_panel(s, rng);
        const double dense = dense_integrated_loglik(s, Y, st);
        CHECK(std::abs(integrated_loglik(s, Y, st) - dense) < 1e-8);
        CHECK(std::abs(integrated_loglik_banded(s, Y, st) - dense) < 1e-8);
        ++cases;
      }
    }
  CHECK(cases > 50);
}

TEST_CASE("integrated likelihood with rho = 0 factorizes over periods") {
  Rng rng(2);
  ModelSpec s{4, 3, 10, 2, 2, 1};
  auto st = random_state(s, rng);
  st.dynamics.rho.setZero();
  const Panel Y = random_panel(s, rng);
  CHECK(integrated_loglik(s, Y, st) ==
        doctest::Approx(period_marginal_loglik(s, Y, st)).epsilon(1e-12));
}

TEST_CASE("integrated likelihood is invariant to the Kronecker scale") {
  Rng rng(3);
  ModelSpec s{4, 3, 30, 2, 1, 2};
  auto st = random_state(s, rng);
  const Panel Y = random_panel(s, rng);
  const double a = integrated_loglik(s, Y, st);
  st.cov.sigma_c *= 3.7;
  st.cov.sigma_r /= 3.7;
  CHECK(std::abs(integrated_loglik(s, Y, st) - a) < 1e-10 * std::abs(a));
}

TEST_CASE("log-weight combination") {
  SUBCASE("equal weights") {
    const auto e = combine_log_weights(std::vector<double>(400, -12.5), 20);
    CHECK(e.log_ml == doctest::Approx(-12.5).epsilon(1e-14));
    CHECK(e.ess == doctest::Approx(400).epsilon(1e-12));
    CHECK(e.nse < 1e-12);
    CHECK_FALSE(e.degenerate);
  }
  SUBCASE("one dominant weight is degenerate") {
    std::vector<double> w(1000, -1000.0);
    w[17] = 0;
    const auto e = combine_log_weights(w, 20);
    CHECK(e.degenerate);
    CHECK(e.max_weight_share == doctest::Approx(1.0));
  }
  SUBCASE("all weights zero is a numerical error") {
    std::vector<double> w(100, -std::numeric_limits<double>::infinity());
    CHECK_THROWS_AS(combine_log_weights(w, 20), NumericalError);
  }
}

TEST_CASE("conjugate toy: closed form and IS estimate") {
  Rng rng(4);
  ConjugateToy toy;
  const int n = 40;
  toy.x = rng.normal_vector(n);
  toy.y = 0.8 * toy.x + 0.5 * rng.normal_vector(n);
  // Oracle: y ~ multivariate t; evaluate the Gaussian-IG marginal directly.
  const Matrix Cov = Matrix::Identity(n, n) + toy.V0 * toy.x * toy.x.transpose();
  Eigen::LLT<Matrix> llt(Cov);
  const Vector r = toy.y - toy.x * toy.beta0;
  const double quad = r.dot(llt.solve(r));
  const double a = toy.a0, b = toy.b0;
  const double oracle = std::lgamma(a + n / 2.0) - std::lgamma(a) - 0.5 * n * std::log(2 * b * std::numbers::pi) -
                        0.5 * log_det(llt) - (a + n / 2.0) * std::log1p(quad / (2 * b));
  CHECK(toy.log_ml() == doctest::Approx(oracle).epsilon(1e-12));
  const auto e = toy.is_estimate(2000, 2000, 11);
  CHECK(std::abs(e.log_ml - oracle) < 3 * e.nse + 1e-9);
  CHECK(e.nse > 0);
}

TEST_CASE("importance density: self-consistent refit") {
  Rng rng(5);
  for (auto idio : {Idio::kronecker_cross, Idio::exact_diagonal}) {
    ModelSpec s{4, 3, 40, 2, 1, 1};
    s.idio = idio;
    McmcConfig c;
    c.burn_in = 200;
    c.draws = 400;
    const auto chain = run_chain(s, default_prior(s), c, random_panel(s, rng));
    const auto g0 = fit_importance_density(chain);
    PosteriorStore synthetic = chain;
    synthetic.draws.clear();
    for (int i = 0; i < 10000; ++i)
      synthetic.draws.push_back(sample_importance(g0, rng));
    const auto g1 = fit_importance_density(synthetic);
    auto close = [](const Vector &a, const Vector &b) { return (a - b).norm() <= 0.05 * b.norm(); };
    CHECK(close(g1.a.mean, g0.a.mean));
    CHECK(close(g1.b.mean, g0.b.mean));
    CHECK(close(vec(g1.rho_mean), vec(g0.rho_mean)));
    CHECK(close(g1.lambda_shape, g0.lambda_shape));
    CHECK(close(g1.lambda_scale, g0.lambda_scale));
    if (idio == Idio::kronecker_cross) {
      CHECK(g1.nu_r == doctest::Approx(g0.nu_r).epsilon(0.05));
      CHECK(close(vec(g1.S_r), vec(g0.S_r)));
      CHECK(g1.nu_c == doctest::Approx(g0.nu_c).epsilon(0.05));
      CHECK(close(vec(g1.S_c), vec(g0.S_c)));
    } else {
      CHECK(close(g1.r_shape, g0.r_shape));
      CHECK(close(g1.r_scale, g0.r_scale));
    }
    // Draws of the density are valid states and its log density is finite.
    for (int i = 0; i < 20; ++i) {
      const auto d = sample_importance(g0, rng);
      CHECK(check_state(s, d).empty());
      CHECK(std::isfinite(importance_logpdf(g0, d)));
    }
  }
}

TEST_CASE("row-blocked loadings proposal matches the dense block-diagonal Gaussian") {
  Rng rng(8);
  ModelSpec s{6, 3, 40, 2, 1, 1};
  McmcConfig c;
  c.burn_in = 100;
  c.draws = 300;
  const auto chain = run_chain(s, default_prior(s), c, random_panel(s, rng));
  IsConfig cfg;
  cfg.max_full_cov = 0;
  const auto g = fit_importance_density(chain, cfg);
  REQUIRE_FALSE(g.a.full);
  CHECK(g.a.groups.size() == 5); // row 0 of A has no free entry
  const auto d = g.a.mean.size();
  Matrix cov = Matrix::Zero(d, d);
  for (std::size_t b = 0; b < g.a.groups.size(); ++b) {
    const Matrix &L = g.a.group_chol[b];
    cov(g.a.groups[b], g.a.groups[b]) = L * L.transpose();
  }
  auto dense = g;
  dense.a.full = true;
  dense.a.chol = cov.llt().matrixL();
  dense.a.groups.clear();
  dense.a.group_chol.clear();
  for (int i = 0; i < 10; ++i) {
    const auto x = sample_importance(g, rng);
    CHECK(importance_logpdf(g, x) == doctest::Approx(importance_logpdf(dense, x)).epsilon(1e-12));
  }
  // Entries of different rows are drawn independently.
  Matrix X(4000, d);
  for (int i = 0; i < X.rows(); ++i) {
    const auto x = sample_importance(g, rng);
    int m = 0;
    for (auto [r, col] : free_loading_entries(s.n, s.p1))
      X(i, m++) = x.loadings.A(r, col);
  }
  const Matrix C = X.rowwise() - X.colwise().mean();
  const Matrix S = C.transpose() * C / (X.rows() - 1.0);
  CHECK(std::abs(S(0, d - 1)) < 5 * std::sqrt(S(0, 0) * S(d - 1, d - 1) / X.rows()));
}

TEST_CASE("importance density blocks are proper") {
  // One-dimensional blocks integrate to 1 on a fine grid.
  const double mu = 0.6, var = 0.05;
  double mass = 0;
  const int G = 200000;
  for (int i = 0; i < G; ++i) {
    const double x = -1 + (i + 0.5) * 2.0 / G;
    mass += std::exp(truncated_normal_logpdf(x, mu, var, -1, 1)) * 2.0 / G;
  }
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
  double ig = 0;
  for (int i = 0; i < G; ++i) {
    const double x = (i + 0.5) * 50.0 / G;
    ig += std::exp(inverse_gamma_logpdf(x, 4, 3)) * 50.0 / G;
  }
  CHECK(ig == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("SV proposal precision is tridiagonal") {
  Rng rng(6);
  ModelSpec s{3, 3, 30, 1, 1, 1};
  s.volatility = Volatility::common_sv;
  McmcConfig c;
  c.burn_in = 100;
  c.draws = 200;
  const auto chain = run_chain(s, default_prior(s), c, random_panel(s, rng));
  const auto g = fit_importance_density(chain);
  const auto [d, o] = sv_proposal_precision(g);
  CHECK(d.size() == 30);
  CHECK(o.size() == 29);
  CHECK((d.array() > 0).all());
}

TEST_CASE("log prior is finite on valid states and -inf off them") {
  Rng rng(7);
  ModelSpec s{4, 3, 20, 2, 2, 1};
  const auto prior = default_prior(s);
  auto st = random_state(s, rng);
  CHECK(std::isfinite(log_prior(s, prior, st)));
  st.dynamics.rho(0, 0) = 1.5;
  CHECK(log_prior(s, prior, st) == -std::numeric_limits<double>::infinity());
}
