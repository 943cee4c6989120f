#include "common.hpp"

#include <doctest.h>

using namespace mdfm;
using namespace mdfm::test;

TEST_CASE("common component") {
  Rng rng(1);
  SUBCASE("zero factor gives zero matrix") {
    const Loadings L = enforce_identification(rng.normal_matrix(4, 2), rng.normal_matrix(3, 2));
    CHECK(common_component(L, Vector::Zero(4)).isZero(0.0));
  }
  SUBCASE("scalar factor with unit loadings") {
    Loadings L{Matrix::Ones(3, 1), Matrix::Ones(2, 1)};
    const Matrix C = common_component(L, Vector::Constant(1, 2.5));
    CHECK(C(0, 0) == 2.5);
    CHECK((C - Matrix::Constant(3, 2, 2.5)).norm() == 0.0);
  }
  SUBCASE("bilinear form equals the Kronecker form") {
    const Loadings L{rng.normal_matrix(3, 2), rng.normal_matrix(2, 2)};
    const Vector f = rng.normal_vector(4);
    const Vector lhs = vec(common_component(L, f));
    const Vector rhs = kron(L.B, L.A) * f;
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("wrong factor length is a usage error") {
    Loadings L{Matrix::Ones(3, 1), Matrix::Ones(2, 1)};
    CHECK_THROWS_AS(common_component(L, Vector::Zero(2)), UsageError);
  }
}

TEST_CASE("identification") {
  Rng rng(2);
  SUBCASE("identity input is unchanged") {
    const Loadings L = enforce_identification(Matrix::Identity(4, 3), Matrix::Identity(3, 2));
    CHECK(L.A == Matrix::Identity(4, 3));
    CHECK(L.B == Matrix::Identity(3, 2));
  }
  SUBCASE("dense input satisfies the invariants and is idempotent") {
    const Matrix A = rng.normal_matrix(6, 3), B = rng.normal_matrix(5, 2);
    const Loadings L = enforce_identification(A, B);
    CHECK(satisfies_identification(L));
    for (int j = 0; j < 3; ++j) {
      CHECK(L.A(j, j) == 1.0);
      for (int i = 0; i < j; ++i)
        CHECK(L.A(i, j) == 0.0);
    }
    CHECK(L.A.bottomRows(3) == A.bottomRows(3));
    const Loadings L2 = enforce_identification(L.A, L.B);
    CHECK(L2.A == L.A);
    CHECK(L2.B == L.B);
  }
  SUBCASE("free entries are the strict lower triangle and the tail rows") {
    const auto e = free_loading_entries(4, 2);
    // rows 1..3 of column 0, rows 2..3 of column 1
    CHECK(e.size() == 5);
  }
}

TEST_CASE("validate_spec") {
  SUBCASE("paper-sized configuration is valid") {
    ModelSpec s{10, 10, 500, 3, 2, 1};
    CHECK(validate_spec(s, default_prior(s)).empty());
  }
  SUBCASE("p1 > n is reported") {
    ModelSpec s{2, 3, 50, 3, 1, 1};
    const auto d = validate_spec(s, default_prior(ModelSpec{3, 3, 50, 3, 1, 1}));
    REQUIRE_FALSE(d.empty());
    CHECK(d.front().field == "p1");
  }
  SUBCASE("improper row prior is reported") {
    ModelSpec s{4, 3, 50, 2, 1, 1};
    auto p = default_prior(s);
    p.nu_r = s.n + 1;
    const auto d = validate_spec(s, p);
    REQUIRE(d.size() == 1);
    CHECK(d.front().field == "nu_r");
    CHECK(d.front().message.find("improper") != std::string::npos);
  }
  SUBCASE("every violation is listed") {
    ModelSpec s{4, 3, 50, 2, 1, 1};
    auto p = default_prior(s);
    p.nu_r = 1;
    p.nu_c = 1;
    CHECK(validate_spec(s, p).size() == 2);
  }
}

TEST_CASE("omega by volatility variant") {
  VolatilityState none;
  CHECK(none.omega(0) == 1.0);
  CHECK(none.omega(17) == 1.0);
  CommonSv sv;
  sv.h = Vector::Zero(5);
  CHECK(VolatilityState{sv}.omega(3) == 1.0);
  OutlierState o;
  o.o = Eigen::VectorXi::Constant(4, 3);
  CHECK(VolatilityState{o}.omega(2) == 9.0);
  FatTailState f;
  f.q2 = Vector::Constant(3, 2.5);
  CHECK(VolatilityState{f}.omega(1) == 2.5);
}

TEST_CASE("kronecker gaussian density equals the dense density") {
  Rng rng(3);
  const Matrix Sr = random_spd(3, rng), Sc = random_spd(2, rng);
  const Matrix E = rng.normal_matrix(3, 2);
  const Matrix C = 1.7 * kron(Sc, Sr);
  Eigen::LLT<Matrix> llt(C);
  const Vector z = llt.matrixL().solve(vec(E));
  const double dense = -0.5 * (6 * std::log(2 * std::numbers::pi) + log_det(llt) + z.squaredNorm());
  CHECK(kron_gaussian_logpdf(E, Sr, Sc, 1.7) == doctest::Approx(dense).epsilon(1e-12));
}

TEST_CASE("stationarity") {
  CHECK(is_stationary(Vector::Constant(1, 0.99)));
  CHECK_FALSE(is_stationary(Vector::Constant(1, 1.0)));
  CHECK_FALSE(is_stationary((Vector(2) << 0.5, 0.6).finished()));
  CHECK(is_stationary((Vector(2) << 0.4, 0.3).finished()));
}

TEST_CASE("check_state flags each broken invariant") {
  Rng rng(4);
  ModelSpec s{4, 3, 20, 2, 2, 1};
  const auto good = random_state(s, rng);
  CHECK(check_state(s, good).empty());
  auto bad = good;
  bad.loadings.A(0, 1) = 0.1;
  CHECK_FALSE(check_state(s, bad).empty());
  bad = good;
  bad.cov.sigma_c(0, 0) = 1.1;
  CHECK_FALSE(check_state(s, bad).empty());
  bad = good;
  bad.dynamics.rho(0, 0) = 1.2;
  CHECK_FALSE(check_state(s, bad).empty());
  bad = good;
  bad.cov.sigma_r(0, 0) = -1;
  CHECK_FALSE(check_state(s, bad).empty());
  bad = good;
  bad.dynamics.lambda2(1) = 0;
  CHECK_FALSE(check_state(s, bad).empty());
}
