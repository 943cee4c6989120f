// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
// Usage: mdfm_acceptance [criterion ...]   (default: all)

#include "common.hpp"

#include "mdfm/app.hpp"
#include "mdfm/io.hpp"
#include "mdfm/simulate.hpp"
#include "mdfm/vdfm.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>

using namespace mdfm;
using namespace mdfm::test;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char *f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

void progress(const std::string &s) { std::fprintf(stderr, "  .. %s\n", s.c_str()); }

ExperimentConfig desk(Design d, int reps) {
  ExperimentConfig e;
  e.design = d;
  e.replications = reps;
  e.seed = 1;
  e.mcmc.burn_in = 1000;
  e.mcmc.draws = 2000;
  e.mcmc.seed = mcmc_seed(1);
  e.is.draws = 2000;
  e.is.seed = is_seed(1);
  return e;
}

Outcome factor_recovery() {
  auto e = desk(Design::factor_recovery, 3);
  e.n = 10;
  e.k = 10;
  e.T = 200;
  e.p1 = 3;
  e.p2 = 2;
  const json r = run_experiment(e);
  bool ok = r["aggregate"]["complete_replications"] == e.replications;
  std::string d;
  for (const auto &rep : r["results"]) {
    if (rep.contains("error")) {
      d += " rep failed: " + rep["error"].get<std::string>() + ";";
      continue;
    }
    const double mean = rep["mean"], mn = rep["min"];
    ok = ok && mean >= 0.90 && mn >= 0.85;
    d += " mean " + fmt("%.3f", mean) + " min " + fmt("%.3f", mn) + ";";
  }
  return {ok, "3 datasets at (10,10,200),(3,2), 2000 draws after 1000 burn-in:" + d};
}

Outcome dimension_selection() {
  auto e = desk(Design::dimension_scan, 5);
  e.n = 10;
  e.k = 10;
  e.T = 500;
  e.p1 = 3;
  e.p2 = 2;
  e.max_p = 4;
  const json r = run_experiment(e);
  int good = 0;
  std::string d;
  for (const auto &rep : r["results"]) {
    if (rep.contains("error")) {
      d += " error;";
      continue;
    }
    const bool hit = rep.value("argmax_is_true", false);
    const bool a = rep.value("p1_rise_then_fall", false);
    const bool b = rep.value("p2_rise_then_fall", false);
    good += hit && a && b ? 1 : 0;
    d += " argmax " + rep["argmax"].dump() + (a ? " p1-ok" : " p1-no") + (b ? " p2-ok;" : " p2-no;");
  }
  return {good >= 4, std::to_string(good) + "/5 seeds with argmax (3,2) and both patterns:" + d};
}

Outcome mdfm_vs_vdfm() {
  auto e = desk(Design::mdfm_vs_vdfm, 3);
  e.n = 10;
  e.k = 10;
  e.T = 200;
  e.p1 = 2;
  e.p2 = 2;
  e.max_kf = 6;
  e.vdfm_kf = 2;
  const json r = run_experiment(e);
  bool ok = true;
  std::string d;
  for (const auto &rep : r["results"]) {
    if (rep.contains("error")) {
      ok = false;
      d += " error;";
      continue;
    }
    const auto &m = rep["mdfm_truth"];
    const bool wins = m["mdfm_wins"], peak = m["vdfm_peak_kf"] == 4;
    const bool rev = rep["vdfm_truth"]["vdfm_wins"];
    ok = ok && wins && peak && rev;
    d += " mdfm-wins " + std::string(wins ? "yes" : "no") + " peak k_f " +
         m["vdfm_peak_kf"].dump() + " vdfm-truth-wins " + (rev ? "yes;" : "no;");
  }
  return {ok, "3 datasets at (10,10,200):" + d};
}

Outcome exact_vs_approx() {
  auto e = desk(Design::exact_vs_approx, 20);
  e.n = 20;
  e.k = 20;
  e.T = 100;
  e.p1 = 2;
  e.p2 = 2;
  const json r = run_experiment(e);
  const auto &a = r["aggregate"];
  bool ok = true;
  std::string d;
  for (const char *t : {"exact", "cross", "sv"}) {
    const double w = a.value(std::string(t) + "_win_rate", 0.0);
    ok = ok && w >= 0.80;
    d += std::string(" ") + t + " " + fmt("%.2f", w) + ";";
  }
  return {ok, "true-model win rate over 20 datasets:" + d};
}

Outcome estimator_correctness() {
  const int reps = 50, n = 40, N = 2000;
  int inside = 0;
  double worst = 0, nse1 = 0, nse2 = 0, nse4 = 0;
  for (int r = 0; r < reps; ++r) {
    Rng rng(1000 + r);
    ConjugateToy toy;
    toy.x = rng.normal_vector(n);
    toy.y = 0.8 * toy.x + 0.5 * rng.normal_vector(n);
    const double exact = toy.log_ml();
    const auto e1 = toy.is_estimate(2000, N, 5000 + r);
    const double z = (e1.log_ml - exact) / e1.nse;
    worst = std::max(worst, std::abs(z));
    inside += std::abs(z) < 3 ? 1 : 0;
    nse1 += e1.nse;
    nse2 += toy.is_estimate(2000, 2 * N, 5000 + r).nse;
    nse4 += toy.is_estimate(2000, 4 * N, 5000 + r).nse;
  }
  // NSE scales as N^-1/2: doubling N divides it by sqrt(2), and it halves
  // when N quadruples.
  const double r2 = nse1 / nse2, r4 = nse1 / nse4;
  const bool ok = inside == reps && std::abs(r2 / std::sqrt(2.0) - 1) <= 0.2 &&
                  std::abs(r4 / 2 - 1) <= 0.2;
  return {ok, std::to_string(inside) + "/50 within 3 NSE (max |z| " + fmt("%.2f", worst) +
                  "); NSE(N)/NSE(2N) " + fmt("%.3f", r2) + " vs sqrt2, NSE(N)/NSE(4N) " +
                  fmt("%.3f", r4) + " vs 2"};
}

Outcome oracle_equivalences() {
  Rng rng(6);
  std::string d;
  bool ok = true;
  // Integrated likelihood.
  double worst = 0;
  int cases = 0;
  for (int p1 = 1; p1 <= 3; ++p1)
    for (int p2 = 1; p2 <= 3; ++p2)
      for (int q = 1; q <= 2; ++q)
        for (int T = q + 1; T * p1 * p2 <= 12; ++T)
          for (auto vol : {Volatility::none, Volatility::common_sv, Volatility::outlier,
                           Volatility::fat_tail})
            for (auto idio : {Idio::kronecker_cross, Idio::exact_diagonal}) {
              ModelSpec s{p1 + 1, p2 + 1, T, p1, p2, q, vol, idio};
              const auto st = random_state(s, rng);
              const Panel Y = random_panel(s, rng);
              const double dense = dense_integrated_loglik(s, Y, st);
              worst = std::max({worst, std::abs(integrated_loglik(s, Y, st) - dense),
                                std::abs(integrated_loglik_banded(s, Y, st) - dense)});
              ++cases;
            }
  ok = ok && worst <= 1e-8;
  d += " integrated loglik: " + std::to_string(cases) + " instances, max diff " +
       fmt("%.1e", worst) + ";";

  // Constrained Gaussian against analytic conditioning.
  {
    const Matrix mean = rng.normal_matrix(2, 2);
    const Matrix K = random_spd(2, rng), S = random_spd(2, rng);
    Eigen::LLT<Matrix> lk(K);
    LinearConstraint c{Matrix(1, 4), Vector(1)};
    c.M << 1.0, -0.5, 0.25, 2.0;
    c.a0 << 0.7;
    const Matrix C = kron(S, K.inverse());
    const Vector m = vec(mean);
    const Matrix MC = c.M * C;
    const Matrix gain = MC.transpose() * (MC * c.M.transpose()).inverse();
    const Vector cmean = m + gain * (c.a0 - c.M * m);
    const Matrix ccov = C - gain * MC;
    const int N = 100000;
    Vector sum = Vector::Zero(4);
    Matrix sq = Matrix::Zero(4, 4);
    for (int i = 0; i < N; ++i) {
      const Vector v = vec(sample_constrained_gaussian(mean, lk, S, c, rng));
      sum += v;
      sq += v * v.transpose();
    }
    const Vector em = sum / N;
    const Matrix ecov = sq / N - em * em.transpose();
    const double em_err = (em - cmean).norm() / cmean.norm();
    const double ec_err = (ecov - ccov).norm() / ccov.norm();
    ok = ok && em_err < 0.05 && ec_err < 0.05;
    d += " constrained gaussian rel. error mean " + fmt("%.4f", em_err) + " cov " +
         fmt("%.4f", ec_err) + ";";
  }

  // Nobile sampler against the rejection oracle.
  {
    const Matrix S = (Matrix(2, 2) << 1.5, 0.4, 0.4, 1.0).finished();
    const double nu = 6;
    const int N = 10000;
    std::vector<double> nobile, reject;
    bool pivots = true;
    for (int i = 0; i < N; ++i) {
      const Matrix a = sample_restricted_inverse_wishart(nu, S, rng);
      pivots = pivots && std::abs(a(0, 0) - 1) < 1e-12 && is_spd(a);
      nobile.push_back(a(1, 1));
    }
    while (static_cast<int>(reject.size()) < N) {
      const Matrix a = sample_inverse_wishart(nu, S, rng);
      if (std::abs(a(0, 0) - 1.0) < 0.01)
        reject.push_back(a(1, 1));
    }
    const double p = ks_pvalue(nobile, reject);
    ok = ok && pivots && p > 0.01;
    d += " Nobile KS p " + fmt("%.3f", p) + ";";
  }

  // Residual quadratic trace form.
  {
    double rel = 0;
    for (int rep = 0; rep < 5; ++rep) {
      ModelSpec s{5, 4, 8, 2, 2, 1};
      const auto st = random_state(s, rng);
      const Panel Y = random_panel(s, rng);
      const FactorPath f = rng.normal_matrix(s.T, 4);
      const Vector s2 = residual_quadratic(Y, st, f);
      const Matrix Ci = kron(st.cov.sigma_c, st.cov.sigma_r).inverse();
      for (int t = 0; t < s.T; ++t) {
        const Vector e = vec(Y[t]) - kron(st.loadings.B, st.loadings.A) * f.row(t).transpose();
        rel = std::max(rel, std::abs(s2(t) - e.dot(Ci * e)) / std::max(1.0, s2(t)));
      }
    }
    ok = ok && rel <= 1e-10;
    d += " s2 trace form max rel. diff " + fmt("%.1e", rel);
  }
  return {ok, d};
}

Outcome invariants() {
  Rng rng(7);
  std::string d;
  bool ok = true;
  int draws = 0, bad = 0;
  for (auto idio : {Idio::kronecker_cross, Idio::exact_diagonal})
    for (auto vol : {Volatility::none, Volatility::common_sv, Volatility::outlier,
                     Volatility::fat_tail})
      for (int q = 1; q <= 2; ++q) {
        ModelSpec s{5, 4, 60, 2, 2, q, vol, idio};
        auto dgp = dgp_structure_design(5, 4, 60, 2, 2, idio,
                                        vol == Volatility::common_sv ? vol : Volatility::none,
                                        11 + q);
        const auto data = generate_mdfm(dgp);
        McmcConfig c;
        c.burn_in = 100;
        c.draws = 300;
        c.validate_draws = false; // checked here instead
        const auto store = run_chain(s, default_prior(s), c, data.Y);
        for (const auto &st : store.draws) {
          ++draws;
          bool good = check_state(s, st).empty();
          good = good && (st.vol.omegas(s.T).array() > 0).all();
          bad += good ? 0 : 1;
        }
      }
  ok = ok && bad == 0;
  d += std::to_string(draws) + " retained draws over 16 variants, " + std::to_string(bad) +
       " invalid;";

  // Conditionals without data reduce to the prior.
  {
    ModelSpec s{4, 3, 5, 2, 2, 1};
    auto prior = default_prior(s);
    prior.A0 = 0.3 * rng.normal_matrix(s.n, s.p1);
    prior.B0 = 0.3 * rng.normal_matrix(s.k, s.p2);
    const auto st = random_state(s, rng);
    const Panel none;
    const FactorPath f0(0, 4);
    double err = 0;
    for (auto idio : {Idio::kronecker_cross, Idio::exact_diagonal}) {
      s.idio = idio;
      const auto r = loadings_row_posterior(s, prior, none, f0, st);
      const auto c = loadings_col_posterior(s, prior, none, f0, st);
      err = std::max({err, (r.K - prior.V_A.inverse()).norm(),
                      (r.mean - prior.A0.transpose()).norm(), std::abs(r.nu - prior.nu_r),
                      (r.S.diagonal() - prior.S_r.diagonal()).norm(),
                      (c.K - prior.V_B.inverse()).norm(),
                      (c.mean - prior.B0.transpose()).norm(), std::abs(c.nu - prior.nu_c),
                      (c.S.diagonal() - prior.S_c.diagonal()).norm()});
    }
    const auto [shape, scale] = lambda_posterior(s, prior, f0, st.dynamics.rho);
    err = std::max({err, (shape - prior.nu_lambda).norm(), (scale - prior.S_lambda).norm()});
    ok = ok && err < 1e-12;
    d += " zero-data conjugacy max deviation " + fmt("%.1e", err) + ";";
  }

  // Seeds give bit-identical runs.
  {
    const auto a = generate_mdfm(dgp_uniform_design(6, 5, 80, 2, 2, 3));
    const auto b = generate_mdfm(dgp_uniform_design(6, 5, 80, 2, 2, 3));
    bool same = a.Y == b.Y && a.f == b.f;
    ModelSpec s = a.spec;
    s.volatility = Volatility::common_sv;
    McmcConfig c;
    c.burn_in = 50;
    c.draws = 100;
    c.seed = 42;
    const auto x = run_chain(s, default_prior(s), c, a.Y);
    const auto y = run_chain(s, default_prior(s), c, b.Y);
    for (std::size_t i = 0; i < x.draws.size(); ++i)
      same = same && flatten_state(s, x.draws[i]) == flatten_state(s, y.draws[i]);
    same = same && x.factor_mean == y.factor_mean;
    IsConfig is;
    is.draws = 200;
    const auto g = fit_importance_density(x);
    const auto e1 = estimate_log_ml(s, x.prior, a.Y, g, is);
    const auto e2 = estimate_log_ml(s, y.prior, b.Y, fit_importance_density(y), is);
    same = same && e1.log_ml == e2.log_ml && e1.nse == e2.nse;
    ok = ok && same;
    d += std::string(" repeated seeds bit-identical: ") + (same ? "yes" : "no");
  }
  return {ok, d};
}

Outcome empirical_scale_smoke() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = fs::temp_directory_path() / "mdfm_acceptance_smoke";
  fs::remove_all(dir);
  fs::create_directories(dir);
  // A 19 x 10 x 115 panel with a (1,2) factor matrix, cross-correlated errors
  // and common stochastic volatility, written as a long CSV with quarterly
  // time stamps.
  const auto sim = generate_mdfm(
      dgp_structure_design(19, 10, 115, 1, 2, Idio::kronecker_cross, Volatility::common_sv, 2024));
  std::vector<std::string> rows, cols;
  for (int i = 0; i < 19; ++i)
    rows.push_back("country" + std::to_string(i + 1));
  for (int j = 0; j < 10; ++j)
    cols.push_back("indicator" + std::to_string(j + 1));
  std::ostringstream csv;
  csv << "time,row,col,value\n";
  for (int t = 0; t < 115; ++t) {
    char stamp[16];
    std::snprintf(stamp, sizeof stamp, "%d-%02d", 1995 + t / 4, 3 * (t % 4) + 1);
    for (int i = 0; i < 19; ++i)
      for (int j = 0; j < 10; ++j) {
        char v[32];
        std::snprintf(v, sizeof v, "%.17g", 10 + sim.Y[t](i, j));
        csv << stamp << ',' << rows[i] << ',' << cols[j] << ',' << v << '\n';
      }
  }
  atomic_write_text(dir / "panel.csv", csv.str());

  json doc{{"seed", 3},
           {"model", {{"p1", 1}, {"p2", 2}, {"idio", "kronecker-cross"}, {"volatility", "common-sv"}}},
           {"mcmc", {{"burn_in", 1000}, {"draws", 2000}}},
           {"is", {{"draws", 2000}}},
           {"data", {{"path", (dir / "panel.csv").string()}, {"rows", rows}, {"cols", cols},
                     {"preprocess", {"standardize"}}}},
           {"scan", {{"p1", {1, 2}}, {"p2", {1, 2, 3}},
                     {"idio", {"exact-diagonal", "kronecker-cross"}},
                     {"volatility", {"none", "common-sv"}}, {"vdfm_kf", {1, 2, 3, 4, 5}}}}};
  const auto cfg = parse_config(doc);
  const auto data = load_dataset(cfg);
  if (data.T() != 115 || data.n() != 19 || data.k() != 10)
    return {false, "ingested panel has the wrong shape"};
  progress("smoke: fit");
  const auto post = fit(cfg, data);
  save_posterior(post, dir / "posterior");
  const auto back = load_posterior(dir / "posterior");
  const json ml = log_ml(cfg, data, &back);
  progress("smoke: scan");
  const json table = scan(cfg, data);
  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60;
  int failed = 0;
  for (const auto &r : table["rows"])
    failed += r.contains("error") ? 1 : 0;
  const bool ok = minutes < 30 && failed == 0 && std::isfinite(ml["log_ml"].get<double>());
  return {ok, "fit + log-ML + " + std::to_string(table["rows"].size()) +
                  "-model scan in " + fmt("%.1f", minutes) + " min, " +
                  std::to_string(failed) + " failed candidates, best " +
                  table["best"].dump()};
}

} // namespace

int main(int argc, char **argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"factor recovery", factor_recovery},
      {"dimension selection", dimension_selection},
      {"MDFM vs VDFM", mdfm_vs_vdfm},
      {"exact/cross/SV discrimination", exact_vs_approx},
      {"estimator correctness", estimator_correctness},
      {"oracle equivalences", oracle_equivalences},
      {"invariant suite", invariants},
      {"empirical-scale smoke test", empirical_scale_smoke}};
  std::set<int> only;
  for (int i = 1; i < argc; ++i)
    only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id))
      continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception &e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d (%s): %s - %s [%.0fs]\n", id, criteria[i].first.c_str(),
                o.pass ? "PASS" : "FAIL", o.detail.c_str(), s);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
