#include "mdfm/simulate.hpp"

#include "mdfm/errors.hpp"
#include "mdfm/io.hpp"
#include "mdfm/vdfm.hpp"
#include "mdfm/volatility.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace mdfm {

using nlohmann::json;

std::string to_string(LoadingLaw l) {
  switch (l) {
  case LoadingLaw::uniform01:
    return "uniform01";
  case LoadingLaw::normal:
    return "normal";
  case LoadingLaw::uniform_pm1:
    return "uniform-pm1";
  }
  return "?";
}

std::string to_string(CovLaw l) {
  return l == CovLaw::scaled_identity ? "scaled-identity" : "inverse-wishart";
}

LoadingLaw loading_law_from_string(const std::string &s) {
  if (s == "uniform01")
    return LoadingLaw::uniform01;
  if (s == "normal")
    return LoadingLaw::normal;
  if (s == "uniform-pm1")
    return LoadingLaw::uniform_pm1;
  throw UsageError("unknown loading law '" + s + "'");
}

CovLaw cov_law_from_string(const std::string &s) {
  if (s == "scaled-identity")
    return CovLaw::scaled_identity;
  if (s == "inverse-wishart")
    return CovLaw::inverse_wishart;
  throw UsageError("unknown covariance law '" + s + "'");
}

std::string to_string(Design d) {
  switch (d) {
  case Design::factor_recovery:
    return "factor-recovery";
  case Design::dimension_scan:
    return "dimension-scan";
  case Design::mdfm_vs_vdfm:
    return "mdfm-vs-vdfm";
  case Design::exact_vs_approx:
    return "exact-vs-approx";
  }
  return "?";
}

Design design_from_string(const std::string &s) {
  for (auto d : {Design::factor_recovery, Design::dimension_scan, Design::mdfm_vs_vdfm,
                 Design::exact_vs_approx})
    if (to_string(d) == s)
      return d;
  throw UsageError("unknown design '" + s + "'");
}

DgpConfig dgp_uniform_design(int n, int k, int T, int p1, int p2, std::uint64_t seed) {
  DgpConfig c;
  c.spec = ModelSpec{n, k, T, p1, p2, 1, Volatility::none, Idio::kronecker_cross,
                     Identification::unit_loadings};
  c.seed = seed;
  return c;
}

DgpConfig dgp_structure_design(int n, int k, int T, int p1, int p2, Idio idio,
                               Volatility vol, std::uint64_t seed) {
  DgpConfig c;
  c.spec = ModelSpec{n, k, T, p1, p2, 1, vol, idio, Identification::unit_loadings};
  c.loading_law = LoadingLaw::normal;
  c.loading_sd = 0.3;
  c.cov_law = CovLaw::inverse_wishart;
  c.lambda2 = 0.1;
  c.seed = seed;
  return c;
}

namespace {

double uniform(Rng &rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

Matrix draw_loadings(LoadingLaw law, double sd, int m, int p, Rng &rng) {
  Matrix L(m, p);
  for (int j = 0; j < p; ++j)
    for (int i = 0; i < m; ++i) {
      switch (law) {
      case LoadingLaw::uniform01:
        L(i, j) = rng.uniform();
        break;
      case LoadingLaw::normal:
        L(i, j) = sd * rng.normal();
        break;
      case LoadingLaw::uniform_pm1:
        L(i, j) = uniform(rng, -1.0, 1.0);
        break;
      }
    }
  return L;
}

FactorPath simulate_factors(const FactorDynamics &dyn, int T, int q, Rng &rng) {
  const auto p = dyn.lambda2.size();
  FactorPath f(T, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double l2 = dyn.lambda2(j);
    const double v0 = l2 / (1.0 - dyn.rho.row(j).squaredNorm());
    for (int t = 0; t < T; ++t) {
      if (t < q) {
        f(t, j) = std::sqrt(v0) * rng.normal();
        continue;
      }
      double m = 0;
      for (int s = 1; s <= q; ++s)
        m += dyn.rho(j, s - 1) * f(t - s, j);
      f(t, j) = m + std::sqrt(l2) * rng.normal();
    }
  }
  return f;
}

VolatilityState simulate_volatility(const DgpConfig &c, Rng &rng) {
  const int T = c.spec.T;
  VolatilityState v;
  switch (c.spec.volatility) {
  case Volatility::none:
    break;
  case Volatility::common_sv: {
    CommonSv sv;
    sv.phi = c.sv_phi;
    sv.sigma_h2 = c.sv_sigma_h2;
    sv.h.resize(T);
    for (int t = 0; t < T; ++t)
      sv.h(t) = t == 0 ? std::sqrt(sv.sigma_h2 / (1 - sv.phi * sv.phi)) * rng.normal()
                       : sv.phi * sv.h(t - 1) + std::sqrt(sv.sigma_h2) * rng.normal();
    v.payload = sv;
    break;
  }
  case Volatility::outlier: {
    OutlierState o;
    o.p_o = c.outlier_p;
    o.o.resize(T);
    for (int t = 0; t < T; ++t)
      o.o(t) = rng.uniform() < c.outlier_p
                   ? 2 + std::min(kOutlierGridMax - 2,
                                  static_cast<int>(rng.uniform() * (kOutlierGridMax - 1)))
                   : 1;
    v.payload = o;
    break;
  }
  case Volatility::fat_tail: {
    FatTailState ft;
    ft.dof = c.fat_dof;
    ft.q2.resize(T);
    for (int t = 0; t < T; ++t)
      ft.q2(t) = sample_inverse_gamma(0.5 * ft.dof, 0.5 * ft.dof, rng);
    v.payload = ft;
    break;
  }
  }
  return v;
}

Panel simulate_panel(const ParameterState &s, const FactorPath &f, int T, Rng &rng) {
  const Eigen::LLT<Matrix> lr(s.cov.sigma_r), lc(s.cov.sigma_c);
  const Matrix Lr = lr.matrixL(), Lc = lc.matrixL();
  const Vector w = s.vol.omegas(T);
  Panel Y;
  Y.reserve(T);
  for (int t = 0; t < T; ++t) {
    const Matrix Z = rng.normal_matrix(Lr.rows(), Lc.rows());
    Y.push_back(common_component(s.loadings, f.row(t).transpose()) +
                std::sqrt(w(t)) * Lr * Z * Lc.transpose());
  }
  return Y;
}

} // namespace

SimulatedData generate_mdfm(const DgpConfig &c) {
  const auto &spec = c.spec;
  const auto diags = validate_spec(spec, default_prior(spec));
  if (!diags.empty())
    throw UsageError("dgp spec: " + diags.front().field + ": " + diags.front().message);
  Rng rng(c.seed);
  SimulatedData d;
  d.spec = spec;
  auto &s = d.truth;
  s.loadings = enforce_identification(draw_loadings(c.loading_law, c.loading_sd, spec.n, spec.p1, rng),
                                      draw_loadings(c.loading_law, c.loading_sd, spec.k, spec.p2, rng));
  Matrix sr, sc;
  if (c.cov_law == CovLaw::scaled_identity) {
    sr = c.sigma_r_scale * Matrix::Identity(spec.n, spec.n);
    sc = c.sigma_c_scale * Matrix::Identity(spec.k, spec.k);
  } else {
    sr = sample_inverse_wishart(spec.n + c.iw_extra_dof, Matrix::Identity(spec.n, spec.n), rng);
    sc = sample_inverse_wishart(spec.k + c.iw_extra_dof, Matrix::Identity(spec.k, spec.k), rng);
  }
  if (spec.idio == Idio::exact_diagonal) {
    sr = Matrix(sr.diagonal().asDiagonal());
    sc = Matrix(sc.diagonal().asDiagonal());
  }
  // Same Kronecker product, identified scale.
  const double m = sc(0, 0);
  s.cov.sigma_c = symmetrize(sc / m);
  s.cov.sigma_c(0, 0) = 1.0;
  s.cov.sigma_r = symmetrize(sr * m);

  const int p = spec.factor_count();
  s.dynamics.rho.resize(p, spec.q);
  for (int j = 0; j < p; ++j) {
    // Only the first lag carries the drawn coefficient when q > 1.
    s.dynamics.rho.row(j).setZero();
    s.dynamics.rho(j, 0) = uniform(rng, c.rho_lo, c.rho_hi);
  }
  s.dynamics.lambda2 = Vector::Constant(p, c.lambda2);
  s.vol = simulate_volatility(c, rng);
  d.f = simulate_factors(s.dynamics, spec.T, spec.q, rng);
  d.Y = simulate_panel(s, d.f, spec.T, rng);
  return d;
}

SimulatedData generate_vdfm(const VdfmDgpConfig &c) {
  const int nk = c.n * c.k;
  if (c.k_f < 1 || c.k_f > nk || c.T <= c.q || c.q < 1)
    throw UsageError("invalid VDFM design dimensions");
  Rng rng(c.seed);
  SimulatedData d;
  d.spec = to_model_spec(VdfmSpec{nk, c.k_f, c.T, c.q, Volatility::none});
  auto &s = d.truth;
  Matrix M(nk, c.k_f);
  for (int j = 0; j < c.k_f; ++j)
    for (int i = 0; i < nk; ++i)
      M(i, j) = uniform(rng, c.loading_lo, c.loading_hi);
  s.loadings = enforce_identification(M, Matrix::Ones(1, 1));
  s.cov.sigma_r = c.idio_var * Matrix::Identity(nk, nk);
  s.cov.sigma_c = Matrix::Ones(1, 1);
  s.dynamics.rho = Matrix::Zero(c.k_f, c.q);
  for (int j = 0; j < c.k_f; ++j)
    s.dynamics.rho(j, 0) = uniform(rng, c.rho_lo, c.rho_hi);
  s.dynamics.lambda2 = Vector::Constant(c.k_f, c.factor_var);
  d.f = simulate_factors(s.dynamics, c.T, c.q, rng);
  for (int t = 0; t < c.T; ++t) {
    const Vector y = s.loadings.A * d.f.row(t).transpose() +
                     std::sqrt(c.idio_var) * rng.normal_vector(nk);
    d.Y.push_back(unvec(y, c.n, c.k));
  }
  return d;
}

Vector adjusted_r2(const FactorPath &truth, const FactorPath &est) {
  if (truth.rows() != est.rows() || truth.cols() != est.cols())
    throw UsageError("adjusted_r2: factor paths differ in shape");
  const auto T = truth.rows();
  Vector out(truth.cols());
  for (Eigen::Index j = 0; j < truth.cols(); ++j) {
    const Vector y = truth.col(j).array() - truth.col(j).mean();
    const Vector x = est.col(j).array() - est.col(j).mean();
    const double sxx = x.squaredNorm(), syy = y.squaredNorm();
    if (!(sxx > 0) || !(syy > 0) || T < 3) {
      out(j) = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    const double sxy = x.dot(y);
    const double r2 = sxy * sxy / (sxx * syy);
    out(j) = 1.0 - (1.0 - r2) * static_cast<double>(T - 1) / static_cast<double>(T - 2);
  }
  return out;
}

bool rise_then_fall(const std::vector<double> &v, int peak) {
  if (peak < 0 || peak >= static_cast<int>(v.size()))
    return false;
  for (int i = 1; i <= peak; ++i)
    if (!(v[i] > v[i - 1]))
      return false;
  for (int i = peak + 1; i < static_cast<int>(v.size()); ++i)
    if (!(v[i] < v[i - 1]))
      return false;
  return true;
}

// ---- experiments ----

namespace {

std::string csv_field(const std::string &s) {
  if (s.find_first_of(",\"\n") == std::string::npos)
    return s;
  std::string out = "\"";
  for (char ch : s)
    out += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return out + "\"";
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct CsvRow {
  std::string truth;
  int replication = 0;
  std::string model;
  std::string metric = "log_ml";
  double log_ml = std::numeric_limits<double>::quiet_NaN();
  double nse = std::numeric_limits<double>::quiet_NaN();
  double diff = std::numeric_limits<double>::quiet_NaN();
  std::string error;
};

std::string num(double v) {
  if (!std::isfinite(v))
    return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Appends scan rows with the log-ML difference to the true model.
void append_scan(std::vector<CsvRow> &rows, const std::string &truth, int rep,
                 const ScanTable &t, const std::string &true_label) {
  const ScanRow *tr = t.find(true_label);
  const double base =
      tr && tr->estimate ? tr->estimate->log_ml : std::numeric_limits<double>::quiet_NaN();
  for (const auto &r : t.rows) {
    CsvRow c{truth, rep, r.candidate.label, "log_ml", kNaN, kNaN, kNaN, ""};
    if (r.estimate) {
      c.log_ml = r.estimate->log_ml;
      c.nse = r.estimate->nse;
      c.diff = c.log_ml - base;
    } else {
      c.error = r.error;
    }
    rows.push_back(c);
  }
}

McmcConfig rep_mcmc(const ExperimentConfig &c, int rep) {
  McmcConfig m = c.mcmc;
  m.seed = c.mcmc.seed + 1000003ULL * (rep + 1);
  return m;
}

IsConfig rep_is(const ExperimentConfig &c, int rep) {
  IsConfig s = c.is;
  s.seed = c.is.seed + 1000033ULL * (rep + 1);
  return s;
}

std::uint64_t rep_seed(const ExperimentConfig &c, int rep) {
  return c.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(rep) * 7777 + 1;
}

json run_factor_recovery(const ExperimentConfig &c, int rep, std::vector<CsvRow> &csv) {
  auto dgp = dgp_uniform_design(c.n, c.k, c.T, c.p1, c.p2, rep_seed(c, rep));
  const auto data = generate_mdfm(dgp);
  ModelSpec fit = data.spec;
  fit.idio = c.fit_idio;
  const auto store = run_chain(fit, default_prior(fit), rep_mcmc(c, rep), data.Y);
  const Vector r2 = adjusted_r2(data.f, store.factor_mean);
  json grid = json::array();
  for (int i = 0; i < c.p1; ++i) {
    json row = json::array();
    for (int j = 0; j < c.p2; ++j) {
      const double v = r2(j * c.p1 + i);
      row.push_back(std::isfinite(v) ? json(v) : json(nullptr));
    }
    grid.push_back(row);
  }
  int abs_ok = 0;
  for (double z : store.geweke_z)
    abs_ok += std::isfinite(z) && std::abs(z) < 1.96 ? 1 : 0;
  for (int i = 0; i < c.p1; ++i)
    for (int j = 0; j < c.p2; ++j) {
      CsvRow row{"MDFM", rep, candidate_label(fit, false),
                 "adjusted_r2[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]",
                 kNaN, kNaN, kNaN, ""};
      row.log_ml = r2(j * c.p1 + i);
      csv.push_back(row);
    }
  return json{{"adjusted_r2", grid},
              {"mean", r2.mean()},
              {"min", r2.minCoeff()},
              {"geweke_share_below_1_96",
               store.geweke_z.empty() ? 0.0
                                      : static_cast<double>(abs_ok) / store.geweke_z.size()}};
}

json run_dimension_scan(const ExperimentConfig &c, int rep, std::vector<CsvRow> &csv) {
  auto dgp = dgp_uniform_design(c.n, c.k, c.T, c.p1, c.p2, rep_seed(c, rep));
  const auto data = generate_mdfm(dgp);
  std::vector<Candidate> cands;
  for (int a = 1; a <= c.max_p; ++a)
    for (int b = 1; b <= c.max_p; ++b) {
      ModelSpec s = data.spec;
      s.p1 = a;
      s.p2 = b;
      s.idio = c.fit_idio;
      if (a > s.n || b > s.k)
        continue;
      cands.push_back({candidate_label(s, false), s, false, std::nullopt});
    }
  const auto table = ml_model_scan(data.Y, cands, rep_mcmc(c, rep), rep_is(c, rep));
  ModelSpec ts = data.spec;
  ts.idio = c.fit_idio;
  const std::string true_label = candidate_label(ts, false);
  append_scan(csv, "MDFM(" + std::to_string(c.p1) + "," + std::to_string(c.p2) + ")", rep,
              table, true_label);
  const int best = table.best();
  json out{{"scan", scan_json(table)}, {"table", format_scan_table(table)}};
  if (best >= 0) {
    const auto &bs = table.rows[best].candidate.spec;
    out["argmax"] = {bs.p1, bs.p2};
    out["argmax_is_true"] = bs.p1 == c.p1 && bs.p2 == c.p2;
  }
  auto axis = [&](bool rows_axis) {
    std::vector<double> v;
    for (int x = 1; x <= c.max_p; ++x) {
      ModelSpec s = ts;
      (rows_axis ? s.p1 : s.p2) = x;
      const ScanRow *r = table.find(candidate_label(s, false));
      v.push_back(r && r->estimate ? r->estimate->log_ml
                                   : std::numeric_limits<double>::quiet_NaN());
    }
    return v;
  };
  const auto v1 = axis(true), v2 = axis(false);
  out["p1_axis"] = v1;
  out["p2_axis"] = v2;
  out["p1_rise_then_fall"] = rise_then_fall(v1, c.p1 - 1);
  out["p2_rise_then_fall"] = rise_then_fall(v2, c.p2 - 1);
  return out;
}

json run_mdfm_vs_vdfm(const ExperimentConfig &c, int rep, std::vector<CsvRow> &csv) {
  json out;
  {
    auto dgp = dgp_uniform_design(c.n, c.k, c.T, c.p1, c.p2, rep_seed(c, rep));
    const auto data = generate_mdfm(dgp);
    ModelSpec ms = data.spec;
    ms.idio = c.compare_idio;
    std::vector<Candidate> cands{{candidate_label(ms, false), ms, false, std::nullopt}};
    for (int kf = 1; kf <= c.max_kf; ++kf) {
      ModelSpec vs = to_model_spec(VdfmSpec{c.n * c.k, kf, c.T, 1, Volatility::none});
      cands.push_back({candidate_label(vs, true), vs, true, std::nullopt});
    }
    const auto table = ml_model_scan(data.Y, cands, rep_mcmc(c, rep), rep_is(c, rep));
    append_scan(csv, "MDFM", rep, table, cands[0].label);
    std::vector<double> curve;
    for (std::size_t i = 1; i < table.rows.size(); ++i)
      curve.push_back(table.rows[i].estimate ? table.rows[i].estimate->log_ml
                                             : std::numeric_limits<double>::quiet_NaN());
    int peak = -1;
    for (int i = 0; i < static_cast<int>(curve.size()); ++i)
      if (std::isfinite(curve[i]) && (peak < 0 || curve[i] > curve[peak]))
        peak = i;
    const auto &t0 = table.rows[0];
    bool wins = t0.estimate.has_value();
    for (double v : curve)
      wins = wins && (!std::isfinite(v) || v < t0.estimate->log_ml);
    out["mdfm_truth"] = json{{"scan", scan_json(table)},
                             {"table", format_scan_table(table)},
                             {"vdfm_curve", curve},
                             {"vdfm_peak_kf", peak + 1},
                             {"expected_peak_kf", c.p1 * c.p2},
                             {"mdfm_wins", wins}};
  }
  if (c.reverse) {
    VdfmDgpConfig vc;
    vc.n = c.n;
    vc.k = c.k;
    vc.T = c.T;
    vc.k_f = c.vdfm_kf;
    vc.seed = rep_seed(c, rep) + 99;
    const auto data = generate_vdfm(vc);
    std::vector<Candidate> cands{{candidate_label(data.spec, true), data.spec, true,
                                  std::nullopt}};
    for (auto [a, b] : {std::pair{1, 1}, {1, 2}, {2, 1}, {2, 2}}) {
      ModelSpec ms{c.n, c.k, c.T, a, b, 1, Volatility::none, c.compare_idio,
                   Identification::unit_loadings};
      cands.push_back({candidate_label(ms, false), ms, false, std::nullopt});
    }
    const auto table = ml_model_scan(data.Y, cands, rep_mcmc(c, rep), rep_is(c, rep));
    append_scan(csv, "VDFM", rep, table, cands[0].label);
    out["vdfm_truth"] = json{{"scan", scan_json(table)},
                             {"table", format_scan_table(table)},
                             {"vdfm_wins", table.best() == 0}};
  }
  return out;
}

json run_exact_vs_approx(const ExperimentConfig &c, int rep, std::vector<CsvRow> &csv) {
  struct Truth {
    const char *name;
    Idio idio;
    Volatility vol;
  };
  const Truth truths[] = {{"exact", Idio::exact_diagonal, Volatility::none},
                          {"cross", Idio::kronecker_cross, Volatility::none},
                          {"sv", Idio::exact_diagonal, Volatility::common_sv}};
  json out;
  int ti = 0;
  for (const auto &tr : truths) {
    auto dgp = dgp_structure_design(c.n, c.k, c.T, c.p1, c.p2, tr.idio, tr.vol,
                                    rep_seed(c, rep) + 31 * ti++);
    const auto data = generate_mdfm(dgp);
    std::vector<Candidate> cands;
    for (const auto &m : truths) {
      ModelSpec s = data.spec;
      s.idio = m.idio;
      s.volatility = m.vol;
      cands.push_back({m.name, s, false, std::nullopt});
    }
    const auto table = ml_model_scan(data.Y, cands, rep_mcmc(c, rep), rep_is(c, rep));
    append_scan(csv, tr.name, rep, table, tr.name);
    const int best = table.best();
    out[tr.name] = json{{"scan", scan_json(table)},
                        {"table", format_scan_table(table)},
                        {"winner", best >= 0 ? table.rows[best].candidate.label : ""},
                        {"true_wins", best >= 0 && table.rows[best].candidate.label == tr.name}};
  }
  return out;
}

json aggregate(const ExperimentConfig &c, const json &reps) {
  json agg;
  int complete = 0;
  for (const auto &r : reps)
    complete += r.contains("error") ? 0 : 1;
  agg["complete_replications"] = complete;
  auto rate = [&](auto pred) {
    int hits = 0, n = 0;
    for (const auto &r : reps) {
      if (r.contains("error"))
        continue;
      ++n;
      hits += pred(r) ? 1 : 0;
    }
    return n ? static_cast<double>(hits) / n : 0.0;
  };
  switch (c.design) {
  case Design::factor_recovery: {
    double mean = 0, mn = std::numeric_limits<double>::infinity();
    int n = 0;
    for (const auto &r : reps)
      if (!r.contains("error")) {
        mean += r["mean"].get<double>();
        mn = std::min(mn, r["min"].get<double>());
        ++n;
      }
    agg["mean_adjusted_r2"] = n ? mean / n : 0.0;
    agg["min_adjusted_r2"] = n ? mn : 0.0;
    break;
  }
  case Design::dimension_scan:
    agg["argmax_hit_rate"] = rate([](const json &r) { return r.value("argmax_is_true", false); });
    agg["p1_pattern_rate"] = rate([](const json &r) { return r.value("p1_rise_then_fall", false); });
    agg["p2_pattern_rate"] = rate([](const json &r) { return r.value("p2_rise_then_fall", false); });
    break;
  case Design::mdfm_vs_vdfm:
    agg["mdfm_win_rate"] =
        rate([](const json &r) { return r["mdfm_truth"].value("mdfm_wins", false); });
    agg["vdfm_peak_hit_rate"] = rate([&](const json &r) {
      return r["mdfm_truth"].value("vdfm_peak_kf", 0) == c.p1 * c.p2;
    });
    if (c.reverse)
      agg["vdfm_win_rate"] =
          rate([](const json &r) { return r["vdfm_truth"].value("vdfm_wins", false); });
    break;
  case Design::exact_vs_approx:
    for (const char *t : {"exact", "cross", "sv"})
      agg[std::string(t) + "_win_rate"] =
          rate([&](const json &r) { return r[t].value("true_wins", false); });
    break;
  }
  return agg;
}

} // namespace

nlohmann::json run_experiment(const ExperimentConfig &c) {
  if (c.replications < 1)
    throw UsageError("replications must be >= 1");
  {
    auto d = validate_config(c.mcmc);
    if (!d.empty())
      throw UsageError(d.front().field + ": " + d.front().message);
  }
  namespace fs = std::filesystem;
  json reps = json::array();
  std::vector<CsvRow> csv;
  std::vector<std::string> files;
  for (int rep = 0; rep < c.replications; ++rep) {
    json r;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      switch (c.design) {
      case Design::factor_recovery:
        r = run_factor_recovery(c, rep, csv);
        break;
      case Design::dimension_scan:
        r = run_dimension_scan(c, rep, csv);
        break;
      case Design::mdfm_vs_vdfm:
        r = run_mdfm_vs_vdfm(c, rep, csv);
        break;
      case Design::exact_vs_approx:
        r = run_exact_vs_approx(c, rep, csv);
        break;
      }
    } catch (const std::exception &e) {
      r = json{{"error", e.what()}};
      csv.push_back(CsvRow{"", rep, "", "", std::numeric_limits<double>::quiet_NaN(),
                           std::numeric_limits<double>::quiet_NaN(),
                           std::numeric_limits<double>::quiet_NaN(), e.what()});
    }
    r["replication"] = rep;
    r["seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!c.out_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "rep_%03d.json", rep);
      atomic_write_text(fs::path(c.out_dir) / name, r.dump(2));
      files.emplace_back(name);
    }
    reps.push_back(r);
  }
  json report{{"design", to_string(c.design)},
              {"replications", c.replications},
              {"seed", c.seed},
              {"dims", {{"n", c.n}, {"k", c.k}, {"T", c.T}, {"p1", c.p1}, {"p2", c.p2}}},
              {"mcmc", {{"burn_in", c.mcmc.burn_in}, {"draws", c.mcmc.draws}}},
              {"is_draws", c.is.draws},
              {"aggregate", aggregate(c, reps)},
              {"results", reps}};
  if (!c.out_dir.empty()) {
    const fs::path dir(c.out_dir);
    std::ostringstream os;
    os << "truth,replication,model,metric,value,nse,diff_to_true,error\n";
    for (const auto &r : csv)
      os << csv_field(r.truth) << ',' << r.replication << ',' << csv_field(r.model) << ','
         << csv_field(r.metric) << ','
         << num(r.log_ml) << ',' << num(r.nse) << ',' << num(r.diff) << ','
         << csv_field(r.error) << '\n';
    atomic_write_text(dir / "report.csv", os.str());
    atomic_write_text(dir / "report.json", report.dump(2));
    files.emplace_back("report.csv");
    files.emplace_back("report.json");
    atomic_write_text(dir / "manifest.json",
                      json{{"design", to_string(c.design)}, {"files", files}}.dump(2));
  }
  return report;
}

} // namespace mdfm
