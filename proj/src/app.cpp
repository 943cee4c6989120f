#include "mdfm/app.hpp"

#include "mdfm/errors.hpp"
#include "mdfm/io.hpp"
#include "mdfm/vdfm.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace mdfm {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void require_valid(const ModelSpec &spec, const PriorConfig &prior) {
  const auto d = validate_spec(spec, prior);
  if (d.empty())
    return;
  std::string msg = "model." + d.front().field + ": " + d.front().message;
  for (std::size_t i = 1; i < d.size(); ++i)
    msg += "; model." + d[i].field + ": " + d[i].message;
  throw UsageError(msg);
}

void require_dims(const AppConfig &c) {
  if (!c.has_n || !c.has_k || !c.has_T)
    throw UsageError("model.n, model.k and model.T are required when there is no dataset");
}

json factors_json(const FactorPath &f) {
  json rows = json::array();
  for (Eigen::Index t = 0; t < f.rows(); ++t) {
    json row = json::array();
    for (Eigen::Index j = 0; j < f.cols(); ++j)
      row.push_back(f(t, j));
    rows.push_back(row);
  }
  return rows;
}

std::string num(double v) {
  if (!std::isfinite(v))
    return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

} // namespace

PanelDataset load_dataset(const AppConfig &c) {
  if (!c.data)
    throw UsageError("data: the config has no data section");
  PanelDataset ds = ingest_csv(c.data->path, c.data->layout);
  ds = preprocess(ds, c.data->preprocess);
  if (ds.has_missing())
    throw DataError(c.data->path + ": missing values remain after preprocessing "
                                   "(add impute-wma to data.preprocess)");
  return ds;
}

ModelSpec resolve_spec(const AppConfig &c, const PanelDataset &data) {
  ModelSpec s = c.spec;
  auto match = [](bool has, int cfg, int actual, const char *name) {
    if (has && cfg != actual)
      throw DataError(std::string("model.") + name + " is " + std::to_string(cfg) +
                      " but the data has " + std::to_string(actual));
  };
  match(c.has_n, s.n, data.n(), "n");
  match(c.has_k, s.k, data.k(), "k");
  match(c.has_T, s.T, data.T(), "T");
  s.n = data.n();
  s.k = data.k();
  s.T = data.T();
  if (c.vectorized)
    return to_model_spec(VdfmSpec{s.n * s.k, s.p1, s.T, s.q, s.volatility});
  return s;
}

Panel model_panel(const AppConfig &c, const PanelDataset &data) {
  return c.vectorized ? vectorize_panel(data.values) : data.values;
}

Simulation simulate(const AppConfig &c) {
  require_dims(c);
  const auto &s = c.spec;
  const auto &ss = c.simulate;
  SimulatedData sim;
  if (ss.dgp == DgpKind::vdfm) {
    VdfmDgpConfig v;
    v.n = s.n;
    v.k = s.k;
    v.T = s.T;
    v.k_f = ss.k_f;
    v.q = s.q;
    v.seed = c.seed;
    if (ss.rho_lo)
      v.rho_lo = *ss.rho_lo;
    if (ss.rho_hi)
      v.rho_hi = *ss.rho_hi;
    if (ss.lambda2)
      v.factor_var = *ss.lambda2;
    sim = generate_vdfm(v);
  } else {
    DgpConfig d = ss.dgp == DgpKind::uniform
                      ? dgp_uniform_design(s.n, s.k, s.T, s.p1, s.p2, c.seed)
                      : dgp_structure_design(s.n, s.k, s.T, s.p1, s.p2, s.idio,
                                             s.volatility, c.seed);
    d.spec.q = s.q;
    d.spec.idio = s.idio;
    d.spec.volatility = s.volatility;
    d.spec.identification = s.identification;
    if (ss.loading_law)
      d.loading_law = *ss.loading_law;
    if (ss.cov_law)
      d.cov_law = *ss.cov_law;
    if (ss.rho_lo)
      d.rho_lo = *ss.rho_lo;
    if (ss.rho_hi)
      d.rho_hi = *ss.rho_hi;
    if (ss.lambda2)
      d.lambda2 = *ss.lambda2;
    require_valid(d.spec, default_prior(d.spec));
    sim = generate_mdfm(d);
  }
  Simulation out;
  out.data = dataset_from_panel(sim.Y);
  out.truth = json{{"seed", c.seed},
                   {"dgp", ss.dgp == DgpKind::uniform     ? "uniform"
                           : ss.dgp == DgpKind::structure ? "structure"
                                                          : "vdfm"},
                   {"spec", spec_to_json(sim.spec)},
                   {"parameters", state_to_json(sim.spec, sim.truth)},
                   {"factors", factors_json(sim.f)}};
  return out;
}

PosteriorStore fit(const AppConfig &c, const PanelDataset &data) {
  const ModelSpec spec = resolve_spec(c, data);
  const PriorConfig prior = resolve_prior(spec, c.prior_overrides);
  require_valid(spec, prior);
  return run_chain(spec, prior, c.mcmc, model_panel(c, data));
}

json log_ml(const AppConfig &c, const PanelDataset &data, const PosteriorStore *posterior) {
  const ModelSpec spec = resolve_spec(c, data);
  const Panel Y = model_panel(c, data);
  MlEstimate est;
  if (posterior) {
    if (!(posterior->spec == spec))
      throw UsageError("model: the posterior was fitted to " +
                       candidate_label(posterior->spec, c.vectorized) +
                       ", the config describes " + candidate_label(spec, c.vectorized));
    const auto g = fit_importance_density(*posterior, c.is);
    est = estimate_log_ml(spec, posterior->prior, Y, g, c.is);
    for (const auto &w : g.warnings)
      est.diagnostic += (est.diagnostic.empty() ? "" : "; ") + w;
  } else {
    const PriorConfig prior = resolve_prior(spec, c.prior_overrides);
    require_valid(spec, prior);
    est = fit_and_estimate(spec, prior, Y, c.mcmc, c.is);
  }
  json j = estimate_json(est);
  j["model"] = candidate_label(spec, c.vectorized);
  j["spec"] = spec_to_json(spec);
  j["seed"] = c.seed;
  return j;
}

json scan(const AppConfig &c, const PanelDataset &data) {
  AppConfig base = c;
  base.vectorized = false;
  const ModelSpec spec = resolve_spec(base, data);
  auto range = [](std::vector<int> v, int hi) {
    if (v.empty())
      for (int i = 1; i <= std::min(4, hi); ++i)
        v.push_back(i);
    return v;
  };
  const auto p1s = range(c.scan.p1, spec.n);
  const auto p2s = range(c.scan.p2, spec.k);
  auto idios = c.scan.idio.empty() ? std::vector<Idio>{spec.idio} : c.scan.idio;
  auto vols = c.scan.volatility.empty() ? std::vector<Volatility>{spec.volatility}
                                        : c.scan.volatility;
  std::vector<Candidate> cands;
  for (auto idio : idios)
    for (auto vol : vols)
      for (int p1 : p1s)
        for (int p2 : p2s) {
          ModelSpec s = spec;
          s.p1 = p1;
          s.p2 = p2;
          s.idio = idio;
          s.volatility = vol;
          cands.push_back({candidate_label(s, false), s, false, resolve_prior(s, c.prior_overrides)});
        }
  for (int kf : c.scan.vdfm_kf) {
    const ModelSpec s =
        to_model_spec(VdfmSpec{spec.n * spec.k, kf, spec.T, spec.q, spec.volatility});
    cands.push_back({candidate_label(s, true), s, true, resolve_prior(s, c.prior_overrides)});
  }
  const ScanTable table = ml_model_scan(data.values, cands, c.mcmc, c.is);
  const int best = table.best();
  return json{{"rows", scan_json(table)},
              {"table", format_scan_table(table)},
              {"best", best >= 0 ? table.rows[best].candidate.label : ""},
              {"seed", c.seed}};
}

json experiment(const AppConfig &c, const std::string &out_dir) {
  ExperimentConfig e = c.experiment;
  e.out_dir = out_dir;
  return run_experiment(e);
}

json report(const fs::path &dir, const fs::path &out_dir) {
  json manifest;
  try {
    manifest = json::parse(read_text_file(dir / "manifest.json"));
  } catch (const json::exception &e) {
    throw DataError((dir / "manifest.json").string() + ": " + e.what());
  }
  if (manifest.value("format", "") == "mdfm-posterior") {
    const PosteriorStore store = load_posterior(dir);
    json summary = posterior_summary(store);
    atomic_write_text(out_dir / "draws.csv", posterior_csv(store));
    atomic_write_text(out_dir / "summary.json", summary.dump(2));
    summary["files"] = {"draws.csv", "summary.json"};
    return summary;
  }
  if (!manifest.contains("design"))
    throw DataError(dir.string() + " holds neither a posterior nor an experiment");

  // Experiment: group report.csv by (truth, model, metric).
  const auto records = split_csv_records(read_text_file(dir / "report.csv"));
  if (records.empty() || records[0].size() < 8)
    throw DataError((dir / "report.csv").string() + ": unexpected header");
  struct Group {
    int count = 0, failures = 0;
    double sum = 0, sum2 = 0, nse = 0;
  };
  std::map<std::tuple<std::string, std::string, std::string>, Group> groups;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto &r = records[i];
    if (r.size() < 8)
      throw DataError((dir / "report.csv").string() + ": short record on line " +
                      std::to_string(i + 1));
    auto &g = groups[{r[0], r[2], r[3]}];
    if (!r[7].empty() || r[4].empty()) {
      ++g.failures;
      continue;
    }
    const double v = std::stod(r[4]);
    ++g.count;
    g.sum += v;
    g.sum2 += v * v;
    g.nse += r[5].empty() ? 0.0 : std::stod(r[5]);
  }
  std::ostringstream csv;
  csv << "truth,model,metric,count,failures,mean,sd,mean_nse\n";
  json rows = json::array();
  for (const auto &[key, g] : groups) {
    const auto &[truth, model, metric] = key;
    const double mean = g.count ? g.sum / g.count : std::nan("");
    const double sd = g.count > 1 ? std::sqrt(std::max(0.0, (g.sum2 - g.count * mean * mean) /
                                                                (g.count - 1)))
                                  : std::nan("");
    const double nse = g.count ? g.nse / g.count : std::nan("");
    csv << truth << ',' << model << ',' << metric << ',' << g.count << ',' << g.failures
        << ',' << num(mean) << ',' << num(sd) << ',' << num(nse) << '\n';
    rows.push_back(json{{"truth", truth},
                        {"model", model},
                        {"metric", metric},
                        {"count", g.count},
                        {"failures", g.failures},
                        {"mean", std::isfinite(mean) ? json(mean) : json(nullptr)},
                        {"sd", std::isfinite(sd) ? json(sd) : json(nullptr)}});
  }
  json summary{{"design", manifest["design"]}, {"groups", rows}};
  const auto rep = json::parse(read_text_file(dir / "report.json"), nullptr, false);
  if (!rep.is_discarded() && rep.contains("aggregate"))
    summary["aggregate"] = rep["aggregate"];
  atomic_write_text(out_dir / "summary.csv", csv.str());
  atomic_write_text(out_dir / "summary.json", summary.dump(2));
  summary["files"] = {"summary.csv", "summary.json"};
  return summary;
}

} // namespace mdfm
