#include "mdfm/config.hpp"

#include "mdfm/errors.hpp"
#include "mdfm/io.hpp"

#include <sstream>

namespace mdfm {

extern const char *const kConfigSchemaText;

using nlohmann::json;

const json &config_schema() {
  static const json schema = json::parse(kConfigSchemaText);
  return schema;
}

namespace {

bool has_type(const json &v, const std::string &t) {
  if (t == "object")
    return v.is_object();
  if (t == "array")
    return v.is_array();
  if (t == "string")
    return v.is_string();
  if (t == "boolean")
    return v.is_boolean();
  if (t == "integer")
    return v.is_number_integer();
  if (t == "number")
    return v.is_number();
  if (t == "null")
    return v.is_null();
  return false;
}

void check(const json &v, const json &s, const std::string &path,
           std::vector<std::string> &errs) {
  const std::string where = path.empty() ? "(root)" : path;
  if (auto it = s.find("type"); it != s.end()) {
    bool ok = false;
    if (it->is_array()) {
      for (const auto &t : *it)
        ok = ok || has_type(v, t.get<std::string>());
    } else {
      ok = has_type(v, it->get<std::string>());
    }
    if (!ok) {
      errs.push_back(where + ": expected " + it->dump() + ", got " + v.dump());
      return;
    }
  }
  if (auto it = s.find("enum"); it != s.end()) {
    bool found = false;
    for (const auto &e : *it)
      found = found || e == v;
    if (!found)
      errs.push_back(where + ": " + v.dump() + " is not one of " + it->dump());
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (auto it = s.find("minimum"); it != s.end() && x < it->get<double>())
      errs.push_back(where + ": " + v.dump() + " is below the minimum " + it->dump());
    if (auto it = s.find("maximum"); it != s.end() && x > it->get<double>())
      errs.push_back(where + ": " + v.dump() + " is above the maximum " + it->dump());
    if (auto it = s.find("exclusiveMinimum"); it != s.end() && x <= it->get<double>())
      errs.push_back(where + ": " + v.dump() + " must exceed " + it->dump());
  }
  if (v.is_array()) {
    if (auto it = s.find("minItems"); it != s.end() && v.size() < it->get<std::size_t>())
      errs.push_back(where + ": needs at least " + it->dump() + " items");
    if (auto it = s.find("items"); it != s.end())
      for (std::size_t i = 0; i < v.size(); ++i)
        check(v[i], *it, path + "[" + std::to_string(i) + "]", errs);
  }
  if (v.is_object()) {
    const json props = s.value("properties", json::object());
    if (auto it = s.find("required"); it != s.end())
      for (const auto &r : *it)
        if (!v.contains(r.get<std::string>()))
          errs.push_back((path.empty() ? "" : path + ".") + r.get<std::string>() +
                         ": required field is missing");
    const bool closed = s.value("additionalProperties", true) == false;
    for (const auto &[key, val] : v.items()) {
      const std::string sub = path.empty() ? key : path + "." + key;
      if (auto p = props.find(key); p != props.end())
        check(val, *p, sub, errs);
      else if (closed)
        errs.push_back(sub + ": unknown field");
    }
  }
}

template <class T> void take(const json &obj, const char *key, T &out) {
  if (auto it = obj.find(key); it != obj.end())
    out = it->get<T>();
}

std::vector<int> int_list(const json &obj, const char *key) {
  std::vector<int> v;
  take(obj, key, v);
  return v;
}

} // namespace

std::vector<std::string> schema_errors(const json &doc, const json &schema) {
  std::vector<std::string> errs;
  check(doc, schema, "", errs);
  return errs;
}

std::uint64_t mcmc_seed(std::uint64_t base) { return base; }
std::uint64_t is_seed(std::uint64_t base) { return base * 2654435761ULL + 1013904223ULL; }

AppConfig parse_config(const json &doc) {
  const auto errs = schema_errors(doc, config_schema());
  if (!errs.empty()) {
    std::string msg = "invalid config: " + errs.front();
    for (std::size_t i = 1; i < errs.size(); ++i)
      msg += "; " + errs[i];
    throw UsageError(msg);
  }
  AppConfig c;
  c.source = doc;
  take(doc, "seed", c.seed);

  const json model = doc.value("model", json::object());
  c.has_n = model.contains("n");
  c.has_k = model.contains("k");
  c.has_T = model.contains("T");
  take(model, "n", c.spec.n);
  take(model, "k", c.spec.k);
  take(model, "T", c.spec.T);
  take(model, "p1", c.spec.p1);
  take(model, "p2", c.spec.p2);
  take(model, "q", c.spec.q);
  take(model, "vectorized", c.vectorized);
  if (model.contains("volatility"))
    c.spec.volatility = volatility_from_string(model["volatility"]);
  if (model.contains("idio"))
    c.spec.idio = idio_from_string(model["idio"]);
  if (model.contains("identification"))
    c.spec.identification = identification_from_string(model["identification"]);

  c.prior_overrides = doc.value("prior", json::object());

  const json mcmc = doc.value("mcmc", json::object());
  take(mcmc, "burn_in", c.mcmc.burn_in);
  take(mcmc, "draws", c.mcmc.draws);
  take(mcmc, "thin", c.mcmc.thin);
  take(mcmc, "store_factor_paths", c.mcmc.store_factor_paths);
  take(mcmc, "warm_burn_in", c.mcmc.warm_burn_in);
  take(mcmc, "warm_draws", c.mcmc.warm_draws);
  if (mcmc.contains("init"))
    c.mcmc.init = init_mode_from_string(mcmc["init"]);
  if (mcmc.contains("factor_sampler"))
    c.mcmc.factor_sampler =
        mcmc["factor_sampler"] == "joint" ? FactorSampler::joint : FactorSampler::per_t;
  c.mcmc.seed = mcmc_seed(c.seed);

  const json is = doc.value("is", json::object());
  take(is, "draws", c.is.draws);
  take(is, "batches", c.is.batches);
  take(is, "max_full_cov", c.is.max_full_cov);
  c.is.seed = is_seed(c.seed);
  if (c.is.batches > c.is.draws)
    throw UsageError("is.batches: more batches than importance draws");

  if (doc.contains("data")) {
    const json &d = doc["data"];
    DataSource src;
    src.path = d["path"];
    src.layout.format = csv_format_from_string(d.value("format", std::string("long")));
    src.layout.rows = d["rows"].get<std::vector<std::string>>();
    src.layout.cols = d["cols"].get<std::vector<std::string>>();
    take(d, "preprocess", src.preprocess);
    c.data = std::move(src);
  }

  const json sim = doc.value("simulate", json::object());
  const std::string dgp = sim.value("dgp", std::string("uniform"));
  c.simulate.dgp = dgp == "uniform" ? DgpKind::uniform
                   : dgp == "structure" ? DgpKind::structure
                                        : DgpKind::vdfm;
  take(sim, "k_f", c.simulate.k_f);
  if (sim.contains("loading_law"))
    c.simulate.loading_law = loading_law_from_string(sim["loading_law"]);
  if (sim.contains("cov_law"))
    c.simulate.cov_law = cov_law_from_string(sim["cov_law"]);
  if (sim.contains("rho_lo"))
    c.simulate.rho_lo = sim["rho_lo"].get<double>();
  if (sim.contains("rho_hi"))
    c.simulate.rho_hi = sim["rho_hi"].get<double>();
  if (sim.contains("lambda2"))
    c.simulate.lambda2 = sim["lambda2"].get<double>();

  const json scan = doc.value("scan", json::object());
  c.scan.p1 = int_list(scan, "p1");
  c.scan.p2 = int_list(scan, "p2");
  c.scan.vdfm_kf = int_list(scan, "vdfm_kf");
  for (const auto &s : scan.value("idio", json::array()))
    c.scan.idio.push_back(idio_from_string(s));
  for (const auto &s : scan.value("volatility", json::array()))
    c.scan.volatility.push_back(volatility_from_string(s));

  const json ex = doc.value("experiment", json::object());
  auto &e = c.experiment;
  if (ex.contains("design"))
    e.design = design_from_string(ex["design"]);
  take(ex, "replications", e.replications);
  take(ex, "n", e.n);
  take(ex, "k", e.k);
  take(ex, "T", e.T);
  take(ex, "p1", e.p1);
  take(ex, "p2", e.p2);
  take(ex, "max_p", e.max_p);
  take(ex, "max_kf", e.max_kf);
  take(ex, "vdfm_kf", e.vdfm_kf);
  take(ex, "reverse", e.reverse);
  if (ex.contains("fit_idio"))
    e.fit_idio = idio_from_string(ex["fit_idio"]);
  if (ex.contains("compare_idio"))
    e.compare_idio = idio_from_string(ex["compare_idio"]);
  e.seed = c.seed;
  e.mcmc = c.mcmc;
  e.is = c.is;
  return c;
}

AppConfig load_config(const std::filesystem::path &path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::parse_error &err) {
    throw UsageError(path.string() + ": not valid JSON: " + err.what());
  }
  return parse_config(doc);
}

void set_config_value(json &doc, const std::string &key, const std::string &value) {
  if (key.empty())
    throw UsageError("empty config key");
  json *node = &doc;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.'))
    parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object())
      throw UsageError(key + ": '" + parts[i] + "' is not an object");
    node = &(*node)[parts[i]];
    if (node->is_null())
      *node = json::object();
  }
  if (!node->is_object())
    throw UsageError(key + ": parent is not an object");
  json v = json::parse(value, nullptr, false);
  (*node)[parts.back()] = v.is_discarded() ? json(value) : v;
}

PriorConfig resolve_prior(const ModelSpec &spec, const json &o) {
  PriorConfig p = default_prior(spec);
  take(o, "nu_r", p.nu_r);
  take(o, "nu_c", p.nu_c);
  if (o.contains("S_r"))
    p.S_r = o["S_r"].get<double>() * Matrix::Identity(spec.n, spec.n);
  if (o.contains("S_c"))
    p.S_c = o["S_c"].get<double>() * Matrix::Identity(spec.k, spec.k);
  if (o.contains("A0"))
    p.A0.setConstant(o["A0"].get<double>());
  if (o.contains("V_A"))
    p.V_A = o["V_A"].get<double>() * Matrix::Identity(spec.p1, spec.p1);
  if (o.contains("B0"))
    p.B0.setConstant(o["B0"].get<double>());
  if (o.contains("V_B"))
    p.V_B = o["V_B"].get<double>() * Matrix::Identity(spec.p2, spec.p2);
  if (o.contains("rho0"))
    p.rho0.setConstant(o["rho0"].get<double>());
  if (o.contains("V_rho"))
    p.V_rho.setConstant(o["V_rho"].get<double>());
  if (o.contains("nu_lambda"))
    p.nu_lambda.setConstant(o["nu_lambda"].get<double>());
  if (o.contains("S_lambda"))
    p.S_lambda.setConstant(o["S_lambda"].get<double>());
  take(o, "phi0", p.phi0);
  take(o, "V_phi", p.V_phi);
  take(o, "a_sh", p.a_sh);
  take(o, "b_sh", p.b_sh);
  take(o, "a_po", p.a_po);
  take(o, "b_po", p.b_po);
  take(o, "dof", p.dof);
  return p;
}

} // namespace mdfm
