// mdfm command-line front end. All work goes through the C interface.

#include "mdfm/mdfm.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const char *kind_name(int code) {
  switch (code) {
  case MDFM_ERR_USAGE:
    return "usage";
  case MDFM_ERR_NUMERICAL:
    return "numerical";
  case MDFM_ERR_DATA:
    return "data";
  default:
    return "internal";
  }
}

// Internal failures have no exit code of their own; they share 2 with
// numerical ones.
int exit_code(int code) { return code == MDFM_ERR_INTERNAL ? 2 : code; }

struct Failure {
  int code;
  std::string message;
};

void check(int rc) {
  if (rc != MDFM_OK)
    throw Failure{rc, mdfm_last_error()};
}

std::string take(char *s) {
  std::string out = s ? s : "";
  mdfm_string_free(s);
  return out;
}

template <class T, void (*Free)(T *)> struct Handle {
  T *p = nullptr;
  Handle() = default;
  Handle(const Handle &) = delete;
  Handle &operator=(const Handle &) = delete;
  ~Handle() { Free(p); }
};
using Config = Handle<mdfm_config, mdfm_config_free>;
using Dataset = Handle<mdfm_dataset, mdfm_dataset_free>;
using Posterior = Handle<mdfm_posterior, mdfm_posterior_free>;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
};

void add_common(CLI::App *cmd, Common &c, bool needs_config = true) {
  auto *opt = cmd->add_option("-c,--config", c.config, "JSON config file");
  if (needs_config)
    opt->required();
  cmd->add_option("--seed", c.seed, "Base seed, overrides the config");
  cmd->add_option("--set", c.sets, "Override a config field, e.g. mcmc.draws=500");
}

void open_config(const Common &c, Config &cfg) {
  if (c.config.empty())
    check(mdfm_config_parse(nullptr, &cfg.p));
  else
    check(mdfm_config_load(c.config.c_str(), &cfg.p));
  for (const auto &s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0)
      throw Failure{MDFM_ERR_USAGE, "--set expects key=value, got '" + s + "'"};
    check(mdfm_config_set(cfg.p, s.substr(0, eq).c_str(), s.substr(eq + 1).c_str()));
  }
  if (c.seed)
    check(mdfm_config_set_seed(cfg.p, *c.seed));
}

void write_file(const fs::path &path, const std::string &text) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    if (!out)
      throw Failure{MDFM_ERR_DATA, "cannot write " + tmp.string()};
  }
  fs::rename(tmp, path);
}

void emit(const std::string &json_text, const std::string &out_file) {
  if (!out_file.empty())
    write_file(out_file, json_text + "\n");
  std::cout << json_text << '\n';
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Bayesian matrix dynamic factor models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(mdfm_version()));

  Common sim_c, fit_c, ml_c, scan_c, exp_c;
  std::string sim_out, fit_out, ml_post, ml_out, scan_out, exp_out, rep_dir, rep_out;

  auto *sim = app.add_subcommand("simulate", "Simulate a panel; writes data.csv and truth.json");
  add_common(sim, sim_c);
  sim->add_option("-o,--out", sim_out, "Output directory")->required();

  auto *fitc = app.add_subcommand("fit", "Run the Gibbs sampler and save the posterior");
  add_common(fitc, fit_c);
  fitc->add_option("-o,--out", fit_out, "Posterior directory")->required();

  auto *ml = app.add_subcommand("ml", "Estimate the log marginal likelihood");
  add_common(ml, ml_c);
  ml->add_option("-p,--posterior", ml_post, "Posterior directory from fit");
  ml->add_option("-o,--out", ml_out, "Also write the result to this file");

  auto *scanc = app.add_subcommand("scan", "Rank candidate models by log marginal likelihood");
  add_common(scanc, scan_c);
  scanc->add_option("-o,--out", scan_out, "Also write the result to this file");

  auto *exp = app.add_subcommand("experiment", "Run a Monte Carlo design");
  add_common(exp, exp_c);
  exp->add_option("-o,--out", exp_out, "Output directory");

  auto *rep = app.add_subcommand("report", "Summarize a posterior or experiment directory");
  rep->add_option("dir", rep_dir, "Directory written by fit or experiment")->required();
  rep->add_option("-o,--out", rep_out, "Output directory (default: the input)");

  auto *schema = app.add_subcommand("schema", "Print the config schema");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    std::cerr << json{{"error", {{"code", 1}, {"kind", "usage"}, {"message", e.what()}}}}.dump()
              << '\n';
    return 1;
  }

  try {
    if (*schema) {
      std::cout << mdfm_config_schema() << '\n';
    } else if (*sim) {
      Config cfg;
      open_config(sim_c, cfg);
      Dataset ds;
      char *truth = nullptr;
      check(mdfm_dataset_simulate(cfg.p, &ds.p, &truth));
      const std::string truth_text = take(truth);
      const fs::path dir(sim_out);
      fs::create_directories(dir);
      check(mdfm_dataset_write_csv(ds.p, (dir / "data.csv").string().c_str()));
      write_file(dir / "truth.json", truth_text + "\n");
      int T = 0, n = 0, k = 0;
      check(mdfm_dataset_dims(ds.p, &T, &n, &k));
      json rows = json::array(), cols = json::array();
      for (int i = 1; i <= n; ++i)
        rows.push_back("r" + std::to_string(i));
      for (int j = 1; j <= k; ++j)
        cols.push_back("c" + std::to_string(j));
      std::cout << json{{"data",
                         {{"path", (dir / "data.csv").string()},
                          {"format", "long"},
                          {"rows", rows},
                          {"cols", cols}}},
                        {"truth", (dir / "truth.json").string()},
                        {"T", T}}
                       .dump(2)
                << '\n';
    } else if (*fitc) {
      Config cfg;
      open_config(fit_c, cfg);
      Dataset ds;
      check(mdfm_dataset_load(cfg.p, &ds.p));
      Posterior post;
      check(mdfm_fit(cfg.p, ds.p, &post.p));
      check(mdfm_posterior_save(post.p, fit_out.c_str()));
      char *summary = nullptr;
      check(mdfm_posterior_summary(post.p, &summary));
      emit(take(summary), "");
    } else if (*ml) {
      Config cfg;
      open_config(ml_c, cfg);
      Dataset ds;
      check(mdfm_dataset_load(cfg.p, &ds.p));
      Posterior post;
      if (!ml_post.empty())
        check(mdfm_posterior_load(ml_post.c_str(), &post.p));
      char *out = nullptr;
      check(mdfm_log_ml(cfg.p, ds.p, post.p, &out));
      emit(take(out), ml_out);
    } else if (*scanc) {
      Config cfg;
      open_config(scan_c, cfg);
      Dataset ds;
      check(mdfm_dataset_load(cfg.p, &ds.p));
      char *out = nullptr;
      check(mdfm_scan(cfg.p, ds.p, &out));
      const std::string text = take(out);
      emit(text, scan_out);
      std::cerr << json::parse(text)["table"].get<std::string>();
    } else if (*exp) {
      Config cfg;
      open_config(exp_c, cfg);
      char *out = nullptr;
      check(mdfm_experiment(cfg.p, exp_out.c_str(), &out));
      const json report = json::parse(take(out));
      json brief{{"design", report["design"]}, {"aggregate", report["aggregate"]}};
      if (!exp_out.empty())
        brief["out"] = exp_out;
      emit(brief.dump(2), "");
    } else if (*rep) {
      char *out = nullptr;
      check(mdfm_report(rep_dir.c_str(), rep_out.c_str(), &out));
      emit(take(out), "");
    }
  } catch (const Failure &f) {
    std::cerr << json{{"error",
                       {{"code", exit_code(f.code)},
                        {"kind", kind_name(f.code)},
                        {"message", f.message}}}}
                     .dump()
              << '\n';
    return exit_code(f.code);
  } catch (const std::exception &e) {
    std::cerr << json{{"error", {{"code", 3}, {"kind", "data"}, {"message", e.what()}}}}.dump()
              << '\n';
    return 3;
  }
  return 0;
}
