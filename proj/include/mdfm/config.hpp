#pragma once

#include "mdfm/dataset.hpp"
#include "mdfm/simulate.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mdfm {

/// The published config schema, compiled into the library.
const nlohmann::json &config_schema();

/// Checks doc against a JSON-Schema subset: type, properties, required,
/// additionalProperties (boolean), enum, minimum, maximum, exclusiveMinimum,
/// items, minItems. Each message starts with the dotted path of the field.
std::vector<std::string> schema_errors(const nlohmann::json &doc,
                                       const nlohmann::json &schema);

struct DataSource {
  std::string path;
  CsvLayout layout;
  std::vector<std::string> preprocess;
};

enum class DgpKind { uniform, structure, vdfm };

struct SimulateSettings {
  DgpKind dgp = DgpKind::uniform;
  int k_f = 2;
  std::optional<LoadingLaw> loading_law;
  std::optional<CovLaw> cov_law;
  std::optional<double> rho_lo, rho_hi, lambda2;
};

struct ScanSettings {
  std::vector<int> p1, p2; // empty: 1..min(4, n) and 1..min(4, k)
  std::vector<Idio> idio;  // empty: the model's
  std::vector<Volatility> volatility;
  std::vector<int> vdfm_kf;
};

struct AppConfig {
  std::uint64_t seed = 1;
  ModelSpec spec;
  bool vectorized = false;
  // Which of n, k, T were set explicitly; the rest come from the data.
  bool has_n = false, has_k = false, has_T = false;
  nlohmann::json prior_overrides = nlohmann::json::object();
  McmcConfig mcmc;
  IsConfig is;
  std::optional<DataSource> data;
  SimulateSettings simulate;
  ScanSettings scan;
  ExperimentConfig experiment;
  nlohmann::json source; // the validated document
};

/// Validates against the schema and converts. Throws UsageError naming the
/// first offending field; the message lists all of them.
AppConfig parse_config(const nlohmann::json &doc);
AppConfig load_config(const std::filesystem::path &path);

/// Sets a dotted key ("mcmc.draws") in the document, creating objects on
/// the way. Values are parsed as JSON, falling back to a plain string.
void set_config_value(nlohmann::json &doc, const std::string &key,
                      const std::string &value);

/// Default prior of spec with the config's scalar overrides applied.
PriorConfig resolve_prior(const ModelSpec &spec, const nlohmann::json &overrides);

/// Chain and importance seeds derived from the base seed.
std::uint64_t mcmc_seed(std::uint64_t base);
std::uint64_t is_seed(std::uint64_t base);

} // namespace mdfm
