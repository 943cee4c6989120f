#pragma once

#include "mdfm/config.hpp"
#include "mdfm/posterior_io.hpp"

#include <json.hpp>

#include <filesystem>

namespace mdfm {

/// Reads and preprocesses the config's data section. Missing values left
/// after preprocessing are a DataError.
PanelDataset load_dataset(const AppConfig &config);

/// The config's model with n, k and T filled from the dataset. Explicit
/// values that disagree with the data are a DataError. Vectorized models
/// come back in their stacked form (n = nk, k = 1).
ModelSpec resolve_spec(const AppConfig &config, const PanelDataset &data);

/// The panel the model is fitted to: Y itself, or its stacked form.
Panel model_panel(const AppConfig &config, const PanelDataset &data);

struct Simulation {
  PanelDataset data;
  nlohmann::json truth; // spec, parameters and factor path of the DGP
};
Simulation simulate(const AppConfig &config);

/// Chain on the dataset; validate_spec problems are UsageErrors.
PosteriorStore fit(const AppConfig &config, const PanelDataset &data);

/// Log marginal likelihood. With a posterior the importance density is fitted
/// to its draws; otherwise a chain is run first.
nlohmann::json log_ml(const AppConfig &config, const PanelDataset &data,
                      const PosteriorStore *posterior);

/// Candidates from the scan section, each fitted and estimated.
nlohmann::json scan(const AppConfig &config, const PanelDataset &data);

nlohmann::json experiment(const AppConfig &config, const std::string &out_dir);

/// Summarizes a posterior directory (draws.csv, summary.json) or an
/// experiment directory (summary.csv, summary.json) into out_dir.
nlohmann::json report(const std::filesystem::path &dir, const std::filesystem::path &out_dir);

} // namespace mdfm
