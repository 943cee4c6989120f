#pragma once

#include "mdfm/importance.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace mdfm {

/// One model in a comparison. A vectorized candidate is fitted to the
/// stacked nk x 1 panel (the VDFM baseline); its spec has k = 1.
struct Candidate {
  std::string label;
  ModelSpec spec;
  bool vectorized = false;
  std::optional<PriorConfig> prior; // default_prior(spec) when empty
};

struct ScanRow {
  Candidate candidate;
  std::optional<MlEstimate> estimate;
  std::string error; // non-empty when the candidate failed
  int rank = 0;      // 1 = highest log-ML; 0 for failures
};

struct ScanTable {
  std::vector<ScanRow> rows; // input order
  /// Index of the best successful row, -1 if none succeeded.
  int best() const;
  const ScanRow *find(const std::string &label) const;
};

/// Chain, importance fit and estimate for each candidate on panel Y (n x k
/// observations). Candidate seeds are derived from the base seeds and the
/// candidate index; failures are recorded and the scan continues.
ScanTable ml_model_scan(const Panel &Y, const std::vector<Candidate> &candidates,
                        const McmcConfig &mcmc, const IsConfig &is);

/// Rows sorted by log-ML, "estimate (NSE)" column.
std::string format_scan_table(const ScanTable &table);

nlohmann::json estimate_json(const MlEstimate &e);
/// One object per row in input order: model, rank, estimate or error.
nlohmann::json scan_json(const ScanTable &table);

std::string candidate_label(const ModelSpec &spec, bool vectorized);

} // namespace mdfm
