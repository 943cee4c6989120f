#include "mdfm/scan.hpp"

#include "mdfm/errors.hpp"
#include "mdfm/vdfm.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace mdfm {

using nlohmann::json;

json estimate_json(const MlEstimate &e) {
  return json{{"log_ml", e.log_ml},
              {"nse", e.nse},
              {"n_is", e.n_is},
              {"ess", e.ess},
              {"max_weight_share", e.max_weight_share},
              {"degenerate", e.degenerate},
              {"diagnostic", e.diagnostic}};
}

json scan_json(const ScanTable &t) {
  json rows = json::array();
  for (const auto &r : t.rows) {
    json j{{"model", r.candidate.label}, {"rank", r.rank}};
    if (r.estimate)
      j["estimate"] = estimate_json(*r.estimate);
    else
      j["error"] = r.error;
    rows.push_back(j);
  }
  return rows;
}


int ScanTable::best() const {
  int b = -1;
  for (int i = 0; i < static_cast<int>(rows.size()); ++i)
    if (rows[i].estimate && (b < 0 || rows[i].estimate->log_ml > rows[b].estimate->log_ml))
      b = i;
  return b;
}

const ScanRow *ScanTable::find(const std::string &label) const {
  for (const auto &r : rows)
    if (r.candidate.label == label)
      return &r;
  return nullptr;
}

std::string candidate_label(const ModelSpec &spec, bool vectorized) {
  std::ostringstream os;
  if (vectorized) {
    os << "VDFM(k_f=" << spec.p1 << ")";
  } else {
    os << "MDFM(" << spec.p1 << "," << spec.p2 << ")";
    if (spec.idio == Idio::exact_diagonal)
      os << "-exact";
    else
      os << "-cross";
  }
  if (spec.volatility != Volatility::none)
    os << "-" << to_string(spec.volatility);
  if (spec.q != 1)
    os << "-q" << spec.q;
  return os.str();
}

ScanTable ml_model_scan(const Panel &Y, const std::vector<Candidate> &candidates,
                        const McmcConfig &mcmc, const IsConfig &is) {
  ScanTable table;
  std::optional<Panel> stacked;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    ScanRow row;
    row.candidate = candidates[i];
    const auto &c = candidates[i];
    try {
      const PriorConfig prior = c.prior ? *c.prior : default_prior(c.spec);
      auto diags = validate_spec(c.spec, prior);
      if (!diags.empty())
        throw UsageError(diags.front().field + ": " + diags.front().message);
      McmcConfig m = mcmc;
      m.seed = mcmc.seed + 7919 * i;
      IsConfig s = is;
      s.seed = is.seed + 104729 * i;
      if (c.vectorized) {
        if (!stacked)
          stacked = vectorize_panel(Y);
        row.estimate = fit_and_estimate(c.spec, prior, *stacked, m, s);
      } else {
        row.estimate = fit_and_estimate(c.spec, prior, Y, m, s);
      }
    } catch (const std::exception &e) {
      row.error = e.what();
    }
    table.rows.push_back(std::move(row));
  }
  std::vector<int> ok;
  for (int i = 0; i < static_cast<int>(table.rows.size()); ++i)
    if (table.rows[i].estimate)
      ok.push_back(i);
  std::sort(ok.begin(), ok.end(), [&](int a, int b) {
    return table.rows[a].estimate->log_ml > table.rows[b].estimate->log_ml;
  });
  for (std::size_t r = 0; r < ok.size(); ++r)
    table.rows[ok[r]].rank = static_cast<int>(r) + 1;
  return table;
}

std::string format_scan_table(const ScanTable &table) {
  std::vector<int> order(table.rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const auto &ra = table.rows[a], &rb = table.rows[b];
    if (ra.rank == 0 || rb.rank == 0)
      return ra.rank != 0 && rb.rank == 0;
    return ra.rank < rb.rank;
  });
  std::size_t w = 5;
  for (const auto &r : table.rows)
    w = std::max(w, r.candidate.label.size());
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-4s  %-*s  %s\n", "rank", static_cast<int>(w), "model",
                "log-ML (NSE)");
  os << buf;
  for (int i : order) {
    const auto &r = table.rows[i];
    if (r.estimate) {
      std::snprintf(buf, sizeof buf, "%-4d  %-*s  %.1f (%.1f)%s\n", r.rank,
                    static_cast<int>(w), r.candidate.label.c_str(), r.estimate->log_ml,
                    r.estimate->nse, r.estimate->degenerate ? "  [low ESS]" : "");
      os << buf;
    } else {
      std::snprintf(buf, sizeof buf, "%-4s  %-*s  ", "-", static_cast<int>(w),
                    r.candidate.label.c_str());
      os << buf << "failed: " << r.error << "\n";
    }
  }
  return os.str();
}

} // namespace mdfm
