#pragma once

#include "mdfm/gibbs.hpp"

#include <json.hpp>

#include <filesystem>

namespace mdfm {

/// Flat layout of one draw: A, B, Sigma_r, Sigma_c (column-major), rho,
/// lambda2, then the volatility payload (h, phi, sigma_h2 | o, p_o | q2, dof).
Eigen::Index state_width(const ModelSpec &spec);
Vector flatten_state(const ModelSpec &spec, const ParameterState &s);
ParameterState unflatten_state(const ModelSpec &spec, const Eigen::Ref<const Vector> &v);

nlohmann::json spec_to_json(const ModelSpec &spec);
ModelSpec spec_from_json(const nlohmann::json &j);
nlohmann::json prior_to_json(const PriorConfig &p);
PriorConfig prior_from_json(const nlohmann::json &j);
nlohmann::json state_to_json(const ModelSpec &spec, const ParameterState &s);

/// Directory layout: manifest.json, draws_NNN.bin chunks of little-endian
/// float64 rows (chunk_rows draws each, state_width columns), factor_mean.bin,
/// factor_sd.bin and, when stored, factor_paths_NNN.bin. Every file is
/// written atomically; the manifest goes last.
void save_posterior(const PosteriorStore &store, const std::filesystem::path &dir,
                    int chunk_rows = 500);
PosteriorStore load_posterior(const std::filesystem::path &dir);

/// Scalar parameters of every draw, one row per draw, with a header.
std::string posterior_csv(const PosteriorStore &store);

/// Short JSON summary: spec, chain settings, Geweke z, acceptance rates,
/// timings, posterior means of the scalar parameters.
nlohmann::json posterior_summary(const PosteriorStore &store);

} // namespace mdfm
