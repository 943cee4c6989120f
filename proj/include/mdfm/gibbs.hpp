#pragma once

#include "mdfm/distributions.hpp"
#include "mdfm/model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mdfm {

enum class InitMode { prior_draw, vdfm_warm_start, user_supplied, spectral };
enum class FactorSampler { joint, per_t };

std::string to_string(InitMode m);
InitMode init_mode_from_string(const std::string &s);

struct McmcConfig {
  int burn_in = 1000;
  int draws = 2000;
  int thin = 1;
  std::uint64_t seed = 1;
  InitMode init = InitMode::spectral;
  std::optional<ParameterState> user_init;
  std::optional<FactorPath> user_factors;
  FactorSampler factor_sampler = FactorSampler::joint;
  bool store_factor_paths = false;
  bool validate_draws = true;
  // Length of the vectorized warm-start chain.
  int warm_burn_in = 1000;
  int warm_draws = 1000;
};

/// Problems with the config itself; empty when usable.
std::vector<Diagnostic> validate_config(const McmcConfig &config);

struct StepTimings {
  double loadings_row = 0;
  double loadings_col = 0;
  double factors = 0;
  double lambda = 0;
  double rho = 0;
  double volatility = 0;
};

struct ChainStats {
  long rho_proposed = 0;
  long rho_accepted = 0;
  long sv_proposed = 0;
  long sv_accepted = 0;
  long sv_fallbacks = 0;
  long phi_proposed = 0;
  long phi_accepted = 0;
};

struct PosteriorStore {
  ModelSpec spec;
  PriorConfig prior;
  McmcConfig config;
  std::vector<ParameterState> draws;
  std::vector<FactorPath> factor_paths; // filled only when requested
  FactorPath factor_mean;               // running mean over retained draws
  FactorPath factor_sd;
  StepTimings timings;
  ChainStats stats;
  std::vector<std::string> scalar_names;
  std::vector<double> geweke_z;
  std::string git_describe;
};

/// Names and values of every scalar parameter in one draw, in a fixed
/// order: free loadings, covariance entries, rho, lambda2, volatility
/// hyperparameters.
std::vector<std::string> scalar_parameter_names(const ModelSpec &spec);
Vector scalar_parameters(const ModelSpec &spec, const ParameterState &s);

/// First 10% vs last 50% of the chain, spectral variances at frequency zero.
double geweke_z(const Eigen::Ref<const Vector> &chain);

/// Unit-lower-triangular constraint on X = A' (p x m), i.e. on the leading
/// p x p block of the m x p matrix A.
LinearConstraint identification_constraint(int p, int m);

/// Conjugate quantities of the (A', Sigma_r) or (B', Sigma_c) update.
struct LoadingsPosterior {
  Matrix K;    // posterior row precision
  Matrix mean; // posterior mean of the transposed loadings
  double nu = 0;
  Matrix S; // full scale (kronecker-cross) or only its diagonal is used
};

LoadingsPosterior loadings_row_posterior(const ModelSpec &spec,
                                         const PriorConfig &prior,
                                         const Panel &Y, const FactorPath &f,
                                         const ParameterState &state);
LoadingsPosterior loadings_col_posterior(const ModelSpec &spec,
                                         const PriorConfig &prior,
                                         const Panel &Y, const FactorPath &f,
                                         const ParameterState &state);

void step_loadings_row(const ModelSpec &spec, const PriorConfig &prior,
                       const Panel &Y, const FactorPath &f, ParameterState &state,
                       Rng &rng);
void step_loadings_col(const ModelSpec &spec, const PriorConfig &prior,
                       const Panel &Y, const FactorPath &f, ParameterState &state,
                       Rng &rng);

/// Precision and linear term of the joint Gaussian conditional of the
/// stacked path (index t * p + j). The precision is left unfactorized.
struct FactorSystem {
  BandedSpd precision;
  Vector linear;
};
FactorSystem factor_system(const ModelSpec &spec, const Panel &Y,
                           const ParameterState &state);
/// Banded prior precision of the stacked path.
BandedSpd factor_prior_precision(const ModelSpec &spec, const FactorDynamics &dyn,
                                 int T);

FactorPath step_factors(const ModelSpec &spec, const Panel &Y,
                        const ParameterState &state, Rng &rng,
                        FactorSampler sampler = FactorSampler::joint);

/// Inverse-gamma (shape, scale) of each lambda2_j given the path.
std::pair<Vector, Vector> lambda_posterior(const ModelSpec &spec,
                                           const PriorConfig &prior,
                                           const FactorPath &f, const Matrix &rho);
void step_lambda(const ModelSpec &spec, const PriorConfig &prior,
                 const FactorPath &f, ParameterState &state, Rng &rng);

/// Log acceptance ratio of moving series j from rho to rho_star.
double rho_log_acceptance(const FactorPath &f, int j, double lambda2,
                          const Vector &rho, const Vector &rho_star, int q);
/// Returns the number of accepted proposals.
int step_rho(const ModelSpec &spec, const PriorConfig &prior, const FactorPath &f,
             ParameterState &state, Rng &rng);

/// Deterministic starting point of the chosen init mode (except user).
struct ChainStart {
  ParameterState state;
  FactorPath f;
};
ChainStart initial_state(const ModelSpec &spec, const PriorConfig &prior,
                         const McmcConfig &config, const Panel &Y, Rng &rng);

PosteriorStore run_chain(const ModelSpec &spec, const PriorConfig &prior,
                         const McmcConfig &config, const Panel &Y);

/// Panel shape check shared by all entry points.
void check_panel(const ModelSpec &spec, const Panel &Y);

Matrix kron(const Matrix &a, const Matrix &b);

} // namespace mdfm
