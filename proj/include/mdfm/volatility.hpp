#pragma once

#include "mdfm/distributions.hpp"
#include "mdfm/model.hpp"

namespace mdfm {

inline constexpr int kOutlierGridMax = 20;

/// s2_t = tr(Sigma_c^{-1} E_t' Sigma_r^{-1} E_t), E_t = Y_t - A F_t B'.
Vector residual_quadratic(const Panel &Y, const ParameterState &state,
                          const FactorPath &f);

struct SvMode {
  Vector h;
  Vector gradient;
  int iterations = 0;
  bool converged = false;
};

/// Log posterior of the log-volatility path up to a constant, with N = nk
/// observations per period and the stationary AR(1) prior.
double sv_log_posterior(const Vector &h, const Vector &s2, double N, double phi,
                        double sigma_h2);
Vector sv_gradient(const Vector &h, const Vector &s2, double N, double phi,
                   double sigma_h2);
/// Damped Newton on the tridiagonal negative Hessian.
SvMode sv_posterior_mode(const Vector &s2, double N, double phi, double sigma_h2,
                         const Vector &start, int max_iter = 5, double tol = 1e-8);

struct SvUpdateStats {
  bool proposed = false;
  bool accepted = false;
  bool fallback = false;
  bool phi_accepted = false;
};

/// h by accept-reject Metropolis-Hastings around the mode, then phi, then
/// sigma_h2. `mode_cache` carries the last mode between iterations.
SvUpdateStats sample_common_sv(const PriorConfig &prior, const Vector &s2, double N,
                               CommonSv &sv, Vector &mode_cache, Rng &rng);

/// Prior over the grid {1, ..., 20}: 1 - p_o on 1, p_o / 19 elsewhere.
double outlier_log_prior(int o, double p_o);
/// Normalized full-conditional probabilities of o_t over the grid.
Vector outlier_probabilities(double s2, double N, double p_o);
void sample_outliers(const PriorConfig &prior, const Vector &s2, double N,
                     OutlierState &state, Rng &rng);

void sample_fat_tail(const Vector &s2, double N, FatTailState &state, Rng &rng);

struct VolatilityWorkspace {
  Vector sv_mode;
  SvUpdateStats last;
};

void step_volatility(const ModelSpec &spec, const PriorConfig &prior, const Panel &Y,
                     const FactorPath &f, ParameterState &state,
                     VolatilityWorkspace &ws, Rng &rng);

/// Prior draw/initial value of the volatility payload for a variant.
VolatilityState initial_volatility(const ModelSpec &spec, const PriorConfig &prior);

/// log p(latents, hyperparameters) under the volatility prior.
double volatility_log_prior(const ModelSpec &spec, const PriorConfig &prior,
                            const VolatilityState &vol);

} // namespace mdfm
