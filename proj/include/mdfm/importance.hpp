#pragma once

#include "mdfm/gibbs.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mdfm {

struct IsConfig {
  int draws = 2000;
  std::uint64_t seed = 7;
  int batches = 20;
  /// Loadings blocks get a full covariance up to this many free entries.
  int max_full_cov = 200;
};

struct MlEstimate {
  double log_ml = 0;
  double nse = 0;
  int n_is = 0;
  double ess = 0;
  double max_weight_share = 0;
  bool degenerate = false; // ESS < 1% of the draws
  std::string diagnostic;
};

// ---- likelihood and prior ----

/// log p(Y | A, B, Sigma_r, Sigma_c, rho, lambda2, omega) with the factors
/// integrated out: Kalman prediction-error decomposition on the GLS-collapsed
/// observation (A'Sr^-1 A)^-1 A'Sr^-1 Y_t Sc^-1 B (B'Sc^-1 B)^-1, companion
/// state for q > 1.
double integrated_loglik(const ModelSpec &spec, const Panel &Y,
                         const ParameterState &state);

/// Same quantity through p(Y|f) p(f) / p(f|Y) at the smoothed mean, using
/// one banded Cholesky of the path precision. Independent cross-check.
double integrated_loglik_banded(const ModelSpec &spec, const Panel &Y,
                                const ParameterState &state);

/// Sum over t of log N(vec Y_t; 0, omega_t Sc (x) Sr + H V H') with V the
/// stationary factor variance: exact only when rho = 0.
double period_marginal_loglik(const ModelSpec &spec, const Panel &Y,
                              const ParameterState &state);

/// log P(rho stationary) under independent N(rho0, V) coefficients.
double stationary_log_mass(const Vector &rho0, const Vector &v_rho);

/// log p(theta) over the free coordinates: loadings off the constraint set,
/// covariances (restricted for Sigma_c), rho, lambda2, volatility block.
double log_prior(const ModelSpec &spec, const PriorConfig &prior,
                 const ParameterState &state);

/// log N(free loadings | fixed loadings) under vec(X') ~ N(vec M0', S (x) V).
double conditional_loading_logpdf(const Matrix &L, const Matrix &M0,
                                  const Matrix &sigma, const Matrix &V);

// ---- importance density ----

struct GaussianBlock {
  Vector mean;
  Matrix chol; // lower Cholesky of the covariance when full
  bool full = false;
  // Otherwise block diagonal, one block per loading row.
  std::vector<std::vector<Eigen::Index>> groups;
  std::vector<Matrix> group_chol;
};

struct ImportanceDensity {
  ModelSpec spec;
  GaussianBlock a, b;
  // kronecker-cross: IW for Sigma_r, restricted IW for Sigma_c.
  double nu_r = 0, nu_c = 0;
  Matrix S_r, S_c;
  // exact-diagonal: IG per diagonal entry (Sigma_c entry 0 unused).
  Vector r_shape, r_scale, c_shape, c_scale;
  Matrix rho_mean, rho_var; // TN on (-1, 1) per coefficient
  Vector lambda_shape, lambda_scale;
  // common SV: h_t = mu_t + d_t, d_t = phi_g d_{t-1} + N(0, v_t)
  Vector h_mean, h_var;
  double h_phi = 0;
  double phi_mean = 0, phi_var = 1;
  double sh_shape = 1, sh_scale = 1;
  // outliers
  Matrix o_prob; // T x 20
  double po_a = 1, po_b = 1;
  // fat tails
  Vector q2_shape, q2_scale;
  double dof = 5;
  std::vector<std::string> warnings;
};

ImportanceDensity fit_importance_density(const PosteriorStore &store,
                                         const IsConfig &config = {});
ParameterState sample_importance(const ImportanceDensity &g, Rng &rng);
double importance_logpdf(const ImportanceDensity &g, const ParameterState &s);

/// Tridiagonal precision (diagonal, subdiagonal) of the SV proposal.
std::pair<Vector, Vector> sv_proposal_precision(const ImportanceDensity &g);

/// log-sum-exp mean with batch-means NSE (delta method) and ESS.
MlEstimate combine_log_weights(const std::vector<double> &log_w, int batches);

/// Generic IS core: `draw` returns one log-weight per call.
MlEstimate importance_estimate(const std::function<double(Rng &)> &draw, int n,
                               std::uint64_t seed, int batches);

MlEstimate estimate_log_ml(const ModelSpec &spec, const PriorConfig &prior,
                           const Panel &Y, const ImportanceDensity &g,
                           const IsConfig &config);

/// Chain, importance fit and estimate in one call.
MlEstimate fit_and_estimate(const ModelSpec &spec, const PriorConfig &prior,
                            const Panel &Y, const McmcConfig &mcmc, const IsConfig &is);

/// Conjugate regression y = x beta + e, e ~ N(0, s2), beta | s2 ~
/// N(beta0, s2 V0), s2 ~ IG(a0, b0): closed-form marginal likelihood and
/// the same cross-entropy IS estimator on exact posterior draws.
struct ConjugateToy {
  Vector x, y;
  double beta0 = 0, V0 = 1, a0 = 3, b0 = 2;

  double log_ml() const;
  double log_likelihood(double beta, double s2) const;
  double log_prior(double beta, double s2) const;
  MlEstimate is_estimate(int posterior_draws, int n_is, std::uint64_t seed,
                         int batches = 20) const;
};

} // namespace mdfm
