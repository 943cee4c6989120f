#pragma once

#include "mdfm/scan.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>

namespace mdfm {

enum class LoadingLaw { uniform01, normal, uniform_pm1 };
enum class CovLaw { scaled_identity, inverse_wishart };

std::string to_string(LoadingLaw l);
std::string to_string(CovLaw l);
LoadingLaw loading_law_from_string(const std::string &s);
CovLaw cov_law_from_string(const std::string &s);

/// Parameter laws of a simulated MDFM. The spec's idio and volatility tags
/// pick the truth: exact-diagonal keeps only the diagonal of the drawn
/// covariances.
struct DgpConfig {
  ModelSpec spec;
  LoadingLaw loading_law = LoadingLaw::uniform01;
  double loading_sd = 0.3; // normal law
  double rho_lo = 0.8, rho_hi = 0.9;
  CovLaw cov_law = CovLaw::scaled_identity;
  double sigma_r_scale = 0.5;
  double sigma_c_scale = 0.3;
  double iw_extra_dof = 2.0; // Sigma ~ IW(d + extra, I)
  double lambda2 = 1.0;
  double sv_phi = 0.97;
  double sv_sigma_h2 = 0.1;
  double outlier_p = 0.05;
  double fat_dof = 5.0;
  std::uint64_t seed = 1;
};

/// Uniform(0,1) loadings, rho ~ U(0.8, 0.9), Sigma_c = 0.3 I, Sigma_r = 0.5 I,
/// lambda2 = 1, q = 1.
DgpConfig dgp_uniform_design(int n, int k, int T, int p1, int p2, std::uint64_t seed);

/// N(0, 0.3^2) loadings, IW(d + 2, I) covariances, lambda2 = 0.1,
/// rho ~ U(0.8, 0.9), log-volatility AR(1) with phi 0.97 and variance 0.1.
DgpConfig dgp_structure_design(int n, int k, int T, int p1, int p2, Idio idio,
                               Volatility vol, std::uint64_t seed);

struct SimulatedData {
  ModelSpec spec;        // spec of the true model
  Panel Y;               // n x k observations
  ParameterState truth;  // identified (Sigma_c(0,0) = 1) true parameters
  FactorPath f;          // true factors
};

SimulatedData generate_mdfm(const DgpConfig &cfg);

struct VdfmDgpConfig {
  int n = 10, k = 10; // observations are reshaped to n x k
  int T = 200;
  int k_f = 2;
  int q = 1;
  double rho_lo = 0.7, rho_hi = 0.95;
  double loading_lo = -1.0, loading_hi = 1.0;
  double idio_var = 1.0;
  double factor_var = 1.0;
  std::uint64_t seed = 1;
};

/// y_t = M f_t + eps_t with nk = n k series, stacked column-major into n x k
/// observations. The truth is expressed in the to_model_spec parameterization.
SimulatedData generate_vdfm(const VdfmDgpConfig &cfg);

/// Per factor series: OLS of the true series on the estimate with an
/// intercept, adjusted R^2 = 1 - (1 - R^2)(T - 1)/(T - 2). NaN when the
/// estimate has zero variance.
Vector adjusted_r2(const FactorPath &truth, const FactorPath &estimate);

enum class Design { factor_recovery, dimension_scan, mdfm_vs_vdfm, exact_vs_approx };
std::string to_string(Design d);
Design design_from_string(const std::string &s);

struct ExperimentConfig {
  Design design = Design::factor_recovery;
  int replications = 20;
  std::uint64_t seed = 1;
  McmcConfig mcmc;
  IsConfig is;
  int n = 10, k = 10, T = 500;
  int p1 = 3, p2 = 2;
  int max_p = 4;                      // dimension-scan grid {1..max_p}^2
  int max_kf = 6;                     // VDFM candidates 1..max_kf
  int vdfm_kf = 2;                    // truth of the reverse comparison
  bool reverse = true;                // mdfm-vs-vdfm: also run VDFM-generated data
  Idio fit_idio = Idio::kronecker_cross; // factor-recovery / dimension-scan fits
  Idio compare_idio = Idio::exact_diagonal; // MDFM candidates against VDFMs
  std::string out_dir;                // empty: no files written
};

/// Runs every replication of the design and returns the aggregate report;
/// writes per-replication JSON, report.json, report.csv and manifest.json
/// under out_dir when it is set. A failing replication is recorded and the
/// remaining ones still run.
nlohmann::json run_experiment(const ExperimentConfig &config);

/// Rise-then-fall along a sequence: strictly increasing up to `peak` and
/// strictly decreasing after it.
bool rise_then_fall(const std::vector<double> &values, int peak);

} // namespace mdfm
