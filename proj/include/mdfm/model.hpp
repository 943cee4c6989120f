#pragma once

#include "mdfm/linalg.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace mdfm {

enum class Volatility { none, common_sv, outlier, fat_tail };
enum class Idio { exact_diagonal, kronecker_cross };

// unit_loadings: both A and B unit lower triangular, Lambda free diagonal.
// unit_factor_variance: same sampler with Lambda fixed at I.
enum class Identification { unit_loadings, unit_factor_variance };

std::string to_string(Volatility v);
std::string to_string(Idio v);
std::string to_string(Identification v);
Volatility volatility_from_string(const std::string &s);
Idio idio_from_string(const std::string &s);
Identification identification_from_string(const std::string &s);

/// Structural description of one matrix dynamic factor model.
struct ModelSpec {
  int n = 1;  // rows
  int k = 1;  // columns
  int T = 2;  // time length
  int p1 = 1; // factor rows
  int p2 = 1; // factor columns
  int q = 1;  // AR order of each factor series
  Volatility volatility = Volatility::none;
  Idio idio = Idio::kronecker_cross;
  Identification identification = Identification::unit_loadings;

  int factor_count() const { return p1 * p2; }
  bool operator==(const ModelSpec &) const = default;
};

/// One observation per time point, each n x k.
using Panel = std::vector<Matrix>;

struct Loadings {
  Matrix A; // n x p1
  Matrix B; // k x p2
};

struct IdioCov {
  Matrix sigma_r; // n x n
  Matrix sigma_c; // k x k, (0,0) == 1
};

struct FactorDynamics {
  Matrix rho;     // (p1 p2) x q
  Vector lambda2; // p1 p2
};

/// T x (p1 p2); row t is vec(F_t) in column-major order.
using FactorPath = Matrix;

struct CommonSv {
  Vector h;
  double phi = 0.0;
  double sigma_h2 = 0.1;
};

struct OutlierState {
  Eigen::VectorXi o; // grid values in {1, ..., 20}
  double p_o = 0.05;
};

struct FatTailState {
  Vector q2;
  double dof = 5.0;
};

struct VolatilityState {
  std::variant<std::monostate, CommonSv, OutlierState, FatTailState> payload;

  Volatility variant() const;
  /// Scale of the idiosyncratic covariance at time t (0-based).
  double omega(int t) const;
  Vector omegas(int T) const;
};

struct ParameterState {
  Loadings loadings;
  IdioCov cov;
  FactorDynamics dynamics;
  VolatilityState vol;
};

struct PriorConfig {
  double nu_r = 0;
  Matrix S_r;
  double nu_c = 0;
  Matrix S_c;
  Matrix A0;  // n x p1
  Matrix V_A; // p1 x p1
  Matrix B0;  // k x p2
  Matrix V_B; // p2 x p2
  Matrix rho0;  // p x q
  Matrix V_rho; // p x q
  Vector nu_lambda; // p
  Vector S_lambda;  // p
  // Common SV: phi ~ TN(phi0, V_phi) on (-1, 1), sigma_h2 ~ IG(a_sh, b_sh).
  double phi0 = 0.9;
  double V_phi = 0.04;
  double a_sh = 3.0;
  double b_sh = 0.2;
  // Outliers: p_o ~ Beta(a_po, b_po).
  double a_po = 2.0;
  double b_po = 38.0;
  // Fat tails: q_t^2 ~ IG(dof/2, dof/2), dof fixed.
  double dof = 5.0;
};

/// Weakly informative defaults sized to the spec.
PriorConfig default_prior(const ModelSpec &spec);

/// A F_t B' where F_t = unvec(f_t, p1, p2).
Matrix common_component(const Loadings &loadings, const Vector &f_t);

/// Zeros above the diagonal and ones on the diagonal of the leading
/// p x p blocks; all other entries untouched.
Loadings enforce_identification(const Matrix &raw_A, const Matrix &raw_B);

/// Free (unconstrained) entries (i, j) of an m x p loading matrix, i > j,
/// row-major. This is the coordinate order used by every density over
/// loadings.
std::vector<std::pair<int, int>> free_loading_entries(int m, int p);

/// Exact check of the unit-lower-triangular leading blocks.
bool satisfies_identification(const Loadings &loadings);

/// Stationarity of x_t = rho_1 x_{t-1} + ... + rho_q x_{t-q}, together with
/// sum(rho^2) < 1 so the initial-condition variance is finite.
bool is_stationary(const Eigen::Ref<const Vector> &rho);

struct Diagnostic {
  std::string field;
  std::string message;
};

/// Every violated constraint rather than the first.
std::vector<Diagnostic> validate_spec(const ModelSpec &spec,
                                      const PriorConfig &prior);

/// Every type invariant of one parameter state; empty when valid.
std::vector<Diagnostic> check_state(const ModelSpec &spec,
                                    const ParameterState &state);

/// log N(vec(E); 0, omega * Sigma_c (x) Sigma_r) using the Kronecker
/// structure; never forms the nk x nk covariance.
double kron_gaussian_logpdf(const Matrix &E, const Matrix &sigma_r,
                            const Matrix &sigma_c, double omega = 1.0);

} // namespace mdfm
