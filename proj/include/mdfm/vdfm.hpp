#pragma once

#include "mdfm/gibbs.hpp"
#include "mdfm/importance.hpp"

namespace mdfm {

/// y_t = M f_t + eps_t with nk series and k_f factors; M unit lower
/// triangular in its leading k_f x k_f block, diagonal idiosyncratic
/// covariance, diagonal factor AR.
struct VdfmSpec {
  int nk = 1;
  int k_f = 1;
  int T = 2;
  int q = 1;
  Volatility volatility = Volatility::none;
};

/// The VDFM as an MDFM with one column block: n = nk, k = 1, p1 = k_f,
/// p2 = 1, exact-diagonal idiosyncratic covariance. B = [1] and
/// Sigma_c = [1] then hold on every draw.
ModelSpec to_model_spec(const VdfmSpec &v);

/// Stacks each n x k observation into an nk x 1 column (column-major vec).
Panel vectorize_panel(const Panel &Y);

PosteriorStore vdfm_run_chain(const VdfmSpec &spec, const PriorConfig &prior,
                              const McmcConfig &config, const Panel &vectorized);

MlEstimate vdfm_log_ml(const VdfmSpec &spec, const PriorConfig &prior,
                       const Panel &vectorized, const McmcConfig &config,
                       const IsConfig &is);

} // namespace mdfm
