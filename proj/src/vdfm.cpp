#include "mdfm/vdfm.hpp"

#include "mdfm/errors.hpp"

namespace mdfm {

ModelSpec to_model_spec(const VdfmSpec &v) {
  ModelSpec s;
  s.n = v.nk;
  s.k = 1;
  s.T = v.T;
  s.p1 = v.k_f;
  s.p2 = 1;
  s.q = v.q;
  s.volatility = v.volatility;
  s.idio = Idio::exact_diagonal;
  s.identification = Identification::unit_loadings;
  return s;
}

Panel vectorize_panel(const Panel &Y) {
  Panel out;
  out.reserve(Y.size());
  for (const auto &y : Y)
    out.emplace_back(vec(y));
  return out;
}

namespace {

void check_vectorized(const VdfmSpec &spec, const Panel &Y) {
  if (spec.k_f > spec.nk)
    throw UsageError("VDFM needs k_f <= nk, got k_f=" + std::to_string(spec.k_f) +
                     " nk=" + std::to_string(spec.nk));
  for (std::size_t t = 0; t < Y.size(); ++t)
    if (Y[t].cols() != 1)
      throw DataError("VDFM panel must hold column vectors; time " + std::to_string(t) +
                      " has " + std::to_string(Y[t].cols()) + " columns");
}

} // namespace

PosteriorStore vdfm_run_chain(const VdfmSpec &spec, const PriorConfig &prior,
                              const McmcConfig &config, const Panel &vectorized) {
  check_vectorized(spec, vectorized);
  return run_chain(to_model_spec(spec), prior, config, vectorized);
}

MlEstimate vdfm_log_ml(const VdfmSpec &spec, const PriorConfig &prior,
                       const Panel &vectorized, const McmcConfig &config,
                       const IsConfig &is) {
  check_vectorized(spec, vectorized);
  return fit_and_estimate(to_model_spec(spec), prior, vectorized, config, is);
}

} // namespace mdfm
