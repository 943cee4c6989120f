#include "mdfm/posterior_io.hpp"

#include "mdfm/errors.hpp"
#include "mdfm/io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mdfm {

static_assert(std::endian::native == std::endian::little,
              "posterior files are written as little-endian float64");

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

Eigen::Index vol_width(const ModelSpec &spec) {
  switch (spec.volatility) {
  case Volatility::none:
    return 0;
  case Volatility::common_sv:
  case Volatility::outlier:
  case Volatility::fat_tail:
    return spec.T + (spec.volatility == Volatility::common_sv ? 2 : 1);
  }
  return 0;
}

json matrix_json(const Matrix &m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

Matrix matrix_from_json(const json &j, const std::string &what) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw UsageError(what + ": expected a non-empty array of rows");
  const auto r = j.size(), c = j[0].size();
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    if (j[i].size() != c)
      throw UsageError(what + ": ragged matrix");
    for (std::size_t k = 0; k < c; ++k)
      m(i, k) = j[i][k].get<double>();
  }
  return m;
}

json vector_json(const Vector &v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from_json(const json &j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> read_doubles(const fs::path &p, std::size_t expect) {
  std::ifstream in(p, std::ios::binary);
  if (!in)
    throw DataError("cannot open " + p.string());
  std::vector<double> v(expect);
  in.read(reinterpret_cast<char *>(v.data()), static_cast<std::streamsize>(expect * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(expect * sizeof(double)))
    throw DataError(p.string() + ": truncated, expected " + std::to_string(expect) + " values");
  in.peek();
  if (!in.eof())
    throw DataError(p.string() + ": trailing bytes after " + std::to_string(expect) +
                    " values");
  return v;
}

std::string chunk_name(const char *stem, int i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03d.bin", stem, i);
  return buf;
}

} // namespace

Eigen::Index state_width(const ModelSpec &spec) {
  const Eigen::Index p = spec.factor_count();
  return static_cast<Eigen::Index>(spec.n) * spec.p1 + static_cast<Eigen::Index>(spec.k) * spec.p2 +
         static_cast<Eigen::Index>(spec.n) * spec.n + static_cast<Eigen::Index>(spec.k) * spec.k +
         p * spec.q + p + vol_width(spec);
}

Vector flatten_state(const ModelSpec &spec, const ParameterState &s) {
  Vector v(state_width(spec));
  Eigen::Index o = 0;
  auto put = [&](const Matrix &m) {
    v.segment(o, m.size()) = vec(m);
    o += m.size();
  };
  put(s.loadings.A);
  put(s.loadings.B);
  put(s.cov.sigma_r);
  put(s.cov.sigma_c);
  put(s.dynamics.rho);
  put(s.dynamics.lambda2);
  if (auto *sv = std::get_if<CommonSv>(&s.vol.payload)) {
    put(sv->h);
    v(o++) = sv->phi;
    v(o++) = sv->sigma_h2;
  } else if (auto *ol = std::get_if<OutlierState>(&s.vol.payload)) {
    put(ol->o.cast<double>());
    v(o++) = ol->p_o;
  } else if (auto *ft = std::get_if<FatTailState>(&s.vol.payload)) {
    put(ft->q2);
    v(o++) = ft->dof;
  }
  if (o != v.size())
    throw UsageError("state does not match the spec's volatility variant");
  return v;
}

ParameterState unflatten_state(const ModelSpec &spec, const Eigen::Ref<const Vector> &v) {
  if (v.size() != state_width(spec))
    throw DataError("flat state has " + std::to_string(v.size()) + " values, expected " +
                    std::to_string(state_width(spec)));
  ParameterState s;
  Eigen::Index o = 0;
  auto take = [&](Eigen::Index r, Eigen::Index c) {
    Matrix m = unvec(v.segment(o, r * c), r, c);
    o += r * c;
    return m;
  };
  const int p = spec.factor_count();
  s.loadings.A = take(spec.n, spec.p1);
  s.loadings.B = take(spec.k, spec.p2);
  s.cov.sigma_r = take(spec.n, spec.n);
  s.cov.sigma_c = take(spec.k, spec.k);
  s.dynamics.rho = take(p, spec.q);
  s.dynamics.lambda2 = take(p, 1);
  switch (spec.volatility) {
  case Volatility::none:
    break;
  case Volatility::common_sv: {
    CommonSv sv;
    sv.h = take(spec.T, 1);
    sv.phi = v(o++);
    sv.sigma_h2 = v(o++);
    s.vol.payload = sv;
    break;
  }
  case Volatility::outlier: {
    OutlierState ol;
    ol.o = take(spec.T, 1).array().round().cast<int>();
    ol.p_o = v(o++);
    s.vol.payload = ol;
    break;
  }
  case Volatility::fat_tail: {
    FatTailState ft;
    ft.q2 = take(spec.T, 1);
    ft.dof = v(o++);
    s.vol.payload = ft;
    break;
  }
  }
  return s;
}

json spec_to_json(const ModelSpec &s) {
  return json{{"n", s.n},
              {"k", s.k},
              {"T", s.T},
              {"p1", s.p1},
              {"p2", s.p2},
              {"q", s.q},
              {"volatility", to_string(s.volatility)},
              {"idio", to_string(s.idio)},
              {"identification", to_string(s.identification)}};
}

ModelSpec spec_from_json(const json &j) {
  ModelSpec s;
  s.n = j.at("n").get<int>();
  s.k = j.at("k").get<int>();
  s.T = j.value("T", 2);
  s.p1 = j.at("p1").get<int>();
  s.p2 = j.at("p2").get<int>();
  s.q = j.value("q", 1);
  s.volatility = volatility_from_string(j.value("volatility", std::string("none")));
  s.idio = idio_from_string(j.value("idio", std::string("kronecker-cross")));
  s.identification =
      identification_from_string(j.value("identification", std::string("unit-loadings")));
  return s;
}

json prior_to_json(const PriorConfig &p) {
  return json{{"nu_r", p.nu_r},
              {"S_r", matrix_json(p.S_r)},
              {"nu_c", p.nu_c},
              {"S_c", matrix_json(p.S_c)},
              {"A0", matrix_json(p.A0)},
              {"V_A", matrix_json(p.V_A)},
              {"B0", matrix_json(p.B0)},
              {"V_B", matrix_json(p.V_B)},
              {"rho0", matrix_json(p.rho0)},
              {"V_rho", matrix_json(p.V_rho)},
              {"nu_lambda", vector_json(p.nu_lambda)},
              {"S_lambda", vector_json(p.S_lambda)},
              {"phi0", p.phi0},
              {"V_phi", p.V_phi},
              {"a_sh", p.a_sh},
              {"b_sh", p.b_sh},
              {"a_po", p.a_po},
              {"b_po", p.b_po},
              {"dof", p.dof}};
}

PriorConfig prior_from_json(const json &j) {
  PriorConfig p;
  p.nu_r = j.at("nu_r").get<double>();
  p.S_r = matrix_from_json(j.at("S_r"), "S_r");
  p.nu_c = j.at("nu_c").get<double>();
  p.S_c = matrix_from_json(j.at("S_c"), "S_c");
  p.A0 = matrix_from_json(j.at("A0"), "A0");
  p.V_A = matrix_from_json(j.at("V_A"), "V_A");
  p.B0 = matrix_from_json(j.at("B0"), "B0");
  p.V_B = matrix_from_json(j.at("V_B"), "V_B");
  p.rho0 = matrix_from_json(j.at("rho0"), "rho0");
  p.V_rho = matrix_from_json(j.at("V_rho"), "V_rho");
  p.nu_lambda = vector_from_json(j.at("nu_lambda"));
  p.S_lambda = vector_from_json(j.at("S_lambda"));
  p.phi0 = j.at("phi0").get<double>();
  p.V_phi = j.at("V_phi").get<double>();
  p.a_sh = j.at("a_sh").get<double>();
  p.b_sh = j.at("b_sh").get<double>();
  p.a_po = j.at("a_po").get<double>();
  p.b_po = j.at("b_po").get<double>();
  p.dof = j.at("dof").get<double>();
  return p;
}

json state_to_json(const ModelSpec &spec, const ParameterState &s) {
  (void)spec;
  json j{{"A", matrix_json(s.loadings.A)},
         {"B", matrix_json(s.loadings.B)},
         {"sigma_r", matrix_json(s.cov.sigma_r)},
         {"sigma_c", matrix_json(s.cov.sigma_c)},
         {"rho", matrix_json(s.dynamics.rho)},
         {"lambda2", vector_json(s.dynamics.lambda2)}};
  if (auto *sv = std::get_if<CommonSv>(&s.vol.payload))
    j["volatility"] = {{"h", vector_json(sv->h)}, {"phi", sv->phi}, {"sigma_h2", sv->sigma_h2}};
  else if (auto *ol = std::get_if<OutlierState>(&s.vol.payload))
    j["volatility"] = {{"o", std::vector<int>(ol->o.data(), ol->o.data() + ol->o.size())},
                       {"p_o", ol->p_o}};
  else if (auto *ft = std::get_if<FatTailState>(&s.vol.payload))
    j["volatility"] = {{"q2", vector_json(ft->q2)}, {"dof", ft->dof}};
  return j;
}

void save_posterior(const PosteriorStore &store, const fs::path &dir, int chunk_rows) {
  if (chunk_rows < 1)
    throw UsageError("chunk_rows must be positive");
  fs::create_directories(dir);
  const auto &spec = store.spec;
  const auto W = state_width(spec);
  const int N = static_cast<int>(store.draws.size());
  json chunks = json::array();
  for (int c = 0, start = 0; start < N; ++c, start += chunk_rows) {
    const int rows = std::min(chunk_rows, N - start);
    std::vector<double> buf(static_cast<std::size_t>(rows) * W);
    for (int r = 0; r < rows; ++r) {
      const Vector v = flatten_state(spec, store.draws[start + r]);
      std::copy(v.data(), v.data() + W, buf.begin() + static_cast<std::ptrdiff_t>(r) * W);
    }
    const auto name = chunk_name("draws", c);
    atomic_write_binary(dir / name, buf.data(), buf.size() * sizeof(double));
    chunks.push_back(json{{"file", name}, {"rows", rows}});
  }
  auto write_matrix = [&](const std::string &name, const Matrix &m) {
    // Row-major on disk: T rows of p values.
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    atomic_write_binary(dir / name, rm.data(), static_cast<std::size_t>(rm.size()) * sizeof(double));
  };
  write_matrix("factor_mean.bin", store.factor_mean);
  write_matrix("factor_sd.bin", store.factor_sd);
  json paths = json::array();
  for (std::size_t i = 0; i < store.factor_paths.size(); ++i) {
    const auto name = chunk_name("factor_path", static_cast<int>(i));
    write_matrix(name, store.factor_paths[i]);
    paths.push_back(name);
  }
  const auto &c = store.config;
  json manifest{
      {"format", "mdfm-posterior"},
      {"version", 1},
      {"git_describe", store.git_describe},
      {"spec", spec_to_json(spec)},
      {"prior", prior_to_json(store.prior)},
      {"mcmc",
       {{"burn_in", c.burn_in},
        {"draws", c.draws},
        {"thin", c.thin},
        {"seed", c.seed},
        {"init", to_string(c.init)},
        {"factor_sampler", c.factor_sampler == FactorSampler::joint ? "joint" : "per-t"},
        {"store_factor_paths", c.store_factor_paths}}},
      {"layout",
       {{"dtype", "float64-le"},
        {"state_width", W},
        {"order", "A, B, sigma_r, sigma_c, rho, lambda2 column-major, then volatility"},
        {"factor_layout", "row-major T x p1*p2"}}},
      {"draw_count", N},
      {"chunks", chunks},
      {"factor_paths", paths},
      {"factor_rows", store.factor_mean.rows()},
      {"factor_cols", store.factor_mean.cols()},
      {"scalar_names", store.scalar_names},
      {"geweke_z", store.geweke_z},
      {"timings",
       {{"loadings_row", store.timings.loadings_row},
        {"loadings_col", store.timings.loadings_col},
        {"factors", store.timings.factors},
        {"lambda", store.timings.lambda},
        {"rho", store.timings.rho},
        {"volatility", store.timings.volatility}}},
      {"stats",
       {{"rho_proposed", store.stats.rho_proposed},
        {"rho_accepted", store.stats.rho_accepted},
        {"sv_proposed", store.stats.sv_proposed},
        {"sv_accepted", store.stats.sv_accepted},
        {"sv_fallbacks", store.stats.sv_fallbacks},
        {"phi_proposed", store.stats.phi_proposed},
        {"phi_accepted", store.stats.phi_accepted}}}};
  // NaN z-scores are not valid JSON numbers.
  for (auto &z : manifest["geweke_z"])
    if (z.is_number() && !std::isfinite(z.get<double>()))
      z = nullptr;
  atomic_write_text(dir / "manifest.json", manifest.dump(2));
}

PosteriorStore load_posterior(const fs::path &dir) {
  json m;
  try {
    m = json::parse(read_text_file(dir / "manifest.json"));
  } catch (const json::exception &e) {
    throw DataError((dir / "manifest.json").string() + ": " + e.what());
  }
  if (m.value("format", "") != "mdfm-posterior")
    throw DataError(dir.string() + " does not hold a posterior (format tag missing)");
  PosteriorStore s;
  try {
    s.spec = spec_from_json(m.at("spec"));
    s.prior = prior_from_json(m.at("prior"));
    const auto &mc = m.at("mcmc");
    s.config.burn_in = mc.at("burn_in");
    s.config.draws = mc.at("draws");
    s.config.thin = mc.at("thin");
    s.config.seed = mc.at("seed");
    s.config.init = init_mode_from_string(mc.at("init"));
    s.config.factor_sampler =
        mc.at("factor_sampler") == "joint" ? FactorSampler::joint : FactorSampler::per_t;
    s.config.store_factor_paths = mc.at("store_factor_paths");
    s.git_describe = m.value("git_describe", "");
    const auto W = state_width(s.spec);
    if (m.at("layout").at("state_width").get<Eigen::Index>() != W)
      throw DataError("state width in manifest does not match the spec");
    for (const auto &c : m.at("chunks")) {
      const int rows = c.at("rows");
      const auto v = read_doubles(dir / c.at("file").get<std::string>(),
                                  static_cast<std::size_t>(rows) * W);
      for (int r = 0; r < rows; ++r)
        s.draws.push_back(unflatten_state(
            s.spec, Eigen::Map<const Vector>(v.data() + static_cast<std::ptrdiff_t>(r) * W, W)));
    }
    if (static_cast<int>(s.draws.size()) != m.at("draw_count").get<int>())
      throw DataError("draw count does not match the manifest");
    const int fr = m.at("factor_rows"), fc = m.at("factor_cols");
    auto read_matrix = [&](const std::string &name) {
      auto v = read_doubles(dir / name, static_cast<std::size_t>(fr) * fc);
      return Matrix(Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                             Eigen::RowMajor>>(v.data(), fr, fc));
    };
    s.factor_mean = read_matrix("factor_mean.bin");
    s.factor_sd = read_matrix("factor_sd.bin");
    for (const auto &p : m.at("factor_paths"))
      s.factor_paths.push_back(read_matrix(p.get<std::string>()));
    s.scalar_names = m.at("scalar_names").get<std::vector<std::string>>();
    for (const auto &z : m.at("geweke_z"))
      s.geweke_z.push_back(z.is_null() ? std::nan("") : z.get<double>());
    const auto &t = m.at("timings");
    s.timings = {t.at("loadings_row"), t.at("loadings_col"), t.at("factors"),
                 t.at("lambda"),       t.at("rho"),          t.at("volatility")};
    const auto &st = m.at("stats");
    s.stats = {st.at("rho_proposed"), st.at("rho_accepted"), st.at("sv_proposed"),
               st.at("sv_accepted"),  st.at("sv_fallbacks"), st.at("phi_proposed"),
               st.at("phi_accepted")};
  } catch (const json::exception &e) {
    throw DataError((dir / "manifest.json").string() + ": " + e.what());
  }
  return s;
}

std::string posterior_csv(const PosteriorStore &store) {
  std::ostringstream os;
  for (std::size_t i = 0; i < store.scalar_names.size(); ++i)
    os << (i ? "," : "") << store.scalar_names[i];
  os << '\n';
  char buf[40];
  for (const auto &d : store.draws) {
    const Vector v = scalar_parameters(store.spec, d);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", v(i));
      os << (i ? "," : "") << buf;
    }
    os << '\n';
  }
  return os.str();
}

json posterior_summary(const PosteriorStore &store) {
  const auto &names = store.scalar_names;
  Vector mean = Vector::Zero(static_cast<Eigen::Index>(names.size()));
  for (const auto &d : store.draws)
    mean += scalar_parameters(store.spec, d);
  if (!store.draws.empty())
    mean /= static_cast<double>(store.draws.size());
  json params = json::array();
  int ok = 0, finite = 0;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double z = i < store.geweke_z.size() ? store.geweke_z[i] : std::nan("");
    params.push_back(json{{"name", names[i]},
                          {"mean", mean(static_cast<Eigen::Index>(i))},
                          {"geweke_z", std::isfinite(z) ? json(z) : json(nullptr)}});
    if (std::isfinite(z)) {
      ++finite;
      ok += std::abs(z) < 1.96 ? 1 : 0;
    }
  }
  auto rate = [](long a, long p) { return p > 0 ? static_cast<double>(a) / p : 0.0; };
  return json{
      {"spec", spec_to_json(store.spec)},
      {"draws", store.draws.size()},
      {"burn_in", store.config.burn_in},
      {"seed", store.config.seed},
      {"git_describe", store.git_describe},
      {"geweke_share_below_1_96", finite ? static_cast<double>(ok) / finite : 0.0},
      {"rho_acceptance", rate(store.stats.rho_accepted, store.stats.rho_proposed)},
      {"sv_acceptance", rate(store.stats.sv_accepted, store.stats.sv_proposed)},
      {"sv_fallbacks", store.stats.sv_fallbacks},
      {"timings",
       {{"loadings_row", store.timings.loadings_row},
        {"loadings_col", store.timings.loadings_col},
        {"factors", store.timings.factors},
        {"lambda", store.timings.lambda},
        {"rho", store.timings.rho},
        {"volatility", store.timings.volatility}}},
      {"parameters", params}};
}

} // namespace mdfm
