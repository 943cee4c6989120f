#include "common.hpp"

#include "mdfm/app.hpp"
#include "mdfm/io.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

using namespace mdfm;
using namespace mdfm::test;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string &name) {
  const fs::path p = fs::temp_directory_path() / ("mdfm_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

CsvLayout layout2() { return {CsvFormat::long_format, {"US", "DE"}, {"gdp", "cpi"}}; }

const char *kLong = "time,row,col,value\n"
                    "2001,US,gdp,1\n2001,US,cpi,2\n2001,DE,gdp,3\n2001,DE,cpi,4\n"
                    "2002,US,gdp,5\n2002,US,cpi,6\n2002,DE,gdp,7\n2002,DE,cpi,8\n";

} // namespace

TEST_CASE("csv ingestion") {
  SUBCASE("2x2x2 long file round trip") {
    const auto ds = parse_csv(kLong, layout2());
    REQUIRE(ds.T() == 2);
    CHECK(ds.values[0](0, 0) == 1);
    CHECK(ds.values[0](0, 1) == 2);
    CHECK(ds.values[0](1, 0) == 3);
    CHECK(ds.values[1](1, 1) == 8);
    CHECK(parse_csv(to_csv_long(ds), layout2()) == ds);
  }
  SUBCASE("duplicate cell is named") {
    const std::string text = std::string(kLong) + "2002,DE,cpi,9\n";
    try {
      parse_csv(text, layout2());
      FAIL("expected an error");
    } catch (const DataError &e) {
      const std::string msg = e.what();
      CHECK(msg.find("duplicate cell") != std::string::npos);
      CHECK(msg.find("time=2002") != std::string::npos);
      CHECK(msg.find("row=DE") != std::string::npos);
      CHECK(msg.find("col=cpi") != std::string::npos);
    }
  }
  SUBCASE("shuffled rows give the same tensor") {
    std::istringstream in(kLong);
    std::string header, line;
    std::getline(in, header);
    std::vector<std::string> rows;
    while (std::getline(in, line))
      rows.push_back(line);
    std::mt19937 g(3);
    std::shuffle(rows.begin(), rows.end(), g);
    std::string text = header + "\n";
    for (const auto &r : rows)
      text += r + "\n";
    CHECK(parse_csv(text, layout2()) == parse_csv(kLong, layout2()));
  }
  SUBCASE("ragged panel and unknown labels") {
    CHECK_THROWS_AS(parse_csv("time,row,col,value\n1,US,gdp,1\n", layout2()), DataError);
    CHECK_THROWS_WITH_AS(parse_csv("time,row,col,value\n1,FR,gdp,1\n", layout2()),
                         doctest::Contains("unknown row label 'FR'"), DataError);
  }
  SUBCASE("wide format matches long format") {
    CsvLayout w = layout2();
    w.format = CsvFormat::wide;
    const char *wide = "time,row,cpi,gdp\n2001,US,2,1\n2001,DE,4,3\n2002,US,6,5\n2002,DE,8,7\n";
    CHECK(parse_csv(wide, w).values == parse_csv(kLong, layout2()).values);
  }
  SUBCASE("missing values and numeric time order") {
    const char *text = "time,row,col,value\n10,a,x,NA\n9,a,x,1\n";
    const auto ds = parse_csv(text, {CsvFormat::long_format, {"a"}, {"x"}});
    CHECK(ds.time_index == std::vector<std::string>{"9", "10"});
    CHECK(ds.has_missing());
    CHECK(std::isnan(ds.values[1](0, 0)));
  }
  SUBCASE("file round trip") {
    const auto dir = scratch("csv");
    const auto ds = parse_csv(kLong, layout2());
    atomic_write_text(dir / "d.csv", to_csv_long(ds));
    CHECK(ingest_csv(dir / "d.csv", layout2()) == ds);
  }
}

TEST_CASE("preprocessing") {
  Rng rng(1);
  SUBCASE("standardize") {
    Panel Y(30);
    for (auto &y : Y)
      y = 3.0 + 2.0 * rng.normal_matrix(2, 3).array();
    const auto ds = preprocess(dataset_from_panel(Y), {"standardize"});
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 3; ++j) {
        std::vector<double> x;
        for (const auto &y : ds.values)
          x.push_back(y(i, j));
        CHECK(std::abs(mean(x)) < 1e-12);
        CHECK(std::abs(std::sqrt(variance(x)) - 1) < 1e-12);
        CHECK(ds.transform_log[i + 2 * j].size() == 1);
      }
  }
  SUBCASE("impute-wma weights") {
    Panel Y(5, Matrix::Zero(1, 1));
    Y[0](0, 0) = 1;
    Y[1](0, 0) = 2;
    Y[2](0, 0) = 3;
    Y[3](0, 0) = std::nan("");
    Y[4](0, 0) = 4;
    const auto ds = preprocess(dataset_from_panel(Y), {"impute-wma"});
    CHECK(ds.values[3](0, 0) == doctest::Approx(2.3).epsilon(1e-15));
    CHECK(ds.transform_log[0].back() == "impute-wma(filled=1)");
    Y[1](0, 0) = std::nan("");
    CHECK_THROWS_AS(preprocess(dataset_from_panel(Y), {"impute-wma"}), DataError);
  }
  SUBCASE("log-difference of an exponential series is constant") {
    Panel Y;
    for (int t = 0; t < 12; ++t)
      Y.push_back(Matrix::Constant(1, 2, 5.0 * std::exp(0.03 * t)));
    const auto ds = preprocess(dataset_from_panel(Y), {"log-difference"});
    CHECK(ds.T() == 11);
    for (const auto &y : ds.values)
      CHECK(std::abs(y(0, 1) - 0.03) < 1e-12);
    CHECK(ds.time_index.front() == "2");
  }
  SUBCASE("difference") {
    Panel Y;
    for (int t = 0; t < 4; ++t)
      Y.push_back(Matrix::Constant(1, 1, t * t));
    const auto ds = preprocess(dataset_from_panel(Y), {"difference"});
    CHECK(ds.values[2](0, 0) == 5);
    CHECK_THROWS_AS(preprocess(dataset_from_panel(Y), {"detrend"}), UsageError);
  }
}

TEST_CASE("config schema") {
  using nlohmann::json;
  SUBCASE("empty config is valid") { CHECK_NOTHROW(parse_config(json::object())); }
  SUBCASE("violations name the field") {
    CHECK_THROWS_WITH_AS(parse_config(json{{"mcmc", {{"draws", 0}}}}),
                         doctest::Contains("mcmc.draws"), UsageError);
    CHECK_THROWS_WITH_AS(parse_config(json{{"model", {{"idio", "diagonal"}}}}),
                         doctest::Contains("model.idio"), UsageError);
    CHECK_THROWS_WITH_AS(parse_config(json{{"modle", json::object()}}),
                         doctest::Contains("modle: unknown field"), UsageError);
    CHECK_THROWS_WITH_AS(parse_config(json{{"data", {{"path", "x.csv"}}}}),
                         doctest::Contains("data.rows: required"), UsageError);
    CHECK_THROWS_WITH_AS(parse_config(json{{"scan", {{"p1", {1, "two"}}}}}),
                         doctest::Contains("scan.p1[1]"), UsageError);
  }
  SUBCASE("fields are converted") {
    const auto c = parse_config(json::parse(R"({
      "seed": 42,
      "model": {"p1": 3, "p2": 2, "idio": "exact-diagonal", "volatility": "common-sv"},
      "prior": {"nu_lambda": 4, "S_r": 1.5},
      "mcmc": {"burn_in": 10, "draws": 20, "factor_sampler": "per-t"},
      "is": {"draws": 300}
    })"));
    CHECK(c.seed == 42);
    CHECK(c.spec.p1 == 3);
    CHECK(c.spec.idio == Idio::exact_diagonal);
    CHECK(c.spec.volatility == Volatility::common_sv);
    CHECK(c.mcmc.draws == 20);
    CHECK(c.mcmc.factor_sampler == FactorSampler::per_t);
    CHECK(c.mcmc.seed == mcmc_seed(42));
    CHECK(c.is.seed == is_seed(42));
    CHECK(c.is.draws == 300);
    ModelSpec s = c.spec;
    s.n = 4;
    s.k = 3;
    const auto p = resolve_prior(s, c.prior_overrides);
    CHECK(p.nu_lambda(0) == 4);
    CHECK(p.S_r == 1.5 * Matrix::Identity(4, 4));
  }
  SUBCASE("dotted overrides") {
    json doc = json::object();
    set_config_value(doc, "mcmc.draws", "17");
    set_config_value(doc, "model.idio", "exact-diagonal");
    CHECK(parse_config(doc).mcmc.draws == 17);
    CHECK(parse_config(doc).spec.idio == Idio::exact_diagonal);
  }
  SUBCASE("published schema file equals the embedded one") {
    const auto file = json::parse(read_text_file(fs::path(MDFM_SOURCE_DIR) / "schema/config.schema.json"));
    CHECK(file == config_schema());
  }
}

TEST_CASE("posterior persistence round trip") {
  Rng rng(2);
  for (auto vol : {Volatility::none, Volatility::common_sv, Volatility::outlier,
                   Volatility::fat_tail}) {
    ModelSpec s{4, 3, 25, 2, 1, 1};
    s.volatility = vol;
    McmcConfig c;
    c.burn_in = 5;
    c.draws = 23;
    c.store_factor_paths = true;
    const auto store = run_chain(s, default_prior(s), c, random_panel(s, rng));
    const auto dir = scratch("posterior");
    save_posterior(store, dir, 10); // three chunks
    CHECK(fs::exists(dir / "draws_002.bin"));
    const auto back = load_posterior(dir);
    CHECK(back.spec == store.spec);
    REQUIRE(back.draws.size() == store.draws.size());
    for (std::size_t i = 0; i < store.draws.size(); ++i)
      CHECK(flatten_state(s, back.draws[i]) == flatten_state(s, store.draws[i]));
    CHECK(back.factor_mean == store.factor_mean);
    CHECK(back.factor_paths.size() == store.factor_paths.size());
    CHECK(back.prior.S_r == store.prior.S_r);
    CHECK(back.config.seed == store.config.seed);
    CHECK(back.scalar_names == store.scalar_names);
    const auto csv = posterior_csv(back);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 24);
  }
  SUBCASE("truncated chunk is a data error") {
    ModelSpec s{3, 2, 10, 1, 1, 1};
    McmcConfig c;
    c.burn_in = 2;
    c.draws = 4;
    const auto store = run_chain(s, default_prior(s), c, random_panel(s, rng));
    const auto dir = scratch("posterior_bad");
    save_posterior(store, dir);
    fs::resize_file(dir / "draws_000.bin", 16);
    CHECK_THROWS_AS(load_posterior(dir), DataError);
  }
}

TEST_CASE("app: simulate, fit, log-ML and report") {
  using nlohmann::json;
  const auto dir = scratch("app");
  auto cfg = parse_config(json::parse(R"({
    "seed": 5,
    "model": {"n": 4, "k": 3, "T": 60, "p1": 1, "p2": 1},
    "mcmc": {"burn_in": 100, "draws": 200},
    "is": {"draws": 200}
  })"));
  const auto a = simulate(cfg), b = simulate(cfg);
  CHECK(to_csv_long(a.data) == to_csv_long(b.data));
  CHECK(a.truth == b.truth);
  atomic_write_text(dir / "data.csv", to_csv_long(a.data));
  json doc = cfg.source;
  doc["data"] = {{"path", (dir / "data.csv").string()},
                 {"rows", a.data.row_labels},
                 {"cols", a.data.col_labels}};
  doc["model"].erase("T");
  cfg = parse_config(doc);
  const auto ds = load_dataset(cfg);
  CHECK(ds.values == a.data.values);
  const auto post = fit(cfg, ds);
  save_posterior(post, dir / "post");
  const auto loaded = load_posterior(dir / "post");
  const auto ml1 = log_ml(cfg, ds, &loaded);
  const auto ml2 = log_ml(cfg, ds, &post);
  CHECK(ml1["log_ml"] == ml2["log_ml"]);
  CHECK(std::isfinite(ml1["log_ml"].get<double>()));
  const auto rep = report(dir / "post", dir / "rep");
  CHECK(fs::exists(dir / "rep" / "draws.csv"));
  CHECK(rep["draws"] == 200);

  SUBCASE("dimension mismatch between config and data") {
    json bad = doc;
    bad["model"]["n"] = 5;
    CHECK_THROWS_AS(fit(parse_config(bad), ds), DataError);
  }
  SUBCASE("posterior from another model") {
    json other = doc;
    other["model"]["p1"] = 2;
    CHECK_THROWS_AS(log_ml(parse_config(other), ds, &loaded), UsageError);
  }
}
