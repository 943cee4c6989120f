// Exercises the shared library through its C header only.

#include "mdfm/mdfm.h"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

std::string take(char *s) {
  std::string out = s ? s : "";
  mdfm_string_free(s);
  return out;
}

} // namespace

TEST_CASE("status codes and last error") {
  mdfm_config *cfg = nullptr;
  CHECK(mdfm_config_parse("{\"mcmc\": {\"draws\": -3}}", &cfg) == MDFM_ERR_USAGE);
  CHECK(cfg == nullptr);
  CHECK(mdfm_last_error_code() == MDFM_ERR_USAGE);
  CHECK(std::string(mdfm_last_error()).find("mcmc.draws") != std::string::npos);
  CHECK(mdfm_config_parse("{not json", &cfg) == MDFM_ERR_USAGE);
  CHECK(mdfm_config_parse("{}", nullptr) == MDFM_ERR_USAGE);
  CHECK(mdfm_config_parse("{}", &cfg) == MDFM_OK);
  CHECK(std::string(mdfm_last_error()).empty());
  CHECK(mdfm_config_set(cfg, "mcmc.thin", "0") == MDFM_ERR_USAGE);
  CHECK(mdfm_config_set(cfg, "mcmc.thin", "2") == MDFM_OK);
  char *text = nullptr;
  REQUIRE(mdfm_config_to_json(cfg, &text) == MDFM_OK);
  CHECK(take(text).find("\"thin\": 2") != std::string::npos);
  mdfm_config_free(cfg);

  mdfm_posterior *post = nullptr;
  CHECK(mdfm_posterior_load("/nonexistent/mdfm/dir", &post) == MDFM_ERR_DATA);
  CHECK(post == nullptr);
  CHECK(std::strlen(mdfm_config_schema()) > 100);
  CHECK(std::strlen(mdfm_version()) > 0);
}

TEST_CASE("array dataset, fit, save, load, log-ML") {
  const int T = 40, n = 3, k = 2;
  std::vector<double> y(T * n * k);
  double f = 0;
  unsigned state = 12345;
  auto noise = [&] {
    state = state * 1103515245u + 12345u;
    return ((state >> 8) & 0xffff) / 65536.0 - 0.5;
  };
  for (int t = 0; t < T; ++t) {
    f = 0.8 * f + noise();
    for (int j = 0; j < k; ++j)
      for (int i = 0; i < n; ++i)
        y[(t * k + j) * n + i] = (1 + 0.3 * i) * (1 + 0.5 * j) * f + 0.3 * noise();
  }
  mdfm_dataset *ds = nullptr;
  REQUIRE(mdfm_dataset_from_array(T, n, k, y.data(), &ds) == MDFM_OK);
  int dt = 0, dn = 0, dk = 0;
  CHECK(mdfm_dataset_dims(ds, &dt, &dn, &dk) == MDFM_OK);
  CHECK(dt == T);
  CHECK(dn == n);
  CHECK(dk == k);
  std::vector<double> back(T * n * k);
  CHECK(mdfm_dataset_values(ds, back.data(), back.size()) == MDFM_OK);
  CHECK(back == y);
  CHECK(mdfm_dataset_values(ds, back.data(), 3) == MDFM_ERR_USAGE);

  mdfm_config *cfg = nullptr;
  REQUIRE(mdfm_config_parse(
              R"({"seed": 3, "model": {"p1": 1, "p2": 1}, "mcmc": {"burn_in": 50, "draws": 150}, "is": {"draws": 200}})",
              &cfg) == MDFM_OK);
  mdfm_posterior *post = nullptr;
  REQUIRE(mdfm_fit(cfg, ds, &post) == MDFM_OK);
  int count = 0;
  CHECK(mdfm_posterior_draw_count(post, &count) == MDFM_OK);
  CHECK(count == 150);
  int fT = 0, fp = 0;
  CHECK(mdfm_posterior_factor_mean(post, nullptr, 0, &fT, &fp) == MDFM_OK);
  std::vector<double> fm(fT * fp);
  CHECK(mdfm_posterior_factor_mean(post, fm.data(), fm.size(), &fT, &fp) == MDFM_OK);
  CHECK(fT == T);

  const fs::path dir = fs::temp_directory_path() / "mdfm_capi_post";
  fs::remove_all(dir);
  REQUIRE(mdfm_posterior_save(post, dir.c_str()) == MDFM_OK);
  mdfm_posterior *loaded = nullptr;
  REQUIRE(mdfm_posterior_load(dir.c_str(), &loaded) == MDFM_OK);
  char *a = nullptr, *b = nullptr;
  REQUIRE(mdfm_log_ml(cfg, ds, post, &a) == MDFM_OK);
  REQUIRE(mdfm_log_ml(cfg, ds, loaded, &b) == MDFM_OK);
  CHECK(take(a) == take(b));
  char *summary = nullptr;
  REQUIRE(mdfm_posterior_summary(loaded, &summary) == MDFM_OK);
  CHECK(take(summary).find("geweke") != std::string::npos);
  char *rep = nullptr;
  CHECK(mdfm_report(dir.c_str(), nullptr, &rep) == MDFM_OK);
  mdfm_string_free(rep);
  CHECK(fs::exists(dir / "draws.csv"));

  mdfm_posterior_free(loaded);
  mdfm_posterior_free(post);
  mdfm_config_free(cfg);
  mdfm_dataset_free(ds);
}

TEST_CASE("simulation through the C API is deterministic") {
  mdfm_config *cfg = nullptr;
  REQUIRE(mdfm_config_parse(R"({"seed": 9, "model": {"n": 4, "k": 3, "T": 30, "p1": 2, "p2": 1}})",
                            &cfg) == MDFM_OK);
  mdfm_dataset *a = nullptr, *b = nullptr;
  char *truth = nullptr;
  REQUIRE(mdfm_dataset_simulate(cfg, &a, &truth) == MDFM_OK);
  CHECK(take(truth).find("\"factors\"") != std::string::npos);
  REQUIRE(mdfm_dataset_simulate(cfg, &b, nullptr) == MDFM_OK);
  std::vector<double> va(360), vb(360);
  mdfm_dataset_values(a, va.data(), va.size());
  mdfm_dataset_values(b, vb.data(), vb.size());
  CHECK(va == vb);
  mdfm_dataset_free(a);
  mdfm_dataset_free(b);
  // A simulation without dimensions is a usage error.
  mdfm_config *empty = nullptr;
  REQUIRE(mdfm_config_parse(nullptr, &empty) == MDFM_OK);
  CHECK(mdfm_dataset_simulate(empty, &a, nullptr) == MDFM_ERR_USAGE);
  mdfm_config_free(empty);
  mdfm_config_free(cfg);
}
