#include "mdfm/mdfm.h"

#include "mdfm/app.hpp"
#include "mdfm/errors.hpp"
#include "mdfm/io.hpp"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>

using nlohmann::json;

struct mdfm_config {
  json doc;
  mdfm::AppConfig parsed;
};

struct mdfm_dataset {
  mdfm::PanelDataset data;
};

struct mdfm_posterior {
  mdfm::PosteriorStore store;
};

namespace {

thread_local std::string g_error;
thread_local int g_code = MDFM_OK;

int fail(int code, const std::string &msg) {
  g_code = code;
  g_error = msg;
  return code;
}

template <class F> int guard(F &&f) {
  g_code = MDFM_OK;
  g_error.clear();
  try {
    f();
    return MDFM_OK;
  } catch (const mdfm::Error &e) {
    switch (e.kind()) {
    case mdfm::ErrorKind::usage:
      return fail(MDFM_ERR_USAGE, e.what());
    case mdfm::ErrorKind::numerical:
      return fail(MDFM_ERR_NUMERICAL, e.what());
    case mdfm::ErrorKind::data:
      return fail(MDFM_ERR_DATA, e.what());
    }
    return fail(MDFM_ERR_INTERNAL, e.what());
  } catch (const json::exception &e) {
    return fail(MDFM_ERR_USAGE, e.what());
  } catch (const std::filesystem::filesystem_error &e) {
    return fail(MDFM_ERR_DATA, e.what());
  } catch (const std::bad_alloc &) {
    return fail(MDFM_ERR_INTERNAL, "out of memory");
  } catch (const std::exception &e) {
    return fail(MDFM_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(MDFM_ERR_INTERNAL, "unknown error");
  }
}

void need(const void *p, const char *what) {
  if (!p)
    throw mdfm::UsageError(std::string(what) + " is NULL");
}

char *dup(const std::string &s) {
  char *out = static_cast<char *>(std::malloc(s.size() + 1));
  if (!out)
    throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

} // namespace

extern "C" {

const char *mdfm_version(void) { return MDFM_VERSION; }
const char *mdfm_last_error(void) { return g_error.c_str(); }
int mdfm_last_error_code(void) { return g_code; }
void mdfm_string_free(char *s) { std::free(s); }

const char *mdfm_config_schema(void) {
  static const std::string text = mdfm::config_schema().dump(2);
  return text.c_str();
}

int mdfm_config_parse(const char *json_text, mdfm_config **out) {
  return guard([&] {
    need(out, "out");
    *out = nullptr;
    json doc = json::object();
    if (json_text && *json_text) {
      doc = json::parse(json_text, nullptr, false);
      if (doc.is_discarded())
        throw mdfm::UsageError("config is not valid JSON");
    }
    auto cfg = std::make_unique<mdfm_config>();
    cfg->parsed = mdfm::parse_config(doc);
    cfg->doc = std::move(doc);
    *out = cfg.release();
  });
}

int mdfm_config_load(const char *path, mdfm_config **out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = nullptr;
    auto cfg = std::make_unique<mdfm_config>();
    cfg->parsed = mdfm::load_config(path);
    cfg->doc = cfg->parsed.source;
    *out = cfg.release();
  });
}

int mdfm_config_set(mdfm_config *cfg, const char *key, const char *value) {
  return guard([&] {
    need(cfg, "config");
    need(key, "key");
    need(value, "value");
    json doc = cfg->doc;
    mdfm::set_config_value(doc, key, value);
    cfg->parsed = mdfm::parse_config(doc);
    cfg->doc = std::move(doc);
  });
}

int mdfm_config_set_seed(mdfm_config *cfg, uint64_t seed) {
  return guard([&] {
    need(cfg, "config");
    json doc = cfg->doc;
    doc["seed"] = seed;
    cfg->parsed = mdfm::parse_config(doc);
    cfg->doc = std::move(doc);
  });
}

int mdfm_config_to_json(const mdfm_config *cfg, char **out) {
  return guard([&] {
    need(cfg, "config");
    need(out, "out");
    *out = dup(cfg->doc.dump(2));
  });
}

void mdfm_config_free(mdfm_config *cfg) { delete cfg; }

int mdfm_dataset_load(const mdfm_config *cfg, mdfm_dataset **out) {
  return guard([&] {
    need(cfg, "config");
    need(out, "out");
    *out = nullptr;
    *out = new mdfm_dataset{mdfm::load_dataset(cfg->parsed)};
  });
}

int mdfm_dataset_from_array(int T, int n, int k, const double *values, mdfm_dataset **out) {
  return guard([&] {
    need(values, "values");
    need(out, "out");
    *out = nullptr;
    if (T < 1 || n < 1 || k < 1)
      throw mdfm::UsageError("dimensions must be positive");
    mdfm::Panel Y(T);
    for (int t = 0; t < T; ++t)
      Y[t] = Eigen::Map<const mdfm::Matrix>(values + static_cast<std::ptrdiff_t>(t) * n * k, n, k);
    *out = new mdfm_dataset{mdfm::dataset_from_panel(Y)};
  });
}

int mdfm_dataset_simulate(const mdfm_config *cfg, mdfm_dataset **out, char **truth_json) {
  return guard([&] {
    need(cfg, "config");
    need(out, "out");
    *out = nullptr;
    auto sim = mdfm::simulate(cfg->parsed);
    auto ds = std::make_unique<mdfm_dataset>(mdfm_dataset{std::move(sim.data)});
    if (truth_json)
      *truth_json = dup(sim.truth.dump(2));
    *out = ds.release();
  });
}

int mdfm_dataset_dims(const mdfm_dataset *ds, int *T, int *n, int *k) {
  return guard([&] {
    need(ds, "dataset");
    if (T)
      *T = ds->data.T();
    if (n)
      *n = ds->data.n();
    if (k)
      *k = ds->data.k();
  });
}

int mdfm_dataset_values(const mdfm_dataset *ds, double *out, size_t len) {
  return guard([&] {
    need(ds, "dataset");
    need(out, "out");
    const auto &d = ds->data;
    const std::size_t nk = static_cast<std::size_t>(d.n()) * d.k();
    if (len < nk * d.T())
      throw mdfm::UsageError("buffer holds " + std::to_string(len) + " values, need " +
                             std::to_string(nk * d.T()));
    for (int t = 0; t < d.T(); ++t)
      std::memcpy(out + t * nk, d.values[t].data(), nk * sizeof(double));
  });
}

int mdfm_dataset_write_csv(const mdfm_dataset *ds, const char *path) {
  return guard([&] {
    need(ds, "dataset");
    need(path, "path");
    mdfm::atomic_write_text(path, mdfm::to_csv_long(ds->data));
  });
}

void mdfm_dataset_free(mdfm_dataset *ds) { delete ds; }

int mdfm_fit(const mdfm_config *cfg, const mdfm_dataset *ds, mdfm_posterior **out) {
  return guard([&] {
    need(cfg, "config");
    need(ds, "dataset");
    need(out, "out");
    *out = nullptr;
    *out = new mdfm_posterior{mdfm::fit(cfg->parsed, ds->data)};
  });
}

int mdfm_posterior_save(const mdfm_posterior *post, const char *dir) {
  return guard([&] {
    need(post, "posterior");
    need(dir, "dir");
    mdfm::save_posterior(post->store, dir);
  });
}

int mdfm_posterior_load(const char *dir, mdfm_posterior **out) {
  return guard([&] {
    need(dir, "dir");
    need(out, "out");
    *out = nullptr;
    *out = new mdfm_posterior{mdfm::load_posterior(dir)};
  });
}

int mdfm_posterior_summary(const mdfm_posterior *post, char **json_out) {
  return guard([&] {
    need(post, "posterior");
    need(json_out, "json_out");
    *json_out = dup(mdfm::posterior_summary(post->store).dump(2));
  });
}

int mdfm_posterior_draw_count(const mdfm_posterior *post, int *count) {
  return guard([&] {
    need(post, "posterior");
    need(count, "count");
    *count = static_cast<int>(post->store.draws.size());
  });
}

int mdfm_posterior_factor_mean(const mdfm_posterior *post, double *out, size_t len, int *T,
                               int *p) {
  return guard([&] {
    need(post, "posterior");
    const auto &f = post->store.factor_mean;
    if (T)
      *T = static_cast<int>(f.rows());
    if (p)
      *p = static_cast<int>(f.cols());
    if (!out)
      return;
    if (len < static_cast<std::size_t>(f.size()))
      throw mdfm::UsageError("factor buffer too small");
    for (Eigen::Index t = 0; t < f.rows(); ++t)
      for (Eigen::Index j = 0; j < f.cols(); ++j)
        out[t * f.cols() + j] = f(t, j);
  });
}

void mdfm_posterior_free(mdfm_posterior *post) { delete post; }

int mdfm_log_ml(const mdfm_config *cfg, const mdfm_dataset *ds, const mdfm_posterior *post,
                char **json_out) {
  return guard([&] {
    need(cfg, "config");
    need(ds, "dataset");
    need(json_out, "json_out");
    *json_out = dup(mdfm::log_ml(cfg->parsed, ds->data, post ? &post->store : nullptr).dump(2));
  });
}

int mdfm_scan(const mdfm_config *cfg, const mdfm_dataset *ds, char **json_out) {
  return guard([&] {
    need(cfg, "config");
    need(ds, "dataset");
    need(json_out, "json_out");
    *json_out = dup(mdfm::scan(cfg->parsed, ds->data).dump(2));
  });
}

int mdfm_experiment(const mdfm_config *cfg, const char *out_dir, char **json_out) {
  return guard([&] {
    need(cfg, "config");
    need(json_out, "json_out");
    *json_out = dup(mdfm::experiment(cfg->parsed, out_dir ? out_dir : "").dump(2));
  });
}

int mdfm_report(const char *dir, const char *out_dir, char **json_out) {
  return guard([&] {
    need(dir, "dir");
    need(json_out, "json_out");
    const std::filesystem::path out = out_dir && *out_dir ? out_dir : dir;
    *json_out = dup(mdfm::report(dir, out).dump(2));
  });
}

} // extern "C"
