#include "semvol/semvol.h"

#include "semvol/dataio.hpp"
#include "semvol/error.hpp"
#include "semvol/measures.hpp"
#include "semvol/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <exception>
#include <new>
#include <string>

struct semvol_config {
  semvol::pipeline::RunConfig cfg;
};

namespace {

thread_local std::string last_error;

semvol_status record(std::string_view code, std::string_view message, std::string_view context,
                     semvol_status status) {
  nlohmann::ordered_json j;
  j["error"]["code"] = code;
  j["error"]["message"] = message;
  j["error"]["context"] = context;
  last_error = j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
  return status;
}

template <typename F>
semvol_status guarded(F &&fn) {
  try {
    fn();
    last_error.clear();
    return SEMVOL_OK;
  } catch (const semvol::Error &e) {
    return record(semvol::to_string(e.code()), e.what(), e.context(),
                  static_cast<semvol_status>(semvol::category(e.code())));
  } catch (const std::filesystem::filesystem_error &e) {
    return record("IoError", e.what(), e.path1().string(), SEMVOL_ERR_IO);
  } catch (const std::bad_alloc &) {
    return record("OutOfMemory", "allocation failed", "", SEMVOL_ERR_NUMERICAL);
  } catch (const std::exception &e) {
    return record("Internal", e.what(), "", SEMVOL_ERR_NUMERICAL);
  }
}

semvol_status null_arg(const char *name) {
  return record("ConfigError", "null argument", name, SEMVOL_ERR_CONFIG);
}

semvol::linalg::Matrix columns_from(const double *data, size_t dim, size_t count) {
  return Eigen::Map<const semvol::linalg::Matrix>(data, static_cast<Eigen::Index>(dim),
                                                  static_cast<Eigen::Index>(count));
}

} // namespace

extern "C" {

const char *semvol_version(void) { return "0.1.0"; }

const char *semvol_last_error(void) { return last_error.c_str(); }

semvol_status semvol_config_create(semvol_config **out) {
  if (!out) return null_arg("out");
  return guarded([&] { *out = new semvol_config(); });
}

void semvol_config_destroy(semvol_config *cfg) { delete cfg; }

semvol_status semvol_config_set(semvol_config *cfg, const char *key, const char *value) {
  if (!cfg || !key || !value) return null_arg("cfg/key/value");
  return guarded([&] { semvol::pipeline::set_option(cfg->cfg, key, value); });
}

semvol_status semvol_config_get(const semvol_config *cfg, const char *key, char *buf, size_t buf_len,
                                size_t *needed) {
  if (!cfg || !key) return null_arg("cfg/key");
  return guarded([&] {
    const std::string v = semvol::pipeline::get_option(cfg->cfg, key);
    if (needed) *needed = v.size() + 1;
    if (buf && buf_len > v.size()) std::memcpy(buf, v.c_str(), v.size() + 1);
  });
}

size_t semvol_option_count(void) { return semvol::pipeline::option_keys().size(); }

const char *semvol_option_key(size_t index) {
  const auto &keys = semvol::pipeline::option_keys();
  return index < keys.size() ? keys[index].c_str() : nullptr;
}

semvol_status semvol_config_load_file(semvol_config *cfg, const char *path) {
  if (!cfg || !path) return null_arg("cfg/path");
  return guarded([&] { semvol::pipeline::load_config_file(cfg->cfg, path); });
}

semvol_status semvol_config_apply_env(semvol_config *cfg) {
  if (!cfg) return null_arg("cfg");
  return guarded([&] { semvol::pipeline::apply_env(cfg->cfg); });
}

#define SEMVOL_COMMAND(name)                                                                       \
  semvol_status semvol_cmd_##name(const semvol_config *cfg) {                                      \
    if (!cfg) return null_arg("cfg");                                                              \
    return guarded([&] { semvol::pipeline::cmd_##name(cfg->cfg); });                               \
  }

SEMVOL_COMMAND(perturb)
SEMVOL_COMMAND(embed)
SEMVOL_COMMAND(score)
SEMVOL_COMMAND(calibrate)
SEMVOL_COMMAND(classify)
SEMVOL_COMMAND(evaluate)
SEMVOL_COMMAND(diagnose)
SEMVOL_COMMAND(verify_theory)

#undef SEMVOL_COMMAND

semvol_status semvol_log_det_gram(const double *columns, size_t dim, size_t count, double epsilon,
                                  double *out) {
  if (!columns || !out) return null_arg("columns/out");
  return guarded([&] {
    const auto v = semvol::linalg::EmbeddingMatrix::normalize(columns_from(columns, dim, count));
    *out = semvol::linalg::log_det_gram(v, epsilon);
  });
}

semvol_status semvol_semantic_volume(const double *columns, size_t dim, size_t count, size_t d,
                                     double epsilon, double *out) {
  if (!columns || !out) return null_arg("columns/out");
  return guarded([&] {
    const auto v = semvol::linalg::EmbeddingMatrix::normalize(columns_from(columns, dim, count));
    *out = semvol::measures::semantic_volume(v, static_cast<Eigen::Index>(d), epsilon);
  });
}

semvol_status semvol_rouge_l(const char *candidate, const char *reference, double *out) {
  if (!candidate || !reference || !out) return null_arg("candidate/reference/out");
  return guarded([&] { *out = semvol::dataio::rouge_l(std::string_view(candidate), std::string_view(reference)); });
}

} // extern "C"
