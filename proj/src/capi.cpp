#include "mppm.h"

#include <string>

#include "core/config.hpp"
#include "core/runner.hpp"

struct mppm_config {
  mppm::KeyValues kv;
};

namespace {

thread_local std::string g_last_error;

int fail(int code, const std::string& what) {
  g_last_error = what;
  return code;
}

template <class F>
int guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return MPPM_OK;
  } catch (const mppm::ConfigError& e) {
    return fail(MPPM_ERR_CONFIG, e.what());
  } catch (const std::exception& e) {
    return fail(MPPM_ERR_RUNTIME, e.what());
  }
}

}  // namespace

extern "C" {

const char* mppm_version(void) { return "1.0.0"; }

mppm_config* mppm_config_create(void) { return new mppm_config; }

void mppm_config_destroy(mppm_config* cfg) { delete cfg; }

int mppm_config_load_file(mppm_config* cfg, const char* path) {
  if (!cfg || !path) return fail(MPPM_ERR_CONFIG, "null argument");
  return guarded([&] {
    for (const auto& [k, v] : mppm::load_config_file(path)) cfg->kv[k] = v;
  });
}

int mppm_config_set(mppm_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) return fail(MPPM_ERR_CONFIG, "null argument");
  if (*key == '\0') return fail(MPPM_ERR_CONFIG, "empty key");
  cfg->kv[key] = value;
  g_last_error.clear();
  return MPPM_OK;
}

int mppm_run(const mppm_config* cfg) {
  if (!cfg) return fail(MPPM_ERR_CONFIG, "null argument");
  return guarded([&] { mppm::run(mppm::resolve_config(cfg->kv)); });
}

const char* mppm_last_error(void) { return g_last_error.c_str(); }

}  // extern "C"
