#include "mmflow.h"

#include <string>

#include "mmflow/commands.hpp"
#include "mmflow/config.hpp"
#include "mmflow/error.hpp"

using namespace mmflow;

struct mmf_config {
    ExperimentConfig cfg;
};

namespace {

thread_local std::string g_last_error;

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return MMF_OK;
    } catch (const NumericError& e) {
        g_last_error = e.what();
        return MMF_E_NUMERIC;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return MMF_E_USAGE;
    }
}

int need(const void* p, const char* what) {
    if (p) return MMF_OK;
    g_last_error = std::string("null ") + what;
    return MMF_E_USAGE;
}

}  // namespace

extern "C" {

const char* mmf_version(void) { return "0.1.0"; }

const char* mmf_last_error(void) { return g_last_error.c_str(); }

int mmf_config_open(const char* path, mmf_config** out) {
    if (int rc = need(path, "path"); rc) return rc;
    if (int rc = need(out, "out handle"); rc) return rc;
    *out = nullptr;
    return guarded([&] { *out = new mmf_config{ExperimentConfig::parse_file(path)}; });
}

int mmf_config_parse(const char* text, mmf_config** out) {
    if (int rc = need(text, "text"); rc) return rc;
    if (int rc = need(out, "out handle"); rc) return rc;
    *out = nullptr;
    return guarded([&] { *out = new mmf_config{ExperimentConfig::parse_text(text)}; });
}

int mmf_config_set(mmf_config* cfg, const char* key, const char* value) {
    if (int rc = need(cfg, "config"); rc) return rc;
    if (int rc = need(key, "key"); rc) return rc;
    if (int rc = need(value, "value"); rc) return rc;
    return guarded([&] { cfg->cfg.set(key, value); });
}

const char* mmf_config_get(mmf_config* cfg, const char* key) {
    if (!cfg || !key || !cfg->cfg.has(key)) return nullptr;
    thread_local std::string value;
    value = cfg->cfg.str(key, "");
    return value.c_str();
}

unsigned long long mmf_config_digest(mmf_config* cfg) {
    return cfg ? cfg->cfg.digest() : 0ull;
}

int mmf_config_write(mmf_config* cfg, const char* path) {
    if (int rc = need(cfg, "config"); rc) return rc;
    if (int rc = need(path, "path"); rc) return rc;
    return guarded([&] { cfg->cfg.write_file(path); });
}

void mmf_config_free(mmf_config* cfg) { delete cfg; }

int mmf_train(mmf_config* cfg) {
    if (int rc = need(cfg, "config"); rc) return rc;
    return guarded([&] { cmd_train(cfg->cfg); });
}

int mmf_sample(mmf_config* cfg, const char* checkpoint, const char* task, long long count,
               const char* out_csv) {
    if (int rc = need(cfg, "config"); rc) return rc;
    if (int rc = need(checkpoint, "checkpoint path"); rc) return rc;
    if (int rc = need(task, "task"); rc) return rc;
    if (int rc = need(out_csv, "output path"); rc) return rc;
    return guarded([&] { cmd_sample(cfg->cfg, checkpoint, task, static_cast<int>(count),
                                    out_csv); });
}

int mmf_eval(mmf_config* cfg, const char* samples_csv, const char* out_csv) {
    if (int rc = need(cfg, "config"); rc) return rc;
    if (int rc = need(samples_csv, "samples path"); rc) return rc;
    if (int rc = need(out_csv, "output path"); rc) return rc;
    return guarded([&] { cmd_eval(cfg->cfg, samples_csv, out_csv); });
}

int mmf_merge(const char* checkpoint_a, const char* checkpoint_b, const char* shared_modality,
              const char* out_path) {
    if (int rc = need(checkpoint_a, "checkpoint path"); rc) return rc;
    if (int rc = need(checkpoint_b, "checkpoint path"); rc) return rc;
    if (int rc = need(shared_modality, "shared modality"); rc) return rc;
    if (int rc = need(out_path, "output path"); rc) return rc;
    return guarded([&] { cmd_merge(checkpoint_a, checkpoint_b, shared_modality, out_path); });
}

int mmf_schedules_bench(mmf_config* cfg, const char* out_csv) {
    if (int rc = need(cfg, "config"); rc) return rc;
    if (int rc = need(out_csv, "output path"); rc) return rc;
    return guarded([&] { cmd_schedules_bench(cfg->cfg, out_csv); });
}

}  // extern "C"
