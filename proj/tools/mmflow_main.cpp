#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mmflow.h"

namespace {

struct ConfigHandle {
    mmf_config* ptr = nullptr;
    ~ConfigHandle() { mmf_config_free(ptr); }
};

int report(int rc) {
    std::fprintf(stderr, "error: %s\n", mmf_last_error());
    return rc;
}

int open_config(const std::string& path, const std::string& seed, ConfigHandle& h) {
    if (path.empty()) {
        std::fprintf(stderr, "error: --config is required\n");
        return MMF_E_USAGE;
    }
    if (int rc = mmf_config_open(path.c_str(), &h.ptr); rc != MMF_OK) return report(rc);
    if (!seed.empty())
        if (int rc = mmf_config_set(h.ptr, "seed", seed.c_str()); rc != MMF_OK) return report(rc);
    return MMF_OK;
}

// --out when given, otherwise <out.dir>/<name>
int output_path(mmf_config* cfg, const std::string& out, const char* name, std::string& path) {
    if (!out.empty()) {
        path = out;
        return MMF_OK;
    }
    const char* dir = mmf_config_get(cfg, "out.dir");
    if (!dir) {
        std::fprintf(stderr, "error: pass --out or set out.dir in the config\n");
        return MMF_E_USAGE;
    }
    path = std::string(dir) + "/" + name;
    return MMF_OK;
}

std::string join(const std::vector<std::string>& parts, char sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out.push_back(sep);
        out += parts[i];
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string("multi-modal rectified flow toolkit (") + mmf_version() + ")"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config, seed, out;
    app.add_option("--config", config, "experiment config file");
    app.add_option("--seed", seed, "override the config seed");
    app.add_option("--out", out, "output directory (train) or output file (other commands)");

    auto* train = app.add_subcommand("train", "train a model per the config");

    auto* sample = app.add_subcommand("sample", "generate samples from a checkpoint");
    std::string ckpt, task = "joint";
    long long count = 16, steps = -1;
    double shift = 0.0;
    std::vector<std::string> guidance;
    sample->add_option("--ckpt", ckpt, "checkpoint file")->required();
    sample->add_option("--task", task, "generation task (default joint)");
    sample->add_option("--count", count, "rows to generate");
    sample->add_option("--steps", steps, "integration steps");
    sample->add_option("--shift", shift, "timestep shift gamma");
    sample->add_option("--guidance", guidance, "guidance entry i,j=alpha (repeatable)");

    auto* eval = app.add_subcommand("eval", "score a samples CSV against the dataset");
    std::string samples;
    eval->add_option("--samples", samples, "samples CSV to score")->required();

    auto* merge = app.add_subcommand("merge", "merge two checkpoints");
    std::string merge_a, merge_b, shared;
    merge->add_option("--a", merge_a, "first checkpoint")->required();
    merge->add_option("--b", merge_b, "second checkpoint")->required();
    merge->add_option("--shared", shared, "modality both models carry")->required();

    auto* bench = app.add_subcommand("schedules-bench", "compare schedule variants");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : MMF_E_USAGE;
    }

    if (train->parsed()) {
        ConfigHandle h;
        if (int rc = open_config(config, seed, h); rc != MMF_OK) return rc;
        if (!out.empty())
            if (int rc = mmf_config_set(h.ptr, "out.dir", out.c_str()); rc != MMF_OK)
                return report(rc);
        if (int rc = mmf_train(h.ptr); rc != MMF_OK) return report(rc);
        return MMF_OK;
    }

    if (sample->parsed()) {
        ConfigHandle h;
        if (int rc = open_config(config, seed, h); rc != MMF_OK) return rc;
        if (steps >= 0)
            if (int rc = mmf_config_set(h.ptr, "sample.steps", std::to_string(steps).c_str());
                rc != MMF_OK)
                return report(rc);
        if (shift > 0.0)
            if (int rc = mmf_config_set(h.ptr, "sample.gamma", std::to_string(shift).c_str());
                rc != MMF_OK)
                return report(rc);
        if (!guidance.empty())
            if (int rc = mmf_config_set(h.ptr, "sample.guidance", join(guidance, ';').c_str());
                rc != MMF_OK)
                return report(rc);
        std::string path;
        if (int rc = output_path(h.ptr, out, "samples.csv", path); rc != MMF_OK) return rc;
        if (int rc = mmf_sample(h.ptr, ckpt.c_str(), task.c_str(), count, path.c_str());
            rc != MMF_OK)
            return report(rc);
        return MMF_OK;
    }

    if (eval->parsed()) {
        ConfigHandle h;
        if (int rc = open_config(config, seed, h); rc != MMF_OK) return rc;
        std::string path;
        if (int rc = output_path(h.ptr, out, "metrics.csv", path); rc != MMF_OK) return rc;
        if (int rc = mmf_eval(h.ptr, samples.c_str(), path.c_str()); rc != MMF_OK)
            return report(rc);
        return MMF_OK;
    }

    if (merge->parsed()) {
        if (out.empty()) {
            std::fprintf(stderr, "error: merge needs --out for the merged checkpoint\n");
            return MMF_E_USAGE;
        }
        if (int rc = mmf_merge(merge_a.c_str(), merge_b.c_str(), shared.c_str(), out.c_str());
            rc != MMF_OK)
            return report(rc);
        return MMF_OK;
    }

    if (bench->parsed()) {
        ConfigHandle h;
        if (int rc = open_config(config, seed, h); rc != MMF_OK) return rc;
        std::string path;
        if (int rc = output_path(h.ptr, out, "bench.csv", path); rc != MMF_OK) return rc;
        if (int rc = mmf_schedules_bench(h.ptr, path.c_str()); rc != MMF_OK) return report(rc);
        return MMF_OK;
    }

    std::fprintf(stderr, "error: no command\n");
    return MMF_E_USAGE;
}
