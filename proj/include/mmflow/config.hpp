#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mmflow/modality.hpp"
#include "mmflow/models.hpp"
#include "mmflow/sampler.hpp"
#include "mmflow/trainer.hpp"

namespace mmflow {

// Flat ordered key = value text, dotted keys, '#' comment lines. Keys must
// come from the registered set; values keep their spelling, so a parse ->
// to_text -> parse cycle is lossless.
class ExperimentConfig {
  public:
    static ExperimentConfig parse_text(const std::string& text);
    static ExperimentConfig parse_file(const std::string& path);
    static const std::vector<std::string>& known_keys();

    std::string to_text() const;  // one "key = value" line per entry, in order
    void write_file(const std::string& path) const;

    // FNV-1a 64 over the sorted canonical "key=value\n" lines
    uint64_t digest() const;

    bool has(const std::string& key) const;
    void set(const std::string& key, const std::string& value);

    std::string str(const std::string& key, const std::string& def) const;
    std::string str_req(const std::string& key) const;
    int64_t integer(const std::string& key, int64_t def) const;
    double real(const std::string& key, double def) const;
    uint64_t u64(const std::string& key, uint64_t def) const;
    bool flag(const std::string& key, bool def) const;

  private:
    struct Entry {
        std::string key, value;
    };
    std::vector<Entry> entries_;
    const std::string* find(const std::string& key) const;
};

// assembled domain objects
std::vector<ModalitySpec> config_modalities(const ExperimentConfig& cfg);
std::unique_ptr<VelocityModel> config_model(const ExperimentConfig& cfg,
                                            const std::vector<ModalitySpec>& specs, uint64_t seed);
TrainerConfig config_trainer(const ExperimentConfig& cfg);
std::vector<WeightedTask> config_tasks(const ExperimentConfig& cfg, int n_modalities);
SamplerConfig config_sampler(const ExperimentConfig& cfg, int n_modalities);

// "i,j=alpha" entries separated by ';', with i and j 1-based modality
// positions; empty text gives the unguided size-0 matrix
GuidanceMatrix parse_guidance(const std::string& text, int n_modalities);

}  // namespace mmflow
