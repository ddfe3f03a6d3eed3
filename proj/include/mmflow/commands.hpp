#pragma once

#include <string>

#include "mmflow/config.hpp"

namespace mmflow {

// Trains per the config, writing <out.dir>/loss.csv (step,task,loss,lr) and
// periodic ckpt-NNNNNN.ckpt files carrying the EMA shadow.
void cmd_train(const ExperimentConfig& cfg);

// Loads a checkpoint and integrates `count` samples of the named task into a
// CSV whose header names the modality columns and the digest of the config
// that trained the weights. Pinned clean coordinates take conditioning rows
// from a fresh dataset draw.
void cmd_sample(const ExperimentConfig& cfg, const std::string& ckpt_path, const std::string& task,
                int count, const std::string& out_csv);

// Scores a samples CSV against the config's dataset and writes one metrics
// row (support distance and face coverage apply to tetrahedron data only).
void cmd_eval(const ExperimentConfig& cfg, const std::string& samples_csv,
              const std::string& out_csv);

// Name-level checkpoint merge: shared entries averaged, exclusives copied.
void cmd_merge(const std::string& ckpt_a, const std::string& ckpt_b,
               const std::string& shared_name, const std::string& out_path);

// Runs the schedule/parameterization bench and writes one CSV row per
// variant, with the held-out resampling baseline on a comment line.
void cmd_schedules_bench(const ExperimentConfig& cfg, const std::string& out_csv);

}  // namespace mmflow
