#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmflow/modality.hpp"
#include "mmflow/models.hpp"
#include "mmflow/rng.hpp"
#include "mmflow/schedules.hpp"
#include "mmflow/tensor.hpp"

namespace mmflow {

// x^t = a(t) x0 + b(t) x1
Tensor forward_interp(const Tensor& x0, const Tensor& x1, double t, const ForwardSchedule& sched);

// regression target x0 - x1, the negative of the probe-flow dx/dt
Tensor target_velocity(const Tensor& x0, const Tensor& x1);

struct WeightedTask {
    TaskPath path;
    double weight = 1.0;
};

struct TrainerConfig {
    ScheduleKind schedule = ScheduleKind::Rf;
    Parameterization parameterization = Parameterization::Velocity;
    TimestepSampler tsampler;
    double lr = 1e-3;
    int warmup_steps = 0;
    int total_steps = 1;
    double ema_decay = 0.999;
    int ema_interval = 1;
    int batch_size = 1;
    uint64_t seed = 0;
};

// One homogeneous training batch: every sample shares the presence pattern,
// latents[m] is [batch, sample_size] and is ignored where absent.
struct Batch {
    std::vector<Tensor> latents;
    std::vector<bool> present;
};

// linear warmup to cfg.lr, then cosine decay to zero at cfg.total_steps
double lr_at(int step, const TrainerConfig& cfg);

// ema <- decay * ema + (1 - decay) * params, pairwise over the trees
void ema_update(std::vector<Tensor>& ema, const std::vector<Tensor>& params, double decay);

// One loss evaluation plus backward: picks a task compatible with the batch's
// presence pattern (weighted, a single draw only when several qualify), one
// scalar t from the timestep sampler, per-modality standard normal noise (in
// index order, every modality), then regresses the present moving modalities
// toward the parameterization's target with their path speed as loss weight.
// Gradients are left in the model parameters.
double training_step(VelocityModel& model, const Batch& batch,
                     const std::vector<WeightedTask>& tasks, const TrainerConfig& cfg, Rng& rng,
                     std::string* picked_task = nullptr);

// Rows of clean latents for one presence pattern; data[m] is
// [rows, sample_size] for present modalities and ignored otherwise.
struct DatasetView {
    std::vector<bool> present;
    std::vector<Tensor> data;
};

// Owns the optimization loop: draws a view (single draw only when several
// exist), assembles a batch with replacement, runs training_step, applies
// AdamW with the warmup/cosine rate, and maintains the EMA shadow.
class Trainer {
  public:
    Trainer(VelocityModel& model, TrainerConfig cfg, std::vector<WeightedTask> tasks,
            std::vector<DatasetView> views);

    double step();
    int steps_done() const { return steps_done_; }
    const std::string& last_task() const { return last_task_; }
    const std::vector<Tensor>& ema_parameters() const { return ema_; }
    const TrainerConfig& config() const { return cfg_; }

  private:
    VelocityModel& model_;
    TrainerConfig cfg_;
    std::vector<WeightedTask> tasks_;
    std::vector<DatasetView> views_;
    std::vector<Tensor> params_;
    std::vector<Tensor> ema_;
    AdamW opt_;
    Rng rng_;
    int steps_done_ = 0;
    std::string last_task_;
};

}  // namespace mmflow
