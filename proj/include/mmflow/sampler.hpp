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

// Per-pair guidance scales; alpha(i,j) is the weight of conditioning source j
// on target i, 1 meaning no guidance. The diagonal is ignored.
class GuidanceMatrix {
  public:
    GuidanceMatrix() = default;
    explicit GuidanceMatrix(int n);

    int size() const { return n_; }
    double at(int i, int j) const;
    void set(int i, int j, double alpha);

  private:
    int n_ = 0;
    std::vector<double> alpha_;
};

// guidance scales that work well on the toy datasets, used as CLI defaults
constexpr double kGuidanceContinuous = 8.0;
constexpr double kGuidanceText = 4.0;

struct SamplerConfig {
    int steps = 50;
    double gamma = 3.0;
    GuidanceMatrix guidance;  // default(or size 0): unguided
    uint64_t seed = 0;
    int batch = 1;
    ScheduleKind schedule = ScheduleKind::Rf;
    Parameterization parameterization = Parameterization::Velocity;
};

// Joint state mid-integration: one latent and one time per modality.
struct MultiModalState {
    std::vector<Tensor> latents;
    std::vector<double> times;
};

// Difference of the modality-i predictions (in the x0-x1 convention) between
// an evaluation with source j clean at time 0 and one with j noised, all
// other non-target modalities held at pure noise in both. The substituted
// noise is drawn once and shared by the pair of evaluations.
Tensor delta_ij(VelocityModel& model, const MultiModalState& state, int i, int j,
                const SamplerConfig& cfg, Rng& rng);

// Guided prediction for target i: the prediction on the full state
// plus sum_j (alpha_ij - 1) * delta_ij over sources j that hold clean data
// (time exactly 0) and have alpha_ij != 1. One unconditional evaluation is
// shared across sources; with no active source the substitution noise is
// never drawn and the base prediction is returned untouched.
Tensor guided_velocity(VelocityModel& model, const MultiModalState& state, int i,
                       const SamplerConfig& cfg, Rng& rng);

// Euler integration of the probe flow along a task path over a shifted grid
// shift_time(k/steps, gamma), k = steps..0. Coordinates pinned at 0 take
// their latents from `conditioning` (same modality indexing, batch rows);
// every other modality starts from a standard normal draw, in index order.
// Moving coordinates advance by vhat * dt per step; pinned latents are
// returned bit-exactly.
std::vector<Tensor> euler_sample(VelocityModel& model, const TaskPath& path,
                                 const std::vector<Tensor>& conditioning,
                                 const SamplerConfig& cfg, Rng& rng);

// Conditional sampling of one target modality: conditioning modalities (the
// non-empty handles) are pinned at 0, every remaining bystander rides at pure
// noise pinned at 1, and only the target coordinate is integrated 1 -> 0.
Tensor sample_marginal(VelocityModel& model, const std::vector<Tensor>& conditioning,
                       const std::string& target, const SamplerConfig& cfg, Rng& rng);

}  // namespace mmflow
