#pragma once

#include <string>
#include <vector>

#include "mmflow/tensor.hpp"

namespace mmflow {

class Rng;

enum class ScheduleKind { Rf, Cosine, DdpmLinear };
enum class Parameterization { Velocity, Eps, V };

ScheduleKind schedule_from_string(const std::string& name);
const char* schedule_to_string(ScheduleKind kind);
Parameterization parameterization_from_string(const std::string& name);
const char* parameterization_to_string(Parameterization p);

// Interpolation coefficients of x_t = a x0 + b x1 and their time derivatives.
struct PathCoeffs {
    double a = 1.0;
    double b = 0.0;
    double da = 0.0;
    double db = 0.0;
};

// ----------------------------------------------------------------------------
// Forward corruption process on t in [0, 1]. t = 0 is clean data, t = 1 is
// noise. The discretized linear-beta variant snaps t to the nearest of its T
// table entries; its derivatives come from the continuous limit of the table.

class ForwardSchedule {
  public:
    explicit ForwardSchedule(ScheduleKind kind, double beta_start = 0.00085,
                             double beta_end = 0.012, int steps = 1000);

    ScheduleKind kind() const { return kind_; }

    PathCoeffs alpha_beta(double t) const;

    // log of the squared signal-to-noise ratio a^2/b^2, and its analytic slope
    double snr_lambda(double t) const;
    double snr_lambda_prime(double t) const;

    // time-dependent weight multiplying the squared error of the given target
    double loss_weight(double t, Parameterization p) const;

  private:
    int snap_index(double t) const;
    double dlog_survival(int idx) const;

    ScheduleKind kind_;
    double beta0_;
    double beta1_;
    int steps_;
    std::vector<double> log_abar_;
};

// Exact algebraic conversion between prediction targets at one time. All three
// targets determine (x0, x1) given x_t, so any pair converts losslessly.
// Velocity means dx_t/dt = a' x0 + b' x1.
Tensor convert_prediction(Parameterization from, Parameterization to, const Tensor& pred,
                          const Tensor& x_t, const ForwardSchedule& s, double t);

// ----------------------------------------------------------------------------

struct TimestepSampler {
    enum class Kind { Uniform, LogitNormal };
    Kind kind = Kind::Uniform;
    double m = 0.0;
    double s = 1.0;

    // draws in (0, 1), clamped to [1e-5, 1 - 1e-5]
    double sample(Rng& rng) const;

    // accepts "uniform", "lognorm", or "lognorm(m,s)"
    static TimestepSampler parse(const std::string& text);
    std::string to_string() const;
};

// Inference-time reparameterization t -> gamma t / (1 + (gamma - 1) t), a
// monotone bijection of [0, 1]; gamma > 1 spends more steps near t = 1.
double shift_time(double t, double gamma);

}  // namespace mmflow
