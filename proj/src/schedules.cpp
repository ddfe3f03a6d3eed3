#include "mmflow/schedules.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mmflow/error.hpp"
#include "mmflow/rng.hpp"

namespace mmflow {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTimeClamp = 1e-5;

void require_unit_interval(double t, const char* where) {
    if (!(t >= 0.0 && t <= 1.0))
        throw UsageError(std::string(where) + ": t=" + std::to_string(t) + " outside [0,1]");
}

void require_interior(double t, const char* where) {
    if (!(t > 0.0 && t < 1.0))
        throw UsageError(std::string(where) + ": t=" + std::to_string(t) + " outside (0,1)");
}

}  // namespace

ScheduleKind schedule_from_string(const std::string& name) {
    if (name == "rf") return ScheduleKind::Rf;
    if (name == "cosine") return ScheduleKind::Cosine;
    if (name == "ddpm-linear") return ScheduleKind::DdpmLinear;
    throw UsageError("unknown schedule '" + name + "' (expected rf, cosine, or ddpm-linear)");
}

const char* schedule_to_string(ScheduleKind kind) {
    switch (kind) {
        case ScheduleKind::Rf: return "rf";
        case ScheduleKind::Cosine: return "cosine";
        case ScheduleKind::DdpmLinear: return "ddpm-linear";
    }
    return "?";
}

Parameterization parameterization_from_string(const std::string& name) {
    if (name == "velocity") return Parameterization::Velocity;
    if (name == "eps") return Parameterization::Eps;
    if (name == "v") return Parameterization::V;
    throw UsageError("unknown parameterization '" + name + "' (expected velocity, eps, or v)");
}

const char* parameterization_to_string(Parameterization p) {
    switch (p) {
        case Parameterization::Velocity: return "velocity";
        case Parameterization::Eps: return "eps";
        case Parameterization::V: return "v";
    }
    return "?";
}

// ----------------------------------------------------------------------------

ForwardSchedule::ForwardSchedule(ScheduleKind kind, double beta_start, double beta_end, int steps)
    : kind_(kind), beta0_(beta_start), beta1_(beta_end), steps_(steps) {
    if (kind_ != ScheduleKind::DdpmLinear) return;
    if (steps_ < 2) throw UsageError("ddpm-linear: need at least 2 steps");
    if (!(beta0_ > 0.0 && beta1_ < 1.0 && beta0_ <= beta1_))
        throw UsageError("ddpm-linear: betas must satisfy 0 < beta_start <= beta_end < 1");
    log_abar_.resize(static_cast<size_t>(steps_));
    double sb0 = std::sqrt(beta0_), sb1 = std::sqrt(beta1_);
    double acc = 0.0;
    for (int i = 0; i < steps_; ++i) {
        double sb = sb0 + (static_cast<double>(i) / (steps_ - 1)) * (sb1 - sb0);
        acc += std::log1p(-sb * sb);
        log_abar_[static_cast<size_t>(i)] = acc;
    }
}

int ForwardSchedule::snap_index(double t) const {
    return static_cast<int>(std::lround(t * (steps_ - 1)));
}

// Continuous-limit slope of log abar at table index idx. Each table step adds
// log(1 - beta_i) and spans 1/(T-1) of the unit interval; the increment around
// index idx is centered at idx + 1/2, hence the half-step evaluation point,
// which keeps centered secants through the table within first order.
double ForwardSchedule::dlog_survival(int idx) const {
    double sb0 = std::sqrt(beta0_), sb1 = std::sqrt(beta1_);
    double s_mid = std::min((idx + 0.5) / (steps_ - 1), 1.0);
    double sb = sb0 + s_mid * (sb1 - sb0);
    return (steps_ - 1) * std::log1p(-sb * sb);
}

PathCoeffs ForwardSchedule::alpha_beta(double t) const {
    require_unit_interval(t, "alpha_beta");
    PathCoeffs c;
    switch (kind_) {
        case ScheduleKind::Rf:
            c.a = 1.0 - t;
            c.b = t;
            c.da = -1.0;
            c.db = 1.0;
            break;
        case ScheduleKind::Cosine: {
            double h = 0.5 * kPi;
            c.a = std::cos(h * t);
            c.b = std::sin(h * t);
            c.da = -h * std::sin(h * t);
            c.db = h * std::cos(h * t);
            break;
        }
        case ScheduleKind::DdpmLinear: {
            int idx = snap_index(t);
            double la = log_abar_[static_cast<size_t>(idx)];
            double abar = std::exp(la);
            c.a = std::exp(0.5 * la);
            c.b = std::sqrt(1.0 - abar);
            double g = dlog_survival(idx);
            c.da = 0.5 * g * c.a;
            c.db = -abar * g / (2.0 * c.b);
            break;
        }
    }
    return c;
}

double ForwardSchedule::snr_lambda(double t) const {
    require_interior(t, "snr_lambda");
    PathCoeffs c = alpha_beta(t);
    return 2.0 * (std::log(c.a) - std::log(c.b));
}

double ForwardSchedule::snr_lambda_prime(double t) const {
    require_interior(t, "snr_lambda_prime");
    switch (kind_) {
        case ScheduleKind::Rf:
            return -2.0 / (t * (1.0 - t));
        case ScheduleKind::Cosine:
            return -2.0 * kPi / std::sin(kPi * t);
        case ScheduleKind::DdpmLinear: {
            int idx = snap_index(t);
            double abar = std::exp(log_abar_[static_cast<size_t>(idx)]);
            return dlog_survival(idx) / (1.0 - abar);
        }
    }
    return 0.0;
}

double ForwardSchedule::loss_weight(double t, Parameterization p) const {
    require_interior(t, "loss_weight");
    switch (p) {
        case Parameterization::Velocity: {
            PathCoeffs c = alpha_beta(t);
            return -0.5 * snr_lambda_prime(t) * c.b * c.b;
        }
        case Parameterization::Eps:
            return 1.0;
        case Parameterization::V:
            return std::exp(-0.5 * snr_lambda(t));
    }
    return 1.0;
}

// ----------------------------------------------------------------------------

Tensor convert_prediction(Parameterization from, Parameterization to, const Tensor& pred,
                          const Tensor& x_t, const ForwardSchedule& s, double t) {
    if (pred.shape() != x_t.shape())
        throw UsageError("convert_prediction: pred shape " + shape_str(pred.shape()) +
                         " != x_t shape " + shape_str(x_t.shape()));
    require_interior(t, "convert_prediction");
    if (from == to) return pred;

    PathCoeffs c = s.alpha_beta(t);
    if (c.a == 0.0 || c.b == 0.0)
        throw UsageError("convert_prediction: singular coefficients at t=" + std::to_string(t));
    double det = c.a * c.db - c.b * c.da;
    if (std::fabs(det) < 1e-12)
        throw NumericError("convert_prediction: degenerate path at t=" + std::to_string(t));

    size_t n = pred.numel();
    std::vector<float> out(n);
    for (size_t i = 0; i < n; ++i) {
        double p = pred.at(static_cast<int>(i));
        double x = x_t.at(static_cast<int>(i));
        double x0 = 0.0, x1 = 0.0;
        switch (from) {
            case Parameterization::Velocity:
                x0 = (c.db * x - c.b * p) / det;
                x1 = (c.a * p - c.da * x) / det;
                break;
            case Parameterization::Eps:
                x1 = p;
                x0 = (x - c.b * x1) / c.a;
                break;
            case Parameterization::V: {
                double denom = c.a * c.a + c.b * c.b;
                x0 = (c.a * x - c.b * p) / denom;
                x1 = (c.b * x + c.a * p) / denom;
                break;
            }
        }
        double y = 0.0;
        switch (to) {
            case Parameterization::Velocity: y = c.da * x0 + c.db * x1; break;
            case Parameterization::Eps: y = x1; break;
            case Parameterization::V: y = c.a * x1 - c.b * x0; break;
        }
        out[i] = static_cast<float>(y);
    }
    return Tensor::from_data(pred.shape(), std::move(out));
}

// ----------------------------------------------------------------------------

double TimestepSampler::sample(Rng& rng) const {
    double t;
    if (kind == Kind::Uniform) {
        t = rng.uniform();
    } else {
        double z = m + s * rng.normal();
        t = 1.0 / (1.0 + std::exp(-z));
    }
    return std::clamp(t, kTimeClamp, 1.0 - kTimeClamp);
}

TimestepSampler TimestepSampler::parse(const std::string& text) {
    TimestepSampler ts;
    if (text == "uniform") return ts;
    ts.kind = Kind::LogitNormal;
    if (text == "lognorm") return ts;
    double m = 0.0, s = 0.0;
    int consumed = 0;
    if (std::sscanf(text.c_str(), "lognorm(%lf,%lf)%n", &m, &s, &consumed) == 2 &&
        consumed == static_cast<int>(text.size())) {
        if (!(s > 0.0))
            throw UsageError("timestep sampler '" + text + "': scale must be positive");
        ts.m = m;
        ts.s = s;
        return ts;
    }
    throw UsageError("unknown timestep sampler '" + text +
                     "' (expected uniform, lognorm, or lognorm(m,s))");
}

std::string TimestepSampler::to_string() const {
    if (kind == Kind::Uniform) return "uniform";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "lognorm(%g,%g)", m, s);
    return buf;
}

double shift_time(double t, double gamma) {
    if (!(gamma > 0.0)) throw UsageError("shift_time: gamma must be positive");
    require_unit_interval(t, "shift_time");
    return gamma * t / (1.0 + (gamma - 1.0) * t);
}

}  // namespace mmflow
