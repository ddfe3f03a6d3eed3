#include "mmflow/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "mmflow/error.hpp"

namespace mmflow {

GuidanceMatrix::GuidanceMatrix(int n) : n_(n) {
    if (n < 1) throw UsageError("guidance: size must be positive");
    alpha_.assign(static_cast<size_t>(n) * n, 1.0);
}

double GuidanceMatrix::at(int i, int j) const {
    if (i < 0 || i >= n_ || j < 0 || j >= n_)
        throw UsageError("guidance: pair (" + std::to_string(i) + "," + std::to_string(j) +
                         ") outside " + std::to_string(n_) + " modalities");
    return alpha_[static_cast<size_t>(i) * n_ + j];
}

void GuidanceMatrix::set(int i, int j, double alpha) {
    if (i == j) throw UsageError("guidance: diagonal entries have no effect");
    if (!(alpha >= 0.0))
        throw UsageError("guidance: alpha " + std::to_string(alpha) + " must be >= 0");
    at(i, j);
    alpha_[static_cast<size_t>(i) * n_ + j] = alpha;
}

namespace {

void check_sampler_config(const SamplerConfig& cfg, size_t n) {
    if (cfg.steps < 1) throw UsageError("sampler: steps must be >= 1");
    if (!(cfg.gamma > 0.0)) throw UsageError("sampler: gamma must be > 0");
    if (cfg.batch < 1) throw UsageError("sampler: batch must be >= 1");
    if (cfg.guidance.size() != 0 && cfg.guidance.size() != static_cast<int>(n))
        throw UsageError("sampler: guidance matrix is " + std::to_string(cfg.guidance.size()) +
                         "x" + std::to_string(cfg.guidance.size()) + " for " + std::to_string(n) +
                         " modalities");
}

void check_state(const std::vector<ModalitySpec>& specs, const MultiModalState& state) {
    if (state.latents.size() != specs.size() || state.times.size() != specs.size())
        throw UsageError("sampler: state arity != " + std::to_string(specs.size()) +
                         " modalities");
    int rows = -1;
    for (size_t m = 0; m < specs.size(); ++m) {
        const auto& sh = state.latents[m].shape();
        if (sh.size() != 2 || sh[1] != specs[m].sample_size())
            throw UsageError("sampler: modality '" + specs[m].name + "' latent " + shape_str(sh) +
                             " != [batch," + std::to_string(specs[m].sample_size()) + "]");
        if (rows < 0) rows = sh[0];
        if (sh[0] != rows) throw UsageError("sampler: state batch sizes differ");
        if (!(state.times[m] >= 0.0 && state.times[m] <= 1.0))
            throw UsageError("sampler: state time outside [0,1]");
    }
}

double alpha_or_one(const GuidanceMatrix& g, int i, int j) {
    return g.size() == 0 ? 1.0 : g.at(i, j);
}

// prediction -> x0 - x1 target space
Tensor to_vhat(const Tensor& pred, const Tensor& x_t, const ForwardSchedule& sched,
               Parameterization p, double t) {
    if (p == Parameterization::Velocity) return pred;
    const double tc = std::clamp(t, 1e-5, 1.0 - 1e-5);
    Tensor u = convert_prediction(p, Parameterization::Velocity, pred, x_t, sched, tc);
    return scale(u, -1.0f);
}

std::vector<Tensor> draw_noise(const std::vector<ModalitySpec>& specs, int rows, Rng& rng) {
    std::vector<Tensor> out(specs.size());
    for (size_t m = 0; m < specs.size(); ++m) {
        const int size = specs[m].sample_size();
        out[m] = Tensor::from_data({rows, size}, rng.normal_vec(static_cast<size_t>(rows) * size));
    }
    return out;
}

std::vector<int> sources_for(const MultiModalState& state, const GuidanceMatrix& g, int i,
                             size_t n) {
    std::vector<int> out;
    for (size_t j = 0; j < n; ++j)
        if (static_cast<int>(j) != i && state.times[j] == 0.0 &&
            alpha_or_one(g, i, static_cast<int>(j)) != 1.0)
            out.push_back(static_cast<int>(j));
    return out;
}

// model outputs for target i with the given substitutions applied
Tensor eval_target(VelocityModel& model, const MultiModalState& state, int i,
                   const std::vector<Tensor>& noise, int clean_j) {
    const size_t n = state.latents.size();
    std::vector<Tensor> lat(n);
    std::vector<double> times(n);
    for (size_t k = 0; k < n; ++k) {
        if (static_cast<int>(k) == i) {
            lat[k] = state.latents[k];
            times[k] = state.times[k];
        } else if (static_cast<int>(k) == clean_j) {
            lat[k] = state.latents[k];
            times[k] = 0.0;
        } else {
            lat[k] = noise[k];
            times[k] = 1.0;
        }
    }
    return model.forward(lat, times)[static_cast<size_t>(i)];
}

Tensor accumulate_guidance(const Tensor& base,
                           const std::vector<std::pair<double, Tensor>>& deltas) {
    if (deltas.empty()) return base;
    std::vector<double> acc(base.data().begin(), base.data().end());
    for (const auto& [w, d] : deltas)
        for (size_t k = 0; k < acc.size(); ++k) acc[k] += w * static_cast<double>(d.data()[k]);
    std::vector<float> out(acc.size());
    for (size_t k = 0; k < acc.size(); ++k) out[k] = static_cast<float>(acc[k]);
    return Tensor::from_data(base.shape(), std::move(out));
}

// guided prediction for target i reusing an already computed base prediction
// and, when guidance is active, a shared noise draw
Tensor guided_from_base(VelocityModel& model, const MultiModalState& state, int i,
                        const Tensor& base_pred, const std::vector<Tensor>& noise,
                        const SamplerConfig& cfg, const ForwardSchedule& sched) {
    Tensor vhat = to_vhat(base_pred, state.latents[static_cast<size_t>(i)], sched,
                          cfg.parameterization, state.times[static_cast<size_t>(i)]);
    auto sources = sources_for(state, cfg.guidance, i, state.latents.size());
    if (sources.empty()) return vhat;

    Tensor uncond = to_vhat(eval_target(model, state, i, noise, -1),
                            state.latents[static_cast<size_t>(i)], sched, cfg.parameterization,
                            state.times[static_cast<size_t>(i)]);
    std::vector<std::pair<double, Tensor>> deltas;
    for (int j : sources) {
        Tensor cond = to_vhat(eval_target(model, state, i, noise, j),
                              state.latents[static_cast<size_t>(i)], sched, cfg.parameterization,
                              state.times[static_cast<size_t>(i)]);
        deltas.emplace_back(cfg.guidance.at(i, j) - 1.0, sub(cond, uncond));
    }
    return accumulate_guidance(vhat, deltas);
}

}  // namespace

Tensor delta_ij(VelocityModel& model, const MultiModalState& state, int i, int j,
                const SamplerConfig& cfg, Rng& rng) {
    NoGradGuard ng;
    const auto& specs = model.modalities();
    check_sampler_config(cfg, specs.size());
    check_state(specs, state);
    const int n = static_cast<int>(specs.size());
    if (i < 0 || i >= n || j < 0 || j >= n || i == j)
        throw UsageError("delta: need distinct modality indices inside the registry");
    if (state.times[static_cast<size_t>(j)] != 0.0)
        throw UsageError("delta: modality '" + specs[static_cast<size_t>(j)].name +
                         "' holds no clean data (time != 0)");

    const int rows = state.latents[0].shape()[0];
    std::vector<Tensor> noise(specs.size());
    for (size_t k = 0; k < specs.size(); ++k) {
        if (static_cast<int>(k) == i) continue;
        const int size = specs[k].sample_size();
        noise[k] = Tensor::from_data({rows, size},
                                     rng.normal_vec(static_cast<size_t>(rows) * size));
    }
    ForwardSchedule sched(cfg.schedule);
    const double ti = state.times[static_cast<size_t>(i)];
    Tensor cond = to_vhat(eval_target(model, state, i, noise, j),
                          state.latents[static_cast<size_t>(i)], sched, cfg.parameterization, ti);
    Tensor uncond = to_vhat(eval_target(model, state, i, noise, -1),
                            state.latents[static_cast<size_t>(i)], sched, cfg.parameterization,
                            ti);
    return sub(cond, uncond);
}

Tensor guided_velocity(VelocityModel& model, const MultiModalState& state, int i,
                       const SamplerConfig& cfg, Rng& rng) {
    NoGradGuard ng;
    const auto& specs = model.modalities();
    check_sampler_config(cfg, specs.size());
    check_state(specs, state);
    if (i < 0 || i >= static_cast<int>(specs.size()))
        throw UsageError("guidance: target index outside the registry");

    ForwardSchedule sched(cfg.schedule);
    Tensor base = model.forward(state.latents, state.times)[static_cast<size_t>(i)];
    auto sources = sources_for(state, cfg.guidance, i, specs.size());
    std::vector<Tensor> noise(specs.size());
    if (!sources.empty()) {
        const int rows = state.latents[0].shape()[0];
        for (size_t k = 0; k < specs.size(); ++k) {
            if (static_cast<int>(k) == i) continue;
            const int size = specs[k].sample_size();
            noise[k] = Tensor::from_data(
                {rows, size}, rng.normal_vec(static_cast<size_t>(rows) * size));
        }
    }
    return guided_from_base(model, state, i, base, noise, cfg, sched);
}

std::vector<Tensor> euler_sample(VelocityModel& model, const TaskPath& path,
                                 const std::vector<Tensor>& conditioning,
                                 const SamplerConfig& cfg, Rng& rng) {
    NoGradGuard ng;
    const auto& specs = model.modalities();
    check_sampler_config(cfg, specs.size());
    const size_t n = specs.size();
    if (path.start.size() != n)
        throw UsageError("sampler: path over " + std::to_string(path.start.size()) +
                         " coordinates, model has " + std::to_string(n));
    if (conditioning.size() != n)
        throw UsageError("sampler: conditioning arity != " + std::to_string(n) + " modalities");

    // batch size from conditioning when given, cfg.batch otherwise
    int rows = cfg.batch;
    for (size_t m = 0; m < n; ++m)
        if (conditioning[m].ptr()) rows = conditioning[m].shape()[0];

    MultiModalState state;
    state.latents.resize(n);
    state.times.assign(n, 0.0);
    for (size_t m = 0; m < n; ++m) {
        const int size = specs[m].sample_size();
        const bool pinned_clean = path.start[m] == 0.0 && path.end[m] == 0.0;
        if (pinned_clean) {
            if (!conditioning[m].ptr())
                throw UsageError("sampler: modality '" + specs[m].name +
                                 "' is pinned clean but has no conditioning latents");
            const auto& sh = conditioning[m].shape();
            if (sh.size() != 2 || sh[1] != size || sh[0] != rows)
                throw UsageError("sampler: conditioning for '" + specs[m].name + "' is " +
                                 shape_str(sh) + ", want [" + std::to_string(rows) + "," +
                                 std::to_string(size) + "]");
            state.latents[m] = conditioning[m];
        } else {
            state.latents[m] =
                Tensor::from_data({rows, size}, rng.normal_vec(static_cast<size_t>(rows) * size));
        }
    }

    ForwardSchedule sched(cfg.schedule);
    for (int k = cfg.steps; k >= 1; --k) {
        const double s_hi = shift_time(static_cast<double>(k) / cfg.steps, cfg.gamma);
        const double s_lo = shift_time(static_cast<double>(k - 1) / cfg.steps, cfg.gamma);
        const auto t_hi = path_eval(path, s_hi);
        const auto t_lo = path_eval(path, s_lo);
        state.times = t_hi;

        bool any_active = false;
        for (size_t i = 0; i < n && !any_active; ++i)
            if (path.start[i] != path.end[i] && !sources_for(state, cfg.guidance,
                                                             static_cast<int>(i), n).empty())
                any_active = true;
        std::vector<Tensor> noise(n);
        if (any_active) noise = draw_noise(specs, rows, rng);

        auto preds = model.forward(state.latents, state.times);
        for (size_t i = 0; i < n; ++i) {
            const double dt = t_hi[i] - t_lo[i];
            if (dt == 0.0) continue;
            Tensor vhat = guided_from_base(model, state, static_cast<int>(i), preds[i], noise,
                                           cfg, sched);
            state.latents[i] = add(state.latents[i], scale(vhat, static_cast<float>(dt)));
        }
    }
    return state.latents;
}

Tensor sample_marginal(VelocityModel& model, const std::vector<Tensor>& conditioning,
                       const std::string& target, const SamplerConfig& cfg, Rng& rng) {
    const auto& specs = model.modalities();
    const int ti = modality_index(specs, target);
    if (conditioning.size() != specs.size())
        throw UsageError("sampler: conditioning arity != " + std::to_string(specs.size()) +
                         " modalities");
    if (conditioning[static_cast<size_t>(ti)].ptr())
        throw UsageError("sampler: target '" + target + "' cannot also be conditioning");

    TaskPath path;
    path.name = "marginal:" + target;
    path.start.assign(specs.size(), 1.0);
    path.end.assign(specs.size(), 1.0);
    path.start[static_cast<size_t>(ti)] = 1.0;
    path.end[static_cast<size_t>(ti)] = 0.0;
    for (size_t m = 0; m < specs.size(); ++m)
        if (static_cast<int>(m) != ti && conditioning[m].ptr()) {
            path.start[m] = 0.0;
            path.end[m] = 0.0;
        }
    return euler_sample(model, path, conditioning, cfg, rng)[static_cast<size_t>(ti)];
}

}  // namespace mmflow
