#include "mmflow/trainer.hpp"

#include <cmath>
#include <cstring>

#include "mmflow/error.hpp"

namespace mmflow {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

Tensor forward_interp(const Tensor& x0, const Tensor& x1, double t, const ForwardSchedule& sched) {
    if (x0.shape() != x1.shape())
        throw UsageError("forward_interp: shapes " + shape_str(x0.shape()) + " and " +
                         shape_str(x1.shape()) + " differ");
    auto pc = sched.alpha_beta(t);
    return add(scale(x0, static_cast<float>(pc.a)), scale(x1, static_cast<float>(pc.b)));
}

Tensor target_velocity(const Tensor& x0, const Tensor& x1) { return sub(x0, x1); }

double lr_at(int step, const TrainerConfig& cfg) {
    if (step < 0 || step > cfg.total_steps)
        throw UsageError("lr_at: step " + std::to_string(step) + " outside [0," +
                         std::to_string(cfg.total_steps) + "]");
    if (step < cfg.warmup_steps) return cfg.lr * step / cfg.warmup_steps;
    const int span = cfg.total_steps - cfg.warmup_steps;
    if (span == 0) return cfg.lr;
    double c = std::cos(0.5 * kPi * (step - cfg.warmup_steps) / span);
    return cfg.lr * c * c;
}

void ema_update(std::vector<Tensor>& ema, const std::vector<Tensor>& params, double decay) {
    if (ema.size() != params.size())
        throw UsageError("ema_update: " + std::to_string(ema.size()) + " shadows vs " +
                         std::to_string(params.size()) + " parameters");
    if (!(decay >= 0.0 && decay <= 1.0))
        throw UsageError("ema_update: decay " + std::to_string(decay) + " outside [0,1]");
    const float d = static_cast<float>(decay);
    for (size_t k = 0; k < ema.size(); ++k) {
        if (ema[k].shape() != params[k].shape())
            throw UsageError("ema_update: shadow " + std::to_string(k) + " shape " +
                             shape_str(ema[k].shape()) + " != " + shape_str(params[k].shape()));
        auto& e = ema[k].data();
        const auto& p = params[k].data();
        for (size_t i = 0; i < e.size(); ++i) e[i] = d * e[i] + (1.0f - d) * p[i];
    }
}

namespace {

void check_trainer_config(const TrainerConfig& cfg) {
    if (cfg.warmup_steps < 0 || cfg.total_steps < 1 || cfg.warmup_steps > cfg.total_steps)
        throw UsageError("trainer: need 0 <= warmup <= total steps");
    if (!(cfg.ema_decay > 0.0 && cfg.ema_decay < 1.0))
        throw UsageError("trainer: ema decay must lie in (0,1)");
    if (cfg.ema_interval < 1) throw UsageError("trainer: ema interval must be positive");
    if (cfg.batch_size < 1) throw UsageError("trainer: batch size must be positive");
    if (!(cfg.lr >= 0.0)) throw UsageError("trainer: learning rate must be non-negative");
}

int check_batch(const std::vector<ModalitySpec>& specs, const Batch& batch) {
    const size_t n = specs.size();
    if (batch.present.size() != n || batch.latents.size() != n)
        throw UsageError("training_step: batch arity != " + std::to_string(n) + " modalities");
    int rows = -1;
    bool any = false;
    for (size_t m = 0; m < n; ++m) {
        if (!batch.present[m]) continue;
        any = true;
        const auto& sh = batch.latents[m].shape();
        if (sh.size() != 2 || sh[1] != specs[m].sample_size())
            throw UsageError("training_step: modality '" + specs[m].name + "' latent " +
                             shape_str(sh) + " != [batch," +
                             std::to_string(specs[m].sample_size()) + "]");
        if (rows < 0) rows = sh[0];
        if (sh[0] != rows) throw UsageError("training_step: batch sizes differ across modalities");
    }
    if (!any) throw UsageError("training_step: at least one modality must be present");
    return rows;
}

const TaskPath& pick_task(const std::vector<WeightedTask>& tasks, const std::vector<bool>& present,
                          Rng& rng) {
    std::vector<const WeightedTask*> ok;
    double total = 0.0;
    for (const auto& wt : tasks) {
        if (!(wt.weight >= 0.0))
            throw UsageError("training_step: task '" + wt.path.name + "' has negative weight");
        if (wt.weight > 0.0 && task_compatible(wt.path, present)) {
            ok.push_back(&wt);
            total += wt.weight;
        }
    }
    if (ok.empty()) throw UsageError("training_step: no task path compatible with the batch's presence pattern");
    if (ok.size() == 1) return ok[0]->path;
    double u = rng.uniform() * total;
    for (const auto* wt : ok) {
        u -= wt->weight;
        if (u < 0.0) return wt->path;
    }
    return ok.back()->path;
}

}  // namespace

double training_step(VelocityModel& model, const Batch& batch,
                     const std::vector<WeightedTask>& tasks, const TrainerConfig& cfg, Rng& rng,
                     std::string* picked_task) {
    check_trainer_config(cfg);
    const auto& specs = model.modalities();
    const size_t n = specs.size();
    const int rows = check_batch(specs, batch);
    if (tasks.empty()) throw UsageError("training_step: no task paths configured");

    const TaskPath& path = pick_task(tasks, batch.present, rng);
    if (picked_task) *picked_task = path.name;
    const double t = cfg.tsampler.sample(rng);
    const auto times = path_eval(path, t);

    ForwardSchedule sched(cfg.schedule);
    std::vector<Tensor> states(n), x0s(n), noises(n);
    for (size_t m = 0; m < n; ++m) {
        const int size = specs[m].sample_size();
        noises[m] = Tensor::from_data({rows, size},
                                      rng.normal_vec(static_cast<size_t>(rows) * size));
        x0s[m] = batch.present[m] ? batch.latents[m] : Tensor::zeros({rows, size});
        states[m] = forward_interp(x0s[m], noises[m], times[m], sched);
    }

    auto preds = model.forward(states, times);

    Tensor loss = Tensor::scalar(0.0f);
    bool moving = false;
    for (size_t m = 0; m < n; ++m) {
        if (!batch.present[m]) continue;
        const double speed = std::abs(path.start[m] - path.end[m]);
        if (speed == 0.0) continue;
        Tensor target;
        double w = speed;
        switch (cfg.parameterization) {
            case Parameterization::Velocity:
                target = target_velocity(x0s[m], noises[m]);
                break;
            case Parameterization::Eps:
                target = noises[m];
                w *= sched.loss_weight(times[m], cfg.parameterization);
                break;
            case Parameterization::V: {
                auto pc = sched.alpha_beta(times[m]);
                target = sub(scale(noises[m], static_cast<float>(pc.a)),
                             scale(x0s[m], static_cast<float>(pc.b)));
                w *= sched.loss_weight(times[m], cfg.parameterization);
                break;
            }
        }
        Tensor term = scale(mse_loss(preds[m], target), static_cast<float>(w));
        loss = moving ? add(loss, term) : term;
        moving = true;
    }

    for (const auto& p : model.parameters()) {
        Tensor h = p;
        h.zero_grad();
    }
    if (moving && Tape::active().size() > 0)
        backward(loss);
    else
        Tape::active().clear();
    return loss.item();
}

// ----------------------------------------------------------------------------

Trainer::Trainer(VelocityModel& model, TrainerConfig cfg, std::vector<WeightedTask> tasks,
                 std::vector<DatasetView> views)
    : model_(model),
      cfg_(cfg),
      tasks_(std::move(tasks)),
      views_(std::move(views)),
      rng_(cfg.seed) {
    check_trainer_config(cfg_);
    if (tasks_.empty()) throw UsageError("trainer: no task paths configured");
    if (views_.empty()) throw UsageError("trainer: no dataset views configured");
    const auto& specs = model_.modalities();
    for (const auto& v : views_) {
        if (v.present.size() != specs.size() || v.data.size() != specs.size())
            throw UsageError("trainer: view arity != " + std::to_string(specs.size()) +
                             " modalities");
        int rows = -1;
        bool any = false;
        for (size_t m = 0; m < specs.size(); ++m) {
            if (!v.present[m]) continue;
            any = true;
            const auto& sh = v.data[m].shape();
            if (sh.size() != 2 || sh[1] != specs[m].sample_size() || sh[0] < 1)
                throw UsageError("trainer: view data for '" + specs[m].name + "' is " +
                                 shape_str(sh) + ", want [rows," +
                                 std::to_string(specs[m].sample_size()) + "]");
            if (rows < 0) rows = sh[0];
            if (sh[0] != rows) throw UsageError("trainer: view row counts differ");
        }
        if (!any) throw UsageError("trainer: view with no present modality");
    }
    params_ = model_.parameters();
    for (const auto& p : params_) ema_.push_back(p.detached_copy());
}

double Trainer::step() {
    if (steps_done_ >= cfg_.total_steps)
        throw UsageError("trainer: all " + std::to_string(cfg_.total_steps) + " steps consumed");
    const double lr = lr_at(steps_done_, cfg_);

    size_t vi = views_.size() > 1 ? static_cast<size_t>(rng_.index(views_.size())) : 0;
    const DatasetView& view = views_[vi];
    int rows = 0;
    for (size_t m = 0; m < view.present.size(); ++m)
        if (view.present[m]) rows = view.data[m].shape()[0];

    std::vector<int> idx(static_cast<size_t>(cfg_.batch_size));
    for (auto& i : idx) i = static_cast<int>(rng_.index(rows));

    Batch batch;
    batch.present = view.present;
    batch.latents.resize(view.present.size());
    for (size_t m = 0; m < view.present.size(); ++m) {
        if (!view.present[m]) continue;
        const int size = model_.modalities()[m].sample_size();
        std::vector<float> rows_out(idx.size() * static_cast<size_t>(size));
        const auto& src = view.data[m].data();
        for (size_t k = 0; k < idx.size(); ++k)
            std::memcpy(rows_out.data() + k * size, src.data() + static_cast<size_t>(idx[k]) * size,
                        static_cast<size_t>(size) * sizeof(float));
        batch.latents[m] =
            Tensor::from_data({static_cast<int>(idx.size()), size}, std::move(rows_out));
    }

    double loss = training_step(model_, batch, tasks_, cfg_, rng_, &last_task_);
    if (!std::isfinite(loss))
        throw NumericError("trainer: loss became non-finite at step " +
                           std::to_string(steps_done_));
    opt_.step(params_, static_cast<float>(lr));
    ++steps_done_;
    if (steps_done_ % cfg_.ema_interval == 0) ema_update(ema_, params_, cfg_.ema_decay);
    return loss;
}

}  // namespace mmflow
