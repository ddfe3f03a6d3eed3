#include "mmflow/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mmflow/error.hpp"

namespace mmflow {

namespace {

// face f is opposite vertex f
constexpr int kFaces[4][3] = {{1, 2, 3}, {0, 2, 3}, {0, 1, 3}, {0, 1, 2}};

Vec3 vsub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 vadd(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 vscale(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double vdot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double vnorm(const Vec3& a) { return std::sqrt(vdot(a, a)); }
Vec3 vcross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

std::array<Vec3, 4> unit_tetrahedron() {
    const double s = 1.0 / std::sqrt(3.0);
    return {Vec3{s, s, s}, Vec3{s, -s, -s}, Vec3{-s, s, -s}, Vec3{-s, -s, s}};
}

void check_points(const Tensor& points, const char* who) {
    if (!points.ptr()) throw UsageError(std::string(who) + ": null points tensor");
    const auto& sh = points.shape();
    if (sh.size() != 2 || sh[1] != 3)
        throw UsageError(std::string(who) + ": points are " + shape_str(sh) + ", want [n,3]");
}

double surface_distance(const Vec3& p, const TetrahedronDataset& ds) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& f : kFaces)
        best = std::min(best, point_triangle_distance(p, ds.vertices[f[0]], ds.vertices[f[1]],
                                                      ds.vertices[f[2]]));
    return best;
}

}  // namespace

// ----------------------------------------------------------------------------

std::vector<Tensor> TetrahedronDataset::modality_columns() const {
    return {slice_cols(samples, 0, 1), slice_cols(samples, 1, 1), slice_cols(samples, 2, 1)};
}

TetrahedronDataset make_tetrahedron(int n, double epsilon, Rng& rng) {
    if (n < 1) throw UsageError("tetrahedron: sample count must be >= 1");
    if (epsilon < 0.0) throw UsageError("tetrahedron: negative offset band");

    TetrahedronDataset ds;
    ds.vertices = unit_tetrahedron();
    ds.epsilon = epsilon;

    std::vector<float> flat(static_cast<size_t>(n) * 3);
    for (int i = 0; i < n; ++i) {
        // faces of a regular tetrahedron have equal area, so area-proportional
        // face choice is a uniform pick
        const auto& f = kFaces[rng.index(4)];
        const Vec3 &a = ds.vertices[f[0]], &b = ds.vertices[f[1]], &c = ds.vertices[f[2]];
        double u = rng.uniform(), v = rng.uniform();
        if (u + v > 1.0) {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        Vec3 p = vadd(a, vadd(vscale(vsub(b, a), u), vscale(vsub(c, a), v)));
        Vec3 normal = vcross(vsub(b, a), vsub(c, a));
        normal = vscale(normal, 1.0 / vnorm(normal));
        double off = (2.0 * rng.uniform() - 1.0) * epsilon;
        p = vadd(p, vscale(normal, off));
        for (int k = 0; k < 3; ++k) flat[3 * i + k] = static_cast<float>(p[k]);
    }
    ds.samples = Tensor::from_data({n, 3}, std::move(flat));
    return ds;
}

Toy2DDataset make_toy2d(const std::string& kind, int n, Rng& rng) {
    if (n < 1) throw UsageError("toy2d: sample count must be >= 1");
    constexpr double kPi = 3.14159265358979323846;

    std::vector<float> flat(static_cast<size_t>(n) * 2);
    if (kind == "gaussian-mixture-8") {
        for (int i = 0; i < n; ++i) {
            int64_t k = rng.index(8);
            double ang = 2.0 * kPi * static_cast<double>(k) / 8.0;
            flat[2 * i] = static_cast<float>(std::cos(ang) + 0.05 * rng.normal());
            flat[2 * i + 1] = static_cast<float>(std::sin(ang) + 0.05 * rng.normal());
        }
    } else if (kind == "checkerboard") {
        // the 8 unit squares of [-2,2]^2 whose cell indices have even sum
        static constexpr int kCells[8][2] = {{0, 0}, {0, 2}, {1, 1}, {1, 3},
                                             {2, 0}, {2, 2}, {3, 1}, {3, 3}};
        for (int i = 0; i < n; ++i) {
            const auto& cell = kCells[rng.index(8)];
            flat[2 * i] = static_cast<float>(-2.0 + cell[0] + rng.uniform());
            flat[2 * i + 1] = static_cast<float>(-2.0 + cell[1] + rng.uniform());
        }
    } else {
        throw UsageError("toy2d: unknown kind '" + kind +
                         "' (want gaussian-mixture-8 or checkerboard)");
    }

    Toy2DDataset ds;
    ds.kind = kind;
    ds.samples = Tensor::from_data({n, 2}, std::move(flat));
    return ds;
}

// ----------------------------------------------------------------------------

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    Vec3 ab = vsub(b, a), ac = vsub(c, a), ap = vsub(p, a);
    double d1 = vdot(ab, ap), d2 = vdot(ac, ap);
    if (d1 <= 0.0 && d2 <= 0.0) return vnorm(ap);

    Vec3 bp = vsub(p, b);
    double d3 = vdot(ab, bp), d4 = vdot(ac, bp);
    if (d3 >= 0.0 && d4 <= d3) return vnorm(bp);

    double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0)
        return vnorm(vsub(p, vadd(a, vscale(ab, d1 / (d1 - d3)))));

    Vec3 cp = vsub(p, c);
    double d5 = vdot(ab, cp), d6 = vdot(ac, cp);
    if (d6 >= 0.0 && d5 <= d6) return vnorm(cp);

    double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0)
        return vnorm(vsub(p, vadd(a, vscale(ac, d2 / (d2 - d6)))));

    double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0) {
        double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return vnorm(vsub(p, vadd(b, vscale(vsub(c, b), w))));
    }

    double denom = 1.0 / (va + vb + vc);
    Vec3 q = vadd(a, vadd(vscale(ab, vb * denom), vscale(ac, vc * denom)));
    return vnorm(vsub(p, q));
}

double support_distance(const Tensor& points, const TetrahedronDataset& ds) {
    check_points(points, "support_distance");
    const int n = points.shape()[0];
    const float* v = points.data().data();
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
        acc += surface_distance({v[3 * i], v[3 * i + 1], v[3 * i + 2]}, ds);
    return acc / n;
}

double face_coverage(const Tensor& points, const TetrahedronDataset& ds, double threshold) {
    if (threshold <= 0.0) throw UsageError("face_coverage: threshold must be > 0");
    if (!points.ptr()) return 0.0;
    check_points(points, "face_coverage");

    // centroids of the 100 triangular cells the 10x10 barycentric lattice
    // cuts each face into (55 upward, 45 downward)
    std::vector<Vec3> centers;
    for (const auto& f : kFaces) {
        const Vec3 &a = ds.vertices[f[0]], &b = ds.vertices[f[1]], &c = ds.vertices[f[2]];
        auto push = [&](double u, double v) {
            centers.push_back(vadd(vadd(vscale(a, 1.0 - u - v), vscale(b, u)), vscale(c, v)));
        };
        for (int i = 0; i < 10; ++i)
            for (int j = 0; j + i < 10; ++j) {
                push((i + 1.0 / 3.0) / 10.0, (j + 1.0 / 3.0) / 10.0);
                if (i + j < 9) push((i + 2.0 / 3.0) / 10.0, (j + 2.0 / 3.0) / 10.0);
            }
    }

    const int n = points.shape()[0];
    const float* pv = points.data().data();
    const double thr2 = threshold * threshold;
    int covered = 0;
    for (const auto& ctr : centers) {
        for (int i = 0; i < n; ++i) {
            double dx = pv[3 * i] - ctr[0], dy = pv[3 * i + 1] - ctr[1],
                   dz = pv[3 * i + 2] - ctr[2];
            if (dx * dx + dy * dy + dz * dz <= thr2) {
                ++covered;
                break;
            }
        }
    }
    return static_cast<double>(covered) / static_cast<double>(centers.size());
}

// ----------------------------------------------------------------------------

namespace {

double pair_mean_distance(const float* x, int nx, const float* y, int ny, int d) {
    double acc = 0.0;
    for (int i = 0; i < nx; ++i) {
        const float* xi = x + static_cast<size_t>(i) * d;
        for (int j = 0; j < ny; ++j) {
            const float* yj = y + static_cast<size_t>(j) * d;
            double sq = 0.0;
            for (int k = 0; k < d; ++k) {
                double diff = static_cast<double>(xi[k]) - static_cast<double>(yj[k]);
                sq += diff * diff;
            }
            acc += std::sqrt(sq);
        }
    }
    return acc / (static_cast<double>(nx) * static_cast<double>(ny));
}

}  // namespace

double energy_distance(const Tensor& a, const Tensor& b) {
    if (!a.ptr() || !b.ptr()) throw UsageError("energy_distance: null sample tensor");
    const auto &sa = a.shape(), &sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[1])
        throw UsageError("energy_distance: shapes " + shape_str(sa) + " and " + shape_str(sb) +
                         " are not [n,d] with a common d");
    const int d = sa[1];
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    return 2.0 * pair_mean_distance(pa, sa[0], pb, sb[0], d) -
           pair_mean_distance(pa, sa[0], pa, sa[0], d) -
           pair_mean_distance(pb, sb[0], pb, sb[0], d);
}

// ----------------------------------------------------------------------------

namespace {

// joint generation in fixed-size chunks, rows interleaved back into one [count,
// sum(sample_size)] tensor
Tensor sample_joint_chunks(VelocityModel& model, const TaskPath& path, int count, int chunk,
                           const SamplerConfig& base, Rng& rng) {
    const auto& specs = model.modalities();
    int cols = 0;
    for (const auto& s : specs) cols += s.sample_size();

    std::vector<float> flat(static_cast<size_t>(count) * cols);
    int done = 0;
    while (done < count) {
        const int rows = std::min(chunk, count - done);
        SamplerConfig sc = base;
        sc.batch = rows;
        auto outs = euler_sample(model, path, std::vector<Tensor>(specs.size()), sc, rng);
        for (int r = 0; r < rows; ++r) {
            float* dst = flat.data() + static_cast<size_t>(done + r) * cols;
            for (size_t m = 0; m < specs.size(); ++m) {
                const int sz = specs[m].sample_size();
                const float* src = outs[m].data().data() + static_cast<size_t>(r) * sz;
                std::memcpy(dst, src, sizeof(float) * static_cast<size_t>(sz));
                dst += sz;
            }
        }
        done += rows;
    }
    return Tensor::from_data({count, cols}, std::move(flat));
}

std::vector<float> train_collect(VelocityModel& model, const TrainerConfig& cfg,
                                 const std::vector<WeightedTask>& tasks,
                                 const std::vector<DatasetView>& views) {
    Trainer trainer(model, cfg, tasks, views);
    std::vector<float> losses;
    losses.reserve(static_cast<size_t>(cfg.total_steps));
    for (int s = 0; s < cfg.total_steps; ++s) losses.push_back(static_cast<float>(trainer.step()));
    return losses;
}

void check_study_counts(int sample_count, int sample_chunk, int sample_steps, double gamma) {
    if (sample_count < 1) throw UsageError("study: sample count must be >= 1");
    if (sample_chunk < 1) throw UsageError("study: sample chunk must be >= 1");
    if (sample_steps < 1) throw UsageError("study: sampler steps must be >= 1");
    if (gamma <= 0.0) throw UsageError("study: gamma must be > 0");
}

}  // namespace

std::array<MetricsReport, 3> run_triplet_study(const TripletStudyConfig& cfg, Rng& rng) {
    check_study_counts(cfg.sample_count, cfg.sample_chunk, cfg.sample_steps, cfg.gamma);
    if (cfg.coverage_threshold <= 0.0) throw UsageError("study: coverage threshold must be > 0");
    if (cfg.data_count < 1) throw UsageError("study: data count must be >= 1");

    auto ds = make_tetrahedron(cfg.data_count, cfg.epsilon, rng);
    auto cols = ds.modality_columns();
    const std::vector<ModalitySpec> specs{{"x1", 1, 1}, {"x2", 1, 1}, {"x3", 1, 1}};

    struct Arm {
        const char* name;
        std::vector<WeightedTask> tasks;
        std::vector<DatasetView> views;
    };
    std::array<Arm, 3> arms;

    arms[0].name = "triplets";
    arms[0].tasks = {{TaskPath{"joint", {1, 1, 1}, {0, 0, 0}}, 1.0}};
    arms[0].views = {{{true, true, true}, {cols[0], cols[1], cols[2]}}};

    arms[1].name = "pairs";
    arms[2].name = "singles";
    for (int k = 0; k < 3; ++k) {
        // pair task: coordinate k absent and pinned at 1, the other two moving
        std::vector<double> pair_end{0, 0, 0};
        pair_end[k] = 1;
        std::vector<bool> pair_present{true, true, true};
        pair_present[k] = false;
        std::vector<Tensor> pair_data = {cols[0], cols[1], cols[2]};
        pair_data[k] = Tensor();
        arms[1].tasks.push_back({TaskPath{"pair-" + std::to_string(k), {1, 1, 1}, pair_end}, 1.0});
        arms[1].views.push_back({pair_present, pair_data});

        // single task: only coordinate k moves, the others stay pure noise
        std::vector<double> single_end{1, 1, 1};
        single_end[k] = 0;
        std::vector<bool> single_present{false, false, false};
        single_present[k] = true;
        std::vector<Tensor> single_data{Tensor(), Tensor(), Tensor()};
        single_data[k] = cols[k];
        arms[2].tasks.push_back(
            {TaskPath{"single-" + std::to_string(k), {1, 1, 1}, single_end}, 1.0});
        arms[2].views.push_back({single_present, single_data});
    }

    const TaskPath joint{"joint", {1, 1, 1}, {0, 0, 0}};
    std::array<MetricsReport, 3> reports;
    for (int ai = 0; ai < 3; ++ai) {
        Rng arm_rng = rng.fork(static_cast<uint64_t>(ai) + 1);

        MlpVelocityNet model(specs, cfg.arch, arm_rng.next_u64());
        TrainerConfig tc;
        tc.lr = cfg.lr;
        tc.warmup_steps = cfg.warmup_steps;
        tc.total_steps = cfg.total_steps;
        tc.batch_size = cfg.batch_size;
        tc.seed = arm_rng.next_u64();

        MetricsReport& rep = reports[ai];
        rep.name = arms[ai].name;
        rep.losses = train_collect(model, tc, arms[ai].tasks, arms[ai].views);

        SamplerConfig sc;
        sc.steps = cfg.sample_steps;
        sc.gamma = cfg.gamma;
        Rng sample_rng(arm_rng.next_u64());
        Tensor samples =
            sample_joint_chunks(model, joint, cfg.sample_count, cfg.sample_chunk, sc, sample_rng);

        rep.samples = cfg.sample_count;
        rep.support_distance = support_distance(samples, ds);
        rep.face_coverage = face_coverage(samples, ds, cfg.coverage_threshold);
    }
    return reports;
}

// ----------------------------------------------------------------------------

TrainVariant parse_variant(const std::string& name) {
    auto slash = name.find('/');
    if (slash == std::string::npos || name.find('/', slash + 1) != std::string::npos)
        throw UsageError("variant: want <target>/<schedule>, got '" + name + "'");
    const std::string lhs = name.substr(0, slash);
    const std::string rhs = name.substr(slash + 1);

    TrainVariant v;
    v.name = name;
    if (lhs == "eps")
        v.parameterization = Parameterization::Eps;
    else if (lhs == "v")
        v.parameterization = Parameterization::V;
    else if (lhs == "rf")
        v.parameterization = Parameterization::Velocity;
    else
        throw UsageError("variant: unknown target '" + lhs + "' in '" + name + "'");

    if (rhs == "linear")
        v.schedule = ScheduleKind::DdpmLinear;
    else if (rhs == "cos")
        v.schedule = ScheduleKind::Cosine;
    else if (rhs == "uniform")
        v.schedule = ScheduleKind::Rf;
    else if (rhs == "lognorm") {
        v.schedule = ScheduleKind::Rf;
        v.tsampler = TimestepSampler::parse("lognorm");
    } else
        throw UsageError("variant: unknown schedule '" + rhs + "' in '" + name + "'");
    return v;
}

std::vector<MetricsReport> run_variant_bench(const std::vector<std::string>& variants,
                                             const Toy2DDataset& dataset,
                                             const VariantBenchConfig& cfg, Rng& rng) {
    if (variants.empty()) throw UsageError("bench: no variants given");
    check_study_counts(cfg.eval_count, cfg.sample_chunk, cfg.sample_steps, cfg.gamma);
    if (!dataset.samples.ptr() || dataset.samples.shape().size() != 2 ||
        dataset.samples.shape()[1] != 2 || dataset.samples.shape()[0] < 1)
        throw UsageError("bench: dataset samples must be [n,2]");

    std::vector<TrainVariant> parsed;
    for (const auto& name : variants) parsed.push_back(parse_variant(name));

    const std::vector<ModalitySpec> specs{{"xy", 2, 1}};
    const std::vector<WeightedTask> tasks{{TaskPath{"joint", {1}, {0}}, 1.0}};
    const std::vector<DatasetView> views{{{true}, {dataset.samples}}};
    const TaskPath joint{"joint", {1}, {0}};

    auto held = make_toy2d(dataset.kind, cfg.eval_count, rng);
    const uint64_t init_seed = rng.next_u64();  // shared init across variants

    std::vector<MetricsReport> reports;
    for (size_t vi = 0; vi < parsed.size(); ++vi) {
        const TrainVariant& v = parsed[vi];
        Rng var_rng = rng.fork(vi + 1);

        MlpVelocityNet model(specs, cfg.arch, init_seed);
        TrainerConfig tc;
        tc.schedule = v.schedule;
        tc.parameterization = v.parameterization;
        tc.tsampler = v.tsampler;
        tc.lr = cfg.lr;
        tc.warmup_steps = cfg.warmup_steps;
        tc.total_steps = cfg.total_steps;
        tc.batch_size = cfg.batch_size;
        tc.seed = var_rng.next_u64();

        MetricsReport rep;
        rep.name = v.name;
        rep.losses = train_collect(model, tc, tasks, views);

        SamplerConfig sc;
        sc.steps = cfg.sample_steps;
        sc.gamma = cfg.gamma;
        sc.schedule = v.schedule;
        sc.parameterization = v.parameterization;
        Rng sample_rng(var_rng.next_u64());
        Tensor generated =
            sample_joint_chunks(model, joint, cfg.eval_count, cfg.sample_chunk, sc, sample_rng);

        rep.samples = cfg.eval_count;
        rep.energy_distance = energy_distance(generated, held.samples);
        reports.push_back(std::move(rep));
    }
    return reports;
}

}  // namespace mmflow
