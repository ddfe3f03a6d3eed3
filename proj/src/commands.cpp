#include "mmflow/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mmflow/checkpoint.hpp"
#include "mmflow/error.hpp"
#include "mmflow/synthetic.hpp"

namespace mmflow {

namespace {

// independent rng streams derived from the config seed
constexpr uint64_t kStreamData = 1;          // training / reference dataset
constexpr uint64_t kStreamTrainer = 2;       // trainer draws
constexpr uint64_t kStreamConditioning = 3;  // cmd_sample conditioning rows
constexpr uint64_t kStreamSampling = 4;      // cmd_sample noise
constexpr uint64_t kStreamBench = 5;         // variant bench
constexpr uint64_t kStreamBaseline = 6;      // bench resampling baseline
constexpr uint64_t kStreamModelInit = 7;     // weight init

uint64_t stream_seed(uint64_t seed, uint64_t id) { return Rng(seed).fork(id).next_u64(); }

std::string fmt_real(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_f32(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

std::string hex_u64(uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("cannot write '" + path + "'");
    out << content;
    if (!out) throw UsageError("short write to '" + path + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    parts.push_back(cur);
    return parts;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> column_names(const std::vector<ModalitySpec>& specs) {
    std::vector<std::string> cols;
    for (const auto& s : specs) {
        if (s.sample_size() == 1) {
            cols.push_back(s.name);
        } else {
            for (int k = 0; k < s.sample_size(); ++k)
                cols.push_back(s.name + "." + std::to_string(k));
        }
    }
    return cols;
}

std::string join(const std::vector<std::string>& parts, char sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out.push_back(sep);
        out += parts[i];
    }
    return out;
}

// Clean per-modality data for the configured dataset. Tetrahedron data fans
// out into three 1-wide columns; the 2-d toys carry either one 2-wide
// modality or two 1-wide ones. `reference` is the joint [rows, total] view.
struct BuiltData {
    std::vector<Tensor> columns;
    Tensor reference;
    TetrahedronDataset tetra;  // only meaningful for kind tetrahedron
    bool is_tetra = false;
};

BuiltData build_dataset(const ExperimentConfig& cfg, const std::vector<ModalitySpec>& specs,
                        int rows, Rng& rng) {
    const std::string kind = cfg.str_req("data.kind");
    BuiltData out;
    if (kind == "tetrahedron") {
        bool shaped = specs.size() == 3;
        for (const auto& s : specs) shaped = shaped && s.sample_size() == 1;
        if (!shaped)
            throw UsageError("data: tetrahedron wants three one-dimensional modalities");
        out.tetra = make_tetrahedron(rows, cfg.real("data.epsilon", 0.05), rng);
        out.columns = out.tetra.modality_columns();
        out.reference = out.tetra.samples;
        out.is_tetra = true;
    } else if (specs.size() == 1 && specs[0].sample_size() == 2) {
        out.reference = make_toy2d(kind, rows, rng).samples;
        out.columns = {out.reference};
    } else if (specs.size() == 2 && specs[0].sample_size() == 1 && specs[1].sample_size() == 1) {
        out.reference = make_toy2d(kind, rows, rng).samples;
        out.columns = {slice_cols(out.reference, 0, 1), slice_cols(out.reference, 1, 1)};
    } else {
        throw UsageError("data: " + kind + " wants one two-dimensional modality or two " +
                         "one-dimensional ones");
    }
    return out;
}

}  // namespace

// ----------------------------------------------------------------------------

void cmd_train(const ExperimentConfig& cfg) {
    const uint64_t seed = cfg.u64("seed", 0);
    const uint64_t digest = cfg.digest();
    const std::string out_dir = cfg.str_req("out.dir");

    auto specs = config_modalities(cfg);
    auto tasks = config_tasks(cfg, static_cast<int>(specs.size()));
    TrainerConfig tc = config_trainer(cfg);
    tc.seed = stream_seed(seed, kStreamTrainer);

    Rng data_rng(stream_seed(seed, kStreamData));
    const int rows = static_cast<int>(cfg.integer("data.count", 10000));
    BuiltData data = build_dataset(cfg, specs, rows, data_rng);

    auto model = config_model(cfg, specs, stream_seed(seed, kStreamModelInit));
    std::vector<DatasetView> views{{std::vector<bool>(specs.size(), true), data.columns}};
    Trainer trainer(*model, tc, tasks, views);

    const int interval = static_cast<int>(cfg.integer("train.checkpoint_interval", 0));
    if (interval < 0) throw UsageError("config: train.checkpoint_interval must be >= 0");

    std::filesystem::create_directories(out_dir);
    std::string csv = "step,task,loss,lr\n";
    auto save_at = [&](int step) {
        char name[32];
        std::snprintf(name, sizeof(name), "ckpt-%06d.ckpt", step);
        save_checkpoint(out_dir + "/" + name,
                        make_checkpoint(*model, trainer.ema_parameters(), digest,
                                        static_cast<uint64_t>(step)));
    };
    for (int s = 0; s < tc.total_steps; ++s) {
        const double lr = lr_at(trainer.steps_done(), tc);
        const double loss = trainer.step();
        csv += std::to_string(trainer.steps_done()) + "," + trainer.last_task() + "," +
               fmt_real(loss) + "," + fmt_real(lr) + "\n";
        if (interval > 0 && trainer.steps_done() % interval == 0 &&
            trainer.steps_done() != tc.total_steps)
            save_at(trainer.steps_done());
    }
    save_at(tc.total_steps);
    write_text_file(out_dir + "/loss.csv", csv);
}

// ----------------------------------------------------------------------------

void cmd_sample(const ExperimentConfig& cfg, const std::string& ckpt_path, const std::string& task,
                int count, const std::string& out_csv) {
    if (count < 0) throw UsageError("sample: count must be >= 0");
    const uint64_t seed = cfg.u64("seed", 0);
    auto specs = config_modalities(cfg);
    const int n = static_cast<int>(specs.size());

    Checkpoint ckpt = load_checkpoint(ckpt_path);
    auto model = config_model(cfg, specs, 0);
    const bool use_ema = cfg.flag("sample.use_ema", ckpt.has_ema());
    if (use_ema && !ckpt.has_ema())
        throw UsageError("sample: checkpoint carries no EMA shadow");
    apply_checkpoint(ckpt, *model, use_ema ? "ema." : "");

    TaskPath path = parse_task(task, n);
    std::string csv = "# config_digest=" + hex_u64(ckpt.config_digest) + "\n" +
                      join(column_names(specs), ',') + "\n";
    if (count == 0) {
        write_text_file(out_csv, csv);
        return;
    }

    std::vector<Tensor> conditioning(specs.size());
    bool any_pinned = false;
    for (int m = 0; m < n; ++m)
        any_pinned = any_pinned || (path.start[m] == 0.0 && path.end[m] == 0.0);
    BuiltData data;
    if (any_pinned) {
        Rng cond_rng(stream_seed(seed, kStreamConditioning));
        data = build_dataset(cfg, specs, count, cond_rng);
        for (int m = 0; m < n; ++m)
            if (path.start[m] == 0.0 && path.end[m] == 0.0) conditioning[m] = data.columns[m];
    }

    SamplerConfig sc = config_sampler(cfg, n);
    Rng noise_rng(stream_seed(seed, kStreamSampling));
    const int chunk = 5000;
    int done = 0;
    while (done < count) {
        const int rows = std::min(chunk, count - done);
        std::vector<Tensor> cond_rows(specs.size());
        for (int m = 0; m < n; ++m)
            if (conditioning[m].ptr()) cond_rows[m] = slice_rows(conditioning[m], done, rows);
        sc.batch = rows;
        auto outs = euler_sample(*model, path, cond_rows, sc, noise_rng);
        for (int r = 0; r < rows; ++r) {
            std::string line;
            for (int m = 0; m < n; ++m) {
                const int size = specs[m].sample_size();
                const float* v = outs[m].data().data() + static_cast<size_t>(r) * size;
                for (int k = 0; k < size; ++k) {
                    if (!line.empty()) line.push_back(',');
                    line += fmt_f32(v[k]);
                }
            }
            csv += line + "\n";
        }
        done += rows;
    }
    write_text_file(out_csv, csv);
}

// ----------------------------------------------------------------------------

void cmd_eval(const ExperimentConfig& cfg, const std::string& samples_csv,
              const std::string& out_csv) {
    auto specs = config_modalities(cfg);
    const auto expected = column_names(specs);

    std::ifstream in(samples_csv, std::ios::binary);
    if (!in) throw UsageError("eval: cannot open '" + samples_csv + "'");
    std::string line;
    int lineno = 0;
    bool have_header = false;
    std::vector<float> flat;
    int rows = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto fields = split(t, ',');
        if (!have_header) {
            for (const auto& want : expected)
                if (std::find(fields.begin(), fields.end(), want) == fields.end())
                    throw UsageError("eval: " + samples_csv + " is missing column '" + want +
                                     "'");
            if (fields.size() != expected.size() || fields != expected)
                throw UsageError("eval: " + samples_csv + " columns differ from the config's " +
                                 "modalities");
            have_header = true;
            continue;
        }
        if (fields.size() != expected.size())
            throw UsageError("eval: " + samples_csv + ":" + std::to_string(lineno) +
                             ": expected " + std::to_string(expected.size()) + " values, got " +
                             std::to_string(fields.size()));
        for (const auto& f : fields) {
            try {
                size_t pos = 0;
                flat.push_back(std::stof(trim(f), &pos));
                if (pos != trim(f).size()) throw std::invalid_argument("");
            } catch (const std::exception&) {
                throw UsageError("eval: " + samples_csv + ":" + std::to_string(lineno) +
                                 ": bad number '" + f + "'");
            }
        }
        ++rows;
    }
    if (!have_header) throw UsageError("eval: " + samples_csv + " has no header row");
    if (rows == 0) throw UsageError("eval: " + samples_csv + " has no sample rows");
    Tensor samples = Tensor::from_data({rows, static_cast<int>(expected.size())}, std::move(flat));

    Rng data_rng(stream_seed(cfg.u64("seed", 0), kStreamData));
    const int ref_rows = static_cast<int>(cfg.integer("data.count", 10000));
    BuiltData data = build_dataset(cfg, specs, ref_rows, data_rng);

    double sd = 0.0, cov = 0.0;
    const double en = energy_distance(samples, data.reference);
    if (data.is_tetra) {
        sd = support_distance(samples, data.tetra);
        cov = face_coverage(samples, data.tetra, cfg.real("eval.threshold", 0.1));
    }
    std::string csv = "dataset,rows,support_distance,face_coverage,energy_distance\n";
    csv += cfg.str_req("data.kind") + "," + std::to_string(rows) + "," + fmt_real(sd) + "," +
           fmt_real(cov) + "," + fmt_real(en) + "\n";
    write_text_file(out_csv, csv);
}

// ----------------------------------------------------------------------------

void cmd_merge(const std::string& ckpt_a, const std::string& ckpt_b,
               const std::string& shared_name, const std::string& out_path) {
    Checkpoint a = load_checkpoint(ckpt_a);
    Checkpoint b = load_checkpoint(ckpt_b);
    save_checkpoint(out_path, merge_checkpoints(a, b, shared_name));
}

// ----------------------------------------------------------------------------

void cmd_schedules_bench(const ExperimentConfig& cfg, const std::string& out_csv) {
    const uint64_t seed = cfg.u64("seed", 0);
    const std::string kind = cfg.str_req("data.kind");
    if (kind == "tetrahedron")
        throw UsageError("bench: data.kind must be a 2-d toy dataset");

    std::vector<std::string> variants;
    for (const auto& raw :
         split(cfg.str("bench.variants", "eps/linear;v/cos;v/linear;rf/uniform;rf/lognorm"), ';'))
        if (!trim(raw).empty()) variants.push_back(trim(raw));

    Rng data_rng(stream_seed(seed, kStreamData));
    auto ds = make_toy2d(kind, static_cast<int>(cfg.integer("data.count", 10000)), data_rng);

    VariantBenchConfig vbc;
    vbc.arch.width = static_cast<int>(cfg.integer("model.width", vbc.arch.width));
    vbc.arch.depth = static_cast<int>(cfg.integer("model.depth", vbc.arch.depth));
    vbc.arch.time_dim = static_cast<int>(cfg.integer("model.time_dim", vbc.arch.time_dim));
    vbc.lr = cfg.real("train.lr", vbc.lr);
    vbc.warmup_steps = static_cast<int>(cfg.integer("train.warmup_steps", vbc.warmup_steps));
    vbc.total_steps = static_cast<int>(cfg.integer("train.total_steps", vbc.total_steps));
    vbc.batch_size = static_cast<int>(cfg.integer("train.batch_size", vbc.batch_size));
    vbc.eval_count = static_cast<int>(cfg.integer("bench.eval_count", vbc.eval_count));
    vbc.sample_steps = static_cast<int>(cfg.integer("sample.steps", vbc.sample_steps));
    vbc.gamma = cfg.real("sample.gamma", vbc.gamma);

    Rng bench_rng(stream_seed(seed, kStreamBench));
    auto reports = run_variant_bench(variants, ds, vbc, bench_rng);

    Rng base_rng(stream_seed(seed, kStreamBaseline));
    auto h1 = make_toy2d(kind, vbc.eval_count, base_rng);
    auto h2 = make_toy2d(kind, vbc.eval_count, base_rng);
    const double baseline = energy_distance(h1.samples, h2.samples);

    auto loss_mean = [](const std::vector<float>& l, bool head) {
        const size_t k = std::min<size_t>(100, l.size());
        double acc = 0.0;
        for (size_t i = 0; i < k; ++i) acc += l[head ? i : l.size() - 1 - i];
        return k ? acc / static_cast<double>(k) : 0.0;
    };
    std::string csv = "# baseline=" + fmt_real(baseline) + "\n";
    csv += "variant,energy_distance,samples,loss_first,loss_last\n";
    for (const auto& r : reports)
        csv += r.name + "," + fmt_real(r.energy_distance) + "," + std::to_string(r.samples) +
               "," + fmt_real(loss_mean(r.losses, true)) + "," +
               fmt_real(loss_mean(r.losses, false)) + "\n";
    write_text_file(out_csv, csv);
}

}  // namespace mmflow
