#include "mmflow/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mmflow/error.hpp"

namespace mmflow {

namespace {

const std::vector<std::string> kKnownKeys = {
    "seed",
    "out.dir",
    "model.kind",
    "model.modalities",
    "model.width",
    "model.depth",
    "model.time_dim",
    "model.blocks",
    "model.ffn_mult",
    "schedule.kind",
    "schedule.parameterization",
    "schedule.tsampler",
    "train.lr",
    "train.warmup_steps",
    "train.total_steps",
    "train.batch_size",
    "train.ema_decay",
    "train.ema_interval",
    "train.checkpoint_interval",
    "train.tasks",
    "sample.steps",
    "sample.gamma",
    "sample.guidance",
    "sample.use_ema",
    "data.kind",
    "data.count",
    "data.epsilon",
    "eval.threshold",
    "bench.variants",
    "bench.eval_count",
};

bool known(const std::string& key) {
    return std::find(kKnownKeys.begin(), kKnownKeys.end(), key) != kKnownKeys.end();
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
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

}  // namespace

const std::vector<std::string>& ExperimentConfig::known_keys() { return kKnownKeys; }

ExperimentConfig ExperimentConfig::parse_text(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw UsageError("config: line " + std::to_string(lineno) + " has no '='");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty())
            throw UsageError("config: line " + std::to_string(lineno) + " has an empty key");
        if (!known(key))
            throw UsageError("config: unknown key '" + key + "' (line " + std::to_string(lineno) +
                             ")");
        if (cfg.has(key)) throw UsageError("config: duplicate key '" + key + "'");
        cfg.entries_.push_back({key, value});
    }
    return cfg;
}

ExperimentConfig ExperimentConfig::parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str());
}

std::string ExperimentConfig::to_text() const {
    std::string out;
    for (const auto& e : entries_) out += e.key + " = " + e.value + "\n";
    return out;
}

void ExperimentConfig::write_file(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UsageError("config: cannot write '" + path + "'");
    out << to_text();
}

uint64_t ExperimentConfig::digest() const {
    std::vector<std::string> lines;
    for (const auto& e : entries_) lines.push_back(e.key + "=" + e.value + "\n");
    std::sort(lines.begin(), lines.end());
    uint64_t h = 14695981039346656037ull;
    for (const auto& l : lines)
        for (unsigned char c : l) {
            h ^= c;
            h *= 1099511628211ull;
        }
    return h;
}

const std::string* ExperimentConfig::find(const std::string& key) const {
    for (const auto& e : entries_)
        if (e.key == key) return &e.value;
    return nullptr;
}

bool ExperimentConfig::has(const std::string& key) const { return find(key) != nullptr; }

void ExperimentConfig::set(const std::string& key, const std::string& value) {
    if (!known(key)) throw UsageError("config: unknown key '" + key + "'");
    for (auto& e : entries_)
        if (e.key == key) {
            e.value = value;
            return;
        }
    entries_.push_back({key, value});
}

std::string ExperimentConfig::str(const std::string& key, const std::string& def) const {
    const std::string* v = find(key);
    return v ? *v : def;
}

std::string ExperimentConfig::str_req(const std::string& key) const {
    const std::string* v = find(key);
    if (!v) throw UsageError("config: missing required key '" + key + "'");
    return *v;
}

int64_t ExperimentConfig::integer(const std::string& key, int64_t def) const {
    const std::string* v = find(key);
    if (!v) return def;
    try {
        size_t pos = 0;
        int64_t r = std::stoll(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw UsageError("config: key '" + key + "' is not an integer ('" + *v + "')");
    }
}

double ExperimentConfig::real(const std::string& key, double def) const {
    const std::string* v = find(key);
    if (!v) return def;
    try {
        size_t pos = 0;
        double r = std::stod(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw UsageError("config: key '" + key + "' is not a number ('" + *v + "')");
    }
}

uint64_t ExperimentConfig::u64(const std::string& key, uint64_t def) const {
    const std::string* v = find(key);
    if (!v) return def;
    try {
        size_t pos = 0;
        uint64_t r = std::stoull(*v, &pos);
        if (pos != v->size()) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw UsageError("config: key '" + key + "' is not an unsigned integer ('" + *v + "')");
    }
}

bool ExperimentConfig::flag(const std::string& key, bool def) const {
    const std::string* v = find(key);
    if (!v) return def;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw UsageError("config: key '" + key + "' is not a boolean ('" + *v + "')");
}

// ----------------------------------------------------------------------------

std::vector<ModalitySpec> config_modalities(const ExperimentConfig& cfg) {
    std::vector<ModalitySpec> specs;
    for (const std::string& raw : split(cfg.str_req("model.modalities"), ',')) {
        std::string item = trim(raw);
        if (item.empty()) throw UsageError("config: empty modality spec");
        auto fields = split(item, ':');
        if (fields.size() > 3)
            throw UsageError("config: modality '" + item + "' wants name[:dim[:tokens]]");
        ModalitySpec spec;
        spec.name = trim(fields[0]);
        try {
            if (fields.size() > 1) spec.dim = std::stoi(trim(fields[1]));
            if (fields.size() > 2) spec.tokens = std::stoi(trim(fields[2]));
        } catch (const std::exception&) {
            throw UsageError("config: bad modality sizes in '" + item + "'");
        }
        specs.push_back(spec);
    }
    validate_modalities(specs);
    return specs;
}

std::unique_ptr<VelocityModel> config_model(const ExperimentConfig& cfg,
                                            const std::vector<ModalitySpec>& specs,
                                            uint64_t seed) {
    std::string kind = cfg.str("model.kind", "mlp");
    if (kind == "mlp") {
        MlpConfig mc;
        mc.width = static_cast<int>(cfg.integer("model.width", mc.width));
        mc.depth = static_cast<int>(cfg.integer("model.depth", mc.depth));
        mc.time_dim = static_cast<int>(cfg.integer("model.time_dim", mc.time_dim));
        return std::make_unique<MlpVelocityNet>(specs, mc, seed);
    }
    if (kind == "omni") {
        OmniConfig oc;
        oc.blocks = static_cast<int>(cfg.integer("model.blocks", oc.blocks));
        oc.width = static_cast<int>(cfg.integer("model.width", oc.width));
        oc.time_dim = static_cast<int>(cfg.integer("model.time_dim", oc.time_dim));
        oc.ffn_mult = static_cast<int>(cfg.integer("model.ffn_mult", oc.ffn_mult));
        return std::make_unique<OmniTransformer>(specs, oc, seed);
    }
    throw UsageError("config: unknown model.kind '" + kind + "' (want mlp or omni)");
}

TrainerConfig config_trainer(const ExperimentConfig& cfg) {
    TrainerConfig tc;
    tc.schedule = schedule_from_string(cfg.str("schedule.kind", "rf"));
    tc.parameterization = parameterization_from_string(cfg.str("schedule.parameterization",
                                                               "velocity"));
    tc.tsampler = TimestepSampler::parse(cfg.str("schedule.tsampler", "uniform"));
    tc.lr = cfg.real("train.lr", tc.lr);
    tc.warmup_steps = static_cast<int>(cfg.integer("train.warmup_steps", tc.warmup_steps));
    tc.total_steps = static_cast<int>(cfg.integer("train.total_steps", tc.total_steps));
    tc.batch_size = static_cast<int>(cfg.integer("train.batch_size", tc.batch_size));
    tc.ema_decay = cfg.real("train.ema_decay", tc.ema_decay);
    tc.ema_interval = static_cast<int>(cfg.integer("train.ema_interval", tc.ema_interval));
    tc.seed = cfg.u64("seed", 0);
    return tc;
}

std::vector<WeightedTask> config_tasks(const ExperimentConfig& cfg, int n_modalities) {
    std::vector<WeightedTask> tasks;
    for (const std::string& raw : split(cfg.str_req("train.tasks"), ';')) {
        std::string item = trim(raw);
        if (item.empty()) throw UsageError("config: empty task in train.tasks");
        double weight = 1.0;
        auto star = item.rfind('*');
        if (star != std::string::npos && item.find(')', star) == std::string::npos) {
            std::string w = trim(item.substr(star + 1));
            try {
                size_t pos = 0;
                weight = std::stod(w, &pos);
                if (pos != w.size()) throw std::invalid_argument("");
            } catch (const std::exception&) {
                throw UsageError("config: bad task weight in '" + item + "'");
            }
            item = trim(item.substr(0, star));
        }
        tasks.push_back({parse_task(item, n_modalities), weight});
    }
    return tasks;
}

GuidanceMatrix parse_guidance(const std::string& text, int n_modalities) {
    std::string t = trim(text);
    if (t.empty()) return GuidanceMatrix();
    GuidanceMatrix g(n_modalities);
    for (const std::string& raw : split(t, ';')) {
        std::string item = trim(raw);
        if (item.empty()) throw UsageError("guidance: empty entry");
        auto eq = item.find('=');
        auto comma = item.find(',');
        if (eq == std::string::npos || comma == std::string::npos || comma > eq)
            throw UsageError("guidance: want i,j=alpha, got '" + item + "'");
        int i = 0, j = 0;
        double alpha = 0.0;
        try {
            i = std::stoi(trim(item.substr(0, comma)));
            j = std::stoi(trim(item.substr(comma + 1, eq - comma - 1)));
            std::string a = trim(item.substr(eq + 1));
            size_t pos = 0;
            alpha = std::stod(a, &pos);
            if (pos != a.size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw UsageError("guidance: want i,j=alpha, got '" + item + "'");
        }
        if (i < 1 || i > n_modalities || j < 1 || j > n_modalities)
            throw UsageError("guidance: '" + item + "' names a modality outside 1.." +
                             std::to_string(n_modalities));
        g.set(i - 1, j - 1, alpha);
    }
    return g;
}

SamplerConfig config_sampler(const ExperimentConfig& cfg, int n_modalities) {
    SamplerConfig sc;
    sc.steps = static_cast<int>(cfg.integer("sample.steps", sc.steps));
    sc.gamma = cfg.real("sample.gamma", sc.gamma);
    sc.guidance = parse_guidance(cfg.str("sample.guidance", ""), n_modalities);
    sc.schedule = schedule_from_string(cfg.str("schedule.kind", "rf"));
    sc.parameterization = parameterization_from_string(cfg.str("schedule.parameterization",
                                                               "velocity"));
    sc.seed = cfg.u64("seed", 0);
    return sc;
}

}  // namespace mmflow
