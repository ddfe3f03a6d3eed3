#include "mmflow/modality.hpp"

#include <algorithm>
#include <set>

#include "mmflow/error.hpp"

namespace mmflow {

void validate_modalities(const std::vector<ModalitySpec>& specs) {
    if (specs.empty()) throw UsageError("modalities: need at least one");
    std::set<std::string> names;
    for (const auto& s : specs) {
        if (s.name.empty()) throw UsageError("modalities: empty name");
        if (!names.insert(s.name).second)
            throw UsageError("modalities: duplicate name '" + s.name + "'");
        if (s.dim <= 0 || s.tokens <= 0)
            throw UsageError("modality '" + s.name + "': dim and tokens must be positive");
    }
}

int modality_index(const std::vector<ModalitySpec>& specs, const std::string& name) {
    for (size_t i = 0; i < specs.size(); ++i)
        if (specs[i].name == name) return static_cast<int>(i);
    throw UsageError("unknown modality '" + name + "'");
}

std::vector<double> path_eval(const TaskPath& path, double t) {
    if (!(t >= 0.0 && t <= 1.0))
        throw UsageError("path_eval: t=" + std::to_string(t) + " outside [0,1]");
    if (path.start.size() != path.end.size())
        throw UsageError("path '" + path.name + "': endpoint dimension mismatch");
    std::vector<double> times(path.start.size());
    for (size_t i = 0; i < times.size(); ++i)
        times[i] = path.end[i] + t * (path.start[i] - path.end[i]);
    return times;
}

namespace {

std::vector<double> parse_point(const std::string& text, int n, const std::string& where) {
    std::vector<double> coords;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t next = text.find(':', pos);
        std::string tok = text.substr(pos, next == std::string::npos ? next : next - pos);
        try {
            size_t used = 0;
            double v = std::stod(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            coords.push_back(v);
        } catch (const std::exception&) {
            throw UsageError(where + ": bad coordinate '" + tok + "'");
        }
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    if (static_cast<int>(coords.size()) != n)
        throw UsageError(where + ": expected " + std::to_string(n) + " coordinates, got " +
                         std::to_string(coords.size()));
    for (double v : coords)
        if (!(v >= 0.0 && v <= 1.0))
            throw UsageError(where + ": coordinate " + std::to_string(v) + " outside [0,1]");
    return coords;
}

TaskPath literal_path(const std::string& name, int n) {
    const std::string inner = name.substr(5, name.size() - 6);
    size_t eq1 = inner.find("start=");
    size_t comma = inner.find(",end=");
    if (eq1 != 0 || comma == std::string::npos)
        throw UsageError("task '" + name + "': expected path(start=...,end=...)");
    TaskPath p;
    p.name = name;
    p.start = parse_point(inner.substr(6, comma - 6), n, "task '" + name + "' start");
    p.end = parse_point(inner.substr(comma + 5), n, "task '" + name + "' end");
    return p;
}

// named tasks over (image, text, audio): {start, end} per coordinate
struct NamedTask {
    const char* name;
    double start[3];
    double end[3];
};

constexpr NamedTask kNamedTasks[] = {
    {"t2i", {1, 0, 1}, {0, 0, 1}},
    {"i2t", {0, 1, 1}, {0, 0, 1}},
    {"t2a", {1, 0, 1}, {1, 0, 0}},
    {"a2t", {1, 1, 0}, {1, 0, 0}},
    {"a2i", {1, 1, 0}, {0, 1, 0}},
    {"i2a", {0, 1, 1}, {0, 1, 0}},
    {"t2ia", {1, 0, 1}, {0, 0, 0}},
};

}  // namespace

TaskPath parse_task(const std::string& name, int n_modalities) {
    if (n_modalities <= 0) throw UsageError("parse_task: need at least one modality");
    if (name == "joint") {
        TaskPath p;
        p.name = name;
        p.start.assign(static_cast<size_t>(n_modalities), 1.0);
        p.end.assign(static_cast<size_t>(n_modalities), 0.0);
        return p;
    }
    if (name.rfind("path(", 0) == 0 && name.back() == ')') return literal_path(name, n_modalities);
    for (const auto& t : kNamedTasks) {
        if (name != t.name) continue;
        if (n_modalities != 3)
            throw UsageError("task '" + name + "' needs exactly 3 modalities, have " +
                             std::to_string(n_modalities));
        TaskPath p;
        p.name = name;
        p.start.assign(t.start, t.start + 3);
        p.end.assign(t.end, t.end + 3);
        return p;
    }
    throw UsageError("unknown task '" + name +
                         "' (expected t2i, i2t, t2a, a2t, a2i, i2a, t2ia, joint, or path(...))");
}

bool task_compatible(const TaskPath& path, const std::vector<bool>& present) {
    if (path.start.size() != present.size()) return false;
    for (size_t i = 0; i < present.size(); ++i) {
        bool out_of_task = path.start[i] == 1.0 && path.end[i] == 1.0;
        if (!out_of_task && !present[i]) return false;
    }
    return true;
}

}  // namespace mmflow
