#pragma once

#include <string>
#include <vector>

namespace mmflow {

struct ModalitySpec {
    std::string name;
    int dim = 1;     // channels per token
    int tokens = 1;  // tokens per sample
    int sample_size() const { return dim * tokens; }
};

void validate_modalities(const std::vector<ModalitySpec>& specs);
int modality_index(const std::vector<ModalitySpec>& specs, const std::string& name);

// ----------------------------------------------------------------------------
// A generation task is a straight segment in the per-modality time cube.
// start is the noise side (position 1), end the data side (position 0); a
// coordinate pinned at 0 is clean conditioning, pinned at 1 it stays pure
// noise and needs no data.

struct TaskPath {
    std::string name;
    std::vector<double> start;
    std::vector<double> end;
};

// per-modality times at position t: end + t * (start - end)
std::vector<double> path_eval(const TaskPath& path, double t);

// Accepts the named 3-modality tasks (coordinate order image, text, audio):
// t2i, i2t, t2a, a2t, a2i, i2a, t2ia; joint over any n; and the literal form
// path(start=a:b:...,end=c:d:...).
TaskPath parse_task(const std::string& name, int n_modalities);

// true when every coordinate the path involves (not pinned at 1) has data
bool task_compatible(const TaskPath& path, const std::vector<bool>& present);

}  // namespace mmflow
