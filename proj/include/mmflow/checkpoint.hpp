#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmflow/models.hpp"
#include "mmflow/tensor.hpp"

namespace mmflow {

struct CheckpointEntry {
    std::string name;
    std::vector<int> shape;
    uint64_t offset = 0;  // bytes into payload
    uint64_t nbytes = 0;
};

// Little-endian container: 8-byte magic, u32 version, u32 flags (bit 0 marks
// an EMA shadow under "ema." names), u64 config digest, u64 step, the entry
// directory, then one contiguous f32 payload. Entries keep insertion order
// and offsets stay contiguous, so load -> save reproduces the bytes.
struct Checkpoint {
    uint32_t version = 1;
    uint32_t flags = 0;
    uint64_t config_digest = 0;
    uint64_t step = 0;
    std::vector<CheckpointEntry> entries;
    std::vector<float> payload;

    bool has_ema() const { return (flags & 1u) != 0; }
    const CheckpointEntry* find(const std::string& name) const;
    void append(const std::string& name, const std::vector<int>& shape, const float* data);
};

Checkpoint make_checkpoint(const VelocityModel& model, const std::vector<Tensor>& ema,
                           uint64_t config_digest, uint64_t step);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Copies every model parameter from the entry `prefix + name`, requiring
// exact shape agreement. prefix "ema." selects the shadow weights.
void apply_checkpoint(const Checkpoint& ckpt, VelocityModel& model,
                      const std::string& prefix = "");

// Name-level analogue of model merging: entries present in both average
// elementwise (shapes must agree; all offenders reported together), entries
// in one copy through, order is a's then b's exclusives. shared_name must
// name a modality with entries on both sides.
Checkpoint merge_checkpoints(const Checkpoint& a, const Checkpoint& b,
                             const std::string& shared_name);

}  // namespace mmflow
