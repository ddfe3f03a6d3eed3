#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace mmflow {

// Deterministic random source. The mt19937_64 engine is bit-exact across
// platforms and we map its output to doubles ourselves, so a given seed
// always produces the same stream regardless of the standard library.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();
    double uniform();             // [0, 1)
    double normal();              // standard normal (Box-Muller, cached spare)
    int64_t index(int64_t n);     // uniform integer in [0, n)

    void fill_normal(float* out, size_t n);
    std::vector<float> normal_vec(size_t n);

    // Derives an independent deterministic stream; forks with distinct ids
    // from the same parent never share state.
    Rng fork(uint64_t stream_id) const;

    uint64_t seed() const { return seed_; }

private:
    std::mt19937_64 eng_;
    uint64_t seed_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace mmflow
