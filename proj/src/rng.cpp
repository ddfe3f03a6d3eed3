#include "mmflow/rng.hpp"

#include <cmath>

namespace mmflow {

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace

Rng::Rng(uint64_t seed) : eng_(seed), seed_(seed) {}

uint64_t Rng::next_u64() { return eng_(); }

double Rng::uniform() {
    // 53 random bits -> [0, 1)
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

int64_t Rng::index(int64_t n) {
    int64_t r = static_cast<int64_t>(uniform() * static_cast<double>(n));
    return r >= n ? n - 1 : r;
}

void Rng::fill_normal(float* out, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = static_cast<float>(normal());
}

std::vector<float> Rng::normal_vec(size_t n) {
    std::vector<float> v(n);
    fill_normal(v.data(), n);
    return v;
}

Rng Rng::fork(uint64_t stream_id) const {
    return Rng(splitmix64(seed_ ^ splitmix64(stream_id + 1)));
}

}  // namespace mmflow
