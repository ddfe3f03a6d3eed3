#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mmflow/models.hpp"
#include "mmflow/rng.hpp"
#include "mmflow/sampler.hpp"
#include "mmflow/schedules.hpp"
#include "mmflow/tensor.hpp"
#include "mmflow/trainer.hpp"

namespace mmflow {

using Vec3 = std::array<double, 3>;

// Points within epsilon of the surface of the regular tetrahedron inscribed
// in the unit sphere. Each coordinate doubles as a 1-d modality.
struct TetrahedronDataset {
    std::array<Vec3, 4> vertices;
    double epsilon = 0.0;
    Tensor samples;  // [n, 3]

    std::vector<Tensor> modality_columns() const;  // three [n, 1] tensors
};

struct Toy2DDataset {
    std::string kind;
    Tensor samples;  // [n, 2]
};

// One row of study output. Fields a study does not measure stay zero.
struct MetricsReport {
    std::string name;
    double support_distance = 0.0;
    double face_coverage = 0.0;
    double energy_distance = 0.0;
    int samples = 0;
    std::vector<float> losses;
};

// Face picked uniformly (equal areas), uniform barycentric point, then a
// U(-epsilon, epsilon) offset along the face normal.
TetrahedronDataset make_tetrahedron(int n, double epsilon, Rng& rng);

// kinds: gaussian-mixture-8 (radius-1 ring of sigma 0.05 gaussians),
// checkerboard (uniform over the 8 alternating unit squares of [-2,2]^2)
Toy2DDataset make_toy2d(const std::string& kind, int n, Rng& rng);

// Exact distance to a filled triangle: classify the closest feature (face
// interior, edge, or vertex) and measure to it.
double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

// mean over points of the distance to the nearest tetrahedron face
double support_distance(const Tensor& points, const TetrahedronDataset& ds);

// Fraction of barycentric grid cells whose centroid lies within threshold of
// some point. Each face is cut by a 10x10 barycentric lattice into 100
// triangular cells; every centroid is strictly interior to its face.
double face_coverage(const Tensor& points, const TetrahedronDataset& ds, double threshold);

// 2 E|A-B| - E|A-A'| - E|B-B'| over all pairs (V-statistic, self-pairs
// included), exact zero on identical sets
double energy_distance(const Tensor& a, const Tensor& b);

// ----------------------------------------------------------------------------

struct TripletStudyConfig {
    int data_count = 20000;
    double epsilon = 0.05;
    MlpConfig arch;  // width 256 / depth 8 / time_dim 16
    double lr = 1e-3;
    int warmup_steps = 200;
    int total_steps = 20000;
    int batch_size = 128;
    int sample_count = 50000;
    int sample_steps = 25;
    double gamma = 1.0;
    int sample_chunk = 5000;
    double coverage_threshold = 0.1;
};

// Trains three equally sized models on the same tetrahedron data: one on the
// joint triplet path, one on the three pairwise tasks (third coordinate
// absent), one on the three single-coordinate tasks. Each arm then generates
// cfg.sample_count joint samples and is scored on support distance and face
// coverage. Reports come back in that arm order.
std::array<MetricsReport, 3> run_triplet_study(const TripletStudyConfig& cfg, Rng& rng);

// ----------------------------------------------------------------------------

struct TrainVariant {
    std::string name;
    ScheduleKind schedule = ScheduleKind::Rf;
    Parameterization parameterization = Parameterization::Velocity;
    TimestepSampler tsampler;
};

// names: eps/linear, v/cos, v/linear, rf/uniform, rf/lognorm
TrainVariant parse_variant(const std::string& name);

struct VariantBenchConfig {
    MlpConfig arch{64, 4, 16};
    double lr = 1e-3;
    int warmup_steps = 200;
    int total_steps = 8000;
    int batch_size = 256;
    int eval_count = 10000;
    int sample_steps = 50;
    double gamma = 1.0;
    int sample_chunk = 5000;
};

// Trains one single-modality model per variant on the dataset (matched
// architecture, budget, and init), generates cfg.eval_count samples from
// each, and scores the energy distance against a freshly drawn held-out set.
std::vector<MetricsReport> run_variant_bench(const std::vector<std::string>& variants,
                                             const Toy2DDataset& dataset,
                                             const VariantBenchConfig& cfg, Rng& rng);

}  // namespace mmflow
