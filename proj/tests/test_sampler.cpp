#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "mmflow/error.hpp"
#include "mmflow/sampler.hpp"

using namespace mmflow;

namespace {

// Velocity field defined by a plain function of the full state; lets tests
// pin the exact dynamics without training anything.
class FieldModel : public VelocityModel {
  public:
    using Fn = std::function<std::vector<Tensor>(const std::vector<Tensor>&,
                                                 const std::vector<double>&)>;
    FieldModel(std::vector<ModalitySpec> specs, Fn fn)
        : specs_(std::move(specs)), fn_(std::move(fn)) {}
    std::vector<Tensor> forward(const std::vector<Tensor>& latents,
                                const std::vector<double>& times) override {
        check_inputs(latents, times);
        ++calls;
        return fn_(latents, times);
    }
    const std::vector<ModalitySpec>& modalities() const override { return specs_; }
    const std::vector<std::pair<std::string, Tensor>>& named_parameters() const override {
        return params_;
    }
    int calls = 0;

  private:
    std::vector<ModalitySpec> specs_;
    Fn fn_;
    std::vector<std::pair<std::string, Tensor>> params_;
};

Tensor rand_rows(int rows, int cols, uint64_t seed, float spread = 1.0f) {
    Rng rng(seed);
    Tensor t = Tensor::zeros({rows, cols});
    for (auto& x : t.data()) x = static_cast<float>(rng.normal()) * spread;
    return t;
}

// mixes every input into every output with fixed pseudo-random affine maps,
// so cross-modal guidance has something to bite on
FieldModel::Fn mixing_field(const std::vector<ModalitySpec>& specs, uint64_t seed) {
    auto mats = std::make_shared<std::vector<std::vector<Tensor>>>();
    Rng rng(seed);
    for (const auto& si : specs) {
        std::vector<Tensor> row;
        for (const auto& sj : specs) {
            Tensor w = Tensor::zeros({sj.sample_size(), si.sample_size()});
            for (auto& x : w.data()) x = static_cast<float>(rng.normal()) * 0.3f;
            row.push_back(w);
        }
        mats->push_back(std::move(row));
    }
    return [mats, specs](const std::vector<Tensor>& lat, const std::vector<double>& times) {
        std::vector<Tensor> out;
        for (size_t i = 0; i < specs.size(); ++i) {
            Tensor acc = scale(matmul(lat[0], (*mats)[i][0]), static_cast<float>(1.0 + times[0]));
            for (size_t j = 1; j < specs.size(); ++j)
                acc = add(acc, scale(matmul(lat[j], (*mats)[i][j]),
                                     static_cast<float>(1.0 + times[j])));
            out.push_back(acc);
        }
        return out;
    };
}

}  // namespace

TEST_SUITE_BEGIN("sampler");

TEST_CASE("guidance matrix stores pairs and rejects bad entries") {
    GuidanceMatrix g(3);
    CHECK(g.at(0, 1) == 1.0);
    g.set(0, 1, 4.0);
    CHECK(g.at(0, 1) == 4.0);
    CHECK(g.at(1, 0) == 1.0);
    CHECK_THROWS_AS(g.set(1, 1, 2.0), UsageError);
    CHECK_THROWS_AS(g.set(0, 1, -0.5), UsageError);
    CHECK_THROWS_AS(g.at(0, 3), UsageError);
    CHECK_THROWS_AS(GuidanceMatrix(0), UsageError);
}

TEST_CASE("delta vanishes when the model ignores the source") {
    std::vector<ModalitySpec> specs{{"x", 3, 1}, {"c", 2, 1}};
    // output i depends only on its own latent
    FieldModel model(specs, [](const std::vector<Tensor>& lat, const std::vector<double>&) {
        return std::vector<Tensor>{scale(lat[0], 0.5f), scale(lat[1], 0.25f)};
    });
    MultiModalState state{{rand_rows(4, 3, 1), rand_rows(4, 2, 2)}, {0.6, 0.0}};
    SamplerConfig cfg;
    Rng rng(3);
    Tensor d = delta_ij(model, state, 0, 1, cfg, rng);
    CHECK(d.data() == std::vector<float>(12, 0.0f));

    Rng r1(3), r2(3);
    CHECK(delta_ij(model, state, 0, 1, cfg, r1).data() ==
          delta_ij(model, state, 0, 1, cfg, r2).data());

    Rng rng2(4);
    CHECK_THROWS_AS(delta_ij(model, state, 0, 0, cfg, rng2), UsageError);
    MultiModalState dirty = state;
    dirty.times[1] = 0.5;
    CHECK_THROWS_AS(delta_ij(model, dirty, 0, 1, cfg, rng2), UsageError);
}

TEST_CASE("two-modality guidance equals single-modal classifier-free guidance") {
    std::vector<ModalitySpec> specs{{"img", 3, 1}, {"txt", 2, 1}};
    FieldModel model(specs, mixing_field(specs, 7));
    SamplerConfig cfg;
    cfg.guidance = GuidanceMatrix(2);

    for (int rep = 0; rep < 10; ++rep) {
        for (double alpha : {1.0, 2.0, 4.0, 8.0}) {
            MultiModalState state{
                {rand_rows(2, 3, 100 + rep), rand_rows(2, 2, 200 + rep)},
                {0.3 + 0.04 * rep, 0.0}};
            cfg.guidance.set(0, 1, alpha);
            uint64_t seed = 300 + rep;
            Rng rng(seed);
            Tensor got = guided_velocity(model, state, 0, cfg, rng);

            // reference: v_u + alpha (v_c - v_u) with the same substitution draw
            Rng ref_rng(seed);
            Tensor noise_txt;
            if (alpha != 1.0)
                noise_txt = Tensor::from_data({2, 2}, ref_rng.normal_vec(4));
            else
                noise_txt = rand_rows(2, 2, 999);
            Tensor v_c = model.forward({state.latents[0], state.latents[1]},
                                       {state.times[0], 0.0})[0];
            Tensor v_u = model.forward({state.latents[0], noise_txt}, {state.times[0], 1.0})[0];
            for (int64_t k = 0; k < got.numel(); ++k) {
                double ref = alpha == 1.0
                                 ? static_cast<double>(v_c.data()[k])
                                 : v_u.data()[k] + alpha * (static_cast<double>(v_c.data()[k]) -
                                                            v_u.data()[k]);
                CHECK(std::abs(got.data()[k] - ref) <=
                      1e-6 * std::max(1.0, std::abs(ref)));
            }
        }
    }
}

TEST_CASE("alpha all ones is bit-identical to unguided sampling and draws no noise") {
    std::vector<ModalitySpec> specs{{"img", 3, 1}, {"txt", 2, 1}};
    FieldModel guided_model(specs, mixing_field(specs, 7));
    FieldModel plain_model(specs, mixing_field(specs, 7));
    TaskPath path{"t2i", {1.0, 0.0}, {0.0, 0.0}};
    Tensor cond = rand_rows(2, 2, 11);

    SamplerConfig unguided;
    unguided.steps = 5;
    SamplerConfig ones = unguided;
    ones.guidance = GuidanceMatrix(2);

    Rng r1(5), r2(5);
    auto a = euler_sample(guided_model, path, {Tensor(), cond}, ones, r1);
    auto b = euler_sample(plain_model, path, {Tensor(), cond}, unguided, r2);
    CHECK(a[0].data() == b[0].data());
    CHECK(guided_model.calls == plain_model.calls);
    // the two streams stayed aligned: both consumed only the init draw
    CHECK(r1.next_u64() == r2.next_u64());
}

TEST_CASE("selective guidance adds only active sources and shares the unconditional") {
    std::vector<ModalitySpec> specs{{"a", 2, 1}, {"b", 2, 1}, {"c", 2, 1}};
    FieldModel model(specs, mixing_field(specs, 13));
    MultiModalState state{
        {rand_rows(2, 2, 1), rand_rows(2, 2, 2), rand_rows(2, 2, 3)}, {0.5, 0.0, 0.0}};
    SamplerConfig cfg;
    cfg.guidance = GuidanceMatrix(3);
    cfg.guidance.set(0, 1, 2.0);  // source c stays at alpha 1

    model.calls = 0;
    Rng rng(17);
    Tensor got = guided_velocity(model, state, 0, cfg, rng);
    // base + unconditional + one conditional evaluation
    CHECK(model.calls == 3);

    // reference from its own evaluations using the same draw order
    Rng ref(17);
    Tensor nb = Tensor::from_data({2, 2}, ref.normal_vec(4));
    Tensor nc = Tensor::from_data({2, 2}, ref.normal_vec(4));
    Tensor base = model.forward(state.latents, state.times)[0];
    Tensor cond = model.forward({state.latents[0], state.latents[1], nc}, {0.5, 0.0, 1.0})[0];
    Tensor unc = model.forward({state.latents[0], nb, nc}, {0.5, 1.0, 1.0})[0];
    for (int64_t k = 0; k < got.numel(); ++k) {
        double want = base.data()[k] +
                      (2.0 - 1.0) * (static_cast<double>(cond.data()[k]) - unc.data()[k]);
        CHECK(got.data()[k] == doctest::Approx(want).epsilon(1e-6));
    }

    // both sources active: base + shared unconditional + two conditionals
    cfg.guidance.set(0, 2, 3.0);
    model.calls = 0;
    Rng rng2(17);
    guided_velocity(model, state, 0, cfg, rng2);
    CHECK(model.calls == 4);
}

TEST_CASE("one euler step with the exact field lands on the data") {
    std::vector<ModalitySpec> specs{{"x", 3, 1}};
    Tensor x0 = rand_rows(4, 3, 21);
    // v(x, t) = (x0 - x) / t recovers x0 - x1 along the rf interpolant
    FieldModel model(specs, [&](const std::vector<Tensor>& lat, const std::vector<double>& t) {
        return std::vector<Tensor>{scale(sub(x0, lat[0]), static_cast<float>(1.0 / t[0]))};
    });
    SamplerConfig cfg;
    cfg.steps = 1;
    cfg.gamma = 1.0;
    cfg.batch = 4;
    TaskPath path{"gen", {1.0}, {0.0}};
    Rng rng(22);
    auto out = euler_sample(model, path, {Tensor()}, cfg, rng);
    for (int64_t k = 0; k < out[0].numel(); ++k)
        CHECK(std::abs(out[0].data()[k] - x0.data()[k]) <=
              1e-6 * std::max(1.0, std::abs(static_cast<double>(x0.data()[k]))));
}

TEST_CASE("refining the grid converges to the gaussian flow at first order") {
    // data N(0, sigma0^2): the marginal velocity field is linear in x and the
    // exact flow map sends x(1) to sigma0 * x(1)
    const double sigma0 = 0.35;
    std::vector<ModalitySpec> specs{{"x", 1, 1}};
    FieldModel model(specs, [&](const std::vector<Tensor>& lat, const std::vector<double>& ts) {
        const double t = ts[0];
        const double var = (1.0 - t) * (1.0 - t) * sigma0 * sigma0 + t * t;
        const double c = ((1.0 - t) * sigma0 * sigma0 - t) / var;
        return std::vector<Tensor>{scale(lat[0], static_cast<float>(c))};
    });
    TaskPath path{"gen", {1.0}, {0.0}};

    double prev_err = 1e9;
    for (int steps : {10, 100, 1000}) {
        SamplerConfig cfg;
        cfg.steps = steps;
        cfg.gamma = 1.0;
        cfg.batch = 16;
        Rng rng(31);
        Tensor init = Tensor::from_data({16, 1}, Rng(31).normal_vec(16));
        auto out = euler_sample(model, path, {Tensor()}, cfg, rng);
        double err = 0.0;
        for (int k = 0; k < 16; ++k)
            err = std::max(err, std::abs(out[0].data()[k] - sigma0 * init.data()[k]));
        CHECK(err < prev_err);
        CHECK(err < 2.0 / steps);
        prev_err = err;
    }
}

TEST_CASE("pinned conditioning returns bit-exactly and bystanders hold their draw") {
    std::vector<ModalitySpec> specs{{"img", 3, 1}, {"txt", 2, 1}, {"aud", 2, 1}};
    FieldModel model(specs, mixing_field(specs, 7));
    // t2i with audio riding as a pure-noise bystander
    TaskPath path{"t2i", {1.0, 0.0, 1.0}, {0.0, 0.0, 1.0}};
    Tensor txt = rand_rows(2, 2, 41);
    SamplerConfig cfg;
    cfg.steps = 8;

    Rng rng(42);
    auto out = euler_sample(model, path, {Tensor(), txt, Tensor()}, cfg, rng);
    CHECK(out[1].data() == txt.data());

    // replay the init draws: img first, then aud (txt is conditioned)
    Rng replay(42);
    auto img_init = replay.normal_vec(6);
    auto aud_init = replay.normal_vec(4);
    CHECK(out[2].data() == std::vector<float>(aud_init.begin(), aud_init.end()));
    CHECK(out[0].data() != std::vector<float>(img_init.begin(), img_init.end()));
}

TEST_CASE("marginal sampling equals the explicit bystander path") {
    std::vector<ModalitySpec> specs{{"img", 3, 1}, {"txt", 2, 1}, {"aud", 2, 1}};
    FieldModel model(specs, mixing_field(specs, 7));
    Tensor txt = rand_rows(2, 2, 51);
    SamplerConfig cfg;
    cfg.steps = 6;

    Rng r1(52), r2(52);
    Tensor via_marginal = sample_marginal(model, {Tensor(), txt, Tensor()}, "img", cfg, r1);
    TaskPath path{"explicit", {1.0, 0.0, 1.0}, {0.0, 0.0, 1.0}};
    auto via_path = euler_sample(model, path, {Tensor(), txt, Tensor()}, cfg, r2);
    CHECK(via_marginal.data() == via_path[0].data());

    // the bystander draw matters to the target
    Rng r3(53);
    Tensor other = sample_marginal(model, {Tensor(), txt, Tensor()}, "img", cfg, r3);
    CHECK(via_marginal.data() != other.data());

    CHECK_THROWS_AS(sample_marginal(model, {Tensor(), txt, Tensor()}, "nope", cfg, r3),
                    UsageError);
    CHECK_THROWS_AS(sample_marginal(model, {Tensor(), txt, Tensor()}, "txt", cfg, r3),
                    UsageError);
}

TEST_CASE("sampler validates its configuration") {
    std::vector<ModalitySpec> specs{{"x", 2, 1}};
    FieldModel model(specs, [](const std::vector<Tensor>& lat, const std::vector<double>&) {
        return std::vector<Tensor>{lat[0]};
    });
    TaskPath path{"gen", {1.0}, {0.0}};
    Rng rng(1);
    SamplerConfig cfg;
    cfg.steps = 0;
    CHECK_THROWS_AS(euler_sample(model, path, {Tensor()}, cfg, rng), UsageError);
    cfg.steps = 4;
    cfg.gamma = 0.0;
    CHECK_THROWS_AS(euler_sample(model, path, {Tensor()}, cfg, rng), UsageError);
    cfg.gamma = 1.0;
    cfg.guidance = GuidanceMatrix(3);
    CHECK_THROWS_AS(euler_sample(model, path, {Tensor()}, cfg, rng), UsageError);

    SamplerConfig ok;
    TaskPath cond_path{"c2x", {1.0, 0.0}, {0.0, 0.0}};
    std::vector<ModalitySpec> two{{"x", 2, 1}, {"c", 2, 1}};
    FieldModel m2(two, mixing_field(two, 3));
    CHECK_THROWS_AS(euler_sample(m2, cond_path, {Tensor(), Tensor()}, ok, rng), UsageError);
    CHECK_THROWS_AS(euler_sample(m2, cond_path, {Tensor(), rand_rows(2, 3, 1)}, ok, rng),
                    UsageError);
}

TEST_SUITE_END();
