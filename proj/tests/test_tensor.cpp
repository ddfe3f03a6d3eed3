#include "doctest.h"

#include <cmath>

#include "gradcheck.hpp"
#include "mmflow/rng.hpp"
#include "mmflow/tensor.hpp"
#include "op_grad_suite.hpp"

using namespace mmflow;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("matmul known product") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    Tensor c = matmul(a, b);
    CHECK(c.at(0, 0) == doctest::Approx(19));
    CHECK(c.at(0, 1) == doctest::Approx(22));
    CHECK(c.at(1, 0) == doctest::Approx(43));
    CHECK(c.at(1, 1) == doctest::Approx(50));
}

TEST_CASE("matmul shape error names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 5});
    try {
        matmul(a, b);
        FAIL("expected UsageError");
    } catch (const UsageError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,5]") != std::string::npos);
    }
}

TEST_CASE("silu fixed points") {
    Tensor x = Tensor::from_data({2}, {0.0f, 1.0f});
    Tensor y = silu(x);
    CHECK(y.at(0) == doctest::Approx(0.0));
    CHECK(y.at(1) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
}

TEST_CASE("softmax of a uniform row is uniform and rows sum to one") {
    Tensor x = Tensor::from_data({1, 4}, {0.7f, 0.7f, 0.7f, 0.7f});
    Tensor y = softmax_rows(x);
    for (int j = 0; j < 4; ++j) CHECK(y.at(0, j) == doctest::Approx(0.25));

    Rng rng(11);
    Tensor z = gradcheck::rand_leaf({5, 7}, rng, false, 3.0f);
    Tensor s = softmax_rows(z);
    for (int i = 0; i < 5; ++i) {
        double row = 0.0;
        for (int j = 0; j < 7; ++j) row += s.at(i, j);
        CHECK(std::fabs(row - 1.0) < 1e-6);
    }
}

TEST_CASE("layer_norm normalizes rows; constant row collapses to bias") {
    Rng rng(12);
    Tensor x = gradcheck::rand_leaf({6, 8}, rng, false, 2.0f);
    Tensor ones = Tensor::full({8}, 1.0f);
    Tensor zeros = Tensor::zeros({8});
    Tensor y = layer_norm(x, ones, zeros);
    for (int i = 0; i < 6; ++i) {
        double mean = 0.0, var = 0.0;
        for (int j = 0; j < 8; ++j) mean += y.at(i, j);
        mean /= 8;
        for (int j = 0; j < 8; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
        var /= 8;
        CHECK(std::fabs(mean) < 1e-6);
        CHECK(std::fabs(var - 1.0) < 1e-4);
    }

    Tensor c = Tensor::full({1, 4}, 3.5f);
    Tensor bias = Tensor::from_data({4}, {1, 2, 3, 4});
    Tensor yb = layer_norm(c, Tensor::full({4}, 1.0f), bias);
    for (int j = 0; j < 4; ++j) CHECK(yb.at(0, j) == doctest::Approx(bias.at(j)));
}

TEST_CASE("concat_rows then slice_rows returns the parts bit-exactly") {
    Rng rng(13);
    Tensor a = gradcheck::rand_leaf({2, 3}, rng, false);
    Tensor b = gradcheck::rand_leaf({4, 3}, rng, false);
    Tensor cat = concat_rows({a, b});
    Tensor sa = slice_rows(cat, 0, 2);
    Tensor sb = slice_rows(cat, 2, 4);
    CHECK(sa.data() == a.data());
    CHECK(sb.data() == b.data());
}

TEST_CASE("concat_cols then slice_cols returns the parts bit-exactly") {
    Rng rng(14);
    Tensor a = gradcheck::rand_leaf({3, 2}, rng, false);
    Tensor b = gradcheck::rand_leaf({3, 4}, rng, false);
    Tensor cat = concat_cols({a, b});
    CHECK(cat.shape() == std::vector<int>{3, 6});
    Tensor sa = slice_cols(cat, 0, 2);
    Tensor sb = slice_cols(cat, 2, 4);
    CHECK(sa.data() == a.data());
    CHECK(sb.data() == b.data());
    CHECK_THROWS_AS(concat_cols({a, Tensor::zeros({2, 2})}), UsageError);
}

TEST_CASE("reshape keeps row-major element order") {
    Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor r = reshape(a, {3, 2});
    CHECK(r.data() == a.data());
    CHECK(r.shape() == std::vector<int>{3, 2});
    CHECK(r.at(2, 1) == 6.0f);
    CHECK_THROWS_AS(reshape(a, {4, 2}), UsageError);
}

TEST_CASE("mse of identical tensors is zero with zero gradients") {
    Tensor p = Tensor::from_data({2}, {1, 2}, true);
    Tensor t = Tensor::from_data({2}, {1, 2});
    Tensor loss = mse_loss(p, t);
    CHECK(loss.item() == 0.0f);
    backward(loss);
    CHECK(p.grad()[0] == 0.0f);
    CHECK(p.grad()[1] == 0.0f);
}

TEST_CASE("backward on a consumed tape errors; non-scalar loss errors") {
    Tensor p = Tensor::from_data({2}, {1, 2}, true);
    Tensor t = Tensor::from_data({2}, {0, 0});
    Tensor loss = mse_loss(p, t);
    backward(loss);
    CHECK_THROWS_AS(backward(loss), UsageError);

    Tensor v = add(p, p);
    CHECK_THROWS_AS(backward(v), UsageError);
    Tape::active().clear();
}

TEST_CASE("no-grad mode records nothing") {
    Tensor p = Tensor::from_data({2}, {1, 2}, true);
    {
        NoGradGuard ng;
        Tensor y = silu(p);
        CHECK_FALSE(y.requires_grad());
    }
    CHECK(Tape::active().size() == 0);
}

TEST_CASE("gradient accumulation across reuse of one tensor") {
    // loss = sum(x + x): d/dx = 2 everywhere
    Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
    Tensor loss = sum(add(x, x));
    backward(loss);
    for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0f));
}

TEST_CASE("adamw weight decay only shrinks by (1 - lr*wd)") {
    Tensor p = Tensor::from_data({2}, {2.0f, -4.0f}, true);
    p.grad();  // allocate zero grads
    AdamW opt(0.9f, 0.999f, 1e-8f, 0.01f);
    opt.step({p}, 0.1f);
    CHECK(p.at(0) == doctest::Approx(2.0f * (1.0f - 0.1f * 0.01f)));
    CHECK(p.at(1) == doctest::Approx(-4.0f * (1.0f - 0.1f * 0.01f)));
}

TEST_CASE("adamw first step with unit gradient moves by about -lr") {
    Tensor p = Tensor::from_data({1}, {0.0f}, true);
    p.grad()[0] = 1.0f;
    AdamW opt(0.9f, 0.999f, 1e-8f, 0.0f);
    opt.step({p}, 0.1f);
    CHECK(p.at(0) == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adamw sequence is deterministic") {
    auto run = [] {
        Rng rng(77);
        Tensor p = gradcheck::rand_leaf({4, 4}, rng, true);
        AdamW opt;
        for (int s = 0; s < 25; ++s) {
            p.zero_grad();
            Tensor loss = mse_loss(p, Tensor::zeros({4, 4}));
            backward(loss);
            opt.step({p}, 1e-2f);
        }
        return p.data();
    };
    CHECK(run() == run());
}

TEST_CASE("gradient suite (fast sweep)") {
    auto res = op_grad_suite::run(8, 20240601);
    CAPTURE(res.worst_op);
    CHECK(res.worst_rel < 1e-3);
    CHECK(res.cases > 100);
}

TEST_SUITE_END();
