#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "poem/error.hpp"
#include "poem/rng.hpp"
#include "poem/tensor.hpp"
#include "support/op_cases.hpp"

using namespace poem;
using namespace poem::tensor;

namespace {

float scalar_grad(Var (*op)(Var), float x) {
    Graph g;
    Var in = g.input("x");
    Var out = op(in);
    Bindings b;
    b.set("x", Tensor::scalar(x));
    g.evaluate(out, b);
    return g.backward(out, b).at("x").item();
}

}  // namespace

TEST_CASE("evaluate: basic values") {
    Graph g;
    Var x = g.input("x");
    Bindings b;
    b.set("x", Tensor::scalar(0.0f));
    CHECK(g.evaluate(tanh(x), b).item() == 0.0f);

    Graph g2;
    Var c = g2.input("c");
    Bindings b2;
    b2.set("c", Tensor::row({2.5f, 2.5f, 2.5f}));
    const Tensor& s = g2.evaluate(softmax(c, 1), b2);
    for (float v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-7));

    Graph g3;
    Var a = g3.input("a");
    Var m = g3.input("m");
    Bindings b3;
    b3.set("a", Tensor::matrix(2, 2, {1, 2, 3, 4}));
    b3.set("m", Tensor::matrix(2, 1, {5, 6}));
    const Tensor& r = g3.evaluate(matmul(a, m), b3);
    CHECK(r.shape() == Shape{2, 1});
    // 1*5 + 2*6, 3*5 + 4*6
    CHECK(r[0] == 17.0f);
    CHECK(r[1] == 39.0f);
}

TEST_CASE("evaluate: errors") {
    Graph g;
    Var a = g.input("a");
    Var m = g.input("m");
    Var out = matmul(a, m);
    Bindings b;
    b.set("a", Tensor::matrix(2, 2, {1, 2, 3, 4}));
    CHECK_THROWS_AS(g.evaluate(out, b), Error);
    try {
        g.evaluate(out, b);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::unbound_input);
    }
    b.set("m", Tensor::matrix(3, 1, {1, 2, 3}));
    try {
        g.evaluate(out, b);
        FAIL("expected shape mismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::shape_mismatch);
        CHECK(std::string(e.what()).find("matmul") != std::string::npos);
    }
}

TEST_CASE("evaluate is referentially transparent") {
    Rng rng(3);
    Graph g;
    Var x = g.input("x");
    Var w = g.input("w");
    Var out = softmax(tanh(matmul(x, w)), 1);
    Bindings b;
    b.set("x", testing::random_tensor(rng, {4, 5}));
    b.set("w", testing::random_tensor(rng, {5, 3}));
    const Tensor first = g.evaluate(out, b);
    const Tensor second = g.evaluate(out, b);
    CHECK(first == second);
}

TEST_CASE("backward: scalar derivatives") {
    CHECK(scalar_grad(&tensor::tanh, 0.0f) == doctest::Approx(1.0));
    CHECK(scalar_grad(&tensor::sigmoid, 0.0f) == doctest::Approx(0.25));
}

TEST_CASE("backward: unused parameters get zero gradients") {
    Graph g;
    Var x = g.input("x");
    Var loss = sum(mul(x, x));
    Bindings b;
    b.set("x", Tensor::row({1.0f, -2.0f}));
    b.set("unused", Tensor({2, 3}, 5.0f));
    g.evaluate(loss, b);
    const Gradients grads = g.backward(loss, b);
    CHECK(grads.at("x")[0] == doctest::Approx(2.0));
    CHECK(grads.at("x")[1] == doctest::Approx(-4.0));
    const Tensor& z = grads.at("unused");
    CHECK(z.shape() == Shape{2, 3});
    for (float v : z.data()) CHECK(v == 0.0f);
}

TEST_CASE("backward: non-scalar output needs a seed") {
    Graph g;
    Var x = g.input("x");
    Var out = tanh(x);
    Bindings b;
    b.set("x", Tensor::row({0.1f, 0.2f}));
    g.evaluate(out, b);
    try {
        g.backward(out, b);
        FAIL("expected non-scalar-loss");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::non_scalar_loss);
    }
    const Gradients grads = g.backward(out, b, Tensor::row({1.0f, 0.0f}));
    CHECK(grads.at("x")[0] == doctest::Approx(1.0 - std::tanh(0.1) * std::tanh(0.1)).epsilon(1e-6));
    CHECK(grads.at("x")[1] == 0.0f);
}

TEST_CASE("backward: matmul matches central differences") {
    Rng rng(11);
    const Tensor a = testing::random_tensor(rng, {3, 4});
    const Tensor b = testing::random_tensor(rng, {4, 2});
    const Tensor w = testing::random_tensor(rng, {3, 2});
    auto loss_of = [&](const Tensor& aa, const Tensor& bb) {
        double s = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 2; ++j) {
                double acc = 0.0;
                for (int k = 0; k < 4; ++k) acc += static_cast<double>(aa.at(i, k)) * bb.at(k, j);
                s += acc * w.at(i, j);
            }
        return s;
    };
    Graph g;
    Var va = g.input("a");
    Var vb = g.input("b");
    Var loss = sum(mul(matmul(va, vb), g.constant(w)));
    Bindings bind;
    bind.set("a", a);
    bind.set("b", b);
    g.evaluate(loss, bind);
    const Gradients grads = g.backward(loss, bind);
    const double h = 1e-3;
    for (std::size_t i = 0; i < a.size(); ++i) {
        Tensor up = a, down = a;
        up[i] += static_cast<float>(h);
        down[i] -= static_cast<float>(h);
        const double numeric = (loss_of(up, b) - loss_of(down, b)) / (static_cast<double>(up[i]) - down[i]);
        CHECK(grads.at("a")[i] == doctest::Approx(numeric).epsilon(1e-3));
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
        Tensor up = b, down = b;
        up[i] += static_cast<float>(h);
        down[i] -= static_cast<float>(h);
        const double numeric = (loss_of(a, up) - loss_of(a, down)) / (static_cast<double>(up[i]) - down[i]);
        CHECK(grads.at("b")[i] == doctest::Approx(numeric).epsilon(1e-3));
    }
}

TEST_CASE("grad_check: every op kind on random cases") {
    for (OpKind op : testing::differentiable_ops()) {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            testing::GraphCase c = testing::make_op_case(op, seed * 977 + static_cast<std::uint64_t>(op));
            const GradCheckReport report = grad_check(*c.graph, c.loss, c.bindings);
            INFO(c.label << " max rel error " << report.max_rel_error);
            CHECK(report.passed);
        }
    }
}

TEST_CASE("grad_check: linear layer + bce") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        Graph g;
        Var x = g.constant(testing::random_tensor(rng, {5, 3}));
        Var w = g.input("w");
        Var b = g.input("b");
        Tensor target({5, 2});
        for (float& v : target.data()) v = rng.uniform() < 0.5 ? 0.0f : 1.0f;
        Var loss = bce_loss(sigmoid(add(matmul(x, w), broadcast(b, 5))), g.constant(target));
        Bindings bind;
        bind.set("w", testing::random_tensor(rng, {3, 2}));
        bind.set("b", testing::random_tensor(rng, {1, 2}));
        CHECK(grad_check(g, loss, bind).passed);
    }
}

TEST_CASE("grad_check: constant graph yields an empty passing report") {
    Graph g;
    Var loss = sum(g.constant(Tensor::row({1.0f, 2.0f})));
    const GradCheckReport report = grad_check(g, loss, Bindings{});
    CHECK(report.entries.empty());
    CHECK(report.passed);
}

TEST_CASE("grad_check: corrupted sigmoid rule is detected") {
    Rng rng(5);
    Graph g;
    Var x = g.input("x");
    Var loss = sum(mul(sigmoid(x), g.constant(testing::random_tensor(rng, {2, 3}, 0.5, 1.0))));
    Bindings b;
    b.set("x", testing::random_tensor(rng, {2, 3}));
    CHECK(grad_check(g, loss, b).passed);
    g.corrupt_sigmoid_gradient(1.5f);
    CHECK_FALSE(grad_check(g, loss, b).passed);
}

TEST_CASE("grad_check: coordinates straddling a kink are skipped, not compared") {
    Graph g;
    Var x = g.input("x");
    Var loss = sum(mul(relu(x), g.constant(Tensor::row({3.0f, -2.0f, 1.0f}))));
    Bindings b;
    // The first coordinate sits within one step of the relu kink.
    b.set("x", Tensor::row({0.0004f, 0.7f, -0.5f}));
    const GradCheckReport r = grad_check(g, loss, b);
    CHECK(r.passed);
    CHECK(r.skipped_kinks == 1);
    REQUIRE(r.entries.size() == 1);
    CHECK(r.entries[0].checked == 2);

    Var m = sum(minimum(x, g.constant(Tensor::row({0.0f, 0.0f, 0.0f}))));
    b.set("x", Tensor::row({0.0002f, 0.4f, -0.3f}));
    CHECK(grad_check(g, m, b).skipped_kinks == 1);
}

TEST_CASE("renormalize: fallback routes value and gradient") {
    Graph g;
    Var x = g.input("x");
    Var fb = g.input("fb");
    Var out = renormalize(x, fb, 1e-8f);
    Var loss = sum(mul(out, g.constant(Tensor::row({1.0f, 2.0f, 3.0f}))));
    Bindings b;
    b.set("x", Tensor::row({0.0f, 0.0f, 0.0f}));
    b.set("fb", Tensor::row({0.2f, 0.3f, 0.5f}));
    CHECK(g.evaluate(out, b) == Tensor::row({0.2f, 0.3f, 0.5f}));
    g.evaluate(loss, b);
    const Gradients grads = g.backward(loss, b);
    CHECK(grads.at("fb") == Tensor::row({1.0f, 2.0f, 3.0f}));
    for (float v : grads.at("x").data()) CHECK(v == 0.0f);
}

TEST_CASE("property: softmax sums to one for arbitrary finite inputs") {
    Rng rng(21);
    for (int trial = 0; trial < 300; ++trial) {
        const int r = testing::random_extent(rng, 1, 6);
        const int k = testing::random_extent(rng, 1, 8);
        const int axis = static_cast<int>(rng.index(2));
        const double spread = std::pow(10.0, rng.uniform(-2.0, 3.0));
        Graph g;
        Var x = g.input("x");
        Bindings b;
        b.set("x", testing::random_tensor(rng, {r, k}, -spread, spread));
        const Tensor& s = g.evaluate(softmax(x, axis), b);
        const int outer = axis == 0 ? k : r;
        const int len = axis == 0 ? r : k;
        for (int o = 0; o < outer; ++o) {
            double total = 0.0;
            for (int l = 0; l < len; ++l) {
                const float v = axis == 0 ? s.at(l, o) : s.at(o, l);
                CHECK(v >= 0.0f);
                total += v;
            }
            CHECK(std::abs(total - 1.0) <= 1e-5);
        }
    }
}

TEST_CASE("property: l2_normalize yields unit norm for nonzero inputs") {
    Rng rng(22);
    for (int trial = 0; trial < 300; ++trial) {
        const int r = testing::random_extent(rng, 1, 6);
        const int k = testing::random_extent(rng, 1, 8);
        const double mag = std::pow(10.0, rng.uniform(-3.0, 3.0));
        Graph g;
        Var x = g.input("x");
        Bindings b;
        b.set("x", testing::away_from_zero(rng, {r, k}));
        for (float& v : const_cast<Tensor*>(b.find("x"))->data()) v = static_cast<float>(v * mag);
        const Tensor& n = g.evaluate(l2_normalize(x, 1), b);
        for (int i = 0; i < r; ++i) {
            double ss = 0.0;
            for (int j = 0; j < k; ++j) ss += static_cast<double>(n.at(i, j)) * n.at(i, j);
            CHECK(std::abs(std::sqrt(ss) - 1.0) <= 1e-5);
        }
    }
}

TEST_CASE("l2_normalize guards the zero vector") {
    Graph g;
    Var x = g.input("x");
    Bindings b;
    b.set("x", Tensor::row({0.0f, 0.0f}));
    const Tensor& n = g.evaluate(l2_normalize(x, 1), b);
    CHECK(n.all_finite());
    CHECK(n[0] == 0.0f);
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
    ParameterStore store = init_parameters({{"w", {3, 4}}, {"b", {1, 4}}}, 1);
    const auto before = store.parameters();
    store.adam_step(store.zero_gradients(), AdamConfig{});
    CHECK(store.step() == 1);
    for (const auto& [name, t] : before) CHECK(store.get(name) == t);
}

TEST_CASE("adam: first step has magnitude lr") {
    ParameterStore store;
    store.add("w", Tensor::scalar(1.0f));
    AdamConfig cfg;
    cfg.lr = 0.1f;
    store.adam_step({{"w", Tensor::scalar(1.0f)}}, cfg);
    CHECK(store.get("w").item() == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adam: two steps reduce a quadratic") {
    ParameterStore store;
    store.add("w", Tensor::row({2.0f, -3.0f}));
    auto loss_and_grad = [&](Gradients* grads) {
        Graph g;
        Var w = g.input("w");
        Var loss = sum(mul(w, w));
        Bindings b = store.bindings();
        const double l = g.evaluate(loss, b).item();
        if (grads) *grads = g.backward(loss, b);
        return l;
    };
    Gradients grads;
    const double l0 = loss_and_grad(&grads);
    AdamConfig cfg;
    cfg.lr = 0.05f;
    store.adam_step(grads, cfg);
    loss_and_grad(&grads);
    store.adam_step(grads, cfg);
    CHECK(loss_and_grad(nullptr) < l0);
}

TEST_CASE("adam: invalid gradients are rejected") {
    ParameterStore store;
    store.add("w", Tensor::row({1.0f, 2.0f}));
    try {
        store.adam_step({{"w", Tensor::scalar(1.0f)}}, AdamConfig{});
        FAIL("expected shape mismatch");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::shape_mismatch);
    }
    CHECK_THROWS_AS(store.adam_step({{"v", Tensor::scalar(1.0f)}}, AdamConfig{}), Error);
    CHECK(store.step() == 0);
    CHECK_THROWS_AS(store.add("w", Tensor::scalar(0.0f)), Error);
}

TEST_CASE("init_parameters: determinism and Glorot bound") {
    const std::map<std::string, Shape> spec = {{"a", {100, 100}}, {"b", {3, 7}}};
    const ParameterStore s1 = init_parameters(spec, 0);
    const ParameterStore s2 = init_parameters(spec, 0);
    const ParameterStore s3 = init_parameters(spec, 1);
    CHECK(s1.get("a") == s2.get("a"));
    CHECK(s1.get("b") == s2.get("b"));
    CHECK_FALSE(s1.get("a") == s3.get("a"));
    const float bound = static_cast<float>(std::sqrt(6.0 / 200.0));
    for (float v : s1.get("a").data()) CHECK(std::abs(v) <= bound);
}
