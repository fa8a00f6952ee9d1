#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "poem/error.hpp"
#include "poem/network.hpp"
#include "poem/rng.hpp"
#include "support/op_cases.hpp"

using namespace poem;
using namespace poem::net;
using poem::tensor::Tensor;
using poem::testing::random_tensor;
using world::ModuleKind;

namespace {

// Double-precision matrices for the reference computations.
using Mat = std::vector<std::vector<double>>;

Mat mat(const Tensor& t) {
    Mat m(static_cast<std::size_t>(t.dim(0)), std::vector<double>(static_cast<std::size_t>(t.dim(1))));
    for (int i = 0; i < t.dim(0); ++i) {
        for (int j = 0; j < t.dim(1); ++j) m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = t.at(i, j);
    }
    return m;
}

Mat mm(const Mat& a, const Mat& b) {
    Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t k = 0; k < b.size(); ++k) {
            for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
        }
    }
    return out;
}

Mat plus_row(Mat a, const Mat& row) {
    for (auto& r : a) {
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += row[0][j];
    }
    return a;
}

std::vector<double> softmax(std::vector<double> v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double z = 0.0;
    for (double& x : v) z += (x = std::exp(x - mx));
    for (double& x : v) x /= z;
    return v;
}

void check_row(const Tensor& got, const std::vector<double>& want, double eps) {
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(eps));
}

double sum_of(const Tensor& t) { return std::accumulate(t.values().begin(), t.values().end(), 0.0); }

// Parameter store with every network weight at small dimensions.
t::ParameterStore small_params(Rng& rng, int vocab, int E, int H, int R, int D, int S, int Ha, int A, int mem_dim) {
    t::ParameterStore ps;
    auto add = [&](const std::string& name, t::Shape shape) { ps.add(name, random_tensor(rng, shape)); };
    add("emb/W", {vocab, E});
    add("qenc/W", {E, E});
    add("qenc/b", {1, E});
    add("find/Ws", {S, H});
    add("find/bs", {1, H});
    add("find/Wq", {E, H});
    add("find/bq", {1, H});
    add("find/wa", {H, 1});
    add("find/ba", {1, 1});
    add("relate/U", {D, R});
    add("relate/Wq", {E, 2 * R});
    add("relate/bq", {1, 2 * R});
    add("relate/w", {2 * R, 1});
    add("relate/b", {1, 1});
    add("mem/WQ", {E, H});
    add("mem/bQ", {1, H});
    add("mem/Wq", {E, H});
    add("mem/bq", {1, H});
    add("mem/w", {H, 1});
    add("mem/b", {1, 1});
    add("ans/W1", {D + mem_dim, Ha});
    add("ans/b1", {1, Ha});
    add("ans/W2", {E, Ha});
    add("ans/b2", {1, Ha});
    add("ans/W3", {Ha, A});
    add("ans/b3", {1, A});
    return ps;
}

struct Fixture {
    Rng rng{77};
    t::ParameterStore ps = small_params(rng, 6, 3, 4, 2, 5, 4, 5, 3, 4);
    t::Graph g;
    ParamVars p = param_inputs(g, ps);
    t::Bindings b = ps.bindings();

    Mat P(const std::string& name) const { return mat(ps.get(name)); }
    const Tensor& eval(t::Var v) { return g.evaluate(v, b); }
};

std::vector<double> find_oracle(const Fixture& f, const Tensor& S, const Tensor& q) {
    const Mat ps = plus_row(mm(mat(S), f.P("find/Ws")), f.P("find/bs"));
    const Mat pq = plus_row(mm(mat(q), f.P("find/Wq")), f.P("find/bq"));
    const Mat wa = f.P("find/wa");
    std::vector<double> logits;
    for (const auto& row : ps) {
        double z = f.ps.get("find/ba")[0];
        for (std::size_t h = 0; h < row.size(); ++h) z += row[h] * pq[0][h] * wa[h][0];
        logits.push_back(z);
    }
    return softmax(logits);
}

std::vector<double> renorm(std::vector<double> v) {
    const double z = std::accumulate(v.begin(), v.end(), 0.0);
    for (double& x : v) x /= z;
    return v;
}

Tensor one_hot(int n, int i) {
    Tensor t({1, n});
    t[static_cast<std::size_t>(i)] = 1.0f;
    return t;
}

// A tiny world with a K=4 random bank for end-to-end checks.
struct Tiny {
    world::Dataset ds;
    protos::PrototypeBank bank;

    explicit Tiny(int train_scenes = 30, int dim = 12) {
        world::WorldConfig wc;
        wc.train_scenes = train_scenes;
        wc.val_scenes = 10;
        wc.feature_dim = dim;
        ds = world::generate_dataset(wc, 3);
        Rng rng(5);
        bank.P = random_tensor(rng, {4, dim});
        t::Graph g;
        bank.P = g.evaluate(t::l2_normalize(g.constant(bank.P), 1), t::Bindings{});
        bank.origin = "factorized";
    }

    Network network(Variant v, std::uint64_t seed = 1) const {
        NetConfig cfg;
        cfg.variant = v;
        cfg.embed_dim = 4;
        cfg.hidden_dim = 4;
        cfg.relate_dim = 3;
        cfg.answer_hidden = 5;
        cfg.num_prototypes = 4;
        return make_network(cfg, ds, &bank, seed);
    }
};

const world::Program kFindRelateDescribe = {
    {ModuleKind::find, {"red"}}, {ModuleKind::relate, {"left-of"}}, {ModuleKind::describe, {"shape"}}};
const std::vector<std::string> kQuestion = {"what", "shape", "is", "left-of", "the", "red", "thing"};

// Nudges every parameter away from its initial value so zero biases and the
// like do not hide gradient paths.
void jitter(Network& net, std::uint64_t seed) {
    Rng rng(seed);
    for (const auto& name : net.params.names()) {
        for (float& v : net.params.get(name).data()) v += static_cast<float>(rng.uniform(-0.3, 0.3));
    }
}

}  // namespace

TEST_CASE("variants and vocabularies") {
    for (Variant v : all_variants()) CHECK(parse_variant(variant_name(v)) == v);
    try {
        parse_variant("xnm");
        FAIL("expected error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::unknown_variant);
    }
    const Vocab vocab({"b", "a", "b"});
    CHECK(vocab.size() == 3);
    CHECK(vocab.token(0) == "<unk>");
    CHECK(vocab.lookup("b") == 1);
    CHECK(vocab.lookup("zebra") == 0);
    CHECK(module_token(ModuleKind::intersect) == "<And>");
}

TEST_CASE("encode_question: single token, symmetry, averaging oracle") {
    Fixture f;
    const Mat E = f.P("emb/W");
    const Mat W = f.P("qenc/W");
    const Mat bq = f.P("qenc/b");
    auto oracle = [&](std::vector<int> ids) {
        Mat m(1, std::vector<double>(E[0].size(), 0.0));
        for (int id : ids) {
            for (std::size_t j = 0; j < E[0].size(); ++j) m[0][j] += E[static_cast<std::size_t>(id)][j] / ids.size();
        }
        return plus_row(mm(m, W), bq)[0];
    };
    check_row(f.eval(encode_question(f.g, f.p, {2}, 6)), oracle({2}), 1e-6);
    check_row(f.eval(encode_question(f.g, f.p, {1, 4}, 6)), oracle({1, 4}), 1e-6);
    const Tensor a = f.eval(encode_question(f.g, f.p, {1, 3, 5}, 6));
    const Tensor b = f.eval(encode_question(f.g, f.p, {5, 1, 3}, 6));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-6));
    CHECK_THROWS_AS(encode_question(f.g, f.p, {}, 6), Error);
}

TEST_CASE("prototype_match: examples and bounds") {
    t::Graph g;
    const Tensor P = Tensor::matrix(2, 3, {1, 0, 0, 0, 1, 0});
    const Tensor V = Tensor::matrix(3, 3, {0, 0, 0, 2, 0, 0, 0.6f, 0.8f, 0});
    const Tensor& S = g.evaluate(prototype_match(g.constant(V), g.constant(P)), t::Bindings{});
    CHECK(S.at(0, 0) == 0.0f);
    CHECK(S.at(0, 1) == 0.0f);
    CHECK(S.at(1, 0) == doctest::Approx(std::tanh(1.0)).epsilon(1e-6));
    CHECK(S.at(1, 0) == doctest::Approx(0.7616).epsilon(1e-4));
    CHECK(S.at(2, 1) == doctest::Approx(std::tanh(0.8)).epsilon(1e-6));

    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor v = random_tensor(rng, {3, 5});
        Tensor v3 = v;
        for (float& x : v3.data()) x *= 3.0f;
        const Tensor p = random_tensor(rng, {4, 5});
        t::Graph h;
        const Tensor s1 = h.evaluate(prototype_match(h.constant(v), h.constant(p)), t::Bindings{});
        t::Graph h2;
        const Tensor s2 = h2.evaluate(prototype_match(h2.constant(v3), h2.constant(p)), t::Bindings{});
        for (std::size_t i = 0; i < s1.size(); ++i) {
            CHECK(std::abs(s1[i]) < 1.0f);
            CHECK(s1[i] == doctest::Approx(s2[i]).epsilon(1e-5));
        }
    }
}

TEST_CASE("module_find: symmetry, singleton, oracle") {
    Fixture f;
    const Tensor q = random_tensor(f.rng, {1, 3});
    Tensor same({3, 4});
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 4; ++j) same.at(i, j) = 0.1f * static_cast<float>(j + 1);
    }
    const Tensor u = f.eval(module_find(f.g, f.p, f.g.constant(same), f.g.constant(q), 3));
    for (float v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-6));

    const Tensor one = f.eval(module_find(f.g, f.p, f.g.constant(random_tensor(f.rng, {1, 4})), f.g.constant(q), 1));
    CHECK(one.shape() == t::Shape{1, 1});
    CHECK(one[0] == doctest::Approx(1.0));

    const Tensor S = random_tensor(f.rng, {3, 4});
    check_row(f.eval(module_find(f.g, f.p, f.g.constant(S), f.g.constant(q), 3)), find_oracle(f, S, q), 1e-5);
}

TEST_CASE("module_filter: uniform evidence, absorbing one-hot, oracle, fallback") {
    Fixture f;
    const Tensor q = random_tensor(f.rng, {1, 3});
    const Tensor alpha = Tensor::row({0.2f, 0.5f, 0.3f});
    Tensor same({3, 4}, 0.4f);
    check_row(f.eval(module_filter(f.g, f.p, f.g.constant(alpha), f.g.constant(same), f.g.constant(q), 3)),
              {0.2, 0.5, 0.3}, 1e-6);

    const Tensor S = random_tensor(f.rng, {3, 4});
    check_row(f.eval(module_filter(f.g, f.p, f.g.constant(one_hot(3, 1)), f.g.constant(S), f.g.constant(q), 3)),
              {0.0, 1.0, 0.0}, 1e-6);

    const auto e = find_oracle(f, S, q);
    check_row(f.eval(module_filter(f.g, f.p, f.g.constant(alpha), f.g.constant(S), f.g.constant(q), 3)),
              renorm({0.2 * e[0], 0.5 * e[1], 0.3 * e[2]}), 1e-5);

    // Evidence concentrated on object 0 with the others underflowing to 0,
    // while the incoming map sits on object 2: the product has no mass.
    Fixture h;
    for (float& v : h.ps.get("find/Ws").data()) v = 0.0f;
    for (float& v : h.ps.get("find/bs").data()) v = 0.0f;
    for (float& v : h.ps.get("find/Wq").data()) v = 0.0f;
    for (float& v : h.ps.get("find/bq").data()) v = 1.0f;
    h.ps.get("find/Ws").at(0, 0) = 1.0f;
    for (float& v : h.ps.get("find/wa").data()) v = 500.0f;
    const Tensor spike = Tensor::matrix(3, 4, {1, 0, 0, 0, -1, 0, 0, 0, -1, 0, 0, 0});
    const Tensor& fb = h.eval(module_filter(h.g, h.p, h.g.constant(one_hot(3, 2)), h.g.constant(spike), h.g.constant(q), 3));
    check_row(fb, {0.0, 0.0, 1.0}, 1e-6);
}

TEST_CASE("module_relate: constant scores, single source, matrix oracle") {
    Fixture f;
    const Tensor q = random_tensor(f.rng, {1, 3});
    const Tensor V = random_tensor(f.rng, {3, 5});
    const Tensor alpha = Tensor::row({0.6f, 0.1f, 0.3f});

    // Explicit R[i,j] = w . (concat(U^T V_i, U^T V_j) * (q Wq + bq)) + b.
    auto R = [&](const Fixture& fx) {
        const Mat A = mm(mat(V), fx.P("relate/U"));
        const Mat gate = plus_row(mm(mat(q), fx.P("relate/Wq")), fx.P("relate/bq"));
        const Mat w = fx.P("relate/w");
        const std::size_t r = A[0].size();
        Mat out(3, std::vector<double>(3, fx.ps.get("relate/b")[0]));
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 3; ++j) {
                for (std::size_t c = 0; c < r; ++c) {
                    out[i][j] += A[i][c] * gate[0][c] * w[c][0] + A[j][c] * gate[0][r + c] * w[r + c][0];
                }
            }
        }
        return out;
    };
    const Mat r = R(f);
    std::vector<double> scores(3, 0.0);
    for (std::size_t j = 0; j < 3; ++j) {
        for (std::size_t i = 0; i < 3; ++i) scores[j] += alpha[i] * r[i][j];
    }
    check_row(f.eval(module_relate(f.g, f.p, f.g.constant(alpha), f.g.constant(V), f.g.constant(q), 3)), softmax(scores),
              1e-5);
    check_row(f.eval(module_relate(f.g, f.p, f.g.constant(one_hot(3, 2)), f.g.constant(V), f.g.constant(q), 3)),
              softmax(r[2]), 1e-5);

    Fixture c;
    for (float& v : c.ps.get("relate/w").data()) v = 0.0f;
    c.ps.get("relate/b")[0] = 2.5f;
    const Tensor& u = c.eval(module_relate(c.g, c.p, c.g.constant(alpha), c.g.constant(V), c.g.constant(q), 3));
    for (float v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("module_and: idempotence, disjoint fallback, oracle") {
    t::Graph g;
    const Tensor a = Tensor::row({0.1f, 0.6f, 0.3f});
    const Tensor b = Tensor::row({0.4f, 0.2f, 0.4f});
    check_row(g.evaluate(module_and(g, g.constant(a), g.constant(a), 3), t::Bindings{}), {0.1, 0.6, 0.3}, 1e-6);
    check_row(g.evaluate(module_and(g, g.constant(one_hot(3, 0)), g.constant(one_hot(3, 2)), 3), t::Bindings{}),
              {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-6);
    check_row(g.evaluate(module_and(g, g.constant(a), g.constant(b), 3), t::Bindings{}), renorm({0.1, 0.2, 0.3}), 1e-6);
}

TEST_CASE("describe_attend and step_summary: one-hot, uniform, oracle") {
    Rng rng(9);
    t::Graph g;
    const Tensor V = random_tensor(rng, {3, 4});
    const Tensor S = random_tensor(rng, {3, 5}, -0.9, 0.9);
    for (auto fn : {&describe_attend, &step_summary}) {
        const Tensor& M = fn == &describe_attend ? V : S;
        const int w = M.dim(1);
        const Tensor oh = g.evaluate(fn(g.constant(one_hot(3, 1)), g.constant(M)), t::Bindings{});
        for (int j = 0; j < w; ++j) CHECK(oh[static_cast<std::size_t>(j)] == M.at(1, j));
        const Tensor un = g.evaluate(fn(g.constant(Tensor({1, 3}, 1.0f / 3.0f)), g.constant(M)), t::Bindings{});
        const Tensor alpha = Tensor::row({0.5f, 0.2f, 0.3f});
        const Tensor ws = g.evaluate(fn(g.constant(alpha), g.constant(M)), t::Bindings{});
        for (int j = 0; j < w; ++j) {
            const double mean = (static_cast<double>(M.at(0, j)) + M.at(1, j) + M.at(2, j)) / 3.0;
            CHECK(un[static_cast<std::size_t>(j)] == doctest::Approx(mean).epsilon(1e-6));
            const double want = 0.5 * M.at(0, j) + 0.2 * M.at(1, j) + 0.3 * M.at(2, j);
            CHECK(ws[static_cast<std::size_t>(j)] == doctest::Approx(want).epsilon(1e-6));
        }
    }
    const Tensor same = Tensor::matrix(2, 2, {0.3f, -0.4f, 0.3f, -0.4f});
    const Tensor p = g.evaluate(step_summary(g.constant(Tensor({1, 2}, 0.5f)), g.constant(same)), t::Bindings{});
    CHECK(p[0] == doctest::Approx(0.3f));
    CHECK(p[1] == doctest::Approx(-0.4f));
}

TEST_CASE("semantic_memory: single step, equal scores, oracle") {
    Fixture f;
    const Tensor Q = random_tensor(f.rng, {1, 3});
    const Tensor q1 = random_tensor(f.rng, {1, 3});
    const Tensor q2 = random_tensor(f.rng, {1, 3});
    const Tensor p1 = random_tensor(f.rng, {1, 4}, -0.9, 0.9);
    const Tensor p2 = random_tensor(f.rng, {1, 4}, -0.9, 0.9);
    const Tensor p3 = random_tensor(f.rng, {1, 4}, -0.9, 0.9);

    MemoryGraph one = semantic_memory(f.p, f.g.constant(Q), {f.g.constant(q1)}, {f.g.constant(p1)});
    CHECK(f.eval(one.weights)[0] == 1.0f);
    CHECK(f.eval(one.memory) == p1);

    MemoryGraph eq = semantic_memory(f.p, f.g.constant(Q), {f.g.constant(q1), f.g.constant(q1), f.g.constant(q1)},
                                     {f.g.constant(p1), f.g.constant(p2), f.g.constant(p3)});
    for (float w : f.eval(eq.weights).data()) CHECK(w == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
    const Tensor m = f.eval(eq.memory);
    for (std::size_t k = 0; k < 4; ++k) CHECK(m[k] == doctest::Approx((p1[k] + p2[k] + p3[k]) / 3.0).epsilon(1e-5));

    MemoryGraph two = semantic_memory(f.p, f.g.constant(Q), {f.g.constant(q1), f.g.constant(q2)},
                                      {f.g.constant(p1), f.g.constant(p2)});
    const Mat pQ = plus_row(mm(mat(Q), f.P("mem/WQ")), f.P("mem/bQ"));
    std::vector<double> scores;
    for (const Tensor* q : {&q1, &q2}) {
        const Mat pq = plus_row(mm(mat(*q), f.P("mem/Wq")), f.P("mem/bq"));
        double s = f.ps.get("mem/b")[0];
        for (std::size_t h = 0; h < pq[0].size(); ++h) s += pQ[0][h] * pq[0][h] * f.ps.get("mem/w")[h];
        scores.push_back(s);
    }
    const auto w = softmax(scores);
    check_row(f.eval(two.weights), w, 1e-5);
    std::vector<double> want(4);
    for (std::size_t k = 0; k < 4; ++k) want[k] = w[0] * p1[k] + w[1] * p2[k];
    check_row(f.eval(two.memory), want, 1e-5);

    CHECK_THROWS_AS(semantic_memory(f.p, f.g.constant(Q), {}, {}), Error);
}

TEST_CASE("predict_answer: distribution, determinism, oracle") {
    Fixture f;
    const Tensor Vp = random_tensor(f.rng, {1, 5});
    const Tensor mem = random_tensor(f.rng, {1, 4}, -0.9, 0.9);
    const Tensor Q = random_tensor(f.rng, {1, 3});
    const Tensor y1 = f.eval(predict_answer(f.p, f.g.constant(Vp), f.g.constant(mem), f.g.constant(Q)));
    const Tensor y2 = f.eval(predict_answer(f.p, f.g.constant(Vp), f.g.constant(mem), f.g.constant(Q)));
    CHECK(sum_of(y1) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(y1 == y2);

    Mat in(1);
    for (float v : Vp.data()) in[0].push_back(v);
    for (float v : mem.data()) in[0].push_back(v);
    const Mat a = plus_row(mm(in, f.P("ans/W1")), f.P("ans/b1"));
    const Mat c = plus_row(mm(mat(Q), f.P("ans/W2")), f.P("ans/b2"));
    Mat h(1, std::vector<double>(a[0].size()));
    for (std::size_t j = 0; j < h[0].size(); ++j) h[0][j] = std::max(0.0, a[0][j] * c[0][j]);
    check_row(y1, softmax(plus_row(mm(h, f.P("ans/W3")), f.P("ans/b3"))[0]), 1e-5);
}

TEST_CASE("run_program: structure, stack errors, And fallback") {
    Tiny tiny;
    Network net = tiny.network(Variant::full);
    Rng rng(2);
    const Tensor V = random_tensor(rng, {3, 12});

    const ReasoningTrace tr = run_program(net, {{ModuleKind::find, {"red"}}, {ModuleKind::describe, {"shape"}}},
                                          {"what", "shape", "is", "the", "red", "thing"}, V);
    REQUIRE(tr.steps.size() == 2);
    CHECK(tr.steps[0].module == "Find");
    CHECK(tr.steps[0].stack_depth == 1);
    CHECK(tr.steps[1].stack_depth == 0);
    REQUIRE(tr.memory_weights);
    CHECK(tr.memory_weights->size() == 2);
    CHECK(sum_of(tr.distribution) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(net.answers.contains(tr.predicted));

    try {
        run_program(net, {{ModuleKind::intersect, {}}, {ModuleKind::describe, {"shape"}}}, {"x"}, V);
        FAIL("expected underflow");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::stack_underflow);
    }
    try {
        run_program(net, {{ModuleKind::describe, {"shape"}}, {ModuleKind::find, {"red"}}}, {"x"}, V);
        FAIL("expected malformed program");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::invalid_argument);
    }
    CHECK_THROWS_AS(run_program(net, {{ModuleKind::find, {"red"}}, {ModuleKind::describe, {"shape"}}}, {}, V), Error);
    CHECK_THROWS_AS(run_program(net, {{ModuleKind::find, {"red"}}, {ModuleKind::describe, {"shape"}}}, {"x"},
                                random_tensor(rng, {3, 7})),
                    Error);

    // Sharp Find maps: "red" hits only the object aligned with prototype 0,
    // "blue" only the one aligned with prototype 1, so And has no overlap.
    Network sharp = tiny.network(Variant::full);
    Tensor& Ws = sharp.params.get("find/Ws");
    for (float& v : Ws.data()) v = 0.0f;
    for (float& v : sharp.params.get("find/Wq").data()) v = 0.0f;
    for (float& v : sharp.params.get("emb/W").data()) v = 0.0f;
    const int red = sharp.words.lookup("red");
    const int blue = sharp.words.lookup("blue");
    REQUIRE(red != 0);
    REQUIRE(blue != 0);
    sharp.params.get("emb/W").at(red, 0) = 1.0f;
    sharp.params.get("emb/W").at(blue, 1) = 1.0f;
    Tensor& Wq = sharp.params.get("find/Wq");
    Wq.at(0, 0) = 1.0f;
    Wq.at(1, 1) = 1.0f;
    Ws.at(0, 0) = 1.0f;
    Ws.at(1, 1) = 1.0f;
    for (float& v : sharp.params.get("find/wa").data()) v = 400.0f;
    Tensor aligned({3, 12});
    for (int j = 0; j < 12; ++j) {
        aligned.at(0, j) = tiny.bank.P.at(0, j);
        aligned.at(1, j) = tiny.bank.P.at(1, j);
        aligned.at(2, j) = -tiny.bank.P.at(0, j) - tiny.bank.P.at(1, j);
    }
    const ReasoningTrace both = run_program(
        sharp, {{ModuleKind::find, {"red"}}, {ModuleKind::find, {"blue"}}, {ModuleKind::intersect, {}}, {ModuleKind::describe, {"color"}}},
        {"what", "color", "is", "the", "red", "blue", "thing"}, aligned);
    REQUIRE(both.steps.size() == 4);
    CHECK(both.steps[0].attention[0] > 0.999f);
    CHECK(both.steps[1].attention[1] > 0.999f);
    check_row(both.steps[2].attention, {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-5);
}

TEST_CASE("run_program: invariants on random inputs for every variant") {
    Tiny tiny;
    Rng rng(12);
    const world::Program and_prog = {{ModuleKind::find, {"red"}},
                                     {ModuleKind::filter, {"cup"}},
                                     {ModuleKind::find, {"large"}},
                                     {ModuleKind::intersect, {}},
                                     {ModuleKind::relate, {"above"}},
                                     {ModuleKind::describe, {"color"}}};
    for (Variant v : all_variants()) {
        Network net = tiny.network(v, 4);
        jitter(net, 5);
        for (int trial = 0; trial < 20; ++trial) {
            const int n = testing::random_extent(rng, 1, 6);
            const Tensor V = random_tensor(rng, {n, 12});
            const ReasoningTrace tr = run_program(net, and_prog, {"what", "color", "cup", "zzz"}, V);
            for (const auto& st : tr.steps) {
                CHECK(sum_of(st.attention) == doctest::Approx(1.0).epsilon(1e-5));
                for (float a : st.attention.data()) CHECK(a >= 0.0f);
                if (st.summary) {
                    for (float s : st.summary->data()) CHECK(std::abs(s) < 1.0f);
                }
            }
            if (tr.memory_weights) CHECK(sum_of(*tr.memory_weights) == doctest::Approx(1.0).epsilon(1e-5));
            CHECK(sum_of(tr.distribution) == doctest::Approx(1.0).epsilon(1e-5));
        }
    }
}

TEST_CASE("run_program: permutation equivariance and scale invariance") {
    Tiny tiny;
    Rng rng(13);
    for (Variant v : all_variants()) {
        Network net = tiny.network(v, 6);
        jitter(net, 7);
        for (int trial = 0; trial < 10; ++trial) {
            const int n = testing::random_extent(rng, 2, 6);
            const Tensor V = random_tensor(rng, {n, 12});
            std::vector<int> perm(static_cast<std::size_t>(n));
            std::iota(perm.begin(), perm.end(), 0);
            rng.shuffle(perm);
            Tensor Vp({n, 12}), Vs = V;
            for (int i = 0; i < n; ++i) {
                const float c = static_cast<float>(rng.uniform(0.2, 5.0));
                for (int j = 0; j < 12; ++j) {
                    Vp.at(i, j) = V.at(perm[static_cast<std::size_t>(i)], j);
                    Vs.at(i, j) *= c;
                }
            }
            const ReasoningTrace a = run_program(net, kFindRelateDescribe, kQuestion, V);
            const ReasoningTrace b = run_program(net, kFindRelateDescribe, kQuestion, Vp);
            const ReasoningTrace s = run_program(net, kFindRelateDescribe, kQuestion, Vs);
            for (std::size_t k = 0; k < a.distribution.size(); ++k) {
                CHECK(b.distribution[k] == doctest::Approx(a.distribution[k]).epsilon(1e-5));
                CHECK(s.distribution[k] == doctest::Approx(a.distribution[k]).epsilon(1e-5));
            }
            for (std::size_t t = 0; t < a.steps.size(); ++t) {
                for (int i = 0; i < n; ++i) {
                    CHECK(b.steps[t].attention[static_cast<std::size_t>(i)] ==
                          doctest::Approx(a.steps[t].attention[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]).epsilon(1e-5));
                }
            }
        }
    }
}

TEST_CASE("permute_prototypes: joint permutation leaves predictions unchanged") {
    Tiny tiny;
    Rng rng(14);
    for (Variant v : all_variants()) {
        if (v == Variant::xnm_baseline) continue;
        Network net = tiny.network(v, 8);
        jitter(net, 9);
        Network moved = net;
        std::vector<int> perm = {2, 0, 3, 1};
        permute_prototypes(moved, perm);
        const Tensor before = net.bank_rows();
        const Tensor after = moved.bank_rows();
        for (int k = 0; k < 4; ++k) {
            for (int j = 0; j < 12; ++j) CHECK(after.at(k, j) == before.at(perm[static_cast<std::size_t>(k)], j));
        }
        for (int trial = 0; trial < 5; ++trial) {
            const Tensor V = random_tensor(rng, {4, 12});
            const ReasoningTrace a = run_program(net, kFindRelateDescribe, kQuestion, V);
            const ReasoningTrace b = run_program(moved, kFindRelateDescribe, kQuestion, V);
            for (std::size_t k = 0; k < a.distribution.size(); ++k) {
                CHECK(b.distribution[k] == doctest::Approx(a.distribution[k]).epsilon(1e-5));
            }
        }
    }
    Network net = tiny.network(Variant::full);
    CHECK_THROWS_AS(permute_prototypes(net, {0, 1, 2}), Error);
    CHECK_THROWS_AS(permute_prototypes(net, {0, 1, 1, 2}), Error);
}

TEST_CASE("variants: structural differences") {
    Tiny tiny;
    Rng rng(15);
    const Tensor V = random_tensor(rng, {3, 12});

    Network nomem = tiny.network(Variant::no_mem);
    jitter(nomem, 3);
    const ReasoningTrace tr = run_program(nomem, kFindRelateDescribe, kQuestion, V);
    CHECK_FALSE(tr.memory_weights);
    // The zero memory vector gives the memory rows of the answer head no
    // gradient at all.
    {
        const SceneInputs scene = scene_inputs(nomem, V);
        t::Graph g;
        ParamVars p = param_inputs(g, nomem.params);
        ProgramGraph pg = build_program(g, nomem, p, kFindRelateDescribe, kQuestion, scene);
        REQUIRE(pg.memory);
        g.evaluate(pg.answer, nomem.params.bindings());
        CHECK(sum_of(g.value(*pg.memory)) == 0.0);
        const t::Var loss = t::sum(t::mul(pg.answer, g.constant(random_tensor(rng, g.value(pg.answer).shape()))));
        const auto grads = g.backward(loss, nomem.params.bindings());
        const Tensor& dW1 = grads.at("ans/W1");
        for (int r = 12; r < dW1.dim(0); ++r) {
            for (int c = 0; c < dW1.dim(1); ++c) CHECK(dW1.at(r, c) == 0.0f);
        }
    }

    Network full = tiny.network(Variant::full, 21);
    Network xnm = tiny.network(Variant::xnm_baseline, 21);
    CHECK_FALSE(xnm.uses_bank());
    CHECK(xnm.params.get("ans/W1").dim(0) == 12);
    CHECK(full.params.get("ans/W1").dim(0) == 16);
    const auto a = run_program(full, kFindRelateDescribe, kQuestion, V).distribution;
    const auto b = run_program(xnm, kFindRelateDescribe, kQuestion, V).distribution;
    CHECK_FALSE(a == b);

    Network ind = tiny.network(Variant::poem_ind);
    const ReasoningTrace it = run_program(ind, kFindRelateDescribe, kQuestion, V);
    REQUIRE(it.steps.size() == 4);
    CHECK(it.steps.back().module == "Prototype");
    CHECK(it.memory_weights->size() == 1);
    CHECK(ind.params.get("find/Ws").dim(0) == 12);

    Network scratch = tiny.network(Variant::scratch);
    CHECK(scratch.trainable_bank());
    CHECK(scratch.params.contains("bank/P"));
    CHECK(scratch.bank_origin == "scratch");

    NetConfig cfg;
    cfg.variant = Variant::full;
    try {
        make_network(cfg, tiny.ds, nullptr, 1);
        FAIL("expected missing bank");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::missing_input);
    }
    protos::PrototypeBank wide = tiny.bank;
    wide.P = Tensor({4, 5});
    CHECK_THROWS_AS(make_network(cfg, tiny.ds, &wide, 1), Error);
}

TEST_CASE("end-to-end gradient check for every variant (N=3, K=4, T=3)") {
    Tiny tiny;
    Rng rng(16);
    for (Variant v : all_variants()) {
        Network net = tiny.network(v, 10);
        jitter(net, 11);
        const Tensor V = random_tensor(rng, {3, 12});
        const SceneInputs scene = scene_inputs(net, V);
        t::Graph g;
        ParamVars p = param_inputs(g, net.params);
        ProgramGraph pg = build_program(g, net, p, kFindRelateDescribe, kQuestion, scene);
        Tensor target({1, net.answers.size()});
        target[1] = 1.0f;
        const t::Var loss = t::ce_loss(pg.answer, g.constant(target));
        const auto report = t::grad_check(g, loss, net.params.bindings());
        INFO(variant_name(v) << " max rel err " << report.max_rel_error);
        CHECK(report.passed);
    }
}

TEST_CASE("train_vqa: zero epochs, determinism, errors") {
    Tiny tiny;
    Network net = tiny.network(Variant::full);
    net.config.epochs = 0;
    const auto before = net.params.parameters();
    CHECK(train_vqa(net, tiny.ds, 1).empty());
    CHECK(net.params.parameters() == before);

    Network a = tiny.network(Variant::scratch);
    Network b = tiny.network(Variant::scratch);
    a.config.epochs = b.config.epochs = 2;
    const auto ha = train_vqa(a, tiny.ds, 3);
    const auto hb = train_vqa(b, tiny.ds, 3);
    REQUIRE(ha.size() == 2);
    for (std::size_t e = 0; e < 2; ++e) {
        CHECK(ha[e].train_loss == hb[e].train_loss);
        CHECK(ha[e].val_acc == hb[e].val_acc);
    }
    CHECK(a.params.parameters() == b.params.parameters());

    TrainOptions none;
    none.train_tag = "nothing";
    try {
        train_vqa(a, tiny.ds, 3, none);
        FAIL("expected empty split");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::empty_training_split);
    }
}

TEST_CASE("train_vqa: a 200-question toy set is fit above 90%") {
    world::WorldConfig wc;
    wc.train_scenes = 67;
    wc.val_scenes = 5;
    world::Dataset ds = world::generate_dataset(wc, 8);
    const world::Vocabulary vocab(wc);
    const world::Embedder emb(vocab, wc.feature_dim, wc.embedder_seed);
    const protos::PrototypeBank bank = protos::textual_bank(emb, vocab);
    NetConfig cfg;
    cfg.variant = Variant::textual;
    cfg.lr = 4e-3f;
    cfg.batch_size = 16;
    Network net = make_network(cfg, ds, &bank, 2);
    TrainOptions opt;
    opt.max_train = 200;
    opt.val_tag.clear();
    const auto hist = train_vqa(net, ds, 2, opt);
    REQUIRE(hist.size() == 50);
    INFO("final train acc " << hist.back().train_acc);
    CHECK(hist.back().train_acc > 0.9);
}
