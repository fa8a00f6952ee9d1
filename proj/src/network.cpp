#include "poem/network.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "poem/error.hpp"
#include "poem/rng.hpp"

namespace poem::net {

using t::Bindings;
using t::Graph;
using t::Tensor;
using t::Var;
using world::ModuleKind;

namespace {

constexpr float kMassFloor = 1e-8f;

const char* const kBiasNames[] = {"qenc/b", "find/bs", "find/bq", "find/ba", "relate/bq", "relate/b",
                                  "mem/bQ", "mem/bq",  "mem/b",   "ans/b1",  "ans/b2",    "ans/b3"};

}  // namespace

std::string_view variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::scratch: return "scratch";
        case Variant::object: return "object";
        case Variant::textual: return "textual";
        case Variant::poem_ind: return "poem-ind";
        case Variant::no_mem: return "no-mem";
        case Variant::xnm_baseline: return "xnm-baseline";
    }
    return "?";
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v = {Variant::full,     Variant::scratch, Variant::object,      Variant::textual,
                                           Variant::poem_ind, Variant::no_mem,  Variant::xnm_baseline};
    return v;
}

Variant parse_variant(std::string_view name) {
    for (Variant v : all_variants()) {
        if (variant_name(v) == name) return v;
    }
    fail(ErrorCode::unknown_variant, "unknown variant '" + std::string(name) + "'");
}

Vocab::Vocab(const std::vector<std::string>& tokens) : Vocab() {
    for (const auto& tok : tokens) {
        if (index_.count(tok)) continue;
        index_.emplace(tok, static_cast<int>(tokens_.size()));
        tokens_.push_back(tok);
    }
}

int Vocab::lookup(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? 0 : it->second;
}

std::string module_token(ModuleKind kind) { return "<" + std::string(world::module_name(kind)) + ">"; }

bool Network::uses_bank() const { return config.variant != Variant::xnm_baseline; }

bool Network::trainable_bank() const {
    return uses_bank() && (config.variant == Variant::scratch || config.finetune_prototypes);
}

bool Network::uses_memory() const { return config.variant != Variant::no_mem && config.variant != Variant::xnm_baseline; }

int Network::find_input_dim() const {
    const bool raw = config.variant == Variant::poem_ind || config.variant == Variant::xnm_baseline;
    return raw ? feature_dim : num_prototypes;
}

Tensor Network::bank_rows() const {
    if (!uses_bank()) fail(ErrorCode::invalid_argument, "variant has no prototype bank");
    if (!trainable_bank()) return *bank;
    Graph g;
    return g.evaluate(t::l2_normalize(g.constant(params.get("bank/P")), 1), Bindings{});
}

Network make_network(const NetConfig& config, const world::Dataset& dataset, const protos::PrototypeBank* bank,
                     std::uint64_t seed) {
    Network net;
    net.config = config;
    if (config.epochs < 0 || config.batch_size < 1 || config.embed_dim < 1 || config.hidden_dim < 1 ||
        config.relate_dim < 1 || config.answer_hidden < 1) {
        fail(ErrorCode::invalid_config, "network dimensions, batch size and epochs must be positive");
    }
    std::set<std::string> words;
    std::set<std::string> answers;
    for (const auto& qa : dataset.instances) {
        if (!qa.has_tag("train")) continue;
        words.insert(qa.question_tokens.begin(), qa.question_tokens.end());
        for (const auto& step : qa.program) words.insert(step.args.begin(), step.args.end());
        answers.insert(qa.answer);
    }
    if (answers.empty()) fail(ErrorCode::empty_training_split, "no training instances to build vocabularies from");
    for (ModuleKind k : {ModuleKind::find, ModuleKind::filter, ModuleKind::relate, ModuleKind::intersect,
                         ModuleKind::describe}) {
        words.insert(module_token(k));
    }
    net.words = Vocab({words.begin(), words.end()});
    net.answers = Vocab({answers.begin(), answers.end()});
    net.feature_dim = dataset.config.feature_dim;

    Rng rng(derive_seed(seed, 11));
    std::optional<Tensor> initial_bank;
    if (config.variant == Variant::scratch) {
        if (config.num_prototypes < 1) fail(ErrorCode::invalid_config, "num_prototypes must be positive");
        Tensor P({config.num_prototypes, net.feature_dim});
        for (int r = 0; r < P.dim(0); ++r) {
            double ss = 0.0;
            for (int j = 0; j < P.dim(1); ++j) {
                P.at(r, j) = static_cast<float>(rng.normal());
                ss += static_cast<double>(P.at(r, j)) * P.at(r, j);
            }
            for (int j = 0; j < P.dim(1); ++j) P.at(r, j) = static_cast<float>(P.at(r, j) / std::sqrt(ss));
        }
        initial_bank = std::move(P);
        net.bank_origin = "scratch";
    } else if (net.uses_bank()) {
        if (!bank) fail(ErrorCode::missing_input, std::string(variant_name(config.variant)) + " variant needs a prototype bank");
        if (bank->dim() != net.feature_dim) {
            fail(ErrorCode::shape_mismatch, "bank width " + std::to_string(bank->dim()) + " does not match features " +
                                                std::to_string(net.feature_dim));
        }
        initial_bank = bank->P;
        net.bank_origin = bank->origin;
    }
    net.num_prototypes = initial_bank ? initial_bank->dim(0) : 0;

    const int E = config.embed_dim, H = config.hidden_dim, R = config.relate_dim, Ha = config.answer_hidden;
    const int D = net.feature_dim;
    const int answer_in = net.config.variant == Variant::xnm_baseline ? D : D + net.num_prototypes;
    const std::map<std::string, t::Shape> spec = {
        {"emb/W", {net.words.size(), E}},
        {"qenc/W", {E, E}},
        {"qenc/b", {1, E}},
        {"find/Ws", {net.find_input_dim(), H}},
        {"find/bs", {1, H}},
        {"find/Wq", {E, H}},
        {"find/bq", {1, H}},
        {"find/wa", {H, 1}},
        {"find/ba", {1, 1}},
        {"relate/U", {D, R}},
        {"relate/Wq", {E, 2 * R}},
        {"relate/bq", {1, 2 * R}},
        {"relate/w", {2 * R, 1}},
        {"relate/b", {1, 1}},
        {"mem/WQ", {E, H}},
        {"mem/bQ", {1, H}},
        {"mem/Wq", {E, H}},
        {"mem/bq", {1, H}},
        {"mem/w", {H, 1}},
        {"mem/b", {1, 1}},
        {"ans/W1", {answer_in, Ha}},
        {"ans/b1", {1, Ha}},
        {"ans/W2", {E, Ha}},
        {"ans/b2", {1, Ha}},
        {"ans/W3", {Ha, net.answers.size()}},
        {"ans/b3", {1, net.answers.size()}},
    };
    net.params = t::init_parameters(spec, derive_seed(seed, 12));
    for (const char* name : kBiasNames) {
        for (float& v : net.params.get(name).data()) v = 0.0f;
    }
    if (net.trainable_bank()) {
        net.params.add("bank/P", *initial_bank);
    } else if (initial_bank) {
        net.bank = std::move(initial_bank);
    }
    return net;
}

// ---------------------------------------------------------------- building blocks

Var ParamVars::operator[](const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) fail(ErrorCode::invalid_argument, "no parameter '" + name + "' in graph");
    return it->second;
}

ParamVars param_inputs(Graph& g, const t::ParameterStore& params) {
    ParamVars p;
    for (const auto& name : params.names()) p.vars.emplace(name, g.input(name));
    return p;
}

Var mean_embedding(Graph& g, Var table, const std::vector<int>& ids, int vocab_size) {
    if (ids.empty()) fail(ErrorCode::invalid_argument, "mean embedding of zero tokens");
    Tensor counts({1, vocab_size});
    const float w = 1.0f / static_cast<float>(ids.size());
    for (int id : ids) counts[static_cast<std::size_t>(id)] += w;
    return t::matmul(g.constant(std::move(counts)), table);
}

Var encode_question(Graph& g, const ParamVars& p, const std::vector<int>& ids, int vocab_size) {
    if (ids.empty()) fail(ErrorCode::invalid_argument, "empty question");
    return t::add(t::matmul(mean_embedding(g, p["emb/W"], ids, vocab_size), p["qenc/W"]), p["qenc/b"]);
}

Var prototype_match(Var V, Var P) {
    return t::tanh(t::matmul(t::l2_normalize(V, 1), t::transpose(t::l2_normalize(P, 1))));
}

Var module_find(Graph&, const ParamVars& p, Var S, Var q, int n) {
    Var proj_s = t::add(t::matmul(S, p["find/Ws"]), t::broadcast(p["find/bs"], n));
    Var proj_q = t::add(t::matmul(q, p["find/Wq"]), p["find/bq"]);
    Var fused = t::mul(proj_s, t::broadcast(proj_q, n));
    Var logits = t::add(t::matmul(fused, p["find/wa"]), t::broadcast(p["find/ba"], n));
    return t::softmax(t::transpose(logits), 1);
}

Var module_filter(Graph& g, const ParamVars& p, Var alpha_in, Var S, Var q, int n) {
    Var evidence = module_find(g, p, S, q, n);
    return t::renormalize(t::mul(alpha_in, evidence), alpha_in, kMassFloor);
}


Var module_relate(Graph& g, const ParamVars& p, Var alpha_in, Var V, Var q, int n) {
    Var A = t::matmul(V, p["relate/U"]);
    Var none = t::scale(A, 0.0f);
    Var gate = t::broadcast(t::add(t::matmul(q, p["relate/Wq"]), p["relate/bq"]), n);
    // R[i,j] = w . (concat(A_i, A_j) * gate) + b splits into a source term
    // a_i and a target term c_j.
    Var a = t::matmul(t::mul(t::concat({A, none}, 1), gate), p["relate/w"]);
    Var c = t::matmul(t::mul(t::concat({none, A}, 1), gate), p["relate/w"]);
    Var ones_row = g.constant(Tensor({1, n}, 1.0f));
    Var ones_col = g.constant(Tensor({n, 1}, 1.0f));
    Var R = t::add(t::matmul(t::add(a, t::broadcast(p["relate/b"], n)), ones_row), t::matmul(ones_col, t::transpose(c)));
    return t::softmax(t::matmul(alpha_in, R), 1);
}

Var module_and(Graph& g, Var a, Var b, int n) {
    Var uniform = g.constant(Tensor({1, n}, 1.0f / static_cast<float>(n)));
    return t::renormalize(t::minimum(a, b), uniform, kMassFloor);
}

Var describe_attend(Var alpha, Var V) { return t::matmul(alpha, V); }

Var step_summary(Var alpha, Var S) { return t::matmul(alpha, S); }

MemoryGraph semantic_memory(const ParamVars& p, Var Q, const std::vector<Var>& queries,
                            const std::vector<Var>& summaries) {
    if (queries.empty() || queries.size() != summaries.size()) {
        fail(ErrorCode::invalid_argument, "semantic memory needs one query per summary and at least one step");
    }
    const int T = static_cast<int>(queries.size());
    Var qs = T == 1 ? queries[0] : t::concat(queries, 0);
    Var ps = T == 1 ? summaries[0] : t::concat(summaries, 0);
    Var proj_Q = t::add(t::matmul(Q, p["mem/WQ"]), p["mem/bQ"]);
    Var proj_q = t::add(t::matmul(qs, p["mem/Wq"]), t::broadcast(p["mem/bq"], T));
    Var scores = t::add(t::matmul(t::mul(proj_q, t::broadcast(proj_Q, T)), p["mem/w"]), t::broadcast(p["mem/b"], T));
    MemoryGraph out;
    out.weights = t::softmax(t::transpose(scores), 1);
    out.memory = t::matmul(out.weights, ps);
    return out;
}

Var predict_answer(const ParamVars& p, Var attended, std::optional<Var> memory, Var Q) {
    Var in = memory ? t::concat({attended, *memory}, 1) : attended;
    Var h = t::mul(t::add(t::matmul(in, p["ans/W1"]), p["ans/b1"]), t::add(t::matmul(Q, p["ans/W2"]), p["ans/b2"]));
    Var logits = t::add(t::matmul(t::relu(h), p["ans/W3"]), p["ans/b3"]);
    return t::softmax(logits, 1);
}

// ---------------------------------------------------------------- programs

namespace {

Tensor normalize_rows(const Tensor& V) {
    Tensor out = V;
    for (int i = 0; i < V.dim(0); ++i) {
        double ss = 0.0;
        for (int j = 0; j < V.dim(1); ++j) ss += static_cast<double>(V.at(i, j)) * V.at(i, j);
        const double norm = std::max(std::sqrt(ss), static_cast<double>(t::kNormGuard));
        for (int j = 0; j < V.dim(1); ++j) out.at(i, j) = static_cast<float>(V.at(i, j) / norm);
    }
    return out;
}

std::vector<int> token_ids(const Vocab& vocab, const std::vector<std::string>& tokens) {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& tok : tokens) ids.push_back(vocab.lookup(tok));
    return ids;
}

}  // namespace

SceneInputs scene_inputs(const Network& net, const Tensor& raw_features) {
    if (raw_features.rank() != 2 || raw_features.dim(1) != net.feature_dim) {
        fail(ErrorCode::shape_mismatch, "scene features " + t::shape_str(raw_features.shape()) + " do not have width " +
                                            std::to_string(net.feature_dim));
    }
    if (raw_features.dim(0) < 1) fail(ErrorCode::invalid_argument, "scene has no objects");
    SceneInputs in;
    in.features = normalize_rows(raw_features);
    if (net.uses_bank() && !net.trainable_bank()) {
        Graph g;
        in.similarity = g.evaluate(prototype_match(g.constant(in.features), g.constant(*net.bank)), Bindings{});
    }
    return in;
}

ProgramGraph build_program(Graph& g, const Network& net, const ParamVars& p, const world::Program& program,
                           const std::vector<std::string>& question_tokens, const SceneInputs& scene) {
    world::validate_program(program);
    if (question_tokens.empty()) fail(ErrorCode::invalid_argument, "empty question");
    const int n = scene.features.dim(0);
    const int vocab = net.words.size();
    const Variant variant = net.config.variant;

    Var Q = encode_question(g, p, token_ids(net.words, question_tokens), vocab);
    Var V = g.constant(scene.features);
    std::optional<Var> S;
    if (scene.similarity) {
        S = g.constant(*scene.similarity);
    } else if (net.trainable_bank()) {
        S = prototype_match(V, p["bank/P"]);
    }
    const bool raw_modules = variant == Variant::poem_ind || variant == Variant::xnm_baseline;
    if (!raw_modules && !S) fail(ErrorCode::missing_input, "variant needs prototype similarities");
    Var find_in = raw_modules ? V : *S;
    const bool step_memory = net.uses_memory() && variant != Variant::poem_ind;

    ProgramGraph out;
    std::vector<Var> stack;
    std::vector<Var> queries;
    std::vector<Var> summaries;
    auto pop = [&]() {
        if (stack.empty()) fail(ErrorCode::stack_underflow, "attention stack underflow");
        Var top = stack.back();
        stack.pop_back();
        return top;
    };
    for (const auto& step : program) {
        const std::vector<int> ids = step.args.empty() ? std::vector<int>{net.words.lookup(module_token(step.kind))}
                                                       : token_ids(net.words, step.args);
        Var q = mean_embedding(g, p["emb/W"], ids, vocab);
        Var alpha;
        switch (step.kind) {
            case ModuleKind::find:
                alpha = module_find(g, p, find_in, q, n);
                stack.push_back(alpha);
                break;
            case ModuleKind::filter:
                alpha = module_filter(g, p, pop(), find_in, q, n);
                stack.push_back(alpha);
                break;
            case ModuleKind::relate:
                alpha = module_relate(g, p, pop(), V, q, n);
                stack.push_back(alpha);
                break;
            case ModuleKind::intersect: {
                Var b = pop();
                Var a = pop();
                alpha = module_and(g, a, b, n);
                stack.push_back(alpha);
                break;
            }
            case ModuleKind::describe:
                alpha = pop();
                out.attended = describe_attend(alpha, V);
                break;
        }
        StepRecord rec{std::string(world::module_name(step.kind)), step.args, alpha, std::nullopt,
                       static_cast<int>(stack.size())};
        if (step_memory) {
            rec.summary = step_summary(alpha, *S);
            queries.push_back(q);
            summaries.push_back(*rec.summary);
        }
        out.steps.push_back(std::move(rec));
        if (step.kind == ModuleKind::describe && variant == Variant::poem_ind) {
            // The standalone prototype module reads the final attention.
            StepRecord proto{"Prototype", step.args, alpha, step_summary(alpha, *S), 0};
            queries.push_back(q);
            summaries.push_back(*proto.summary);
            out.steps.push_back(std::move(proto));
        }
    }
    if (!stack.empty()) fail(ErrorCode::invalid_argument, "program leaves unused attention maps on the stack");

    if (net.uses_memory()) {
        MemoryGraph mem = semantic_memory(p, Q, queries, summaries);
        out.memory_weights = mem.weights;
        out.memory = mem.memory;
    } else if (variant == Variant::no_mem) {
        out.memory = g.constant(Tensor({1, net.num_prototypes}));
    }
    out.answer = predict_answer(p, out.attended, out.memory, Q);
    return out;
}

ReasoningTrace run_program(const Network& net, const world::Program& program,
                           const std::vector<std::string>& question_tokens, const Tensor& raw_features) {
    const SceneInputs scene = scene_inputs(net, raw_features);
    Graph g;
    ParamVars p = param_inputs(g, net.params);
    ProgramGraph pg = build_program(g, net, p, program, question_tokens, scene);
    const Bindings bindings = net.params.bindings();
    g.evaluate(pg.answer, bindings);

    ReasoningTrace trace;
    for (const auto& rec : pg.steps) {
        StepTrace st{rec.module, rec.args, g.value(rec.attention), std::nullopt, rec.stack_depth};
        if (rec.summary) st.summary = g.value(*rec.summary);
        trace.steps.push_back(std::move(st));
    }
    if (pg.memory_weights) trace.memory_weights = g.value(*pg.memory_weights);
    trace.attended = g.value(pg.attended);
    trace.distribution = g.value(pg.answer);
    const auto& d = trace.distribution.values();
    const auto best = std::max_element(d.begin(), d.end()) - d.begin();
    trace.predicted = net.answers.token(static_cast<int>(best));
    return trace;
}

// ---------------------------------------------------------------- training

namespace {

using SceneCache = std::map<std::string, SceneInputs>;

const SceneInputs& cached_scene(const Network& net, const world::Dataset& dataset, SceneCache& cache,
                                const std::string& id) {
    auto it = cache.find(id);
    if (it == cache.end()) it = cache.emplace(id, scene_inputs(net, dataset.feature(id))).first;
    return it->second;
}

Var batch_answers(Graph& g, const Network& net, const ParamVars& p, const world::Dataset& dataset, SceneCache& cache,
                  const std::vector<const world::QAInstance*>& batch) {
    std::vector<Var> rows;
    rows.reserve(batch.size());
    for (const auto* qa : batch) {
        const SceneInputs& scene = cached_scene(net, dataset, cache, qa->scene_id);
        rows.push_back(build_program(g, net, p, qa->program, qa->question_tokens, scene).answer);
    }
    return rows.size() == 1 ? rows[0] : t::concat(rows, 0);
}

int argmax_row(const Tensor& probs, int r) {
    int best = 0;
    for (int c = 1; c < probs.dim(1); ++c) {
        if (probs.at(r, c) > probs.at(r, best)) best = c;
    }
    return best;
}

std::vector<const world::QAInstance*> tagged(const world::Dataset& dataset, const std::string& tag) {
    std::vector<const world::QAInstance*> out;
    for (const auto& qa : dataset.instances) {
        if (qa.has_tag(tag)) out.push_back(&qa);
    }
    return out;
}

std::vector<std::string> predict_cached(const Network& net, const world::Dataset& dataset, SceneCache& cache,
                                        const std::vector<const world::QAInstance*>& instances) {
    std::vector<std::string> out;
    out.reserve(instances.size());
    const Bindings bindings = net.params.bindings();
    const std::size_t bs = static_cast<std::size_t>(net.config.batch_size);
    for (std::size_t start = 0; start < instances.size(); start += bs) {
        const std::vector<const world::QAInstance*> batch(
            instances.begin() + static_cast<std::ptrdiff_t>(start),
            instances.begin() + static_cast<std::ptrdiff_t>(std::min(instances.size(), start + bs)));
        Graph g;
        ParamVars p = param_inputs(g, net.params);
        const Tensor& probs = g.evaluate(batch_answers(g, net, p, dataset, cache, batch), bindings);
        for (int r = 0; r < probs.dim(0); ++r) out.push_back(net.answers.token(argmax_row(probs, r)));
    }
    return out;
}

double accuracy_cached(const Network& net, const world::Dataset& dataset, SceneCache& cache,
                       const std::vector<const world::QAInstance*>& instances) {
    if (instances.empty()) return 0.0;
    const auto preds = predict_cached(net, dataset, cache, instances);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == instances[i]->answer;
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

}  // namespace

std::vector<EpochStats> train_vqa(Network& net, const world::Dataset& dataset, std::uint64_t seed,
                                  const TrainOptions& options) {
    std::vector<const world::QAInstance*> train = tagged(dataset, options.train_tag);
    if (options.max_train > 0 && train.size() > options.max_train) train.resize(options.max_train);
    if (train.empty()) fail(ErrorCode::empty_training_split, "no instances tagged '" + options.train_tag + "'");
    const std::vector<const world::QAInstance*> val =
        options.val_tag.empty() ? std::vector<const world::QAInstance*>{} : tagged(dataset, options.val_tag);

    // Scene inputs depend on the bank only when it is frozen, so the cache
    // survives parameter updates.
    SceneCache cache;
    const t::AdamConfig adam{net.config.lr};
    const int A = net.answers.size();
    const std::size_t bs = static_cast<std::size_t>(net.config.batch_size);
    std::vector<EpochStats> history;
    std::vector<std::size_t> order(train.size());
    for (int epoch = 1; epoch <= net.config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const std::size_t end = std::min(order.size(), start + bs);
            std::vector<const world::QAInstance*> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(train[order[i]]);
            const int B = static_cast<int>(batch.size());
            Tensor target({B, A});
            for (int r = 0; r < B; ++r) target.at(r, net.answers.lookup(batch[static_cast<std::size_t>(r)]->answer)) = 1.0f;

            Graph g;
            ParamVars p = param_inputs(g, net.params);
            Var probs = batch_answers(g, net, p, dataset, cache, batch);
            Var loss = t::ce_loss(probs, g.constant(target));
            const Bindings bindings = net.params.bindings();
            const float value = g.evaluate(loss, bindings).item();
            if (!std::isfinite(value)) {
                fail(ErrorCode::divergence, "VQA loss became non-finite in epoch " + std::to_string(epoch));
            }
            const Tensor& pv = g.value(probs);
            for (int r = 0; r < B; ++r) correct += argmax_row(pv, r) == argmax_row(target, r);
            loss_sum += static_cast<double>(value) * B;
            const t::Gradients grads = g.backward(loss, bindings);
            net.params.adam_step(grads, adam);
        }
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(train.size());
        stats.train_acc = static_cast<double>(correct) / static_cast<double>(train.size());
        stats.val_acc = accuracy_cached(net, dataset, cache, val);
        history.push_back(stats);
    }
    return history;
}

std::vector<std::string> predict(const Network& net, const world::Dataset& dataset,
                                 const std::vector<const world::QAInstance*>& instances) {
    SceneCache cache;
    return predict_cached(net, dataset, cache, instances);
}

double accuracy(const Network& net, const world::Dataset& dataset, const std::string& tag) {
    SceneCache cache;
    return accuracy_cached(net, dataset, cache, tagged(dataset, tag));
}

void permute_prototypes(Network& net, const std::vector<int>& perm) {
    const int K = net.num_prototypes;
    if (!net.uses_bank() || static_cast<int>(perm.size()) != K) {
        fail(ErrorCode::invalid_argument, "permutation must cover the " + std::to_string(K) + " prototypes");
    }
    std::vector<int> seen(perm.begin(), perm.end());
    std::sort(seen.begin(), seen.end());
    for (int k = 0; k < K; ++k) {
        if (seen[static_cast<std::size_t>(k)] != k) fail(ErrorCode::invalid_argument, "not a permutation");
    }
    auto permute_rows = [&](Tensor& m, int offset) {
        const Tensor old = m;
        for (int k = 0; k < K; ++k) {
            for (int c = 0; c < m.dim(1); ++c) m.at(offset + k, c) = old.at(offset + perm[static_cast<std::size_t>(k)], c);
        }
    };
    if (net.trainable_bank()) {
        permute_rows(net.params.get("bank/P"), 0);
    } else {
        permute_rows(*net.bank, 0);
    }
    if (net.find_input_dim() == K && net.config.variant != Variant::poem_ind) permute_rows(net.params.get("find/Ws"), 0);
    permute_rows(net.params.get("ans/W1"), net.feature_dim);
}

}  // namespace poem::net
