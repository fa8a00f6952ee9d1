#include "poem/protos.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "poem/error.hpp"
#include "poem/rng.hpp"

namespace poem::protos {

using t::Bindings;
using t::Graph;
using t::Tensor;
using t::Var;

std::string_view bank_kind_name(BankKind kind) { return kind == BankKind::object ? "object" : "factorized"; }

BankKind parse_bank_kind(std::string_view name) {
    if (name == "factorized") return BankKind::factorized;
    if (name == "object") return BankKind::object;
    fail(ErrorCode::invalid_config, "unknown prototype bank kind '" + std::string(name) + "'");
}

std::string_view aggregation_name(Aggregation mode) {
    return mode == Aggregation::instance ? "instance" : "per-category";
}

Aggregation parse_aggregation(std::string_view name) {
    if (name == "per-category") return Aggregation::per_category;
    if (name == "instance") return Aggregation::instance;
    fail(ErrorCode::invalid_config, "unknown aggregation '" + std::string(name) + "'");
}

ClassifierVars classifier_inputs(Graph& g) {
    return {g.input(kBankParam), g.input("cls/W"), g.input("cls/b"), g.input("acls/W"), g.input("acls/b")};
}

Var relevance(Var O, Var P) {
    return t::sigmoid(t::matmul(t::l2_normalize(O, 1), t::transpose(t::l2_normalize(P, 1))));
}

namespace {

struct BatchGraph {
    Var alpha_p;
    Var composed;
    Var instance;
    Var scores;
    std::vector<Var> alpha_c;
    Var image;  // [B,C]
};

// Forward pass for several scenes stacked row-wise in O; offsets has B+1
// entries delimiting each scene's rows.
BatchGraph batch_forward(Graph& g, Var O, const ClassifierVars& v, const std::vector<int>& offsets, Aggregation mode,
                         const std::optional<Tensor>& object_mask) {
    BatchGraph out;
    const int m = offsets.back();
    out.alpha_p = relevance(O, v.P);
    Var weights = out.alpha_p;
    if (object_mask) weights = t::mul(out.alpha_p, g.constant(*object_mask));
    out.composed = t::matmul(weights, t::l2_normalize(v.P, 1));
    out.instance = t::sigmoid(t::add(t::matmul(out.composed, v.cls_w), t::broadcast(v.cls_b, m)));
    out.scores = t::add(t::matmul(out.composed, v.acls_w), t::broadcast(v.acls_b, m));
    std::vector<Var> images;
    for (std::size_t j = 0; j + 1 < offsets.size(); ++j) {
        const int a = offsets[j];
        const int b = offsets[j + 1];
        Var s = t::slice(out.scores, 0, a, b);
        Var ci = t::slice(out.instance, 0, a, b);
        Var alpha = t::softmax(s, 0);
        out.alpha_c.push_back(alpha);
        if (mode == Aggregation::per_category) {
            images.push_back(t::sum(t::mul(alpha, ci), 0));
        } else {
            images.push_back(t::matmul(t::transpose(alpha), ci));
        }
    }
    out.image = images.size() == 1 ? images[0] : t::concat(images, 0);
    return out;
}

void check_dims(const Tensor& O, const Tensor& P) {
    if (O.rank() != 2 || P.rank() != 2 || O.dim(1) != P.dim(1)) {
        fail(ErrorCode::shape_mismatch, "feature shape " + t::shape_str(O.shape()) + " does not match bank " +
                                            t::shape_str(P.shape()));
    }
}

}  // namespace

ImageGraph image_forward(Graph& g, Var O, const ClassifierVars& vars, int n_objects, Aggregation mode,
                         const std::optional<Tensor>& object_mask) {
    const BatchGraph b = batch_forward(g, O, vars, {0, n_objects}, mode, object_mask);
    return {b.alpha_p, b.composed, b.instance, b.alpha_c.front(), b.image};
}

Tensor argmax_mask(const Tensor& alpha_p) {
    Tensor mask(alpha_p.shape());
    for (int i = 0; i < alpha_p.dim(0); ++i) {
        int best = 0;
        for (int k = 1; k < alpha_p.dim(1); ++k) {
            if (alpha_p.at(i, k) > alpha_p.at(i, best)) best = k;
        }
        mask.at(i, best) = 1.0f;
    }
    return mask;
}

Tensor relevance_scores(const Tensor& O, const Tensor& P) {
    check_dims(O, P);
    Graph g;
    return g.evaluate(relevance(g.constant(O), g.constant(P)), Bindings{});
}

Tensor recompose_and_classify(const Tensor& alpha_p, const Tensor& P, const Tensor& cls_w, const Tensor& cls_b) {
    if (alpha_p.dim(1) != P.dim(0)) {
        fail(ErrorCode::shape_mismatch, "relevance shape " + t::shape_str(alpha_p.shape()) + " does not match bank " +
                                            t::shape_str(P.shape()));
    }
    Graph g;
    Var f = t::matmul(g.constant(alpha_p), t::l2_normalize(g.constant(P), 1));
    Var out = t::sigmoid(t::add(t::matmul(f, g.constant(cls_w)), t::broadcast(g.constant(cls_b), alpha_p.dim(0))));
    return g.evaluate(out, Bindings{});
}

Tensor aggregate_image_prediction(const Tensor& composed, const Tensor& instance, const Tensor& acls_w,
                                  const Tensor& acls_b, Aggregation mode) {
    Graph g;
    const int n = composed.dim(0);
    Var s = t::add(t::matmul(g.constant(composed), g.constant(acls_w)), t::broadcast(g.constant(acls_b), n));
    Var alpha = t::softmax(s, 0);
    Var ci = g.constant(instance);
    Var out = mode == Aggregation::per_category ? t::sum(t::mul(alpha, ci), 0) : t::matmul(t::transpose(alpha), ci);
    return g.evaluate(out, Bindings{});
}

ProtoModel init_proto_model(int feature_dim, std::vector<std::string> categories, const ProtoConfig& config,
                            std::uint64_t seed) {
    const int c = static_cast<int>(categories.size());
    if (c < 1 || feature_dim < 1) fail(ErrorCode::invalid_argument, "prototype model needs categories and features");
    const int k = config.kind == BankKind::object ? c : config.num_prototypes;
    if (k < 1) fail(ErrorCode::invalid_config, "num_prototypes must be positive");
    const int score_cols = config.aggregation == Aggregation::per_category ? c : 1;

    ProtoModel model;
    model.categories = std::move(categories);
    model.config = config;
    model.config.num_prototypes = k;
    model.params = t::init_parameters({{"cls/W", {feature_dim, c}}, {"acls/W", {feature_dim, score_cols}}},
                                      derive_seed(seed, 1));
    model.params.add("cls/b", Tensor({1, c}));
    model.params.add("acls/b", Tensor({1, score_cols}));

    Rng rng(derive_seed(seed, 2));
    Tensor P({k, feature_dim});
    for (int r = 0; r < k; ++r) {
        double ss = 0.0;
        for (int j = 0; j < feature_dim; ++j) {
            P.at(r, j) = static_cast<float>(rng.normal());
            ss += static_cast<double>(P.at(r, j)) * P.at(r, j);
        }
        const double norm = std::sqrt(ss);
        for (int j = 0; j < feature_dim; ++j) P.at(r, j) = static_cast<float>(P.at(r, j) / norm);
    }
    model.params.add(kBankParam, std::move(P));
    return model;
}

ProtoData make_proto_data(const world::Dataset& dataset, const std::vector<const world::Scene*>& scenes,
                          const std::vector<std::string>& categories) {
    ProtoData data;
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < categories.size(); ++i) index[categories[i]] = static_cast<int>(i);
    for (const world::Scene* s : scenes) {
        data.features.push_back(dataset.feature(s->id));
        Tensor target({1, static_cast<int>(categories.size())});
        for (const auto& o : s->objects) {
            auto it = index.find(o.category);
            if (it == index.end()) fail(ErrorCode::unknown_token, "category '" + o.category + "' not in label set");
            target[static_cast<std::size_t>(it->second)] = 1.0f;
        }
        data.targets.push_back(std::move(target));
    }
    return data;
}

double F1Counts::f1() const {
    const std::int64_t denom = 2 * tp + fp + fn;
    if (denom == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

void count_f1(const Tensor& probs, const Tensor& target, F1Counts& counts, float threshold) {
    if (probs.size() != target.size()) fail(ErrorCode::shape_mismatch, "prediction and target sizes differ");
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const bool pred = probs[i] >= threshold;
        const bool gold = target[i] > 0.5f;
        counts.tp += pred && gold;
        counts.fp += pred && !gold;
        counts.fn += !pred && gold;
    }
}

namespace {

Tensor stack_rows(const std::vector<const Tensor*>& parts, std::vector<int>& offsets) {
    offsets.assign(1, 0);
    for (const Tensor* p : parts) offsets.push_back(offsets.back() + p->dim(0));
    const int d = parts.front()->dim(1);
    std::vector<float> data;
    data.reserve(static_cast<std::size_t>(offsets.back()) * d);
    for (const Tensor* p : parts) {
        if (p->dim(1) != d) fail(ErrorCode::shape_mismatch, "feature widths differ within a batch");
        data.insert(data.end(), p->values().begin(), p->values().end());
    }
    return Tensor({offsets.back(), d}, std::move(data));
}

// Image predictions for a slice of scenes under the given parameters.
Tensor batch_predict(const std::map<std::string, Tensor>& params, const ProtoConfig& config,
                     const std::vector<const Tensor*>& features) {
    std::vector<int> offsets;
    Tensor stacked = stack_rows(features, offsets);
    Graph g;
    Bindings b;
    for (const auto& [name, value] : params) b.bind(name, value);
    const ClassifierVars vars = classifier_inputs(g);
    std::optional<Tensor> mask;
    if (config.kind == BankKind::object) {
        Var o = g.constant(stacked);
        mask = argmax_mask(g.evaluate(relevance(o, vars.P), b));
    }
    const BatchGraph out = batch_forward(g, g.constant(std::move(stacked)), vars, offsets, config.aggregation, mask);
    return g.evaluate(out.image, b);
}

double mean_bce(const std::map<std::string, Tensor>& params, const ProtoConfig& config, const ProtoData& data) {
    double total = 0.0;
    constexpr std::size_t kEvalBatch = 256;
    for (std::size_t start = 0; start < data.features.size(); start += kEvalBatch) {
        const std::size_t end = std::min(data.features.size(), start + kEvalBatch);
        std::vector<const Tensor*> feats;
        for (std::size_t i = start; i < end; ++i) feats.push_back(&data.features[i]);
        const Tensor probs = batch_predict(params, config, feats);
        for (std::size_t i = start; i < end; ++i) {
            const auto& target = data.targets[i];
            const int c = static_cast<int>(target.size());
            double s = 0.0;
            for (int j = 0; j < c; ++j) {
                const double q = std::clamp(probs.at(static_cast<int>(i - start), j), t::kProbClamp, 1.0f - t::kProbClamp);
                s -= target[static_cast<std::size_t>(j)] * std::log(q) + (1.0 - target[static_cast<std::size_t>(j)]) * std::log(1.0 - q);
            }
            total += s / c;
        }
    }
    return total / static_cast<double>(data.features.size());
}

double f1_over(const std::map<std::string, Tensor>& params, const ProtoConfig& config, const ProtoData& data) {
    F1Counts counts;
    constexpr std::size_t kEvalBatch = 256;
    for (std::size_t start = 0; start < data.features.size(); start += kEvalBatch) {
        const std::size_t end = std::min(data.features.size(), start + kEvalBatch);
        std::vector<const Tensor*> feats;
        for (std::size_t i = start; i < end; ++i) feats.push_back(&data.features[i]);
        const Tensor probs = batch_predict(params, config, feats);
        for (std::size_t i = start; i < end; ++i) {
            const int c = probs.dim(1);
            Tensor row({1, c}, std::vector<float>(probs.values().begin() + static_cast<std::ptrdiff_t>((i - start) * c),
                                                  probs.values().begin() + static_cast<std::ptrdiff_t>((i - start + 1) * c)));
            count_f1(row, data.targets[i], counts);
        }
    }
    return counts.f1();
}

}  // namespace

ProtoHistory train_prototypes(ProtoModel& model, const ProtoData& train, const ProtoData& val, std::uint64_t seed) {
    if (train.features.empty() || val.features.empty()) {
        fail(ErrorCode::empty_training_split, "prototype training needs nonempty train and validation scenes");
    }
    const ProtoConfig& cfg = model.config;
    if (cfg.batch_size < 1 || cfg.epochs < 0) fail(ErrorCode::invalid_config, "batch_size and epochs must be positive");
    t::AdamConfig adam;
    adam.lr = cfg.lr;

    ProtoHistory history;
    auto snapshot = [&](int epoch, double loss) {
        Snapshot s;
        s.epoch = epoch;
        s.train_loss = loss;
        s.params = model.params.parameters();
        s.val_f1 = f1_over(s.params, cfg, val);
        history.epochs.push_back(std::move(s));
    };
    snapshot(0, mean_bce(model.params.parameters(), cfg, train));

    std::vector<std::size_t> order(train.features.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<const Tensor*> feats;
            std::vector<float> targets;
            for (std::size_t i = start; i < end; ++i) {
                feats.push_back(&train.features[order[i]]);
                const auto& tv = train.targets[order[i]].values();
                targets.insert(targets.end(), tv.begin(), tv.end());
            }
            std::vector<int> offsets;
            Tensor stacked = stack_rows(feats, offsets);
            const int rows = static_cast<int>(end - start);
            Tensor target({rows, static_cast<int>(model.categories.size())}, std::move(targets));

            Graph g;
            const Bindings b = model.params.bindings();
            const ClassifierVars vars = classifier_inputs(g);
            std::optional<Tensor> mask;
            Var o = g.constant(std::move(stacked));
            if (cfg.kind == BankKind::object) mask = argmax_mask(g.evaluate(relevance(o, vars.P), b));
            const BatchGraph out = batch_forward(g, o, vars, offsets, cfg.aggregation, mask);
            Var loss = t::bce_loss(out.image, g.constant(std::move(target)));
            const double l = g.evaluate(loss, b).item();
            if (!std::isfinite(l)) {
                fail(ErrorCode::divergence, "prototype training diverged at epoch " + std::to_string(epoch));
            }
            loss_sum += l * rows;
            model.params.adam_step(g.backward(loss, b), adam);
        }
        snapshot(epoch, loss_sum / static_cast<double>(order.size()));
    }
    return history;
}

const Snapshot& select_prototypes(const ProtoHistory& history) {
    if (history.epochs.empty()) fail(ErrorCode::invalid_argument, "empty prototype history");
    const Snapshot* best = &history.epochs.front();
    for (const auto& s : history.epochs) {
        if (s.val_f1 > best->val_f1) best = &s;
    }
    return *best;
}

PrototypeBank make_bank(const ProtoModel& model, const Snapshot& snapshot) {
    PrototypeBank bank;
    bank.categories = model.categories;
    bank.config = model.config;
    bank.origin = std::string(bank_kind_name(model.config.kind));
    bank.epoch = snapshot.epoch;
    bank.metric = snapshot.val_f1;
    for (const auto& [name, value] : snapshot.params) {
        if (name == kBankParam) continue;
        bank.classifier.emplace(name, value);
    }
    Graph g;
    bank.P = g.evaluate(t::l2_normalize(g.constant(snapshot.params.at(kBankParam)), 1), Bindings{});
    return bank;
}

Tensor predict_image(const PrototypeBank& bank, const Tensor& features) {
    check_dims(features, bank.P);
    if (bank.classifier.empty()) fail(ErrorCode::invalid_argument, "bank has no classifier head");
    std::map<std::string, Tensor> params = bank.classifier;
    params.emplace(kBankParam, bank.P);
    return batch_predict(params, bank.config, {&features});
}

double evaluate_f1(const PrototypeBank& bank, const ProtoData& data) {
    std::map<std::string, Tensor> params = bank.classifier;
    params.emplace(kBankParam, bank.P);
    return f1_over(params, bank.config, data);
}

PrototypeBank textual_bank(const world::Embedder& embedder, const world::Vocabulary& vocab) {
    const auto tokens = vocab.value_tokens();
    const int d = embedder.dim();
    std::vector<float> data;
    for (const auto& tok : tokens) {
        const auto& e = embedder.embedding(tok);
        data.insert(data.end(), e.begin(), e.end());
    }
    PrototypeBank bank;
    Graph g;
    bank.P = g.evaluate(t::l2_normalize(g.constant(Tensor({static_cast<int>(tokens.size()), d}, std::move(data))), 1),
                        Bindings{});
    bank.origin = "textual";
    bank.config.num_prototypes = bank.P.dim(0);
    return bank;
}

}  // namespace poem::protos
