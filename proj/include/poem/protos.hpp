#pragma once

// Prototype bank learned by multi-label category classification: objects are
// matched against prototypes, recomposed from them, classified, and the
// instance predictions are pooled into an image prediction.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "poem/tensor.hpp"
#include "poem/world.hpp"

namespace poem::protos {

namespace t = poem::tensor;

enum class BankKind {
    factorized,
    // One prototype per category; an instance is recomposed from its single
    // best-matching prototype only.
    object,
};

std::string_view bank_kind_name(BankKind kind);
BankKind parse_bank_kind(std::string_view name);

enum class Aggregation {
    // A_cls emits one score per category; instances are softmax-weighted
    // separately for every category.
    per_category,
    // A_cls emits one scalar per instance shared by all categories.
    instance,
};

std::string_view aggregation_name(Aggregation mode);
Aggregation parse_aggregation(std::string_view name);

struct ProtoConfig {
    int num_prototypes = 64;
    int epochs = 60;
    float lr = 4e-4f;
    int batch_size = 128;
    BankKind kind = BankKind::factorized;
    Aggregation aggregation = Aggregation::per_category;
};

inline constexpr const char* kBankParam = "prototypes/P";

struct ClassifierVars {
    t::Var P;
    t::Var cls_w;
    t::Var cls_b;
    t::Var acls_w;
    t::Var acls_b;
};

ClassifierVars classifier_inputs(t::Graph& g);

// sigmoid(cos(O_i, P_k)) for every row pair: [N,D] x [K,D] -> [N,K].
t::Var relevance(t::Var O, t::Var P);

struct ImageGraph {
    t::Var alpha_p;   // [N,K]
    t::Var composed;  // [N,D]
    t::Var instance;  // [N,C]
    t::Var alpha_c;   // [N,C] or [N,1]
    t::Var image;     // [1,C]
};

// Builds the image forward pass for one scene. `object_mask` ([N,K] one-hot
// of the matched prototype) is required for BankKind::object.
ImageGraph image_forward(t::Graph& g, t::Var O, const ClassifierVars& vars, int n_objects, Aggregation mode,
                         const std::optional<t::Tensor>& object_mask = std::nullopt);

// One-hot rows of argmax_k alpha_p[i,k] (lowest index on ties).
t::Tensor argmax_mask(const t::Tensor& alpha_p);

// Tensor-level helpers, each a thin evaluation of the graph builders above.
t::Tensor relevance_scores(const t::Tensor& O, const t::Tensor& P);
t::Tensor recompose_and_classify(const t::Tensor& alpha_p, const t::Tensor& P, const t::Tensor& cls_w,
                                 const t::Tensor& cls_b);
t::Tensor aggregate_image_prediction(const t::Tensor& composed, const t::Tensor& instance, const t::Tensor& acls_w,
                                     const t::Tensor& acls_b, Aggregation mode);

struct ProtoModel {
    t::ParameterStore params;
    std::vector<std::string> categories;
    ProtoConfig config;

    int feature_dim() const { return params.get(kBankParam).dim(1); }
};

// Unit-norm random prototype rows, Glorot classifier weights, zero biases.
ProtoModel init_proto_model(int feature_dim, std::vector<std::string> categories, const ProtoConfig& config,
                            std::uint64_t seed);

struct Snapshot {
    int epoch = 0;
    double train_loss = 0.0;
    double val_f1 = 0.0;
    std::map<std::string, t::Tensor> params;
};

struct ProtoHistory {
    std::vector<Snapshot> epochs;  // epoch 0 is the initial state
};

struct ProtoData {
    std::vector<t::Tensor> features;
    std::vector<t::Tensor> targets;  // [1,C] multi-hot
};

ProtoData make_proto_data(const world::Dataset& dataset, const std::vector<const world::Scene*>& scenes,
                          const std::vector<std::string>& categories);

// Mean BCE per scene, averaged over each mini-batch; Adam updates.
// Throws Error(divergence) naming the epoch when the loss turns NaN.
ProtoHistory train_prototypes(ProtoModel& model, const ProtoData& train, const ProtoData& val, std::uint64_t seed);

// Highest validation micro-F1; earliest epoch on ties.
const Snapshot& select_prototypes(const ProtoHistory& history);

struct F1Counts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;

    double f1() const;
};

void count_f1(const t::Tensor& probs, const t::Tensor& target, F1Counts& counts, float threshold = 0.5f);

struct PrototypeBank {
    t::Tensor P;  // [K,D], rows L2-normalized
    std::map<std::string, t::Tensor> classifier;
    std::vector<std::string> categories;
    ProtoConfig config;
    // "factorized", "object" or "textual".
    std::string origin = "factorized";
    int epoch = 0;
    double metric = 0.0;

    int size() const { return P.dim(0); }
    int dim() const { return P.dim(1); }
};

PrototypeBank make_bank(const ProtoModel& model, const Snapshot& snapshot);

// Image-level category probabilities [1,C] for one scene's features.
t::Tensor predict_image(const PrototypeBank& bank, const t::Tensor& features);

double evaluate_f1(const PrototypeBank& bank, const ProtoData& data);

// Bank of fixed attribute-token embeddings, one row per token.
PrototypeBank textual_bank(const world::Embedder& embedder, const world::Vocabulary& vocab);

}  // namespace poem::protos
