#pragma once

// Program executor over scene features: modules attend over objects using
// prototype similarities, a semantic memory pools the matched prototypes of
// every step, and an answer head predicts from attended features + memory.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "poem/protos.hpp"
#include "poem/tensor.hpp"
#include "poem/world.hpp"

namespace poem::net {

namespace t = poem::tensor;

enum class Variant { full, scratch, object, textual, poem_ind, no_mem, xnm_baseline };

std::string_view variant_name(Variant v);
// Throws Error(unknown_variant).
Variant parse_variant(std::string_view name);
const std::vector<Variant>& all_variants();

struct NetConfig {
    Variant variant = Variant::full;
    int epochs = 50;
    float lr = 4e-4f;
    int batch_size = 64;
    int embed_dim = 32;
    int hidden_dim = 32;
    int relate_dim = 16;
    int answer_hidden = 64;
    // Bank size for the scratch variant.
    int num_prototypes = 64;
    bool finetune_prototypes = false;
};

// Token table with "<unk>" at index 0.
class Vocab {
public:
    Vocab() : tokens_{std::string(kUnk)} { index_.emplace(kUnk, 0); }
    explicit Vocab(const std::vector<std::string>& tokens);

    static constexpr std::string_view kUnk = "<unk>";

    int lookup(const std::string& token) const;
    bool contains(const std::string& token) const { return index_.count(token) != 0; }
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    int size() const { return static_cast<int>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int, std::less<>> index_;
};

// Placeholder token standing in for the arguments of argument-less steps.
std::string module_token(world::ModuleKind kind);

struct Network {
    NetConfig config;
    t::ParameterStore params;
    Vocab words;
    Vocab answers;
    // Frozen bank rows (L2-normalized); empty for variants without one or
    // when the bank is a trainable parameter.
    std::optional<t::Tensor> bank;
    int feature_dim = 0;
    int num_prototypes = 0;
    std::string bank_origin;

    bool uses_bank() const;
    bool trainable_bank() const;
    bool uses_memory() const;
    // Width of the similarity rows consumed by Find/Filter (K or D).
    int find_input_dim() const;
    // Current bank rows, normalized.
    t::Tensor bank_rows() const;
};

// Words come from training-tagged questions and program arguments, answers
// from training answers. `bank` is required unless the variant is scratch or
// xnm-baseline.
Network make_network(const NetConfig& config, const world::Dataset& dataset, const protos::PrototypeBank* bank,
                     std::uint64_t seed);

// Graph-level building blocks. All attention maps are rows [1,N].
struct ParamVars {
    std::map<std::string, t::Var> vars;
    t::Var operator[](const std::string& name) const;
};

ParamVars param_inputs(t::Graph& g, const t::ParameterStore& params);

// Mean embedding row [1,E] of the given token ids via a count-row product.
t::Var mean_embedding(t::Graph& g, t::Var table, const std::vector<int>& ids, int vocab_size);
t::Var encode_question(t::Graph& g, const ParamVars& p, const std::vector<int>& ids, int vocab_size);
t::Var prototype_match(t::Var V, t::Var P);
t::Var module_find(t::Graph& g, const ParamVars& p, t::Var S, t::Var q, int n);
t::Var module_filter(t::Graph& g, const ParamVars& p, t::Var alpha_in, t::Var S, t::Var q, int n);
t::Var module_relate(t::Graph& g, const ParamVars& p, t::Var alpha_in, t::Var V, t::Var q, int n);
t::Var module_and(t::Graph& g, t::Var a, t::Var b, int n);
t::Var describe_attend(t::Var alpha, t::Var V);
t::Var step_summary(t::Var alpha, t::Var S);

struct MemoryGraph {
    t::Var weights;  // [1,T]
    t::Var memory;   // [1,K]
};
MemoryGraph semantic_memory(const ParamVars& p, t::Var Q, const std::vector<t::Var>& queries,
                            const std::vector<t::Var>& summaries);
t::Var predict_answer(const ParamVars& p, t::Var attended, std::optional<t::Var> memory, t::Var Q);

struct StepRecord {
    std::string module;
    std::vector<std::string> args;
    t::Var attention;
    std::optional<t::Var> summary;
    int stack_depth = 0;
};

struct ProgramGraph {
    std::vector<StepRecord> steps;
    std::optional<t::Var> memory_weights;
    std::optional<t::Var> memory;
    t::Var attended;
    t::Var answer;  // [1,A]
};

// Per-scene inputs: row-normalized features and, for frozen banks, the
// precomputed similarity matrix.
struct SceneInputs {
    t::Tensor features;
    std::optional<t::Tensor> similarity;
};

SceneInputs scene_inputs(const Network& net, const t::Tensor& raw_features);

ProgramGraph build_program(t::Graph& g, const Network& net, const ParamVars& p, const world::Program& program,
                           const std::vector<std::string>& question_tokens, const SceneInputs& scene);

struct StepTrace {
    std::string module;
    std::vector<std::string> args;
    t::Tensor attention;
    std::optional<t::Tensor> summary;
    int stack_depth = 0;
};

struct ReasoningTrace {
    std::vector<StepTrace> steps;
    std::optional<t::Tensor> memory_weights;
    t::Tensor attended;
    t::Tensor distribution;
    std::string predicted;
};

ReasoningTrace run_program(const Network& net, const world::Program& program,
                           const std::vector<std::string>& question_tokens, const t::Tensor& raw_features);

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
};

struct TrainOptions {
    // Restrict training to instances with this tag.
    std::string train_tag = "train";
    // Accuracy reported per epoch on instances with this tag; empty skips.
    std::string val_tag = "val";
    std::size_t max_train = 0;
};

// Cross-entropy training with Adam; deterministic given the seed. Throws
// Error(divergence) on a non-finite loss and Error(empty_training_split)
// when no instance carries the train tag.
std::vector<EpochStats> train_vqa(Network& net, const world::Dataset& dataset, std::uint64_t seed,
                                  const TrainOptions& options = {});

// Predicted answer token for every instance (in order).
std::vector<std::string> predict(const Network& net, const world::Dataset& dataset,
                                 const std::vector<const world::QAInstance*>& instances);

double accuracy(const Network& net, const world::Dataset& dataset, const std::string& tag);

// Applies a permutation to the prototype axis of the bank and every weight
// indexed by it. perm[new] = old.
void permute_prototypes(Network& net, const std::vector<int>& perm);

}  // namespace poem::net
