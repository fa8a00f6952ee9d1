#pragma once

// Synthetic scenes, features, program-structured questions with symbolic
// oracle answers, and the zero-shot / head-tail evaluation splits.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "poem/tensor.hpp"

namespace poem::world {

enum class AttrType { category, supercategory, color, size, shape };

inline constexpr std::array<AttrType, 5> kAttrTypes = {AttrType::category, AttrType::supercategory,
                                                        AttrType::color, AttrType::size, AttrType::shape};

std::string_view attr_type_token(AttrType type);
std::optional<AttrType> parse_attr_type(std::string_view token);

inline constexpr std::array<std::string_view, 4> kRelations = {"left-of", "right-of", "above", "below"};

struct WorldConfig {
    int n_categories = 12;
    int n_supercategories = 4;
    int n_colors = 6;
    int n_shapes = 4;
    int min_objects = 3;
    int max_objects = 10;
    double min_separation = 0.05;
    int feature_dim = 64;
    double noise_sigma = 0.05;
    double position_scale = 1.0;
    int train_scenes = 4000;
    int val_scenes = 1000;
    int questions_per_scene = 3;
    int max_retries = 200;
    std::uint64_t embedder_seed = 7;
    // Zipf exponent for attribute values; 0 samples uniformly.
    double value_skew = 0.0;
};

class Vocabulary {
public:
    explicit Vocabulary(const WorldConfig& config);

    const std::vector<std::string>& values(AttrType type) const;
    const std::vector<std::string>& categories() const { return values(AttrType::category); }
    const std::string& supercategory_of(const std::string& category) const;
    std::optional<AttrType> type_of(const std::string& token) const;
    // Every attribute-value token, grouped by type in kAttrTypes order.
    std::vector<std::string> value_tokens() const;

private:
    std::array<std::vector<std::string>, 5> values_;
    std::map<std::string, std::string> super_of_;
    std::map<std::string, AttrType> type_of_;
};

struct ObjectSpec {
    std::string category;
    std::string supercategory;
    std::string color;
    std::string size;
    std::string shape;
    double x = 0.0;
    double y = 0.0;

    const std::string& attr(AttrType type) const;
    bool has_value(const std::string& token) const;
    std::string label() const;
    bool operator==(const ObjectSpec&) const = default;
};

struct Scene {
    std::string id;
    std::vector<ObjectSpec> objects;
};

enum class ModuleKind { find, filter, relate, intersect, describe };

std::string_view module_name(ModuleKind kind);
std::optional<ModuleKind> parse_module(std::string_view name);

struct ProgramStep {
    ModuleKind kind = ModuleKind::find;
    std::vector<std::string> args;
    bool operator==(const ProgramStep&) const = default;
};

using Program = std::vector<ProgramStep>;

struct QAInstance {
    std::string scene_id;
    std::vector<ObjectSpec> objects;
    Program program;
    std::vector<std::string> question_tokens;
    std::string answer;
    std::set<std::string> tags;

    bool has_tag(const std::string& tag) const { return tags.count(tag) != 0; }
};

Scene gen_scene(const WorldConfig& config, const Vocabulary& vocab, std::uint64_t seed, std::string id = "s0");

// Fixed per-token embeddings. Vectors are orthonormal when the vocabulary
// fits in the non-positional dimensions.
class Embedder {
public:
    Embedder(const Vocabulary& vocab, int dim, std::uint64_t seed);

    int dim() const noexcept { return dim_; }
    const std::vector<float>& embedding(const std::string& token) const;
    const std::map<std::string, std::vector<float>>& table() const noexcept { return table_; }

private:
    int dim_;
    std::map<std::string, std::vector<float>> table_;
};

// Row i = sum of attribute embeddings of object i, plus its centered and
// scaled position in the last two dimensions, plus N(0, noise_sigma^2).
tensor::Tensor synth_features(const Scene& scene, const Embedder& embedder, double noise_sigma,
                              std::uint64_t noise_seed, double position_scale = 1.0);

bool relation_holds(std::string_view relation, const ObjectSpec& subject, const ObjectSpec& reference);

// Describe exactly once and last; And takes no arguments, every other
// module exactly one. Throws Error(invalid_argument).
void validate_program(const Program& program);

// Every set produced while executing a program, in execution order.
struct OracleRun {
    std::string answer;
    std::vector<std::set<int>> sets;
};

// Throws Error(empty_set) or Error(ambiguous) at Describe, Error(stack_underflow)
// for malformed stacks and Error(invalid_argument) for malformed programs.
OracleRun oracle_run(const Program& program, const std::vector<ObjectSpec>& objects);
std::string oracle_execute(const Program& program, const std::vector<ObjectSpec>& objects);

std::vector<std::string> render_question(const Program& program);

QAInstance gen_question(const Scene& scene, const Vocabulary& vocab, std::uint64_t seed, int max_retries = 200,
                        const std::vector<Program>& avoid = {});

struct Dataset {
    WorldConfig config;
    std::uint64_t seed = 0;
    std::vector<Scene> scenes;
    std::set<std::string> val_scene_ids;
    std::map<std::string, tensor::Tensor> features;
    std::vector<QAInstance> instances;
    std::set<std::string> novel_categories;

    const Scene& scene(const std::string& id) const;
    const tensor::Tensor& feature(const std::string& id) const;
    bool is_val_scene(const std::string& id) const { return val_scene_ids.count(id) != 0; }
};

// Scenes s000000.. (train first, then val), each with up to
// questions_per_scene distinct questions tagged "train" or "val".
Dataset generate_dataset(const WorldConfig& config, std::uint64_t seed);

std::set<std::string> choose_novel_categories(const Vocabulary& vocab, int count, std::uint64_t seed);

void build_zero_shot_split(Dataset& dataset, const std::set<std::string>& novel);

// Tail/head answer partition of one Describe attribute group given training
// answer counts (answers absent from training carry count 0).
std::set<std::string> tail_answers(const std::map<std::string, int>& counts, double tail_mass);

void build_ood_labels(Dataset& dataset, double tail_mass = 0.2);

// Scenes of one split; with known_only, scenes depicting a novel category
// are skipped.
std::vector<const Scene*> split_scenes(const Dataset& dataset, bool val, bool known_only);

}  // namespace poem::world
