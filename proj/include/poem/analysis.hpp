#pragma once

// Accuracy metrics over the evaluation splits, prototype relevance analysis
// (per-category averages, k-means, top instances) and trace documents.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "poem/network.hpp"
#include "poem/protos.hpp"
#include "poem/tensor.hpp"
#include "poem/world.hpp"

namespace poem::analysis {

namespace t = poem::tensor;

struct GroupAccuracy {
    std::size_t correct = 0;
    std::size_t total = 0;

    double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

// Tags reported per group.
inline const std::vector<std::string> kMetricTags = {"known", "novel", "head", "tail"};

struct MetricsReport {
    GroupAccuracy overall;
    // Only groups with at least one instance appear.
    std::map<std::string, GroupAccuracy> groups;
    std::optional<double> delta;
};

// 100 * (head - tail) / tail; absent when tail is not positive.
std::optional<double> delta_gap(double acc_head, double acc_tail);

struct Prediction {
    std::size_t instance = 0;  // index into Dataset::instances
    std::string answer;
};

// Exact-match accuracy over validation-tagged instances. Throws
// Error(missing_prediction) when one of them has no prediction.
MetricsReport compute_metrics(const world::Dataset& dataset, const std::vector<Prediction>& predictions);

nlohmann::json metrics_json(const MetricsReport& report);

struct RelevanceTable {
    std::vector<std::string> categories;
    t::Tensor table;  // [categories, K]
    std::vector<std::string> excluded;
};

// Mean relevance row per category over objects of validation scenes.
// Categories without instances land in `excluded`.
RelevanceTable average_relevance(const world::Dataset& dataset, const protos::PrototypeBank& bank);

struct ClusterResult {
    std::vector<int> assignment;
    t::Tensor centroids;  // [k, dims]
    double inertia = 0.0;
    // Objective after every assignment step.
    std::vector<double> inertia_history;
    int iterations = 0;
};

// Lloyd iterations from k-means++ seeding. Throws Error(invalid_argument)
// when k exceeds the number of points or k / max_iters are not positive.
ClusterResult kmeans_cluster(const t::Tensor& points, int k, std::uint64_t seed, int max_iters = 100);

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

struct RankedInstance {
    std::string scene_id;
    int index = 0;
    std::string label;
    float score = 0.0f;
};

// Objects of all scenes ranked by relevance to one prototype, descending;
// ties by (scene id, object index).
std::vector<RankedInstance> top_instances(const protos::PrototypeBank& bank, const world::Dataset& dataset,
                                          int prototype, std::size_t m);

// One document per question: steps with attention over named objects and
// the top-5 prototypes of p^t, memory weights, predicted and gold answers.
nlohmann::json trace_document(const net::ReasoningTrace& trace, const world::QAInstance& qa, std::size_t top = 5);

// Writes pretty-printed JSON; Error(io) names the path.
void write_json(const std::string& path, const nlohmann::json& doc);
nlohmann::json read_json(const std::string& path);

}  // namespace poem::analysis
