#pragma once

// End-to-end steps shared by the CLI, the C API and the acceptance runner:
// dataset construction with its evaluation splits, prototype training, VQA
// training, evaluation, clustering and trace export. Every step derives its
// randomness from RunConfig::seed.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "poem/analysis.hpp"
#include "poem/network.hpp"
#include "poem/persist.hpp"
#include "poem/protos.hpp"
#include "poem/world.hpp"

namespace poem::pipeline {

using nlohmann::json;

// Stream ids for derive_seed(config.seed, stream).
enum SeedStream : std::uint64_t {
    novel_split = 101,
    bank_init = 201,
    bank_train = 202,
    net_init = 301,
    net_train = 302,
    clustering = 401,
};

// Generates the dataset, applies the zero-shot split when configured and
// labels head/tail answers.
world::Dataset build_dataset(const io::RunConfig& config);

// Categories that may appear in training (all minus novel), vocabulary order.
std::vector<std::string> known_categories(const world::Dataset& dataset);

// Prototype settings actually used: the object variant trains one prototype
// per known category.
protos::ProtoConfig bank_config(const io::RunConfig& config, const world::Dataset& dataset);

struct BankRun {
    protos::PrototypeBank bank;
    json history = json::array();
};

// Trains on known-only training scenes, selects by known-only validation F1.
BankRun train_bank(const io::RunConfig& config, const world::Dataset& dataset);

struct ModelRun {
    net::Network network;
    json history = json::array();
};

// `bank` is required for bank-backed variants other than textual, which
// builds its bank from the token embeddings. Error(invalid_config) when the
// bank origin does not suit the variant.
ModelRun train_model(const io::RunConfig& config, const world::Dataset& dataset, const protos::PrototypeBank* bank);

std::vector<analysis::Prediction> predict_validation(const net::Network& network, const world::Dataset& dataset);
analysis::MetricsReport evaluate(const net::Network& network, const world::Dataset& dataset);

struct ClusterRun {
    analysis::RelevanceTable table;
    analysis::ClusterResult result;
    std::vector<std::string> supercategories;
    double ari = 0.0;
    bool monotone = true;
    int k = 0;
};

// k = 0 resolves to analysis.cluster_k, then to min(8, categories - 1).
ClusterRun cluster_bank(const io::RunConfig& config, const world::Dataset& dataset, const protos::PrototypeBank& bank,
                        int k = 0);
json cluster_json(const ClusterRun& run);

// Trace of one validation instance (index into Dataset::instances).
json trace_instance(const net::Network& network, const world::Dataset& dataset, std::size_t instance);

// First `count` validation instances, in dataset order.
std::vector<std::size_t> validation_indices(const world::Dataset& dataset, std::size_t count);

}  // namespace poem::pipeline
