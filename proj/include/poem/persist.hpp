#pragma once

// Run configuration with named profiles, the binary array container, and
// on-disk formats for datasets, prototype banks and trained networks.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "poem/network.hpp"
#include "poem/protos.hpp"
#include "poem/tensor.hpp"
#include "poem/world.hpp"

namespace poem::io {

namespace t = poem::tensor;
using nlohmann::json;

struct SplitConfig {
    // Number of held-out categories for the zero-shot split; 0 disables it.
    int novel_count = 0;
    // Explicit novel categories; overrides novel_count when nonempty.
    std::vector<std::string> novel_categories;
    double tail_mass = 0.2;
};

struct AnalysisConfig {
    // 0 selects min(8, categories - 1).
    int cluster_k = 0;
    int kmeans_iters = 100;
    int top_m = 10;
};

struct RunConfig {
    std::string profile = "desk";
    std::uint64_t seed = 1;
    world::WorldConfig world;
    protos::ProtoConfig protos;
    net::NetConfig vqa;
    SplitConfig split;
    AnalysisConfig analysis;
};

// "desk" or "paper"; Error(invalid_config) otherwise.
RunConfig profile_config(const std::string& profile);

json config_to_json(const RunConfig& config);
// Overlays `doc` on `base`. Unknown keys and ill-typed values raise
// Error(invalid_config).
RunConfig config_from_json(const json& doc, const RunConfig& base);
// Reads {"profile": ...} from the document when present, then overlays.
RunConfig resolve_config(const json& doc);

// ---------------------------------------------------------------- container

inline constexpr char kMagic[] = "POEM1";
inline constexpr int kFormatVersion = 1;

struct Container {
    json meta = json::object();
    std::vector<std::pair<std::string, t::Tensor>> arrays;

    void add(const std::string& name, t::Tensor value) { arrays.emplace_back(name, std::move(value)); }
    const t::Tensor* find(const std::string& name) const;
    // Error(missing_input) when absent.
    const t::Tensor& get(const std::string& name) const;
};

// Layout: magic, u64 LE header length, JSON header {format_version, meta,
// arrays: [{name, shape, offset}], payload_bytes}, LE float32 payload.
std::string encode_container(const Container& c);
Container decode_container(const std::string& bytes);

void save_container(const std::string& path, const Container& c);
Container load_container(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

// ---------------------------------------------------------------- artifacts

// Records and config embedded in every artifact.
json run_record(const RunConfig& config);

json instance_json(const world::QAInstance& qa);
world::QAInstance instance_from_json(const json& j);

// Directory with questions.jsonl (a run header line, then one instance per
// line) and features.poem (scenes in the metadata, one array per scene).
void save_dataset(const std::string& dir, const world::Dataset& dataset, const RunConfig& config);
world::Dataset load_dataset(const std::string& dir, RunConfig* config = nullptr);

struct BankFile {
    protos::PrototypeBank bank;
    RunConfig config;
    json history = json::array();
};

void save_bank(const std::string& path, const BankFile& file);
BankFile load_bank(const std::string& path);

struct ModelFile {
    net::Network network;
    RunConfig config;
    json history = json::array();
};

void save_model(const std::string& path, const ModelFile& file);
ModelFile load_model(const std::string& path);

}  // namespace poem::io
