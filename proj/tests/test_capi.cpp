#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "poem/poem.h"

// Only the C interface is used here; the test links against libpoem.

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"({"world": {"train_scenes": 40, "val_scenes": 12, "feature_dim": 32},
                        "protos": {"epochs": 2, "num_prototypes": 8},
                        "vqa": {"epochs": 2, "batch_size": 16}})";

json take_json(char* s) {
    REQUIRE(s != nullptr);
    json doc = json::parse(s);
    poem_string_free(s);
    return doc;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("poem_capi_" + name);
    fs::remove_all(p);
    return p;
}

struct Tiny {
    poem_config* config = nullptr;
    poem_dataset* dataset = nullptr;

    Tiny() {
        REQUIRE(poem_config_create("desk", kTiny, &config) == POEM_OK);
        REQUIRE(poem_dataset_generate(config, &dataset) == POEM_OK);
    }
    ~Tiny() {
        poem_dataset_free(dataset);
        poem_config_free(config);
    }
};

}  // namespace

TEST_CASE("status names and last error") {
    CHECK(std::string(poem_status_name(POEM_OK)) == "ok");
    CHECK(std::string(poem_status_name(POEM_MISSING_INPUT)) == "missing-input");
    CHECK(std::string(poem_status_name(POEM_TRUNCATED_PAYLOAD)) == "truncated-payload");
    CHECK(std::string(poem_status_name(POEM_INVALID_CONFIG)) == "invalid-config");
    CHECK(std::string(poem_status_name(static_cast<poem_status>(57))) == "unknown");

    poem_config* c = nullptr;
    CHECK(poem_config_create("laptop", nullptr, &c) == POEM_INVALID_CONFIG);
    CHECK(c == nullptr);
    CHECK(std::string(poem_last_error()).find("laptop") != std::string::npos);
    CHECK(poem_config_create(nullptr, nullptr, nullptr) == POEM_INVALID_ARGUMENT);
    REQUIRE(poem_config_create(nullptr, nullptr, &c) == POEM_OK);
    CHECK(std::string(poem_last_error()).empty());
    CHECK(poem_config_overlay(c, "{not json") == POEM_INVALID_CONFIG);
    CHECK(poem_config_overlay(c, R"({"vqa": {"epochz": 1}})") == POEM_INVALID_CONFIG);
    CHECK(poem_config_set_variant(c, "bogus") == POEM_UNKNOWN_VARIANT);
    CHECK(poem_config_set_variant(c, "no-mem") == POEM_OK);
    CHECK(poem_config_set_seed(c, 42) == POEM_OK);
    char* text = nullptr;
    REQUIRE(poem_config_to_json(c, &text) == POEM_OK);
    const json doc = take_json(text);
    CHECK(doc["seed"] == 42);
    CHECK(doc["vqa"]["variant"] == "no-mem");
    CHECK(doc["profile"] == "desk");
    poem_config_free(c);
    poem_config_free(nullptr);
}

TEST_CASE("missing and corrupt files map to their status codes") {
    const fs::path dir = scratch("missing");
    poem_dataset* d = nullptr;
    poem_bank* b = nullptr;
    poem_model* m = nullptr;
    CHECK(poem_dataset_load(dir.string().c_str(), &d) == POEM_MISSING_INPUT);
    CHECK(poem_bank_load((dir / "bank.poem").string().c_str(), &b) == POEM_MISSING_INPUT);
    CHECK(poem_model_load((dir / "m.poem").string().c_str(), &m) == POEM_MISSING_INPUT);
    fs::create_directories(dir);
    std::ofstream(dir / "junk.poem") << "POEM1 definitely not a header";
    CHECK(poem_bank_load((dir / "junk.poem").string().c_str(), &b) == POEM_CORRUPT_HEADER);
    CHECK(std::string(poem_last_error()).find("junk.poem") != std::string::npos);
}

TEST_CASE("dataset generate, save, load; regeneration is byte-identical") {
    Tiny t;
    const fs::path a = scratch("ds_a"), b = scratch("ds_b");
    REQUIRE(poem_dataset_save(t.dataset, a.string().c_str()) == POEM_OK);

    poem_dataset* loaded = nullptr;
    REQUIRE(poem_dataset_load(a.string().c_str(), &loaded) == POEM_OK);
    poem_config* embedded = nullptr;
    REQUIRE(poem_dataset_config(loaded, &embedded) == POEM_OK);
    poem_dataset* again = nullptr;
    REQUIRE(poem_dataset_generate(embedded, &again) == POEM_OK);
    REQUIRE(poem_dataset_save(again, b.string().c_str()) == POEM_OK);
    CHECK(slurp(a / "questions.jsonl") == slurp(b / "questions.jsonl"));
    CHECK(slurp(a / "features.poem") == slurp(b / "features.poem"));

    char* s = nullptr;
    REQUIRE(poem_dataset_summary(loaded, &s) == POEM_OK);
    const json summary = take_json(s);
    CHECK(summary["scenes"] == 52);
    CHECK(summary["run"]["seed"] == 1);
    poem_dataset_free(again);
    poem_config_free(embedded);
    poem_dataset_free(loaded);
}

TEST_CASE("bank, model, evaluation, clustering and traces through handles") {
    Tiny t;
    const fs::path dir = scratch("pipeline");
    fs::create_directories(dir);

    poem_bank* bank = nullptr;
    REQUIRE(poem_bank_train(t.config, t.dataset, &bank) == POEM_OK);
    REQUIRE(poem_bank_save(bank, (dir / "bank.poem").string().c_str()) == POEM_OK);
    poem_bank* bank2 = nullptr;
    REQUIRE(poem_bank_load((dir / "bank.poem").string().c_str(), &bank2) == POEM_OK);
    REQUIRE(poem_bank_save(bank2, (dir / "bank2.poem").string().c_str()) == POEM_OK);
    CHECK(slurp(dir / "bank.poem") == slurp(dir / "bank2.poem"));
    char* s = nullptr;
    REQUIRE(poem_bank_info(bank2, &s) == POEM_OK);
    const json info = take_json(s);
    CHECK(info["prototypes"] == 8);
    CHECK(info["history"].size() == 3);

    poem_model* model = nullptr;
    CHECK(poem_model_train(t.config, t.dataset, nullptr, &model) == POEM_MISSING_INPUT);
    REQUIRE(poem_model_train(t.config, t.dataset, bank2, &model) == POEM_OK);
    REQUIRE(poem_model_save(model, (dir / "model.poem").string().c_str()) == POEM_OK);
    poem_model* model2 = nullptr;
    REQUIRE(poem_model_load((dir / "model.poem").string().c_str(), &model2) == POEM_OK);

    char* r1 = nullptr;
    char* r2 = nullptr;
    REQUIRE(poem_evaluate(model, t.dataset, &r1) == POEM_OK);
    REQUIRE(poem_evaluate(model2, t.dataset, &r2) == POEM_OK);
    const json m1 = take_json(r1), m2 = take_json(r2);
    CHECK(m1 == m2);
    CHECK(m1["variant"] == "full");
    CHECK(m1["overall"]["total"].get<int>() > 0);
    CHECK(m1["run"]["config"]["vqa"]["epochs"] == 2);

    REQUIRE(poem_cluster(bank2, t.dataset, 3, &s) == POEM_OK);
    const json cl = take_json(s);
    CHECK(cl["k"] == 3);
    CHECK(cl["inertia_monotone"] == true);
    CHECK(cl.contains("run"));

    REQUIRE(poem_trace(model2, t.dataset, 2, &s) == POEM_OK);
    const json traces = take_json(s);
    REQUIRE(traces.size() == 2);
    CHECK(traces[0]["steps"].size() >= 2);
    CHECK(traces[0].contains("memory_weights"));
    CHECK(traces[0]["run"]["seed"] == 1);

    poem_model_free(model2);
    poem_model_free(model);
    poem_bank_free(bank2);
    poem_bank_free(bank);
}

TEST_CASE("scratch and xnm-baseline variants train without a bank") {
    Tiny t;
    for (const char* v : {"scratch", "xnm-baseline", "textual"}) {
        INFO(v);
        REQUIRE(poem_config_set_variant(t.config, v) == POEM_OK);
        poem_model* m = nullptr;
        CHECK(poem_model_train(t.config, t.dataset, nullptr, &m) == POEM_OK);
        poem_model_free(m);
    }
}
