#include "poem/poem.h"

#include <cstdlib>
#include <cstring>
#include <map>
#include <memory>
#include <new>
#include <string>

#include "poem/error.hpp"
#include "poem/persist.hpp"
#include "poem/pipeline.hpp"

using poem::ErrorCode;
using nlohmann::json;

struct poem_config {
    poem::io::RunConfig config;
};

struct poem_dataset {
    poem::world::Dataset dataset;
    poem::io::RunConfig config;
};

struct poem_bank {
    poem::io::BankFile file;
};

struct poem_model {
    poem::io::ModelFile file;
};

namespace {

thread_local std::string last_error;

poem_status record(poem_status status, const std::string& message) {
    last_error = message;
    return status;
}

template <class F>
poem_status guarded(F&& body) {
    last_error.clear();
    try {
        body();
        return POEM_OK;
    } catch (const poem::Error& e) {
        return record(static_cast<poem_status>(e.code()), e.what());
    } catch (const json::exception& e) {
        return record(POEM_INVALID_CONFIG, e.what());
    } catch (const std::bad_alloc&) {
        return record(POEM_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return record(POEM_INTERNAL, e.what());
    }
}

void require(const void* p, const char* what) {
    if (!p) poem::fail(ErrorCode::invalid_argument, std::string(what) + " is null");
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

json parse_overlay(const char* text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        poem::fail(ErrorCode::invalid_config, std::string("config is not valid JSON: ") + e.what());
    }
}

// Attaches the run record to a report document.
json with_run(json doc, const poem::io::RunConfig& config) {
    doc["run"] = poem::io::run_record(config);
    return doc;
}

}  // namespace

extern "C" {

const char* poem_last_error(void) { return last_error.c_str(); }

const char* poem_status_name(poem_status status) {
    if (status == POEM_OK) return "ok";
    if (status == POEM_INTERNAL) return "internal";
    if (status < POEM_INVALID_ARGUMENT || status > POEM_INVALID_CONFIG) return "unknown";
    return poem::error_code_name(static_cast<ErrorCode>(status)).data();
}

void poem_string_free(char* s) { std::free(s); }

poem_status poem_config_create(const char* profile, const char* overlay_json, poem_config** out) {
    return guarded([&] {
        require(out, "out");
        auto c = std::make_unique<poem_config>();
        c->config = poem::io::profile_config(profile ? profile : "desk");
        if (overlay_json) c->config = poem::io::config_from_json(parse_overlay(overlay_json), c->config);
        *out = c.release();
    });
}

poem_status poem_config_overlay(poem_config* config, const char* overlay_json) {
    return guarded([&] {
        require(config, "config");
        require(overlay_json, "overlay_json");
        config->config = poem::io::config_from_json(parse_overlay(overlay_json), config->config);
    });
}

poem_status poem_config_set_seed(poem_config* config, uint64_t seed) {
    return guarded([&] {
        require(config, "config");
        config->config.seed = seed;
    });
}

poem_status poem_config_set_variant(poem_config* config, const char* variant) {
    return guarded([&] {
        require(config, "config");
        require(variant, "variant");
        config->config.vqa.variant = poem::net::parse_variant(variant);
    });
}

poem_status poem_config_to_json(const poem_config* config, char** out_json) {
    return guarded([&] {
        require(config, "config");
        require(out_json, "out_json");
        *out_json = dup_string(poem::io::config_to_json(config->config).dump(2));
    });
}

void poem_config_free(poem_config* config) { delete config; }

poem_status poem_dataset_generate(const poem_config* config, poem_dataset** out) {
    return guarded([&] {
        require(config, "config");
        require(out, "out");
        auto d = std::make_unique<poem_dataset>();
        d->dataset = poem::pipeline::build_dataset(config->config);
        d->config = config->config;
        *out = d.release();
    });
}

poem_status poem_dataset_save(const poem_dataset* dataset, const char* dir) {
    return guarded([&] {
        require(dataset, "dataset");
        require(dir, "dir");
        poem::io::save_dataset(dir, dataset->dataset, dataset->config);
    });
}

poem_status poem_dataset_load(const char* dir, poem_dataset** out) {
    return guarded([&] {
        require(dir, "dir");
        require(out, "out");
        auto d = std::make_unique<poem_dataset>();
        d->dataset = poem::io::load_dataset(dir, &d->config);
        *out = d.release();
    });
}

poem_status poem_dataset_config(const poem_dataset* dataset, poem_config** out) {
    return guarded([&] {
        require(dataset, "dataset");
        require(out, "out");
        *out = new poem_config{dataset->config};
    });
}

poem_status poem_dataset_summary(const poem_dataset* dataset, char** out_json) {
    return guarded([&] {
        require(dataset, "dataset");
        require(out_json, "out_json");
        const auto& ds = dataset->dataset;
        std::map<std::string, int> tags;
        for (const auto& qa : ds.instances) {
            for (const auto& t : qa.tags) ++tags[t];
        }
        const json doc = {{"scenes", ds.scenes.size()},
                          {"val_scenes", ds.val_scene_ids.size()},
                          {"instances", ds.instances.size()},
                          {"tags", tags},
                          {"novel_categories", ds.novel_categories}};
        *out_json = dup_string(with_run(doc, dataset->config).dump(2));
    });
}

void poem_dataset_free(poem_dataset* dataset) { delete dataset; }

poem_status poem_bank_train(const poem_config* config, const poem_dataset* dataset, poem_bank** out) {
    return guarded([&] {
        require(config, "config");
        require(dataset, "dataset");
        require(out, "out");
        auto run = poem::pipeline::train_bank(config->config, dataset->dataset);
        *out = new poem_bank{{std::move(run.bank), config->config, std::move(run.history)}};
    });
}

poem_status poem_bank_save(const poem_bank* bank, const char* path) {
    return guarded([&] {
        require(bank, "bank");
        require(path, "path");
        poem::io::save_bank(path, bank->file);
    });
}

poem_status poem_bank_load(const char* path, poem_bank** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        *out = new poem_bank{poem::io::load_bank(path)};
    });
}

poem_status poem_bank_info(const poem_bank* bank, char** out_json) {
    return guarded([&] {
        require(bank, "bank");
        require(out_json, "out_json");
        const auto& b = bank->file.bank;
        const json doc = {{"prototypes", b.size()},   {"dim", b.dim()},          {"origin", b.origin},
                          {"selected_epoch", b.epoch}, {"val_f1", b.metric},     {"categories", b.categories},
                          {"history", bank->file.history}};
        *out_json = dup_string(with_run(doc, bank->file.config).dump(2));
    });
}

void poem_bank_free(poem_bank* bank) { delete bank; }

poem_status poem_model_train(const poem_config* config, const poem_dataset* dataset, const poem_bank* bank,
                             poem_model** out) {
    return guarded([&] {
        require(config, "config");
        require(dataset, "dataset");
        require(out, "out");
        auto run = poem::pipeline::train_model(config->config, dataset->dataset, bank ? &bank->file.bank : nullptr);
        *out = new poem_model{{std::move(run.network), config->config, std::move(run.history)}};
    });
}

poem_status poem_model_save(const poem_model* model, const char* path) {
    return guarded([&] {
        require(model, "model");
        require(path, "path");
        poem::io::save_model(path, model->file);
    });
}

poem_status poem_model_load(const char* path, poem_model** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        *out = new poem_model{poem::io::load_model(path)};
    });
}

poem_status poem_model_info(const poem_model* model, char** out_json) {
    return guarded([&] {
        require(model, "model");
        require(out_json, "out_json");
        const auto& n = model->file.network;
        const json doc = {{"variant", poem::net::variant_name(n.config.variant)},
                          {"words", n.words.size()},
                          {"answers", n.answers.size()},
                          {"prototypes", n.num_prototypes},
                          {"bank_origin", n.bank_origin},
                          {"history", model->file.history}};
        *out_json = dup_string(with_run(doc, model->file.config).dump(2));
    });
}

void poem_model_free(poem_model* model) { delete model; }

poem_status poem_evaluate(const poem_model* model, const poem_dataset* dataset, char** out_json) {
    return guarded([&] {
        require(model, "model");
        require(dataset, "dataset");
        require(out_json, "out_json");
        const auto report = poem::pipeline::evaluate(model->file.network, dataset->dataset);
        json doc = poem::analysis::metrics_json(report);
        doc["variant"] = poem::net::variant_name(model->file.network.config.variant);
        *out_json = dup_string(with_run(doc, model->file.config).dump(2));
    });
}

poem_status poem_cluster(const poem_bank* bank, const poem_dataset* dataset, int k, char** out_json) {
    return guarded([&] {
        require(bank, "bank");
        require(dataset, "dataset");
        require(out_json, "out_json");
        const auto run = poem::pipeline::cluster_bank(bank->file.config, dataset->dataset, bank->file.bank, k);
        *out_json = dup_string(with_run(poem::pipeline::cluster_json(run), bank->file.config).dump(2));
    });
}

poem_status poem_trace(const poem_model* model, const poem_dataset* dataset, size_t count, char** out_json) {
    return guarded([&] {
        require(model, "model");
        require(dataset, "dataset");
        require(out_json, "out_json");
        json docs = json::array();
        for (std::size_t i : poem::pipeline::validation_indices(dataset->dataset, count)) {
            docs.push_back(with_run(poem::pipeline::trace_instance(model->file.network, dataset->dataset, i),
                                    model->file.config));
        }
        *out_json = dup_string(docs.dump(2));
    });
}

}  // extern "C"
