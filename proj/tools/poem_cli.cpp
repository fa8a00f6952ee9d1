// Command-line driver over the libpoem C API.
//
//   poem gen          --out W [--profile desk|paper] [--config c.json] [--seed N]
//   poem train-protos --out W [--data D] [--config c.json] [--seed N]
//   poem train-vqa    --out W [--variant V] [--bank B] [--data D] [--config c.json] [--seed N]
//   poem eval         --out W [--variant V] [--model M] [--data D]
//   poem cluster      --out W [--bank B] [--data D] [--k K]
//   poem trace        --out W [--variant V] [--model M] [--data D] [--count N]
//
// Every subcommand works inside the workspace W: the dataset lives in
// W/dataset, the bank in W/bank.poem, models in W/model-<variant>.poem.
// Failures print one JSON error record on stderr and exit with the status
// code.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "poem/poem.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliError {
    poem_status status;
    std::string message;
};

void check(poem_status s) {
    if (s != POEM_OK) throw CliError{s, poem_last_error()};
}

// Owning wrapper for C handles.
template <class T, void (*Free)(T*)>
class Handle {
public:
    Handle() = default;
    Handle(const Handle&) = delete;
    Handle& operator=(const Handle&) = delete;
    ~Handle() {
        if (p_) Free(p_);
    }
    T** out() { return &p_; }
    T* get() const { return p_; }

private:
    T* p_ = nullptr;
};

using Config = Handle<poem_config, poem_config_free>;
using Dataset = Handle<poem_dataset, poem_dataset_free>;
using Bank = Handle<poem_bank, poem_bank_free>;
using Model = Handle<poem_model, poem_model_free>;

std::string take(char* s) {
    std::string out(s ? s : "");
    poem_string_free(s);
    return out;
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CliError{POEM_MISSING_INPUT, "cannot open '" + path + "'"};
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CliError{POEM_IO, "cannot write '" + path.string() + "'"};
    out << text << "\n";
    if (!out) throw CliError{POEM_IO, "failed writing '" + path.string() + "'"};
}

void require_file(const fs::path& path, const char* what) {
    if (!fs::exists(path)) {
        throw CliError{POEM_MISSING_INPUT, std::string(what) + " not found at '" + path.string() + "'"};
    }
}

struct Options {
    std::string out;
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string profile;
    std::string variant = "full";
    std::string data;
    std::string bank;
    std::string model;
    int k = 0;
    std::size_t count = 5;

    fs::path data_dir() const { return data.empty() ? fs::path(out) / "dataset" : fs::path(data); }
    fs::path bank_path() const { return bank.empty() ? fs::path(out) / "bank.poem" : fs::path(bank); }
    fs::path model_path() const {
        return model.empty() ? fs::path(out) / ("model-" + variant + ".poem") : fs::path(model);
    }
};

void load_dataset(const Options& o, Dataset& ds) {
    require_file(o.data_dir() / "features.poem", "dataset");
    check(poem_dataset_load(o.data_dir().string().c_str(), ds.out()));
}

// The dataset's embedded configuration with command-line overrides.
void run_config(const Options& o, const Dataset& ds, Config& cfg) {
    check(poem_dataset_config(ds.get(), cfg.out()));
    if (!o.profile.empty()) {
        const json embedded = json::parse(take([&] {
            char* s = nullptr;
            check(poem_config_to_json(cfg.get(), &s));
            return s;
        }()));
        if (embedded["profile"] != o.profile) {
            throw CliError{POEM_INVALID_CONFIG, "dataset was generated with profile " + embedded["profile"].dump() +
                                                    ", not '" + o.profile + "'"};
        }
    }
    if (!o.config_path.empty()) check(poem_config_overlay(cfg.get(), read_text(o.config_path).c_str()));
    if (o.seed) check(poem_config_set_seed(cfg.get(), *o.seed));
    check(poem_config_set_variant(cfg.get(), o.variant.c_str()));
}

void cmd_gen(const Options& o) {
    Config cfg;
    const std::string overlay = o.config_path.empty() ? std::string() : read_text(o.config_path);
    check(poem_config_create(o.profile.empty() ? nullptr : o.profile.c_str(), overlay.empty() ? nullptr : overlay.c_str(),
                             cfg.out()));
    if (!o.profile.empty() && !overlay.empty()) {
        const json doc = json::parse(overlay, nullptr, false);
        if (doc.is_object() && doc.contains("profile") && doc["profile"] != o.profile) {
            throw CliError{POEM_INVALID_CONFIG, "--profile disagrees with the profile in " + o.config_path};
        }
    }
    if (o.seed) check(poem_config_set_seed(cfg.get(), *o.seed));
    Dataset ds;
    check(poem_dataset_generate(cfg.get(), ds.out()));
    check(poem_dataset_save(ds.get(), o.data_dir().string().c_str()));
    char* summary = nullptr;
    check(poem_dataset_summary(ds.get(), &summary));
    const std::string text = take(summary);
    write_text(fs::path(o.out) / "dataset.json", text);
    std::cout << text << "\n";
}

void cmd_train_protos(const Options& o) {
    Dataset ds;
    load_dataset(o, ds);
    Config cfg;
    run_config(o, ds, cfg);
    Bank bank;
    check(poem_bank_train(cfg.get(), ds.get(), bank.out()));
    check(poem_bank_save(bank.get(), o.bank_path().string().c_str()));
    char* info = nullptr;
    check(poem_bank_info(bank.get(), &info));
    const json doc = json::parse(take(info));
    write_text(fs::path(o.out) / "bank.json", doc.dump(2));
    std::cout << "bank: " << doc["prototypes"] << " prototypes, epoch " << doc["selected_epoch"] << ", val micro-F1 "
              << doc["val_f1"] << "\n";
}

void cmd_train_vqa(const Options& o) {
    Dataset ds;
    load_dataset(o, ds);
    Config cfg;
    run_config(o, ds, cfg);
    Bank bank;
    if (fs::exists(o.bank_path())) {
        check(poem_bank_load(o.bank_path().string().c_str(), bank.out()));
    } else if (!o.bank.empty()) {
        require_file(o.bank_path(), "bank");
    }
    Model model;
    check(poem_model_train(cfg.get(), ds.get(), bank.get(), model.out()));
    check(poem_model_save(model.get(), o.model_path().string().c_str()));
    char* info = nullptr;
    check(poem_model_info(model.get(), &info));
    const json doc = json::parse(take(info));
    write_text(fs::path(o.out) / ("model-" + o.variant + ".json"), doc.dump(2));
    const auto& last = doc["history"].empty() ? json::object() : doc["history"].back();
    std::cout << "model " << o.variant << ": " << doc["history"].size() << " epochs, val acc "
              << last.value("val_acc", 0.0) << "\n";
}

void cmd_eval(const Options& o) {
    require_file(o.model_path(), "model checkpoint");
    Dataset ds;
    load_dataset(o, ds);
    Model model;
    check(poem_model_load(o.model_path().string().c_str(), model.out()));
    char* report = nullptr;
    check(poem_evaluate(model.get(), ds.get(), &report));
    const std::string text = take(report);
    write_text(fs::path(o.out) / ("metrics-" + o.variant + ".json"), text);
    std::cout << text << "\n";
}

void cmd_cluster(const Options& o) {
    require_file(o.bank_path(), "bank");
    Dataset ds;
    load_dataset(o, ds);
    Bank bank;
    check(poem_bank_load(o.bank_path().string().c_str(), bank.out()));
    char* report = nullptr;
    check(poem_cluster(bank.get(), ds.get(), o.k, &report));
    const json doc = json::parse(take(report));
    write_text(fs::path(o.out) / "clusters.json", doc.dump(2));
    std::cout << "k " << doc["k"] << ", adjusted Rand index " << doc["adjusted_rand_index"] << ", inertia "
              << doc["inertia"] << "\n";
}

void cmd_trace(const Options& o) {
    require_file(o.model_path(), "model checkpoint");
    Dataset ds;
    load_dataset(o, ds);
    Model model;
    check(poem_model_load(o.model_path().string().c_str(), model.out()));
    char* traces = nullptr;
    check(poem_trace(model.get(), ds.get(), o.count, &traces));
    const json docs = json::parse(take(traces));
    for (std::size_t i = 0; i < docs.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "trace-%03zu.json", i);
        write_text(fs::path(o.out) / "traces" / name, docs[i].dump(2));
    }
    std::cout << docs.size() << " traces written to " << (fs::path(o.out) / "traces").string() << "\n";
}

int report(poem_status status, const std::string& message) {
    const json record = {{"error", {{"code", poem_status_name(status)}, {"status", static_cast<int>(status)}, {"message", message}}}};
    std::cerr << record.dump() << "\n";
    return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Prototype memory VQA toolkit"};
    app.require_subcommand(1);
    Options o;

    auto common = [&o](CLI::App* sub) {
        sub->add_option("--out", o.out, "Workspace directory")->required();
        sub->add_option("--config", o.config_path, "JSON config overlay");
        sub->add_option("--seed", o.seed, "Run seed");
        sub->add_option("--profile", o.profile, "Named profile")->check(CLI::IsMember({"desk", "paper"}));
        sub->add_option("--data", o.data, "Dataset directory (default <out>/dataset)");
    };
    auto variant = [&o](CLI::App* sub) {
        sub->add_option("--variant", o.variant, "Network variant")
            ->check(CLI::IsMember({"full", "scratch", "object", "textual", "poem-ind", "no-mem", "xnm-baseline"}));
    };

    CLI::App* gen = app.add_subcommand("gen", "Generate a dataset");
    common(gen);
    CLI::App* protos = app.add_subcommand("train-protos", "Train the prototype bank");
    common(protos);
    variant(protos);
    protos->add_option("--bank", o.bank, "Output bank path (default <out>/bank.poem)");
    CLI::App* vqa = app.add_subcommand("train-vqa", "Train a VQA network");
    common(vqa);
    variant(vqa);
    vqa->add_option("--bank", o.bank, "Prototype bank (default <out>/bank.poem)");
    vqa->add_option("--model", o.model, "Output checkpoint (default <out>/model-<variant>.poem)");
    CLI::App* eval = app.add_subcommand("eval", "Evaluate a trained network");
    common(eval);
    variant(eval);
    eval->add_option("--model", o.model, "Checkpoint (default <out>/model-<variant>.poem)");
    CLI::App* cluster = app.add_subcommand("cluster", "Cluster categories by prototype relevance");
    common(cluster);
    cluster->add_option("--bank", o.bank, "Prototype bank (default <out>/bank.poem)");
    cluster->add_option("--k", o.k, "Number of clusters (default from config)");
    CLI::App* trace = app.add_subcommand("trace", "Export reasoning traces");
    common(trace);
    variant(trace);
    trace->add_option("--model", o.model, "Checkpoint (default <out>/model-<variant>.poem)");
    trace->add_option("--count", o.count, "Validation questions to trace");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        if (argc > 1 && argv[1][0] != '-') {
            bool known = false;
            for (const CLI::App* sub : app.get_subcommands({})) known = known || sub->get_name() == argv[1];
            if (!known) return report(POEM_UNKNOWN_SUBCOMMAND, std::string("unknown subcommand '") + argv[1] + "'");
        }
        if (argc < 2) return report(POEM_UNKNOWN_SUBCOMMAND, "no subcommand given");
        return report(POEM_INVALID_ARGUMENT, e.what());
    }

    try {
        if (*gen) cmd_gen(o);
        if (*protos) cmd_train_protos(o);
        if (*vqa) cmd_train_vqa(o);
        if (*eval) cmd_eval(o);
        if (*cluster) cmd_cluster(o);
        if (*trace) cmd_trace(o);
    } catch (const CliError& e) {
        return report(e.status, e.message);
    } catch (const std::exception& e) {
        return report(POEM_INTERNAL, e.what());
    }
    return 0;
}
