#include "poem/pipeline.hpp"

#include <algorithm>

#include "poem/error.hpp"
#include "poem/rng.hpp"

namespace poem::pipeline {

world::Dataset build_dataset(const io::RunConfig& config) {
    world::Dataset ds = world::generate_dataset(config.world, config.seed);
    const world::Vocabulary vocab(config.world);
    std::set<std::string> novel(config.split.novel_categories.begin(), config.split.novel_categories.end());
    if (novel.empty() && config.split.novel_count > 0) {
        novel = world::choose_novel_categories(vocab, config.split.novel_count, derive_seed(config.seed, novel_split));
    }
    if (!novel.empty()) world::build_zero_shot_split(ds, novel);
    world::build_ood_labels(ds, config.split.tail_mass);
    return ds;
}

std::vector<std::string> known_categories(const world::Dataset& dataset) {
    const world::Vocabulary vocab(dataset.config);
    std::vector<std::string> out;
    for (const auto& c : vocab.categories()) {
        if (!dataset.novel_categories.count(c)) out.push_back(c);
    }
    return out;
}

protos::ProtoConfig bank_config(const io::RunConfig& config, const world::Dataset& dataset) {
    protos::ProtoConfig pc = config.protos;
    if (config.vqa.variant == net::Variant::object) pc.kind = protos::BankKind::object;
    if (pc.kind == protos::BankKind::object) pc.num_prototypes = static_cast<int>(known_categories(dataset).size());
    return pc;
}

BankRun train_bank(const io::RunConfig& config, const world::Dataset& dataset) {
    const auto cats = known_categories(dataset);
    const protos::ProtoConfig pc = bank_config(config, dataset);
    protos::ProtoModel model =
        protos::init_proto_model(dataset.config.feature_dim, cats, pc, derive_seed(config.seed, bank_init));
    const auto train = protos::make_proto_data(dataset, world::split_scenes(dataset, false, true), cats);
    const auto val = protos::make_proto_data(dataset, world::split_scenes(dataset, true, true), cats);
    const auto hist = protos::train_prototypes(model, train, val, derive_seed(config.seed, bank_train));
    BankRun run;
    run.bank = protos::make_bank(model, protos::select_prototypes(hist));
    for (const auto& s : hist.epochs) {
        run.history.push_back({{"epoch", s.epoch}, {"train_loss", s.train_loss}, {"val_f1", s.val_f1}});
    }
    return run;
}

ModelRun train_model(const io::RunConfig& config, const world::Dataset& dataset, const protos::PrototypeBank* bank) {
    const net::Variant v = config.vqa.variant;
    std::optional<protos::PrototypeBank> textual;
    if (v == net::Variant::textual) {
        const world::Vocabulary vocab(dataset.config);
        const world::Embedder emb(vocab, dataset.config.feature_dim, dataset.config.embedder_seed);
        textual = protos::textual_bank(emb, vocab);
        bank = &*textual;
    } else if (v == net::Variant::scratch || v == net::Variant::xnm_baseline) {
        bank = nullptr;
    } else {
        if (!bank) fail(ErrorCode::missing_input, std::string(net::variant_name(v)) + " variant needs a prototype bank");
        const bool want_object = v == net::Variant::object;
        if ((bank->origin == "object") != want_object || bank->origin == "textual") {
            fail(ErrorCode::invalid_config, std::string(net::variant_name(v)) + " variant cannot use a bank of origin '" +
                                                bank->origin + "'");
        }
        if (bank->dim() != dataset.config.feature_dim) {
            fail(ErrorCode::invalid_config, "bank dimension does not match the dataset features");
        }
    }
    ModelRun run{net::make_network(config.vqa, dataset, bank, derive_seed(config.seed, net_init)), json::array()};
    const auto hist = net::train_vqa(run.network, dataset, derive_seed(config.seed, net_train));
    for (const auto& e : hist) {
        run.history.push_back(
            {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"train_acc", e.train_acc}, {"val_acc", e.val_acc}});
    }
    return run;
}

std::vector<analysis::Prediction> predict_validation(const net::Network& network, const world::Dataset& dataset) {
    std::vector<const world::QAInstance*> qs;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < dataset.instances.size(); ++i) {
        if (!dataset.instances[i].has_tag("val")) continue;
        qs.push_back(&dataset.instances[i]);
        idx.push_back(i);
    }
    const auto answers = net::predict(network, dataset, qs);
    std::vector<analysis::Prediction> out;
    out.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out.push_back({idx[i], answers[i]});
    return out;
}

analysis::MetricsReport evaluate(const net::Network& network, const world::Dataset& dataset) {
    return analysis::compute_metrics(dataset, predict_validation(network, dataset));
}

ClusterRun cluster_bank(const io::RunConfig& config, const world::Dataset& dataset, const protos::PrototypeBank& bank,
                        int k) {
    ClusterRun run;
    run.table = analysis::average_relevance(dataset, bank);
    const int n = static_cast<int>(run.table.categories.size());
    if (n < 2) fail(ErrorCode::invalid_argument, "clustering needs at least two categories with instances");
    if (k <= 0) k = config.analysis.cluster_k;
    if (k <= 0) k = std::min(8, n - 1);
    run.k = k;
    run.result = analysis::kmeans_cluster(run.table.table, k, derive_seed(config.seed, clustering),
                                          config.analysis.kmeans_iters);
    for (std::size_t i = 1; i < run.result.inertia_history.size(); ++i) {
        if (run.result.inertia_history[i] > run.result.inertia_history[i - 1]) run.monotone = false;
    }
    const world::Vocabulary vocab(dataset.config);
    std::map<std::string, int> super_id;
    std::vector<int> truth;
    for (const auto& c : run.table.categories) {
        const std::string& s = vocab.supercategory_of(c);
        run.supercategories.push_back(s);
        truth.push_back(super_id.emplace(s, static_cast<int>(super_id.size())).first->second);
    }
    run.ari = analysis::adjusted_rand_index(run.result.assignment, truth);
    return run;
}

json cluster_json(const ClusterRun& run) {
    json assign = json::object();
    for (std::size_t i = 0; i < run.table.categories.size(); ++i) {
        assign[run.table.categories[i]] = {{"cluster", run.result.assignment[i]},
                                           {"supercategory", run.supercategories[i]}};
    }
    const auto& c = run.result.centroids;
    json centroids = json::array();
    for (int r = 0; r < c.dim(0); ++r) {
        json row = json::array();
        for (int j = 0; j < c.dim(1); ++j) row.push_back(c.at(r, j));
        centroids.push_back(row);
    }
    return {{"k", run.k},
            {"assignment", assign},
            {"centroids", centroids},
            {"inertia", run.result.inertia},
            {"inertia_history", run.result.inertia_history},
            {"inertia_monotone", run.monotone},
            {"iterations", run.result.iterations},
            {"adjusted_rand_index", run.ari},
            {"excluded", run.table.excluded}};
}

json trace_instance(const net::Network& network, const world::Dataset& dataset, std::size_t instance) {
    if (instance >= dataset.instances.size()) fail(ErrorCode::invalid_argument, "instance index out of range");
    const auto& qa = dataset.instances[instance];
    const auto trace = net::run_program(network, qa.program, qa.question_tokens, dataset.feature(qa.scene_id));
    return analysis::trace_document(trace, qa);
}

std::vector<std::size_t> validation_indices(const world::Dataset& dataset, std::size_t count) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < dataset.instances.size() && out.size() < count; ++i) {
        if (dataset.instances[i].has_tag("val")) out.push_back(i);
    }
    return out;
}

}  // namespace poem::pipeline
