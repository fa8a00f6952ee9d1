#include "poem/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "poem/error.hpp"
#include "poem/rng.hpp"

namespace poem::analysis {

using t::Tensor;

std::optional<double> delta_gap(double acc_head, double acc_tail) {
    if (!(acc_tail > 0.0)) return std::nullopt;
    return 100.0 * (acc_head - acc_tail) / acc_tail;
}

MetricsReport compute_metrics(const world::Dataset& dataset, const std::vector<Prediction>& predictions) {
    std::map<std::size_t, const std::string*> by_instance;
    for (const auto& p : predictions) {
        if (p.instance >= dataset.instances.size()) {
            fail(ErrorCode::invalid_argument, "prediction for unknown instance " + std::to_string(p.instance));
        }
        by_instance[p.instance] = &p.answer;
    }
    MetricsReport report;
    for (std::size_t i = 0; i < dataset.instances.size(); ++i) {
        const auto& qa = dataset.instances[i];
        if (!qa.has_tag("val")) continue;
        auto it = by_instance.find(i);
        if (it == by_instance.end()) {
            fail(ErrorCode::missing_prediction,
                 "no prediction for validation instance " + std::to_string(i) + " (scene " + qa.scene_id + ")");
        }
        const bool correct = *it->second == qa.answer;
        report.overall.total += 1;
        report.overall.correct += correct;
        for (const auto& tag : kMetricTags) {
            if (!qa.has_tag(tag)) continue;
            auto& g = report.groups[tag];
            g.total += 1;
            g.correct += correct;
        }
    }
    auto head = report.groups.find("head");
    auto tail = report.groups.find("tail");
    if (head != report.groups.end() && tail != report.groups.end()) {
        report.delta = delta_gap(head->second.accuracy(), tail->second.accuracy());
    }
    return report;
}

nlohmann::json metrics_json(const MetricsReport& report) {
    auto group = [](const GroupAccuracy& g) {
        return nlohmann::json{{"accuracy", g.accuracy()}, {"correct", g.correct}, {"total", g.total}};
    };
    nlohmann::json out;
    out["overall"] = group(report.overall);
    out["groups"] = nlohmann::json::object();
    for (const auto& [tag, g] : report.groups) out["groups"][tag] = group(g);
    out["delta"] = report.delta ? nlohmann::json(*report.delta) : nlohmann::json(nullptr);
    return out;
}

RelevanceTable average_relevance(const world::Dataset& dataset, const protos::PrototypeBank& bank) {
    const world::Vocabulary vocab(dataset.config);
    const int K = bank.size();
    std::map<std::string, std::vector<double>> sums;
    std::map<std::string, int> counts;
    for (const auto& scene : dataset.scenes) {
        if (!dataset.is_val_scene(scene.id)) continue;
        const Tensor alpha = protos::relevance_scores(dataset.feature(scene.id), bank.P);
        for (std::size_t i = 0; i < scene.objects.size(); ++i) {
            auto& s = sums[scene.objects[i].category];
            s.resize(static_cast<std::size_t>(K), 0.0);
            for (int k = 0; k < K; ++k) s[static_cast<std::size_t>(k)] += alpha.at(static_cast<int>(i), k);
            counts[scene.objects[i].category] += 1;
        }
    }
    RelevanceTable out;
    std::vector<float> rows;
    for (const auto& cat : vocab.categories()) {
        auto it = counts.find(cat);
        if (it == counts.end()) {
            out.excluded.push_back(cat);
            continue;
        }
        out.categories.push_back(cat);
        for (double v : sums[cat]) rows.push_back(static_cast<float>(v / it->second));
    }
    out.table = Tensor({static_cast<int>(out.categories.size()), K}, std::move(rows));
    return out;
}

namespace {

double sq_dist(const Tensor& points, int i, const std::vector<double>& c) {
    double d = 0.0;
    for (int j = 0; j < points.dim(1); ++j) {
        const double x = points.at(i, j) - c[static_cast<std::size_t>(j)];
        d += x * x;
    }
    return d;
}

std::vector<double> row_of(const Tensor& points, int i) {
    std::vector<double> r(static_cast<std::size_t>(points.dim(1)));
    for (int j = 0; j < points.dim(1); ++j) r[static_cast<std::size_t>(j)] = points.at(i, j);
    return r;
}

}  // namespace

ClusterResult kmeans_cluster(const Tensor& points, int k, std::uint64_t seed, int max_iters) {
    if (points.rank() != 2) fail(ErrorCode::shape_mismatch, "k-means expects a matrix of points");
    const int n = points.dim(0);
    if (k < 1 || max_iters < 1) fail(ErrorCode::invalid_argument, "k and max_iters must be positive");
    if (k > n) {
        fail(ErrorCode::invalid_argument, "k=" + std::to_string(k) + " exceeds the " + std::to_string(n) + " points");
    }

    // k-means++ seeding.
    Rng rng(seed);
    std::vector<std::vector<double>> centers;
    centers.push_back(row_of(points, static_cast<int>(rng.index(static_cast<std::size_t>(n)))));
    std::vector<double> nearest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    while (static_cast<int>(centers.size()) < k) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            auto& d = nearest[static_cast<std::size_t>(i)];
            d = std::min(d, sq_dist(points, i, centers.back()));
            total += d;
        }
        int pick = 0;
        if (total > 0.0) {
            double r = rng.uniform() * total;
            pick = n - 1;
            for (int i = 0; i < n; ++i) {
                r -= nearest[static_cast<std::size_t>(i)];
                if (r < 0.0 && nearest[static_cast<std::size_t>(i)] > 0.0) {
                    pick = i;
                    break;
                }
            }
            while (nearest[static_cast<std::size_t>(pick)] == 0.0) --pick;
        } else {
            pick = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
        }
        centers.push_back(row_of(points, pick));
    }

    ClusterResult out;
    std::vector<int> assign(static_cast<std::size_t>(n), -1);
    std::vector<double> dist(static_cast<std::size_t>(n));
    for (int iter = 1; iter <= max_iters; ++iter) {
        bool changed = false;
        double inertia = 0.0;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bd = sq_dist(points, i, centers[0]);
            for (int c = 1; c < k; ++c) {
                const double d = sq_dist(points, i, centers[static_cast<std::size_t>(c)]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            changed = changed || assign[static_cast<std::size_t>(i)] != best;
            assign[static_cast<std::size_t>(i)] = best;
            dist[static_cast<std::size_t>(i)] = bd;
            inertia += bd;
        }
        out.inertia_history.push_back(inertia);
        out.iterations = iter;
        if (!changed || iter == max_iters) break;

        std::vector<std::vector<double>> sums(static_cast<std::size_t>(k),
                                              std::vector<double>(static_cast<std::size_t>(points.dim(1)), 0.0));
        std::vector<int> sizes(static_cast<std::size_t>(k), 0);
        for (int i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(assign[static_cast<std::size_t>(i)]);
            sizes[c] += 1;
            for (int j = 0; j < points.dim(1); ++j) sums[c][static_cast<std::size_t>(j)] += points.at(i, j);
        }
        for (int c = 0; c < k; ++c) {
            auto& center = centers[static_cast<std::size_t>(c)];
            if (sizes[static_cast<std::size_t>(c)] > 0) {
                for (std::size_t j = 0; j < center.size(); ++j) center[j] = sums[static_cast<std::size_t>(c)][j] / sizes[static_cast<std::size_t>(c)];
                continue;
            }
            // Empty cluster: take over the point farthest from its centroid
            // among clusters that can spare one.
            int far = -1;
            for (int i = 0; i < n; ++i) {
                if (sizes[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])] < 2) continue;
                if (far < 0 || dist[static_cast<std::size_t>(i)] > dist[static_cast<std::size_t>(far)]) far = i;
            }
            if (far < 0) continue;
            sizes[static_cast<std::size_t>(assign[static_cast<std::size_t>(far)])] -= 1;
            sizes[static_cast<std::size_t>(c)] = 1;
            assign[static_cast<std::size_t>(far)] = c;
            dist[static_cast<std::size_t>(far)] = 0.0;
            center = row_of(points, far);
        }
    }
    out.assignment = assign;
    out.inertia = out.inertia_history.back();
    std::vector<float> flat;
    for (const auto& c : centers) {
        for (double v : c) flat.push_back(static_cast<float>(v));
    }
    out.centroids = Tensor({k, points.dim(1)}, std::move(flat));
    return out;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) fail(ErrorCode::invalid_argument, "partitions have different sizes");
    auto pairs = [](double x) { return x * (x - 1.0) / 2.0; };
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> ra, rb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        joint[{a[i], b[i]}] += 1.0;
        ra[a[i]] += 1.0;
        rb[b[i]] += 1.0;
    }
    double index = 0.0, sa = 0.0, sb = 0.0;
    for (const auto& kv : joint) index += pairs(kv.second);
    for (const auto& kv : ra) sa += pairs(kv.second);
    for (const auto& kv : rb) sb += pairs(kv.second);
    const double total = pairs(static_cast<double>(a.size()));
    const double expected = total > 0.0 ? sa * sb / total : 0.0;
    const double max_index = 0.5 * (sa + sb);
    if (max_index == expected) return 1.0;
    return (index - expected) / (max_index - expected);
}

std::vector<RankedInstance> top_instances(const protos::PrototypeBank& bank, const world::Dataset& dataset,
                                          int prototype, std::size_t m) {
    if (prototype < 0 || prototype >= bank.size()) {
        fail(ErrorCode::invalid_argument, "prototype id " + std::to_string(prototype) + " out of range");
    }
    std::vector<RankedInstance> all;
    for (const auto& scene : dataset.scenes) {
        const Tensor alpha = protos::relevance_scores(dataset.feature(scene.id), bank.P);
        for (std::size_t i = 0; i < scene.objects.size(); ++i) {
            all.push_back({scene.id, static_cast<int>(i), scene.objects[i].label(), alpha.at(static_cast<int>(i), prototype)});
        }
    }
    auto order = [](const RankedInstance& x, const RankedInstance& y) {
        if (x.score != y.score) return x.score > y.score;
        if (x.scene_id != y.scene_id) return x.scene_id < y.scene_id;
        return x.index < y.index;
    };
    const std::size_t keep = std::min(m, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), order);
    all.resize(keep);
    return all;
}

nlohmann::json trace_document(const net::ReasoningTrace& trace, const world::QAInstance& qa, std::size_t top) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& st : trace.steps) {
        if (st.attention.size() != qa.objects.size()) {
            fail(ErrorCode::shape_mismatch, "trace attention covers " + std::to_string(st.attention.size()) +
                                                " objects, the question's scene has " + std::to_string(qa.objects.size()));
        }
        nlohmann::json attention = nlohmann::json::array();
        for (std::size_t i = 0; i < qa.objects.size(); ++i) {
            attention.push_back({{"index", i}, {"object", qa.objects[i].label()}, {"weight", st.attention[i]}});
        }
        nlohmann::json protos = nlohmann::json::array();
        if (st.summary) {
            std::vector<int> ids(st.summary->size());
            std::iota(ids.begin(), ids.end(), 0);
            const auto& p = *st.summary;
            std::stable_sort(ids.begin(), ids.end(), [&](int x, int y) {
                return p[static_cast<std::size_t>(x)] > p[static_cast<std::size_t>(y)];
            });
            for (std::size_t r = 0; r < std::min(top, ids.size()); ++r) {
                protos.push_back({{"id", ids[r]}, {"score", p[static_cast<std::size_t>(ids[r])]}});
            }
        }
        steps.push_back({{"module", st.module},
                         {"args", st.args},
                         {"stack_depth", st.stack_depth},
                         {"attention", attention},
                         {"prototypes", protos}});
    }
    nlohmann::json doc;
    doc["scene_id"] = qa.scene_id;
    doc["question"] = qa.question_tokens;
    doc["steps"] = steps;
    doc["memory_weights"] = trace.memory_weights ? nlohmann::json(trace.memory_weights->values()) : nlohmann::json(nullptr);
    doc["predicted"] = trace.predicted;
    doc["gold"] = qa.answer;
    return doc;
}

void write_json(const std::string& path, const nlohmann::json& doc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::io, "cannot open '" + path + "' for writing");
    out << doc.dump(2) << '\n';
    if (!out) fail(ErrorCode::io, "failed writing '" + path + "'");
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::missing_input, "cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::corrupt_header, "'" + path + "' is not valid JSON: " + e.what());
    }
}

}  // namespace poem::analysis
