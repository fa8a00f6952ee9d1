#include "poem/world.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "poem/error.hpp"
#include "poem/rng.hpp"

namespace poem::world {

namespace {

const std::vector<std::string> kBaseCategories = {"cup", "fork",  "cat", "car", "mug",   "spoon",
                                                  "dog", "bus",   "bowl", "knife", "horse", "bike"};
const std::vector<std::string> kBaseSupercategories = {"container", "utensil", "animal", "vehicle"};
const std::vector<std::string> kBaseColors = {"red", "blue", "green", "yellow", "purple", "white"};
const std::vector<std::string> kBaseShapes = {"circle", "square", "triangle", "hexagon"};
const std::vector<std::string> kSizes = {"small", "large"};

std::vector<std::string> take_names(const std::vector<std::string>& base, int count, const std::string& stem) {
    std::vector<std::string> out;
    for (int i = 0; i < count; ++i) {
        out.push_back(i < static_cast<int>(base.size()) ? base[static_cast<std::size_t>(i)]
                                                        : stem + std::to_string(i + 1));
    }
    return out;
}

std::size_t type_index(AttrType type) { return static_cast<std::size_t>(type); }

std::size_t sample_value(Rng& rng, std::size_t n, double skew) {
    if (skew <= 0.0) return rng.index(n);
    std::vector<double> w(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = 1.0 / std::pow(static_cast<double>(i + 1), skew);
        total += w[i];
    }
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < n; ++i) {
        if (u < w[i]) return i;
        u -= w[i];
    }
    return n - 1;
}

}  // namespace

std::string_view attr_type_token(AttrType type) {
    switch (type) {
        case AttrType::category: return "category";
        case AttrType::supercategory: return "supercategory";
        case AttrType::color: return "color";
        case AttrType::size: return "size";
        case AttrType::shape: return "shape";
    }
    return "?";
}

std::optional<AttrType> parse_attr_type(std::string_view token) {
    for (AttrType t : kAttrTypes) {
        if (attr_type_token(t) == token) return t;
    }
    return std::nullopt;
}

std::string_view module_name(ModuleKind kind) {
    switch (kind) {
        case ModuleKind::find: return "Find";
        case ModuleKind::filter: return "Filter";
        case ModuleKind::relate: return "Relate";
        case ModuleKind::intersect: return "And";
        case ModuleKind::describe: return "Describe";
    }
    return "?";
}

std::optional<ModuleKind> parse_module(std::string_view name) {
    for (ModuleKind k : {ModuleKind::find, ModuleKind::filter, ModuleKind::relate, ModuleKind::intersect,
                         ModuleKind::describe}) {
        if (module_name(k) == name) return k;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------- vocabulary

Vocabulary::Vocabulary(const WorldConfig& config) {
    if (config.n_categories < 2 || config.n_supercategories < 1 || config.n_colors < 1 || config.n_shapes < 1) {
        fail(ErrorCode::invalid_config, "vocabulary sizes must be positive (and at least 2 categories)");
    }
    if (config.n_supercategories > config.n_categories) {
        fail(ErrorCode::invalid_config, "more supercategories than categories");
    }
    values_[type_index(AttrType::category)] = take_names(kBaseCategories, config.n_categories, "category");
    values_[type_index(AttrType::supercategory)] =
        take_names(kBaseSupercategories, config.n_supercategories, "group");
    values_[type_index(AttrType::color)] = take_names(kBaseColors, config.n_colors, "color");
    values_[type_index(AttrType::size)] = kSizes;
    values_[type_index(AttrType::shape)] = take_names(kBaseShapes, config.n_shapes, "shape");

    const auto& cats = values_[type_index(AttrType::category)];
    const auto& supers = values_[type_index(AttrType::supercategory)];
    for (std::size_t i = 0; i < cats.size(); ++i) super_of_[cats[i]] = supers[i % supers.size()];
    for (AttrType t : kAttrTypes) {
        for (const auto& v : values_[type_index(t)]) type_of_[v] = t;
    }
}

const std::vector<std::string>& Vocabulary::values(AttrType type) const { return values_[type_index(type)]; }

const std::string& Vocabulary::supercategory_of(const std::string& category) const {
    auto it = super_of_.find(category);
    if (it == super_of_.end()) fail(ErrorCode::unknown_token, "unknown category '" + category + "'");
    return it->second;
}

std::optional<AttrType> Vocabulary::type_of(const std::string& token) const {
    auto it = type_of_.find(token);
    if (it == type_of_.end()) return std::nullopt;
    return it->second;
}

std::vector<std::string> Vocabulary::value_tokens() const {
    std::vector<std::string> out;
    for (AttrType t : kAttrTypes) {
        for (const auto& v : values(t)) out.push_back(v);
    }
    return out;
}

// ---------------------------------------------------------------- objects

const std::string& ObjectSpec::attr(AttrType type) const {
    switch (type) {
        case AttrType::category: return category;
        case AttrType::supercategory: return supercategory;
        case AttrType::color: return color;
        case AttrType::size: return size;
        case AttrType::shape: return shape;
    }
    return category;
}

bool ObjectSpec::has_value(const std::string& token) const {
    return std::any_of(kAttrTypes.begin(), kAttrTypes.end(), [&](AttrType t) { return attr(t) == token; });
}

std::string ObjectSpec::label() const { return size + " " + color + " " + shape + " " + category; }

Scene gen_scene(const WorldConfig& config, const Vocabulary& vocab, std::uint64_t seed, std::string id) {
    if (config.min_objects < 2 || config.max_objects < config.min_objects) {
        fail(ErrorCode::invalid_config, "object count range must satisfy 2 <= min_objects <= max_objects");
    }
    Rng rng(seed);
    Scene scene;
    scene.id = std::move(id);
    const int n = config.min_objects + static_cast<int>(rng.index(static_cast<std::size_t>(config.max_objects - config.min_objects + 1)));
    constexpr int kPlacementTries = 1000;
    for (int i = 0; i < n; ++i) {
        ObjectSpec obj;
        const auto& cats = vocab.values(AttrType::category);
        obj.category = cats[sample_value(rng, cats.size(), config.value_skew)];
        obj.supercategory = vocab.supercategory_of(obj.category);
        const auto& colors = vocab.values(AttrType::color);
        obj.color = colors[sample_value(rng, colors.size(), config.value_skew)];
        const auto& sizes = vocab.values(AttrType::size);
        obj.size = sizes[sample_value(rng, sizes.size(), config.value_skew)];
        const auto& shapes = vocab.values(AttrType::shape);
        obj.shape = shapes[sample_value(rng, shapes.size(), config.value_skew)];
        bool placed = false;
        for (int attempt = 0; attempt < kPlacementTries && !placed; ++attempt) {
            obj.x = rng.uniform();
            obj.y = rng.uniform();
            placed = std::all_of(scene.objects.begin(), scene.objects.end(), [&](const ObjectSpec& other) {
                return std::hypot(obj.x - other.x, obj.y - other.y) >= config.min_separation;
            });
        }
        if (!placed) {
            fail(ErrorCode::infeasible_config, "cannot place " + std::to_string(n) + " objects with separation " +
                                                   std::to_string(config.min_separation));
        }
        scene.objects.push_back(std::move(obj));
    }
    return scene;
}

// ---------------------------------------------------------------- features

Embedder::Embedder(const Vocabulary& vocab, int dim, std::uint64_t seed) : dim_(dim) {
    if (dim < 3) fail(ErrorCode::invalid_config, "feature_dim must be at least 3");
    const auto tokens = vocab.value_tokens();
    const std::size_t free_dims = static_cast<std::size_t>(dim - 2);
    const bool orthonormal = tokens.size() <= free_dims;
    Rng rng(seed);
    std::vector<std::vector<double>> basis;
    for (const auto& token : tokens) {
        std::vector<double> v(free_dims);
        for (double& x : v) x = rng.normal();
        if (orthonormal) {
            for (const auto& b : basis) {
                double dot = 0.0;
                for (std::size_t i = 0; i < free_dims; ++i) dot += v[i] * b[i];
                for (std::size_t i = 0; i < free_dims; ++i) v[i] -= dot * b[i];
            }
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        for (double& x : v) x /= norm;
        basis.push_back(v);
        std::vector<float> out(static_cast<std::size_t>(dim), 0.0f);
        for (std::size_t i = 0; i < free_dims; ++i) out[i] = static_cast<float>(v[i]);
        table_.emplace(token, std::move(out));
    }
}

const std::vector<float>& Embedder::embedding(const std::string& token) const {
    auto it = table_.find(token);
    if (it == table_.end()) fail(ErrorCode::unknown_token, "no embedding for token '" + token + "'");
    return it->second;
}

tensor::Tensor synth_features(const Scene& scene, const Embedder& embedder, double noise_sigma,
                              std::uint64_t noise_seed, double position_scale) {
    const int n = static_cast<int>(scene.objects.size());
    const int d = embedder.dim();
    std::vector<double> rows(static_cast<std::size_t>(n) * d, 0.0);
    for (int i = 0; i < n; ++i) {
        const ObjectSpec& obj = scene.objects[static_cast<std::size_t>(i)];
        double* row = rows.data() + static_cast<std::size_t>(i) * d;
        for (AttrType t : kAttrTypes) {
            const auto& e = embedder.embedding(obj.attr(t));
            for (int j = 0; j < d; ++j) row[j] += e[static_cast<std::size_t>(j)];
        }
        row[d - 2] += position_scale * (obj.x - 0.5);
        row[d - 1] += position_scale * (obj.y - 0.5);
    }
    if (noise_sigma > 0.0) {
        Rng rng(noise_seed);
        for (double& v : rows) v += noise_sigma * rng.normal();
    }
    std::vector<float> data(rows.begin(), rows.end());
    return tensor::Tensor({n, d}, std::move(data));
}

// ---------------------------------------------------------------- oracle

bool relation_holds(std::string_view relation, const ObjectSpec& subject, const ObjectSpec& reference) {
    if (relation == "left-of") return subject.x < reference.x;
    if (relation == "right-of") return subject.x > reference.x;
    if (relation == "above") return subject.y > reference.y;
    if (relation == "below") return subject.y < reference.y;
    fail(ErrorCode::unknown_token, "unknown relation '" + std::string(relation) + "'");
}

void validate_program(const Program& program) {
    if (program.empty() || program.back().kind != ModuleKind::describe) {
        fail(ErrorCode::invalid_argument, "program must end with Describe");
    }
    for (std::size_t i = 0; i + 1 < program.size(); ++i) {
        if (program[i].kind == ModuleKind::describe) fail(ErrorCode::invalid_argument, "Describe must appear only as the final step");
    }
    for (const auto& step : program) {
        const std::size_t expected = step.kind == ModuleKind::intersect ? 0 : 1;
        if (step.args.size() != expected) {
            fail(ErrorCode::invalid_argument, std::string(module_name(step.kind)) + " expects " +
                                                  std::to_string(expected) + " argument(s)");
        }
    }
}

OracleRun oracle_run(const Program& program, const std::vector<ObjectSpec>& objects) {
    validate_program(program);
    OracleRun run;
    std::vector<std::set<int>> stack;
    const int n = static_cast<int>(objects.size());
    auto matching = [&](const std::string& token) {
        std::set<int> out;
        for (int i = 0; i < n; ++i) {
            if (objects[static_cast<std::size_t>(i)].has_value(token)) out.insert(i);
        }
        return out;
    };
    auto pop = [&](const char* who) {
        if (stack.empty()) fail(ErrorCode::stack_underflow, std::string(who) + " on an empty attention stack");
        std::set<int> top = std::move(stack.back());
        stack.pop_back();
        return top;
    };

    for (const auto& step : program) {
        switch (step.kind) {
            case ModuleKind::find:
                stack.push_back(matching(step.args[0]));
                run.sets.push_back(stack.back());
                break;
            case ModuleKind::filter: {
                std::set<int> top = pop("Filter");
                const std::set<int> m = matching(step.args[0]);
                std::set<int> out;
                std::set_intersection(top.begin(), top.end(), m.begin(), m.end(), std::inserter(out, out.end()));
                stack.push_back(out);
                run.sets.push_back(out);
                break;
            }
            case ModuleKind::relate: {
                std::set<int> top = pop("Relate");
                std::set<int> out;
                for (int j = 0; j < n; ++j) {
                    for (int i : top) {
                        if (relation_holds(step.args[0], objects[static_cast<std::size_t>(j)],
                                           objects[static_cast<std::size_t>(i)])) {
                            out.insert(j);
                            break;
                        }
                    }
                }
                stack.push_back(out);
                run.sets.push_back(out);
                break;
            }
            case ModuleKind::intersect: {
                std::set<int> b = pop("And");
                std::set<int> a = pop("And");
                std::set<int> out;
                std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(out, out.end()));
                stack.push_back(out);
                run.sets.push_back(out);
                break;
            }
            case ModuleKind::describe: {
                std::set<int> top = pop("Describe");
                run.sets.push_back(top);
                if (top.empty()) fail(ErrorCode::empty_set, "Describe: no referent");
                if (top.size() > 1) fail(ErrorCode::ambiguous, "Describe: " + std::to_string(top.size()) + " referents");
                const auto type = parse_attr_type(step.args[0]);
                if (!type) fail(ErrorCode::unknown_token, "Describe: unknown attribute type '" + step.args[0] + "'");
                run.answer = objects[static_cast<std::size_t>(*top.begin())].attr(*type);
                break;
            }
        }
    }
    return run;
}

std::string oracle_execute(const Program& program, const std::vector<ObjectSpec>& objects) {
    return oracle_run(program, objects).answer;
}

std::vector<std::string> render_question(const Program& program) {
    std::vector<std::vector<std::string>> phrases;
    auto pop = [&]() {
        if (phrases.empty()) fail(ErrorCode::stack_underflow, "render: empty phrase stack");
        auto p = std::move(phrases.back());
        phrases.pop_back();
        return p;
    };
    std::vector<std::string> out;
    for (const auto& step : program) {
        switch (step.kind) {
            case ModuleKind::find:
                phrases.push_back({step.args.at(0), "object"});
                break;
            case ModuleKind::filter: {
                auto top = pop();
                top.insert(top.begin(), step.args.at(0));
                phrases.push_back(std::move(top));
                break;
            }
            case ModuleKind::relate: {
                auto top = pop();
                std::vector<std::string> p = {"object", step.args.at(0), "the"};
                p.insert(p.end(), top.begin(), top.end());
                phrases.push_back(std::move(p));
                break;
            }
            case ModuleKind::intersect: {
                auto b = pop();
                auto a = pop();
                a.push_back("and");
                a.insert(a.end(), b.begin(), b.end());
                phrases.push_back(std::move(a));
                break;
            }
            case ModuleKind::describe: {
                auto top = pop();
                out = {"what", "is", "the", step.args.at(0), "of", "the"};
                out.insert(out.end(), top.begin(), top.end());
                break;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------- questions

namespace {

AttrType random_type(Rng& rng, const std::vector<AttrType>& exclude) {
    std::vector<AttrType> pool;
    for (AttrType t : kAttrTypes) {
        if (std::find(exclude.begin(), exclude.end(), t) == exclude.end()) pool.push_back(t);
    }
    return pool[rng.index(pool.size())];
}

// Describe type that is not read off the question: excludes the argument
// types and the supercategory when a category is given.
AttrType describe_type(Rng& rng, std::vector<AttrType> used) {
    if (std::find(used.begin(), used.end(), AttrType::category) != used.end()) used.push_back(AttrType::supercategory);
    return random_type(rng, used);
}

}  // namespace

QAInstance gen_question(const Scene& scene, const Vocabulary& vocab, std::uint64_t seed, int max_retries,
                        const std::vector<Program>& avoid) {
    (void)vocab;
    if (scene.objects.empty()) fail(ErrorCode::no_valid_question, "scene " + scene.id + " has no objects");
    Rng rng(seed);
    const auto& objs = scene.objects;
    for (int attempt = 0; attempt < max_retries; ++attempt) {
        const std::size_t tmpl = rng.index(4);
        const ObjectSpec& anchor = objs[rng.index(objs.size())];
        const AttrType a_type = random_type(rng, {});
        const std::string a = anchor.attr(a_type);
        Program program;
        program.push_back({ModuleKind::find, {a}});
        if (tmpl == 0) {
            program.push_back({ModuleKind::describe, {std::string(attr_type_token(describe_type(rng, {a_type})))}});
        } else if (tmpl == 1) {
            std::vector<const ObjectSpec*> found;
            for (const auto& o : objs) {
                if (o.has_value(a)) found.push_back(&o);
            }
            const ObjectSpec& other = *found[rng.index(found.size())];
            const AttrType b_type = random_type(rng, {a_type});
            program.push_back({ModuleKind::filter, {other.attr(b_type)}});
            program.push_back(
                {ModuleKind::describe, {std::string(attr_type_token(describe_type(rng, {a_type, b_type})))}});
        } else if (tmpl == 2) {
            const std::string rel(kRelations[rng.index(kRelations.size())]);
            program.push_back({ModuleKind::relate, {rel}});
            program.push_back({ModuleKind::describe, {std::string(attr_type_token(random_type(rng, {})))}});
        } else {
            const ObjectSpec& other = objs[rng.index(objs.size())];
            const AttrType b_type = random_type(rng, {a_type});
            program.push_back({ModuleKind::find, {other.attr(b_type)}});
            program.push_back({ModuleKind::intersect, {}});
            program.push_back(
                {ModuleKind::describe, {std::string(attr_type_token(describe_type(rng, {a_type, b_type})))}});
        }
        if (std::find(avoid.begin(), avoid.end(), program) != avoid.end()) continue;
        std::string answer;
        try {
            answer = oracle_execute(program, objs);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::empty_set || e.code() == ErrorCode::ambiguous) continue;
            throw;
        }
        QAInstance qa;
        qa.scene_id = scene.id;
        qa.objects = objs;
        qa.question_tokens = render_question(program);
        qa.program = std::move(program);
        qa.answer = std::move(answer);
        return qa;
    }
    fail(ErrorCode::no_valid_question,
         "no unambiguous question for scene " + scene.id + " after " + std::to_string(max_retries) + " tries");
}

// ---------------------------------------------------------------- dataset

const Scene& Dataset::scene(const std::string& id) const {
    for (const auto& s : scenes) {
        if (s.id == id) return s;
    }
    fail(ErrorCode::invalid_argument, "unknown scene '" + id + "'");
}

const tensor::Tensor& Dataset::feature(const std::string& id) const {
    auto it = features.find(id);
    if (it == features.end()) fail(ErrorCode::missing_input, "no features for scene '" + id + "'");
    return it->second;
}

Dataset generate_dataset(const WorldConfig& config, std::uint64_t seed) {
    const Vocabulary vocab(config);
    const Embedder embedder(vocab, config.feature_dim, config.embedder_seed);
    Dataset ds;
    ds.config = config;
    ds.seed = seed;
    const int total = config.train_scenes + config.val_scenes;
    for (int i = 0; i < total; ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "s%06d", i);
        const std::uint64_t scene_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
        Scene scene = gen_scene(config, vocab, scene_seed, id);
        const bool val = i >= config.train_scenes;
        ds.features.emplace(scene.id, synth_features(scene, embedder, config.noise_sigma, derive_seed(scene_seed, 0xfeed),
                                                     config.position_scale));
        std::vector<Program> used;
        for (int q = 0; q < config.questions_per_scene; ++q) {
            try {
                QAInstance qa = gen_question(scene, vocab, derive_seed(scene_seed, static_cast<std::uint64_t>(q) + 1),
                                             config.max_retries, used);
                used.push_back(qa.program);
                qa.tags.insert(val ? "val" : "train");
                ds.instances.push_back(std::move(qa));
            } catch (const Error& e) {
                if (e.code() != ErrorCode::no_valid_question) throw;
                break;
            }
        }
        if (val) ds.val_scene_ids.insert(scene.id);
        ds.scenes.push_back(std::move(scene));
    }
    return ds;
}

std::set<std::string> choose_novel_categories(const Vocabulary& vocab, int count, std::uint64_t seed) {
    std::vector<std::string> cats = vocab.categories();
    if (count <= 0 || count >= static_cast<int>(cats.size())) {
        fail(ErrorCode::invalid_config, "novel category count must be in [1, categories)");
    }
    Rng rng(seed);
    rng.shuffle(cats);
    return {cats.begin(), cats.begin() + count};
}

void build_zero_shot_split(Dataset& dataset, const std::set<std::string>& novel) {
    const Vocabulary vocab(dataset.config);
    if (novel.empty()) fail(ErrorCode::invalid_argument, "novel category set is empty");
    if (novel.size() >= vocab.categories().size()) {
        fail(ErrorCode::invalid_argument, "novel categories must be a strict subset of the vocabulary");
    }
    std::set<std::string> related;
    for (const auto& c : novel) {
        const auto& cats = vocab.categories();
        if (std::find(cats.begin(), cats.end(), c) == cats.end()) {
            fail(ErrorCode::unknown_token, "novel category '" + c + "' is not in the vocabulary");
        }
        related.insert(c);
        related.insert(vocab.supercategory_of(c));
    }
    auto mentions = [](const QAInstance& qa, const std::set<std::string>& words) {
        return std::any_of(qa.question_tokens.begin(), qa.question_tokens.end(),
                           [&](const std::string& t) { return words.count(t) != 0; });
    };
    auto is_novel_object = [&](const ObjectSpec& o) { return novel.count(o.category) != 0; };

    std::size_t remaining = 0;
    for (auto& qa : dataset.instances) {
        qa.tags.erase("known");
        qa.tags.erase("novel");
        if (qa.has_tag("train")) {
            const bool depicts = std::any_of(qa.objects.begin(), qa.objects.end(), is_novel_object);
            if (depicts || mentions(qa, related)) qa.tags.erase("train");
        }
        if (qa.has_tag("val")) {
            bool touches = mentions(qa, novel);
            if (!touches) {
                const OracleRun run = oracle_run(qa.program, qa.objects);
                for (const auto& s : run.sets) {
                    for (int i : s) touches = touches || is_novel_object(qa.objects[static_cast<std::size_t>(i)]);
                }
            }
            qa.tags.insert(touches ? "novel" : "known");
        }
        if (qa.has_tag("train")) ++remaining;
    }
    if (remaining == 0) fail(ErrorCode::empty_training_split, "zero-shot split removed every training instance");
    dataset.novel_categories = novel;
}

std::set<std::string> tail_answers(const std::map<std::string, int>& counts, double tail_mass) {
    std::vector<std::pair<std::string, int>> order(counts.begin(), counts.end());
    if (order.size() <= 1) return {};
    std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    double total = 0.0;
    for (const auto& kv : order) total += kv.second;
    std::set<std::string> tail;
    double cum = 0.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        cum += it->second;
        if (cum < tail_mass * total - 1e-9 * total) {
            tail.insert(it->first);
        } else {
            break;
        }
    }
    if (tail.empty()) tail.insert(order.back().first);
    return tail;
}

void build_ood_labels(Dataset& dataset, double tail_mass) {
    std::map<std::string, std::map<std::string, int>> counts;
    for (const auto& qa : dataset.instances) {
        const std::string& group = qa.program.back().args.at(0);
        auto& c = counts[group][qa.answer];
        if (qa.has_tag("train")) ++c;
    }
    std::map<std::string, std::set<std::string>> tails;
    for (const auto& [group, c] : counts) tails[group] = tail_answers(c, tail_mass);
    for (auto& qa : dataset.instances) {
        qa.tags.erase("head");
        qa.tags.erase("tail");
        if (!qa.has_tag("val")) continue;
        const auto& tail = tails[qa.program.back().args.at(0)];
        qa.tags.insert(tail.count(qa.answer) ? "tail" : "head");
    }
}

std::vector<const Scene*> split_scenes(const Dataset& dataset, bool val, bool known_only) {
    std::vector<const Scene*> out;
    for (const auto& s : dataset.scenes) {
        if (dataset.is_val_scene(s.id) != val) continue;
        if (known_only && std::any_of(s.objects.begin(), s.objects.end(), [&](const ObjectSpec& o) {
                return dataset.novel_categories.count(o.category) != 0;
            })) {
            continue;
        }
        out.push_back(&s);
    }
    return out;
}

}  // namespace poem::world
