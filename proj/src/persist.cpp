#include "poem/persist.hpp"

#include <bit>
#include <charconv>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "poem/error.hpp"

namespace poem::io {

using t::Tensor;

static_assert(std::endian::native == std::endian::little, "container payload assumes a little-endian host");

// ---------------------------------------------------------------- config

RunConfig profile_config(const std::string& profile) {
    RunConfig c;
    c.profile = profile;
    if (profile == "desk") return c;
    if (profile != "paper") fail(ErrorCode::invalid_config, "unknown profile '" + profile + "' (expected desk or paper)");
    c.world.n_categories = 40;
    c.world.n_supercategories = 8;
    c.world.n_colors = 8;
    c.world.n_shapes = 6;
    c.world.max_objects = 36;
    c.world.feature_dim = 128;
    c.protos.num_prototypes = 1000;
    c.vqa.num_prototypes = 1000;
    c.analysis.cluster_k = 30;
    return c;
}

namespace {

using Setter = std::function<void(const json&)>;
using Fields = std::map<std::string, Setter>;

Setter int_field(int& dst) {
    return [&dst](const json& v) {
        if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
        dst = v.get<int>();
    };
}

Setter u64_field(std::uint64_t& dst) {
    return [&dst](const json& v) {
        if (!v.is_number_unsigned()) throw std::invalid_argument("expected a non-negative integer");
        dst = v.get<std::uint64_t>();
    };
}

template <class F>
Setter real_field(F& dst) {
    return [&dst](const json& v) {
        if (!v.is_number()) throw std::invalid_argument("expected a number");
        dst = static_cast<F>(v.get<double>());
    };
}

Setter bool_field(bool& dst) {
    return [&dst](const json& v) {
        if (!v.is_boolean()) throw std::invalid_argument("expected true or false");
        dst = v.get<bool>();
    };
}

Setter string_field(std::string& dst) {
    return [&dst](const json& v) {
        if (!v.is_string()) throw std::invalid_argument("expected a string");
        dst = v.get<std::string>();
    };
}

void read_section(const json& j, const std::string& section, const Fields& fields) {
    if (!j.is_object()) fail(ErrorCode::invalid_config, "config section '" + section + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        auto it = fields.find(key);
        const std::string where = section.empty() ? key : section + "." + key;
        if (it == fields.end()) fail(ErrorCode::invalid_config, "unknown config key '" + where + "'");
        try {
            it->second(value);
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            fail(ErrorCode::invalid_config, "bad value for '" + where + "': " + e.what());
        }
    }
}

// Shortest decimal that reads back as the same float, so 4e-4f prints as 0.0004.
double shortest(float f) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, f);
    return std::strtod(std::string(buf, res.ptr).c_str(), nullptr);
}

json world_json(const world::WorldConfig& w) {
    return {{"n_categories", w.n_categories},
            {"n_supercategories", w.n_supercategories},
            {"n_colors", w.n_colors},
            {"n_shapes", w.n_shapes},
            {"min_objects", w.min_objects},
            {"max_objects", w.max_objects},
            {"min_separation", w.min_separation},
            {"feature_dim", w.feature_dim},
            {"noise_sigma", w.noise_sigma},
            {"position_scale", w.position_scale},
            {"train_scenes", w.train_scenes},
            {"val_scenes", w.val_scenes},
            {"questions_per_scene", w.questions_per_scene},
            {"max_retries", w.max_retries},
            {"embedder_seed", w.embedder_seed},
            {"value_skew", w.value_skew}};
}

Fields world_fields(world::WorldConfig& w) {
    return {{"n_categories", int_field(w.n_categories)},
            {"n_supercategories", int_field(w.n_supercategories)},
            {"n_colors", int_field(w.n_colors)},
            {"n_shapes", int_field(w.n_shapes)},
            {"min_objects", int_field(w.min_objects)},
            {"max_objects", int_field(w.max_objects)},
            {"min_separation", real_field(w.min_separation)},
            {"feature_dim", int_field(w.feature_dim)},
            {"noise_sigma", real_field(w.noise_sigma)},
            {"position_scale", real_field(w.position_scale)},
            {"train_scenes", int_field(w.train_scenes)},
            {"val_scenes", int_field(w.val_scenes)},
            {"questions_per_scene", int_field(w.questions_per_scene)},
            {"max_retries", int_field(w.max_retries)},
            {"embedder_seed", u64_field(w.embedder_seed)},
            {"value_skew", real_field(w.value_skew)}};
}

json protos_json(const protos::ProtoConfig& p) {
    return {{"num_prototypes", p.num_prototypes},
            {"epochs", p.epochs},
            {"lr", shortest(p.lr)},
            {"batch_size", p.batch_size},
            {"kind", protos::bank_kind_name(p.kind)},
            {"aggregation", protos::aggregation_name(p.aggregation)}};
}

Fields protos_fields(protos::ProtoConfig& p) {
    return {{"num_prototypes", int_field(p.num_prototypes)},
            {"epochs", int_field(p.epochs)},
            {"lr", real_field(p.lr)},
            {"batch_size", int_field(p.batch_size)},
            {"kind", [&p](const json& v) { p.kind = protos::parse_bank_kind(v.get<std::string>()); }},
            {"aggregation", [&p](const json& v) { p.aggregation = protos::parse_aggregation(v.get<std::string>()); }}};
}

json vqa_json(const net::NetConfig& n) {
    return {{"variant", net::variant_name(n.variant)},
            {"epochs", n.epochs},
            {"lr", shortest(n.lr)},
            {"batch_size", n.batch_size},
            {"embed_dim", n.embed_dim},
            {"hidden_dim", n.hidden_dim},
            {"relate_dim", n.relate_dim},
            {"answer_hidden", n.answer_hidden},
            {"num_prototypes", n.num_prototypes},
            {"finetune_prototypes", n.finetune_prototypes}};
}

Fields vqa_fields(net::NetConfig& n) {
    return {{"variant",
             [&n](const json& v) {
                 try {
                     n.variant = net::parse_variant(v.get<std::string>());
                 } catch (const Error& e) {
                     fail(ErrorCode::invalid_config, e.what());
                 }
             }},
            {"epochs", int_field(n.epochs)},
            {"lr", real_field(n.lr)},
            {"batch_size", int_field(n.batch_size)},
            {"embed_dim", int_field(n.embed_dim)},
            {"hidden_dim", int_field(n.hidden_dim)},
            {"relate_dim", int_field(n.relate_dim)},
            {"answer_hidden", int_field(n.answer_hidden)},
            {"num_prototypes", int_field(n.num_prototypes)},
            {"finetune_prototypes", bool_field(n.finetune_prototypes)}};
}

}  // namespace

json config_to_json(const RunConfig& c) {
    return {{"profile", c.profile},
            {"seed", c.seed},
            {"world", world_json(c.world)},
            {"protos", protos_json(c.protos)},
            {"vqa", vqa_json(c.vqa)},
            {"split",
             {{"novel_count", c.split.novel_count},
              {"novel_categories", c.split.novel_categories},
              {"tail_mass", c.split.tail_mass}}},
            {"analysis",
             {{"cluster_k", c.analysis.cluster_k},
              {"kmeans_iters", c.analysis.kmeans_iters},
              {"top_m", c.analysis.top_m}}}};
}

RunConfig config_from_json(const json& doc, const RunConfig& base) {
    RunConfig c = base;
    std::string profile = c.profile;
    read_section(doc, "",
                 {{"profile", string_field(profile)},
                  {"seed", u64_field(c.seed)},
                  {"world", [&c](const json& v) { read_section(v, "world", world_fields(c.world)); }},
                  {"protos", [&c](const json& v) { read_section(v, "protos", protos_fields(c.protos)); }},
                  {"vqa", [&c](const json& v) { read_section(v, "vqa", vqa_fields(c.vqa)); }},
                  {"split",
                   [&c](const json& v) {
                       read_section(v, "split",
                                    {{"novel_count", int_field(c.split.novel_count)},
                                     {"novel_categories",
                                      [&c](const json& x) {
                                          c.split.novel_categories = x.get<std::vector<std::string>>();
                                      }},
                                     {"tail_mass", real_field(c.split.tail_mass)}});
                   }},
                  {"analysis", [&c](const json& v) {
                       read_section(v, "analysis",
                                    {{"cluster_k", int_field(c.analysis.cluster_k)},
                                     {"kmeans_iters", int_field(c.analysis.kmeans_iters)},
                                     {"top_m", int_field(c.analysis.top_m)}});
                   }}});
    if (profile != c.profile) {
        fail(ErrorCode::invalid_config, "config names profile '" + profile + "' but was resolved against '" + c.profile + "'");
    }
    return c;
}

RunConfig resolve_config(const json& doc) {
    std::string profile = "desk";
    if (doc.is_object() && doc.contains("profile")) {
        if (!doc["profile"].is_string()) fail(ErrorCode::invalid_config, "profile must be a string");
        profile = doc["profile"].get<std::string>();
    }
    return config_from_json(doc, profile_config(profile));
}

// ---------------------------------------------------------------- container

const Tensor* Container::find(const std::string& name) const {
    for (const auto& [n, v] : arrays) {
        if (n == name) return &v;
    }
    return nullptr;
}

const Tensor& Container::get(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) fail(ErrorCode::missing_input, "container has no array '" + name + "'");
    return *t;
}

std::string encode_container(const Container& c) {
    std::set<std::string> names;
    json manifest = json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, value] : c.arrays) {
        if (!names.insert(name).second) fail(ErrorCode::duplicate_name, "duplicate array name '" + name + "'");
        manifest.push_back({{"name", name}, {"shape", value.shape()}, {"offset", offset}});
        offset += value.size() * sizeof(float);
    }
    const json header = {{"format_version", kFormatVersion}, {"meta", c.meta}, {"arrays", manifest}, {"payload_bytes", offset}};
    const std::string text = header.dump();
    std::string out(kMagic, 5);
    const std::uint64_t len = text.size();
    char lenbuf[8];
    std::memcpy(lenbuf, &len, 8);
    out.append(lenbuf, 8);
    out += text;
    for (const auto& [name, value] : c.arrays) {
        out.append(reinterpret_cast<const char*>(value.values().data()), value.size() * sizeof(float));
    }
    return out;
}

Container decode_container(const std::string& bytes) {
    if (bytes.size() < 13 || bytes.compare(0, 5, kMagic) != 0) fail(ErrorCode::corrupt_header, "missing POEM1 magic");
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 5, 8);
    if (len > bytes.size() - 13) fail(ErrorCode::corrupt_header, "header length exceeds file size");
    json header;
    try {
        header = json::parse(bytes.substr(13, len));
    } catch (const json::exception& e) {
        fail(ErrorCode::corrupt_header, std::string("header is not valid JSON: ") + e.what());
    }
    if (!header.is_object() || !header.contains("format_version")) {
        fail(ErrorCode::corrupt_header, "header lacks format_version");
    }
    if (header["format_version"] != kFormatVersion) {
        fail(ErrorCode::version_mismatch, "container format version " + header["format_version"].dump() +
                                              ", this build reads version " + std::to_string(kFormatVersion));
    }
    Container c;
    const std::size_t base = 13 + len;
    try {
        c.meta = header.at("meta");
        const std::uint64_t payload = header.at("payload_bytes").get<std::uint64_t>();
        std::uint64_t expect = 0;
        for (const auto& entry : header.at("arrays")) {
            const auto name = entry.at("name").get<std::string>();
            const auto shape = entry.at("shape").get<t::Shape>();
            const auto offset = entry.at("offset").get<std::uint64_t>();
            for (int d : shape) {
                if (d < 1) fail(ErrorCode::corrupt_header, "non-positive extent in array '" + name + "'");
            }
            if (offset != expect) fail(ErrorCode::corrupt_header, "array '" + name + "' has an inconsistent offset");
            const std::uint64_t nbytes = t::shape_size(shape) * sizeof(float);
            expect += nbytes;
            if (expect > payload) fail(ErrorCode::corrupt_header, "arrays exceed the declared payload");
            if (base + expect > bytes.size()) {
                fail(ErrorCode::truncated_payload, "payload ends before array '" + name + "' is complete");
            }
            Tensor value(shape);
            std::memcpy(value.data().data(), bytes.data() + base + offset, nbytes);
            c.arrays.emplace_back(name, std::move(value));
        }
        if (expect != payload) fail(ErrorCode::corrupt_header, "declared payload size does not match the manifest");
        if (base + payload > bytes.size()) fail(ErrorCode::truncated_payload, "payload is truncated");
        if (base + payload < bytes.size()) fail(ErrorCode::corrupt_header, "trailing bytes after the payload");
    } catch (const json::exception& e) {
        fail(ErrorCode::corrupt_header, std::string("malformed manifest: ") + e.what());
    }
    return c;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::missing_input, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    const auto parent = std::filesystem::path(path).parent_path();
    std::error_code ec;
    if (!parent.empty()) std::filesystem::create_directories(parent, ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::io, "failed writing '" + path + "'");
}

void save_container(const std::string& path, const Container& c) { write_file(path, encode_container(c)); }

Container load_container(const std::string& path) {
    try {
        return decode_container(read_file(path));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::missing_input) throw;
        fail(e.code(), path + ": " + e.what());
    }
}

// ---------------------------------------------------------------- artifacts

json run_record(const RunConfig& config) { return {{"config", config_to_json(config)}, {"seed", config.seed}}; }

namespace {

json object_json(const world::ObjectSpec& o) {
    return {{"category", o.category}, {"supercategory", o.supercategory}, {"color", o.color}, {"size", o.size},
            {"shape", o.shape},       {"x", o.x},                         {"y", o.y}};
}

world::ObjectSpec object_from_json(const json& j) {
    world::ObjectSpec o;
    o.category = j.at("category").get<std::string>();
    o.supercategory = j.at("supercategory").get<std::string>();
    o.color = j.at("color").get<std::string>();
    o.size = j.at("size").get<std::string>();
    o.shape = j.at("shape").get<std::string>();
    o.x = j.at("x").get<double>();
    o.y = j.at("y").get<double>();
    return o;
}

json objects_json(const std::vector<world::ObjectSpec>& objects) {
    json out = json::array();
    for (const auto& o : objects) out.push_back(object_json(o));
    return out;
}

std::vector<world::ObjectSpec> objects_from_json(const json& j) {
    std::vector<world::ObjectSpec> out;
    for (const auto& o : j) out.push_back(object_from_json(o));
    return out;
}

RunConfig run_from_record(const json& record) {
    if (!record.is_object() || !record.contains("config")) fail(ErrorCode::corrupt_header, "artifact lacks its run record");
    return resolve_config(record["config"]);
}

}  // namespace

json instance_json(const world::QAInstance& qa) {
    json program = json::array();
    for (const auto& step : qa.program) program.push_back({{"module", world::module_name(step.kind)}, {"args", step.args}});
    return {{"scene_id", qa.scene_id},
            {"objects", objects_json(qa.objects)},
            {"program", program},
            {"question_tokens", qa.question_tokens},
            {"answer", qa.answer},
            {"tags", qa.tags}};
}

world::QAInstance instance_from_json(const json& j) {
    world::QAInstance qa;
    try {
        qa.scene_id = j.at("scene_id").get<std::string>();
        qa.objects = objects_from_json(j.at("objects"));
        for (const auto& step : j.at("program")) {
            const auto name = step.at("module").get<std::string>();
            const auto kind = world::parse_module(name);
            if (!kind) fail(ErrorCode::corrupt_header, "unknown module '" + name + "'");
            qa.program.push_back({*kind, step.at("args").get<std::vector<std::string>>()});
        }
        qa.question_tokens = j.at("question_tokens").get<std::vector<std::string>>();
        qa.answer = j.at("answer").get<std::string>();
        qa.tags = j.at("tags").get<std::set<std::string>>();
    } catch (const json::exception& e) {
        fail(ErrorCode::corrupt_header, std::string("malformed instance record: ") + e.what());
    }
    return qa;
}

void save_dataset(const std::string& dir, const world::Dataset& dataset, const RunConfig& config) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorCode::io, "cannot create '" + dir + "': " + ec.message());

    std::string lines = json{{"run", run_record(config)}, {"novel_categories", dataset.novel_categories}}.dump() + "\n";
    for (const auto& qa : dataset.instances) lines += instance_json(qa).dump() + "\n";
    write_file((std::filesystem::path(dir) / "questions.jsonl").string(), lines);

    Container c;
    json scenes = json::array();
    for (const auto& s : dataset.scenes) {
        scenes.push_back({{"id", s.id}, {"split", dataset.is_val_scene(s.id) ? "val" : "train"}, {"objects", objects_json(s.objects)}});
        c.add("features/" + s.id, dataset.feature(s.id));
    }
    c.meta = {{"run", run_record(config)}, {"dataset_seed", dataset.seed}, {"scenes", scenes}};
    save_container((std::filesystem::path(dir) / "features.poem").string(), c);
}

world::Dataset load_dataset(const std::string& dir, RunConfig* config) {
    const auto qpath = (std::filesystem::path(dir) / "questions.jsonl").string();
    const auto fpath = (std::filesystem::path(dir) / "features.poem").string();
    const Container c = load_container(fpath);
    std::istringstream lines(read_file(qpath));

    world::Dataset ds;
    std::string line;
    if (!std::getline(lines, line)) fail(ErrorCode::corrupt_header, qpath + " is empty");
    json header;
    try {
        header = json::parse(line);
        const RunConfig run = run_from_record(header.at("run"));
        if (config) *config = run;
        ds.config = run.world;
        ds.novel_categories = header.at("novel_categories").get<std::set<std::string>>();
        ds.seed = c.meta.at("dataset_seed").get<std::uint64_t>();
        for (const auto& s : c.meta.at("scenes")) {
            world::Scene scene;
            scene.id = s.at("id").get<std::string>();
            scene.objects = objects_from_json(s.at("objects"));
            if (s.at("split") == "val") ds.val_scene_ids.insert(scene.id);
            ds.features[scene.id] = c.get("features/" + scene.id);
            ds.scenes.push_back(std::move(scene));
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::corrupt_header, dir + ": malformed dataset header: " + e.what());
    }
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        try {
            ds.instances.push_back(instance_from_json(json::parse(line)));
        } catch (const json::parse_error& e) {
            fail(ErrorCode::corrupt_header, qpath + ": " + e.what());
        }
    }
    return ds;
}

void save_bank(const std::string& path, const BankFile& file) {
    const auto& b = file.bank;
    Container c;
    c.add(protos::kBankParam, b.P);
    for (const auto& [name, value] : b.classifier) c.add(name, value);
    c.meta = {{"run", run_record(file.config)},
              {"bank",
               {{"K", b.size()},
                {"D", b.dim()},
                {"epoch", b.epoch},
                {"metric", b.metric},
                {"origin", b.origin},
                {"categories", b.categories},
                {"protos", protos_json(b.config)}}},
              {"history", file.history}};
    save_container(path, c);
}

BankFile load_bank(const std::string& path) {
    const Container c = load_container(path);
    BankFile f;
    try {
        f.config = run_from_record(c.meta.at("run"));
        const json& m = c.meta.at("bank");
        f.bank.P = c.get(protos::kBankParam);
        f.bank.epoch = m.at("epoch").get<int>();
        f.bank.metric = m.at("metric").get<double>();
        f.bank.origin = m.at("origin").get<std::string>();
        f.bank.categories = m.at("categories").get<std::vector<std::string>>();
        read_section(m.at("protos"), "protos", protos_fields(f.bank.config));
        for (const auto& [name, value] : c.arrays) {
            if (name != protos::kBankParam) f.bank.classifier.emplace(name, value);
        }
        f.history = c.meta.value("history", json::array());
    } catch (const json::exception& e) {
        fail(ErrorCode::corrupt_header, path + ": malformed bank metadata: " + e.what());
    }
    return f;
}

namespace {
constexpr const char* kFrozenBank = "frozen/P";
}

void save_model(const std::string& path, const ModelFile& file) {
    const net::Network& n = file.network;
    Container c;
    for (const auto& [name, value] : n.params.parameters()) c.add(name, value);
    if (n.bank) c.add(kFrozenBank, *n.bank);
    c.meta = {{"run", run_record(file.config)},
              {"model",
               {{"net", vqa_json(n.config)},
                {"words", n.words.tokens()},
                {"answers", n.answers.tokens()},
                {"feature_dim", n.feature_dim},
                {"num_prototypes", n.num_prototypes},
                {"bank_origin", n.bank_origin}}},
              {"history", file.history}};
    save_container(path, c);
}

ModelFile load_model(const std::string& path) {
    const Container c = load_container(path);
    ModelFile f;
    try {
        f.config = run_from_record(c.meta.at("run"));
        const json& m = c.meta.at("model");
        net::Network& n = f.network;
        read_section(m.at("net"), "vqa", vqa_fields(n.config));
        auto tokens = [](const json& j) {
            auto v = j.get<std::vector<std::string>>();
            if (v.empty() || v.front() != net::Vocab::kUnk) fail(ErrorCode::corrupt_header, "vocabulary lacks <unk> at 0");
            return net::Vocab(std::vector<std::string>(v.begin() + 1, v.end()));
        };
        n.words = tokens(m.at("words"));
        n.answers = tokens(m.at("answers"));
        n.feature_dim = m.at("feature_dim").get<int>();
        n.num_prototypes = m.at("num_prototypes").get<int>();
        n.bank_origin = m.at("bank_origin").get<std::string>();
        for (const auto& [name, value] : c.arrays) {
            if (name == kFrozenBank) {
                n.bank = value;
            } else {
                n.params.add(name, value);
            }
        }
        f.history = c.meta.value("history", json::array());
    } catch (const json::exception& e) {
        fail(ErrorCode::corrupt_header, path + ": malformed model metadata: " + e.what());
    }
    return f;
}

}  // namespace poem::io
