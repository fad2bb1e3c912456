#include "hat/io.hpp"

#include <fstream>
#include <sstream>

#include "hat/error.hpp"

namespace hat {

namespace fs = std::filesystem;

namespace {

// Field access that reports the dotted path of whatever is missing or mistyped.
const json& field(const json& j, const std::string& key, const std::string& path) {
    if (!j.is_object()) throw Error(ErrorCode::integrity, "field '" + path + "' parent is not an object");
    auto it = j.find(key);
    if (it == j.end()) throw Error(ErrorCode::integrity, "missing field '" + path + "'");
    return *it;
}

template <typename T>
T typed(const json& j, const std::string& key, const std::string& path) {
    const json& v = field(j, key, path);
    try {
        if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw Error(ErrorCode::integrity, "field '" + path + "' is not a string");
        } else if constexpr (std::is_same_v<T, std::uint64_t> || std::is_same_v<T, std::size_t>) {
            if (!v.is_number_unsigned()) throw Error(ErrorCode::integrity, "field '" + path + "' is not unsigned");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw Error(ErrorCode::integrity, "field '" + path + "' is not a number");
        }
        return v.get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::integrity, "field '" + path + "': " + e.what());
    }
}

std::vector<std::string> string_list(const json& j, const std::string& key, const std::string& path) {
    const json& v = field(j, key, path);
    if (!v.is_array()) throw Error(ErrorCode::integrity, "field '" + path + "' is not an array");
    std::vector<std::string> out;
    out.reserve(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_string())
            throw Error(ErrorCode::integrity, "field '" + path + "[" + std::to_string(i) + "]' is not a string");
        out.push_back(v[i].get<std::string>());
    }
    return out;
}

json examples_to_json(const std::vector<Example>& examples) {
    json arr = json::array();
    for (const auto& e : examples) {
        json row = example_to_json(e);
        row["template_id"] = e.lf.template_id;
        arr.push_back(std::move(row));
    }
    return arr;
}

std::vector<Example> examples_from_json(const json& j, const std::string& key, const std::string& path) {
    const json& v = field(j, key, path);
    if (!v.is_array()) throw Error(ErrorCode::integrity, "field '" + path + "' is not an array");
    std::vector<Example> out;
    out.reserve(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::string item_path = path + "[" + std::to_string(i) + "]";
        Example e;
        try {
            e = example_from_json(v[i]);
        } catch (const Error& err) {
            throw Error(ErrorCode::integrity, item_path + ": " + err.what());
        }
        e.lf.template_id = typed<int>(v[i], "template_id", item_path + ".template_id");
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace

json example_to_json(const Example& example) {
    return json{{"id", example.utterance.id},
                {"lang", example.utterance.language},
                {"text", example.utterance.raw},
                {"lf", example.lf.canonical},
                {"origin", std::string(to_string(example.origin))}};
}

Example example_from_json(const json& j) {
    Example e;
    e.utterance = make_utterance(typed<std::string>(j, "id", "id"), typed<std::string>(j, "lang", "lang"),
                                 typed<std::string>(j, "text", "text"));
    e.lf = LogicalForm(typed<std::string>(j, "lf", "lf"), -1);
    e.origin = origin_from_string(typed<std::string>(j, "origin", "origin"));
    return e;
}

void write_jsonl(const fs::path& path, const std::vector<Example>& examples) {
    std::string text;
    for (const auto& e : examples) {
        text += example_to_json(e).dump();
        text.push_back('\n');
    }
    write_file_atomic(path, text);
}

std::vector<Example> read_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot open '" + path.string() + "'");
    std::vector<Example> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (normalize_whitespace(line).empty()) continue;
        try {
            out.push_back(example_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw Error(ErrorCode::validation, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const Error& e) {
            throw Error(ErrorCode::validation, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

json round_state_to_json(const RoundState& state) {
    json metrics = json::object();
    for (const auto& [k, v] : state.metrics) metrics[k] = v;
    return json{{"round", state.round},
                {"selected_ids", state.selected_ids},
                {"remaining_pool", state.remaining_pool},
                {"metrics", metrics},
                {"rng_seed", state.rng_seed}};
}

RoundState round_state_from_json(const json& j) {
    RoundState s;
    s.round = typed<std::size_t>(j, "round", "state.round");
    s.selected_ids = string_list(j, "selected_ids", "state.selected_ids");
    s.remaining_pool = string_list(j, "remaining_pool", "state.remaining_pool");
    const json& m = field(j, "metrics", "state.metrics");
    if (!m.is_object()) throw Error(ErrorCode::integrity, "field 'state.metrics' is not an object");
    for (const auto& [k, v] : m.items()) {
        if (!v.is_number()) throw Error(ErrorCode::integrity, "field 'state.metrics." + k + "' is not a number");
        s.metrics[k] = v.get<double>();
    }
    s.rng_seed = typed<std::uint64_t>(j, "rng_seed", "state.rng_seed");
    return s;
}

json bundle_to_json(const DatasetBundle& bundle) {
    return json{{"d_source", examples_to_json(bundle.d_source)},
                {"d_mt", examples_to_json(bundle.d_mt)},
                {"d_ht", examples_to_json(bundle.d_ht)},
                {"test_source", examples_to_json(bundle.test_source)},
                {"test_target", examples_to_json(bundle.test_target)},
                {"alignment", bundle.alignment}};
}

DatasetBundle bundle_from_json(const json& j) {
    DatasetBundle b;
    b.d_source = examples_from_json(j, "d_source", "bundle.d_source");
    b.d_mt = examples_from_json(j, "d_mt", "bundle.d_mt");
    b.d_ht = examples_from_json(j, "d_ht", "bundle.d_ht");
    b.test_source = examples_from_json(j, "test_source", "bundle.test_source");
    b.test_target = examples_from_json(j, "test_target", "bundle.test_target");
    const json& a = field(j, "alignment", "bundle.alignment");
    if (!a.is_object()) throw Error(ErrorCode::integrity, "field 'bundle.alignment' is not an object");
    for (const auto& [k, v] : a.items()) {
        if (!v.is_string()) throw Error(ErrorCode::integrity, "field 'bundle.alignment." + k + "' is not a string");
        b.alignment[k] = v.get<std::string>();
    }
    return b;
}

void write_bundle_dir(const fs::path& dir, const DatasetBundle& bundle) {
    fs::create_directories(dir);
    write_jsonl(dir / "d_source.jsonl", bundle.d_source);
    write_jsonl(dir / "d_mt.jsonl", bundle.d_mt);
    write_jsonl(dir / "test_source.jsonl", bundle.test_source);
    write_jsonl(dir / "test_target.jsonl", bundle.test_target);
    if (!bundle.d_ht.empty()) write_jsonl(dir / "d_ht.jsonl", bundle.d_ht);
    write_file_atomic(dir / "alignment.json", json(bundle.alignment).dump(1) + "\n");
}

DatasetBundle read_bundle_dir(const fs::path& dir) {
    DatasetBundle b;
    b.d_source = read_jsonl(dir / "d_source.jsonl");
    b.d_mt = read_jsonl(dir / "d_mt.jsonl");
    b.test_source = read_jsonl(dir / "test_source.jsonl");
    b.test_target = read_jsonl(dir / "test_target.jsonl");
    if (fs::exists(dir / "d_ht.jsonl")) b.d_ht = read_jsonl(dir / "d_ht.jsonl");
    json a;
    try {
        a = json::parse(read_file(dir / "alignment.json"));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::validation, "alignment.json: " + std::string(e.what()));
    }
    for (const auto& [k, v] : a.items()) b.alignment[k] = v.get<std::string>();
    assign_template_ids(b);
    b.validate();
    return b;
}

void write_file_atomic(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::io, "cannot write '" + tmp.string() + "'");
        out << text;
        out.flush();
        if (!out) throw Error(ErrorCode::io, "short write to '" + tmp.string() + "'");
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void checkpoint_save(const Checkpoint& checkpoint, const fs::path& path) {
    json doc{{"schema_version", kCheckpointSchemaVersion},
             {"state", round_state_to_json(checkpoint.state)},
             {"bundle", bundle_to_json(checkpoint.bundle)}};
    write_file_atomic(path, doc.dump(1) + "\n");
}

Checkpoint checkpoint_load(const fs::path& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::integrity, "field '<document>' unparseable: " + std::string(e.what()));
    }
    int version = typed<int>(doc, "schema_version", "schema_version");
    if (version != kCheckpointSchemaVersion)
        throw Error(ErrorCode::integrity, "field 'schema_version' has unsupported value " + std::to_string(version));
    Checkpoint c;
    c.state = round_state_from_json(field(doc, "state", "state"));
    c.bundle = bundle_from_json(field(doc, "bundle", "bundle"));
    return c;
}

}  // namespace hat
