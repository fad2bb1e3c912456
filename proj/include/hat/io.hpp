#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "hat/core.hpp"

namespace hat {

using json = nlohmann::json;

/// One JSONL line: {"id","lang","text","lf","origin"}. template_id is not
/// serialized; callers re-derive it with assign_template_ids.
json example_to_json(const Example& example);
Example example_from_json(const json& j);

void write_jsonl(const std::filesystem::path& path, const std::vector<Example>& examples);
std::vector<Example> read_jsonl(const std::filesystem::path& path);

json round_state_to_json(const RoundState& state);
RoundState round_state_from_json(const json& j);

json bundle_to_json(const DatasetBundle& bundle);
DatasetBundle bundle_from_json(const json& j);

/// Bundle as a directory of JSONL files plus alignment.json.
void write_bundle_dir(const std::filesystem::path& dir, const DatasetBundle& bundle);
DatasetBundle read_bundle_dir(const std::filesystem::path& dir);

/// Writes `text` to a temporary sibling and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_file(const std::filesystem::path& path);

}  // namespace hat
