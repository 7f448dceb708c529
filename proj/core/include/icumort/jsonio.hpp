#pragma once

#include <nlohmann/json.hpp>

#include <string>

namespace icumort {

using json = nlohmann::json;

// Config files allow // comments so data tables can carry citations inline.
json load_json_file(const std::string& path);
json parse_json_text(const std::string& text, const std::string& origin);

// Canonical dump: sorted object keys (nlohmann default), 2-space indent,
// trailing newline. Used for every JSON artifact so reruns are byte-identical.
void save_json_file(const std::string& path, const json& doc);
std::string dump_json(const json& doc);

} // namespace icumort
