#include "icumort/jsonio.hpp"
#include "icumort/errors.hpp"

#include <fmt/core.h>

#include <fstream>

namespace icumort {

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error(fmt::format("cannot open file: {}", path));
    try {
        return json::parse(in, nullptr, /*allow_exceptions=*/true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw config_error(fmt::format("{}: {}", path, e.what()));
    }
}

json parse_json_text(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw config_error(fmt::format("{}: {}", origin, e.what()));
    }
}

std::string dump_json(const json& doc) { return doc.dump(2) + "\n"; }

void save_json_file(const std::string& path, const json& doc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error(fmt::format("cannot open file for write: {}", path));
    out << dump_json(doc);
}

} // namespace icumort
