#include "icumort/schema.hpp"
#include "icumort/errors.hpp"

#include <fmt/core.h>

#include <cmath>

namespace icumort {

SchemaMap SchemaMap::from_json(const json& doc, const std::string& origin) {
    SchemaMap m;
    if (doc.contains("variables")) {
        // Canonical names must be unique within one source map; aliases of the
        // same physical quantity are distinct canonical names and get merged
        // later (see unify_urine_output).
        std::map<std::string, std::string> seen; // canonical -> source column
        for (const auto& [source, canonical] : doc.at("variables").items()) {
            const std::string canon = canonical.get<std::string>();
            auto it = seen.find(canon);
            if (it != seen.end()) {
                throw config_error(fmt::format(
                    "{}: columns '{}' and '{}' both map to canonical name '{}'", origin,
                    it->second, source, canon));
            }
            seen.emplace(canon, source);
            m.variables_.emplace(source, canon);
        }
    }
    if (doc.contains("canonical_units")) {
        for (const auto& [var, unit] : doc.at("canonical_units").items()) {
            m.canonical_units_.emplace(var, unit.get<std::string>());
        }
    }
    if (doc.contains("units")) {
        for (const auto& entry : doc.at("units")) {
            UnitConversion c;
            c.variable = entry.value("variable", "*");
            c.from = entry.at("from").get<std::string>();
            c.to = entry.at("to").get<std::string>();
            c.scale = entry.at("scale").get<double>();
            c.offset = entry.value("offset", 0.0);
            if (c.scale == 0.0 || !std::isfinite(c.scale) || !std::isfinite(c.offset)) {
                throw config_error(fmt::format("{}: unit conversion {}->{} is not invertible",
                                               origin, c.from, c.to));
            }
            m.conversions_.push_back(c);
        }
    }
    if (doc.contains("encodings")) {
        for (const auto& [var, table] : doc.at("encodings").items()) {
            std::map<std::string, double> codes;
            for (const auto& [text, code] : table.items()) {
                codes.emplace(text, code.get<double>());
            }
            m.encodings_.emplace(var, std::move(codes));
        }
    }
    return m;
}

const std::string& SchemaMap::canonical_variable(const std::string& source, bool* mapped) const {
    auto it = variables_.find(source);
    if (it != variables_.end()) {
        if (mapped) *mapped = true;
        return it->second;
    }
    if (mapped) *mapped = false;
    return source;
}

std::optional<std::string> SchemaMap::canonical_unit(const std::string& variable) const {
    auto it = canonical_units_.find(variable);
    if (it == canonical_units_.end()) return std::nullopt;
    return it->second;
}

const UnitConversion* SchemaMap::find_conversion(const std::string& variable,
                                                 const std::string& unit) const {
    const UnitConversion* wildcard = nullptr;
    for (const auto& c : conversions_) {
        if (c.from != unit) continue;
        if (c.variable == variable) return &c;
        if (c.variable == "*") wildcard = &c;
    }
    return wildcard;
}

ConvertOutcome SchemaMap::convert_units(const RawEvent& e) const {
    ConvertOutcome out;
    out.event = e;
    if (!e.value_numeric.has_value() || e.unit.empty()) return out;

    const auto canon_unit = canonical_unit(e.variable);
    if (canon_unit.has_value() && e.unit == *canon_unit) return out;

    if (const UnitConversion* c = find_conversion(e.variable, e.unit)) {
        out.event.value_numeric = c->apply(*e.value_numeric);
        out.event.unit = c->to;
        return out;
    }
    if (!canon_unit.has_value()) return out; // units uninterpreted for this variable

    out.quarantined = true;
    out.reason = fmt::format("unknown unit '{}' for variable '{}' (canonical unit '{}')", e.unit,
                             e.variable, *canon_unit);
    return out;
}

std::optional<double> SchemaMap::encode_value(const std::string& variable,
                                              const std::string& text) const {
    auto it = encodings_.find(variable);
    if (it == encodings_.end()) return std::nullopt;
    auto jt = it->second.find(text);
    if (jt == it->second.end()) return std::nullopt;
    return jt->second;
}

SchemaMap load_schema_map(const std::string& path) {
    return SchemaMap::from_json(load_json_file(path), path);
}

} // namespace icumort
