#pragma once

#include "icumort/jsonio.hpp"
#include "icumort/types.hpp"

#include <map>
#include <optional>
#include <string>

namespace icumort {

// Affine unit conversion: canonical = scale * value + offset. Invertible by
// construction (scale != 0 is validated at load).
struct UnitConversion {
    std::string variable; // "*" = any variable
    std::string from;
    std::string to;
    double scale = 1.0;
    double offset = 0.0;

    double apply(double v) const { return scale * v + offset; }
    double invert(double v) const { return (v - offset) / scale; }
};

struct ConvertOutcome {
    RawEvent event;
    bool quarantined = false;
    std::string reason;
};

// Per-source crosswalk: source column names -> canonical variable names,
// unit conversions, and numeric encodings for categorical values.
class SchemaMap {
public:
    static SchemaMap from_json(const json& doc, const std::string& origin);

    // Canonical name for a source column; identity when unmapped.
    const std::string& canonical_variable(const std::string& source, bool* mapped = nullptr) const;

    std::optional<std::string> canonical_unit(const std::string& variable) const;
    const UnitConversion* find_conversion(const std::string& variable, const std::string& unit) const;

    ConvertOutcome convert_units(const RawEvent& e) const;

    // Numeric code for a categorical value, e.g. vent mode "AC" -> 0.
    std::optional<double> encode_value(const std::string& variable, const std::string& text) const;

    const std::map<std::string, std::string>& variables() const { return variables_; }

private:
    std::map<std::string, std::string> variables_;          // source -> canonical
    std::map<std::string, std::string> canonical_units_;    // variable -> unit
    std::vector<UnitConversion> conversions_;
    std::map<std::string, std::map<std::string, double>> encodings_;
};

SchemaMap load_schema_map(const std::string& path);

} // namespace icumort
