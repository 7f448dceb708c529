#pragma once

#include "icumort/jsonio.hpp"
#include "icumort/schema.hpp"
#include "icumort/types.hpp"

#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace icumort {

struct ValidRange {
    double min = 0.0;
    double max = 0.0;
};

class ValidRangeTable {
public:
    static ValidRangeTable from_json(const json& doc, const std::string& origin);
    const ValidRange* find(const std::string& variable) const;

private:
    std::map<std::string, ValidRange> ranges_;
};

// 30 named conditions -> ICD-9/10 code prefixes (dot-insensitive).
class ComorbidityMap {
public:
    static ComorbidityMap from_json(const json& doc, const std::string& origin);
    std::size_t size() const { return conditions_.size(); }
    const std::vector<std::string>& condition_names() const { return names_; }

    // bit c = 1 iff any code matches any prefix of condition c
    std::vector<std::uint8_t> encode(const std::vector<std::string>& codes) const;
    bool has_condition(const std::vector<std::string>& codes, const std::string& name) const;

private:
    std::vector<std::vector<std::string>> conditions_; // normalized prefixes
    std::vector<std::string> names_;
};

struct MedLexicon {
    std::vector<std::string> vasopressor_names;               // lowercase substrings
    std::vector<std::pair<std::string, std::string>> dose_keys; // substring -> drug key, longest first
    std::vector<std::string> antibiotic_names;
    std::vector<std::string> antibiotic_gsn;
    std::set<std::string> excluded_routes;

    static MedLexicon from_json(const json& doc, const std::string& origin);
};

struct MedFlags {
    std::array<std::uint8_t, kGridHours> vasopressor{};
    std::array<std::uint8_t, kGridHours> antibiotic{};
    std::map<std::string, double> max_dose; // drug key -> worst rate (ug/kg/min etc.)
};

struct HarmonizeReport {
    std::size_t events_in = 0;
    std::size_t units_converted = 0;
    std::size_t quarantined = 0;
    std::size_t outliers_removed = 0;
    std::size_t unmapped_variable = 0;
    std::size_t med_rows = 0;
    std::size_t stays = 0;
    std::vector<std::string> quarantine_reasons; // capped sample

    void note_quarantine(const std::string& reason);
    json to_json() const;
};

// The canonical hourly-grid column set used by the whole pipeline.
GridSchema default_grid_schema();

std::vector<double> filter_outliers(const std::string& variable, const std::vector<double>& values,
                                    const ValidRangeTable& ranges, std::size_t* removed = nullptr);

// Mean for continuous cells, mode for categorical (ties break to the smallest
// code), any-positive for binary. Window h covers [h, h+1); an event at
// exactly 24.0 h falls outside the input window.
void bin_hourly(const std::vector<RawEvent>& events, const GridSchema& schema,
                const SchemaMap& map, HourlyGrid& grid);

MedFlags extract_med_flags(const std::vector<RawEvent>& med_rows, const MedLexicon& lexicon);

// Sums all configured urine aliases per hour into one canonical series;
// volumes are additive. Returns per-hour totals; hours with no rows stay
// absent. Negative volumes are quarantined.
std::map<int, double> unify_urine_output(const std::vector<RawEvent>& events,
                                         const std::vector<std::string>& aliases,
                                         HarmonizeReport& report);

std::vector<std::uint8_t> encode_comorbidities(const std::vector<std::string>& codes,
                                               const ComorbidityMap& map);

// Full per-stay harmonization: unit conversion, outlier removal, hourly
// binning, medication flags, urine unification. Pure per stay.
struct HarmonizedStay {
    HourlyGrid grid;
    MedFlags meds;
};

struct HarmonizeContext {
    SchemaMap schema;
    ValidRangeTable ranges;
    MedLexicon lexicon;
    GridSchema grid_schema;
    std::vector<std::string> urine_aliases;
};

HarmonizeContext make_default_harmonize_context();

HarmonizedStay harmonize_stay(const StayRecord& stay, const HarmonizeContext& ctx,
                              HarmonizeReport& report);

// Sparse long-format grid persistence: stay_id,hour,variable,value,provenance.
void write_grids_csv(const std::string& path, const GridSchema& schema,
                     const std::vector<HourlyGrid>& grids);
std::vector<HourlyGrid> read_grids_csv(const std::string& path, const GridSchema& schema);

void write_med_doses_csv(const std::string& path,
                         const std::vector<std::pair<std::string, MedFlags>>& per_stay);
std::map<std::string, std::map<std::string, double>> read_med_doses_csv(const std::string& path);

} // namespace icumort
