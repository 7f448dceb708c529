#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace icumort {

// One raw measurement/administration row, before harmonization. Exactly one
// of value_numeric / value_text is set.
struct RawEvent {
    std::string stay_id;
    std::string variable; // canonical name after schema mapping
    double time_offset_h = 0.0;
    std::optional<double> value_numeric;
    std::optional<std::string> value_text;
    std::string unit; // empty = canonical / dimensionless
};

struct ModalityFlags {
    bool has_static = true;
    bool has_timevariant = true; // every stay has time-variant data
    bool has_notes = false;
};

struct StayRecord {
    std::string stay_id;
    int age = 0;
    std::string sex;
    std::string race;
    std::string ethnicity;
    std::vector<std::string> comorbidity_codes;
    std::vector<RawEvent> events; // first 24 h only, canonical names
    double admit_to_icu_h = 0.0;  // hospital admission -> ICU admission
    double los_hours = 0.0;
    bool died_inpatient = false;
    std::optional<double> time_to_death_hours; // from ICU admission
    std::string hospital_id;
    ModalityFlags modality_flags;
};

constexpr int kGridHours = 24;

enum class ColumnKind : std::uint8_t { Continuous, Categorical, Binary };

enum class Provenance : std::uint8_t { Missing = 0, Observed = 1, Imputed = 2 };

// Imputation stages run in a fixed order; each op checks its predecessor and
// folds its tag into stage_checksum so a permuted pipeline is detectable.
enum class GridStage : std::uint8_t {
    Binned = 0,
    Related,
    Indicated,
    Held,
    Filled,
    Normalized,
};

struct GridColumn {
    std::string name;
    ColumnKind kind = ColumnKind::Continuous;
    // Sample-and-hold horizon; medications hold twice as long as other
    // dynamic variables.
    bool is_medication = false;
};

struct GridSchema {
    std::vector<GridColumn> columns;

    int index_of(const std::string& name) const {
        for (std::size_t i = 0; i < columns.size(); ++i) {
            if (columns[i].name == name) return static_cast<int>(i);
        }
        return -1;
    }
    std::size_t size() const { return columns.size(); }
};

// 24 x F grid for one stay. Cell (h, c) at values[h * F + c]; provenance mark
// is always present. indicators are materialized by attach_indicators and
// capture "actually observed" before sample-and-hold runs.
struct HourlyGrid {
    std::string stay_id;
    std::size_t n_columns = 0;
    std::vector<double> values;          // 24 * F
    std::vector<Provenance> provenance;  // 24 * F
    std::vector<std::uint8_t> indicators; // 24 * F, filled at Indicated stage
    GridStage stage = GridStage::Binned;
    std::uint64_t stage_checksum = 0;

    void init(const std::string& id, std::size_t columns) {
        stay_id = id;
        n_columns = columns;
        values.assign(static_cast<std::size_t>(kGridHours) * columns, 0.0);
        provenance.assign(static_cast<std::size_t>(kGridHours) * columns, Provenance::Missing);
        indicators.clear();
        stage = GridStage::Binned;
        stage_checksum = 0;
    }

    std::size_t at(int hour, int col) const {
        return static_cast<std::size_t>(hour) * n_columns + static_cast<std::size_t>(col);
    }
    double value(int hour, int col) const { return values[at(hour, col)]; }
    Provenance prov(int hour, int col) const { return provenance[at(hour, col)]; }
    bool present(int hour, int col) const { return prov(hour, col) != Provenance::Missing; }

    void set(int hour, int col, double v, Provenance p) {
        values[at(hour, col)] = v;
        provenance[at(hour, col)] = p;
    }
};

} // namespace icumort
