#pragma once

#include "icumort/jsonio.hpp"
#include "icumort/types.hpp"

#include <map>
#include <vector>

namespace icumort {

struct ImputeConfig {
    double hct_per_hb = 3.0;
    double direct_per_total_bilirubin = 0.3;
    std::map<int, double> rass_to_gcs;
    int hold_hours_medication = 24;
    int hold_hours_other = 12;
    double normalizer_std_floor = 1e-8;

    static ImputeConfig from_json(const json& doc, const std::string& origin);
    static ImputeConfig defaults();
};

// Missing-value pipeline, fixed order:
//   relationships -> indicators -> sample-and-hold -> fill -> normalize
// Each stage validates its predecessor and folds its tag into the grid's
// stage checksum; expected_stage_checksum(stage) gives the canonical value.
std::uint64_t expected_stage_checksum(GridStage through_stage);

// Clinically-derived fills: GCS total from its components or from RASS,
// hematocrit<->hemoglobin, direct<->total bilirubin, and any one arterial
// pressure from the other two (MAP = (SBP + 2 DBP) / 3). Observed cells are
// never overwritten.
void impute_relationships(HourlyGrid& g, const GridSchema& schema, const ImputeConfig& cfg);

// One indicator per variable per hour: 1 = actually observed, 0 = imputed or
// missing. Captured before sample-and-hold so held values stay marked 0.
void attach_indicators(HourlyGrid& g);

// Carry the most recent present value forward, up to 24 h for medication
// columns and 12 h for other dynamic variables. Fills never chain: the
// horizon is measured from the last pre-hold value.
void sample_and_hold(HourlyGrid& g, const GridSchema& schema, const ImputeConfig& cfg);

struct FillStats {
    // per column: fill value (train mean / train mode / zero)
    std::vector<double> fill_value;
    std::vector<std::uint8_t> had_data;
    bool fitted = false;

    json to_json(const GridSchema& schema) const;
    static FillStats from_json(const json& j, const GridSchema& schema);
};

struct Normalizer {
    std::vector<double> mean;
    std::vector<double> stddev;              // population (1/N) denominator
    std::vector<std::uint8_t> passthrough;   // constant training column
    bool fitted = false;

    json to_json(const GridSchema& schema) const;
    static Normalizer from_json(const json& j, const GridSchema& schema);
};

FillStats fit_fill(const std::vector<HourlyGrid>& train_grids, const GridSchema& schema);
void apply_fill(HourlyGrid& g, const GridSchema& schema, const FillStats& stats);

Normalizer fit_normalizer(const std::vector<HourlyGrid>& train_grids, const GridSchema& schema,
                          const ImputeConfig& cfg);
void apply_normalizer(HourlyGrid& g, const GridSchema& schema, const Normalizer& n);

// Variable-length step sequence, shaped to exactly 24 steps: longer input is
// truncated, shorter input padded with missing steps.
struct SequenceGrid {
    std::string stay_id;
    std::size_t n_columns = 0;
    std::size_t n_steps = 0;
    std::vector<double> values;
    std::vector<Provenance> provenance;
};

HourlyGrid truncate_pad(const SequenceGrid& seq);

// Restores the stage bookkeeping on a grid loaded from disk: cells written
// after sample-and-hold resume at Held, freshly binned grids at Binned.
// Indicators are rebuilt from provenance (observed = 1).
void resume_stage(HourlyGrid& g, GridStage stage);

} // namespace icumort
