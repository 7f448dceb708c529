#pragma once

#include "icumort/jsonio.hpp"

#include <map>
#include <string>

namespace icumort {

// Synthetic cohort generation. Real ICU datasets are access-restricted, so
// tests and the end-to-end benchmark run on a generated cohort whose outcome
// follows a logistic model over six planted physiologic traits. The planted
// traits mirror typical top mortality predictors (lactate, GCS, age, urine
// output, BUN, shock index) without copying any dataset values.
struct GenConfig {
    std::size_t n_stays = 1000;
    double mortality_rate = 0.06;
    std::uint64_t seed = 7;
    int hospital_count = 4;
    double notes_fraction = 0.7;
    // trait -> logistic coefficient; keys: lactate, gcs, age, urine, bun,
    // shock_index. Missing keys default to 0.
    std::map<std::string, double> signal_spec;

    static GenConfig defaults();
    static GenConfig from_json(const json& j);
    json to_json() const;
    void validate() const;
};

struct SynthPaths {
    std::string events_csv;
    std::string statics_csv;
    std::string notes_csv;
};

// Deterministic per seed: running twice produces byte-identical files. The
// realized death count is exactly ceil(n_stays * mortality_rate). Also emits
// a few deliberately malformed rows (ghost stay ids, short stays, out-of-range
// values) so the ingest/harmonize error paths see real traffic.
void generate_synthetic_cohort(const GenConfig& cfg, const SynthPaths& out);

} // namespace icumort
