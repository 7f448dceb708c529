#pragma once

#include <string_view>

namespace icumort::defaults {

// Contents of core/data/*.json, embedded at build time so the library works
// without a data directory. Any of them can be overridden by a file path in
// the run config.
std::string_view schema_map_json();
std::string_view valid_ranges_json();
std::string_view med_lexicon_json();
std::string_view comorbidities_json();
std::string_view imputation_json();
std::string_view risk_score_tables_json();
std::string_view notes_config_json();
std::string_view vitals_config_json();

} // namespace icumort::defaults
