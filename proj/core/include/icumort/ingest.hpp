#pragma once

#include "icumort/jsonio.hpp"
#include "icumort/schema.hpp"
#include "icumort/types.hpp"

#include <map>
#include <string>
#include <vector>

namespace icumort {

struct StaticsRow {
    std::string stay_id;
    int age = 0;
    std::string sex;
    std::string race;
    std::string ethnicity;
    double admit_to_icu_h = 0.0;
    double los_hours = 0.0;
    std::optional<double> death_offset_h;
    std::string hospital_id;
    std::vector<std::string> icd_codes;
};

struct IngestReport {
    std::size_t input_stays = 0;
    std::size_t returned = 0;
    std::size_t excluded_short_stay = 0;
    std::size_t malformed = 0; // missing/contradictory discharge info
    std::size_t events_in = 0;
    std::size_t events_kept = 0;
    std::size_t events_dropped_late = 0;     // after the first 24 h
    std::size_t events_dropped_negative = 0; // before ICU admission
    std::size_t events_unknown_stay = 0;
    std::size_t events_malformed = 0; // no value either way, bad number
    std::vector<std::string> warnings;

    json to_json() const;
};

// Cohort assembly: stays shorter than 24 h are excluded, the label is death
// at any time after the first 24 h, and model inputs are restricted to events
// from the first 24 h. Pure: same inputs give the same output, stays sorted
// by id.
std::vector<StayRecord> assemble_stays(const std::vector<RawEvent>& events,
                                       const std::vector<StaticsRow>& statics,
                                       const SchemaMap& map, IngestReport& report);

// Statics-only half of assembly (exclusions and labels, no events attached).
std::vector<StayRecord> assemble_statics(const std::vector<StaticsRow>& statics,
                                         IngestReport& report);

// Streaming event pass for large extracts: reads events_csv (which must be
// grouped by stay_id), applies the same filters and name mapping as
// assemble_stays, and writes the retained rows straight to events_out. Keeps
// memory flat regardless of cohort size.
void stream_filter_events(const std::string& events_csv, const std::string& events_out,
                          const std::vector<StayRecord>& stays, const SchemaMap& map,
                          IngestReport& report);

std::vector<StaticsRow> read_statics_csv(const std::string& path);
std::vector<RawEvent> read_events_csv(const std::string& path);

// Streams one stay's events at a time from a stay-grouped events CSV.
void for_each_stay_events(const std::string& events_csv,
                          const std::function<void(const std::string& stay_id,
                                                   std::vector<RawEvent>& events)>& fn);

// has_notes flags for stays with at least one note in the first 24 h.
std::map<std::string, bool> scan_notes_presence(const std::string& notes_csv);

void write_stays_csv(const std::string& path, const std::vector<StayRecord>& stays);
std::vector<StayRecord> read_stays_csv(const std::string& path); // without events

void write_events_csv(const std::string& path, const std::vector<StayRecord>& stays);

} // namespace icumort
