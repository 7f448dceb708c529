#include "icumort/ingest.hpp"
#include "icumort/csv.hpp"
#include "icumort/errors.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <unordered_map>

namespace icumort {

namespace {

std::vector<std::string> split_codes(const std::string& joined) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= joined.size()) {
        std::size_t end = joined.find(';', start);
        if (end == std::string::npos) end = joined.size();
        if (end > start) out.emplace_back(joined.substr(start, end - start));
        start = end + 1;
    }
    return out;
}

std::string join_codes(const std::vector<std::string>& codes) {
    std::string out;
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (i) out.push_back(';');
        out += codes[i];
    }
    return out;
}

} // namespace

json IngestReport::to_json() const {
    json j;
    j["input_stays"] = input_stays;
    j["returned"] = returned;
    j["excluded_short_stay"] = excluded_short_stay;
    j["malformed"] = malformed;
    j["events_in"] = events_in;
    j["events_kept"] = events_kept;
    j["events_dropped_late"] = events_dropped_late;
    j["events_dropped_negative"] = events_dropped_negative;
    j["events_unknown_stay"] = events_unknown_stay;
    j["events_malformed"] = events_malformed;
    j["warnings"] = warnings;
    return j;
}

std::vector<StayRecord> assemble_statics(const std::vector<StaticsRow>& statics,
                                         IngestReport& report) {
    report.input_stays += statics.size();
    std::vector<StayRecord> stays;
    for (const auto& row : statics) {
        if (row.los_hours < kGridHours) {
            ++report.excluded_short_stay;
            continue;
        }
        const bool died = row.death_offset_h.has_value();
        if (died && *row.death_offset_h <= kGridHours) {
            // los >= 24 but death recorded inside the first 24 h: the label
            // cannot be established from contradictory discharge info.
            ++report.malformed;
            report.warnings.push_back(fmt::format(
                "stay {}: death offset {}h contradicts los {}h; dropped", row.stay_id,
                *row.death_offset_h, row.los_hours));
            continue;
        }
        StayRecord s;
        s.stay_id = row.stay_id;
        s.age = row.age;
        s.sex = row.sex;
        s.race = row.race;
        s.ethnicity = row.ethnicity;
        s.comorbidity_codes = row.icd_codes;
        s.admit_to_icu_h = row.admit_to_icu_h;
        s.los_hours = row.los_hours;
        s.died_inpatient = died;
        if (died) s.time_to_death_hours = row.death_offset_h;
        s.hospital_id = row.hospital_id;
        stays.push_back(std::move(s));
    }
    std::sort(stays.begin(), stays.end(),
              [](const StayRecord& a, const StayRecord& b) { return a.stay_id < b.stay_id; });
    report.returned += stays.size();
    return stays;
}

std::vector<StayRecord> assemble_stays(const std::vector<RawEvent>& events,
                                       const std::vector<StaticsRow>& statics,
                                       const SchemaMap& map, IngestReport& report) {
    std::vector<StayRecord> stays = assemble_statics(statics, report);
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < stays.size(); ++i) index.emplace(stays[i].stay_id, i);

    report.events_in += events.size();
    for (const auto& e : events) {
        auto it = index.find(e.stay_id);
        if (it == index.end()) {
            ++report.events_unknown_stay;
            continue;
        }
        if (e.time_offset_h < 0.0) {
            ++report.events_dropped_negative;
            continue;
        }
        if (e.time_offset_h > kGridHours) {
            ++report.events_dropped_late;
            continue;
        }
        if (e.value_numeric.has_value() == e.value_text.has_value()) {
            ++report.events_malformed;
            continue;
        }
        RawEvent canonical = e;
        canonical.variable = map.canonical_variable(e.variable);
        stays[it->second].events.push_back(std::move(canonical));
        ++report.events_kept;
    }

    for (auto& s : stays) {
        std::stable_sort(s.events.begin(), s.events.end(),
                         [](const RawEvent& a, const RawEvent& b) {
                             if (a.time_offset_h != b.time_offset_h)
                                 return a.time_offset_h < b.time_offset_h;
                             return a.variable < b.variable;
                         });
    }
    return stays;
}

void stream_filter_events(const std::string& events_csv, const std::string& events_out,
                          const std::vector<StayRecord>& stays, const SchemaMap& map,
                          IngestReport& report) {
    std::unordered_map<std::string, bool> known;
    for (const auto& s : stays) known.emplace(s.stay_id, true);

    csv::Writer out(events_out);
    out.write_row({"stay_id", "variable", "time_offset_h", "value_numeric", "value_text", "unit"});

    int c_id = -1, c_var = -1, c_time = -1, c_num = -1, c_text = -1, c_unit = -1;
    std::string current;
    std::unordered_map<std::string, bool> closed;
    csv::for_each_row(
        events_csv,
        [&](const std::vector<std::string>& header) {
            auto col = [&](std::string_view name) {
                for (std::size_t i = 0; i < header.size(); ++i)
                    if (header[i] == name) return static_cast<int>(i);
                throw data_error(
                    fmt::format("{}: required column '{}' not found", events_csv, name));
            };
            c_id = col("stay_id");
            c_var = col("variable");
            c_time = col("time_offset_h");
            c_num = col("value_numeric");
            c_text = col("value_text");
            c_unit = col("unit");
        },
        [&](const std::vector<std::string>& r) {
            ++report.events_in;
            if (r[c_id] != current) {
                if (!current.empty()) closed.emplace(current, true);
                if (closed.count(r[c_id])) {
                    throw data_error(fmt::format(
                        "{}: rows for stay '{}' are not contiguous; the streaming ingest needs "
                        "the file grouped by stay_id (sort it first)",
                        events_csv, r[c_id]));
                }
                current = r[c_id];
            }
            if (!known.count(r[c_id])) {
                ++report.events_unknown_stay;
                return true;
            }
            const auto t = csv::parse_double(r[c_time]);
            if (!t || *t < 0.0) {
                ++report.events_dropped_negative;
                return true;
            }
            if (*t > kGridHours) {
                ++report.events_dropped_late;
                return true;
            }
            const bool has_num = csv::parse_double(r[c_num]).has_value();
            const bool has_text = !r[c_text].empty();
            if (has_num == has_text) {
                ++report.events_malformed;
                return true;
            }
            ++report.events_kept;
            out.write_row({r[c_id], map.canonical_variable(r[c_var]), r[c_time], r[c_num],
                           r[c_text], r[c_unit]});
            return true;
        });
}

std::vector<StaticsRow> read_statics_csv(const std::string& path) {
    csv::Table t = csv::read_file(path);
    const int c_id = t.require_column("stay_id", path);
    const int c_age = t.require_column("age", path);
    const int c_sex = t.require_column("sex", path);
    const int c_race = t.require_column("race", path);
    const int c_eth = t.require_column("ethnicity", path);
    const int c_admit = t.require_column("admit_dt_offset", path);
    const int c_los = t.require_column("los_hours", path);
    const int c_death = t.require_column("death_offset_h", path);
    const int c_hosp = t.require_column("hospital_id", path);
    const int c_icd = t.require_column("icd_codes", path);

    std::vector<StaticsRow> rows;
    rows.reserve(t.rows.size());
    for (const auto& r : t.rows) {
        StaticsRow s;
        s.stay_id = r[c_id];
        s.age = static_cast<int>(csv::parse_double(r[c_age]).value_or(0));
        s.sex = r[c_sex];
        s.race = r[c_race];
        s.ethnicity = r[c_eth];
        s.admit_to_icu_h = csv::parse_double(r[c_admit]).value_or(0.0);
        s.los_hours = csv::parse_double(r[c_los]).value_or(0.0);
        s.death_offset_h = csv::parse_double(r[c_death]);
        s.hospital_id = r[c_hosp];
        s.icd_codes = split_codes(r[c_icd]);
        rows.push_back(std::move(s));
    }
    return rows;
}

std::vector<RawEvent> read_events_csv(const std::string& path) {
    std::vector<RawEvent> events;
    int c_id = -1, c_var = -1, c_time = -1, c_num = -1, c_text = -1, c_unit = -1;
    csv::for_each_row(
        path,
        [&](const std::vector<std::string>& header) {
            auto col = [&](std::string_view name) {
                for (std::size_t i = 0; i < header.size(); ++i)
                    if (header[i] == name) return static_cast<int>(i);
                throw data_error(fmt::format("{}: required column '{}' not found", path, name));
            };
            c_id = col("stay_id");
            c_var = col("variable");
            c_time = col("time_offset_h");
            c_num = col("value_numeric");
            c_text = col("value_text");
            c_unit = col("unit");
        },
        [&](const std::vector<std::string>& r) {
            RawEvent e;
            e.stay_id = r[c_id];
            e.variable = r[c_var];
            e.time_offset_h = csv::parse_double(r[c_time]).value_or(-1.0);
            e.value_numeric = csv::parse_double(r[c_num]);
            if (!r[c_text].empty()) e.value_text = r[c_text];
            e.unit = r[c_unit];
            events.push_back(std::move(e));
            return true;
        });
    return events;
}

void for_each_stay_events(const std::string& events_csv,
                          const std::function<void(const std::string&, std::vector<RawEvent>&)>& fn) {
    int c_id = -1, c_var = -1, c_time = -1, c_num = -1, c_text = -1, c_unit = -1;
    std::string current;
    std::vector<RawEvent> group;
    csv::for_each_row(
        events_csv,
        [&](const std::vector<std::string>& header) {
            auto col = [&](std::string_view name) {
                for (std::size_t i = 0; i < header.size(); ++i)
                    if (header[i] == name) return static_cast<int>(i);
                throw data_error(
                    fmt::format("{}: required column '{}' not found", events_csv, name));
            };
            c_id = col("stay_id");
            c_var = col("variable");
            c_time = col("time_offset_h");
            c_num = col("value_numeric");
            c_text = col("value_text");
            c_unit = col("unit");
        },
        [&](const std::vector<std::string>& r) {
            if (r[c_id] != current) {
                if (!group.empty()) fn(current, group);
                group.clear();
                current = r[c_id];
            }
            RawEvent e;
            e.stay_id = r[c_id];
            e.variable = r[c_var];
            e.time_offset_h = csv::parse_double(r[c_time]).value_or(0.0);
            e.value_numeric = csv::parse_double(r[c_num]);
            if (!r[c_text].empty()) e.value_text = r[c_text];
            e.unit = r[c_unit];
            group.push_back(std::move(e));
            return true;
        });
    if (!group.empty()) fn(current, group);
}

std::map<std::string, bool> scan_notes_presence(const std::string& notes_csv) {
    std::map<std::string, bool> present;
    int c_id = -1, c_time = -1;
    csv::for_each_row(
        notes_csv,
        [&](const std::vector<std::string>& header) {
            for (std::size_t i = 0; i < header.size(); ++i) {
                if (header[i] == "stay_id") c_id = static_cast<int>(i);
                if (header[i] == "note_time_offset_h") c_time = static_cast<int>(i);
            }
            if (c_id < 0 || c_time < 0) {
                throw data_error(fmt::format("{}: need stay_id and note_time_offset_h", notes_csv));
            }
        },
        [&](const std::vector<std::string>& r) {
            const double t = csv::parse_double(r[c_time]).value_or(1e9);
            if (t <= kGridHours) present[r[c_id]] = true;
            return true;
        });
    return present;
}

void write_stays_csv(const std::string& path, const std::vector<StayRecord>& stays) {
    csv::Writer w(path);
    w.write_row({"stay_id", "age", "sex", "race", "ethnicity", "admit_dt_offset", "los_hours",
                 "died", "death_offset_h", "hospital_id", "icd_codes", "has_notes"});
    for (const auto& s : stays) {
        w.write_row({s.stay_id, std::to_string(s.age), s.sex, s.race, s.ethnicity,
                     csv::format_double(s.admit_to_icu_h), csv::format_double(s.los_hours),
                     s.died_inpatient ? "1" : "0",
                     s.time_to_death_hours ? csv::format_double(*s.time_to_death_hours) : "",
                     s.hospital_id, join_codes(s.comorbidity_codes),
                     s.modality_flags.has_notes ? "1" : "0"});
    }
}

std::vector<StayRecord> read_stays_csv(const std::string& path) {
    csv::Table t = csv::read_file(path);
    const int c_id = t.require_column("stay_id", path);
    const int c_age = t.require_column("age", path);
    const int c_sex = t.require_column("sex", path);
    const int c_race = t.require_column("race", path);
    const int c_eth = t.require_column("ethnicity", path);
    const int c_admit = t.require_column("admit_dt_offset", path);
    const int c_los = t.require_column("los_hours", path);
    const int c_died = t.require_column("died", path);
    const int c_death = t.require_column("death_offset_h", path);
    const int c_hosp = t.require_column("hospital_id", path);
    const int c_icd = t.require_column("icd_codes", path);
    const int c_notes = t.require_column("has_notes", path);

    std::vector<StayRecord> stays;
    stays.reserve(t.rows.size());
    for (const auto& r : t.rows) {
        StayRecord s;
        s.stay_id = r[c_id];
        s.age = static_cast<int>(csv::parse_double(r[c_age]).value_or(0));
        s.sex = r[c_sex];
        s.race = r[c_race];
        s.ethnicity = r[c_eth];
        s.admit_to_icu_h = csv::parse_double(r[c_admit]).value_or(0.0);
        s.los_hours = csv::parse_double(r[c_los]).value_or(0.0);
        s.died_inpatient = r[c_died] == "1";
        s.time_to_death_hours = csv::parse_double(r[c_death]);
        s.hospital_id = r[c_hosp];
        s.comorbidity_codes = split_codes(r[c_icd]);
        s.modality_flags.has_notes = r[c_notes] == "1";
        stays.push_back(std::move(s));
    }
    return stays;
}

void write_events_csv(const std::string& path, const std::vector<StayRecord>& stays) {
    csv::Writer w(path);
    w.write_row({"stay_id", "variable", "time_offset_h", "value_numeric", "value_text", "unit"});
    for (const auto& s : stays) {
        for (const auto& e : s.events) {
            w.write_row({e.stay_id, e.variable, csv::format_double(e.time_offset_h),
                         e.value_numeric ? csv::format_double(*e.value_numeric) : "",
                         e.value_text.value_or(""), e.unit});
        }
    }
}

} // namespace icumort
