#include "icumort/harmonize.hpp"
#include "icumort/csv.hpp"
#include "icumort/defaults.hpp"
#include "icumort/errors.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cctype>
#include <cmath>

namespace icumort {

namespace {

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string normalize_code(std::string_view code) {
    std::string out;
    out.reserve(code.size());
    for (char c : code) {
        if (c == '.' || c == ' ') continue;
        out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    return out;
}

// extracts the token following "route" in a medication row
std::string route_of(const std::string& text_lower) {
    const std::size_t pos = text_lower.find("route");
    if (pos == std::string::npos) return "";
    std::size_t i = pos + 5;
    while (i < text_lower.size() && (text_lower[i] == ' ' || text_lower[i] == ':')) ++i;
    std::size_t j = i;
    while (j < text_lower.size() && std::isalnum(static_cast<unsigned char>(text_lower[j]))) ++j;
    std::string route = text_lower.substr(i, j - i);
    std::transform(route.begin(), route.end(), route.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return route;
}

} // namespace

ValidRangeTable ValidRangeTable::from_json(const json& doc, const std::string& origin) {
    ValidRangeTable t;
    for (const auto& [var, entry] : doc.items()) {
        ValidRange r;
        r.min = entry.at("min").get<double>();
        r.max = entry.at("max").get<double>();
        if (!(r.min < r.max)) {
            throw config_error(fmt::format("{}: range for '{}' has min >= max", origin, var));
        }
        t.ranges_.emplace(var, r);
    }
    return t;
}

const ValidRange* ValidRangeTable::find(const std::string& variable) const {
    auto it = ranges_.find(variable);
    return it == ranges_.end() ? nullptr : &it->second;
}

ComorbidityMap ComorbidityMap::from_json(const json& doc, const std::string& origin) {
    ComorbidityMap m;
    for (const auto& [name, prefixes] : doc.items()) {
        std::vector<std::string> plist;
        for (const auto& p : prefixes) plist.push_back(normalize_code(p.get<std::string>()));
        if (plist.empty()) {
            throw config_error(fmt::format("{}: condition '{}' has no prefixes", origin, name));
        }
        m.names_.push_back(name);
        m.conditions_.push_back(std::move(plist));
    }
    if (m.names_.size() != 30) {
        throw config_error(fmt::format("{}: expected 30 conditions, found {}", origin,
                                       m.names_.size()));
    }
    return m;
}

std::vector<std::uint8_t> ComorbidityMap::encode(const std::vector<std::string>& codes) const {
    std::vector<std::string> normalized;
    normalized.reserve(codes.size());
    for (const auto& c : codes) normalized.push_back(normalize_code(c));

    std::vector<std::uint8_t> bits(conditions_.size(), 0);
    for (std::size_t c = 0; c < conditions_.size(); ++c) {
        for (const auto& prefix : conditions_[c]) {
            for (const auto& code : normalized) {
                if (code.size() >= prefix.size() && code.compare(0, prefix.size(), prefix) == 0) {
                    bits[c] = 1;
                    break;
                }
            }
            if (bits[c]) break;
        }
    }
    return bits;
}

bool ComorbidityMap::has_condition(const std::vector<std::string>& codes,
                                   const std::string& name) const {
    for (std::size_t c = 0; c < names_.size(); ++c) {
        if (names_[c] != name) continue;
        auto bits = encode(codes);
        return bits[c] != 0;
    }
    return false;
}

MedLexicon MedLexicon::from_json(const json& doc, const std::string& origin) {
    MedLexicon lex;
    const auto& vaso = doc.at("vasopressors");
    for (const auto& n : vaso.at("names")) lex.vasopressor_names.push_back(to_lower(n.get<std::string>()));
    if (vaso.contains("dose_keys")) {
        for (const auto& [sub, key] : vaso.at("dose_keys").items()) {
            lex.dose_keys.emplace_back(to_lower(sub), key.get<std::string>());
        }
        // longest substring first so "norepinephrine" wins over "epinephrine"
        std::sort(lex.dose_keys.begin(), lex.dose_keys.end(),
                  [](const auto& a, const auto& b) {
                      if (a.first.size() != b.first.size()) return a.first.size() > b.first.size();
                      return a.first < b.first;
                  });
    }
    const auto& abx = doc.at("antibiotics");
    for (const auto& n : abx.at("names")) lex.antibiotic_names.push_back(to_lower(n.get<std::string>()));
    if (abx.contains("gsn_codes")) {
        for (const auto& n : abx.at("gsn_codes")) lex.antibiotic_gsn.push_back(n.get<std::string>());
    }
    if (abx.contains("excluded_routes")) {
        for (const auto& n : abx.at("excluded_routes")) lex.excluded_routes.insert(n.get<std::string>());
    }
    if (lex.vasopressor_names.empty() || lex.antibiotic_names.empty()) {
        throw config_error(fmt::format("{}: medication lexicon must not be empty", origin));
    }
    return lex;
}

void HarmonizeReport::note_quarantine(const std::string& reason) {
    ++quarantined;
    if (quarantine_reasons.size() < 20) quarantine_reasons.push_back(reason);
}

json HarmonizeReport::to_json() const {
    json j;
    j["events_in"] = events_in;
    j["units_converted"] = units_converted;
    j["quarantined"] = quarantined;
    j["outliers_removed"] = outliers_removed;
    j["unmapped_variable"] = unmapped_variable;
    j["med_rows"] = med_rows;
    j["stays"] = stays;
    j["quarantine_reasons"] = quarantine_reasons;
    return j;
}

GridSchema default_grid_schema() {
    GridSchema s;
    auto cont = [&](const char* name) { s.columns.push_back({name, ColumnKind::Continuous, false}); };
    cont("Heart Rate");
    cont("SpO2");
    cont("Respiratory Rate");
    cont("Temperature");
    cont("SBP");
    cont("DBP");
    cont("MAP");
    cont("Glucose");
    cont("Creatinine");
    cont("BUN");
    cont("Lactate");
    cont("Hemoglobin");
    cont("Hematocrit");
    cont("WBC");
    cont("Platelets");
    cont("Sodium");
    cont("Potassium");
    cont("Bicarbonate");
    cont("Bilirubin Total");
    cont("Bilirubin Direct");
    cont("pH");
    cont("PaO2");
    cont("PaCO2");
    cont("FiO2");
    cont("GCS Total");
    cont("GCS Motor");
    cont("GCS Verbal");
    cont("GCS Eye");
    cont("RASS");
    cont("UrineOutput");
    s.columns.push_back({"VentMode", ColumnKind::Categorical, false});
    s.columns.push_back({"Ventilated", ColumnKind::Binary, false});
    s.columns.push_back({"Vasopressor", ColumnKind::Binary, true});
    s.columns.push_back({"Antibiotic", ColumnKind::Binary, true});
    return s;
}

std::vector<double> filter_outliers(const std::string& variable, const std::vector<double>& values,
                                    const ValidRangeTable& ranges, std::size_t* removed) {
    const ValidRange* r = ranges.find(variable);
    if (!r) return values; // pass-through: variable not governed by the table
    std::vector<double> kept;
    kept.reserve(values.size());
    for (double v : values) {
        if (v >= r->min && v <= r->max) {
            kept.push_back(v);
        } else if (removed) {
            ++*removed;
        }
    }
    return kept;
}

void bin_hourly(const std::vector<RawEvent>& events, const GridSchema& schema,
                const SchemaMap& map, HourlyGrid& grid) {
    const std::size_t F = schema.size();
    // per-cell accumulators
    std::vector<double> sum(kGridHours * F, 0.0);
    std::vector<int> count(kGridHours * F, 0);
    std::vector<std::map<double, int>> mode_counts; // categorical cells only

    std::vector<int> cat_slot(kGridHours * F, -1);

    for (const auto& e : events) {
        const int col = schema.index_of(e.variable);
        if (col < 0) continue;
        if (e.time_offset_h < 0.0 || e.time_offset_h >= static_cast<double>(kGridHours)) continue;
        const int hour = static_cast<int>(std::floor(e.time_offset_h));
        const std::size_t cell = grid.at(hour, col);
        const ColumnKind kind = schema.columns[col].kind;

        double v;
        if (e.value_numeric.has_value()) {
            v = *e.value_numeric;
        } else if (e.value_text.has_value()) {
            auto code = map.encode_value(e.variable, *e.value_text);
            if (!code) continue;
            v = *code;
        } else {
            continue;
        }

        switch (kind) {
        case ColumnKind::Continuous:
            sum[cell] += v;
            count[cell] += 1;
            break;
        case ColumnKind::Binary:
            // any positive observation marks the hour
            sum[cell] = std::max(sum[cell], v > 0.0 ? 1.0 : 0.0);
            count[cell] += 1;
            break;
        case ColumnKind::Categorical: {
            if (cat_slot[cell] < 0) {
                cat_slot[cell] = static_cast<int>(mode_counts.size());
                mode_counts.emplace_back();
            }
            mode_counts[cat_slot[cell]][v] += 1;
            count[cell] += 1;
            break;
        }
        }
    }

    for (int h = 0; h < kGridHours; ++h) {
        for (std::size_t c = 0; c < F; ++c) {
            const std::size_t cell = grid.at(h, static_cast<int>(c));
            if (count[cell] == 0) continue;
            double v = 0.0;
            switch (schema.columns[c].kind) {
            case ColumnKind::Continuous:
                v = sum[cell] / count[cell];
                break;
            case ColumnKind::Binary:
                v = sum[cell];
                break;
            case ColumnKind::Categorical: {
                // mode; ties break to the smallest encoded value (map order)
                const auto& counts = mode_counts[cat_slot[cell]];
                int best = -1;
                for (const auto& [code, cnt] : counts) {
                    if (cnt > best) {
                        best = cnt;
                        v = code;
                    }
                }
                break;
            }
            }
            grid.set(h, static_cast<int>(c), v, Provenance::Observed);
        }
    }
}

MedFlags extract_med_flags(const std::vector<RawEvent>& med_rows, const MedLexicon& lexicon) {
    MedFlags flags;
    for (const auto& e : med_rows) {
        if (e.time_offset_h < 0.0 || e.time_offset_h >= static_cast<double>(kGridHours)) continue;
        const int hour = static_cast<int>(std::floor(e.time_offset_h));
        const std::string hay = to_lower(e.variable) + " " + to_lower(e.value_text.value_or(""));

        for (const auto& name : lexicon.vasopressor_names) {
            if (hay.find(name) == std::string::npos) continue;
            flags.vasopressor[hour] = 1;
            if (e.value_numeric.has_value()) {
                for (const auto& [sub, key] : lexicon.dose_keys) {
                    if (hay.find(sub) != std::string::npos) {
                        auto [it, inserted] = flags.max_dose.emplace(key, *e.value_numeric);
                        if (!inserted) it->second = std::max(it->second, *e.value_numeric);
                        break;
                    }
                }
            }
            break;
        }

        bool is_abx = false;
        for (const auto& name : lexicon.antibiotic_names) {
            if (hay.find(name) != std::string::npos) {
                is_abx = true;
                break;
            }
        }
        if (!is_abx) {
            for (const auto& gsn : lexicon.antibiotic_gsn) {
                if (hay.find(gsn) != std::string::npos) {
                    is_abx = true;
                    break;
                }
            }
        }
        if (is_abx) {
            const std::string route = route_of(hay);
            if (!route.empty() && lexicon.excluded_routes.count(route)) continue; // eye/ear drops
            flags.antibiotic[hour] = 1;
        }
    }
    return flags;
}

std::map<int, double> unify_urine_output(const std::vector<RawEvent>& events,
                                         const std::vector<std::string>& aliases,
                                         HarmonizeReport& report) {
    std::map<int, double> totals;
    for (const auto& e : events) {
        bool is_alias = false;
        for (const auto& a : aliases) {
            if (e.variable == a) {
                is_alias = true;
                break;
            }
        }
        if (!is_alias || !e.value_numeric.has_value()) continue;
        if (e.time_offset_h < 0.0 || e.time_offset_h >= static_cast<double>(kGridHours)) continue;
        if (*e.value_numeric < 0.0) {
            report.note_quarantine(
                fmt::format("stay {}: negative urine volume {}", e.stay_id, *e.value_numeric));
            continue;
        }
        totals[static_cast<int>(std::floor(e.time_offset_h))] += *e.value_numeric;
    }
    return totals;
}

std::vector<std::uint8_t> encode_comorbidities(const std::vector<std::string>& codes,
                                               const ComorbidityMap& map) {
    return map.encode(codes);
}

HarmonizedStay harmonize_stay(const StayRecord& stay, const HarmonizeContext& ctx,
                              HarmonizeReport& report) {
    HarmonizedStay out;
    out.grid.init(stay.stay_id, ctx.grid_schema.size());
    report.events_in += stay.events.size();

    std::vector<RawEvent> regular;
    std::vector<RawEvent> med_rows;
    std::vector<RawEvent> urine_rows;
    regular.reserve(stay.events.size());

    auto is_urine_alias = [&](const std::string& v) {
        for (const auto& a : ctx.urine_aliases)
            if (v == a) return true;
        return false;
    };

    for (const auto& raw : stay.events) {
        ConvertOutcome converted = ctx.schema.convert_units(raw);
        if (converted.quarantined) {
            report.note_quarantine(converted.reason);
            continue;
        }
        if (converted.event.unit != raw.unit) ++report.units_converted;
        RawEvent& e = converted.event;

        const std::string lower_var = to_lower(e.variable);
        bool is_med = lower_var == "med" || lower_var == "medication";
        if (!is_med) {
            for (const auto& name : ctx.lexicon.vasopressor_names) {
                if (lower_var.find(name) != std::string::npos) {
                    is_med = true;
                    break;
                }
            }
        }
        if (is_med) {
            ++report.med_rows;
            med_rows.push_back(std::move(e));
            continue;
        }
        if (is_urine_alias(e.variable)) {
            urine_rows.push_back(std::move(e));
            continue;
        }
        if (ctx.grid_schema.index_of(e.variable) < 0) {
            ++report.unmapped_variable;
            continue;
        }
        // outlier removal on numeric values
        if (e.value_numeric.has_value()) {
            if (const ValidRange* r = ctx.ranges.find(e.variable)) {
                if (*e.value_numeric < r->min || *e.value_numeric > r->max) {
                    ++report.outliers_removed;
                    continue;
                }
            }
        }
        regular.push_back(std::move(e));
    }

    bin_hourly(regular, ctx.grid_schema, ctx.schema, out.grid);

    // urine aliases: range-filter per alias, then sum per hour
    {
        std::vector<RawEvent> filtered;
        filtered.reserve(urine_rows.size());
        for (auto& e : urine_rows) {
            if (e.value_numeric.has_value() && *e.value_numeric >= 0.0) {
                if (const ValidRange* r = ctx.ranges.find(e.variable)) {
                    if (*e.value_numeric < r->min || *e.value_numeric > r->max) {
                        ++report.outliers_removed;
                        continue;
                    }
                }
            }
            filtered.push_back(std::move(e));
        }
        const auto totals = unify_urine_output(filtered, ctx.urine_aliases, report);
        const int col = ctx.grid_schema.index_of("UrineOutput");
        if (col >= 0) {
            for (const auto& [hour, total] : totals) {
                out.grid.set(hour, col, total, Provenance::Observed);
            }
        }
    }

    out.meds = extract_med_flags(med_rows, ctx.lexicon);
    const int c_vaso = ctx.grid_schema.index_of("Vasopressor");
    const int c_abx = ctx.grid_schema.index_of("Antibiotic");
    for (int h = 0; h < kGridHours; ++h) {
        if (c_vaso >= 0 && out.meds.vasopressor[h]) out.grid.set(h, c_vaso, 1.0, Provenance::Observed);
        if (c_abx >= 0 && out.meds.antibiotic[h]) out.grid.set(h, c_abx, 1.0, Provenance::Observed);
    }

    ++report.stays;
    return out;
}

void write_grids_csv(const std::string& path, const GridSchema& schema,
                     const std::vector<HourlyGrid>& grids) {
    csv::Writer w(path);
    w.write_row({"stay_id", "hour", "variable", "value", "provenance"});
    for (const auto& g : grids) {
        for (int h = 0; h < kGridHours; ++h) {
            for (std::size_t c = 0; c < g.n_columns; ++c) {
                const Provenance p = g.prov(h, static_cast<int>(c));
                if (p == Provenance::Missing) continue;
                w.write_row({g.stay_id, std::to_string(h), schema.columns[c].name,
                             csv::format_double(g.value(h, static_cast<int>(c))),
                             p == Provenance::Observed ? "observed" : "imputed"});
            }
        }
    }
}

std::vector<HourlyGrid> read_grids_csv(const std::string& path, const GridSchema& schema) {
    std::vector<HourlyGrid> grids;
    int c_id = -1, c_hour = -1, c_var = -1, c_val = -1, c_prov = -1;
    csv::for_each_row(
        path,
        [&](const std::vector<std::string>& header) {
            for (std::size_t i = 0; i < header.size(); ++i) {
                if (header[i] == "stay_id") c_id = static_cast<int>(i);
                if (header[i] == "hour") c_hour = static_cast<int>(i);
                if (header[i] == "variable") c_var = static_cast<int>(i);
                if (header[i] == "value") c_val = static_cast<int>(i);
                if (header[i] == "provenance") c_prov = static_cast<int>(i);
            }
            if (c_id < 0 || c_hour < 0 || c_var < 0 || c_val < 0 || c_prov < 0) {
                throw data_error(fmt::format("{}: unexpected grid header", path));
            }
        },
        [&](const std::vector<std::string>& r) {
            if (grids.empty() || grids.back().stay_id != r[c_id]) {
                grids.emplace_back();
                grids.back().init(r[c_id], schema.size());
            }
            HourlyGrid& g = grids.back();
            const int col = schema.index_of(r[c_var]);
            if (col < 0) throw data_error(fmt::format("{}: unknown grid variable '{}'", path, r[c_var]));
            const int hour = static_cast<int>(csv::parse_double(r[c_hour]).value_or(-1));
            if (hour < 0 || hour >= kGridHours) {
                throw data_error(fmt::format("{}: bad hour '{}'", path, r[c_hour]));
            }
            const auto v = csv::parse_double(r[c_val]);
            if (!v) throw data_error(fmt::format("{}: bad value '{}'", path, r[c_val]));
            g.set(hour, col, *v,
                  r[c_prov] == "observed" ? Provenance::Observed : Provenance::Imputed);
            return true;
        });
    return grids;
}

void write_med_doses_csv(const std::string& path,
                         const std::vector<std::pair<std::string, MedFlags>>& per_stay) {
    csv::Writer w(path);
    w.write_row({"stay_id", "drug", "max_dose"});
    for (const auto& [stay_id, flags] : per_stay) {
        for (const auto& [drug, dose] : flags.max_dose) {
            w.write_row({stay_id, drug, csv::format_double(dose)});
        }
    }
}

std::map<std::string, std::map<std::string, double>> read_med_doses_csv(const std::string& path) {
    std::map<std::string, std::map<std::string, double>> out;
    csv::Table t = csv::read_file(path);
    const int c_id = t.require_column("stay_id", path);
    const int c_drug = t.require_column("drug", path);
    const int c_dose = t.require_column("max_dose", path);
    for (const auto& r : t.rows) {
        out[r[c_id]][r[c_drug]] = csv::parse_double(r[c_dose]).value_or(0.0);
    }
    return out;
}

HarmonizeContext make_default_harmonize_context() {
    HarmonizeContext ctx;
    const json schema_doc = parse_json_text(std::string(defaults::schema_map_json()), "schema_map");
    ctx.schema = SchemaMap::from_json(schema_doc, "schema_map");
    ctx.ranges = ValidRangeTable::from_json(
        parse_json_text(std::string(defaults::valid_ranges_json()), "valid_ranges"), "valid_ranges");
    ctx.lexicon = MedLexicon::from_json(
        parse_json_text(std::string(defaults::med_lexicon_json()), "med_lexicon"), "med_lexicon");
    ctx.grid_schema = default_grid_schema();
    if (schema_doc.contains("urine_aliases")) {
        for (const auto& a : schema_doc.at("urine_aliases")) {
            ctx.urine_aliases.push_back(a.get<std::string>());
        }
    }
    return ctx;
}

} // namespace icumort
