#include "icumort/risk_scores.hpp"
#include "icumort/defaults.hpp"
#include "icumort/errors.hpp"

#include <fmt/core.h>

#include <cmath>

namespace icumort::scores {

namespace {

int band_points(const json& bands, double v) {
    for (const auto& b : bands) {
        const double ge = b.contains("ge") ? b.at("ge").get<double>()
                                           : -std::numeric_limits<double>::infinity();
        const double lt = b.contains("lt") ? b.at("lt").get<double>()
                                           : std::numeric_limits<double>::infinity();
        if (v >= ge && v < lt) return b.at("points").get<int>();
    }
    return 0;
}

// "worst" evaluates both 24 h extremes and keeps the higher points
int select_points(const json& comp, const ClinicalSnapshot& s, const json& bands) {
    const auto ext = s.get(comp.at("input").get<std::string>());
    if (!ext) return 0;
    const std::string select = comp.value("select", "worst");
    if (select == "min") return band_points(bands, ext->min);
    if (select == "max") return band_points(bands, ext->max);
    return std::max(band_points(bands, ext->min), band_points(bands, ext->max));
}

bool snapshot_flag(const ClinicalSnapshot& s, const std::string& name) {
    if (name == "ventilated") return s.ventilated;
    if (name == "acute_renal_failure") return s.acute_renal_failure;
    if (name == "metastatic_cancer") return s.metastatic_cancer;
    if (name == "hematologic_malignancy") return s.hematologic_malignancy;
    if (name == "aids") return s.aids;
    if (name == "severe_organ_insufficiency") return s.severe_organ_insufficiency;
    throw config_error(fmt::format("risk score tables reference unknown flag '{}'", name));
}

double dose_of(const ClinicalSnapshot& s, const char* drug) {
    auto it = s.vaso_dose.find(drug);
    return it == s.vaso_dose.end() ? 0.0 : it->second;
}

} // namespace

ScoreTables ScoreTables::from_json(const json& doc, const std::string& origin) {
    ScoreTables t;
    t.doc_ = doc;
    for (const char* key : {"sofa", "saps2", "oasis", "apache2", "sirs"}) {
        if (!doc.contains(key)) {
            throw config_error(fmt::format("{}: missing '{}' table", origin, key));
        }
    }
    return t;
}

const ScoreTables& ScoreTables::builtin() {
    static const ScoreTables tables = ScoreTables::from_json(
        parse_json_text(std::string(defaults::risk_score_tables_json()), "risk_score_tables"),
        "risk_score_tables");
    return tables;
}

int ScoreTables::score_components(const json& components, const ClinicalSnapshot& s) const {
    int total = 0;
    for (const auto& comp : components) {
        const std::string kind = comp.at("kind").get<std::string>();
        if (kind == "bands") {
            total += select_points(comp, s, comp.at("bands"));
        } else if (kind == "bands_if_flag") {
            if (snapshot_flag(s, comp.at("flag").get<std::string>())) {
                total += select_points(comp, s, comp.at("bands"));
            }
        } else if (kind == "bands_doubled_if") {
            int pts = select_points(comp, s, comp.at("bands"));
            if (snapshot_flag(s, comp.at("flag").get<std::string>())) pts *= 2;
            total += pts;
        } else if (kind == "flag") {
            if (snapshot_flag(s, comp.at("flag").get<std::string>())) {
                total += comp.at("points").get<int>();
            }
        } else if (kind == "category") {
            const std::string field = comp.at("input").get<std::string>();
            std::string value;
            if (field == "admission_type") value = s.admission_type;
            if (!value.empty() && comp.at("points").contains(value)) {
                total += comp.at("points").at(value).get<int>();
            }
        } else if (kind == "max_of_flags") {
            int best = 0;
            for (const auto& [flag, pts] : comp.at("flags").items()) {
                if (snapshot_flag(s, flag)) best = std::max(best, pts.get<int>());
            }
            total += best;
        } else if (kind == "sofa_respiration") {
            const auto pf = s.get("pf_ratio");
            if (pf) {
                const double v = pf->min;
                int pts = 0;
                if (v < comp.at("pf_100").get<double>()) pts = 4;
                else if (v < comp.at("pf_200").get<double>()) pts = 3;
                else if (v < comp.at("pf_300").get<double>()) pts = 2;
                else if (v < comp.at("pf_400").get<double>()) pts = 1;
                if (!s.ventilated) pts = std::min(pts, comp.at("unvented_cap").get<int>());
                total += pts;
            }
        } else if (kind == "sofa_cardiovascular") {
            const double dopa = dose_of(s, "dopamine");
            const double dobu = dose_of(s, "dobutamine");
            const double epi = dose_of(s, "epinephrine");
            const double norepi = dose_of(s, "norepinephrine");
            const double split = comp.at("epi_norepi_split").get<double>();
            const double dopa_low = comp.at("dopamine_low").get<double>();
            const double dopa_high = comp.at("dopamine_high").get<double>();
            int pts = 0;
            const auto map_ext = s.get("map");
            if (map_ext && map_ext->min < comp.at("map_lt").get<double>()) pts = 1;
            if ((dopa > 0 && dopa <= dopa_low) || dobu > 0) pts = std::max(pts, 2);
            if ((dopa > dopa_low) || (epi > 0 && epi <= split) || (norepi > 0 && norepi <= split)) {
                pts = std::max(pts, 3);
            }
            if (dopa > dopa_high || epi > split || norepi > split) pts = std::max(pts, 4);
            total += pts;
        } else if (kind == "sofa_renal") {
            int pts = 0;
            const auto creat = s.get("creatinine");
            if (creat) pts = band_points(comp.at("creatinine_bands"), creat->max);
            const auto urine = s.get("urine_24h_ml");
            if (urine) {
                if (urine->min < comp.at("urine_lt_4points").get<double>()) pts = std::max(pts, 4);
                else if (urine->min < comp.at("urine_lt_3points").get<double>()) pts = std::max(pts, 3);
            }
            total += pts;
        } else if (kind == "apache_oxygenation") {
            const auto fio2 = s.get("fio2");
            const double split = comp.at("fio2_split").get<double>();
            if (fio2 && fio2->max >= split) {
                const auto aado2 = s.get("aado2");
                if (aado2) total += band_points(comp.at("aado2_bands"), aado2->max);
            } else {
                const auto pao2 = s.get("pao2");
                if (pao2) total += band_points(comp.at("pao2_bands"), pao2->min);
            }
        } else if (kind == "apache_chronic") {
            if (snapshot_flag(s, comp.at("flag").get<std::string>())) {
                const bool elective = s.admission_type == "scheduled_surgical";
                total += elective ? comp.at("elective_points").get<int>()
                                  : comp.at("nonelective_points").get<int>();
            }
        } else {
            throw config_error(fmt::format("unknown score component kind '{}'", kind));
        }
    }
    return total;
}

int ScoreTables::sofa(const ClinicalSnapshot& s) const {
    return score_components(doc_.at("sofa").at("components"), s);
}
int ScoreTables::saps2(const ClinicalSnapshot& s) const {
    return score_components(doc_.at("saps2").at("components"), s);
}
int ScoreTables::oasis(const ClinicalSnapshot& s) const {
    return score_components(doc_.at("oasis").at("components"), s);
}
int ScoreTables::apache2(const ClinicalSnapshot& s) const {
    return score_components(doc_.at("apache2").at("components"), s);
}

int ScoreTables::sirs(const ClinicalSnapshot& s) const {
    int count = 0;
    for (const auto& criterion : doc_.at("sirs").at("criteria")) {
        bool met = false;
        for (const auto& clause : criterion.at("any")) {
            const auto ext = s.get(clause.at("input").get<std::string>());
            if (!ext) continue;
            const double v = clause.at("side").get<std::string>() == "max" ? ext->max : ext->min;
            const double threshold = clause.at("value").get<double>();
            const std::string op = clause.at("op").get<std::string>();
            if ((op == "gt" && v > threshold) || (op == "lt" && v < threshold)) {
                met = true;
                break;
            }
        }
        if (met) ++count;
    }
    return count;
}

int compute_sofa(const ClinicalSnapshot& s) { return ScoreTables::builtin().sofa(s); }
int compute_saps2(const ClinicalSnapshot& s) { return ScoreTables::builtin().saps2(s); }
int compute_oasis(const ClinicalSnapshot& s) { return ScoreTables::builtin().oasis(s); }
int compute_apache2(const ClinicalSnapshot& s) { return ScoreTables::builtin().apache2(s); }

DerivedIndices compute_derived(const ClinicalSnapshot& s) {
    DerivedIndices d;
    d.sirs = ScoreTables::builtin().sirs(s);
    if (const auto si = s.get("shock_index")) d.shock_index = si->max;
    if (const auto pf = s.get("pf_ratio")) d.pf_ratio = pf->min;
    return d;
}

RiskScorePanel compute_panel(const ClinicalSnapshot& s) {
    RiskScorePanel p;
    const ScoreTables& t = ScoreTables::builtin();
    p.sofa = t.sofa(s);
    p.saps2 = t.saps2(s);
    p.oasis = t.oasis(s);
    p.apache2 = t.apache2(s);
    const DerivedIndices d = compute_derived(s);
    p.sirs = d.sirs;
    p.shock_index = d.shock_index;
    p.pf_ratio = d.pf_ratio;
    return p;
}

ClinicalSnapshot build_snapshot(const HourlyGrid& grid, const GridSchema& schema,
                                const StayRecord& stay, const MedFlags& meds,
                                const ComorbidityMap& comorbidities) {
    ClinicalSnapshot s;
    struct ColInput {
        const char* column;
        const char* input;
    };
    static const ColInput kMap[] = {
        {"Heart Rate", "heart_rate"}, {"SBP", "sbp"},
        {"DBP", "dbp"},               {"MAP", "map"},
        {"Temperature", "temperature"}, {"Respiratory Rate", "resp_rate"},
        {"PaO2", "pao2"},             {"PaCO2", "paco2"},
        {"FiO2", "fio2"},             {"pH", "ph"},
        {"Sodium", "sodium"},         {"Potassium", "potassium"},
        {"Bicarbonate", "bicarbonate"}, {"BUN", "bun"},
        {"Creatinine", "creatinine"}, {"Bilirubin Total", "bilirubin"},
        {"Platelets", "platelets"},   {"WBC", "wbc"},
        {"Hematocrit", "hematocrit"}, {"Hemoglobin", "hemoglobin"},
        {"Lactate", "lactate"},       {"GCS Total", "gcs"},
    };
    for (const auto& [column, input] : kMap) {
        const int c = schema.index_of(column);
        if (c < 0) continue;
        for (int h = 0; h < kGridHours; ++h) {
            if (grid.present(h, c)) s.put(input, grid.value(h, c));
        }
    }

    // per-hour derived series from co-observed cells
    const int c_hr = schema.index_of("Heart Rate");
    const int c_sbp = schema.index_of("SBP");
    const int c_pao2 = schema.index_of("PaO2");
    const int c_paco2 = schema.index_of("PaCO2");
    const int c_fio2 = schema.index_of("FiO2");
    const int c_urine = schema.index_of("UrineOutput");
    const int c_vent = schema.index_of("Ventilated");
    for (int h = 0; h < kGridHours; ++h) {
        if (c_hr >= 0 && c_sbp >= 0 && grid.present(h, c_hr) && grid.present(h, c_sbp)) {
            const double sbp = grid.value(h, c_sbp);
            if (sbp > 0.0) s.put("shock_index", grid.value(h, c_hr) / sbp);
        }
        if (c_pao2 >= 0 && c_fio2 >= 0 && grid.present(h, c_pao2) && grid.present(h, c_fio2)) {
            const double fio2 = grid.value(h, c_fio2);
            if (fio2 > 0.0) s.put("pf_ratio", grid.value(h, c_pao2) / fio2);
            if (c_paco2 >= 0 && grid.present(h, c_paco2)) {
                // alveolar gas equation at sea level, RQ 0.8
                const double aado2 =
                    fio2 * 713.0 - grid.value(h, c_paco2) / 0.8 - grid.value(h, c_pao2);
                s.put("aado2", aado2);
            }
        }
        if (c_vent >= 0 && grid.present(h, c_vent) && grid.value(h, c_vent) > 0.0) {
            s.ventilated = true;
        }
    }

    // 24 h urine total (observed hours only)
    if (c_urine >= 0) {
        double total = 0.0;
        bool any = false;
        for (int h = 0; h < kGridHours; ++h) {
            if (grid.indicators.empty() ? grid.present(h, c_urine)
                                        : grid.indicators[grid.at(h, c_urine)] != 0) {
                total += grid.value(h, c_urine);
                any = true;
            }
        }
        if (any) {
            s.put("urine_24h_ml", total);
            s.put("urine_24h_l", total / 1000.0);
        }
    }

    s.put("age", static_cast<double>(stay.age));
    s.put("preicu_hours", stay.admit_to_icu_h);
    s.vaso_dose = meds.max_dose;

    s.metastatic_cancer = comorbidities.has_condition(stay.comorbidity_codes, "metastatic_cancer");
    s.hematologic_malignancy = comorbidities.has_condition(stay.comorbidity_codes, "lymphoma");
    s.aids = comorbidities.has_condition(stay.comorbidity_codes, "aids_hiv");
    s.severe_organ_insufficiency =
        comorbidities.has_condition(stay.comorbidity_codes, "liver_disease") ||
        comorbidities.has_condition(stay.comorbidity_codes, "renal_failure") ||
        comorbidities.has_condition(stay.comorbidity_codes, "aids_hiv");
    return s;
}

} // namespace icumort::scores
