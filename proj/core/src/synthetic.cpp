#include "icumort/synthetic.hpp"
#include "icumort/csv.hpp"
#include "icumort/errors.hpp"
#include "icumort/rng.hpp"
#include "icumort/types.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>

namespace icumort {

namespace {

double clampd(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

struct Traits {
    double lactate = 0, gcs = 0, age = 0, urine = 0, bun = 0, shock_index = 0;
    double illness = 0; // standardized risk, used for weak couplings
};

struct StayPlan {
    std::string id;
    Traits t;
    int age = 0;
    std::string sex, race, ethnicity, hospital;
    double admit_to_icu_h = 0;
    double los_hours = 0;
    std::optional<double> death_offset_h;
    bool vented = false;
    bool on_pressor = false;
    bool on_antibiotic = false;
    bool has_notes = false;
    std::vector<std::string> icd;
    bool temp_in_f = false;
    int urine_mode = 0; // 0 foley, 1 foley+catheter, 2 void, 3 condom
    double hr_base = 85, sbp_base = 118, dbp_base = 62, spo2_base = 97.5, rr_base = 17;
    double temp_base = 36.8;
    double gcs_total = 15;
    double urine_rate = 80; // mL/h
};

const char* pick(Rng& r, std::initializer_list<const char*> opts) {
    auto it = opts.begin();
    std::advance(it, r.index(opts.size()));
    return *it;
}

std::string weighted_race(Rng& r) {
    const double u = r.uniform();
    if (u < 0.70) return "White";
    if (u < 0.80) return "Black";
    if (u < 0.83) return "Asian";
    if (u < 0.87) return "Hispanic";
    if (u < 0.88) return "Native American";
    if (u < 0.94) return "Other";
    return "Unknown";
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Deterministic component split of a GCS total into (eye, verbal, motor).
void split_gcs(int total, int& e, int& v, int& m) {
    e = 4; v = 5; m = 6;
    int deficit = 15 - total;
    // take points off motor, then verbal, then eye, cycling
    const int floors[3] = {1, 1, 1};
    int* comp[3] = {&m, &v, &e};
    int idx = 0;
    while (deficit > 0) {
        if (*comp[idx % 3] > floors[idx % 3]) {
            --*comp[idx % 3];
            --deficit;
        }
        ++idx;
        if (idx > 100) break;
    }
}

class EventSink {
public:
    explicit EventSink(csv::Writer& w, const std::string& stay_id)
        : w_(w), stay_id_(stay_id) {}

    void num(double t, const std::string& variable, double value, const std::string& unit = "") {
        rows_.push_back({t, variable, csv::format_double(value), "", unit});
    }
    void text(double t, const std::string& variable, const std::string& value) {
        rows_.push_back({t, variable, "", value, ""});
    }

    void flush() {
        std::stable_sort(rows_.begin(), rows_.end(), [](const Row& a, const Row& b) {
            if (a.t != b.t) return a.t < b.t;
            return a.variable < b.variable;
        });
        for (const auto& r : rows_) {
            w_.write_row({stay_id_, r.variable, csv::format_double(r.t), r.num, r.text, r.unit});
        }
        rows_.clear();
    }

private:
    struct Row {
        double t;
        std::string variable, num, text, unit;
    };
    csv::Writer& w_;
    std::string stay_id_;
    std::vector<Row> rows_;
};

} // namespace

GenConfig GenConfig::defaults() {
    GenConfig c;
    c.signal_spec = {{"lactate", 1.9}, {"gcs", 2.0},  {"age", 1.7},
                     {"urine", 1.25},  {"bun", 1.25}, {"shock_index", 1.5}};
    return c;
}

GenConfig GenConfig::from_json(const json& j) {
    GenConfig c = defaults();
    if (j.contains("n_stays")) c.n_stays = j.at("n_stays").get<std::size_t>();
    if (j.contains("mortality_rate")) c.mortality_rate = j.at("mortality_rate").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("hospital_count")) c.hospital_count = j.at("hospital_count").get<int>();
    if (j.contains("notes_fraction")) c.notes_fraction = j.at("notes_fraction").get<double>();
    if (j.contains("signal_spec")) {
        c.signal_spec.clear();
        for (const auto& [k, v] : j.at("signal_spec").items()) {
            c.signal_spec[k] = v.get<double>();
        }
    }
    c.validate();
    return c;
}

json GenConfig::to_json() const {
    json j;
    j["n_stays"] = n_stays;
    j["mortality_rate"] = mortality_rate;
    j["seed"] = seed;
    j["hospital_count"] = hospital_count;
    j["notes_fraction"] = notes_fraction;
    j["signal_spec"] = signal_spec;
    return j;
}

void GenConfig::validate() const {
    if (n_stays == 0) throw config_error("GenConfig: n_stays must be positive");
    if (!(mortality_rate > 0.0 && mortality_rate < 1.0)) {
        throw config_error("GenConfig: mortality_rate must be in (0,1)");
    }
    if (hospital_count < 1) throw config_error("GenConfig: hospital_count must be >= 1");
    for (const auto& [k, v] : signal_spec) {
        if (!std::isfinite(v)) {
            throw config_error(fmt::format("GenConfig: coefficient for '{}' is not finite", k));
        }
    }
}

void generate_synthetic_cohort(const GenConfig& cfg, const SynthPaths& out) {
    cfg.validate();
    Rng root(cfg.seed);
    Rng trait_rng = root.fork("traits");
    Rng demo_rng = root.fork("demographics");
    Rng series_rng = root.fork("series");
    Rng note_rng = root.fork("notes");

    auto coef = [&](const char* k) {
        auto it = cfg.signal_spec.find(k);
        return it == cfg.signal_spec.end() ? 0.0 : it->second;
    };

    const std::size_t n = cfg.n_stays;
    std::vector<StayPlan> plans(n);
    std::vector<double> risk_score(n);

    double coef_norm = 0.0;
    for (const auto& [k, v] : cfg.signal_spec) coef_norm += v * v;
    coef_norm = std::sqrt(std::max(coef_norm, 1e-12));

    for (std::size_t i = 0; i < n; ++i) {
        StayPlan& p = plans[i];
        p.id = fmt::format("s{:06}", i);
        p.t.lactate = trait_rng.gauss();
        p.t.gcs = trait_rng.gauss();
        p.t.age = trait_rng.gauss();
        p.t.urine = trait_rng.gauss();
        p.t.bun = trait_rng.gauss();
        p.t.shock_index = trait_rng.gauss();
        const double z = coef("lactate") * p.t.lactate + coef("gcs") * p.t.gcs +
                         coef("age") * p.t.age + coef("urine") * p.t.urine +
                         coef("bun") * p.t.bun + coef("shock_index") * p.t.shock_index;
        p.t.illness = z / coef_norm;
        // logistic noise term makes the outcome a logistic model in z
        const double u = clampd(trait_rng.uniform(), 1e-12, 1.0 - 1e-12);
        risk_score[i] = z + std::log(u / (1.0 - u));
    }

    // exactly ceil(n * rate) deaths: threshold the noisy logistic score
    const std::size_t deaths = static_cast<std::size_t>(
        std::min<double>(static_cast<double>(n), std::ceil(cfg.mortality_rate * static_cast<double>(n))));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return risk_score[a] > risk_score[b]; });
    std::vector<bool> dies(n, false);
    for (std::size_t k = 0; k < deaths; ++k) dies[order[k]] = true;

    for (std::size_t i = 0; i < n; ++i) {
        StayPlan& p = plans[i];
        p.age = static_cast<int>(clampd(std::round(66.0 + 13.0 * p.t.age), 18, 99));
        p.sex = demo_rng.uniform() < 0.55 ? "M" : "F";
        p.race = weighted_race(demo_rng);
        p.ethnicity = demo_rng.uniform() < 0.04 ? "Hispanic" : "Non Hispanic";
        p.hospital = fmt::format("H{}", 1 + demo_rng.index(static_cast<std::size_t>(cfg.hospital_count)));
        p.admit_to_icu_h = std::exp(demo_rng.gauss(2.8, 0.9)); // median ~16 h on the ward
        p.has_notes = demo_rng.uniform() < cfg.notes_fraction;

        if (dies[i]) {
            const double u = demo_rng.uniform();
            if (u < 0.30) {
                p.death_offset_h = 24.0 + demo_rng.uniform(0.5, 24.0);
            } else if (u < 0.75) {
                p.death_offset_h = 48.0 + demo_rng.uniform(0.0, 144.0);
            } else {
                p.death_offset_h = 192.0 + demo_rng.uniform(0.0, 220.0);
            }
            p.los_hours = *p.death_offset_h;
        } else {
            p.los_hours = 24.0 + std::exp(demo_rng.gauss(3.4, 0.8));
        }

        p.vented = demo_rng.uniform() < sigmoid(-1.6 + 1.0 * p.t.illness);
        p.on_pressor = demo_rng.uniform() < sigmoid(-1.8 + 1.2 * p.t.shock_index + 0.4 * p.t.illness);
        p.on_antibiotic = demo_rng.uniform() < sigmoid(-0.8 + 0.4 * p.t.illness);
        p.temp_in_f = demo_rng.uniform() < 0.2;
        {
            const double u = demo_rng.uniform();
            p.urine_mode = u < 0.60 ? 0 : (u < 0.85 ? 1 : (u < 0.95 ? 2 : 3));
        }

        struct CondCode {
            const char* code;
            double base_logit;
            double slope;
        };
        static const CondCode kConds[] = {
            {"I50.9", -1.8, 0.35},  // congestive heart failure
            {"I10", -0.6, 0.10},    // hypertension
            {"I48.91", -1.9, 0.30}, // atrial fibrillation
            {"E11.9", -1.4, 0.15},  // diabetes
            {"J44.9", -2.0, 0.25},  // chronic pulmonary
            {"N18.4", -2.4, 0.40},  // renal failure
            {"K70.30", -3.0, 0.45}, // liver disease
            {"C78.00", -3.4, 0.80}, // metastatic cancer
            {"E66.9", -2.0, 0.0},   // obesity
            {"F32.9", -2.2, 0.0},   // depression
        };
        for (const auto& c : kConds) {
            if (demo_rng.uniform() < sigmoid(c.base_logit + c.slope * p.t.illness)) {
                p.icd.emplace_back(c.code);
            }
        }

        p.hr_base = 85.0 + 12.0 * p.t.shock_index + 3.0 * demo_rng.gauss();
        p.sbp_base = clampd(118.0 - 14.0 * p.t.shock_index + 5.0 * demo_rng.gauss(), 60, 210);
        p.dbp_base = clampd(0.52 * p.sbp_base + 4.0 * demo_rng.gauss(), 30, 130);
        p.spo2_base = clampd(97.5 - 1.0 * std::max(p.t.illness, 0.0) + 0.6 * demo_rng.gauss(), 86, 100);
        p.rr_base = clampd(17.0 + 2.2 * std::max(p.t.illness, 0.0) + 1.2 * demo_rng.gauss(), 8, 40);
        p.temp_base = 36.8 + 0.35 * demo_rng.gauss() + (p.on_antibiotic ? 0.5 : 0.0);
        p.gcs_total = clampd(std::round(14.6 - 2.9 * std::max(p.t.gcs, -0.4)), 3, 15);
        p.urine_rate = clampd(std::exp(4.38 - 0.55 * p.t.urine), 5, 400);
    }

    std::sort(plans.begin(), plans.end(),
              [](const StayPlan& a, const StayPlan& b) { return a.id < b.id; });

    // ---- statics.csv ----
    {
        csv::Writer w(out.statics_csv);
        w.write_row({"stay_id", "age", "sex", "race", "ethnicity", "admit_dt_offset", "los_hours",
                     "death_offset_h", "hospital_id", "icd_codes"});
        for (const auto& p : plans) {
            std::string codes;
            for (std::size_t k = 0; k < p.icd.size(); ++k) {
                if (k) codes.push_back(';');
                codes += p.icd[k];
            }
            w.write_row({p.id, std::to_string(p.age), p.sex, p.race, p.ethnicity,
                         csv::format_double(p.admit_to_icu_h), csv::format_double(p.los_hours),
                         p.death_offset_h ? csv::format_double(*p.death_offset_h) : "", p.hospital,
                         codes});
        }
        // short stays, excluded downstream by the 24 h rule
        Rng short_rng = root.fork("short-stays");
        const std::size_t n_short = std::max<std::size_t>(2, n / 50);
        for (std::size_t k = 0; k < n_short; ++k) {
            const std::string id = fmt::format("xshort{:04}", k);
            const double los = short_rng.uniform(2.0, 23.5);
            const bool died_early = short_rng.uniform() < 0.1;
            w.write_row({id, "70", "M", "White", "Non Hispanic", "5",
                         csv::format_double(los),
                         died_early ? csv::format_double(los) : "", "H1", ""});
        }
    }

    // ---- events.csv ----
    {
        csv::Writer w(out.events_csv);
        w.write_row({"stay_id", "variable", "time_offset_h", "value_numeric", "value_text", "unit"});

        for (const auto& p : plans) {
            Rng r = series_rng.fork(p.id);
            EventSink sink(w, p.id);

            const double phase = r.uniform(0.0, 2.0 * M_PI);

            // desaturation episodes: start hour -> (duration h, depth)
            std::vector<std::array<double, 3>> desats;
            {
                int n_ep = static_cast<int>(std::floor(r.uniform() * (1.6 + std::max(p.t.illness, 0.0))));
                for (int k = 0; k < n_ep; ++k) {
                    desats.push_back({r.uniform(0.0, 22.0), r.uniform(0.17, 0.5), r.uniform(4.0, 12.0)});
                }
            }

            // vitals on a 5-minute cadence
            for (int s = 0; s < kGridHours * 12; ++s) {
                const double t = s / 12.0;
                const double circ = std::sin(2.0 * M_PI * t / 24.0 + phase);
                double hr = p.hr_base + 6.0 * circ + r.gauss(0.0, 2.5);
                double sbp = p.sbp_base - 4.0 * circ + r.gauss(0.0, 4.0);
                double dbp = p.dbp_base - 2.0 * circ + r.gauss(0.0, 3.0);
                double spo2 = p.spo2_base + r.gauss(0.0, 0.7);
                for (const auto& d : desats) {
                    if (t >= d[0] && t < d[0] + d[1]) spo2 -= d[2];
                }
                double rr = p.rr_base + 1.5 * circ + r.gauss(0.0, 1.2);

                sink.num(t, "heartrate", std::round(hr));
                sink.num(t, "spo2", clampd(std::round(spo2), 60, 100));
                sink.num(t, "resprate", std::max(4.0, std::round(rr)));
                if (s % 3 == 0) { // blood pressure every 15 minutes
                    sink.num(t, "nbp_systolic", std::round(sbp));
                    sink.num(t, "nbp_diastolic", std::round(dbp));
                    sink.num(t, "nbp_mean", std::round((sbp + 2.0 * dbp) / 3.0 + r.gauss(0.0, 1.0)));
                }
                // rare artifact, exercises the outlier filter
                if (r.uniform() < 0.0004) sink.num(t, "heartrate", 400.0);
            }

            // temperature hourly, sometimes charted in Fahrenheit
            for (int h = 0; h < kGridHours; ++h) {
                const double c = p.temp_base + r.gauss(0.0, 0.15);
                if (p.temp_in_f) {
                    sink.num(h + 0.5, "temperature", std::round((c * 9.0 / 5.0 + 32.0) * 10.0) / 10.0,
                             "degF");
                } else {
                    sink.num(h + 0.5, "temperature", std::round(c * 10.0) / 10.0, "degC");
                }
            }

            // labs every ~6 h
            const double lact_level = std::exp(0.70 + 0.55 * p.t.lactate);
            const double bun_level = std::exp(3.05 + 0.50 * p.t.bun);
            const double creat_level = std::exp(0.1 + 0.35 * p.t.bun + 0.15 * r.gauss());
            const double hb_level = clampd(10.3 + 1.3 * r.gauss(), 4, 17);
            const double bili_level = std::exp(-0.4 + 0.6 * r.gauss());
            const bool record_hct_only = r.uniform() < 0.25;
            const bool record_gcs_total = r.uniform() < 0.6;
            for (int k = 0; k < 4; ++k) {
                const double t = clampd(k * 6.0 + r.uniform(0.2, 2.0), 0.0, 23.9);
                sink.num(t, "lactate", clampd(lact_level * (1.0 + 0.08 * r.gauss()), 0.3, 25.0));
                sink.num(t, "bun", std::round(clampd(bun_level * (1.0 + 0.07 * r.gauss()), 2, 180)));
                sink.num(t, "creatinine", clampd(creat_level * (1.0 + 0.06 * r.gauss()), 0.2, 15.0));
                sink.num(t, "wbc", clampd(10.5 + 3.2 * r.gauss() + 1.5 * std::max(p.t.illness, 0.0), 0.5, 80));
                sink.num(t, "platelets", std::round(clampd(230 + 70 * r.gauss() - 25 * std::max(p.t.illness, 0.0), 8, 900)));
                sink.num(t, "sodium", std::round(clampd(138 + 3.5 * r.gauss(), 112, 172)));
                sink.num(t, "potassium", clampd(4.1 + 0.5 * r.gauss(), 1.8, 8.5));
                sink.num(t, "bicarbonate", std::round(clampd(23.5 - 1.6 * std::max(p.t.illness, 0.0) + 2.5 * r.gauss(), 6, 45)));
                sink.num(t, "glucose", std::round(clampd(135 + 35 * r.gauss(), 40, 700)));
                if (record_hct_only) {
                    sink.num(t, "hematocrit", clampd(3.0 * hb_level * (1.0 + 0.02 * r.gauss()), 12, 65));
                } else {
                    sink.num(t, "hemoglobin", clampd(hb_level * (1.0 + 0.02 * r.gauss()), 2.5, 22));
                }
                sink.num(t, "bilirubin_total", clampd(bili_level * (1.0 + 0.05 * r.gauss()), 0.1, 40));
            }

            // arterial gases when ventilated (and occasionally otherwise)
            if (p.vented || r.uniform() < 0.2) {
                const double fio2 = p.vented ? clampd(40 + 20 * std::max(p.t.illness, 0.0) + 8 * r.gauss(), 21, 100)
                                             : clampd(28 + 5 * r.gauss(), 21, 50);
                for (int k = 0; k < 3; ++k) {
                    const double t = clampd(k * 8.0 + r.uniform(0.5, 3.0), 0.0, 23.9);
                    sink.num(t, "fio2", std::round(fio2), "percent");
                    sink.num(t, "pao2", std::round(clampd(110 - 18 * std::max(p.t.illness, 0.0) + 18 * r.gauss(), 35, 400)));
                    sink.num(t, "paco2", std::round(clampd(40 + 5 * r.gauss(), 15, 90)));
                    sink.num(t, "ph", clampd(7.38 - 0.03 * std::max(p.t.illness, 0.0) + 0.04 * r.gauss(), 6.9, 7.65));
                }
            }

            // neuro checks every 4 h
            for (int k = 0; k < 6; ++k) {
                const double t = clampd(k * 4.0 + r.uniform(0.1, 1.5), 0.0, 23.9);
                int total = static_cast<int>(clampd(p.gcs_total + std::round(0.6 * r.gauss()), 3, 15));
                int e, v, m;
                split_gcs(total, e, v, m);
                sink.num(t, "gcs_eye", e);
                sink.num(t, "gcs_verbal", v);
                sink.num(t, "gcs_motor", m);
                if (record_gcs_total) sink.num(t, "gcs_total", total);
                if (total >= 14 && r.uniform() < 0.5) sink.num(t, "rass", 0.0);
            }

            // hourly urine volumes under the configured alias mix
            for (int h = 0; h < kGridHours; ++h) {
                const double vol = std::round(clampd(p.urine_rate * (0.55 + 0.9 * r.uniform()), 0, 900));
                const double th = h + 0.9;
                switch (p.urine_mode) {
                case 0: sink.num(th, "urine_foley", vol); break;
                case 1:
                    sink.num(th, "urine_foley", std::round(vol * 0.7));
                    sink.num(th, "urine_catheter", std::round(vol * 0.3));
                    break;
                case 2: sink.num(th, "urine_void", vol); break;
                default: sink.num(th, "urine_condom", vol); break;
                }
            }

            // ventilation and medications
            if (p.vented) {
                const char* mode = pick(r, {"AC", "SIMV", "PS"});
                for (int h = 0; h < kGridHours; ++h) sink.num(h + 0.2, "ventilated", 1.0);
                for (int k = 0; k < 4; ++k) sink.text(k * 6.0 + 0.3, "vent_mode", mode);
            }
            if (p.on_pressor) {
                const double dose0 = clampd(0.04 + 0.06 * std::max(p.t.shock_index, 0.0) + 0.02 * r.gauss(), 0.01, 0.6);
                const int start = static_cast<int>(r.index(8));
                for (int h = start; h < kGridHours; h += 2) {
                    sink.num(h + 0.4, "Norepinephrine", clampd(dose0 * (1.0 + 0.15 * r.gauss()), 0.005, 1.2),
                             "ug/kg/min");
                }
                if (r.uniform() < 0.25) {
                    sink.num(start + 1.0, "Vasopressin", 0.04, "units/min");
                }
            }
            if (p.on_antibiotic) {
                const char* abx = pick(r, {"Vancomycin 1g", "Cefepime 2g", "Piperacillin-Tazobactam 4.5g",
                                           "Meropenem 1g", "Levofloxacin 750mg"});
                for (int k = 0; k < 2; ++k) {
                    sink.text(clampd(k * 12.0 + r.uniform(0.2, 3.0), 0.0, 23.9), "med",
                              fmt::format("{}, route IV", abx));
                }
            }
            if (r.uniform() < 0.03) {
                // topical eye drops; must not count as systemic antibiotics
                sink.text(r.uniform(1.0, 20.0), "med", "Ofloxacin 0.3% drops, route OU");
            }

            sink.flush();
        }

        // events referencing a stay absent from statics: warned and skipped
        Rng ghost_rng = root.fork("ghost-events");
        for (int k = 0; k < 5; ++k) {
            w.write_row({"zghost", "heartrate", csv::format_double(ghost_rng.uniform(0.0, 23.0)),
                         "88", "", ""});
        }
    }

    // ---- notes.csv ----
    {
        csv::Writer w(out.notes_csv);
        w.write_row({"stay_id", "note_time_offset_h", "text"});
        for (const auto& p : plans) {
            if (!p.has_notes) continue;
            Rng r = note_rng.fork(p.id);
            const int n_notes = 1 + static_cast<int>(r.index(3));
            for (int k = 0; k < n_notes; ++k) {
                const bool sick = p.t.illness > 0.5;
                const char* course = sick
                    ? pick(r, {"requiring escalating vasopressor support overnight with worsening lactic acidosis",
                               "remains intubated and sedated with poor oxygenation despite increased support",
                               "oliguric overnight with rising creatinine and persistent hypotension noted"})
                    : pick(r, {"remains hemodynamically stable overnight and is tolerating the current plan",
                               "weaning oxygen support with improving respiratory status and good urine output",
                               "alert and interactive with stable vital signs and improving laboratory values"});
                const char* imp = sick
                    ? pick(r, {"critically ill with guarded prognosis pending response to ongoing resuscitation",
                               "high risk of clinical deterioration given multiorgan dysfunction at this time"})
                    : pick(r, {"clinically improving and appropriate for continued supportive intensive care",
                               "stable overall with low suspicion for short term clinical deterioration today"});
                std::string text = fmt::format(
                    "HISTORY: {} year old {} admitted to the ICU at [**Hospital**] for close "
                    "monitoring and management. Seen with [**Name**] at bedside. "
                    "FINDINGS: The patient {} over the preceding shift per the b.i.d. nursing "
                    "assessment and review. Labs reviewed. "
                    "IMPRESSION: Patient is {} per the team. Plan discussed. "
                    "Electronically signed by [**Attending**]",
                    p.age, p.sex == "M" ? "male" : "female", course, imp);
                w.write_row({p.id, csv::format_double(clampd(r.uniform(2.0, 23.5), 0.0, 23.9)), text});
            }
        }
    }
}

} // namespace icumort
