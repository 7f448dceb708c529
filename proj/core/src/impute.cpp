#include "icumort/impute.hpp"
#include "icumort/defaults.hpp"
#include "icumort/errors.hpp"
#include "icumort/rng.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>

namespace icumort {

namespace {

constexpr std::uint64_t stage_tag(GridStage s) {
    switch (s) {
    case GridStage::Binned: return fnv1a64("binned");
    case GridStage::Related: return fnv1a64("related");
    case GridStage::Indicated: return fnv1a64("indicated");
    case GridStage::Held: return fnv1a64("held");
    case GridStage::Filled: return fnv1a64("filled");
    case GridStage::Normalized: return fnv1a64("normalized");
    }
    return 0;
}

void advance_stage(HourlyGrid& g, GridStage expected_current, GridStage next) {
    if (g.stage != expected_current) {
        throw usage_error(fmt::format(
            "imputation stage out of order for stay {}: expected stage {} before stage {}",
            g.stay_id, static_cast<int>(expected_current), static_cast<int>(next)));
    }
    g.stage = next;
    g.stage_checksum = g.stage_checksum * 0x100000001b3ULL ^ stage_tag(next);
}

} // namespace

std::uint64_t expected_stage_checksum(GridStage through_stage) {
    std::uint64_t h = 0;
    const GridStage order[] = {GridStage::Related, GridStage::Indicated, GridStage::Held,
                               GridStage::Filled, GridStage::Normalized};
    for (GridStage s : order) {
        h = h * 0x100000001b3ULL ^ stage_tag(s);
        if (s == through_stage) break;
    }
    return h;
}

ImputeConfig ImputeConfig::from_json(const json& doc, const std::string& origin) {
    ImputeConfig c;
    c.hct_per_hb = doc.value("hct_per_hb", 3.0);
    c.direct_per_total_bilirubin = doc.value("direct_per_total_bilirubin", 0.3);
    c.hold_hours_medication = doc.value("hold_hours_medication", 24);
    c.hold_hours_other = doc.value("hold_hours_other", 12);
    c.normalizer_std_floor = doc.value("normalizer_std_floor", 1e-8);
    if (doc.contains("rass_to_gcs")) {
        for (const auto& [k, v] : doc.at("rass_to_gcs").items()) {
            c.rass_to_gcs[std::stoi(k)] = v.get<double>();
        }
    }
    if (c.hct_per_hb == 0.0 || c.direct_per_total_bilirubin == 0.0) {
        throw config_error(fmt::format("{}: relationship factors must be nonzero", origin));
    }
    return c;
}

ImputeConfig ImputeConfig::defaults() {
    return from_json(parse_json_text(std::string(defaults::imputation_json()), "imputation"),
                     "imputation");
}

void impute_relationships(HourlyGrid& g, const GridSchema& schema, const ImputeConfig& cfg) {
    const int c_gcs = schema.index_of("GCS Total");
    const int c_e = schema.index_of("GCS Eye");
    const int c_v = schema.index_of("GCS Verbal");
    const int c_m = schema.index_of("GCS Motor");
    const int c_rass = schema.index_of("RASS");
    const int c_hb = schema.index_of("Hemoglobin");
    const int c_hct = schema.index_of("Hematocrit");
    const int c_bt = schema.index_of("Bilirubin Total");
    const int c_bd = schema.index_of("Bilirubin Direct");
    const int c_sbp = schema.index_of("SBP");
    const int c_dbp = schema.index_of("DBP");
    const int c_map = schema.index_of("MAP");

    for (int h = 0; h < kGridHours; ++h) {
        auto present = [&](int c) { return c >= 0 && g.present(h, c); };
        auto val = [&](int c) { return g.value(h, c); };
        auto put = [&](int c, double v) {
            if (c >= 0 && !g.present(h, c)) g.set(h, c, v, Provenance::Imputed);
        };

        if (c_gcs >= 0 && !g.present(h, c_gcs)) {
            if (present(c_e) && present(c_v) && present(c_m)) {
                put(c_gcs, val(c_e) + val(c_v) + val(c_m));
            } else if (present(c_rass)) {
                const int rass = static_cast<int>(std::lround(val(c_rass)));
                auto it = cfg.rass_to_gcs.find(rass);
                if (it != cfg.rass_to_gcs.end()) put(c_gcs, it->second);
            }
        }

        if (present(c_hb) && !present(c_hct)) put(c_hct, cfg.hct_per_hb * val(c_hb));
        else if (present(c_hct) && !present(c_hb)) put(c_hb, val(c_hct) / cfg.hct_per_hb);

        if (present(c_bt) && !present(c_bd)) put(c_bd, cfg.direct_per_total_bilirubin * val(c_bt));
        else if (present(c_bd) && !present(c_bt)) put(c_bt, val(c_bd) / cfg.direct_per_total_bilirubin);

        const bool s = present(c_sbp), d = present(c_dbp), m = present(c_map);
        if (s && d && !m) put(c_map, (val(c_sbp) + 2.0 * val(c_dbp)) / 3.0);
        else if (s && m && !d) put(c_dbp, (3.0 * val(c_map) - val(c_sbp)) / 2.0);
        else if (d && m && !s) put(c_sbp, 3.0 * val(c_map) - 2.0 * val(c_dbp));
    }

    advance_stage(g, GridStage::Binned, GridStage::Related);
}

void attach_indicators(HourlyGrid& g) {
    g.indicators.assign(g.values.size(), 0);
    for (std::size_t i = 0; i < g.values.size(); ++i) {
        g.indicators[i] = g.provenance[i] == Provenance::Observed ? 1 : 0;
    }
    advance_stage(g, GridStage::Related, GridStage::Indicated);
}

void sample_and_hold(HourlyGrid& g, const GridSchema& schema, const ImputeConfig& cfg) {
    for (std::size_t c = 0; c < g.n_columns; ++c) {
        const int horizon =
            schema.columns[c].is_medication ? cfg.hold_hours_medication : cfg.hold_hours_other;
        int last_hour = -1;
        double last_value = 0.0;
        // sources are pre-hold cells only, so fills cannot chain past the horizon
        std::vector<std::uint8_t> was_present(kGridHours, 0);
        for (int h = 0; h < kGridHours; ++h) {
            was_present[h] = g.present(h, static_cast<int>(c)) ? 1 : 0;
        }
        for (int h = 0; h < kGridHours; ++h) {
            if (was_present[h]) {
                last_hour = h;
                last_value = g.value(h, static_cast<int>(c));
                continue;
            }
            if (last_hour >= 0 && h - last_hour <= horizon) {
                g.set(h, static_cast<int>(c), last_value, Provenance::Imputed);
            }
        }
    }
    advance_stage(g, GridStage::Indicated, GridStage::Held);
}

json FillStats::to_json(const GridSchema& schema) const {
    json j;
    for (std::size_t c = 0; c < fill_value.size(); ++c) {
        j[schema.columns[c].name] = {{"fill", fill_value[c]}, {"had_data", had_data[c] != 0}};
    }
    return j;
}

FillStats FillStats::from_json(const json& j, const GridSchema& schema) {
    FillStats s;
    s.fill_value.resize(schema.size(), 0.0);
    s.had_data.resize(schema.size(), 0);
    for (std::size_t c = 0; c < schema.size(); ++c) {
        const auto& e = j.at(schema.columns[c].name);
        s.fill_value[c] = e.at("fill").get<double>();
        s.had_data[c] = e.at("had_data").get<bool>() ? 1 : 0;
    }
    s.fitted = true;
    return s;
}

FillStats fit_fill(const std::vector<HourlyGrid>& train_grids, const GridSchema& schema) {
    FillStats stats;
    const std::size_t F = schema.size();
    stats.fill_value.assign(F, 0.0);
    stats.had_data.assign(F, 0);

    std::vector<double> sum(F, 0.0);
    std::vector<std::size_t> count(F, 0);
    std::vector<std::map<double, std::size_t>> modes(F);

    for (const auto& g : train_grids) {
        for (int h = 0; h < kGridHours; ++h) {
            for (std::size_t c = 0; c < F; ++c) {
                if (!g.present(h, static_cast<int>(c))) continue;
                const double v = g.value(h, static_cast<int>(c));
                switch (schema.columns[c].kind) {
                case ColumnKind::Continuous:
                    sum[c] += v;
                    ++count[c];
                    break;
                case ColumnKind::Categorical:
                    modes[c][v] += 1;
                    ++count[c];
                    break;
                case ColumnKind::Binary:
                    ++count[c];
                    break;
                }
            }
        }
    }
    for (std::size_t c = 0; c < F; ++c) {
        stats.had_data[c] = count[c] > 0 ? 1 : 0;
        switch (schema.columns[c].kind) {
        case ColumnKind::Continuous:
            stats.fill_value[c] = count[c] ? sum[c] / static_cast<double>(count[c]) : 0.0;
            break;
        case ColumnKind::Categorical: {
            std::size_t best = 0;
            double mode = 0.0;
            for (const auto& [code, cnt] : modes[c]) {
                if (cnt > best) {
                    best = cnt;
                    mode = code;
                }
            }
            stats.fill_value[c] = mode;
            break;
        }
        case ColumnKind::Binary:
            stats.fill_value[c] = 0.0; // missing flags mean "not given"
            break;
        }
    }
    stats.fitted = true;
    return stats;
}

void apply_fill(HourlyGrid& g, const GridSchema& schema, const FillStats& stats) {
    if (!stats.fitted) throw usage_error("apply_fill: FillStats not fitted");
    if (stats.fill_value.size() != schema.size()) {
        throw usage_error("apply_fill: FillStats shape does not match the grid schema");
    }
    for (int h = 0; h < kGridHours; ++h) {
        for (std::size_t c = 0; c < g.n_columns; ++c) {
            if (!g.present(h, static_cast<int>(c))) {
                g.set(h, static_cast<int>(c), stats.fill_value[c], Provenance::Imputed);
            }
        }
    }
    advance_stage(g, GridStage::Held, GridStage::Filled);
}

json Normalizer::to_json(const GridSchema& schema) const {
    json j;
    for (std::size_t c = 0; c < mean.size(); ++c) {
        j[schema.columns[c].name] = {
            {"mean", mean[c]}, {"std", stddev[c]}, {"passthrough", passthrough[c] != 0}};
    }
    return j;
}

Normalizer Normalizer::from_json(const json& j, const GridSchema& schema) {
    Normalizer n;
    n.mean.resize(schema.size(), 0.0);
    n.stddev.resize(schema.size(), 1.0);
    n.passthrough.resize(schema.size(), 1);
    for (std::size_t c = 0; c < schema.size(); ++c) {
        const auto& e = j.at(schema.columns[c].name);
        n.mean[c] = e.at("mean").get<double>();
        n.stddev[c] = e.at("std").get<double>();
        n.passthrough[c] = e.at("passthrough").get<bool>() ? 1 : 0;
    }
    n.fitted = true;
    return n;
}

Normalizer fit_normalizer(const std::vector<HourlyGrid>& train_grids, const GridSchema& schema,
                          const ImputeConfig& cfg) {
    Normalizer n;
    const std::size_t F = schema.size();
    n.mean.assign(F, 0.0);
    n.stddev.assign(F, 1.0);
    n.passthrough.assign(F, 1);

    std::vector<double> sum(F, 0.0), sumsq(F, 0.0);
    std::vector<std::size_t> count(F, 0);
    for (const auto& g : train_grids) {
        if (g.stage != GridStage::Filled) {
            throw usage_error("fit_normalizer expects fully filled grids");
        }
        for (int h = 0; h < kGridHours; ++h) {
            for (std::size_t c = 0; c < F; ++c) {
                if (schema.columns[c].kind != ColumnKind::Continuous) continue;
                const double v = g.value(h, static_cast<int>(c));
                sum[c] += v;
                sumsq[c] += v * v;
                ++count[c];
            }
        }
    }
    for (std::size_t c = 0; c < F; ++c) {
        if (schema.columns[c].kind != ColumnKind::Continuous || count[c] == 0) continue;
        const double m = sum[c] / static_cast<double>(count[c]);
        const double var = std::max(0.0, sumsq[c] / static_cast<double>(count[c]) - m * m);
        const double sd = std::sqrt(var);
        n.mean[c] = m;
        if (sd < cfg.normalizer_std_floor) {
            n.stddev[c] = 1.0;
            n.passthrough[c] = 1; // constant column, left unscaled and flagged
        } else {
            n.stddev[c] = sd;
            n.passthrough[c] = 0;
        }
    }
    n.fitted = true;
    return n;
}

void apply_normalizer(HourlyGrid& g, const GridSchema& schema, const Normalizer& n) {
    if (!n.fitted) throw usage_error("apply_normalizer: Normalizer not fitted");
    for (int h = 0; h < kGridHours; ++h) {
        for (std::size_t c = 0; c < g.n_columns; ++c) {
            if (schema.columns[c].kind != ColumnKind::Continuous) continue;
            if (n.passthrough[c]) continue;
            const std::size_t cell = g.at(h, static_cast<int>(c));
            g.values[cell] = (g.values[cell] - n.mean[c]) / n.stddev[c];
        }
    }
    advance_stage(g, GridStage::Filled, GridStage::Normalized);
}

void resume_stage(HourlyGrid& g, GridStage stage) {
    g.stage = stage;
    g.stage_checksum = stage == GridStage::Binned ? 0 : expected_stage_checksum(stage);
    if (static_cast<int>(stage) >= static_cast<int>(GridStage::Indicated)) {
        g.indicators.assign(g.values.size(), 0);
        for (std::size_t i = 0; i < g.values.size(); ++i) {
            g.indicators[i] = g.provenance[i] == Provenance::Observed ? 1 : 0;
        }
    }
}

HourlyGrid truncate_pad(const SequenceGrid& seq) {
    HourlyGrid g;
    g.init(seq.stay_id, seq.n_columns);
    const std::size_t steps = std::min<std::size_t>(seq.n_steps, kGridHours);
    for (std::size_t h = 0; h < steps; ++h) {
        for (std::size_t c = 0; c < seq.n_columns; ++c) {
            const std::size_t src = h * seq.n_columns + c;
            g.values[g.at(static_cast<int>(h), static_cast<int>(c))] = seq.values[src];
            g.provenance[g.at(static_cast<int>(h), static_cast<int>(c))] = seq.provenance[src];
        }
    }
    return g;
}

} // namespace icumort
