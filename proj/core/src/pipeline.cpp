#include "icumort/pipeline.hpp"
#include "icumort/csv.hpp"
#include "icumort/defaults.hpp"
#include "icumort/errors.hpp"
#include "icumort/ingest.hpp"
#include "icumort/manifest.hpp"
#include "icumort/notes.hpp"
#include "icumort/report.hpp"
#include "icumort/risk_scores.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <unordered_map>

namespace icumort::pipeline {

namespace {

json load_override(const std::string& path, std::string_view builtin, const char* tag) {
    if (!path.empty()) return load_json_file(path);
    return parse_json_text(std::string(builtin), tag);
}

struct Context {
    HarmonizeContext harm;
    ImputeConfig impute = ImputeConfig::defaults();
    ComorbidityMap comorbidities;
    scores::ScoreTables tables;
    notes::NotesConfig notes_cfg;
    vitals::VitalsConfig vitals_cfg;
    json schema_doc;
};

Context load_context(const RunConfig& cfg) {
    Context ctx;
    ctx.schema_doc =
        load_override(cfg.schema_map_path, defaults::schema_map_json(), "schema_map");
    ctx.harm.schema = SchemaMap::from_json(ctx.schema_doc, "schema_map");
    ctx.harm.ranges = ValidRangeTable::from_json(
        load_override(cfg.valid_ranges_path, defaults::valid_ranges_json(), "valid_ranges"),
        "valid_ranges");
    ctx.harm.lexicon = MedLexicon::from_json(
        load_override(cfg.med_lexicon_path, defaults::med_lexicon_json(), "med_lexicon"),
        "med_lexicon");
    ctx.harm.grid_schema = default_grid_schema();
    if (ctx.schema_doc.contains("urine_aliases")) {
        for (const auto& a : ctx.schema_doc.at("urine_aliases")) {
            ctx.harm.urine_aliases.push_back(a.get<std::string>());
        }
    }
    ctx.impute = ImputeConfig::from_json(
        load_override(cfg.imputation_path, defaults::imputation_json(), "imputation"),
        "imputation");
    ctx.comorbidities = ComorbidityMap::from_json(
        load_override(cfg.comorbidities_path, defaults::comorbidities_json(), "comorbidities"),
        "comorbidities");
    ctx.tables = scores::ScoreTables::from_json(
        load_override(cfg.risk_tables_path, defaults::risk_score_tables_json(),
                      "risk_score_tables"),
        "risk_score_tables");
    ctx.notes_cfg = notes::NotesConfig::from_json(
        load_override(cfg.notes_config_path, defaults::notes_config_json(), "notes_config"),
        "notes_config");
    ctx.vitals_cfg = vitals::VitalsConfig::from_json(
        load_override(cfg.vitals_config_path, defaults::vitals_config_json(), "vitals_config"),
        "vitals_config");
    return ctx;
}

// merge-join style streaming over a stay-grouped CSV
void for_each_stay_group(const std::string& path,
                         const std::function<void(const std::string&,
                                                  const std::vector<std::vector<std::string>>&,
                                                  const std::vector<std::string>&)>& fn) {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::string current;
    int c_id = -1;
    csv::for_each_row(
        path,
        [&](const std::vector<std::string>& h) {
            header = h;
            for (std::size_t i = 0; i < h.size(); ++i) {
                if (h[i] == "stay_id") c_id = static_cast<int>(i);
            }
            if (c_id < 0) throw data_error(fmt::format("{}: no stay_id column", path));
        },
        [&](const std::vector<std::string>& r) {
            if (r[c_id] != current) {
                if (!rows.empty()) fn(current, rows, header);
                rows.clear();
                current = r[c_id];
            }
            rows.push_back(r);
            return true;
        });
    if (!rows.empty()) fn(current, rows, header);
}

std::vector<std::string> static_feature_names(const ComorbidityMap& map) {
    std::vector<std::string> names = {"age", "sex", "race", "ethnicity"};
    for (const auto& cond : map.condition_names()) names.push_back("cmb." + cond);
    return names;
}

std::vector<std::string> dynamic_feature_names(const GridSchema& schema) {
    std::vector<std::string> names;
    for (const auto& col : schema.columns) {
        for (int h = 0; h < kGridHours; ++h) names.push_back(fmt::format("{}@h{}", col.name, h));
    }
    for (const auto& col : schema.columns) {
        for (int h = 0; h < kGridHours; ++h) {
            names.push_back(fmt::format("{}@h{}.obs", col.name, h));
        }
    }
    return names;
}

std::vector<std::string> vitals_feature_names(const vitals::VitalsConfig& cfg) {
    std::vector<std::string> names;
    for (const auto& base : vitals::feature_manifest(cfg)) {
        names.push_back(base);
        names.push_back(base + ".present");
    }
    return names;
}

std::vector<std::string> score_feature_names() {
    return {"sofa",        "saps2",       "oasis",
            "apache2",     "sirs",        "shock_index",
            "shock_index.present", "pf_ratio", "pf_ratio.present"};
}

std::vector<std::string> note_feature_names(std::size_t dim) {
    std::vector<std::string> names = {"notes.present"};
    for (std::size_t i = 0; i < dim; ++i) names.push_back(fmt::format("notes.h{:03}", i));
    return names;
}

json build_feature_manifest(const Context& ctx, const RunConfig& cfg) {
    json j;
    j["order"] = {"static", "dynamic", "vitals", "scores", "notes"};
    j["blocks"] = {{"static", static_feature_names(ctx.comorbidities)},
                   {"dynamic", dynamic_feature_names(ctx.harm.grid_schema)},
                   {"vitals", vitals_feature_names(ctx.vitals_cfg)},
                   {"scores", score_feature_names()},
                   {"notes", note_feature_names(cfg.note_dim)}};
    return j;
}

// ---------- feature table assembly ----------

struct FeatureTable {
    std::vector<StayRecord> stays; // sorted by id, events empty
    std::vector<double> labels;
    std::map<std::string, nn::Matrix> blocks;
    std::unordered_map<std::string, std::size_t> row_of;
};

void read_block_csv(const std::string& path, const std::vector<std::string>& expect_names,
                    const FeatureTable& table, nn::Matrix& out) {
    out = nn::Matrix(table.stays.size(), expect_names.size());
    csv::Table t = csv::read_file(path);
    if (t.header.size() != expect_names.size() + 1 || t.header[0] != "stay_id") {
        throw data_error(fmt::format("{}: unexpected header", path));
    }
    for (std::size_t c = 0; c < expect_names.size(); ++c) {
        if (t.header[c + 1] != expect_names[c]) {
            throw data_error(fmt::format("{}: column {} is '{}', manifest says '{}'", path, c + 1,
                                         t.header[c + 1], expect_names[c]));
        }
    }
    for (const auto& r : t.rows) {
        auto it = table.row_of.find(r[0]);
        if (it == table.row_of.end()) continue;
        for (std::size_t c = 0; c < expect_names.size(); ++c) {
            out.at(it->second, c) = csv::parse_double(r[c + 1]).value_or(0.0);
        }
    }
}

FeatureTable assemble_features(const Context& ctx, const RunConfig& cfg, const Paths& paths,
                               const FillStats& fill, const Normalizer& norm) {
    FeatureTable table;
    table.stays = read_stays_csv(paths.stays());
    table.labels.reserve(table.stays.size());
    for (std::size_t i = 0; i < table.stays.size(); ++i) {
        table.row_of.emplace(table.stays[i].stay_id, i);
        table.labels.push_back(table.stays[i].died_inpatient ? 1.0 : 0.0);
    }
    const std::size_t n = table.stays.size();
    const GridSchema& schema = ctx.harm.grid_schema;

    // static block
    {
        const auto names = static_feature_names(ctx.comorbidities);
        nn::Matrix m(n, names.size());
        for (std::size_t i = 0; i < n; ++i) {
            const StayRecord& s = table.stays[i];
            m.at(i, 0) = static_cast<double>(s.age);
            m.at(i, 1) = ctx.harm.schema.encode_value("sex", s.sex).value_or(2.0);
            m.at(i, 2) = ctx.harm.schema.encode_value("race", s.race).value_or(6.0);
            m.at(i, 3) = ctx.harm.schema.encode_value("ethnicity", s.ethnicity).value_or(2.0);
            const auto bits = ctx.comorbidities.encode(s.comorbidity_codes);
            for (std::size_t b = 0; b < bits.size(); ++b) {
                m.at(i, 4 + b) = static_cast<double>(bits[b]);
            }
        }
        table.blocks.emplace("static", std::move(m));
    }

    // dynamic block: normalized filled grid + observation indicators
    {
        const std::size_t F = schema.size();
        nn::Matrix m(n, 2 * kGridHours * F);
        std::vector<HourlyGrid> grids = read_grids_csv(paths.grid_imputed(), schema);
        std::unordered_map<std::string, std::size_t> grid_of;
        for (std::size_t g = 0; g < grids.size(); ++g) grid_of.emplace(grids[g].stay_id, g);

        for (std::size_t i = 0; i < n; ++i) {
            HourlyGrid g;
            auto it = grid_of.find(table.stays[i].stay_id);
            if (it != grid_of.end()) {
                g = grids[it->second];
            } else {
                g.init(table.stays[i].stay_id, F);
            }
            resume_stage(g, GridStage::Held);
            apply_fill(g, schema, fill);
            apply_normalizer(g, schema, norm);
            double* row = m.row(i);
            for (std::size_t c = 0; c < F; ++c) {
                for (int h = 0; h < kGridHours; ++h) {
                    row[c * kGridHours + static_cast<std::size_t>(h)] =
                        g.value(h, static_cast<int>(c));
                    row[kGridHours * F + c * kGridHours + static_cast<std::size_t>(h)] =
                        g.indicators[g.at(h, static_cast<int>(c))];
                }
            }
        }
        table.blocks.emplace("dynamic", std::move(m));
    }

    // engineered vitals, risk scores, note bags come straight from their CSVs
    {
        nn::Matrix m;
        read_block_csv(paths.vitals_features(), vitals_feature_names(ctx.vitals_cfg), table, m);
        table.blocks.emplace("vitals", std::move(m));
    }
    {
        nn::Matrix m;
        read_block_csv(paths.risk_scores(), score_feature_names(), table, m);
        table.blocks.emplace("scores", std::move(m));
    }
    {
        nn::Matrix m;
        read_block_csv(paths.note_features(), note_feature_names(cfg.note_dim), table, m);
        table.blocks.emplace("notes", std::move(m));
    }
    return table;
}

nn::Batch slice_batch(const FeatureTable& table, const std::vector<std::string>& blocks,
                      const std::vector<std::string>& ids) {
    std::vector<std::size_t> rows;
    rows.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = table.row_of.find(id);
        if (it == table.row_of.end()) {
            throw data_error(fmt::format("split references unknown stay '{}'", id));
        }
        rows.push_back(it->second);
    }
    nn::Batch batch;
    for (const auto& name : blocks) {
        const nn::Matrix& src = table.blocks.at(name);
        nn::Matrix m(rows.size(), src.cols);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::copy(src.row(rows[i]), src.row(rows[i]) + src.cols, m.row(i));
        }
        batch.block_inputs.push_back(std::move(m));
    }
    batch.labels.reserve(rows.size());
    for (std::size_t i : rows) batch.labels.push_back(table.labels[i]);
    return batch;
}

std::pair<FillStats, Normalizer> fit_stats_on_train(const Context& ctx, const Paths& paths,
                                                    const std::vector<std::string>& train_ids) {
    const GridSchema& schema = ctx.harm.grid_schema;
    std::set<std::string> train_set(train_ids.begin(), train_ids.end());
    std::vector<HourlyGrid> train_grids;
    for (auto& g : read_grids_csv(paths.grid_imputed(), schema)) {
        if (train_set.count(g.stay_id)) {
            resume_stage(g, GridStage::Held);
            train_grids.push_back(std::move(g));
        }
    }
    FillStats fill = fit_fill(train_grids, schema);
    for (auto& g : train_grids) apply_fill(g, schema, fill);
    Normalizer norm = fit_normalizer(train_grids, schema, ctx.impute);
    return {std::move(fill), std::move(norm)};
}

std::string variant_or_throw(const std::string& variant) {
    if (variant != "static" && variant != "timevariant" && variant != "combined") {
        throw usage_error(fmt::format(
            "unknown model variant '{}'; expected static, timevariant or combined", variant));
    }
    return variant;
}

struct ScoresFile {
    std::vector<std::string> ids;
    std::vector<double> scores;
    std::vector<int> labels;
    std::unordered_map<std::string, std::size_t> row_of;
};

ScoresFile read_scores_csv(const std::string& path) {
    ScoresFile f;
    csv::Table t = csv::read_file(path);
    const int c_id = t.require_column("stay_id", path);
    const int c_score = t.require_column("score", path);
    const int c_label = t.require_column("label", path);
    for (const auto& r : t.rows) {
        f.row_of.emplace(r[c_id], f.ids.size());
        f.ids.push_back(r[c_id]);
        f.scores.push_back(csv::parse_double(r[c_score]).value_or(0.0));
        f.labels.push_back(r[c_label] == "1" ? 1 : 0);
    }
    return f;
}

void subset_scores(const ScoresFile& f, const std::vector<std::string>& ids,
                   std::vector<double>& scores, std::vector<int>& labels,
                   std::vector<std::string>* kept_ids = nullptr) {
    scores.clear();
    labels.clear();
    for (const auto& id : ids) {
        auto it = f.row_of.find(id);
        if (it == f.row_of.end()) {
            throw data_error(fmt::format("scores file is missing stay '{}'", id));
        }
        scores.push_back(f.scores[it->second]);
        labels.push_back(f.labels[it->second]);
        if (kept_ids) kept_ids->push_back(id);
    }
}

} // namespace

RunConfig RunConfig::from_json(const json& j) {
    RunConfig c;
    c.dir = j.value("dir", std::string{});
    c.seed = j.value("seed", std::uint64_t{7});
    c.use_notes = j.value("use_notes", true);
    c.use_vitals_features = j.value("use_vitals_features", true);
    c.use_risk_scores = j.value("use_risk_scores", true);
    c.note_dim = j.value("note_dim", std::size_t{128});
    c.threshold_target = j.value("threshold_target", 0.80);
    c.bootstrap_resamples = j.value("bootstrap_resamples", std::size_t{1000});
    c.group_min_n = j.value("group_min_n", std::size_t{50});
    c.top_disagreement_fraction = j.value("top_disagreement_fraction", 0.20);
    if (j.contains("train")) c.train = nn::TrainConfig::from_json(j.at("train"));
    c.train.seed = c.seed;
    if (j.contains("synth")) {
        json syn = j.at("synth");
        if (!syn.contains("seed")) syn["seed"] = c.seed;
        c.synth = GenConfig::from_json(syn);
    } else {
        c.synth.seed = c.seed;
    }
    if (j.contains("configs")) {
        const json& cf = j.at("configs");
        c.schema_map_path = cf.value("schema_map", std::string{});
        c.valid_ranges_path = cf.value("valid_ranges", std::string{});
        c.med_lexicon_path = cf.value("med_lexicon", std::string{});
        c.comorbidities_path = cf.value("comorbidities", std::string{});
        c.imputation_path = cf.value("imputation", std::string{});
        c.risk_tables_path = cf.value("risk_score_tables", std::string{});
        c.notes_config_path = cf.value("notes_config", std::string{});
        c.vitals_config_path = cf.value("vitals_config", std::string{});
    }
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    return from_json(load_json_file(path));
}

json RunConfig::to_json() const {
    json j;
    j["dir"] = dir;
    j["seed"] = seed;
    j["use_notes"] = use_notes;
    j["use_vitals_features"] = use_vitals_features;
    j["use_risk_scores"] = use_risk_scores;
    j["note_dim"] = note_dim;
    j["threshold_target"] = threshold_target;
    j["bootstrap_resamples"] = bootstrap_resamples;
    j["group_min_n"] = group_min_n;
    j["top_disagreement_fraction"] = top_disagreement_fraction;
    j["train"] = train.to_json();
    j["synth"] = synth.to_json();
    json cf;
    cf["schema_map"] = schema_map_path;
    cf["valid_ranges"] = valid_ranges_path;
    cf["med_lexicon"] = med_lexicon_path;
    cf["comorbidities"] = comorbidities_path;
    cf["imputation"] = imputation_path;
    cf["risk_score_tables"] = risk_tables_path;
    cf["notes_config"] = notes_config_path;
    cf["vitals_config"] = vitals_config_path;
    j["configs"] = cf;
    return j;
}

std::string RunConfig::config_hash() const { return hash_hex(fnv1a64(dump_json(to_json()))); }

std::vector<std::string> blocks_for_variant(const RunConfig& cfg, const std::string& variant) {
    variant_or_throw(variant);
    if (variant == "static") return {"static"};
    if (variant == "timevariant") {
        std::vector<std::string> b = {"dynamic"};
        if (cfg.use_vitals_features) b.push_back("vitals");
        return b;
    }
    std::vector<std::string> b = {"static", "dynamic"};
    if (cfg.use_vitals_features) b.push_back("vitals");
    if (cfg.use_risk_scores) b.push_back("scores");
    if (cfg.use_notes) b.push_back("notes");
    return b;
}

void cmd_synth(const RunConfig& cfg) {
    Paths p{cfg.dir};
    std::filesystem::create_directories(cfg.dir);
    SynthPaths out{p.events(), p.statics(), p.notes()};
    generate_synthetic_cohort(cfg.synth, out);
    const std::string h = cfg.config_hash();
    write_manifest(p.events(), "synth", cfg.synth.seed, h, {});
    write_manifest(p.statics(), "synth", cfg.synth.seed, h, {});
    write_manifest(p.notes(), "synth", cfg.synth.seed, h, {});
}

void cmd_ingest(const RunConfig& cfg) {
    Paths p{cfg.dir};
    Context ctx = load_context(cfg);

    IngestReport report;
    const std::vector<StaticsRow> statics = read_statics_csv(p.statics());
    std::vector<StayRecord> stays = assemble_statics(statics, report);
    stream_filter_events(p.events(), p.events_24h(), stays, ctx.harm.schema, report);

    if (std::filesystem::exists(p.notes())) {
        const auto notes_presence = scan_notes_presence(p.notes());
        for (auto& s : stays) {
            auto it = notes_presence.find(s.stay_id);
            s.modality_flags.has_notes = it != notes_presence.end() && it->second;
        }
    }

    write_stays_csv(p.stays(), stays);
    save_json_file(p.ingest_report(), report.to_json());

    const std::string h = cfg.config_hash();
    const std::vector<std::string> inputs = {p.events(), p.statics()};
    write_manifest(p.stays(), "ingest", cfg.seed, h, inputs);
    write_manifest(p.events_24h(), "ingest", cfg.seed, h, inputs);
    write_manifest(p.ingest_report(), "ingest", cfg.seed, h, inputs);
}

void cmd_harmonize(const RunConfig& cfg) {
    Paths p{cfg.dir};
    verify_manifest_chain(p.stays());
    verify_manifest_chain(p.events_24h());
    Context ctx = load_context(cfg);

    const std::vector<StayRecord> stays = read_stays_csv(p.stays());
    std::unordered_map<std::string, const StayRecord*> stay_of;
    for (const auto& s : stays) stay_of.emplace(s.stay_id, &s);

    HarmonizeReport report;
    csv::Writer grid_writer(p.grid());
    grid_writer.write_row({"stay_id", "hour", "variable", "value", "provenance"});
    std::vector<std::pair<std::string, MedFlags>> med_doses;

    for_each_stay_events(
        p.events_24h(), [&](const std::string& stay_id, std::vector<RawEvent>& events) {
            auto it = stay_of.find(stay_id);
            if (it == stay_of.end()) return;
            StayRecord stay = *it->second;
            stay.events = std::move(events);
            HarmonizedStay hs = harmonize_stay(stay, ctx.harm, report);
            for (int h = 0; h < kGridHours; ++h) {
                for (std::size_t c = 0; c < hs.grid.n_columns; ++c) {
                    const Provenance prov = hs.grid.prov(h, static_cast<int>(c));
                    if (prov == Provenance::Missing) continue;
                    grid_writer.write_row(
                        {stay_id, std::to_string(h), ctx.harm.grid_schema.columns[c].name,
                         csv::format_double(hs.grid.value(h, static_cast<int>(c))),
                         prov == Provenance::Observed ? "observed" : "imputed"});
                }
            }
            if (!hs.meds.max_dose.empty()) med_doses.emplace_back(stay_id, hs.meds);
        });
    grid_writer.close();
    write_med_doses_csv(p.med_doses(), med_doses);
    save_json_file(p.harmonize_report(), report.to_json());

    const std::string h = cfg.config_hash();
    const std::vector<std::string> inputs = {p.stays(), p.events_24h()};
    write_manifest(p.grid(), "harmonize", cfg.seed, h, inputs);
    write_manifest(p.med_doses(), "harmonize", cfg.seed, h, inputs);
    write_manifest(p.harmonize_report(), "harmonize", cfg.seed, h, inputs);
}

void cmd_featurize(const RunConfig& cfg) {
    Paths p{cfg.dir};
    verify_manifest_chain(p.grid());
    verify_manifest_chain(p.med_doses());
    Context ctx = load_context(cfg);
    const GridSchema& schema = ctx.harm.grid_schema;

    const std::vector<StayRecord> stays = read_stays_csv(p.stays());
    const auto all_doses = read_med_doses_csv(p.med_doses());

    std::vector<HourlyGrid> grids = read_grids_csv(p.grid(), schema);
    std::unordered_map<std::string, std::size_t> grid_of;
    for (std::size_t g = 0; g < grids.size(); ++g) grid_of.emplace(grids[g].stay_id, g);

    // vitals raw samples per stay, canonical names, range-filtered
    std::set<std::string> vital_names;
    for (const auto& s : ctx.vitals_cfg.signals) vital_names.insert(s.name);
    std::unordered_map<std::string, std::map<std::string, std::vector<std::pair<double, double>>>>
        vital_samples;
    if (cfg.use_vitals_features) {
        int c_id = -1, c_var = -1, c_time = -1, c_num = -1;
        csv::for_each_row(
            p.events_24h(),
            [&](const std::vector<std::string>& header) {
                for (std::size_t i = 0; i < header.size(); ++i) {
                    if (header[i] == "stay_id") c_id = static_cast<int>(i);
                    if (header[i] == "variable") c_var = static_cast<int>(i);
                    if (header[i] == "time_offset_h") c_time = static_cast<int>(i);
                    if (header[i] == "value_numeric") c_num = static_cast<int>(i);
                }
            },
            [&](const std::vector<std::string>& r) {
                if (!vital_names.count(r[c_var])) return true;
                const auto v = csv::parse_double(r[c_num]);
                if (!v) return true;
                if (const ValidRange* range = ctx.harm.ranges.find(r[c_var])) {
                    if (*v < range->min || *v > range->max) return true;
                }
                vital_samples[r[c_id]][r[c_var]].emplace_back(
                    csv::parse_double(r[c_time]).value_or(0.0), *v);
                return true;
            });
    }

    // notes per stay
    std::unordered_map<std::string, std::vector<notes::NoteChunk>> note_chunks;
    if (cfg.use_notes && std::filesystem::exists(p.notes())) {
        for_each_stay_group(
            p.notes(),
            [&](const std::string& stay_id, const std::vector<std::vector<std::string>>& rows,
                const std::vector<std::string>& header) {
                int c_time = -1, c_text = -1;
                for (std::size_t i = 0; i < header.size(); ++i) {
                    if (header[i] == "note_time_offset_h") c_time = static_cast<int>(i);
                    if (header[i] == "text") c_text = static_cast<int>(i);
                }
                auto& chunks = note_chunks[stay_id];
                int note_index = 0;
                for (const auto& r : rows) {
                    const double t = csv::parse_double(r[c_time]).value_or(1e9);
                    if (t > kGridHours) continue; // only notes from the first 24 h
                    auto cs = notes::process_note(r[c_text], ctx.notes_cfg);
                    for (auto& c : cs) {
                        c.stay_id = stay_id;
                        c.note_index = note_index;
                        chunks.push_back(std::move(c));
                    }
                    ++note_index;
                }
            });
    }

    csv::Writer grid_out(p.grid_imputed());
    grid_out.write_row({"stay_id", "hour", "variable", "value", "provenance"});

    csv::Writer vitals_out(p.vitals_features());
    {
        std::vector<std::string> header = {"stay_id"};
        for (const auto& nme : vitals_feature_names(ctx.vitals_cfg)) header.push_back(nme);
        vitals_out.write_row(header);
    }
    csv::Writer scores_out(p.risk_scores());
    {
        std::vector<std::string> header = {"stay_id"};
        for (const auto& nme : score_feature_names()) header.push_back(nme);
        scores_out.write_row(header);
    }
    csv::Writer notes_out(p.note_features());
    {
        std::vector<std::string> header = {"stay_id"};
        for (const auto& nme : note_feature_names(cfg.note_dim)) header.push_back(nme);
        notes_out.write_row(header);
    }

    for (const auto& stay : stays) {
        HourlyGrid grid;
        auto git = grid_of.find(stay.stay_id);
        if (git != grid_of.end()) {
            grid = grids[git->second];
            resume_stage(grid, GridStage::Binned);
        } else {
            grid.init(stay.stay_id, schema.size());
        }

        impute_relationships(grid, schema, ctx.impute);
        attach_indicators(grid);
        sample_and_hold(grid, schema, ctx.impute);
        if (grid.stage_checksum != expected_stage_checksum(GridStage::Held)) {
            throw internal_error("imputation pipeline ran out of order");
        }

        for (int h = 0; h < kGridHours; ++h) {
            for (std::size_t c = 0; c < grid.n_columns; ++c) {
                const Provenance prov = grid.prov(h, static_cast<int>(c));
                if (prov == Provenance::Missing) continue;
                grid_out.write_row({stay.stay_id, std::to_string(h), schema.columns[c].name,
                                    csv::format_double(grid.value(h, static_cast<int>(c))),
                                    prov == Provenance::Observed ? "observed" : "imputed"});
            }
        }

        // risk scores from the post-hold grid (fill values would distort the
        // worst-in-window extremes)
        {
            MedFlags meds;
            auto dit = all_doses.find(stay.stay_id);
            if (dit != all_doses.end()) meds.max_dose = dit->second;
            const auto snap =
                scores::build_snapshot(grid, schema, stay, meds, ctx.comorbidities);
            scores::RiskScorePanel panel;
            panel.sofa = ctx.tables.sofa(snap);
            panel.saps2 = ctx.tables.saps2(snap);
            panel.oasis = ctx.tables.oasis(snap);
            panel.apache2 = ctx.tables.apache2(snap);
            panel.sirs = ctx.tables.sirs(snap);
            if (const auto si = snap.get("shock_index")) panel.shock_index = si->max;
            if (const auto pf = snap.get("pf_ratio")) panel.pf_ratio = pf->min;
            scores_out.write_row(
                {stay.stay_id, std::to_string(panel.sofa), std::to_string(panel.saps2),
                 std::to_string(panel.oasis), std::to_string(panel.apache2),
                 std::to_string(panel.sirs),
                 panel.shock_index ? csv::format_double(*panel.shock_index) : "0",
                 panel.shock_index ? "1" : "0",
                 panel.pf_ratio ? csv::format_double(*panel.pf_ratio) : "0",
                 panel.pf_ratio ? "1" : "0"});
        }

        // engineered vital-sign features
        {
            std::vector<vitals::Signal> signals;
            auto vit = vital_samples.find(stay.stay_id);
            if (vit != vital_samples.end()) {
                for (const auto& [name, samples] : vit->second) {
                    signals.push_back(
                        vitals::aggregate_windows(name, samples, ctx.vitals_cfg.window_seconds));
                }
            }
            const auto items = vitals::featurize_vitals(signals, ctx.vitals_cfg);
            std::vector<std::string> row = {stay.stay_id};
            for (const auto& item : items) {
                row.push_back(item.present ? csv::format_double(item.value) : "0");
                row.push_back(item.present ? "1" : "0");
            }
            vitals_out.write_row(row);
        }

        // hashed note bag
        {
            std::vector<notes::NoteChunk> chunks;
            auto nit = note_chunks.find(stay.stay_id);
            if (nit != note_chunks.end()) chunks = nit->second;
            const auto [vec, any] = notes::note_bag_features(chunks, cfg.note_dim);
            std::vector<std::string> row = {stay.stay_id, any ? "1" : "0"};
            for (double v : vec) row.push_back(csv::format_double(v));
            notes_out.write_row(row);
        }
    }
    grid_out.close();
    vitals_out.close();
    scores_out.close();
    notes_out.close();

    save_json_file(p.feature_manifest(), build_feature_manifest(ctx, cfg));

    const std::string h = cfg.config_hash();
    const std::vector<std::string> inputs = {p.grid(), p.med_doses(), p.stays(), p.events_24h()};
    write_manifest(p.grid_imputed(), "featurize", cfg.seed, h, inputs);
    write_manifest(p.vitals_features(), "featurize", cfg.seed, h, inputs);
    write_manifest(p.risk_scores(), "featurize", cfg.seed, h, inputs);
    write_manifest(p.note_features(), "featurize", cfg.seed, h, inputs);
    write_manifest(p.feature_manifest(), "featurize", cfg.seed, h, inputs);
}

void cmd_split(const RunConfig& cfg) {
    Paths p{cfg.dir};
    verify_manifest_chain(p.stays());
    const std::vector<StayRecord> stays = read_stays_csv(p.stays());
    const eval::Split split =
        eval::stratified_split(stays, eval::SplitFractions{}, cfg.seed ^ fnv1a64("split"));
    save_json_file(p.split(), split.to_json());
    write_manifest(p.split(), "split", cfg.seed, cfg.config_hash(), {p.stays()});
}

namespace {

struct LoadedCheckpoint {
    nn::FusedNet net;
    FillStats fill;
    Normalizer norm;
    std::vector<std::string> blocks;
    json feature_manifest;
};

LoadedCheckpoint load_checkpoint(const std::string& path, const GridSchema& schema) {
    const json j = load_json_file(path);
    LoadedCheckpoint c;
    c.net = nn::FusedNet::from_json(j.at("net"));
    c.fill = FillStats::from_json(j.at("fill_stats"), schema);
    c.norm = Normalizer::from_json(j.at("normalizer"), schema);
    c.blocks = j.at("blocks").get<std::vector<std::string>>();
    c.feature_manifest = j.at("feature_manifest");
    return c;
}

} // namespace

void cmd_train(const RunConfig& cfg, const std::string& variant) {
    variant_or_throw(variant);
    Paths p{cfg.dir};

    // The fused model follows the staged recipe: the single-modality models
    // are trained first and their encoders stay frozen while the remaining
    // encoders and the classification head are fitted.
    std::vector<std::string> frozen_blocks;
    if (variant == "combined") {
        for (const char* donor : {"static", "timevariant"}) {
            if (!std::filesystem::exists(p.checkpoint(donor))) cmd_train(cfg, donor);
        }
    }

    for (const auto& f : {p.grid_imputed(), p.vitals_features(), p.risk_scores(),
                          p.note_features(), p.feature_manifest(), p.split()}) {
        verify_manifest_chain(f);
    }
    Context ctx = load_context(cfg);
    const eval::Split split = eval::Split::from_json(load_json_file(p.split()));

    auto [fill, norm] = fit_stats_on_train(ctx, p, split.train);
    const FeatureTable table = assemble_features(ctx, cfg, p, fill, norm);

    const std::vector<std::string> blocks = blocks_for_variant(cfg, variant);
    nn::Batch train_batch = slice_batch(table, blocks, split.train);
    nn::Batch val_batch = slice_batch(table, blocks, split.val);

    nn::NetConfig net_cfg;
    net_cfg.pooling = nn::Pooling::Concat;
    net_cfg.dropout = cfg.train.dropout;
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        const std::size_t width = table.blocks.at(blocks[bi]).cols;
        if (blocks[bi] == "static") {
            net_cfg.blocks.push_back(
                nn::EncoderSpec::static_block("static", width, cfg.train.dropout));
        } else {
            net_cfg.blocks.push_back(
                nn::EncoderSpec::dynamic_block(blocks[bi], width, cfg.train.dropout));
        }
    }

    nn::TrainConfig tc = cfg.train;
    tc.seed = cfg.seed ^ fnv1a64("train:" + variant);

    std::optional<nn::FusedNet> init;
    if (variant == "combined") {
        init = nn::build_net(net_cfg, tc.seed);
        auto graft = [&](const std::string& donor_variant, const std::string& block) {
            const LoadedCheckpoint donor =
                load_checkpoint(p.checkpoint(donor_variant), ctx.harm.grid_schema);
            for (std::size_t bi = 0; bi < donor.net.blocks.size(); ++bi) {
                if (donor.net.blocks[bi].name != block) continue;
                init->blocks[init->block_index(block)] = donor.net.blocks[bi];
                frozen_blocks.push_back(block);
                return;
            }
        };
        graft("static", "static");
        graft("timevariant", "dynamic");
        if (cfg.use_vitals_features) graft("timevariant", "vitals");
    }

    const nn::TrainResult result = nn::train(net_cfg, tc, train_batch, val_batch, frozen_blocks,
                                             init ? &*init : nullptr);

    json ck;
    ck["variant"] = variant;
    ck["blocks"] = blocks;
    ck["frozen_blocks"] = frozen_blocks;
    ck["net"] = result.best_net.to_json();
    ck["fill_stats"] = fill.to_json(ctx.harm.grid_schema);
    ck["normalizer"] = norm.to_json(ctx.harm.grid_schema);
    ck["feature_manifest"] = load_json_file(p.feature_manifest());
    ck["seed"] = cfg.seed;
    ck["train_config"] = tc.to_json();
    ck["training_log"] = result.log_to_json();
    ck["best_val_metric"] = result.best_val_metric;
    ck["best_epoch"] = result.best_epoch;
    save_json_file(p.checkpoint(variant), ck);
    write_manifest(p.checkpoint(variant), "train", cfg.seed, cfg.config_hash(),
                   {p.grid_imputed(), p.vitals_features(), p.risk_scores(), p.note_features(),
                    p.feature_manifest(), p.split()});
}

void cmd_predict(const RunConfig& cfg, const std::string& variant) {
    variant_or_throw(variant);
    Paths p{cfg.dir};
    verify_manifest_chain(p.checkpoint(variant));
    Context ctx = load_context(cfg);

    LoadedCheckpoint ck = load_checkpoint(p.checkpoint(variant), ctx.harm.grid_schema);
    const json current_manifest = load_json_file(p.feature_manifest());
    if (ck.feature_manifest != current_manifest) {
        throw data_error(
            "feature manifest mismatch: the checkpoint was trained on a different feature layout; "
            "re-run featurize/train together");
    }

    const FeatureTable table = assemble_features(ctx, cfg, p, ck.fill, ck.norm);
    std::vector<std::string> all_ids;
    all_ids.reserve(table.stays.size());
    for (const auto& s : table.stays) all_ids.push_back(s.stay_id);
    const nn::Batch batch = slice_batch(table, ck.blocks, all_ids);
    const std::vector<double> scores = nn::predict(ck.net, batch);

    csv::Writer w(p.scores(variant));
    w.write_row({"stay_id", "score", "label"});
    for (std::size_t i = 0; i < all_ids.size(); ++i) {
        w.write_row({all_ids[i], csv::format_double(scores[i]),
                     table.labels[i] > 0.5 ? "1" : "0"});
    }
    w.close();
    write_manifest(p.scores(variant), "predict", cfg.seed, cfg.config_hash(),
                   {p.checkpoint(variant), p.feature_manifest()});
}

void cmd_evaluate(const RunConfig& cfg, const std::string& variant) {
    variant_or_throw(variant);
    Paths p{cfg.dir};
    verify_manifest_chain(p.scores(variant));
    verify_manifest_chain(p.split());

    const ScoresFile scores = read_scores_csv(p.scores(variant));
    const eval::Split split = eval::Split::from_json(load_json_file(p.split()));
    const std::vector<StayRecord> stays = read_stays_csv(p.stays());
    std::unordered_map<std::string, const StayRecord*> stay_of;
    for (const auto& s : stays) stay_of.emplace(s.stay_id, &s);

    std::vector<double> val_scores, test_scores;
    std::vector<int> val_labels, test_labels;
    subset_scores(scores, split.val, val_scores, val_labels);
    std::vector<std::string> test_ids;
    subset_scores(scores, split.test, test_scores, test_labels, &test_ids);

    // operating point chosen on the validation split, applied to the test set
    const double threshold =
        metrics::select_threshold(val_scores, val_labels, cfg.threshold_target);

    metrics::BootstrapOptions opt;
    opt.resamples = cfg.bootstrap_resamples;
    opt.seed = cfg.seed ^ fnv1a64("bootstrap:" + variant);
    const metrics::MetricReport test_report =
        metrics::compute_metrics_with_ci(test_scores, test_labels, threshold, opt);

    std::vector<const StayRecord*> test_stays;
    for (const auto& id : test_ids) test_stays.push_back(stay_of.at(id));
    const eval::HorizonReports horizons =
        eval::evaluate_by_horizon(test_scores, test_stays, threshold);

    std::vector<std::string> hospital_keys;
    for (const auto* s : test_stays) hospital_keys.push_back(s->hospital_id);
    const eval::GroupReport by_hospital = eval::evaluate_by_group(
        test_scores, test_labels, hospital_keys, threshold, cfg.group_min_n);

    json out;
    out["variant"] = variant;
    out["threshold"] = threshold;
    out["threshold_target_sensitivity"] = cfg.threshold_target;
    out["n_val"] = val_scores.size();
    out["n_test"] = test_scores.size();
    out["test"] = test_report.to_json();
    out["horizons"] = horizons.to_json();
    json hosp = json::object();
    for (const auto& [group, rep] : by_hospital.by_group) hosp[group] = rep.to_json();
    out["by_hospital"] = hosp;
    out["hospital_groups_skipped_below_min_n"] = by_hospital.skipped_small;
    save_json_file(p.metrics(variant), out);
    write_manifest(p.metrics(variant), "evaluate", cfg.seed, cfg.config_hash(),
                   {p.scores(variant), p.split(), p.stays()});
}

void cmd_audit(const RunConfig& cfg, const std::string& variant) {
    variant_or_throw(variant);
    Paths p{cfg.dir};
    verify_manifest_chain(p.scores(variant));
    verify_manifest_chain(p.metrics(variant));

    const ScoresFile scores = read_scores_csv(p.scores(variant));
    const eval::Split split = eval::Split::from_json(load_json_file(p.split()));
    const std::vector<StayRecord> stays = read_stays_csv(p.stays());
    std::unordered_map<std::string, const StayRecord*> stay_of;
    for (const auto& s : stays) stay_of.emplace(s.stay_id, &s);

    const json metrics_doc = load_json_file(p.metrics(variant));
    const double threshold = metrics_doc.at("threshold").get<double>();

    std::vector<double> test_scores;
    std::vector<int> test_labels;
    std::vector<std::string> test_ids;
    subset_scores(scores, split.test, test_scores, test_labels, &test_ids);
    std::vector<const StayRecord*> test_stays;
    for (const auto& id : test_ids) test_stays.push_back(stay_of.at(id));

    const eval::BiasAudit audit =
        eval::bias_audit(test_scores, test_labels, test_stays, threshold);
    json out = audit.to_json();
    out["variant"] = variant;
    save_json_file(p.bias_audit(), out);
    write_manifest(p.bias_audit(), "audit", cfg.seed, cfg.config_hash(),
                   {p.scores(variant), p.metrics(variant), p.split(), p.stays()});
}

namespace {

metrics::MetricReport report_from_json(const json& j) {
    metrics::MetricReport r;
    auto read = [&](const char* key, metrics::MetricValue& slot) {
        if (!j.contains(key)) return;
        const json& mv = j.at(key);
        if (mv.contains("present") && !mv.at("present").get<bool>()) return;
        if (!mv.contains("point")) return;
        slot.present = true;
        slot.point = mv.at("point").get<double>();
        if (mv.contains("ci_lo")) {
            slot.ci = metrics::Interval{mv.at("ci_lo").get<double>(), mv.at("ci_hi").get<double>()};
        }
    };
    read("accuracy", r.accuracy);
    read("precision", r.precision);
    read("f1", r.f1);
    read("specificity", r.specificity);
    read("auroc", r.auroc);
    read("auprc", r.auprc);
    read("mcc", r.mcc);
    read("brier", r.brier);
    if (j.contains("threshold")) r.threshold = j.at("threshold").get<double>();
    if (j.contains("n")) r.n = j.at("n").get<std::size_t>();
    if (j.contains("n_pos")) r.n_pos = j.at("n_pos").get<std::size_t>();
    return r;
}

} // namespace

void cmd_report(const RunConfig& cfg) {
    Paths p{cfg.dir};
    Context ctx = load_context(cfg);

    static const char* kVariants[] = {"static", "timevariant", "combined"};
    static const char* kLabels[] = {"Time-invariant only", "Time-variant only",
                                    "Combined modalities"};

    json out;
    std::string text;
    std::vector<report::Row> rows;
    for (int k = 0; k < 3; ++k) {
        const std::string mpath = p.metrics(kVariants[k]);
        if (!std::filesystem::exists(mpath)) continue;
        verify_manifest_chain(mpath);
        const json doc = load_json_file(mpath);
        rows.push_back({kLabels[k], report_from_json(doc.at("test"))});
        out["variants"][kVariants[k]] = doc;
    }
    if (rows.empty()) {
        throw data_error("report: no evaluated variants found; run evaluate first");
    }
    text += report::render_table("Model performance on the held-out test set", rows);

    // risk-score comparison on the test split
    const eval::Split split = eval::Split::from_json(load_json_file(p.split()));
    const std::vector<StayRecord> stays = read_stays_csv(p.stays());
    std::unordered_map<std::string, const StayRecord*> stay_of;
    for (const auto& s : stays) stay_of.emplace(s.stay_id, &s);

    if (std::filesystem::exists(p.risk_scores()) &&
        std::filesystem::exists(p.scores("combined"))) {
        verify_manifest_chain(p.risk_scores());
        const csv::Table t = csv::read_file(p.risk_scores());
        const int c_id = t.column("stay_id");
        std::unordered_map<std::string, std::size_t> row_of;
        for (std::size_t i = 0; i < t.rows.size(); ++i) row_of.emplace(t.rows[i][c_id], i);

        const ScoresFile model = read_scores_csv(p.scores("combined"));
        std::vector<double> model_val, model_test;
        std::vector<int> val_labels, test_labels;
        subset_scores(model, split.val, model_val, val_labels);
        std::vector<std::string> test_ids;
        subset_scores(model, split.test, model_test, test_labels, &test_ids);

        json comparison;
        std::vector<report::Row> score_rows;
        for (const char* score_name : {"sofa", "saps2", "oasis", "apache2"}) {
            const int col = t.column(score_name);
            std::vector<double> val_s, test_s;
            for (const auto& id : split.val) {
                val_s.push_back(csv::parse_double(t.rows[row_of.at(id)][col]).value_or(0.0));
            }
            for (const auto& id : test_ids) {
                test_s.push_back(csv::parse_double(t.rows[row_of.at(id)][col]).value_or(0.0));
            }
            const double thr = metrics::select_threshold(val_s, val_labels, cfg.threshold_target);
            metrics::MetricReport rep = metrics::compute_metrics(test_s, test_labels, thr);
            rep.brier.present = false; // raw point scores are not probabilities
            score_rows.push_back({score_name, rep});

            const metrics::DeLongResult dl = metrics::delong_test(model_test, test_s, test_labels);
            json cj;
            cj["auroc"] = rep.auroc.present ? json(rep.auroc.point) : json();
            cj["delong_vs_model"] = {{"auc_model", dl.auc_a},
                                     {"auc_score", dl.auc_b},
                                     {"p_value", dl.p_value}};
            if (std::string(score_name) == "saps2") {
                const double thr_model =
                    metrics::select_threshold(model_val, val_labels, cfg.threshold_target);
                const eval::DisagreementReport dis = eval::disagreement_analysis(
                    model_test, test_s, test_labels, thr_model, thr,
                    cfg.top_disagreement_fraction);
                cj["disagreement"] = dis.to_json();
            }
            comparison[score_name] = cj;
        }
        text += "\n" + report::render_table("Published risk scores on the same test set",
                                            score_rows);
        out["risk_score_comparison"] = comparison;
    }

    // aggregated Integrated Gradients importances for the fused model
    if (std::filesystem::exists(p.checkpoint("combined"))) {
        LoadedCheckpoint ck = load_checkpoint(p.checkpoint("combined"), ctx.harm.grid_schema);
        const FeatureTable table = assemble_features(ctx, cfg, p, ck.fill, ck.norm);
        std::vector<std::string> sample_ids = split.test;
        if (sample_ids.size() > 100) sample_ids.resize(100);

        // feature names in block order
        std::vector<std::string> names;
        for (const auto& block : ck.blocks) {
            for (const auto& nme :
                 ck.feature_manifest.at("blocks").at(block).get<std::vector<std::string>>()) {
                names.push_back(nme);
            }
        }

        std::map<std::string, double> importance;
        for (const auto& id : sample_ids) {
            const nn::Batch x = slice_batch(table, ck.blocks, {id});
            nn::Batch baseline;
            baseline.labels = {0.0};
            for (const auto& m : x.block_inputs) {
                baseline.block_inputs.emplace_back(1, m.cols);
            }
            const auto attr = nn::integrated_gradients(ck.net, x, baseline, 64);
            for (std::size_t i = 0; i < attr.size(); ++i) {
                std::string key = names[i];
                if (const std::size_t at = key.find("@h"); at != std::string::npos) {
                    const bool indicator = key.find(".obs") != std::string::npos;
                    key = key.substr(0, at) + (indicator ? " (indicator)" : "");
                }
                importance[key] += std::abs(attr[i]);
            }
        }
        std::vector<std::pair<std::string, double>> ranked(importance.begin(), importance.end());
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        if (ranked.size() > 20) ranked.resize(20);

        text += "\nTop feature attributions (mean |integrated gradients|, fused model)\n";
        json imp = json::array();
        for (const auto& [name, value] : ranked) {
            const double mean_abs = value / static_cast<double>(sample_ids.size());
            text += fmt::format("  {:<40} {:.6f}\n", name, mean_abs);
            imp.push_back({{"feature", name}, {"mean_abs_attribution", mean_abs}});
        }
        out["feature_importance"] = imp;
    }

    {
        std::ofstream f(p.report_txt(), std::ios::binary);
        f << text;
    }
    save_json_file(p.report_json(), out);
    std::vector<std::string> inputs;
    for (int k = 0; k < 3; ++k) {
        if (std::filesystem::exists(p.metrics(kVariants[k]))) inputs.push_back(p.metrics(kVariants[k]));
    }
    write_manifest(p.report_txt(), "report", cfg.seed, cfg.config_hash(), inputs);
    write_manifest(p.report_json(), "report", cfg.seed, cfg.config_hash(), inputs);
}

void run_all(const RunConfig& cfg, const std::vector<std::string>& variants) {
    cmd_synth(cfg);
    cmd_ingest(cfg);
    cmd_harmonize(cfg);
    cmd_featurize(cfg);
    cmd_split(cfg);
    for (const auto& v : variants) {
        cmd_train(cfg, v);
        cmd_predict(cfg, v);
        cmd_evaluate(cfg, v);
    }
    if (!variants.empty()) cmd_audit(cfg, variants.back());
    cmd_report(cfg);
}

} // namespace icumort::pipeline
