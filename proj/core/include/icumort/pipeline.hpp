#pragma once

#include "icumort/evaluation.hpp"
#include "icumort/harmonize.hpp"
#include "icumort/impute.hpp"
#include "icumort/jsonio.hpp"
#include "icumort/nn.hpp"
#include "icumort/synthetic.hpp"
#include "icumort/vitals.hpp"

#include <string>
#include <vector>

namespace icumort::pipeline {

// One run directory holds every artifact of a pipeline run; each command
// reads the previous command's outputs and refuses stale or edited inputs
// via their manifests.
struct RunConfig {
    std::string dir;
    std::uint64_t seed = 7;
    bool use_notes = true;
    bool use_vitals_features = true;
    bool use_risk_scores = true;
    std::size_t note_dim = 128;
    double threshold_target = 0.80;
    std::size_t bootstrap_resamples = 1000;
    std::size_t group_min_n = 50;
    double top_disagreement_fraction = 0.20;
    nn::TrainConfig train;
    GenConfig synth = GenConfig::defaults();
    // optional config-file overrides; empty string = built-in defaults
    std::string schema_map_path, valid_ranges_path, med_lexicon_path, comorbidities_path,
        imputation_path, risk_tables_path, notes_config_path, vitals_config_path;

    static RunConfig from_json(const json& j);
    static RunConfig from_file(const std::string& path);
    json to_json() const;
    std::string config_hash() const;
};

struct Paths {
    std::string dir;
    std::string events() const { return dir + "/events.csv"; }
    std::string statics() const { return dir + "/statics.csv"; }
    std::string notes() const { return dir + "/notes.csv"; }
    std::string stays() const { return dir + "/stays.csv"; }
    std::string events_24h() const { return dir + "/events_24h.csv"; }
    std::string ingest_report() const { return dir + "/ingest_report.json"; }
    std::string grid() const { return dir + "/grid.csv"; }
    std::string med_doses() const { return dir + "/med_doses.csv"; }
    std::string harmonize_report() const { return dir + "/harmonize_report.json"; }
    std::string grid_imputed() const { return dir + "/grid_imputed.csv"; }
    std::string vitals_features() const { return dir + "/vitals_features.csv"; }
    std::string risk_scores() const { return dir + "/risk_scores.csv"; }
    std::string note_features() const { return dir + "/note_features.csv"; }
    std::string feature_manifest() const { return dir + "/feature_manifest.json"; }
    std::string split() const { return dir + "/split.json"; }
    std::string checkpoint(const std::string& variant) const {
        return dir + "/model_" + variant + ".checkpoint.json";
    }
    std::string scores(const std::string& variant) const {
        return dir + "/scores_" + variant + ".csv";
    }
    std::string metrics(const std::string& variant) const {
        return dir + "/metrics_" + variant + ".json";
    }
    std::string bias_audit() const { return dir + "/bias_audit.json"; }
    std::string report_txt() const { return dir + "/report.txt"; }
    std::string report_json() const { return dir + "/report.json"; }
};

// Known model variants (paper-style ablations):
//   static      - time-invariant block only
//   timevariant - hourly grid + engineered vital-sign features
//   combined    - every enabled block (grid, vitals, static, scores, notes)
std::vector<std::string> blocks_for_variant(const RunConfig& cfg, const std::string& variant);

void cmd_synth(const RunConfig& cfg);
void cmd_ingest(const RunConfig& cfg);
void cmd_harmonize(const RunConfig& cfg);
void cmd_featurize(const RunConfig& cfg);
void cmd_split(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg, const std::string& variant);
void cmd_predict(const RunConfig& cfg, const std::string& variant);
void cmd_evaluate(const RunConfig& cfg, const std::string& variant);
void cmd_audit(const RunConfig& cfg, const std::string& variant);
void cmd_report(const RunConfig& cfg);

// Convenience used by tests and the acceptance suite.
void run_all(const RunConfig& cfg, const std::vector<std::string>& variants);

} // namespace icumort::pipeline
