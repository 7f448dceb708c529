#pragma once

#include "icumort/jsonio.hpp"
#include "icumort/metrics.hpp"
#include "icumort/types.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace icumort::eval {

struct Split {
    std::vector<std::string> train, val, test;
    // subgroup key -> {subgroup size, positives, target counts}
    json stratification_report;

    json to_json() const;
    static Split from_json(const json& j);
};

struct SplitFractions {
    double train = 0.70, val = 0.10, test = 0.20;
};

// Stratified by modality-availability subgroup and outcome: within each
// subgroup, positives and negatives are allocated to train/val/test by
// largest-remainder rounding of the requested fractions. Deterministic per
// seed. Subgroups too small to stratify (fewer members than splits with a
// nonzero share) go entirely to train with a warning in the report.
Split stratified_split(const std::vector<StayRecord>& stays, const SplitFractions& fractions,
                       std::uint64_t seed);

struct GroupRates {
    double tpr = 0, tnr = 0, fpr = 0, fnr = 0;
    bool tpr_present = false; // needs positives in the group
    bool tnr_present = false; // needs negatives in the group
    std::size_t n = 0;
    std::size_t n_pos = 0;
    metrics::Confusion confusion;
};

struct BiasAudit {
    // dimension ("race", "ethnicity", "sex", "age_bucket") -> group -> rates
    std::map<std::string, std::map<std::string, GroupRates>> groups;
    double threshold = 0.5;

    json to_json() const;
};

// Age buckets: <=44, 45-60, 61-75, >=76.
std::string age_bucket(int age);

BiasAudit bias_audit(const std::vector<double>& scores, const std::vector<int>& labels,
                     const std::vector<const StayRecord*>& stays, double threshold);

// metrics() per group with the shared threshold; groups under min_n are
// reported as skipped.
struct GroupReport {
    std::map<std::string, metrics::MetricReport> by_group;
    std::vector<std::string> skipped_small;
};

GroupReport evaluate_by_group(const std::vector<double>& scores, const std::vector<int>& labels,
                              const std::vector<std::string>& group_keys, double threshold,
                              std::size_t min_n);

// Post-observation horizons measured from ICU admission:
//   interval 1: death in (24 h, 48 h]   (first day after the observation window)
//   interval 2: death in (48 h, 192 h]  (day 2 through the end of week 1)
//   interval 3: death after 192 h
// Positives of one interval are its deaths; negatives are all survivors;
// deaths outside the interval are excluded from that interval's evaluation.
struct HorizonReports {
    metrics::MetricReport interval1, interval2, interval3;
    std::size_t deaths1 = 0, deaths2 = 0, deaths3 = 0;

    json to_json() const;
};

HorizonReports evaluate_by_horizon(const std::vector<double>& scores,
                                   const std::vector<const StayRecord*>& stays, double threshold);

struct DisagreementReport {
    std::size_t n_disagreements = 0;
    metrics::MetricReport model_on_disagreements;
    metrics::MetricReport reference_on_disagreements;
    std::size_t top_fraction_n = 0;
    metrics::MetricReport model_on_top;
    metrics::MetricReport reference_on_top;

    json to_json() const;
};

// Cases where the two scorers' thresholded predictions disagree, each scorer
// evaluated on that subset; plus the top-|delta| fraction of all cases by
// absolute probability difference (the reference scores are min-max rescaled
// to [0,1] for comparability).
DisagreementReport disagreement_analysis(const std::vector<double>& scores_model,
                                         const std::vector<double>& scores_ref,
                                         const std::vector<int>& labels, double threshold_model,
                                         double threshold_ref, double top_fraction = 0.20);

} // namespace icumort::eval
