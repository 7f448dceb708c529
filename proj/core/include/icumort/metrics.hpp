#pragma once

#include "icumort/jsonio.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace icumort::metrics {

// Midrank (Mann-Whitney) AUROC with half credit for ties. Empty optional when
// only one class is present.
std::optional<double> auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// Average precision: step integral of the precision-recall curve, tied scores
// handled as one group. Not the trapezoidal variant.
std::optional<double> auprc(const std::vector<double>& scores, const std::vector<int>& labels);

double brier(const std::vector<double>& scores, const std::vector<int>& labels);

struct Confusion {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    double accuracy() const;
    double precision() const;
    double recall() const; // sensitivity / TPR
    double specificity() const;
    double f1() const;
    double mcc() const;
};

// Ties at the threshold count as positive: score >= threshold -> 1.
Confusion confusion_at(const std::vector<double>& scores, const std::vector<int>& labels,
                       double threshold);

struct Interval {
    double lo = 0, hi = 0;
};

struct MetricValue {
    double point = 0;
    std::optional<Interval> ci;
    bool present = false;
};

struct MetricReport {
    MetricValue accuracy, precision, f1, specificity, auroc, auprc, mcc, brier;
    double threshold = 0.5;
    std::size_t n = 0;
    std::size_t n_pos = 0;

    json to_json() const;
};

// Point estimates only (no intervals).
MetricReport compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels,
                             double threshold);

// The largest threshold with sensitivity >= target, swept over the unique
// scores. Throws data_error when no positives exist.
double select_threshold(const std::vector<double>& scores, const std::vector<int>& labels,
                        double target_sensitivity = 0.80);

enum class BootstrapKind { Pivot, Percentile };

struct BootstrapOptions {
    std::size_t resamples = 1000;
    std::uint64_t seed = 0;
    BootstrapKind kind = BootstrapKind::Pivot;
    std::size_t max_redraws = 100000; // for resamples where the statistic is undefined
};

struct BootstrapResult {
    Interval interval;
    std::size_t redraws = 0; // degenerate resamples that were redrawn
};

// Stay-level resampling with replacement; pivot (basic) interval
// [2 theta - q_.975, 2 theta - q_.025]. Deterministic per seed. A degenerate
// bootstrap distribution gives a zero-width interval.
BootstrapResult bootstrap_ci(
    const std::function<std::optional<double>(const std::vector<std::size_t>&)>& statistic,
    std::size_t n, double point_estimate, const BootstrapOptions& opt);

// Convenience wrapper for score/label statistics.
BootstrapResult bootstrap_metric_ci(const std::vector<double>& scores,
                                    const std::vector<int>& labels,
                                    const std::function<std::optional<double>(
                                        const std::vector<double>&, const std::vector<int>&)>& stat,
                                    double point_estimate, const BootstrapOptions& opt);

// Full report with pivot intervals on every metric.
MetricReport compute_metrics_with_ci(const std::vector<double>& scores,
                                     const std::vector<int>& labels, double threshold,
                                     const BootstrapOptions& opt);

struct DeLongResult {
    double auc_a = 0;
    double auc_b = 0;
    double p_value = 1.0;
    double variance = 0;
};

// Paired DeLong comparison of two AUROCs via placement values; two-sided
// normal p. Zero variance of the difference gives p = 1.
DeLongResult delong_test(const std::vector<double>& scores_a, const std::vector<double>& scores_b,
                         const std::vector<int>& labels);

double normal_cdf(double x);

// quantile with linear interpolation between order statistics
double quantile(std::vector<double> values, double q);

} // namespace icumort::metrics
