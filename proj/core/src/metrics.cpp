#include "icumort/metrics.hpp"
#include "icumort/errors.hpp"
#include "icumort/rng.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace icumort::metrics {

namespace {

// midranks, 1-based, ties share the average rank
std::vector<double> midranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

} // namespace

std::optional<double> auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::size_t pos = 0;
    for (int y : labels)
        if (y) ++pos;
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) return std::nullopt;

    const std::vector<double> ranks = midranks(scores);
    double rank_sum_pos = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i]) rank_sum_pos += ranks[i];
    }
    const double u = rank_sum_pos - static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0;
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

std::optional<double> auprc(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::size_t pos = 0;
    for (int y : labels)
        if (y) ++pos;
    if (pos == 0 || pos == labels.size()) return std::nullopt;

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    double prev_recall = 0.0;
    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) {
            if (labels[order[k]]) ++tp;
            else ++fp;
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    return ap;
}

double brier(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double d = scores[i] - static_cast<double>(labels[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(scores.size());
}

double Confusion::accuracy() const {
    const double total = static_cast<double>(tp + fp + tn + fn);
    return total > 0 ? static_cast<double>(tp + tn) / total : 0.0;
}
double Confusion::precision() const {
    return tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
}
double Confusion::recall() const {
    return tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
}
double Confusion::specificity() const {
    return tn + fp > 0 ? static_cast<double>(tn) / static_cast<double>(tn + fp) : 0.0;
}
double Confusion::f1() const {
    const double denom = 2.0 * static_cast<double>(tp) + static_cast<double>(fp + fn);
    return denom > 0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
}
double Confusion::mcc() const {
    const double a = static_cast<double>(tp), b = static_cast<double>(fp);
    const double c = static_cast<double>(fn), d = static_cast<double>(tn);
    const double denom = std::sqrt((a + b) * (a + c) * (d + b) * (d + c));
    return denom > 0 ? (a * d - b * c) / denom : 0.0;
}

Confusion confusion_at(const std::vector<double>& scores, const std::vector<int>& labels,
                       double threshold) {
    Confusion c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        if (pred && labels[i]) ++c.tp;
        else if (pred && !labels[i]) ++c.fp;
        else if (!pred && labels[i]) ++c.fn;
        else ++c.tn;
    }
    return c;
}

namespace {

json metric_value_json(const MetricValue& v) {
    json j;
    if (!v.present) {
        j["present"] = false;
        return j;
    }
    j["point"] = v.point;
    if (v.ci) {
        j["ci_lo"] = v.ci->lo;
        j["ci_hi"] = v.ci->hi;
    }
    return j;
}

} // namespace

json MetricReport::to_json() const {
    json j;
    j["accuracy"] = metric_value_json(accuracy);
    j["precision"] = metric_value_json(precision);
    j["f1"] = metric_value_json(f1);
    j["specificity"] = metric_value_json(specificity);
    j["auroc"] = metric_value_json(auroc);
    j["auprc"] = metric_value_json(auprc);
    j["mcc"] = metric_value_json(mcc);
    j["brier"] = metric_value_json(brier);
    j["threshold"] = threshold;
    j["n"] = n;
    j["n_pos"] = n_pos;
    return j;
}

MetricReport compute_metrics(const std::vector<double>& scores, const std::vector<int>& labels,
                             double threshold) {
    MetricReport r;
    r.threshold = threshold;
    r.n = scores.size();
    for (int y : labels)
        if (y) ++r.n_pos;

    const Confusion c = confusion_at(scores, labels, threshold);
    r.accuracy = {c.accuracy(), std::nullopt, true};
    r.precision = {c.precision(), std::nullopt, true};
    r.f1 = {c.f1(), std::nullopt, true};
    r.specificity = {c.specificity(), std::nullopt, true};
    r.mcc = {c.mcc(), std::nullopt, true};
    r.brier = {brier(scores, labels), std::nullopt, true};
    if (const auto a = auroc(scores, labels)) r.auroc = {*a, std::nullopt, true};
    if (const auto a = auprc(scores, labels)) r.auprc = {*a, std::nullopt, true};
    return r;
}

double select_threshold(const std::vector<double>& scores, const std::vector<int>& labels,
                        double target_sensitivity) {
    std::size_t pos = 0;
    for (int y : labels)
        if (y) ++pos;
    if (pos == 0) throw data_error("select_threshold: no positive labels");

    std::vector<double> candidates = scores;
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    // sensitivity is non-increasing in the threshold; take the largest
    // candidate that still reaches the target
    double best = candidates.front();
    bool found = false;
    for (double t : candidates) {
        std::size_t tp = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (labels[i] && scores[i] >= t) ++tp;
        }
        const double sens = static_cast<double>(tp) / static_cast<double>(pos);
        if (sens >= target_sensitivity) {
            if (!found || t > best) best = t;
            found = true;
        }
    }
    if (!found) {
        // even the lowest threshold misses the target only when target > 1
        throw data_error(fmt::format("select_threshold: no threshold reaches sensitivity {}",
                                     target_sensitivity));
    }
    return best;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw usage_error("quantile of empty set");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

BootstrapResult bootstrap_ci(
    const std::function<std::optional<double>(const std::vector<std::size_t>&)>& statistic,
    std::size_t n, double point_estimate, const BootstrapOptions& opt) {
    if (n == 0) throw data_error("bootstrap_ci: empty data");
    Rng rng(opt.seed);
    std::vector<double> stats;
    stats.reserve(opt.resamples);
    std::size_t redraws = 0;
    std::vector<std::size_t> idx(n);
    while (stats.size() < opt.resamples) {
        for (std::size_t i = 0; i < n; ++i) idx[i] = rng.index(n);
        const auto value = statistic(idx);
        if (!value) {
            ++redraws;
            if (redraws > opt.max_redraws) {
                throw data_error("bootstrap_ci: statistic undefined on too many resamples");
            }
            continue;
        }
        stats.push_back(*value);
    }
    const double q_lo = quantile(stats, 0.025);
    const double q_hi = quantile(stats, 0.975);
    BootstrapResult r;
    r.redraws = redraws;
    if (opt.kind == BootstrapKind::Pivot) {
        r.interval.lo = 2.0 * point_estimate - q_hi;
        r.interval.hi = 2.0 * point_estimate - q_lo;
    } else {
        r.interval.lo = q_lo;
        r.interval.hi = q_hi;
    }
    if (r.interval.lo > r.interval.hi) std::swap(r.interval.lo, r.interval.hi);
    return r;
}

BootstrapResult bootstrap_metric_ci(
    const std::vector<double>& scores, const std::vector<int>& labels,
    const std::function<std::optional<double>(const std::vector<double>&,
                                              const std::vector<int>&)>& stat,
    double point_estimate, const BootstrapOptions& opt) {
    std::vector<double> s_buf(scores.size());
    std::vector<int> l_buf(labels.size());
    return bootstrap_ci(
        [&](const std::vector<std::size_t>& idx) {
            for (std::size_t i = 0; i < idx.size(); ++i) {
                s_buf[i] = scores[idx[i]];
                l_buf[i] = labels[idx[i]];
            }
            return stat(s_buf, l_buf);
        },
        scores.size(), point_estimate, opt);
}

MetricReport compute_metrics_with_ci(const std::vector<double>& scores,
                                     const std::vector<int>& labels, double threshold,
                                     const BootstrapOptions& opt) {
    MetricReport r = compute_metrics(scores, labels, threshold);

    struct Item {
        MetricValue* slot;
        std::function<std::optional<double>(const std::vector<double>&, const std::vector<int>&)> f;
        const char* tag;
    };
    std::vector<Item> items = {
        {&r.accuracy,
         [&](const auto& s, const auto& l) {
             return std::optional<double>(confusion_at(s, l, threshold).accuracy());
         },
         "accuracy"},
        {&r.precision,
         [&](const auto& s, const auto& l) {
             return std::optional<double>(confusion_at(s, l, threshold).precision());
         },
         "precision"},
        {&r.f1,
         [&](const auto& s, const auto& l) {
             return std::optional<double>(confusion_at(s, l, threshold).f1());
         },
         "f1"},
        {&r.specificity,
         [&](const auto& s, const auto& l) {
             return std::optional<double>(confusion_at(s, l, threshold).specificity());
         },
         "specificity"},
        {&r.mcc,
         [&](const auto& s, const auto& l) {
             return std::optional<double>(confusion_at(s, l, threshold).mcc());
         },
         "mcc"},
        {&r.brier,
         [&](const auto& s, const auto& l) { return std::optional<double>(brier(s, l)); },
         "brier"},
        {&r.auroc, [](const auto& s, const auto& l) { return auroc(s, l); }, "auroc"},
        {&r.auprc, [](const auto& s, const auto& l) { return auprc(s, l); }, "auprc"},
    };
    for (auto& item : items) {
        if (!item.slot->present) continue;
        BootstrapOptions o = opt;
        o.seed = opt.seed ^ fnv1a64(item.tag);
        const BootstrapResult b =
            bootstrap_metric_ci(scores, labels, item.f, item.slot->point, o);
        item.slot->ci = b.interval;
    }
    return r;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

DeLongResult delong_test(const std::vector<double>& scores_a, const std::vector<double>& scores_b,
                         const std::vector<int>& labels) {
    if (scores_a.size() != scores_b.size() || scores_a.size() != labels.size()) {
        throw usage_error("delong_test: input sizes differ");
    }
    std::size_t pos = 0;
    for (int y : labels)
        if (y) ++pos;
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) throw data_error("delong_test: both classes required");

    // placement values via midranks (Sun & Xu fast DeLong)
    auto placements = [&](const std::vector<double>& scores, std::vector<double>& v_pos,
                          std::vector<double>& v_neg) -> double {
        std::vector<double> pos_scores, neg_scores;
        pos_scores.reserve(pos);
        neg_scores.reserve(neg);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            (labels[i] ? pos_scores : neg_scores).push_back(scores[i]);
        }
        const std::vector<double> rank_all = midranks(scores);
        const std::vector<double> rank_pos = midranks(pos_scores);
        const std::vector<double> rank_neg = midranks(neg_scores);

        v_pos.resize(pos);
        v_neg.resize(neg);
        std::size_t ip = 0, in = 0;
        double auc = 0.0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i]) {
                v_pos[ip] = (rank_all[i] - rank_pos[ip]) / static_cast<double>(neg);
                auc += rank_all[i];
                ++ip;
            } else {
                v_neg[in] = 1.0 - (rank_all[i] - rank_neg[in]) / static_cast<double>(pos);
                ++in;
            }
        }
        auc = (auc - static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0) /
              (static_cast<double>(pos) * static_cast<double>(neg));
        return auc;
    };

    std::vector<double> va_pos, va_neg, vb_pos, vb_neg;
    DeLongResult r;
    r.auc_a = placements(scores_a, va_pos, va_neg);
    r.auc_b = placements(scores_b, vb_pos, vb_neg);

    auto cov = [](const std::vector<double>& x, const std::vector<double>& y, double mx,
                  double my) {
        if (x.size() < 2) return 0.0;
        double acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - mx) * (y[i] - my);
        return acc / static_cast<double>(x.size() - 1);
    };

    const double s_pos = cov(va_pos, va_pos, r.auc_a, r.auc_a) +
                         cov(vb_pos, vb_pos, r.auc_b, r.auc_b) -
                         2.0 * cov(va_pos, vb_pos, r.auc_a, r.auc_b);
    const double s_neg = cov(va_neg, va_neg, r.auc_a, r.auc_a) +
                         cov(vb_neg, vb_neg, r.auc_b, r.auc_b) -
                         2.0 * cov(va_neg, vb_neg, r.auc_a, r.auc_b);
    r.variance = s_pos / static_cast<double>(pos) + s_neg / static_cast<double>(neg);

    if (r.variance <= 0.0) {
        r.p_value = 1.0;
        return r;
    }
    const double z = (r.auc_a - r.auc_b) / std::sqrt(r.variance);
    r.p_value = 2.0 * (1.0 - normal_cdf(std::abs(z)));
    return r;
}

} // namespace icumort::metrics
