#include "icumort/evaluation.hpp"
#include "icumort/errors.hpp"
#include "icumort/rng.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <array>
#include <cmath>

namespace icumort::eval {

json Split::to_json() const {
    json j;
    j["train"] = train;
    j["val"] = val;
    j["test"] = test;
    j["stratification"] = stratification_report;
    return j;
}

Split Split::from_json(const json& j) {
    Split s;
    s.train = j.at("train").get<std::vector<std::string>>();
    s.val = j.at("val").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    if (j.contains("stratification")) s.stratification_report = j.at("stratification");
    return s;
}

namespace {

// largest-remainder allocation of n items to the three splits
std::array<std::size_t, 3> largest_remainder(std::size_t n, const SplitFractions& f) {
    const double fr[3] = {f.train, f.val, f.test};
    std::array<std::size_t, 3> out{};
    double remainders[3];
    std::size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
        const double exact = fr[k] * static_cast<double>(n);
        out[k] = static_cast<std::size_t>(std::floor(exact));
        remainders[k] = exact - std::floor(exact);
        assigned += out[k];
    }
    // distribute leftovers by descending remainder; ties go in split order
    while (assigned < n) {
        int best = 0;
        for (int k = 1; k < 3; ++k) {
            if (remainders[k] > remainders[best] + 1e-12) best = k;
        }
        out[best] += 1;
        remainders[best] = -1.0;
        ++assigned;
    }
    return out;
}

std::string subgroup_key(const StayRecord& s) {
    return fmt::format("static={},timevariant={},notes={}", s.modality_flags.has_static ? 1 : 0,
                       s.modality_flags.has_timevariant ? 1 : 0,
                       s.modality_flags.has_notes ? 1 : 0);
}

} // namespace

Split stratified_split(const std::vector<StayRecord>& stays, const SplitFractions& fractions,
                       std::uint64_t seed) {
    if (stays.empty()) throw data_error("stratified_split: empty cohort");
    Split split;
    json report = json::object();

    std::map<std::string, std::vector<std::size_t>> subgroups;
    for (std::size_t i = 0; i < stays.size(); ++i) {
        subgroups[subgroup_key(stays[i])].push_back(i);
    }

    Rng rng(seed);
    for (auto& [key, members] : subgroups) {
        std::vector<std::size_t> positives, negatives;
        for (std::size_t i : members) {
            (stays[i].died_inpatient ? positives : negatives).push_back(i);
        }
        rng.fork(key + ":pos").shuffle(positives);
        rng.fork(key + ":neg").shuffle(negatives);

        json sub;
        sub["n"] = members.size();
        sub["n_pos"] = positives.size();

        if (members.size() < 3) {
            for (std::size_t i : members) split.train.push_back(stays[i].stay_id);
            sub["warning"] = "too small to stratify; assigned to train";
            report[key] = sub;
            continue;
        }

        auto allocate = [&](const std::vector<std::size_t>& pool) {
            const auto counts = largest_remainder(pool.size(), fractions);
            std::size_t cursor = 0;
            for (std::size_t k = 0; k < counts[0]; ++k) split.train.push_back(stays[pool[cursor++]].stay_id);
            for (std::size_t k = 0; k < counts[1]; ++k) split.val.push_back(stays[pool[cursor++]].stay_id);
            for (std::size_t k = 0; k < counts[2]; ++k) split.test.push_back(stays[pool[cursor++]].stay_id);
            return counts;
        };
        const auto pos_counts = allocate(positives);
        const auto neg_counts = allocate(negatives);
        sub["train"] = pos_counts[0] + neg_counts[0];
        sub["val"] = pos_counts[1] + neg_counts[1];
        sub["test"] = pos_counts[2] + neg_counts[2];
        sub["train_pos"] = pos_counts[0];
        sub["val_pos"] = pos_counts[1];
        sub["test_pos"] = pos_counts[2];
        report[key] = sub;
    }

    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    std::sort(split.test.begin(), split.test.end());
    split.stratification_report = std::move(report);
    return split;
}

std::string age_bucket(int age) {
    if (age <= 44) return "<=44";
    if (age <= 60) return "45-60";
    if (age <= 75) return "61-75";
    return ">=76";
}

namespace {

json group_rates_json(const GroupRates& g) {
    json j;
    j["n"] = g.n;
    j["n_pos"] = g.n_pos;
    if (g.tpr_present) {
        j["tpr"] = g.tpr;
        j["fnr"] = g.fnr;
    }
    if (g.tnr_present) {
        j["tnr"] = g.tnr;
        j["fpr"] = g.fpr;
    }
    j["tp"] = g.confusion.tp;
    j["fp"] = g.confusion.fp;
    j["tn"] = g.confusion.tn;
    j["fn"] = g.confusion.fn;
    return j;
}

} // namespace

json BiasAudit::to_json() const {
    json j;
    j["threshold"] = threshold;
    json dims = json::object();
    for (const auto& [dim, by_group] : groups) {
        json g = json::object();
        for (const auto& [name, rates] : by_group) {
            g[name] = group_rates_json(rates);
        }
        dims[dim] = g;
    }
    j["groups"] = dims;
    return j;
}

BiasAudit bias_audit(const std::vector<double>& scores, const std::vector<int>& labels,
                     const std::vector<const StayRecord*>& stays, double threshold) {
    if (scores.size() != labels.size() || scores.size() != stays.size()) {
        throw usage_error("bias_audit: input sizes differ");
    }
    BiasAudit audit;
    audit.threshold = threshold;

    auto accumulate = [&](const std::string& dim, const std::string& group, std::size_t i) {
        GroupRates& g = audit.groups[dim][group];
        const bool pred = scores[i] >= threshold;
        const bool truth = labels[i] != 0;
        if (pred && truth) ++g.confusion.tp;
        else if (pred && !truth) ++g.confusion.fp;
        else if (!pred && truth) ++g.confusion.fn;
        else ++g.confusion.tn;
        ++g.n;
        if (truth) ++g.n_pos;
    };

    for (std::size_t i = 0; i < scores.size(); ++i) {
        accumulate("race", stays[i]->race.empty() ? "Unknown" : stays[i]->race, i);
        accumulate("ethnicity", stays[i]->ethnicity.empty() ? "Unknown" : stays[i]->ethnicity, i);
        accumulate("sex", stays[i]->sex.empty() ? "Unknown" : stays[i]->sex, i);
        accumulate("age_bucket", age_bucket(stays[i]->age), i);
    }

    for (auto& [dim, by_group] : audit.groups) {
        for (auto& [name, g] : by_group) {
            const auto& c = g.confusion;
            if (c.tp + c.fn > 0) {
                g.tpr = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
                g.fnr = static_cast<double>(c.fn) / static_cast<double>(c.tp + c.fn);
                g.tpr_present = true;
            }
            if (c.tn + c.fp > 0) {
                g.tnr = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
                g.fpr = static_cast<double>(c.fp) / static_cast<double>(c.tn + c.fp);
                g.tnr_present = true;
            }
        }
    }
    return audit;
}

GroupReport evaluate_by_group(const std::vector<double>& scores, const std::vector<int>& labels,
                              const std::vector<std::string>& group_keys, double threshold,
                              std::size_t min_n) {
    if (scores.size() != labels.size() || scores.size() != group_keys.size()) {
        throw usage_error("evaluate_by_group: input sizes differ");
    }
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < group_keys.size(); ++i) members[group_keys[i]].push_back(i);

    GroupReport out;
    for (const auto& [group, idx] : members) {
        if (idx.size() < min_n) {
            out.skipped_small.push_back(group);
            continue;
        }
        std::vector<double> s;
        std::vector<int> l;
        s.reserve(idx.size());
        l.reserve(idx.size());
        for (std::size_t i : idx) {
            s.push_back(scores[i]);
            l.push_back(labels[i]);
        }
        out.by_group.emplace(group, metrics::compute_metrics(s, l, threshold));
    }
    return out;
}

json HorizonReports::to_json() const {
    json j;
    j["interval1_24h_48h"] = interval1.to_json();
    j["interval2_48h_192h"] = interval2.to_json();
    j["interval3_after_192h"] = interval3.to_json();
    j["deaths"] = {{"interval1", deaths1}, {"interval2", deaths2}, {"interval3", deaths3}};
    return j;
}

HorizonReports evaluate_by_horizon(const std::vector<double>& scores,
                                   const std::vector<const StayRecord*>& stays, double threshold) {
    if (scores.size() != stays.size()) throw usage_error("evaluate_by_horizon: size mismatch");

    auto interval_of = [](const StayRecord& s) -> int {
        if (!s.died_inpatient || !s.time_to_death_hours) return 0; // survivor
        const double t = *s.time_to_death_hours;
        if (t <= 48.0) return 1;
        if (t <= 192.0) return 2;
        return 3;
    };

    HorizonReports out;
    for (int interval = 1; interval <= 3; ++interval) {
        std::vector<double> s;
        std::vector<int> l;
        std::size_t deaths = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const int k = interval_of(*stays[i]);
            if (k == 0) {
                s.push_back(scores[i]);
                l.push_back(0);
            } else if (k == interval) {
                s.push_back(scores[i]);
                l.push_back(1);
                ++deaths;
            }
        }
        metrics::MetricReport r = metrics::compute_metrics(s, l, threshold);
        switch (interval) {
        case 1:
            out.interval1 = r;
            out.deaths1 = deaths;
            break;
        case 2:
            out.interval2 = r;
            out.deaths2 = deaths;
            break;
        default:
            out.interval3 = r;
            out.deaths3 = deaths;
            break;
        }
    }
    return out;
}

json DisagreementReport::to_json() const {
    json j;
    j["n_disagreements"] = n_disagreements;
    j["model_on_disagreements"] = model_on_disagreements.to_json();
    j["reference_on_disagreements"] = reference_on_disagreements.to_json();
    j["top_fraction_n"] = top_fraction_n;
    j["model_on_top"] = model_on_top.to_json();
    j["reference_on_top"] = reference_on_top.to_json();
    return j;
}

DisagreementReport disagreement_analysis(const std::vector<double>& scores_model,
                                         const std::vector<double>& scores_ref,
                                         const std::vector<int>& labels, double threshold_model,
                                         double threshold_ref, double top_fraction) {
    if (scores_model.size() != scores_ref.size() || scores_model.size() != labels.size()) {
        throw usage_error("disagreement_analysis: input sizes differ");
    }
    DisagreementReport rep;
    const std::size_t n = labels.size();

    std::vector<std::size_t> disagreements;
    for (std::size_t i = 0; i < n; ++i) {
        const bool pm = scores_model[i] >= threshold_model;
        const bool pr = scores_ref[i] >= threshold_ref;
        if (pm != pr) disagreements.push_back(i);
    }
    rep.n_disagreements = disagreements.size();

    auto subset_metrics = [&](const std::vector<std::size_t>& idx,
                              const std::vector<double>& scores, double threshold) {
        std::vector<double> s;
        std::vector<int> l;
        for (std::size_t i : idx) {
            s.push_back(scores[i]);
            l.push_back(labels[i]);
        }
        return metrics::compute_metrics(s, l, threshold);
    };

    if (!disagreements.empty()) {
        rep.model_on_disagreements = subset_metrics(disagreements, scores_model, threshold_model);
        rep.reference_on_disagreements = subset_metrics(disagreements, scores_ref, threshold_ref);
    }

    // top-|delta probability| fraction over all cases; the reference scorer is
    // min-max rescaled so the difference is comparable
    if (n > 0 && top_fraction > 0.0) {
        double lo = scores_ref[0], hi = scores_ref[0];
        for (double v : scores_ref) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const double span = hi > lo ? hi - lo : 1.0;
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        std::vector<double> delta(n);
        for (std::size_t i = 0; i < n; ++i) {
            delta[i] = std::abs(scores_model[i] - (scores_ref[i] - lo) / span);
        }
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (delta[a] != delta[b]) return delta[a] > delta[b];
            return a < b;
        });
        const std::size_t take =
            static_cast<std::size_t>(std::ceil(top_fraction * static_cast<double>(n)));
        order.resize(std::min(take, n));
        rep.top_fraction_n = order.size();
        rep.model_on_top = subset_metrics(order, scores_model, threshold_model);
        rep.reference_on_top = subset_metrics(order, scores_ref, threshold_ref);
    }
    return rep;
}

} // namespace icumort::eval
