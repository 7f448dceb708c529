#include "icumort/vitals.hpp"
#include "icumort/defaults.hpp"
#include "icumort/dsp.hpp"
#include "icumort/errors.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace icumort::vitals {

namespace {

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double population_sd(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    const double m = mean_of(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size()));
}

// linear-interpolation percentile over a sorted copy
double percentile(std::vector<double> sorted, double q) {
    const std::size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double pos = q * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= n) return sorted[n - 1];
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return percentile(std::move(v), 0.5);
}

} // namespace

bool Signal::uniform(double tol_fraction) const {
    if (times.size() < 2) return true;
    const double tol = std::max(1e-12, tol_fraction * sample_interval);
    for (std::size_t i = 1; i < times.size(); ++i) {
        if (std::abs(times[i] - times[i - 1] - sample_interval) > tol) return false;
    }
    return true;
}

GeneralStats general_statistics(const Signal& s) {
    GeneralStats g;
    if (s.values.empty()) return g;
    std::vector<double> sorted = s.values;
    std::sort(sorted.begin(), sorted.end());
    g.min = sorted.front();
    g.max = sorted.back();
    g.range = g.max - g.min;
    g.p5 = percentile(sorted, 0.05);
    g.p25 = percentile(sorted, 0.25);
    g.p50 = percentile(sorted, 0.50);
    g.p75 = percentile(sorted, 0.75);
    g.p95 = percentile(sorted, 0.95);

    std::size_t below = 0;
    for (double v : s.values) {
        if (v < g.p50) ++below;
    }
    g.below_median_fraction = static_cast<double>(below) / static_cast<double>(s.values.size());

    const double m = mean_of(s.values);
    int last_sign = 0;
    std::size_t crossings = 0;
    for (double v : s.values) {
        const int sign = v > m ? 1 : (v < m ? -1 : 0);
        if (sign == 0) continue; // samples on the mean carry the previous sign
        if (last_sign != 0 && sign != last_sign) ++crossings;
        last_sign = sign;
    }
    g.zero_crossings = static_cast<double>(crossings);
    g.present = true;
    return g;
}

Complexity complexity(const Signal& s, int m, double r) {
    Complexity out;
    const int n = static_cast<int>(s.values.size());
    if (m < 1 || r < 0.0 || n < m + 2) return out;
    const std::vector<double>& x = s.values;

    auto cheb_match = [&](int i, int j, int len) {
        for (int k = 0; k < len; ++k) {
            if (std::abs(x[i + k] - x[j + k]) > r) return false;
        }
        return true;
    };

    // ApEn (Pincus): self-matches included, template counts of lengths m, m+1
    auto phi = [&](int len) {
        const int count = n - len + 1;
        double acc = 0.0;
        for (int i = 0; i < count; ++i) {
            int matches = 0;
            for (int j = 0; j < count; ++j) {
                if (cheb_match(i, j, len)) ++matches;
            }
            acc += std::log(static_cast<double>(matches) / static_cast<double>(count));
        }
        return acc / static_cast<double>(count);
    };
    out.apen = phi(m) - phi(m + 1);
    out.apen_present = true;

    // SampEn (Richman-Moorman): i < j, both limited to n - m templates so the
    // m and m+1 counts use the same template set
    long long b_count = 0, a_count = 0;
    for (int i = 0; i < n - m; ++i) {
        for (int j = i + 1; j < n - m; ++j) {
            if (cheb_match(i, j, m)) {
                ++b_count;
                if (std::abs(x[i + m] - x[j + m]) <= r) ++a_count;
            }
        }
    }
    if (b_count > 0 && a_count > 0) {
        out.sampen = -std::log(static_cast<double>(a_count) / static_cast<double>(b_count));
        out.sampen_present = true;
    } else if (b_count > 0 && a_count == 0) {
        out.sampen_present = false; // undefined: no m+1 matches
    }
    return out;
}

std::vector<std::optional<double>> periodicity(const Signal& s, const std::vector<int>& lags) {
    std::vector<std::optional<double>> out(lags.size());
    const int n = static_cast<int>(s.values.size());
    if (n == 0) return out;
    const double m = mean_of(s.values);
    double denom = 0.0;
    for (double v : s.values) denom += (v - m) * (v - m);
    if (denom <= 0.0) return out; // constant series: acf undefined

    for (std::size_t idx = 0; idx < lags.size(); ++idx) {
        const int k = lags[idx];
        if (k < 0 || k >= n) continue;
        double num = 0.0;
        for (int t = 0; t + k < n; ++t) {
            num += (s.values[t] - m) * (s.values[t + k] - m);
        }
        out[idx] = num / denom;
    }
    return out;
}

EpisodeFeatures abnormal_patterns(const Signal& s, const EpisodeSpec& spec) {
    EpisodeFeatures f;
    if (s.values.empty() || s.sample_interval <= 0.0) return f;
    f.present = true;

    const bool below = spec.direction == Direction::Below;
    auto in_episode = [&](double v) { return below ? v < spec.threshold : v > spec.threshold; };

    std::vector<double> outside;
    for (double v : s.values) {
        if (!in_episode(v)) outside.push_back(v);
    }
    const double baseline = outside.empty() ? median_of(s.values) : median_of(outside);

    const double dt = s.sample_interval;
    std::size_t i = 0;
    double depth_sum = 0, area_sum = 0, slope_sum = 0;
    while (i < s.values.size()) {
        if (!in_episode(s.values[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < s.values.size() && in_episode(s.values[j])) ++j;
        const std::size_t run = j - i;
        const double length_s = static_cast<double>(run) * dt;
        if (length_s >= spec.min_duration_s) {
            // extreme value and its offset within the run
            std::size_t ext_idx = i;
            for (std::size_t k = i; k < j; ++k) {
                const bool more_extreme =
                    below ? s.values[k] < s.values[ext_idx] : s.values[k] > s.values[ext_idx];
                if (more_extreme) ext_idx = k;
            }
            const double extreme = s.values[ext_idx];
            const double depth = below ? baseline - extreme : extreme - baseline;
            double area = 0.0;
            for (std::size_t k = i; k < j; ++k) {
                area += (below ? baseline - s.values[k] : s.values[k] - baseline) * dt;
            }
            const double t_to_ext = static_cast<double>(ext_idx - i) * dt;
            const double slope =
                t_to_ext > 0.0 ? std::abs(s.values[i] - extreme) / t_to_ext : 0.0;

            f.count += 1;
            f.total_length_s += length_s;
            depth_sum += depth;
            area_sum += area;
            slope_sum += slope;
        }
        i = j;
    }
    if (f.count > 0) {
        f.mean_depth = depth_sum / f.count;
        f.mean_area = area_sum / f.count;
        f.mean_onset_slope = slope_sum / f.count;
    }
    return f;
}

StressBurden stress_burden(const Signal& s, double threshold, Direction direction) {
    StressBurden b;
    const double dt = s.sample_interval;
    for (double v : s.values) {
        const double excess = direction == Direction::Below ? threshold - v : v - threshold;
        if (excess > 0.0) {
            b.time_s += dt;
            b.area += excess * dt;
        }
    }
    return b;
}

SpectralFeatures spectral_features(const Signal& s) {
    SpectralFeatures f;
    const std::size_t n = s.values.size();
    if (n < 8) return f;
    if (!s.uniform()) {
        throw data_error(fmt::format(
            "spectral_features: signal '{}' is not uniformly sampled; resample first", s.name));
    }
    const double m = mean_of(s.values);
    std::vector<double> centered(n);
    for (std::size_t i = 0; i < n; ++i) centered[i] = s.values[i] - m;

    const auto spectrum = dsp::dft(centered);
    const double dt = s.sample_interval;

    // full-spectrum energy excluding DC equals the time-domain energy
    double energy = 0.0;
    for (std::size_t k = 1; k < n; ++k) energy += std::norm(spectrum[k]);
    energy /= static_cast<double>(n);
    f.energy = energy;

    const std::size_t nbins = n / 2;
    std::vector<double> power(nbins);
    double total = 0.0;
    for (std::size_t k = 1; k <= nbins; ++k) {
        power[k - 1] = std::norm(spectrum[k]);
        total += power[k - 1];
    }
    f.present = true;
    if (total <= 0.0) return f; // flat signal: all spectral features zero

    std::size_t peak = 0;
    for (std::size_t k = 1; k < nbins; ++k) {
        if (power[k] > power[peak]) peak = k;
    }
    auto freq = [&](std::size_t bin0) {
        return static_cast<double>(bin0 + 1) / (static_cast<double>(n) * dt);
    };
    f.peak_frequency = freq(peak);

    double centroid = 0.0;
    for (std::size_t k = 0; k < nbins; ++k) centroid += freq(k) * power[k];
    centroid /= total;
    f.centroid = centroid;

    double bw = 0.0;
    for (std::size_t k = 0; k < nbins; ++k) {
        bw += (freq(k) - centroid) * (freq(k) - centroid) * power[k];
    }
    f.bandwidth = std::sqrt(bw / total);

    double log_acc = 0.0;
    bool any_zero = false;
    for (std::size_t k = 0; k < nbins; ++k) {
        if (power[k] <= 0.0) {
            any_zero = true;
            break;
        }
        log_acc += std::log(power[k]);
    }
    const double amean = total / static_cast<double>(nbins);
    f.flatness = any_zero ? 0.0 : std::exp(log_acc / static_cast<double>(nbins)) / amean;

    if (nbins > 1) {
        double h = 0.0;
        for (std::size_t k = 0; k < nbins; ++k) {
            const double p = power[k] / total;
            if (p > 0.0) h -= p * std::log(p);
        }
        f.entropy = h / std::log(static_cast<double>(nbins));
    }
    return f;
}

WaveletFeatures wavelet_features(const Signal& s) {
    WaveletFeatures f;
    if (s.values.size() < dsp::kDb4Taps) return f;
    const auto d = dsp::wavedec2_db4(s.values);
    auto fill = [](const std::vector<double>& band, double& mean, double& var, double& sd) {
        mean = mean_of(band);
        double acc = 0.0;
        for (double v : band) acc += (v - mean) * (v - mean);
        var = band.empty() ? 0.0 : acc / static_cast<double>(band.size());
        sd = std::sqrt(var);
    };
    fill(d.approx1, f.a1_mean, f.a1_var, f.a1_std);
    fill(d.detail1, f.d1_mean, f.d1_var, f.d1_std);
    fill(d.approx2, f.a2_mean, f.a2_var, f.a2_std);
    fill(d.detail2, f.d2_mean, f.d2_var, f.d2_std);
    f.present = true;
    return f;
}

VitalsConfig VitalsConfig::from_json(const json& doc, const std::string& origin) {
    VitalsConfig c;
    c.window_seconds = doc.value("window_seconds", 300.0);
    c.entropy_m = doc.value("entropy_m", 2);
    c.entropy_r_sd_fraction = doc.value("entropy_r_sd_fraction", 0.2);
    c.min_episode_duration_s = doc.value("min_episode_duration_s", 0.0);
    if (doc.contains("autocorrelation_lags")) {
        for (const auto& l : doc.at("autocorrelation_lags")) c.acf_lags.push_back(l.get<int>());
    }
    auto dir_of = [&](const std::string& d) {
        if (d == "below") return Direction::Below;
        if (d == "above") return Direction::Above;
        throw config_error(fmt::format("{}: bad direction '{}'", origin, d));
    };
    for (const auto& sig : doc.at("signals")) {
        SignalSpec spec;
        spec.name = sig.at("name").get<std::string>();
        for (const auto& ep : sig.value("episodes", json::array())) {
            spec.episodes.push_back({ep.at("id").get<std::string>(),
                                     dir_of(ep.at("direction").get<std::string>()),
                                     ep.at("threshold").get<double>()});
        }
        if (sig.contains("burden")) {
            spec.burden_direction = dir_of(sig.at("burden").at("direction").get<std::string>());
            spec.burden_threshold = sig.at("burden").at("threshold").get<double>();
        }
        c.signals.push_back(std::move(spec));
    }
    return c;
}

VitalsConfig VitalsConfig::defaults() {
    return from_json(parse_json_text(std::string(defaults::vitals_config_json()), "vitals_config"),
                     "vitals_config");
}

Signal aggregate_windows(const std::string& name,
                         const std::vector<std::pair<double, double>>& samples_h,
                         double window_seconds) {
    Signal s;
    s.name = name;
    s.sample_interval = window_seconds;
    if (samples_h.empty()) return s;

    const double window_h = window_seconds / 3600.0;
    std::map<long long, std::pair<double, int>> acc;
    for (const auto& [t_h, v] : samples_h) {
        const long long w = static_cast<long long>(std::floor(t_h / window_h));
        auto& slot = acc[w];
        slot.first += v;
        slot.second += 1;
    }
    for (const auto& [w, slot] : acc) {
        s.times.push_back((static_cast<double>(w) + 0.5) * window_seconds);
        s.values.push_back(slot.first / slot.second);
    }
    return s;
}

std::vector<std::string> feature_manifest(const VitalsConfig& cfg) {
    std::vector<std::string> names;
    for (const auto& sig : cfg.signals) {
        auto add = [&](const std::string& suffix) { names.push_back(sig.name + "." + suffix); };
        for (const char* s : {"stat.min", "stat.max", "stat.range", "stat.p5", "stat.p25",
                              "stat.p50", "stat.p75", "stat.p95", "stat.below_median",
                              "stat.zero_crossings"}) {
            add(s);
        }
        add("cx.apen");
        add("cx.sampen");
        for (int lag : cfg.acf_lags) add(fmt::format("acf.lag{}", lag));
        for (const auto& ep : sig.episodes) {
            for (const char* s : {"count", "total_length_s", "mean_depth", "mean_area",
                                  "mean_onset_slope"}) {
                add(fmt::format("ep.{}.{}", ep.id, s));
            }
        }
        add("burden.time_s");
        add("burden.area");
        for (const char* s : {"spec.peak_frequency", "spec.centroid", "spec.bandwidth",
                              "spec.flatness", "spec.energy", "spec.entropy"}) {
            add(s);
        }
        for (const char* s : {"wav.a1_mean", "wav.a1_var", "wav.a1_std", "wav.d1_mean",
                              "wav.d1_var", "wav.d1_std", "wav.a2_mean", "wav.a2_var",
                              "wav.a2_std", "wav.d2_mean", "wav.d2_var", "wav.d2_std"}) {
            add(s);
        }
    }
    return names;
}

std::vector<FeatureItem> featurize_vitals(const std::vector<Signal>& signals,
                                          const VitalsConfig& cfg) {
    std::vector<FeatureItem> out;
    const auto names = feature_manifest(cfg);
    out.reserve(names.size());
    std::size_t cursor = 0;
    auto push = [&](double value, bool present) {
        FeatureItem item;
        item.name = names[cursor++];
        item.value = present && std::isfinite(value) ? value : 0.0;
        item.present = present && std::isfinite(value);
        out.push_back(std::move(item));
    };

    for (const auto& spec : cfg.signals) {
        const Signal* sig = nullptr;
        for (const auto& s : signals) {
            if (s.name == spec.name) {
                sig = &s;
                break;
            }
        }
        Signal empty;
        empty.name = spec.name;
        empty.sample_interval = cfg.window_seconds;
        const Signal& s = sig ? *sig : empty;

        const GeneralStats g = general_statistics(s);
        push(g.min, g.present);
        push(g.max, g.present);
        push(g.range, g.present);
        push(g.p5, g.present);
        push(g.p25, g.present);
        push(g.p50, g.present);
        push(g.p75, g.present);
        push(g.p95, g.present);
        push(g.below_median_fraction, g.present);
        push(g.zero_crossings, g.present);

        const double sd = population_sd(s.values);
        const Complexity cx = complexity(s, cfg.entropy_m, cfg.entropy_r_sd_fraction * sd);
        push(cx.apen, cx.apen_present);
        push(cx.sampen, cx.sampen_present);

        const auto acf = periodicity(s, cfg.acf_lags);
        for (const auto& v : acf) push(v.value_or(0.0), v.has_value());

        for (const auto& ep : spec.episodes) {
            EpisodeSpec es;
            es.threshold = ep.threshold;
            es.direction = ep.direction;
            es.min_duration_s = cfg.min_episode_duration_s;
            const EpisodeFeatures f = abnormal_patterns(s, es);
            push(f.count, f.present);
            push(f.total_length_s, f.present);
            push(f.mean_depth, f.present);
            push(f.mean_area, f.present);
            push(f.mean_onset_slope, f.present);
        }

        const bool has_samples = s.size() > 0;
        const StressBurden b = stress_burden(s, spec.burden_threshold, spec.burden_direction);
        push(b.time_s, has_samples);
        push(b.area, has_samples);

        // spectral/wavelet need a contiguous uniform segment
        const bool uniform_ok = has_samples && s.uniform() && s.size() >= 8;
        SpectralFeatures sp;
        if (uniform_ok) sp = spectral_features(s);
        push(sp.peak_frequency, sp.present);
        push(sp.centroid, sp.present);
        push(sp.bandwidth, sp.present);
        push(sp.flatness, sp.present);
        push(sp.energy, sp.present);
        push(sp.entropy, sp.present);

        WaveletFeatures wf;
        if (uniform_ok) wf = wavelet_features(s);
        push(wf.a1_mean, wf.present);
        push(wf.a1_var, wf.present);
        push(wf.a1_std, wf.present);
        push(wf.d1_mean, wf.present);
        push(wf.d1_var, wf.present);
        push(wf.d1_std, wf.present);
        push(wf.a2_mean, wf.present);
        push(wf.a2_var, wf.present);
        push(wf.a2_std, wf.present);
        push(wf.d2_mean, wf.present);
        push(wf.d2_var, wf.present);
        push(wf.d2_std, wf.present);
    }
    return out;
}

} // namespace icumort::vitals
