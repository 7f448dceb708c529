#pragma once

#include "icumort/jsonio.hpp"
#include "icumort/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace icumort::vitals {

// Uniformly-sampled (or intended-uniform) signal segment. Times are seconds
// from ICU admission; sample_interval is the nominal spacing.
struct Signal {
    std::string name;
    std::vector<double> times;
    std::vector<double> values;
    double sample_interval = 0.0;

    std::size_t size() const { return values.size(); }
    bool uniform(double tol_fraction = 1e-6) const;
};

struct GeneralStats {
    double min = 0, max = 0, range = 0;
    double p5 = 0, p25 = 0, p50 = 0, p75 = 0, p95 = 0;
    double below_median_fraction = 0;
    double zero_crossings = 0; // about the mean
    bool present = false;
};

GeneralStats general_statistics(const Signal& s);

struct Complexity {
    double apen = 0, sampen = 0;
    bool apen_present = false, sampen_present = false;
};

// Approximate entropy per Pincus (self-matches included) and sample entropy
// per Richman-Moorman (self-matches excluded), Chebyshev distance, absolute
// tolerance r.
Complexity complexity(const Signal& s, int m, double r);

// Normalized autocorrelation at the requested lags; empty optional when the
// series is constant (acf undefined) or the lag is out of range.
std::vector<std::optional<double>> periodicity(const Signal& s, const std::vector<int>& lags);

enum class Direction { Below, Above };

struct EpisodeSpec {
    double threshold = 0;
    Direction direction = Direction::Below;
    double min_duration_s = 0;
    // baseline = median of out-of-episode samples (median of all samples when
    // the whole series is in-episode)
};

struct EpisodeFeatures {
    double count = 0;
    double total_length_s = 0;
    double mean_depth = 0;
    double mean_area = 0;       // excursion area relative to baseline
    double mean_onset_slope = 0; // per second, from episode start to extreme
    bool present = false;
};

EpisodeFeatures abnormal_patterns(const Signal& s, const EpisodeSpec& spec);

struct StressBurden {
    double time_s = 0;
    double area = 0; // rectangle rule per sample interval
};

StressBurden stress_burden(const Signal& s, double threshold, Direction direction);

struct SpectralFeatures {
    double peak_frequency = 0;
    double centroid = 0;
    double bandwidth = 0;
    double flatness = 0;
    double energy = 0;   // time-domain energy of the mean-removed signal
    double entropy = 0;  // normalized to [0,1] by log(#bins)
    bool present = false;
};

// Magnitude spectrum of the mean-removed signal, DC bin excluded. Throws
// data_error on non-uniform sampling (resample first).
SpectralFeatures spectral_features(const Signal& s);

struct WaveletFeatures {
    // mean / variance / std of approximation and detail coefficients,
    // levels 1 and 2
    double a1_mean = 0, a1_var = 0, a1_std = 0;
    double d1_mean = 0, d1_var = 0, d1_std = 0;
    double a2_mean = 0, a2_var = 0, a2_std = 0;
    double d2_mean = 0, d2_var = 0, d2_std = 0;
    bool present = false;
};

WaveletFeatures wavelet_features(const Signal& s);

// ---- per-stay assembly ----

struct VitalsConfig {
    double window_seconds = 300;
    int entropy_m = 2;
    double entropy_r_sd_fraction = 0.2;
    std::vector<int> acf_lags;
    double min_episode_duration_s = 0;
    struct SignalSpec {
        std::string name;
        struct Ep {
            std::string id;
            Direction direction;
            double threshold;
        };
        std::vector<Ep> episodes;
        Direction burden_direction = Direction::Below;
        double burden_threshold = 0;
    };
    std::vector<SignalSpec> signals;

    static VitalsConfig from_json(const json& doc, const std::string& origin);
    static VitalsConfig defaults();
};

// Mean-aggregate raw samples into non-overlapping windows; empty windows are
// skipped (features are computed over observed samples only).
Signal aggregate_windows(const std::string& name,
                         const std::vector<std::pair<double, double>>& samples_h,
                         double window_seconds);

struct FeatureItem {
    std::string name;
    double value = 0;
    bool present = false;
};

// Names only, fixed order; the per-stay vector below matches it exactly.
std::vector<std::string> feature_manifest(const VitalsConfig& cfg);

// Fixed-order feature vector for one stay. Absent features carry value 0 and
// present=false; the model layer turns each into a (value, indicator) pair.
std::vector<FeatureItem> featurize_vitals(
    const std::vector<Signal>& signals, const VitalsConfig& cfg);

} // namespace icumort::vitals
