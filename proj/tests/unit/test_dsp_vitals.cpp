#include "icumort/dsp.hpp"
#include "icumort/errors.hpp"
#include "icumort/rng.hpp"
#include "icumort/vitals.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace icumort;
using vitals::Direction;
using vitals::Signal;

namespace {

Signal make_signal(std::vector<double> values, double interval_s = 60.0) {
    Signal s;
    s.name = "test";
    s.sample_interval = interval_s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        s.times.push_back(static_cast<double>(i) * interval_s);
    }
    s.values = std::move(values);
    return s;
}

// Definitional oracle for ApEn (Pincus): mean log of self-inclusive template
// match fractions, lengths m and m+1.
double apen_oracle(const std::vector<double>& x, int m, double r) {
    auto phi = [&](int len) {
        const int count = static_cast<int>(x.size()) - len + 1;
        double acc = 0.0;
        for (int i = 0; i < count; ++i) {
            int matches = 0;
            for (int j = 0; j < count; ++j) {
                bool ok = true;
                for (int k = 0; k < len; ++k) {
                    if (std::abs(x[i + k] - x[j + k]) > r) {
                        ok = false;
                        break;
                    }
                }
                if (ok) ++matches;
            }
            acc += std::log(static_cast<double>(matches) / count);
        }
        return acc / count;
    };
    return phi(m) - phi(m + 1);
}

// Definitional oracle for SampEn (Richman-Moorman): pair counts without
// self-matches over the common template set.
double sampen_oracle(const std::vector<double>& x, int m, double r) {
    const int n = static_cast<int>(x.size());
    long long a = 0, b = 0;
    for (int i = 0; i < n - m; ++i) {
        for (int j = i + 1; j < n - m; ++j) {
            bool ok = true;
            for (int k = 0; k < m; ++k) {
                if (std::abs(x[i + k] - x[j + k]) > r) {
                    ok = false;
                    break;
                }
            }
            if (!ok) continue;
            ++b;
            if (std::abs(x[i + m] - x[j + m]) <= r) ++a;
        }
    }
    return -std::log(static_cast<double>(a) / static_cast<double>(b));
}

double sd_of(const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double acc = 0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / v.size());
}

} // namespace

TEST_CASE("general statistics match direct computation") {
    SUBCASE("worked example") {
        const auto g = vitals::general_statistics(make_signal({1, 2, 3, 4}));
        CHECK(g.present);
        CHECK(g.range == doctest::Approx(3.0));
        CHECK(g.p50 == doctest::Approx(2.5));
        CHECK(g.below_median_fraction == doctest::Approx(0.5));
    }
    SUBCASE("constant series") {
        const auto g = vitals::general_statistics(make_signal({5, 5, 5}));
        CHECK(g.range == 0.0);
        CHECK(g.zero_crossings == 0.0);
    }
    SUBCASE("alternating series crosses its mean three times") {
        const auto g = vitals::general_statistics(make_signal({1, -1, 1, -1}));
        CHECK(g.zero_crossings == doctest::Approx(3.0));
    }
    SUBCASE("empty signal gives an absent marker, not NaN") {
        const auto g = vitals::general_statistics(make_signal({}));
        CHECK_FALSE(g.present);
    }
}

TEST_CASE("entropies match the O(N^2) definitional oracles") {
    SUBCASE("constant series scores zero on both") {
        const auto c = vitals::complexity(make_signal(std::vector<double>(20, 3.0)), 2, 0.0);
        CHECK(c.apen == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(c.sampen == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("alternating series, m=2, r=0.2 sd") {
        std::vector<double> x;
        for (int i = 0; i < 20; ++i) x.push_back(i % 2 ? 1.0 : 0.0);
        const double r = 0.2 * sd_of(x);
        const auto c = vitals::complexity(make_signal(x), 2, r);
        REQUIRE(c.apen_present);
        CHECK(std::abs(c.apen - apen_oracle(x, 2, r)) < 1e-12);
        if (c.sampen_present) CHECK(std::abs(c.sampen - sampen_oracle(x, 2, r)) < 1e-12);
    }
    SUBCASE("100 random series agree with the oracle to 1e-12") {
        Rng rng(31);
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<double> x;
            const int n = 12 + static_cast<int>(rng.index(30));
            for (int i = 0; i < n; ++i) x.push_back(rng.gauss());
            const double r = 0.2 * sd_of(x);
            const auto c = vitals::complexity(make_signal(x), 2, r);
            REQUIRE(c.apen_present);
            CHECK(std::abs(c.apen - apen_oracle(x, 2, r)) < 1e-12);
            if (c.sampen_present) {
                CHECK(std::abs(c.sampen - sampen_oracle(x, 2, r)) < 1e-12);
            }
        }
    }
    SUBCASE("white noise is less regular than a sine of equal variance") {
        Rng rng(5);
        std::vector<double> noise, sine;
        for (int i = 0; i < 120; ++i) {
            noise.push_back(rng.gauss());
            sine.push_back(std::sqrt(2.0) * std::sin(2.0 * M_PI * i / 24.0));
        }
        const auto cn = vitals::complexity(make_signal(noise), 2, 0.2 * sd_of(noise));
        const auto cs = vitals::complexity(make_signal(sine), 2, 0.2 * sd_of(sine));
        REQUIRE(cn.sampen_present);
        REQUIRE(cs.sampen_present);
        CHECK(sampen_oracle(noise, 2, 0.2 * sd_of(noise)) == doctest::Approx(cn.sampen));
        CHECK(cn.sampen > cs.sampen);
    }
    SUBCASE("entropies with r = 0.2 sd are invariant under positive affine maps") {
        Rng rng(17);
        std::vector<double> x;
        for (int i = 0; i < 60; ++i) x.push_back(rng.gauss());
        const auto base = vitals::complexity(make_signal(x), 2, 0.2 * sd_of(x));
        std::vector<double> y;
        for (double v : x) y.push_back(3.5 * v + 11.0);
        const auto scaled = vitals::complexity(make_signal(y), 2, 0.2 * sd_of(y));
        CHECK(std::abs(base.apen - scaled.apen) < 1e-9);
        CHECK(std::abs(base.sampen - scaled.sampen) < 1e-9);
    }
    SUBCASE("too-short series is absent") {
        const auto c = vitals::complexity(make_signal({1, 2, 3}), 2, 0.5);
        CHECK_FALSE(c.apen_present);
    }
}

TEST_CASE("autocorrelation features") {
    SUBCASE("acf(0) is 1 by construction") {
        Rng rng(2);
        std::vector<double> x;
        for (int i = 0; i < 50; ++i) x.push_back(rng.gauss());
        const auto acf = vitals::periodicity(make_signal(x), {0, 1});
        REQUIRE(acf[0].has_value());
        CHECK(*acf[0] == doctest::Approx(1.0));
    }
    SUBCASE("a sine with period 10 peaks at lag 10") {
        std::vector<double> x;
        for (int i = 0; i < 100; ++i) x.push_back(std::sin(2.0 * M_PI * i / 10.0));
        std::vector<int> lags;
        for (int k = 1; k <= 15; ++k) lags.push_back(k);
        const auto acf = vitals::periodicity(make_signal(x), lags);
        int best = 0;
        for (int k = 1; k < 15; ++k) {
            if (acf[k].value() > acf[best].value()) best = k;
        }
        CHECK(lags[best] == 10);
    }
    SUBCASE("shuffled noise has small autocorrelation on average") {
        Rng rng(9);
        const int n = 400;
        std::vector<double> x;
        for (int i = 0; i < n; ++i) x.push_back(rng.gauss());
        rng.shuffle(x);
        std::vector<int> lags = {1, 2, 3, 5, 8};
        const auto acf = vitals::periodicity(make_signal(x), lags);
        double mean_abs = 0;
        for (const auto& v : acf) mean_abs += std::abs(v.value());
        mean_abs /= static_cast<double>(lags.size());
        CHECK(mean_abs < 3.0 / std::sqrt(static_cast<double>(n)));
    }
    SUBCASE("constant series has undefined acf") {
        const auto acf = vitals::periodicity(make_signal({4, 4, 4, 4}), {1});
        CHECK_FALSE(acf[0].has_value());
    }
}

TEST_CASE("abnormal pattern episodes") {
    vitals::EpisodeSpec spec;
    spec.threshold = 92;
    spec.direction = Direction::Below;

    SUBCASE("worked desaturation example") {
        const auto f = vitals::abnormal_patterns(make_signal({98, 98, 91, 90, 91, 98}), spec);
        CHECK(f.count == 1);
        CHECK(f.total_length_s == doctest::Approx(180.0));
        CHECK(f.mean_depth == doctest::Approx(8.0)); // baseline 98 minus nadir 90
    }
    SUBCASE("no samples beyond threshold means no episodes") {
        const auto f = vitals::abnormal_patterns(make_signal({97, 98, 99}), spec);
        CHECK(f.count == 0);
    }
    SUBCASE("two separated dips are two episodes") {
        const auto f =
            vitals::abnormal_patterns(make_signal({98, 90, 98, 98, 89, 88, 98}), spec);
        CHECK(f.count == 2);
    }
    SUBCASE("episode features ignore absolute timestamps") {
        Signal a = make_signal({98, 90, 90, 98});
        Signal b = a;
        for (auto& t : b.times) t += 7200.0;
        const auto fa = vitals::abnormal_patterns(a, spec);
        const auto fb = vitals::abnormal_patterns(b, spec);
        CHECK(fa.total_length_s == fb.total_length_s);
        CHECK(fa.mean_area == fb.mean_area);
        CHECK(fa.mean_onset_slope == fb.mean_onset_slope);
    }
}

TEST_CASE("stress burden integrates excursion beyond the threshold") {
    SUBCASE("worked example: one sample below") {
        const auto b = vitals::stress_burden(make_signal({98, 90, 98}), 92, Direction::Below);
        CHECK(b.time_s == doctest::Approx(60.0));
        CHECK(b.area == doctest::Approx((92.0 - 90.0) * 60.0));
    }
    SUBCASE("never beyond threshold is zero") {
        const auto b = vitals::stress_burden(make_signal({95, 96}), 92, Direction::Below);
        CHECK(b.time_s == 0.0);
        CHECK(b.area == 0.0);
    }
    SUBCASE("burden is additive over disjoint halves") {
        std::vector<double> all = {98, 90, 85, 97, 89, 99, 91, 95};
        const auto whole = vitals::stress_burden(make_signal(all), 92, Direction::Below);
        const auto left = vitals::stress_burden(
            make_signal({all.begin(), all.begin() + 4}), 92, Direction::Below);
        const auto right = vitals::stress_burden(
            make_signal({all.begin() + 4, all.end()}), 92, Direction::Below);
        CHECK(whole.time_s == doctest::Approx(left.time_s + right.time_s));
        CHECK(whole.area == doctest::Approx(left.area + right.area));
    }
}

TEST_CASE("spectral features from the mean-removed magnitude spectrum") {
    SUBCASE("a 0.1 Hz sine sampled at 1 Hz peaks at 0.1 Hz") {
        std::vector<double> x;
        for (int i = 0; i < 100; ++i) x.push_back(std::sin(2.0 * M_PI * 0.1 * i));
        const auto f = vitals::spectral_features(make_signal(x, 1.0));
        REQUIRE(f.present);
        CHECK(f.peak_frequency == doctest::Approx(0.1).epsilon(1e-9));
        // exact-bin tone: one-sided spectrum is a single line, entropy ~ 0
        CHECK(f.entropy < 1e-9);
    }
    SUBCASE("zero signal has zero energy") {
        const auto f = vitals::spectral_features(make_signal(std::vector<double>(32, 0.0)));
        CHECK(f.energy == 0.0);
    }
    SUBCASE("Parseval: spectral energy equals time-domain energy (1e-9 relative)") {
        Rng rng(12);
        for (std::size_t n : {16u, 25u, 64u, 100u, 128u, 288u}) {
            std::vector<double> x;
            for (std::size_t i = 0; i < n; ++i) x.push_back(rng.gauss(0, 3));
            const auto f = vitals::spectral_features(make_signal(x, 5.0));
            const double mean = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
            double energy = 0;
            for (double v : x) energy += (v - mean) * (v - mean);
            CHECK(std::abs(f.energy - energy) <= 1e-9 * std::max(1.0, energy));
        }
    }
    SUBCASE("non-uniform sampling demands a resample") {
        Signal s = make_signal({1, 2, 3, 4, 5, 6, 7, 8});
        s.times[3] += 20.0;
        CHECK_THROWS_AS(vitals::spectral_features(s), data_error);
    }
}

TEST_CASE("db4 wavelet features and reconstruction") {
    SUBCASE("constant signal: details vanish, level-1 approximation mean is c*sqrt(2)") {
        const double c = 7.25;
        const auto f = vitals::wavelet_features(make_signal(std::vector<double>(32, c)));
        REQUIRE(f.present);
        CHECK(std::abs(f.d1_mean) < 1e-9);
        CHECK(std::abs(f.d2_mean) < 1e-9);
        CHECK(f.d1_std < 1e-9);
        CHECK(f.a1_mean == doctest::Approx(c * std::sqrt(2.0)).epsilon(1e-12));
    }
    SUBCASE("zero signal gives all-zero features") {
        const auto f = vitals::wavelet_features(make_signal(std::vector<double>(16, 0.0)));
        CHECK(f.a1_mean == 0.0);
        CHECK(f.d2_var == 0.0);
    }
    SUBCASE("decompose-then-reconstruct error under 1e-9 for random signals") {
        Rng rng(77);
        for (std::size_t n = 16; n <= 256; n += 13) {
            std::vector<double> x;
            for (std::size_t i = 0; i < n; ++i) x.push_back(rng.gauss(0, 5));
            const auto d = dsp::wavedec2_db4(x);
            const auto back = dsp::waverec2_db4(d, n);
            double max_err = 0;
            for (std::size_t i = 0; i < n; ++i) max_err = std::max(max_err, std::abs(back[i] - x[i]));
            CHECK(max_err < 1e-9);
        }
    }
    SUBCASE("level-1 analysis matches a direct convolution+downsample oracle") {
        Rng rng(41);
        std::vector<double> x;
        for (int i = 0; i < 37; ++i) x.push_back(rng.gauss());
        const auto bands = dsp::dwt_db4(x);

        // oracle: explicit symmetric extension, then correlate and keep odd
        // phases; written independently of the library's index arithmetic
        const double* h = dsp::db4_rec_lo();
        std::vector<double> dec_lo(8), dec_hi(8);
        for (int k = 0; k < 8; ++k) {
            dec_lo[k] = h[7 - k];
            dec_hi[k] = (k % 2 == 0 ? -1.0 : 1.0) * h[k];
        }
        auto ext = [&](long long e) {
            const long long n = static_cast<long long>(x.size());
            while (e < 0 || e >= n) {
                if (e < 0) e = -e - 1;
                if (e >= n) e = 2 * n - e - 1;
            }
            return x[static_cast<std::size_t>(e)];
        };
        const std::size_t out_len = (x.size() + 7) / 2;
        REQUIRE(bands.approx.size() == out_len);
        for (std::size_t i = 0; i < out_len; ++i) {
            double a = 0, d = 0;
            for (int k = 0; k < 8; ++k) {
                a += dec_lo[k] * ext(2 * static_cast<long long>(i) + 1 - k);
                d += dec_hi[k] * ext(2 * static_cast<long long>(i) + 1 - k);
            }
            CHECK(bands.approx[i] == doctest::Approx(a).epsilon(1e-12));
            CHECK(bands.detail[i] == doctest::Approx(d).epsilon(1e-12));
        }
    }
    SUBCASE("too-short input is absent") {
        CHECK_FALSE(vitals::wavelet_features(make_signal({1, 2, 3})).present);
    }
}

TEST_CASE("per-stay vitals featurization") {
    const auto cfg = vitals::VitalsConfig::defaults();
    const auto manifest = vitals::feature_manifest(cfg);

    SUBCASE("feature vector length follows the manifest") {
        const auto items = vitals::featurize_vitals({}, cfg);
        CHECK(items.size() == manifest.size());
        for (const auto& item : items) CHECK_FALSE(item.present); // no signals at all
    }
    SUBCASE("identical input twice gives identical vectors, all finite") {
        std::vector<std::pair<double, double>> samples;
        Rng rng(3);
        for (int i = 0; i < 288; ++i) {
            samples.emplace_back(i * 5.0 / 60.0, 96.0 + rng.gauss());
        }
        const auto sig = vitals::aggregate_windows("SpO2", samples, cfg.window_seconds);
        const auto a = vitals::featurize_vitals({sig}, cfg);
        const auto b = vitals::featurize_vitals({sig}, cfg);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].value == b[i].value);
            CHECK(a[i].present == b[i].present);
            CHECK(std::isfinite(a[i].value));
        }
    }
}
