#include "icumort/dsp.hpp"
#include "icumort/errors.hpp"

#include <cmath>

namespace icumort::dsp {

namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_inplace(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

// db4 scaling filter (reconstruction lowpass), standard orthonormal values
constexpr double kRecLo[kDb4Taps] = {
    0.23037781330885523,  0.7148465705525415,   0.6308807679295904,
    -0.02798376941698385, -0.18703481171888114, 0.030841381835986965,
    0.032883011666982945, -0.010597401784997278};

// half-sample symmetric extension: x[-1] = x[0], x[n] = x[n-1], repeated
double ext_at(const std::vector<double>& x, long long e) {
    const long long n = static_cast<long long>(x.size());
    while (e < 0 || e >= n) {
        if (e < 0) e = -e - 1;
        if (e >= n) e = 2 * n - e - 1;
    }
    return x[static_cast<std::size_t>(e)];
}

} // namespace

const double* db4_rec_lo() { return kRecLo; }

std::vector<std::complex<double>> dft(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::complex<double>> out(n);
    if (n == 0) return out;
    if (is_pow2(n)) {
        for (std::size_t i = 0; i < n; ++i) out[i] = {x[i], 0.0};
        fft_inplace(out);
        return out;
    }
    for (std::size_t k = 0; k < n; ++k) {
        std::complex<double> acc(0.0, 0.0);
        const double w = -2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n);
        for (std::size_t t = 0; t < n; ++t) {
            acc += x[t] * std::complex<double>(std::cos(w * static_cast<double>(t)),
                                               std::sin(w * static_cast<double>(t)));
        }
        out[k] = acc;
    }
    return out;
}

WaveletBands dwt_db4(const std::vector<double>& x) {
    if (x.empty()) throw data_error("dwt_db4: empty input");
    const std::size_t n = x.size();
    const std::size_t out_len = (n + kDb4Taps - 1) / 2;
    const long long F = static_cast<long long>(kDb4Taps);

    // analysis filters from the scaling filter:
    //   dec_lo[k] = rec_lo[F-1-k], dec_hi[k] = (-1)^(k+1) rec_lo[k]
    double dec_lo[kDb4Taps], dec_hi[kDb4Taps];
    for (std::size_t k = 0; k < kDb4Taps; ++k) {
        dec_lo[k] = kRecLo[kDb4Taps - 1 - k];
        dec_hi[k] = (k % 2 == 0 ? -1.0 : 1.0) * kRecLo[k];
    }

    WaveletBands bands;
    bands.approx.resize(out_len);
    bands.detail.resize(out_len);
    for (std::size_t i = 0; i < out_len; ++i) {
        double a = 0.0, d = 0.0;
        for (long long k = 0; k < F; ++k) {
            const double v = ext_at(x, 2 * static_cast<long long>(i) + 1 - k);
            a += dec_lo[k] * v;
            d += dec_hi[k] * v;
        }
        bands.approx[i] = a;
        bands.detail[i] = d;
    }
    return bands;
}

std::vector<double> idwt_db4(const WaveletBands& bands, std::size_t out_len) {
    if (bands.approx.size() != bands.detail.size()) {
        throw data_error("idwt_db4: band length mismatch");
    }
    const long long o = static_cast<long long>(bands.approx.size());
    const long long F = static_cast<long long>(kDb4Taps);

    double rec_hi[kDb4Taps];
    for (std::size_t k = 0; k < kDb4Taps; ++k) {
        // rec_hi[k] = (-1)^k dec_lo[k]
        rec_hi[k] = (k % 2 == 0 ? 1.0 : -1.0) * kRecLo[kDb4Taps - 1 - k];
    }

    // two-scale synthesis: x[n] = sum_i cA[i] rec_lo[n-2i+F-2] + cD[i] rec_hi[n-2i+F-2];
    // exact because the analysis coefficients cover every shift whose atom
    // touches [0, out_len).
    std::vector<double> x(out_len, 0.0);
    for (long long n = 0; n < static_cast<long long>(out_len); ++n) {
        const long long i_first = n / 2;                                  // tap <= F-1
        const long long i_last = std::min<long long>(o - 1, (n + F - 2) / 2); // tap >= 0
        double acc = 0.0;
        for (long long i = i_first; i <= i_last; ++i) {
            const long long tap = n - 2 * i + F - 2;
            acc += bands.approx[static_cast<std::size_t>(i)] * kRecLo[tap] +
                   bands.detail[static_cast<std::size_t>(i)] * rec_hi[tap];
        }
        x[static_cast<std::size_t>(n)] = acc;
    }
    return x;
}

WaveletDecomposition wavedec2_db4(const std::vector<double>& x) {
    WaveletDecomposition d;
    WaveletBands l1 = dwt_db4(x);
    d.approx1 = l1.approx;
    d.detail1 = std::move(l1.detail);
    WaveletBands l2 = dwt_db4(d.approx1);
    d.approx2 = std::move(l2.approx);
    d.detail2 = std::move(l2.detail);
    return d;
}

std::vector<double> waverec2_db4(const WaveletDecomposition& d, std::size_t out_len) {
    WaveletBands l2{d.approx2, d.detail2};
    std::vector<double> a1 = idwt_db4(l2, d.approx1.size());
    WaveletBands l1{std::move(a1), d.detail1};
    return idwt_db4(l1, out_len);
}

} // namespace icumort::dsp
