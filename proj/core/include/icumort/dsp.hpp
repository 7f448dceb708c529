#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace icumort::dsp {

// DFT of a real signal. Radix-2 FFT for power-of-two lengths, direct
// evaluation otherwise (signals here are at most a few hundred samples).
std::vector<std::complex<double>> dft(const std::vector<double>& x);

// Orthonormal Daubechies wavelet with 4 vanishing moments (8-tap filter,
// the "db4" of the common wavelet toolboxes).
inline constexpr std::size_t kDb4Taps = 8;
const double* db4_rec_lo(); // scaling filter, sums to sqrt(2)

struct WaveletBands {
    std::vector<double> approx;
    std::vector<double> detail;
};

// One analysis level with half-sample symmetric boundary extension. Output
// bands have floor((n + 7) / 2) coefficients; the representation is slightly
// expansive, which is what makes the inverse exact for any length.
WaveletBands dwt_db4(const std::vector<double>& x);

// Exact inverse of dwt_db4 for the original length.
std::vector<double> idwt_db4(const WaveletBands& bands, std::size_t out_len);

struct WaveletDecomposition {
    std::vector<double> approx1, detail1; // level 1
    std::vector<double> approx2, detail2; // level 2 (from approx1)
};

WaveletDecomposition wavedec2_db4(const std::vector<double>& x);
std::vector<double> waverec2_db4(const WaveletDecomposition& d, std::size_t out_len);

} // namespace icumort::dsp
