#pragma once

#include <complex>
#include <vector>

#include "dpq/audio_io.hpp"
#include "dpq/error.hpp"

namespace dpq {

using Complex = std::complex<double>;

/// In-place iterative radix-2 FFT, bit-reversal order, twiddles from a root
/// table. Length must be a power of two >= 1. inverse == true applies the
/// conjugate transform scaled by 1/N, so ifft(fft(x)) == x.
void fft_inplace(std::vector<Complex>& data, bool inverse);

std::vector<Complex> fft(const std::vector<Complex>& signal, bool inverse = false);
std::vector<Complex> fft_real(const std::vector<double>& signal);

/// Smallest power of two >= n (n >= 1).
size_t next_pow2(size_t n);

/// Long-term average spectrum: Welch estimate over Hann-windowed frames,
/// per-bin power in dB with a -120 dB floor. One entry per bin in
/// [0, frame_len/2].
struct BandSpectrum {
  std::vector<double> band_power_db;
  int frame_len = 512;
  int hop = 256;
};

BandSpectrum ltas(const AudioBuffer& buf, int frame_len = 512, int hop = 256);

inline constexpr double kDbFloor = -120.0;

}  // namespace dpq
