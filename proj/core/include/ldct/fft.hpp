#pragma once

#include <complex>
#include <cstddef>
#include <span>

namespace ldct {

/// Smallest power of two >= n (n >= 1).
std::size_t next_pow2(std::size_t n);

/// In-place iterative radix-2 FFT. The length must be a power of two.
/// The inverse transform includes the 1/N normalization.
void fft_inplace(std::span<std::complex<double>> a, bool inverse);

}  // namespace ldct
