#pragma once

#include <complex>
#include <span>
#include <vector>

namespace eclock::detail {

// Thin FFTW wrappers. Unnormalized, FFTW sign conventions:
// forward X_k = sum_t x_t e^{-2 pi i k t / n}, inverse has the opposite sign.

// Returns the n/2 + 1 non-negative frequency bins of a real signal.
std::vector<std::complex<double>> forward_real(std::span<const double> signal);

// Inverse of forward_real for a length-n real signal (not divided by n).
std::vector<double> inverse_real(std::span<const std::complex<double>> half_spectrum, std::size_t n);

}  // namespace eclock::detail
