#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "eclock/rng.hpp"

namespace eclock {

enum class NoiseKind { White, OneOverF };

std::string_view to_string(NoiseKind kind);
NoiseKind noise_kind_from_string(std::string_view name);

/// Frequency noise of the free-running local oscillator.
///
/// White: the phase accumulated over a time T has variance `gamma * T`
/// (two-sided frequency PSD equal to `gamma`).
/// OneOverF: two-sided frequency PSD `gamma^2 / |f|` between the run's
/// lowest resolvable frequency 1/(steps * T1) and the Nyquist frequency.
struct NoiseModel {
  NoiseKind kind = NoiseKind::White;
  double gamma = 1.0;
};

/// Per-interval phase increments of the free-running LO on the T1 grid.
struct PhaseIncrementTrace {
  std::vector<double> increments;  // radians, one per base interval
  double dt = 0.0;                 // seconds
};

PhaseIncrementTrace generate_white(double gamma, double T1, std::size_t steps, Rng& rng);

// Spectral synthesis: independent complex Gaussian bins whose power is the
// target PSD integrated over the bin, conjugate-symmetric spectrum, inverse
// FFT. The frequency is held constant over each T1 interval.
PhaseIncrementTrace generate_one_over_f(double gamma, double T1, std::size_t steps, Rng& rng);

PhaseIncrementTrace generate(const NoiseModel& model, double T1, std::size_t steps, Rng& rng);

// Target two-sided variance of the 1/f frequency series on a grid of `steps`
// points spaced T1: integral of gamma^2/|f| over 1/(steps*T1) <= |f| <= 1/(2*T1).
double one_over_f_frequency_variance(double gamma, double T1, std::size_t steps);

}  // namespace eclock
