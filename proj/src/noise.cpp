#include "eclock/noise.hpp"

#include <cmath>
#include <complex>
#include <random>
#include <string>

#include "eclock/errors.hpp"
#include "fft.hpp"

namespace eclock {
namespace {

void check_common(double gamma, double T1) {
  if (!std::isfinite(gamma) || gamma < 0.0) {
    throw ConfigError("noise.gamma must be finite and >= 0, got " + std::to_string(gamma));
  }
  if (!std::isfinite(T1) || T1 <= 0.0) {
    throw ConfigError("T1 must be finite and > 0, got " + std::to_string(T1));
  }
}

}  // namespace

std::string_view to_string(NoiseKind kind) {
  return kind == NoiseKind::White ? "white" : "one-over-f";
}

NoiseKind noise_kind_from_string(std::string_view name) {
  if (name == "white") return NoiseKind::White;
  if (name == "one-over-f" || name == "1/f" || name == "pink") return NoiseKind::OneOverF;
  throw ConfigError("unknown noise kind '" + std::string(name) + "' (expected white | one-over-f)");
}

PhaseIncrementTrace generate_white(double gamma, double T1, std::size_t steps, Rng& rng) {
  check_common(gamma, T1);
  if (steps < 1) throw ConfigError("white noise needs at least 1 step");
  PhaseIncrementTrace trace{std::vector<double>(steps, 0.0), T1};
  if (gamma == 0.0) return trace;
  std::normal_distribution<double> normal(0.0, std::sqrt(gamma * T1));
  for (auto& x : trace.increments) x = normal(rng);
  return trace;
}

double one_over_f_frequency_variance(double gamma, double T1, std::size_t steps) {
  const double f_min = 1.0 / (static_cast<double>(steps) * T1);
  const double f_nyq = 0.5 / T1;
  return 2.0 * gamma * gamma * std::log(f_nyq / f_min);
}

PhaseIncrementTrace generate_one_over_f(double gamma, double T1, std::size_t steps, Rng& rng) {
  check_common(gamma, T1);
  if (steps < 2) throw ConfigError("1/f noise needs at least 2 steps");
  PhaseIncrementTrace trace{std::vector<double>(steps, 0.0), T1};
  if (gamma == 0.0) return trace;

  const std::size_t n = steps;
  const double nd = static_cast<double>(n);
  const double df = 1.0 / (nd * T1);
  const double f_min = df;
  const double f_nyq = 0.5 / T1;
  const bool even = n % 2 == 0;

  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::complex<double>> half(n / 2 + 1, {0.0, 0.0});
  for (std::size_t k = 1; k < half.size(); ++k) {
    const double fk = static_cast<double>(k) * df;
    const double lower = std::max(fk - 0.5 * df, f_min);
    const double upper = std::min(fk + 0.5 * df, f_nyq);
    // One-sided integral of gamma^2/f over the bin.
    const double power = upper > lower ? gamma * gamma * std::log(upper / lower) : 0.0;
    const double a = normal(rng);
    const double b = normal(rng);
    if (even && k == n / 2) {
      half[k] = {nd * std::sqrt(2.0 * power) * a, 0.0};
    } else {
      const double scale = nd * std::sqrt(0.5 * power);
      half[k] = {scale * a, scale * b};
    }
  }
  const auto freq = detail::inverse_real(half, n);
  for (std::size_t t = 0; t < n; ++t) trace.increments[t] = freq[t] / nd * T1;
  return trace;
}

PhaseIncrementTrace generate(const NoiseModel& model, double T1, std::size_t steps, Rng& rng) {
  return model.kind == NoiseKind::White ? generate_white(model.gamma, T1, steps, rng)
                                        : generate_one_over_f(model.gamma, T1, steps, rng);
}

}  // namespace eclock
