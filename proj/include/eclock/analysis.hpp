#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eclock/cascade.hpp"

namespace eclock {

enum class Window { Hann, Rectangular };

std::string_view to_string(Window window);
Window window_from_string(std::string_view name);

struct AnalysisConfig {
  double omega = 1.0;  // atomic transition frequency; a pure normalization
  int spectrum_segments = 8;
  Window window = Window::Hann;
  std::vector<double> breakdown_grid;  // gamma*T values
  int bootstrap_resamples = 1000;
  std::uint64_t bootstrap_seed = 1;
};

void validate(const AnalysisConfig& config);

struct StabilityReport {
  double sigma = 0.0;            // sqrt(E[(omega_bar / omega)^2])
  double sigma_stderr = 0.0;     // bootstrap standard error of sigma
  double figure_of_merit = 0.0;  // omega^2 sigma^2 tau / gamma
  double abort_rate = 0.0;
  std::size_t trials = 0;
  std::size_t completed = 0;
};

// NaN offsets count as aborted trials. Throws EmptyReportError when fewer
// than two trials completed.
StabilityReport stability_from_offsets(std::span<const double> omega_bar, const AnalysisConfig& config, double tau,
                                       double gamma);
StabilityReport stability(std::span<const ClockRunResult> results, const AnalysisConfig& config, double tau,
                          double gamma);

// sqrt((beta1/beta)^(m-1) gamma / (omega^2 tau)) (N beta1)^(-m/2), where
// beta1 = gamma T1 and beta = gamma T of the higher ensembles.
double theory_stability(int m, int n_atoms, double beta1, double beta, double gamma, double tau, double omega = 1.0);

// The matching figure of merit omega^2 sigma^2 tau / gamma.
double theory_figure_of_merit(int m, int n_atoms, double beta1, double beta);

// Smallest N with N >= a / beta.
int min_atoms(double a, double beta);

/// Two-sided power spectral density on f >= 0: integrating S over
/// [-f_Nyq, f_Nyq] gives the variance of the (mean-removed) trace.
struct Spectrum {
  std::vector<double> frequency;
  std::vector<double> density;
  double resolution = 0.0;  // bin spacing
  std::size_t segment_length = 0;

  // Integral of S over both signs of f.
  double integrated_power() const;
  // Power in bin k, counting its negative-frequency image.
  double bin_power(std::size_t k) const;
};

// Welch estimate with `segments` segments overlapping by half. Each
// segment's mean is removed before windowing. Throws std::invalid_argument
// if the trace has fewer than 2 * segments samples.
Spectrum spectrum(std::span<const double> trace, double T1, int segments = 8, Window window = Window::Hann);

// Bin-wise mean of spectra sharing a segment length.
Spectrum average_spectra(std::span<const Spectrum> spectra);

struct BreakdownSpec {
  Protocol protocol = Protocol::Conventional;
  int n_atoms = 1000;
  NoiseKind noise = NoiseKind::White;
  std::vector<double> grid;  // ascending gamma*T values
  std::int64_t steps = 10000;
  int trials = 100;
  std::uint64_t seed = 1;
  std::optional<double> alpha;  // defaults: 0.01 white, 0.5 for 1/f
  int feedback_rounds = 4;
  bool gaussian_fast_path = false;
  std::size_t grid_points = PhaseGrid::kDefaultPoints;
  int workers = 1;
  const std::atomic<bool>* cancel = nullptr;
};

struct BreakdownPoint {
  double gamma_T = 0.0;
  StabilityReport report;
};

struct BreakdownResult {
  std::vector<BreakdownPoint> curve;
  double beta_estimate = 0.0;
  bool low_confidence = false;
  std::string diagnostic;
};

// Locates the stability optimum on a scan. Points are ranked by
// sigma * sqrt(tau) = sqrt(figure_of_merit * gamma) / omega, so runs of equal
// step count but different T are compared at equal averaging time. Flags the
// estimate when the grid has fewer than 3 points, when the optimum sits on
// the last grid point, or when sigma * sqrt(tau) rises by less than 2x after it.
BreakdownResult locate_breakdown(std::vector<BreakdownPoint> curve);

// Single-ensemble clocks with gamma = 1 and T1 = gamma*T at every grid point.
BreakdownResult breakdown_scan(const BreakdownSpec& spec);

}  // namespace eclock
