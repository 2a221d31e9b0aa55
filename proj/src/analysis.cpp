#include "eclock/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>

#include "eclock/errors.hpp"
#include "fft.hpp"

namespace eclock {

std::string_view to_string(Window window) { return window == Window::Hann ? "hann" : "rectangular"; }

Window window_from_string(std::string_view name) {
  if (name == "hann") return Window::Hann;
  if (name == "rectangular" || name == "none") return Window::Rectangular;
  throw ConfigError("unknown window '" + std::string(name) + "' (expected hann | rectangular)");
}

void validate(const AnalysisConfig& config) {
  if (!std::isfinite(config.omega) || config.omega <= 0.0) throw ConfigError("analysis.omega must be > 0");
  if (config.spectrum_segments < 1) throw ConfigError("analysis.spectrum_segments must be >= 1");
  if (config.bootstrap_resamples < 0) throw ConfigError("analysis.bootstrap_resamples must be >= 0");
  for (std::size_t i = 0; i < config.breakdown_grid.size(); ++i) {
    const double g = config.breakdown_grid[i];
    if (!std::isfinite(g) || g <= 0.0) throw ConfigError("analysis.breakdown_grid values must be > 0");
    if (i > 0 && g <= config.breakdown_grid[i - 1]) throw ConfigError("analysis.breakdown_grid must be ascending");
  }
}

StabilityReport stability_from_offsets(std::span<const double> omega_bar, const AnalysisConfig& config, double tau,
                                       double gamma) {
  validate(config);
  std::vector<double> y;
  y.reserve(omega_bar.size());
  for (double w : omega_bar) {
    if (std::isfinite(w)) y.push_back(w / config.omega);
  }
  StabilityReport report;
  report.trials = omega_bar.size();
  report.completed = y.size();
  if (y.size() < 2) {
    throw EmptyReportError("stability needs at least 2 completed trials, got " + std::to_string(y.size()) + " of " +
                           std::to_string(omega_bar.size()));
  }
  auto rms = [](auto&& values, std::size_t count) {
    double s = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
      const double v = values(i);
      s += v * v;
    }
    return std::sqrt(s / static_cast<double>(count));
  };
  report.sigma = rms([&](std::size_t i) { return y[i]; }, y.size());
  report.abort_rate = static_cast<double>(report.trials - report.completed) / static_cast<double>(report.trials);
  report.figure_of_merit = gamma > 0.0 ? config.omega * config.omega * report.sigma * report.sigma * tau / gamma
                                       : std::numeric_limits<double>::quiet_NaN();

  if (config.bootstrap_resamples > 1) {
    Rng rng(config.bootstrap_seed, static_cast<std::uint64_t>(Stream::Bootstrap));
    const auto n = y.size();
    std::vector<double> sigmas(static_cast<std::size_t>(config.bootstrap_resamples));
    for (auto& s : sigmas) {
      s = rms([&](std::size_t) { return y[static_cast<std::size_t>(rng() % n)]; }, n);
    }
    double mean = 0.0;
    for (double s : sigmas) mean += s;
    mean /= static_cast<double>(sigmas.size());
    double var = 0.0;
    for (double s : sigmas) var += (s - mean) * (s - mean);
    report.sigma_stderr = std::sqrt(var / static_cast<double>(sigmas.size() - 1));
  }
  return report;
}

StabilityReport stability(std::span<const ClockRunResult> results, const AnalysisConfig& config, double tau,
                          double gamma) {
  std::vector<double> w;
  w.reserve(results.size());
  for (const auto& r : results) w.push_back(r.aborted() ? std::numeric_limits<double>::quiet_NaN() : r.omega_bar);
  return stability_from_offsets(w, config, tau, gamma);
}

double theory_figure_of_merit(int m, int n_atoms, double beta1, double beta) {
  if (m < 1 || n_atoms < 1 || !(beta1 > 0.0) || !(beta > 0.0)) {
    throw std::invalid_argument("theory_figure_of_merit: arguments must be positive");
  }
  return std::pow(beta1 / beta, m - 1) * std::pow(static_cast<double>(n_atoms) * beta1, -m);
}

double theory_stability(int m, int n_atoms, double beta1, double beta, double gamma, double tau, double omega) {
  if (!(gamma > 0.0) || !(tau > 0.0) || !(omega > 0.0)) {
    throw std::invalid_argument("theory_stability: arguments must be positive");
  }
  return std::sqrt(std::pow(beta1 / beta, m - 1) * gamma / (omega * omega * tau)) *
         std::pow(static_cast<double>(n_atoms) * beta1, -0.5 * m);
}

int min_atoms(double a, double beta) {
  if (!(a >= 2.0) || !(beta > 0.0)) throw std::invalid_argument("min_atoms: need a >= 2 and beta > 0");
  // Guard against a/beta landing a hair above an integer, e.g. 2/0.1.
  return static_cast<int>(std::ceil(a / beta - 1e-9));
}

double Spectrum::bin_power(std::size_t k) const {
  const bool self_image = k == 0 || (segment_length % 2 == 0 && k + 1 == density.size());
  return (self_image ? 1.0 : 2.0) * resolution * density.at(k);
}

double Spectrum::integrated_power() const {
  double total = 0.0;
  for (std::size_t k = 0; k < density.size(); ++k) total += bin_power(k);
  return total;
}

Spectrum spectrum(std::span<const double> trace, double T1, int segments, Window window) {
  if (segments < 1) throw std::invalid_argument("spectrum: segments must be >= 1");
  if (!(T1 > 0.0)) throw std::invalid_argument("spectrum: T1 must be > 0");
  const auto k_seg = static_cast<std::size_t>(segments);
  if (trace.size() < 2 * k_seg) {
    throw std::invalid_argument("spectrum: trace of length " + std::to_string(trace.size()) + " is shorter than 2 * " +
                                std::to_string(segments) + " segments");
  }
  // K segments overlapping by half span (K + 1) half-lengths.
  const std::size_t len = segments == 1 ? trace.size() : 2 * trace.size() / (k_seg + 1);
  const std::size_t hop = segments == 1 ? 0 : len / 2;

  std::vector<double> w(len, 1.0);
  if (window == Window::Hann) {
    for (std::size_t i = 0; i < len; ++i) {
      w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(len));
    }
  }
  double w2 = 0.0;
  for (double v : w) w2 += v * v;

  Spectrum out;
  out.segment_length = len;
  out.resolution = 1.0 / (static_cast<double>(len) * T1);
  out.density.assign(len / 2 + 1, 0.0);
  std::vector<double> seg(len);
  for (std::size_t s = 0; s < k_seg; ++s) {
    const auto first = trace.begin() + static_cast<std::ptrdiff_t>(s * hop);
    double mean = 0.0;
    for (std::size_t i = 0; i < len; ++i) mean += first[static_cast<std::ptrdiff_t>(i)];
    mean /= static_cast<double>(len);
    for (std::size_t i = 0; i < len; ++i) seg[i] = (first[static_cast<std::ptrdiff_t>(i)] - mean) * w[i];
    const auto bins = detail::forward_real(seg);
    for (std::size_t k = 0; k < out.density.size(); ++k) out.density[k] += std::norm(bins[k]);
  }
  const double scale = T1 / (w2 * static_cast<double>(k_seg));
  for (auto& d : out.density) d *= scale;
  out.frequency.resize(out.density.size());
  for (std::size_t k = 0; k < out.frequency.size(); ++k) out.frequency[k] = static_cast<double>(k) * out.resolution;
  return out;
}

Spectrum average_spectra(std::span<const Spectrum> spectra) {
  if (spectra.empty()) throw std::invalid_argument("average_spectra: no spectra");
  Spectrum out = spectra.front();
  for (std::size_t i = 1; i < spectra.size(); ++i) {
    if (spectra[i].density.size() != out.density.size() || spectra[i].resolution != out.resolution) {
      throw std::invalid_argument("average_spectra: spectra differ in binning");
    }
    for (std::size_t k = 0; k < out.density.size(); ++k) out.density[k] += spectra[i].density[k];
  }
  for (auto& d : out.density) d /= static_cast<double>(spectra.size());
  return out;
}

BreakdownResult locate_breakdown(std::vector<BreakdownPoint> curve) {
  BreakdownResult result;
  result.curve = std::move(curve);
  const auto& c = result.curve;
  if (c.empty()) throw std::invalid_argument("locate_breakdown: empty scan");
  // sigma * sqrt(tau): compares clocks with different T at equal averaging time.
  auto sigma = [](const BreakdownPoint& p) {
    const double f = p.report.figure_of_merit;
    return std::isfinite(f) ? std::sqrt(f) : std::numeric_limits<double>::infinity();
  };
  std::size_t best = 0;
  for (std::size_t i = 1; i < c.size(); ++i) {
    if (sigma(c[i]) < sigma(c[best])) best = i;
  }
  result.beta_estimate = c[best].gamma_T;
  double worst_after = sigma(c[best]);
  for (std::size_t i = best + 1; i < c.size(); ++i) worst_after = std::max(worst_after, sigma(c[i]));

  if (c.size() < 3) {
    result.low_confidence = true;
    result.diagnostic = "fewer than 3 grid points";
  } else if (best + 1 == c.size()) {
    result.low_confidence = true;
    result.diagnostic = "optimum at the largest gamma*T on the grid";
  } else if (worst_after < 2.0 * sigma(c[best])) {
    result.low_confidence = true;
    result.diagnostic = "sigma rises by less than 2x after the optimum";
  }
  return result;
}

BreakdownResult breakdown_scan(const BreakdownSpec& spec) {
  if (spec.grid.empty()) throw ConfigError("analysis.breakdown_grid must not be empty");
  for (std::size_t i = 1; i < spec.grid.size(); ++i) {
    if (spec.grid[i] <= spec.grid[i - 1]) throw ConfigError("analysis.breakdown_grid must be ascending");
  }
  std::vector<BreakdownPoint> curve;
  AnalysisConfig analysis;
  for (std::size_t g = 0; g < spec.grid.size(); ++g) {
    CascadeConfig config;
    EnsembleSpec ens;
    ens.n_atoms = spec.n_atoms;
    ens.protocol = spec.protocol;
    ens.feedback_rounds = spec.feedback_rounds;
    ens.alpha = spec.alpha.value_or(spec.noise == NoiseKind::White ? 0.01 : 0.5);
    config.ensembles = {ens};
    config.T1 = spec.grid[g];
    config.n = 2;
    config.steps = spec.steps;
    config.noise = {spec.noise, 1.0};
    // Each grid point draws its own streams.
    config.seed = spec.seed + 0x9E3779B97F4A7C15ULL * (g + 1);
    config.trials = spec.trials;
    config.grid_points = spec.grid_points;
    config.gaussian_fast_path = spec.gaussian_fast_path;
    RunOptions options;
    options.cancel = spec.cancel;
    const auto results = run_trials(config, spec.workers, options);
    BreakdownPoint point{spec.grid[g], {}};
    try {
      point.report = stability(results, analysis, config.tau(), 1.0);
    } catch (const EmptyReportError&) {
      point.report.sigma = std::numeric_limits<double>::infinity();
      point.report.figure_of_merit = std::numeric_limits<double>::infinity();
      point.report.trials = results.size();
      point.report.abort_rate = 1.0;
    }
    curve.push_back(point);
  }
  return locate_breakdown(std::move(curve));
}

}  // namespace eclock
