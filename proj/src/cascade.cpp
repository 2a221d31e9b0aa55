#include "eclock/cascade.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "eclock/errors.hpp"

namespace eclock {

std::int64_t CascadeConfig::period(std::size_t j) const {
  std::int64_t p = 1;
  for (std::size_t i = 0; i < j; ++i) p *= n;
  return p;
}

double CascadeConfig::prior_variance(std::size_t j) const {
  const auto& spec = ensembles.at(j);
  if (spec.prior_variance) return *spec.prior_variance;
  if (j == 0) return noise.gamma * T1;
  return static_cast<double>(n) / static_cast<double>(ensembles[j - 1].n_atoms);
}

void validate(const CascadeConfig& config) {
  const std::size_t m = config.levels();
  if (m < 1) throw ConfigError("clock.ensembles: at least one ensemble is required");
  if (config.n < 1 || (m >= 2 && config.n < 2)) {
    throw ConfigError("clock.n must be >= 2 when more than one ensemble is used, got " + std::to_string(config.n));
  }
  if (!std::isfinite(config.T1) || config.T1 <= 0.0) throw ConfigError("clock.T1 must be finite and > 0");
  if (!std::isfinite(config.noise.gamma) || config.noise.gamma < 0.0) {
    throw ConfigError("noise.gamma must be finite and >= 0");
  }
  const std::int64_t min_steps = config.noise.kind == NoiseKind::OneOverF ? 2 : 1;
  if (config.steps < min_steps) throw ConfigError("clock.steps must be >= " + std::to_string(min_steps));
  // n^(m-1) without overflow.
  std::int64_t top = 1;
  for (std::size_t j = 1; j < m; ++j) {
    if (top > config.steps / config.n) {
      throw ConfigError("clock.steps=" + std::to_string(config.steps) + " is shorter than one readout of ensemble " +
                        std::to_string(j + 1));
    }
    top *= config.n;
  }
  if (config.steps % top != 0) {
    throw ConfigError("clock.steps=" + std::to_string(config.steps) + " is not divisible by n^(m-1)=" +
                      std::to_string(top));
  }
  if (config.trials < 1) throw ConfigError("clock.trials must be >= 1");
  if (config.grid_points < 3 || config.grid_points % 2 == 0) {
    throw ConfigError("measurement.grid_points must be odd and >= 3, got " + std::to_string(config.grid_points));
  }
  for (std::size_t j = 0; j < m; ++j) {
    try {
      validate(config.ensembles[j]);
    } catch (const ConfigError& e) {
      throw ConfigError("ensemble " + std::to_string(j + 1) + ": " + e.what());
    }
  }
}

double accumulate_interval_phase(std::int64_t step, const PhaseIncrementTrace& trace, const FeedbackLedger& ledger,
                                 double T1) {
  if (step < 1 || static_cast<std::size_t>(step) > trace.increments.size()) {
    throw std::out_of_range("accumulate_interval_phase: step outside the trace");
  }
  double correction = 0.0;
  for (double dw : ledger.delta_omega) correction += dw;
  return trace.increments[static_cast<std::size_t>(step - 1)] + T1 * correction;
}

namespace {

// sum_{s=1}^{M} (1-a)^{M-s} [e_s + a sum_{s'<s} e_s'], evaluated by Horner.
double weighted_window_sum(std::span<const EstimateEntry> entries, double alpha) {
  const double keep = 1.0 - alpha;
  double acc = 0.0;
  double prefix = 0.0;
  for (const auto& entry : entries) {
    acc = acc * keep + (entry.estimate + alpha * prefix);
    prefix += entry.estimate;
  }
  return acc;
}

std::int64_t ipow(std::int64_t base, std::size_t exp) {
  std::int64_t p = 1;
  for (std::size_t i = 0; i < exp; ++i) p *= base;
  return p;
}

}  // namespace

double measurement_phase_correction(std::size_t j, std::int64_t window_start, const FeedbackLedger& ledger,
                                    std::span<const double> alpha, int n) {
  if (j == 0) return 0.0;
  double correction = 0.0;
  for (std::size_t i = 0; i < j; ++i) {
    const std::int64_t period_i = ipow(n, i);
    const std::int64_t count = ipow(n, j - i);
    if (window_start % period_i != 0) throw std::logic_error("window start not aligned to ensemble period");
    const auto first = static_cast<std::size_t>(window_start / period_i);
    const auto& hist = ledger.history.at(i);
    if (first + static_cast<std::size_t>(count) > hist.size()) {
      throw std::logic_error("measurement_phase_correction: lower ensemble not yet read out in this window");
    }
    correction += weighted_window_sum(std::span(hist).subspan(first, static_cast<std::size_t>(count)), alpha[i]);
  }
  return correction;
}

double final_phase_correction(const FeedbackLedger& ledger, std::span<const double> alpha, int n,
                              std::int64_t steps) {
  double correction = 0.0;
  for (std::size_t j = 0; j < ledger.history.size(); ++j) {
    const auto expected = static_cast<std::size_t>(steps / ipow(n, j));
    if (ledger.history[j].size() != expected) throw std::logic_error("final_phase_correction: run incomplete");
    correction += weighted_window_sum(ledger.history[j], alpha[j]);
  }
  return correction;
}

double interrogate(std::size_t j, std::int64_t step, double window_phase, double correction,
                   const EnsembleSpec& spec, double ramsey_time, double prior_variance, FeedbackLedger& ledger,
                   Rng& rng, const MeasurementSettings& settings, MeasurementOutcome* outcome) {
  const double phase = window_phase - correction;
  double estimate;
  if (settings.estimator) {
    estimate = settings.estimator(j, spec, phase, prior_variance, rng);
  } else if (spec.protocol == Protocol::Conventional) {
    auto out = measure_conventional(spec.n_atoms, phase, rng, settings.gaussian_fast_path);
    estimate = estimate_conventional(out, spec.n_atoms);
    if (outcome) *outcome = std::move(out);
  } else {
    AdaptiveOptions opts{settings.grid, settings.gaussian_fast_path, settings.keep_records && outcome != nullptr};
    auto res = measure_adaptive(spec.n_atoms, phase, prior_variance, spec.feedback_rounds, rng, opts);
    estimate = res.estimate;
    if (outcome) *outcome = std::move(res.outcome);
  }
  ledger.history.at(j).push_back({step, phase, estimate});
  ledger.delta_omega[j] -= spec.alpha * estimate / ramsey_time;
  return estimate;
}

std::vector<double> ClockRunResult::residuals(std::size_t j) const {
  std::vector<double> out;
  out.reserve(ledger.history.at(j).size());
  for (const auto& e : ledger.history[j]) out.push_back(e.phase - e.estimate);
  return out;
}

ClockRunResult run_trial(const CascadeConfig& config, std::uint64_t trial, const RunOptions& options) {
  validate(config);
  const std::size_t m = config.levels();
  const std::int64_t l = config.steps;

  Rng noise_rng = Rng::for_trial(config.seed, trial, Stream::Noise);
  Rng meas_rng = Rng::for_trial(config.seed, trial, Stream::Measurement);
  const auto trace = generate(config.noise, config.T1, static_cast<std::size_t>(l), noise_rng);

  std::vector<double> alpha(m), ramsey(m), prior(m);
  std::vector<std::int64_t> period(m);
  for (std::size_t j = 0; j < m; ++j) {
    alpha[j] = config.ensembles[j].alpha;
    ramsey[j] = config.ramsey_time(j);
    period[j] = config.period(j);
    prior[j] = config.prior_variance(j);
  }
  MeasurementSettings settings;
  settings.grid = PhaseGrid::shared(config.grid_points);
  settings.gaussian_fast_path = config.gaussian_fast_path;
  settings.keep_records = options.keep_records;
  settings.estimator = options.estimator;

  ClockRunResult result;
  result.trial = trial;
  result.T1 = config.T1;
  result.tau = config.tau();
  FeedbackLedger ledger(m);
  for (std::size_t j = 0; j < m; ++j) ledger.history[j].reserve(static_cast<std::size_t>(l / period[j]));
  if (options.keep_traces) result.true_phase.reserve(static_cast<std::size_t>(l));

  std::vector<double> window(m, 0.0);
  double phase_sum = 0.0;
  double residual_sum = 0.0;
  std::int64_t k = 1;
  try {
    for (; k <= l; ++k) {
      const double phi = accumulate_interval_phase(k, trace, ledger, config.T1);
      phase_sum += phi;
      if (options.keep_traces) result.true_phase.push_back(phi);
      for (auto& w : window) w += phi;
      // Shorter Ramsey times are read out first.
      for (std::size_t j = 0; j < m && k % period[j] == 0; ++j) {
        const double correction = measurement_phase_correction(j, k - period[j], ledger, alpha, config.n);
        MeasurementOutcome outcome;
        const bool record = options.keep_records && !options.estimator;
        const double est = interrogate(j, k, window[j], correction, config.ensembles[j], ramsey[j], prior[j], ledger,
                                       meas_rng, settings, record ? &outcome : nullptr);
        if (j + 1 == m) residual_sum += ledger.history[j].back().phase - est;
        if (record) result.records.push_back({j, k, std::move(outcome)});
        window[j] = 0.0;
      }
    }
  } catch (const DegenerateUpdateError& e) {
    result.abort_reason = std::string(e.what()) + " at step " + std::to_string(k);
    result.omega_bar = std::numeric_limits<double>::quiet_NaN();
    result.omega_bar_residual = result.omega_bar;
    if (options.keep_traces) result.ledger = std::move(ledger);
    return result;
  }

  const double final_correction = final_phase_correction(ledger, alpha, config.n, l);
  result.omega_bar = (phase_sum - final_correction) / result.tau;
  result.omega_bar_residual = residual_sum / result.tau;
  if (options.keep_traces) {
    result.noise_increments = trace.increments;
    result.ledger = std::move(ledger);
  }
  return result;
}

std::vector<ClockRunResult> run_trials(const CascadeConfig& config, int workers, const RunOptions& options) {
  validate(config);
  const auto trials = static_cast<std::size_t>(config.trials);
  std::vector<ClockRunResult> results(trials);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= trials) return;
      try {
        if (options.cancel && options.cancel->load()) throw CancelledError("run cancelled");
        results[t] = run_trial(config, t, options);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(trials);
        return;
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(workers, static_cast<int>(trials)));
  if (n_threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < n_threads; ++w) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

std::vector<double> locked_frequency_trace(const ClockRunResult& result) {
  if (result.true_phase.empty()) throw std::logic_error("locked_frequency_trace: run without keep_traces");
  std::vector<double> trace = result.true_phase;
  for (const auto& hist : result.ledger.history) {
    for (const auto& e : hist) trace[static_cast<std::size_t>(e.step - 1)] -= e.estimate;
  }
  for (auto& v : trace) v /= result.T1;
  return trace;
}

std::vector<double> unlocked_frequency_trace(const ClockRunResult& result) {
  if (result.noise_increments.empty()) throw std::logic_error("unlocked_frequency_trace: run without keep_traces");
  std::vector<double> trace = result.noise_increments;
  for (auto& v : trace) v /= result.T1;
  return trace;
}

}  // namespace eclock
