#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eclock/ensemble.hpp"
#include "eclock/noise.hpp"
#include "eclock/rng.hpp"

namespace eclock {

/// A clock whose LO is locked to an ordered cascade of ensembles.
///
/// Ensembles are indexed from 0 in code; ensemble j has Ramsey time
/// T1 * n^j and is interrogated at every step k (1-based) divisible by n^j.
struct CascadeConfig {
  std::vector<EnsembleSpec> ensembles;
  double T1 = 0.1;
  int n = 2;                   // Ramsey-time multiplier between levels
  std::int64_t steps = 10000;  // l; tau = steps * T1
  NoiseModel noise;
  std::uint64_t seed = 1;
  int trials = 100;
  std::size_t grid_points = PhaseGrid::kDefaultPoints;
  bool gaussian_fast_path = false;

  std::size_t levels() const { return ensembles.size(); }
  double tau() const { return static_cast<double>(steps) * T1; }
  std::int64_t period(std::size_t j) const;  // n^j
  double ramsey_time(std::size_t j) const { return T1 * static_cast<double>(period(j)); }
  // Adaptive prior variance for ensemble j: the explicit value when set,
  // otherwise gamma * T1 for the first ensemble and n / N_{j-1} (the white
  // level 1/(N T_{j-1}) left by the previous lock, times T_j) above it.
  double prior_variance(std::size_t j) const;
};

// Throws ConfigError, naming the offending key.
void validate(const CascadeConfig& config);

struct EstimateEntry {
  std::int64_t step = 0;  // step at which the ensemble was read out
  double phase = 0.0;     // corrected phase seen by the ensemble
  double estimate = 0.0;
};

/// Frequency corrections and the full estimate history of every ensemble.
struct FeedbackLedger {
  explicit FeedbackLedger(std::size_t ensembles = 0) : delta_omega(ensembles, 0.0), history(ensembles) {}

  std::vector<double> delta_omega;                // accumulated correction per ensemble (rad/s)
  std::vector<std::vector<EstimateEntry>> history;  // ordered by step
};

// LO phase acquired over step k (1-based): the free-running increment plus
// T1 times every standing frequency correction.
double accumulate_interval_phase(std::int64_t step, const PhaseIncrementTrace& trace, const FeedbackLedger& ledger,
                                 double T1);

// Correction subtracted from ensemble j's phase for its window starting after
// step `window_start`: for every lower ensemble i, the (1-alpha_i)-weighted
// sums over its estimates inside the window. The weights telescope, so the
// result equals the plain sum of the lower ensembles' window estimates.
// Returns 0 for j = 0.
double measurement_phase_correction(std::size_t j, std::int64_t window_start, const FeedbackLedger& ledger,
                                    std::span<const double> alpha, int n);

// Final phase correction after `steps` steps: the same weighted sums over
// each ensemble's entire history.
double final_phase_correction(const FeedbackLedger& ledger, std::span<const double> alpha, int n,
                              std::int64_t steps);

/// Replaces the physical measurement, mainly for tests.
using PhaseEstimator =
    std::function<double(std::size_t j, const EnsembleSpec& spec, double phase, double prior_variance, Rng& rng)>;

struct MeasurementSettings {
  std::shared_ptr<const PhaseGrid> grid;
  bool gaussian_fast_path = false;
  bool keep_records = false;
  PhaseEstimator estimator;  // empty: simulate the ensemble
};

// Reads out ensemble j on phase `window_phase - correction`, appends the
// estimate to the ledger and applies delta_omega_j -= alpha * estimate / T_j.
double interrogate(std::size_t j, std::int64_t step, double window_phase, double correction,
                   const EnsembleSpec& spec, double ramsey_time, double prior_variance, FeedbackLedger& ledger,
                   Rng& rng, const MeasurementSettings& settings = {},
                   MeasurementOutcome* outcome = nullptr);

struct RunOptions {
  bool keep_traces = false;   // per-step phases and estimate histories
  bool keep_records = false;  // per-atom readout records
  PhaseEstimator estimator;
  // Checked before each trial by run_trials; when set it throws CancelledError.
  const std::atomic<bool>* cancel = nullptr;
};

struct RecordedMeasurement {
  std::size_t ensemble = 0;
  std::int64_t step = 0;
  MeasurementOutcome outcome;
};

struct ClockRunResult {
  std::uint64_t trial = 0;
  double T1 = 0.0;
  double tau = 0.0;
  // (sum of LO phases - final correction) / tau.
  double omega_bar = 0.0;
  // The same quantity from the top ensemble's residuals (Phi - estimate).
  double omega_bar_residual = 0.0;
  std::optional<std::string> abort_reason;

  // Filled when RunOptions::keep_traces is set.
  std::vector<double> noise_increments;
  std::vector<double> true_phase;  // LO phase per step
  FeedbackLedger ledger;
  std::vector<RecordedMeasurement> records;

  bool aborted() const { return abort_reason.has_value(); }
  // Phi - estimate for every readout of ensemble j.
  std::vector<double> residuals(std::size_t j) const;
};

ClockRunResult run_trial(const CascadeConfig& config, std::uint64_t trial, const RunOptions& options = {});

// Runs trials [0, config.trials) on `workers` threads; results are in trial
// order and do not depend on the worker count.
std::vector<ClockRunResult> run_trials(const CascadeConfig& config, int workers, const RunOptions& options = {});

// Per-step frequency record of the clock: the LO phase of each step minus the
// estimates read out at that step, divided by T1. Its mean is omega_bar.
// Requires keep_traces.
std::vector<double> locked_frequency_trace(const ClockRunResult& result);

// The free-running LO's frequency record delta_phi0 / T1. Requires keep_traces.
std::vector<double> unlocked_frequency_trace(const ClockRunResult& result);

}  // namespace eclock
