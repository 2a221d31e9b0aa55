#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "eclock/rng.hpp"

namespace eclock {

enum class Protocol { Conventional, Adaptive };

std::string_view to_string(Protocol protocol);
Protocol protocol_from_string(std::string_view name);

/// One atomic ensemble of uncorrelated spin-1/2 atoms.
struct EnsembleSpec {
  int n_atoms = 100;
  Protocol protocol = Protocol::Conventional;
  int feedback_rounds = 4;  // adaptive only: number of readout batches
  double alpha = 0.01;      // feedback gain of this ensemble's frequency loop
  // Adaptive prior variance; when unset the cascade derives it from the
  // noise level this ensemble is expected to see.
  std::optional<double> prior_variance;
};

// Throws ConfigError on out-of-range fields.
void validate(const EnsembleSpec& spec);

struct MeasurementOutcome {
  int n_down = 0;  // atoms detected in s = 1
  // Adaptive only.
  // Per-atom bits, batch by batch. Atoms within a batch share a rotation and
  // are exchangeable; simulated batches list their ones first.
  std::vector<std::uint8_t> record;
  std::vector<int> batch_sizes;
  std::vector<double> rotations;   // accumulated rotation seen by each batch
  std::vector<double> increments;  // estimate increments; they sum to the estimate
};

// Probability of detecting bit `s` after a Ramsey phase `delta_phi` with an
// accumulated readout rotation `rotation`:
//   P(1) = cos^2(pi/4 - (delta_phi - rotation)/2) = (1 + sin(delta_phi - rotation)) / 2.
double outcome_probability(int s, double delta_phi, double rotation);

// Projective readout of all atoms at once; n_down ~ Binomial(N, (1 + sin delta_phi)/2).
// With `gaussian_counts` the binomial is replaced by its Gaussian approximation.
MeasurementOutcome measure_conventional(int n_atoms, double delta_phi, Rng& rng,
                                        bool gaussian_counts = false);

// arcsin(2 J3 / N) with J3 = n_down - N/2.
double estimate_conventional(int n_down, int n_atoms);
double estimate_conventional(const MeasurementOutcome& outcome, int n_atoms);

/// Uniform grid on [-pi, pi] with an odd number of points, symmetric about
/// zero, carrying composite Simpson weights. The prior does not vanish at
/// +-pi, so the trapezoid rule would leave an O(h^2) endpoint error.
class PhaseGrid {
 public:
  static constexpr std::size_t kDefaultPoints = 4097;

  explicit PhaseGrid(std::size_t points = kDefaultPoints);

  // Process-wide cache; grids are immutable.
  static std::shared_ptr<const PhaseGrid> shared(std::size_t points = kDefaultPoints);

  std::size_t size() const { return x_.size(); }
  double spacing() const { return spacing_; }
  double x(std::size_t i) const { return x_[i]; }
  std::span<const double> points() const { return x_; }
  std::span<const double> sin_table() const { return sin_; }
  std::span<const double> cos_table() const { return cos_; }
  // Quadrature weight including the spacing.
  double weight(std::size_t i) const { return w_[i]; }

 private:
  double spacing_;
  std::vector<double> x_, sin_, cos_, w_;
};

/// Posterior density of the Ramsey phase on a PhaseGrid.
///
/// Densities are kept in the linear domain and renormalized after every
/// update. Batch likelihoods are scaled by their maximum-likelihood value so
/// records of 1e5 bits do not underflow; when the posterior sits far from
/// that maximum the likelihood is formed in the log domain instead.
/// Tails that fall below 1e-40 of the peak at the edges of the support are
/// set to zero and skipped by later updates.
class Posterior {
 public:
  static Posterior gaussian(std::shared_ptr<const PhaseGrid> grid, double variance);
  static Posterior uniform(std::shared_ptr<const PhaseGrid> grid);
  // Density values are normalized on construction.
  static Posterior from_density(std::shared_ptr<const PhaseGrid> grid, std::vector<double> density);

  // Single readout bit. Throws DegenerateUpdateError if P(s) < 1e-30.
  void update(int s, double rotation);

  // `n_down` ones among `n_atoms` bits read out with a common rotation;
  // equivalent to that many single-bit updates. Throws DegenerateUpdateError
  // if the record's likelihood per bit falls below 1e-30.
  void update_counts(int n_down, int n_atoms, double rotation);

  double mean() const;
  // Quadrature of the density; 1 up to rounding after every update.
  double normalization() const;

  const PhaseGrid& grid() const { return *grid_; }
  std::span<const double> density() const { return density_; }

 private:
  explicit Posterior(std::shared_ptr<const PhaseGrid> grid);
  void renormalize_and_prune();

  std::shared_ptr<const PhaseGrid> grid_;
  std::vector<double> density_;
  std::size_t lo_ = 0, hi_ = 0;  // support [lo_, hi_)
};

// Functional form of Posterior::update.
Posterior posterior_update(Posterior posterior, int s, double rotation);

// Batch sizes for `rounds` readout batches: as equal as possible, the
// remainder going to the last batches.
std::vector<int> batch_sizes(int n_atoms, int rounds);

struct AdaptiveOptions {
  std::shared_ptr<const PhaseGrid> grid;  // defaults to the shared 4097-point grid
  bool gaussian_counts = false;           // fast path: Gaussian batch counts, no per-atom record
  bool keep_record = true;
};

struct AdaptiveMeasurement {
  double estimate = 0.0;
  MeasurementOutcome outcome;
};

/// Adaptive readout: atoms are read out in batches; before each batch the
/// remaining atoms are rotated by the current posterior mean, so that the
/// accumulated rotation equals the sum of the estimate increments so far. The
/// returned estimate is the posterior mean after the last batch, i.e. the sum
/// of all rotations plus the final increment. The prior is N(0, prior_variance).
///
/// Batch counts are drawn from the binomial distribution. Posteriors are
/// memoized per thread along the sequence of batch counts, which leaves the
/// results unchanged and makes small ensembles cheap.
AdaptiveMeasurement measure_adaptive(int n_atoms, double delta_phi, double prior_variance, int rounds,
                                     Rng& rng, const AdaptiveOptions& options = {});

// Replays the adaptive estimator on a recorded bit sequence.
AdaptiveMeasurement adaptive_estimate(std::span<const std::uint8_t> record, std::span<const int> batch_sizes,
                                      double prior_variance, std::shared_ptr<const PhaseGrid> grid = nullptr);

}  // namespace eclock
