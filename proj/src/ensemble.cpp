#include "eclock/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <string>
#include <unordered_map>

#include "eclock/errors.hpp"

namespace eclock {
namespace {

constexpr double kPruneRelative = 1e-40;
const double kLogDegeneratePerBit = std::log(1e-30);

double ipow(double base, int exp) {
  double result = 1.0;
  while (exp > 0) {
    if (exp & 1) result *= base;
    base *= base;
    exp >>= 1;
  }
  return result;
}

// Sums f(i) over [lo, hi) by mirrored pairs (i, n-1-i) in a fixed order, so
// that a mirrored density gives a bit-exact mirrored result.
template <typename F>
double symmetric_sum(std::size_t n, std::size_t lo, std::size_t hi, F&& f) {
  auto term = [&](std::size_t i) { return (i >= lo && i < hi) ? f(i) : 0.0; };
  const std::size_t start = std::min(lo, n - hi);
  double acc = 0.0;
  for (std::size_t i = start; i < n / 2; ++i) acc += term(i) + term(n - 1 - i);
  if (n % 2 == 1) acc += term(n / 2);
  return acc;
}

void check_atoms(int n_atoms) {
  if (n_atoms < 1) throw ConfigError("ensemble.atoms must be >= 1, got " + std::to_string(n_atoms));
}

}  // namespace

std::string_view to_string(Protocol protocol) {
  return protocol == Protocol::Conventional ? "conventional" : "adaptive";
}

Protocol protocol_from_string(std::string_view name) {
  if (name == "conventional") return Protocol::Conventional;
  if (name == "adaptive") return Protocol::Adaptive;
  throw ConfigError("unknown protocol '" + std::string(name) + "' (expected conventional | adaptive)");
}

void validate(const EnsembleSpec& spec) {
  check_atoms(spec.n_atoms);
  if (spec.protocol == Protocol::Adaptive &&
      (spec.feedback_rounds < 1 || spec.feedback_rounds > spec.n_atoms)) {
    throw ConfigError("ensemble.rounds must lie in [1, N=" + std::to_string(spec.n_atoms) + "], got " +
                      std::to_string(spec.feedback_rounds));
  }
  if (!std::isfinite(spec.alpha) || spec.alpha < 0.0 || spec.alpha > 1.0) {
    throw ConfigError("ensemble.alpha must lie in [0, 1], got " + std::to_string(spec.alpha));
  }
  if (spec.prior_variance && !(std::isfinite(*spec.prior_variance) && *spec.prior_variance > 0.0)) {
    throw ConfigError("ensemble.prior_variance must be finite and > 0");
  }
}

double outcome_probability(int s, double delta_phi, double rotation) {
  if (s != 0 && s != 1) throw std::invalid_argument("outcome bit must be 0 or 1");
  if (!std::isfinite(delta_phi) || !std::isfinite(rotation)) {
    throw std::invalid_argument("outcome_probability: non-finite phase");
  }
  const double sn = std::sin(delta_phi - rotation);
  return s == 1 ? 0.5 * (1.0 + sn) : 0.5 * (1.0 - sn);
}

MeasurementOutcome measure_conventional(int n_atoms, double delta_phi, Rng& rng, bool gaussian_counts) {
  check_atoms(n_atoms);
  const double p = outcome_probability(1, delta_phi, 0.0);
  MeasurementOutcome out;
  if (gaussian_counts) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const double mean = n_atoms * p;
    const double sd = std::sqrt(n_atoms * p * (1.0 - p));
    const long long k = std::llround(mean + sd * normal(rng));
    out.n_down = static_cast<int>(std::clamp<long long>(k, 0, n_atoms));
  } else {
    std::binomial_distribution<int> binomial(n_atoms, p);
    out.n_down = binomial(rng);
  }
  return out;
}

double estimate_conventional(int n_down, int n_atoms) {
  check_atoms(n_atoms);
  if (n_down < 0 || n_down > n_atoms) throw std::invalid_argument("n_down outside [0, N]");
  // 2 J3 / N with J3 = n_down - N/2.
  const double imbalance = (2.0 * n_down - n_atoms) / n_atoms;
  return std::asin(std::clamp(imbalance, -1.0, 1.0));
}

double estimate_conventional(const MeasurementOutcome& outcome, int n_atoms) {
  return estimate_conventional(outcome.n_down, n_atoms);
}

// ---------------------------------------------------------------- PhaseGrid

PhaseGrid::PhaseGrid(std::size_t points) {
  if (points < 3 || points % 2 == 0) {
    throw ConfigError("phase grid needs an odd number of points >= 3, got " + std::to_string(points));
  }
  spacing_ = 2.0 * std::numbers::pi / static_cast<double>(points - 1);
  const double center = 0.5 * static_cast<double>(points - 1);
  x_.resize(points);
  sin_.resize(points);
  cos_.resize(points);
  w_.resize(points);
  for (std::size_t i = 0; i < points; ++i) {
    // (i - center) is exact, so x[n-1-i] == -x[i] bit for bit.
    x_[i] = (static_cast<double>(i) - center) * spacing_;
    sin_[i] = std::sin(x_[i]);
    cos_[i] = std::cos(x_[i]);
    const double simpson = (i == 0 || i + 1 == points) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    w_[i] = simpson * spacing_ / 3.0;
  }
}

std::shared_ptr<const PhaseGrid> PhaseGrid::shared(std::size_t points) {
  static std::mutex mutex;
  static std::map<std::size_t, std::shared_ptr<const PhaseGrid>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[points];
  if (!slot) slot = std::make_shared<const PhaseGrid>(points);
  return slot;
}

// ---------------------------------------------------------------- Posterior

Posterior::Posterior(std::shared_ptr<const PhaseGrid> grid) : grid_(std::move(grid)) {
  if (!grid_) grid_ = PhaseGrid::shared();
  density_.assign(grid_->size(), 0.0);
  lo_ = 0;
  hi_ = grid_->size();
}

Posterior Posterior::gaussian(std::shared_ptr<const PhaseGrid> grid, double variance) {
  if (!std::isfinite(variance) || variance <= 0.0) {
    throw ConfigError("prior variance must be finite and > 0");
  }
  Posterior post(std::move(grid));
  const auto x = post.grid_->points();
  double x2_min = x[0] * x[0];
  for (double xi : x) x2_min = std::min(x2_min, xi * xi);
  // Relative to the peak, so that tiny variances keep the central points.
  for (std::size_t i = 0; i < x.size(); ++i) {
    post.density_[i] = std::exp(-(x[i] * x[i] - x2_min) / (2.0 * variance));
  }
  post.renormalize_and_prune();
  return post;
}

Posterior Posterior::uniform(std::shared_ptr<const PhaseGrid> grid) {
  Posterior post(std::move(grid));
  std::fill(post.density_.begin(), post.density_.end(), 1.0);
  post.renormalize_and_prune();
  return post;
}

Posterior Posterior::from_density(std::shared_ptr<const PhaseGrid> grid, std::vector<double> density) {
  Posterior post(std::move(grid));
  if (density.size() != post.density_.size()) throw std::invalid_argument("density size does not match grid");
  for (double d : density) {
    if (!std::isfinite(d) || d < 0.0) throw std::invalid_argument("density must be finite and >= 0");
  }
  post.density_ = std::move(density);
  if (post.normalization() <= 0.0) throw std::invalid_argument("density has zero mass");
  post.renormalize_and_prune();
  return post;
}

void Posterior::renormalize_and_prune() {
  const double mass = normalization();
  const double inv = 1.0 / mass;
  double peak = 0.0;
  for (std::size_t i = lo_; i < hi_; ++i) {
    density_[i] *= inv;
    peak = std::max(peak, density_[i]);
  }
  const double floor = peak * kPruneRelative;
  while (lo_ < hi_ && density_[lo_] < floor) density_[lo_++] = 0.0;
  while (hi_ > lo_ && density_[hi_ - 1] < floor) density_[--hi_] = 0.0;
}

void Posterior::update(int s, double rotation) {
  if (s != 0 && s != 1) throw std::invalid_argument("outcome bit must be 0 or 1");
  update_counts(s, 1, rotation);
}

void Posterior::update_counts(int n_down, int n_atoms, double rotation) {
  if (n_atoms < 1 || n_down < 0 || n_down > n_atoms) throw std::invalid_argument("invalid batch counts");
  if (!std::isfinite(rotation)) throw std::invalid_argument("non-finite rotation");
  const auto sn = grid_->sin_table();
  const auto cs = grid_->cos_table();
  const double cr = std::cos(rotation);
  const double sr = std::sin(rotation);
  const int n_up = n_atoms - n_down;
  const std::size_t n = grid_->size();

  std::vector<double> lik(hi_ - lo_);
  auto p_down = [&](std::size_t i) { return 0.5 * (1.0 + (sn[i] * cr - cs[i] * sr)); };
  auto p_up = [&](std::size_t i) { return 0.5 * (1.0 - (sn[i] * cr - cs[i] * sr)); };
  auto weighted = [&](std::size_t i) { return density_[i] * lik[i - lo_] * grid_->weight(i); };

  // Each factor is scaled by the maximum-likelihood probability k/b, so the
  // product peaks at or below 1 and only underflows where it is negligible.
  const double q_down = static_cast<double>(n_down) / n_atoms;
  const double q_up = static_cast<double>(n_up) / n_atoms;
  double log_peak = 0.0;
  if (n_down > 0) log_peak += n_down * std::log(q_down);
  if (n_up > 0) log_peak += n_up * std::log(q_up);
  double mass = 0.0;
  bool direct = true;
  {
    const double inv_down = n_down > 0 ? 1.0 / q_down : 0.0;
    const double inv_up = n_up > 0 ? 1.0 / q_up : 0.0;
    for (std::size_t i = lo_; i < hi_; ++i) {
      double l = density_[i] > 0.0 ? 1.0 : 0.0;
      if (l == 0.0) {
        lik[i - lo_] = 0.0;
        continue;
      }
      if (n_down > 0) l *= ipow(p_down(i) * inv_down, n_down);
      if (n_up > 0) l *= ipow(p_up(i) * inv_up, n_up);
      lik[i - lo_] = l;
    }
    mass = symmetric_sum(n, lo_, hi_, weighted);
    direct = mass > 1e-280;
  }
  if (!direct) {
    log_peak = -std::numeric_limits<double>::infinity();
    for (std::size_t i = lo_; i < hi_; ++i) {
      double ll = 0.0;
      if (n_down > 0) ll += n_down * std::log(p_down(i));
      if (n_up > 0) ll += n_up * std::log(p_up(i));
      lik[i - lo_] = ll;
      if (density_[i] > 0.0) log_peak = std::max(log_peak, ll);
    }
    if (!std::isfinite(log_peak)) {
      throw DegenerateUpdateError("adaptive update: record has zero likelihood on the posterior support");
    }
    for (std::size_t i = lo_; i < hi_; ++i) {
      lik[i - lo_] = density_[i] > 0.0 ? std::exp(lik[i - lo_] - log_peak) : 0.0;
    }
    mass = symmetric_sum(n, lo_, hi_, weighted);
  }
  const double log_mass = log_peak + std::log(mass);
  if (!(mass > 0.0) || log_mass < n_atoms * kLogDegeneratePerBit) {
    throw DegenerateUpdateError("adaptive update: record likelihood below 1e-30 per bit (log mass " +
                                std::to_string(log_mass) + ")");
  }
  for (std::size_t i = lo_; i < hi_; ++i) density_[i] *= lik[i - lo_];
  renormalize_and_prune();
}

double Posterior::normalization() const {
  return symmetric_sum(grid_->size(), lo_, hi_, [&](std::size_t i) { return density_[i] * grid_->weight(i); });
}

double Posterior::mean() const {
  const double first =
      symmetric_sum(grid_->size(), lo_, hi_, [&](std::size_t i) { return density_[i] * grid_->weight(i) * grid_->x(i); });
  return first / normalization();
}

Posterior posterior_update(Posterior posterior, int s, double rotation) {
  posterior.update(s, rotation);
  return posterior;
}

// ---------------------------------------------------------------- adaptive

std::vector<int> batch_sizes(int n_atoms, int rounds) {
  check_atoms(n_atoms);
  if (rounds < 1 || rounds > n_atoms) {
    throw ConfigError("rounds must lie in [1, N=" + std::to_string(n_atoms) + "], got " + std::to_string(rounds));
  }
  const int base = n_atoms / rounds;
  const int extra = n_atoms % rounds;
  std::vector<int> sizes(rounds, base);
  for (int b = rounds - extra; b < rounds; ++b) ++sizes[b];
  return sizes;
}

namespace {

// `draw(batch, size, rotation)` returns the number of ones in the batch.
template <typename Draw>
AdaptiveMeasurement run_adaptive(std::span<const int> sizes, double prior_variance,
                                 std::shared_ptr<const PhaseGrid> grid, Draw&& draw) {
  if (!grid) grid = PhaseGrid::shared();
  AdaptiveMeasurement result;
  auto& out = result.outcome;
  out.batch_sizes.assign(sizes.begin(), sizes.end());
  Posterior post = Posterior::gaussian(std::move(grid), prior_variance);
  double rotation = 0.0;
  for (std::size_t b = 0; b < sizes.size(); ++b) {
    const int ones = draw(b, sizes[b], rotation);
    out.n_down += ones;
    post.update_counts(ones, sizes[b], rotation);
    const double m = post.mean();
    out.rotations.push_back(rotation);
    out.increments.push_back(m - rotation);
    rotation = m;
  }
  result.estimate = rotation;
  return result;
}

// With a fixed prior and batch layout the posterior after each batch is a
// function of the counts read out so far, so it is memoized along the count
// prefix. Lookups return exactly what run_adaptive would compute.
struct CountNode {
  std::optional<Posterior> posterior;  // absent below the last batch
  double mean = 0.0;
  std::unordered_map<int, std::unique_ptr<CountNode>> children;
};

struct CountTree {
  const PhaseGrid* grid;
  double prior_variance;
  std::vector<int> sizes;
  CountNode root;
};

class CountTreeCache {
 public:
  static constexpr std::size_t kMaxTrees = 16;
  static constexpr std::size_t kBudgetDoubles = std::size_t{8} << 20;

  CountTree& tree(const std::shared_ptr<const PhaseGrid>& grid, double prior_variance, std::span<const int> sizes) {
    for (auto& t : trees_) {
      if (t->grid == grid.get() && t->prior_variance == prior_variance &&
          std::equal(t->sizes.begin(), t->sizes.end(), sizes.begin(), sizes.end())) {
        return *t;
      }
    }
    if (trees_.size() == kMaxTrees) clear();
    auto t = std::make_unique<CountTree>(CountTree{grid.get(), prior_variance, {sizes.begin(), sizes.end()}, {}});
    t->root.posterior = Posterior::gaussian(grid, prior_variance);
    grids_.push_back(grid);
    used_ += grid->size();
    trees_.push_back(std::move(t));
    return *trees_.back();
  }

  bool reserve(std::size_t doubles) {
    if (used_ + doubles > kBudgetDoubles) return false;
    used_ += doubles;
    return true;
  }

 private:
  void clear() {
    trees_.clear();
    grids_.clear();
    used_ = 0;
  }

  std::vector<std::unique_ptr<CountTree>> trees_;
  std::vector<std::shared_ptr<const PhaseGrid>> grids_;  // keeps tree keys alive
  std::size_t used_ = 0;
};

template <typename Draw>
AdaptiveMeasurement run_adaptive_cached(std::span<const int> sizes, double prior_variance,
                                        std::shared_ptr<const PhaseGrid> grid, Draw&& draw) {
  if (!grid) grid = PhaseGrid::shared();
  thread_local CountTreeCache cache;
  CountTree& tree = cache.tree(grid, prior_variance, sizes);
  AdaptiveMeasurement result;
  auto& out = result.outcome;
  out.batch_sizes.assign(sizes.begin(), sizes.end());

  CountNode* node = &tree.root;
  std::optional<Posterior> detached;  // used once the cache budget is spent
  double rotation = 0.0;
  for (std::size_t b = 0; b < sizes.size(); ++b) {
    const int ones = draw(b, sizes[b], rotation);
    out.n_down += ones;
    double m;
    if (node) {
      auto it = node->children.find(ones);
      if (it == node->children.end()) {
        Posterior next = *node->posterior;
        next.update_counts(ones, sizes[b], rotation);
        const bool last = b + 1 == sizes.size();
        const std::size_t cost = last ? 8 : next.grid().size();
        if (cache.reserve(cost)) {
          auto child = std::make_unique<CountNode>();
          child->mean = next.mean();
          if (!last) child->posterior = std::move(next);
          it = node->children.emplace(ones, std::move(child)).first;
        } else {
          detached = std::move(next);
          node = nullptr;
        }
      }
      if (node) {
        node = it->second.get();
        m = node->mean;
      } else {
        m = detached->mean();
      }
    } else {
      detached->update_counts(ones, sizes[b], rotation);
      m = detached->mean();
    }
    out.rotations.push_back(rotation);
    out.increments.push_back(m - rotation);
    rotation = m;
  }
  result.estimate = rotation;
  return result;
}

}  // namespace

AdaptiveMeasurement measure_adaptive(int n_atoms, double delta_phi, double prior_variance, int rounds, Rng& rng,
                                     const AdaptiveOptions& options) {
  const auto sizes = batch_sizes(n_atoms, rounds);
  if (!std::isfinite(prior_variance) || prior_variance <= 0.0) {
    throw ConfigError("prior variance must be finite and > 0");
  }
  std::vector<std::uint8_t> record;
  const bool keep = options.keep_record && !options.gaussian_counts;
  if (keep) record.reserve(n_atoms);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](std::size_t, int size, double rotation) {
    const double p = outcome_probability(1, delta_phi, rotation);
    int ones;
    if (options.gaussian_counts) {
      const double k = size * p + std::sqrt(size * p * (1.0 - p)) * normal(rng);
      ones = static_cast<int>(std::clamp<long long>(std::llround(k), 0, size));
    } else {
      // Atoms within a batch are exchangeable; their count is binomial.
      std::binomial_distribution<int> binomial(size, p);
      ones = binomial(rng);
    }
    if (keep) {
      record.insert(record.end(), static_cast<std::size_t>(ones), std::uint8_t{1});
      record.insert(record.end(), static_cast<std::size_t>(size - ones), std::uint8_t{0});
    }
    return ones;
  };
  auto result = run_adaptive_cached(sizes, prior_variance, options.grid, draw);
  result.outcome.record = std::move(record);
  return result;
}

AdaptiveMeasurement adaptive_estimate(std::span<const std::uint8_t> record, std::span<const int> sizes,
                                      double prior_variance, std::shared_ptr<const PhaseGrid> grid) {
  std::size_t total = 0;
  for (int s : sizes) {
    if (s < 1) throw std::invalid_argument("batch sizes must be >= 1");
    total += static_cast<std::size_t>(s);
  }
  if (total != record.size()) throw std::invalid_argument("record length does not match batch sizes");
  std::size_t pos = 0;
  auto draw = [&](std::size_t, int size, double) {
    int ones = 0;
    for (int a = 0; a < size; ++a) ones += record[pos++] != 0 ? 1 : 0;
    return ones;
  };
  auto result = run_adaptive(sizes, prior_variance, std::move(grid), draw);
  result.outcome.record.assign(record.begin(), record.end());
  return result;
}

}  // namespace eclock
