// Acceptance run: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.

#include <boost/math/distributions/chi_squared.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "../support/identities.hpp"
#include "../support/oracles.hpp"
#include "eclock/analysis.hpp"
#include "eclock/cascade.hpp"
#include "eclock/experiment.hpp"

using namespace eclock;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

CascadeConfig cascade(int m, int atoms, int n, double T1, std::int64_t steps, int trials,
                      NoiseKind noise = NoiseKind::White, Protocol protocol = Protocol::Conventional) {
  CascadeConfig c;
  EnsembleSpec e;
  e.n_atoms = atoms;
  e.protocol = protocol;
  e.alpha = 0.01;
  c.ensembles.assign(static_cast<std::size_t>(m), e);
  if (noise == NoiseKind::OneOverF) c.ensembles[0].alpha = 0.5;
  c.n = n;
  c.T1 = T1;
  c.steps = steps;
  c.trials = trials;
  c.noise = {noise, 1.0};
  return c;
}

StabilityReport measure(const CascadeConfig& c) {
  AnalysisConfig a;
  a.bootstrap_resamples = 0;
  return stability(run_trials(c, 1), a, c.tau(), c.noise.gamma);
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("eclock_acceptance_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Rows of a CSV file keyed by column name.
std::vector<std::map<std::string, std::string>> read_csv(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line;
  std::vector<std::string> header;
  std::vector<std::map<std::string, std::string>> rows;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  std::getline(in, line);
  header = split(line);
  while (std::getline(in, line)) {
    const auto cells = split(line);
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) row[header[i]] = cells[i];
    rows.push_back(row);
  }
  return rows;
}

fs::path output(const ExperimentOutcome& o, const std::string& suffix) {
  for (const auto& f : o.files) {
    const auto name = f.filename().string();
    if (name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      return f;
    }
  }
  throw std::runtime_error("missing output " + suffix);
}

Verdict single_ensemble() {
  const auto c = cascade(1, 10000, 2, 0.1, 10000, 200);
  const double f = measure(c).figure_of_merit;
  const double expected = 1.0 / (10000 * 0.1);
  const double rel = f / expected - 1.0;
  return {std::abs(rel) <= 0.15, fmt("tau*omega^2*sigma^2 = %.4g, expected 1/(N T1) = %.4g (%+.1f%%)", f, expected,
                                     100 * rel)};
}

Verdict two_ensembles() {
  // Two readings of beta2: the residual phase variance n/N handed to the
  // second ensemble (n = 10, beta2 = 0.01), and n = 100 so that n/N = 0.1.
  bool pass = true;
  std::string detail;
  for (int n : {10, 100}) {
    const auto c = cascade(2, 1000, n, 0.1, 10000, 200);
    const double sigma = measure(c).sigma;
    const double beta2 = static_cast<double>(n) / 1000.0;
    const double theory = theory_stability(2, 1000, 0.1, beta2, 1.0, c.tau());
    const double rel = sigma / theory - 1.0;
    pass = pass && std::abs(rel) <= 0.2;
    detail += fmt("n=%d beta2=%.2g: sigma=%.4g theory=%.4g (%+.1f%%); ", n, beta2, sigma, theory, 100 * rel);
  }
  {
    const auto c = cascade(2, 1000, 10, 0.1, 10000, 200);
    const double literal = theory_stability(2, 1000, 0.1, 0.1, 1.0, c.tau());
    detail += fmt("[n=10 against beta2=0.1 would predict %.4g]", literal);
  }
  return {pass, detail};
}

Verdict exponential_gain() {
  bool pass = true;
  std::string detail;
  for (auto noise : {NoiseKind::White, NoiseKind::OneOverF}) {
    std::vector<double> s2;
    for (int m = 1; m <= 3; ++m) {
      const double s = measure(cascade(m, 20, 2, 0.1, 1 << 14, 500, noise)).sigma;
      s2.push_back(s * s);
    }
    for (std::size_t i = 0; i + 1 < s2.size(); ++i) {
      const double r = s2[i] / s2[i + 1];
      pass = pass && r >= 1.5 && r <= 2.8;
      detail += fmt("%s m%zu/m%zu=%.3f ", std::string(to_string(noise)).c_str(), i + 1, i + 2, r);
    }
  }
  return {pass, detail};
}

Verdict adaptive_small_n() {
  bool pass = true;
  std::string detail;
  for (auto noise : {NoiseKind::White, NoiseKind::OneOverF}) {
    const int atoms = noise == NoiseKind::White ? 4 : 7;
    const double T1 = noise == NoiseKind::White ? 0.3 : 0.2;
    const double s1 = measure(cascade(1, atoms, 2, T1, 10000, 300, noise, Protocol::Adaptive)).sigma;
    const double s2 = measure(cascade(2, atoms, 2, T1, 10000, 300, noise, Protocol::Adaptive)).sigma;
    const double r = (s1 * s1) / (s2 * s2);
    pass = pass && r >= 1.5;
    detail += fmt("%s N=%d: sigma^2(1)/sigma^2(2)=%.3f ", std::string(to_string(noise)).c_str(), atoms, r);
  }
  return {pass, detail};
}

Verdict breakdown_points() {
  struct Case {
    const char* preset;
    double lo, hi;
  };
  bool pass = true;
  std::string detail;
  for (const Case& k : {Case{"figS1-conventional", 0.05, 0.2}, Case{"figS1-adaptive", 0.2, 0.45},
                        Case{"figS1-adaptive-1f", 0.12, 0.3}}) {
    auto spec = parse_config({preset(k.preset)});
    spec.out_dir = scratch(k.preset);
    const auto out = run_experiment(spec);
    const auto row = read_csv(output(out, "breakdown.csv")).at(0);
    const double beta = std::stod(row.at("beta_estimate"));
    const bool ok = beta >= k.lo && beta <= k.hi;
    pass = pass && ok;
    detail += fmt("%s beta=%.3g in [%.3g, %.3g]%s%s; ", k.preset, beta, k.lo, k.hi,
                  row.at("low_confidence") == "true" ? " low-confidence: " : "",
                  row.at("low_confidence") == "true" ? row.at("diagnostic").c_str() : "");
  }
  return {pass, detail};
}

Verdict spectrum_whitening() {
  auto spec = parse_config({preset("fig1b")});
  spec.out_dir = scratch("fig1b");
  const auto out = run_experiment(spec);
  const auto rows = read_csv(output(out, "plateau.csv"));
  bool pass = true;
  std::string detail;
  double previous = std::numeric_limits<double>::infinity();
  for (const auto& row : rows) {
    if (row.at("label") == "unlocked") continue;
    const double plateau = std::stod(row.at("plateau"));
    const double flatness = std::stod(row.at("flatness"));
    if (row.at("m") == "1") {
      const double ref = std::stod(row.at("reference"));
      const double ratio = plateau / ref;
      pass = pass && flatness <= 2.0 && ratio >= 0.5 && ratio <= 2.0;
      detail += fmt("m1 plateau=%.3g (ref %.3g) flatness=%.2f; ", plateau, ref, flatness);
    } else {
      detail += fmt("m%s plateau=%.3g; ", row.at("m").c_str(), plateau);
    }
    pass = pass && plateau < previous;
    previous = plateau;
  }
  return {pass, detail};
}

Verdict exact_identities() {
  Rng rng(7, 7);
  double worst_window = 0.0, worst_offset = 0.0;
  for (int i = 0; i < 1000; ++i) {
    auto c = eclock::testing::random_cascade(rng);
    for (auto& e : c.ensembles) {
      e.n_atoms = 5 + static_cast<int>(rng() % 200);
      if (rng() % 4 == 0) e.protocol = Protocol::Adaptive;
    }
    c.grid_points = 257;
    RunOptions o;
    o.keep_traces = true;
    const auto r = run_trial(c, 0, o);
    if (r.aborted()) continue;
    worst_window = std::max(worst_window, eclock::testing::max_window_identity_error(c, r));
    worst_offset = std::max(worst_offset, eclock::testing::residual_form_gap(r));
  }
  return {worst_window <= 1e-12 && worst_offset <= 1e-9,
          fmt("max window-phase error %.3g rad, max mean-offset relative gap %.3g", worst_window, worst_offset)};
}

Verdict estimator_oracles() {
  double min_p = 1.0;
  for (int n = 1; n <= 4; ++n) {
    for (double phi : {0.0, 0.5, -1.2}) {
      const auto probs = eclock::testing::enumerate_counts(n, phi);
      Rng rng(100 + n, 1);
      std::vector<double> counts(probs.size(), 0.0);
      const int draws = 100000;
      for (int d = 0; d < draws; ++d) counts[static_cast<std::size_t>(measure_conventional(n, phi, rng).n_down)] += 1;
      double chi2 = 0.0;
      int dof = -1;
      for (std::size_t k = 0; k < probs.size(); ++k) {
        const double expected = probs[k] * draws;
        chi2 += (counts[k] - expected) * (counts[k] - expected) / expected;
        ++dof;
      }
      min_p = std::min(min_p, boost::math::cdf(boost::math::complement(boost::math::chi_squared(dof), chi2)));
    }
  }
  Rng rng(5, 5);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int n = 1 + static_cast<int>(rng() % 60);
    const int rounds = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(std::min(n, 6)));
    const double prior = 0.02 + 0.8 * rng.uniform();
    const double phi = std::sqrt(prior) * (2 * rng.uniform() - 1);
    std::vector<std::uint8_t> record;
    for (int a = 0; a < n; ++a) record.push_back(rng.uniform() < (1 + std::sin(phi)) / 2 ? 1 : 0);
    const auto sizes = batch_sizes(n, rounds);
    const double got = adaptive_estimate(record, sizes, prior).estimate;
    worst = std::max(worst, std::abs(got - eclock::testing::quadrature_estimate(record, sizes, prior)));
  }
  return {min_p > 0.001 && worst <= 1e-6,
          fmt("binomial sampler min chi-square p = %.3g; adaptive max |error| vs quadrature = %.3g rad", min_p, worst)};
}

Verdict determinism() {
  const std::vector<ConfigMap> cases = {
      {{"mode", "run"}, {"trials", "6"}, {"clock.m", "3"}, {"clock.steps", "400"}, {"ensemble.atoms", "25"},
       {"noise.kind", "one-over-f"}, {"output.noise_csv", "true"}, {"output.records_csv", "true"}},
      {{"mode", "sweep-n"}, {"trials", "5"}, {"clock.steps", "300"}, {"sweep.n", "2, 3"}, {"sweep.m", "1, 2"},
       {"ensemble.protocol", "adaptive"}, {"ensemble.atoms", "12"}, {"measurement.grid_points", "513"}},
      {{"mode", "scan-beta"}, {"trials", "5"}, {"clock.steps", "300"}, {"analysis.breakdown_grid", "0.1, 0.3"}},
      {{"mode", "spectrum"}, {"trials", "3"}, {"clock.steps", "512"}, {"sweep.m", "1, 2"}, {"ensemble.atoms", "20"}},
  };
  std::size_t compared = 0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    auto spec = parse_config({cases[i]});
    spec.out_dir = scratch("det_a" + std::to_string(i));
    spec.workers = 1;
    const auto a = run_experiment(spec);
    auto rerun = spec_from_manifest(a.manifest);
    rerun.out_dir = scratch("det_b" + std::to_string(i));
    rerun.workers = 4;
    const auto b = run_experiment(rerun);
    if (a.files.size() != b.files.size() || slurp(a.manifest) != slurp(b.manifest)) {
      return {false, "manifest differs for mode " + std::string(to_string(spec.mode))};
    }
    for (std::size_t f = 0; f < a.files.size(); ++f, ++compared) {
      if (slurp(a.files[f]) != slurp(b.files[f])) return {false, a.files[f].filename().string() + " differs"};
    }
  }
  return {true, fmt("%zu output files byte-identical across manifest reruns with 1 vs 4 workers", compared)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"1 single-ensemble stability law", single_ensemble},
      {"2 two-ensemble stability law", two_ensembles},
      {"3 exponential gain with ensemble count", exponential_gain},
      {"4 adaptive operation at small N", adaptive_small_n},
      {"5 break-down points", breakdown_points},
      {"6 spectrum whitening", spectrum_whitening},
      {"7 exact bookkeeping identities", exact_identities},
      {"8 estimator oracles", estimator_oracles},
      {"9 determinism", determinism},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %s: %s (%.1f s)\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str(), secs);
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
