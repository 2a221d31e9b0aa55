#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "eclock/analysis.hpp"
#include "eclock/errors.hpp"

using namespace eclock;

namespace {

std::vector<double> gaussian_samples(std::size_t n, double sd, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> dist(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(gen);
  return v;
}

BreakdownPoint point(double gT, double f) {
  BreakdownPoint p;
  p.gamma_T = gT;
  p.report.figure_of_merit = f;
  return p;
}

}  // namespace

TEST_CASE("stability of constant offsets") {
  const std::vector<double> w(10, 0.5);
  AnalysisConfig cfg;
  const auto r = stability_from_offsets(w, cfg, 4.0, 2.0);
  CHECK(r.sigma == doctest::Approx(0.5));
  CHECK(r.sigma_stderr == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.figure_of_merit == doctest::Approx(0.25 * 4.0 / 2.0));
  CHECK(r.completed == 10);
}

TEST_CASE("stability of gaussian offsets") {
  const auto w = gaussian_samples(4000, 0.3, 11);
  AnalysisConfig cfg;
  const auto r = stability_from_offsets(w, cfg, 1.0, 1.0);
  CHECK(r.sigma == doctest::Approx(0.3).epsilon(0.03));
  // Delta method: se(sigma) = sigma / sqrt(2 n) for normal data.
  CHECK(r.sigma_stderr == doctest::Approx(0.3 / std::sqrt(8000.0)).epsilon(0.15));
  auto shuffled = w;
  std::reverse(shuffled.begin(), shuffled.end());
  CHECK(stability_from_offsets(shuffled, cfg, 1.0, 1.0).sigma == doctest::Approx(r.sigma).epsilon(1e-12));
  cfg.omega = 10.0;
  CHECK(stability_from_offsets(w, cfg, 1.0, 1.0).sigma == doctest::Approx(r.sigma / 10.0));
  CHECK(stability_from_offsets(w, cfg, 1.0, 1.0).figure_of_merit == doctest::Approx(r.figure_of_merit));
}

TEST_CASE("aborted trials are counted, not averaged") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  AnalysisConfig cfg;
  const auto r = stability_from_offsets(std::vector<double>{1.0, nan, -1.0, nan}, cfg, 1.0, 1.0);
  CHECK(r.sigma == doctest::Approx(1.0));
  CHECK(r.abort_rate == doctest::Approx(0.5));
  CHECK_THROWS_AS(stability_from_offsets(std::vector<double>{nan, 1.0}, cfg, 1.0, 1.0), EmptyReportError);
  CHECK_THROWS_AS(stability_from_offsets(std::vector<double>{}, cfg, 1.0, 1.0), EmptyReportError);
}

TEST_CASE("theory scaling") {
  // m = 1: F = 1 / (N beta1).
  CHECK(theory_figure_of_merit(1, 100, 0.1, 0.1) == doctest::Approx(0.1));
  CHECK(theory_figure_of_merit(2, 1000, 0.1, 0.1) == doctest::Approx(1e-4));
  CHECK(theory_figure_of_merit(3, 20, 0.1, 0.05) == doctest::Approx(4.0 / 8.0));
  const double s = theory_stability(2, 1000, 0.1, 0.1, 2.0, 50.0, 3.0);
  CHECK(s * s * 9.0 * 50.0 / 2.0 == doctest::Approx(theory_figure_of_merit(2, 1000, 0.1, 0.1)));
  CHECK(min_atoms(2.0, 0.1) == 20);
  CHECK(min_atoms(3.0, 0.1) == 30);
  CHECK(min_atoms(2.0, 0.3) == 7);
  CHECK_THROWS(min_atoms(1.0, 0.1));
}

TEST_CASE("spectrum of a sinusoid") {
  const std::size_t n = 4096;
  const double T1 = 0.1;
  std::vector<double> x(n);
  // 37 cycles per whole trace; with one rectangular segment this is bin 37.
  for (std::size_t i = 0; i < n; ++i) x[i] = std::sin(2 * std::numbers::pi * 37.0 * static_cast<double>(i) / n);
  const auto rect = spectrum(x, T1, 1, Window::Rectangular);
  CHECK(rect.bin_power(37) / rect.integrated_power() >= 0.95);
  CHECK(rect.frequency[37] == doctest::Approx(37.0 / (n * T1)));
  CHECK(rect.integrated_power() == doctest::Approx(0.5).epsilon(1e-9));

  const auto hann = spectrum(x, T1, 1, Window::Hann);
  const double near = hann.bin_power(36) + hann.bin_power(37) + hann.bin_power(38);
  CHECK(near / hann.integrated_power() >= 0.95);
}

TEST_CASE("white noise level and Parseval") {
  const double T1 = 0.2;
  const auto x = gaussian_samples(1 << 15, 1.5, 3);
  double mean = 0.0, var = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());

  const auto s = spectrum(x, T1);
  // Two-sided plateau: variance spread over 1/T1 of bandwidth.
  double level = 0.0;
  for (std::size_t k = 1; k < s.density.size(); ++k) level += s.density[k];
  level /= static_cast<double>(s.density.size() - 1);
  CHECK(level == doctest::Approx(var * T1).epsilon(0.1));
  CHECK(s.integrated_power() == doctest::Approx(var).epsilon(0.05));

  const auto single = spectrum(x, T1, 1, Window::Rectangular);
  CHECK(single.integrated_power() == doctest::Approx(var).epsilon(1e-9));
  CHECK_THROWS(spectrum(std::vector<double>(5, 0.0), T1, 8));
}

TEST_CASE("spectrum averaging") {
  const auto a = spectrum(gaussian_samples(1024, 1.0, 1), 0.1);
  const auto b = spectrum(gaussian_samples(1024, 1.0, 2), 0.1);
  const auto avg = average_spectra(std::vector<Spectrum>{a, b});
  CHECK(avg.density[5] == doctest::Approx((a.density[5] + b.density[5]) / 2));
  const auto c = spectrum(gaussian_samples(2048, 1.0, 2), 0.1);
  CHECK_THROWS(average_spectra(std::vector<Spectrum>{a, c}));
}

TEST_CASE("break-down location") {
  auto r = locate_breakdown({point(0.1, 4.0), point(0.2, 1.0), point(0.3, 9.0)});
  CHECK(r.beta_estimate == 0.2);
  CHECK_FALSE(r.low_confidence);

  r = locate_breakdown({point(0.1, 4.0), point(0.2, 1.0), point(0.3, 2.0)});
  CHECK(r.low_confidence);
  CHECK(r.diagnostic.find("2x") != std::string::npos);

  r = locate_breakdown({point(0.1, 4.0), point(0.2, 2.0), point(0.3, 1.0)});
  CHECK(r.beta_estimate == 0.3);
  CHECK(r.low_confidence);

  r = locate_breakdown({point(0.1, 4.0), point(0.2, 100.0)});
  CHECK(r.low_confidence);
  CHECK(r.diagnostic.find("3 grid") != std::string::npos);

  r = locate_breakdown({point(0.1, 1.0), point(0.2, std::numeric_limits<double>::infinity()), point(0.3, 2.0)});
  CHECK(r.beta_estimate == 0.1);
  CHECK_FALSE(r.low_confidence);
}

TEST_CASE("small-T scan improves with T") {
  // Well below break-down the figure of merit falls as 1/(N gamma T).
  BreakdownSpec spec;
  spec.n_atoms = 100;
  spec.grid = {0.01, 0.02, 0.04};
  spec.steps = 2000;
  spec.trials = 60;
  const auto r = breakdown_scan(spec);
  REQUIRE(r.curve.size() == 3);
  CHECK(r.curve[0].report.figure_of_merit > r.curve[1].report.figure_of_merit);
  CHECK(r.curve[1].report.figure_of_merit > r.curve[2].report.figure_of_merit);
  CHECK(r.beta_estimate == 0.04);
  CHECK(r.low_confidence);
  spec.grid = {0.2, 0.1};
  CHECK_THROWS_AS(breakdown_scan(spec), ConfigError);
}

TEST_CASE("analysis config validation") {
  AnalysisConfig cfg;
  cfg.omega = 0.0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg.omega = 1.0;
  cfg.breakdown_grid = {0.1, 0.1};
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  CHECK(window_from_string("none") == Window::Rectangular);
  CHECK_THROWS_AS(window_from_string("kaiser"), ConfigError);
}
