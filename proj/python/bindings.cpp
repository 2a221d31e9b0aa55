#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "eclock/analysis.hpp"
#include "eclock/cascade.hpp"
#include "eclock/errors.hpp"
#include "eclock/experiment.hpp"

namespace py = pybind11;
using namespace eclock;

namespace {

py::array_t<double> to_array(std::vector<double> v) {
  auto* heap = new std::vector<double>(std::move(v));
  py::capsule owner(heap, [](void* p) { delete static_cast<std::vector<double>*>(p); });
  return py::array_t<double>(static_cast<py::ssize_t>(heap->size()), heap->data(), owner);
}

std::vector<double> to_vector(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 1) throw py::value_error("expected a one-dimensional array");
  return {a.data(), a.data() + a.size()};
}

CascadeConfig make_cascade(int m, int n_atoms, int n, double T1, std::int64_t steps, const std::string& noise,
                           double gamma, const std::string& protocol, std::optional<std::vector<double>> alpha,
                           int rounds, std::uint64_t seed, int trials, std::size_t grid_points) {
  CascadeConfig c;
  EnsembleSpec e;
  e.n_atoms = n_atoms;
  e.protocol = protocol_from_string(protocol);
  e.feedback_rounds = rounds;
  c.ensembles.assign(static_cast<std::size_t>(m), e);
  c.n = n;
  c.T1 = T1;
  c.steps = steps;
  c.noise = {noise_kind_from_string(noise), gamma};
  std::vector<double> gains = alpha.value_or(c.noise.kind == NoiseKind::White ? std::vector<double>{0.01}
                                                                               : std::vector<double>{0.5, 0.01});
  if (gains.empty()) throw ConfigError("alpha must not be empty");
  for (std::size_t j = 0; j < c.ensembles.size(); ++j) c.ensembles[j].alpha = gains[std::min(j, gains.size() - 1)];
  c.seed = seed;
  c.trials = trials;
  c.grid_points = grid_points;
  validate(c);
  return c;
}

}  // namespace

PYBIND11_MODULE(_eclock, mod) {
  mod.doc() = "Cascaded atomic clock simulation";

  py::register_exception<ConfigError>(mod, "ConfigError", PyExc_ValueError);
  py::register_exception<DegenerateUpdateError>(mod, "DegenerateUpdateError", PyExc_RuntimeError);

  mod.def(
      "generate_noise",
      [](const std::string& kind, double gamma, double T1, std::size_t steps, std::uint64_t seed) {
        Rng rng(seed, static_cast<std::uint64_t>(Stream::Noise));
        return to_array(generate({noise_kind_from_string(kind), gamma}, T1, steps, rng).increments);
      },
      py::arg("kind"), py::arg("gamma"), py::arg("T1"), py::arg("steps"), py::arg("seed") = 1,
      "Per-interval LO phase increments of the free-running oscillator.");

  mod.def(
      "measure_conventional",
      [](int n_atoms, double phase, std::uint64_t seed) {
        Rng rng(seed, static_cast<std::uint64_t>(Stream::Measurement));
        return measure_conventional(n_atoms, phase, rng).n_down;
      },
      py::arg("n_atoms"), py::arg("phase"), py::arg("seed") = 1, "Number of atoms read out in the upper state.");
  mod.def("estimate_conventional", py::overload_cast<int, int>(&estimate_conventional), py::arg("n_down"),
          py::arg("n_atoms"));
  mod.def("batch_sizes", &batch_sizes, py::arg("n_atoms"), py::arg("rounds"));
  mod.def(
      "adaptive_estimate",
      [](const std::vector<std::uint8_t>& record, const std::vector<int>& sizes, double prior_variance,
         std::size_t grid_points) {
        const auto r = adaptive_estimate(record, sizes, prior_variance, PhaseGrid::shared(grid_points));
        return py::make_tuple(r.estimate, r.outcome.rotations);
      },
      py::arg("record"), py::arg("batch_sizes"), py::arg("prior_variance"),
      py::arg("grid_points") = PhaseGrid::kDefaultPoints,
      "Replays a readout record; returns (estimate, rotation applied before each batch).");

  mod.def(
      "run_trials",
      [](int m, int n_atoms, int n, double T1, std::int64_t steps, const std::string& noise, double gamma,
         const std::string& protocol, std::optional<std::vector<double>> alpha, int rounds, std::uint64_t seed,
         int trials, std::size_t grid_points, int workers) {
        const auto c =
            make_cascade(m, n_atoms, n, T1, steps, noise, gamma, protocol, alpha, rounds, seed, trials, grid_points);
        std::vector<ClockRunResult> results;
        {
          py::gil_scoped_release release;
          results = run_trials(c, workers);
        }
        std::vector<double> w;
        for (const auto& r : results) w.push_back(r.omega_bar);
        return to_array(std::move(w));
      },
      py::arg("m"), py::arg("n_atoms"), py::arg("n") = 2, py::arg("T1") = 0.1, py::arg("steps") = 10000,
      py::arg("noise") = "white", py::arg("gamma") = 1.0, py::arg("protocol") = "conventional",
      py::arg("alpha") = py::none(), py::arg("rounds") = 4, py::arg("seed") = 1, py::arg("trials") = 100,
      py::arg("grid_points") = PhaseGrid::kDefaultPoints, py::arg("workers") = 1,
      "Mean frequency offset of each trial; NaN marks aborted trials.");

  mod.def(
      "run_trace",
      [](int m, int n_atoms, int n, double T1, std::int64_t steps, const std::string& noise, double gamma,
         const std::string& protocol, std::optional<std::vector<double>> alpha, std::uint64_t seed,
         std::uint64_t trial) {
        const auto c = make_cascade(m, n_atoms, n, T1, steps, noise, gamma, protocol, alpha, 4, seed, 1,
                                    PhaseGrid::kDefaultPoints);
        RunOptions o;
        o.keep_traces = true;
        const auto r = run_trial(c, trial, o);
        py::dict out;
        out["omega_bar"] = r.omega_bar;
        out["omega_bar_residual"] = r.omega_bar_residual;
        out["locked"] = to_array(locked_frequency_trace(r));
        out["unlocked"] = to_array(unlocked_frequency_trace(r));
        out["phase"] = to_array(r.true_phase);
        return out;
      },
      py::arg("m"), py::arg("n_atoms"), py::arg("n") = 2, py::arg("T1") = 0.1, py::arg("steps") = 10000,
      py::arg("noise") = "white", py::arg("gamma") = 1.0, py::arg("protocol") = "conventional",
      py::arg("alpha") = py::none(), py::arg("seed") = 1, py::arg("trial") = 0,
      "One traced trial: mean offset plus locked and free-running frequency records.");

  mod.def(
      "stability",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& omega_bar, double tau, double gamma,
         double omega, int bootstrap_resamples) {
        AnalysisConfig a;
        a.omega = omega;
        a.bootstrap_resamples = bootstrap_resamples;
        const auto r = stability_from_offsets(to_vector(omega_bar), a, tau, gamma);
        py::dict out;
        out["sigma"] = r.sigma;
        out["sigma_stderr"] = r.sigma_stderr;
        out["figure_of_merit"] = r.figure_of_merit;
        out["abort_rate"] = r.abort_rate;
        out["completed"] = r.completed;
        return out;
      },
      py::arg("omega_bar"), py::arg("tau"), py::arg("gamma") = 1.0, py::arg("omega") = 1.0,
      py::arg("bootstrap_resamples") = 1000);

  mod.def(
      "spectrum",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& trace, double T1, int segments,
         const std::string& window) {
        const auto s = spectrum(to_vector(trace), T1, segments, window_from_string(window));
        return py::make_tuple(to_array(s.frequency), to_array(s.density));
      },
      py::arg("trace"), py::arg("T1"), py::arg("segments") = 8, py::arg("window") = "hann",
      "Two-sided Welch PSD on f >= 0; returns (frequency, density).");

  mod.def("theory_stability", &theory_stability, py::arg("m"), py::arg("n_atoms"), py::arg("beta1"),
          py::arg("beta"), py::arg("gamma"), py::arg("tau"), py::arg("omega") = 1.0);
  mod.def("theory_figure_of_merit", py::overload_cast<int, int, double, double>(&theory_figure_of_merit),
          py::arg("m"), py::arg("n_atoms"), py::arg("beta1"), py::arg("beta"));
  mod.def("min_atoms", &min_atoms, py::arg("a"), py::arg("beta"));

  mod.def("presets", &preset_names);
  mod.def(
      "preset", [](const std::string& name) { return preset(name); }, py::arg("name"));
  mod.def(
      "run_experiment",
      [](const std::vector<ConfigMap>& layers, const std::filesystem::path& out_dir, int workers) {
        auto spec = parse_config(layers);
        spec.out_dir = out_dir;
        spec.workers = workers;
        ExperimentOutcome o;
        {
          py::gil_scoped_release release;
          o = run_experiment(spec);
        }
        return py::make_tuple(o.manifest, o.files);
      },
      py::arg("layers"), py::arg("out_dir"), py::arg("workers") = 1,
      "Runs an experiment from config layers (later layers win); returns (manifest, data files).");
}
