"""Simulation of atomic clocks locked to cascaded atomic ensembles."""

from ._eclock import (
    ConfigError,
    DegenerateUpdateError,
    adaptive_estimate,
    batch_sizes,
    estimate_conventional,
    generate_noise,
    measure_conventional,
    min_atoms,
    preset,
    presets,
    run_experiment,
    run_trace,
    run_trials,
    spectrum,
    stability,
    theory_figure_of_merit,
    theory_stability,
)

__all__ = [
    "ConfigError",
    "DegenerateUpdateError",
    "adaptive_estimate",
    "batch_sizes",
    "estimate_conventional",
    "generate_noise",
    "measure_conventional",
    "min_atoms",
    "preset",
    "presets",
    "run_experiment",
    "run_trace",
    "run_trials",
    "spectrum",
    "stability",
    "theory_figure_of_merit",
    "theory_stability",
]
