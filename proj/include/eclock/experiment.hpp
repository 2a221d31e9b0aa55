#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "eclock/analysis.hpp"
#include "eclock/cascade.hpp"

namespace eclock {

enum class Mode { Run, SweepN, ScanBeta, Spectrum };

std::string_view to_string(Mode mode);
Mode mode_from_string(std::string_view name);

/// Flat `key = value` configuration. Lines starting with '#' are comments;
/// lists are comma separated.
using ConfigMap = std::map<std::string, std::string>;

// Throws ConfigError naming the source and line of malformed input.
ConfigMap parse_config_text(std::string_view text, std::string_view source = "<config>");
ConfigMap load_config_file(const std::filesystem::path& path);

// Every recognised key with its default value.
const ConfigMap& default_config();

std::vector<std::string> preset_names();
// Throws ConfigError for unknown names.
const ConfigMap& preset(std::string_view name);

struct SweepSpec {
  std::vector<int> multipliers;        // n
  std::vector<int> atoms;              // empty: N = min_atoms(n, beta)
  double beta = 0.1;                   // used when atoms is empty
  std::vector<int> levels;             // m
  std::vector<NoiseKind> noises;
  bool zip = false;                    // pair atoms[i] with multipliers[i]
  bool round_steps = false;            // round steps up to a multiple of n^(m-1)
};

struct ExperimentSpec {
  Mode mode = Mode::Run;
  CascadeConfig cascade;
  AnalysisConfig analysis;
  std::optional<double> theory_beta;  // beta of the higher ensembles; default n / N
  SweepSpec sweep;
  bool spectrum_unlocked = true;
  bool dump_noise = false;
  bool dump_records = false;

  // Canonical key/value form of every setting; defines the config hash.
  ConfigMap resolved;

  // Not part of the configuration: they do not affect any output.
  std::filesystem::path out_dir = ".";
  int workers = 1;
};

// Merges `layers` in order over the defaults (later layers win), rejects
// unknown keys and validates the result. Throws ConfigError.
ExperimentSpec parse_config(const std::vector<ConfigMap>& layers);

// Canonical text of a resolved configuration: sorted `key = value` lines.
std::string canonical_text(const ConfigMap& resolved);

// First 12 hex digits of the SHA-1 of the canonical text.
std::string config_hash(const ConfigMap& resolved);

// SHA-1 of "blob <size>\0<content>", as computed by `git hash-object`.
std::string git_blob_sha1(std::string_view content);

// Shortest round-trip decimal form.
std::string format_number(double value);

// Cascade for one sweep point, with noise-dependent defaults applied.
CascadeConfig cascade_for(const ExperimentSpec& spec, NoiseKind noise, int n, int atoms, int levels);

// Theory figure of merit for a cascade, using spec.theory_beta or n / N.
double theory_figure_of_merit(const ExperimentSpec& spec, const CascadeConfig& cascade);

struct ExperimentOutcome {
  std::filesystem::path manifest;
  std::vector<std::filesystem::path> files;
  std::string config_hash;
  bool complete = true;
};

// Raised after a runtime failure once the partial manifest is on disk.
class ExperimentAborted : public std::runtime_error {
 public:
  ExperimentAborted(const std::string& what, ExperimentOutcome outcome)
      : std::runtime_error(what), outcome_(std::move(outcome)) {}
  const ExperimentOutcome& outcome() const { return outcome_; }

 private:
  ExperimentOutcome outcome_;
};

// Set to stop an experiment between trials; the manifest is then partial.
std::atomic<bool>& cancellation_flag();

// Runs the experiment and writes data files plus `manifest_<hash>.json` into
// spec.out_dir. Data files are written only together with a manifest.
ExperimentOutcome run_experiment(const ExperimentSpec& spec);

// Loads the configuration stored in a manifest.
ExperimentSpec spec_from_manifest(const std::filesystem::path& manifest);

}  // namespace eclock
