#include <csignal>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "eclock/errors.hpp"
#include "eclock/experiment.hpp"

namespace {

constexpr int kConfigError = 1;
constexpr int kRuntimeAbort = 2;

struct CommonOptions {
  std::string config;
  std::string preset;
  std::vector<std::string> set;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials;
  int workers = 1;
  std::string out = ".";
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "Config file with `key = value` lines");
  cmd->add_option("--preset", o.preset, "Named preset applied below the config file");
  cmd->add_option("--set", o.set, "Override one key, e.g. --set clock.m=2 (repeatable)");
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--trials", o.trials, "Trials per configuration");
  cmd->add_option("--workers", o.workers, "Worker threads (does not change results)")->check(CLI::PositiveNumber);
  cmd->add_option("--out", o.out, "Output directory");
}

eclock::ExperimentSpec build_spec(eclock::Mode mode, const CommonOptions& o) {
  std::vector<eclock::ConfigMap> layers;
  if (!o.preset.empty()) layers.push_back(eclock::preset(o.preset));
  if (!o.config.empty()) layers.push_back(eclock::load_config_file(o.config));
  eclock::ConfigMap flags;
  for (const auto& kv : o.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw eclock::ConfigError("--set expects key=value, got '" + kv + "'");
    auto parsed = eclock::parse_config_text(kv, "--set");
    flags.insert(parsed.begin(), parsed.end());
  }
  if (o.seed) flags["seed"] = std::to_string(*o.seed);
  if (o.trials) flags["trials"] = std::to_string(*o.trials);
  flags["mode"] = std::string(eclock::to_string(mode));
  layers.push_back(flags);
  auto spec = eclock::parse_config(layers);
  spec.workers = o.workers;
  spec.out_dir = o.out;
  return spec;
}

int execute(const eclock::ExperimentSpec& spec) {
  const auto outcome = eclock::run_experiment(spec);
  for (const auto& f : outcome.files) std::cout << f.string() << "\n";
  std::cout << outcome.manifest.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Atomic clock locked to a cascade of atomic ensembles"};
  app.require_subcommand(1);

  struct Sub {
    eclock::Mode mode;
    const char* name;
    const char* help;
  };
  const std::vector<Sub> subs = {
      {eclock::Mode::Run, "run", "Run trials of one clock configuration"},
      {eclock::Mode::SweepN, "sweep-n", "Stability table over atom numbers, multipliers and ensemble counts"},
      {eclock::Mode::ScanBeta, "scan-beta", "Break-down scan of a single-ensemble clock over gamma*T"},
      {eclock::Mode::Spectrum, "spectrum", "Frequency noise spectra of the unlocked and locked LO"},
  };
  std::vector<CommonOptions> options(subs.size());
  std::vector<CLI::App*> commands;
  for (std::size_t i = 0; i < subs.size(); ++i) {
    auto* cmd = app.add_subcommand(subs[i].name, subs[i].help);
    add_common(cmd, options[i]);
    commands.push_back(cmd);
  }

  std::string manifest;
  CommonOptions rerun_opts;
  auto* rerun = app.add_subcommand("rerun", "Repeat an experiment from its manifest");
  rerun->add_option("--manifest", manifest, "Manifest JSON written by a previous run")->required();
  rerun->add_option("--workers", rerun_opts.workers, "Worker threads")->check(CLI::PositiveNumber);
  rerun->add_option("--out", rerun_opts.out, "Output directory");

  auto* list = app.add_subcommand("presets", "List preset names and their keys");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  std::signal(SIGINT, [](int) { eclock::cancellation_flag().store(true); });
  std::signal(SIGTERM, [](int) { eclock::cancellation_flag().store(true); });

  try {
    if (list->parsed()) {
      for (const auto& name : eclock::preset_names()) {
        std::cout << "[" << name << "]\n" << eclock::canonical_text(eclock::preset(name));
      }
      return 0;
    }
    if (rerun->parsed()) {
      auto spec = eclock::spec_from_manifest(manifest);
      spec.workers = rerun_opts.workers;
      spec.out_dir = rerun_opts.out;
      return execute(spec);
    }
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (commands[i]->parsed()) return execute(build_spec(subs[i].mode, options[i]));
    }
  } catch (const eclock::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const eclock::ExperimentAborted& e) {
    std::cerr << "aborted: " << e.what() << "\npartial manifest: " << e.outcome().manifest.string() << "\n";
    return kRuntimeAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeAbort;
  }
  return kConfigError;
}
