#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "eclock/errors.hpp"
#include "eclock/experiment.hpp"
#include "json.hpp"

using namespace eclock;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("eclock_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

ExperimentSpec small_run(const fs::path& out, int workers) {
  auto spec = parse_config({{{"trials", "4"},
                             {"clock.steps", "64"},
                             {"clock.m", "2"},
                             {"ensemble.atoms", "30"},
                             {"noise.kind", "one-over-f"},
                             {"output.noise_csv", "true"}}});
  spec.out_dir = out;
  spec.workers = workers;
  return spec;
}

}  // namespace

TEST_CASE("config text parsing") {
  const auto m = parse_config_text("# comment\n  clock.n = 3 \n\nseed=7\n");
  CHECK(m.at("clock.n") == "3");
  CHECK(m.at("seed") == "7");
  CHECK_THROWS_WITH_AS(parse_config_text("seed = 1\nbogus line\n", "f.cfg"), doctest::Contains("f.cfg:2"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text("seed = 1\nseed = 2\n"), doctest::Contains("duplicate"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("= 3\n"), ConfigError);
}

TEST_CASE("defaults resolve to a valid run") {
  const auto spec = parse_config({});
  CHECK(spec.mode == Mode::Run);
  CHECK(spec.cascade.levels() == 1);
  CHECK(spec.cascade.steps == 10000);
  CHECK(spec.cascade.ensembles[0].alpha == 0.01);
  CHECK(spec.resolved.size() == default_config().size());
  CHECK(config_hash(spec.resolved).size() == 12);
}

TEST_CASE("validation errors name the key") {
  CHECK_THROWS_WITH_AS(parse_config({{{"clock.m", "3"}, {"clock.n", "3"}}}),
                       doctest::Contains("clock.steps=10000 is not divisible"), ConfigError);
  CHECK_NOTHROW(parse_config({{{"clock.m", "3"}, {"clock.n", "2"}}}));
  CHECK_THROWS_WITH_AS(parse_config({{{"clock.mm", "3"}}}), doctest::Contains("unknown key 'clock.mm'"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config({{{"clock.m", "2"}, {"clock.n", "1"}}}), doctest::Contains("clock.n"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_config({{{"trials", "many"}}}), doctest::Contains("trials"), ConfigError);
  CHECK_THROWS_AS(parse_config({{{"mode", "dance"}}}), ConfigError);
  CHECK_THROWS_AS(preset("nope"), ConfigError);
}

TEST_CASE("layers override in order") {
  const auto spec = parse_config({{{"seed", "3"}, {"trials", "9"}}, {{"seed", "5"}}});
  CHECK(spec.cascade.seed == 5);
  CHECK(spec.cascade.trials == 9);
}

TEST_CASE("presets parse") {
  for (const auto& name : preset_names()) {
    INFO(name);
    CHECK_NOTHROW(parse_config({preset(name)}));
  }
  const auto fig2 = parse_config({preset("fig2")});
  CHECK(fig2.mode == Mode::SweepN);
  CHECK(fig2.sweep.multipliers.size() == 9);
  CHECK(fig2.sweep.atoms.empty());
  CHECK(fig2.sweep.levels == std::vector<int>{1, 2, 3, 4});
  CHECK(fig2.sweep.noises.size() == 2);
  const auto fig3 = parse_config({preset("fig3")});
  CHECK(fig3.sweep.zip);
  CHECK(fig3.sweep.atoms.front() == 4);
}

TEST_CASE("noise-dependent gains") {
  const auto spec = parse_config({});
  const auto white = cascade_for(spec, NoiseKind::White, 2, 20, 3);
  const auto pink = cascade_for(spec, NoiseKind::OneOverF, 2, 20, 3);
  CHECK(white.ensembles[2].alpha == 0.01);
  CHECK(pink.ensembles[0].alpha == 0.5);
  CHECK(pink.ensembles[1].alpha == 0.01);
  CHECK(theory_figure_of_merit(spec, white) == doctest::Approx(std::pow(20 * 0.1, -3)));
}

TEST_CASE("git blob hashes") {
  CHECK(git_blob_sha1("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(git_blob_sha1("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("number formatting round-trips") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(1e-300) == "1e-300");
  CHECK(std::stod(format_number(1.0 / 3.0)) == 1.0 / 3.0);
  CHECK(format_number(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(format_number(-std::numeric_limits<double>::infinity()) == "-inf");
}

TEST_CASE("outputs do not depend on worker count and reruns are identical") {
  const auto a = run_experiment(small_run(scratch_dir("w1"), 1));
  const auto b = run_experiment(small_run(scratch_dir("w4"), 4));
  REQUIRE(a.files.size() == b.files.size());
  CHECK(a.files.size() >= 3);
  for (std::size_t i = 0; i < a.files.size(); ++i) {
    CHECK(a.files[i].filename() == b.files[i].filename());
    CHECK(slurp(a.files[i]) == slurp(b.files[i]));
  }
  CHECK(slurp(a.manifest) == slurp(b.manifest));

  auto again = spec_from_manifest(a.manifest);
  again.out_dir = scratch_dir("rerun");
  again.workers = 2;
  const auto c = run_experiment(again);
  for (std::size_t i = 0; i < a.files.size(); ++i) CHECK(slurp(a.files[i]) == slurp(c.files[i]));

  const auto manifest = nlohmann::json::parse(slurp(a.manifest));
  CHECK(manifest["status"] == "complete");
  CHECK(manifest["config_hash"] == a.config_hash);
  for (const auto& f : manifest["files"]) {
    CHECK(f["sha1"] == git_blob_sha1(slurp(a.manifest.parent_path() / f["name"].get<std::string>())));
    CHECK(f["name"].get<std::string>().find(a.config_hash) != std::string::npos);
  }
}

TEST_CASE("tampered manifests are rejected") {
  const auto dir = scratch_dir("tamper");
  const auto out = run_experiment(small_run(dir, 1));
  auto m = nlohmann::json::parse(slurp(out.manifest));
  m["config"]["seed"] = "99";
  std::ofstream(dir / "bad.json") << m.dump();
  CHECK_THROWS_WITH_AS(spec_from_manifest(dir / "bad.json"), doctest::Contains("config_hash"), ConfigError);
  CHECK_THROWS_AS(spec_from_manifest(dir / "missing.json"), ConfigError);
}

TEST_CASE("cancellation leaves a partial manifest") {
  auto spec = small_run(scratch_dir("cancel"), 1);
  cancellation_flag() = true;
  try {
    run_experiment(spec);
    FAIL("expected an abort");
  } catch (const ExperimentAborted& e) {
    CHECK_FALSE(e.outcome().complete);
    const auto m = nlohmann::json::parse(slurp(e.outcome().manifest));
    CHECK(m["status"] == "partial");
    CHECK(m["error"].get<std::string>().find("cancel") != std::string::npos);
  }
  cancellation_flag() = false;
}

TEST_CASE("config files load from disk") {
  const auto dir = scratch_dir("cfg");
  std::ofstream(dir / "a.cfg") << "mode = sweep-n\nsweep.n = 2, 3\nsweep.m = 1\n";
  const auto spec = parse_config({load_config_file(dir / "a.cfg")});
  CHECK(spec.mode == Mode::SweepN);
  CHECK(spec.sweep.multipliers == std::vector<int>{2, 3});
  CHECK_THROWS_AS(load_config_file(dir / "none.cfg"), ConfigError);
}
