#include "eclock/experiment.hpp"

#include <openssl/sha.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "eclock/errors.hpp"
#include "json.hpp"

namespace eclock {
namespace {

using json = nlohmann::json;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  s = trim(s);
  if (s.empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = s.find(',', start);
    out.emplace_back(trim(s.substr(start, comma == std::string_view::npos ? comma : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError(std::string(key) + ": invalid value '" + std::string(value) + "' (expected " +
                    std::string(expected) + ")");
}

template <typename T>
T parse_integer(std::string_view key, std::string_view s) {
  s = trim(s);
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) bad_value(key, s, "an integer");
  return value;
}

double parse_double(std::string_view key, std::string_view s) {
  s = trim(s);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty() || !std::isfinite(value)) {
    bad_value(key, s, "a finite number");
  }
  return value;
}

bool parse_bool(std::string_view key, std::string_view s) {
  s = trim(s);
  if (s == "true" || s == "yes" || s == "1" || s == "on") return true;
  if (s == "false" || s == "no" || s == "0" || s == "off") return false;
  bad_value(key, s, "true | false");
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += items[i];
  }
  return out;
}

// Each key normalizes its value to a canonical string or throws.
using Normalizer = std::function<std::string(std::string_view key, std::string_view value)>;

Normalizer integer_key(long long min) {
  return [min](std::string_view key, std::string_view v) {
    const auto x = parse_integer<long long>(key, v);
    if (x < min) throw ConfigError(std::string(key) + " must be >= " + std::to_string(min));
    return std::to_string(x);
  };
}

Normalizer unsigned_key() {
  return [](std::string_view key, std::string_view v) { return std::to_string(parse_integer<std::uint64_t>(key, v)); };
}

Normalizer double_key() {
  return [](std::string_view key, std::string_view v) { return format_number(parse_double(key, v)); };
}

Normalizer bool_key() {
  return [](std::string_view key, std::string_view v) { return std::string(parse_bool(key, v) ? "true" : "false"); };
}

template <typename Parse, typename Print>
Normalizer enum_key(Parse parse, Print print) {
  return [parse, print](std::string_view key, std::string_view v) {
    try {
      return std::string(print(parse(trim(v))));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(key) + ": " + e.what());
    }
  };
}

// Comma list of items; `allow_auto` also accepts the single word "auto".
Normalizer list_key(Normalizer item, bool allow_auto) {
  return [item, allow_auto](std::string_view key, std::string_view v) {
    if (allow_auto && trim(v) == "auto") return std::string("auto");
    std::vector<std::string> out;
    for (const auto& s : split_list(v)) out.push_back(item(key, s));
    return join(out);
  };
}

const std::map<std::string, std::pair<std::string, Normalizer>>& schema() {
  static const std::map<std::string, std::pair<std::string, Normalizer>> keys = [] {
    std::map<std::string, std::pair<std::string, Normalizer>> k;
    auto noise = enum_key(noise_kind_from_string, [](NoiseKind x) { return to_string(x); });
    k["mode"] = {"run", enum_key(mode_from_string, [](Mode x) { return to_string(x); })};
    k["seed"] = {"1", unsigned_key()};
    k["trials"] = {"100", integer_key(1)};
    k["clock.m"] = {"1", integer_key(1)};
    k["clock.n"] = {"2", integer_key(1)};
    k["clock.steps"] = {"10000", integer_key(1)};
    k["clock.T1"] = {"0.1", double_key()};
    k["noise.kind"] = {"white", noise};
    k["noise.gamma"] = {"1", double_key()};
    k["ensemble.protocol"] = {"conventional",
                              enum_key(protocol_from_string, [](Protocol x) { return to_string(x); })};
    k["ensemble.atoms"] = {"100", integer_key(1)};
    k["ensemble.alpha"] = {"auto", list_key(double_key(), true)};
    k["ensemble.rounds"] = {"4", integer_key(1)};
    k["ensemble.prior_variance"] = {"auto", list_key(double_key(), true)};
    k["measurement.grid_points"] = {"4097", integer_key(3)};
    k["measurement.gaussian_fast_path"] = {"false", bool_key()};
    k["analysis.omega"] = {"1", double_key()};
    k["analysis.beta"] = {"auto", list_key(double_key(), true)};
    k["analysis.spectrum_segments"] = {"8", integer_key(1)};
    k["analysis.window"] = {"hann", enum_key(window_from_string, [](Window x) { return to_string(x); })};
    k["analysis.bootstrap_resamples"] = {"1000", integer_key(0)};
    k["analysis.breakdown_grid"] = {"0.02, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3", list_key(double_key(), false)};
    k["sweep.n"] = {"", list_key(integer_key(1), false)};
    k["sweep.atoms"] = {"", list_key(integer_key(1), true)};
    k["sweep.beta"] = {"0.1", double_key()};
    k["sweep.m"] = {"", list_key(integer_key(1), false)};
    k["sweep.noise"] = {"", list_key(noise, false)};
    k["sweep.zip"] = {"false", bool_key()};
    k["sweep.round_steps"] = {"false", bool_key()};
    k["spectrum.unlocked"] = {"true", bool_key()};
    k["output.noise_csv"] = {"false", bool_key()};
    k["output.records_csv"] = {"false", bool_key()};
    return k;
  }();
  return keys;
}

std::vector<int> int_list(const std::string& s) {
  std::vector<int> out;
  for (const auto& item : split_list(s)) out.push_back(parse_integer<int>("", item));
  return out;
}

std::vector<double> double_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) out.push_back(parse_double("", item));
  return out;
}

std::string hex(const unsigned char* bytes, std::size_t n) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    out += digits[bytes[i] >> 4];
    out += digits[bytes[i] & 15];
  }
  return out;
}

std::string sha1_hex(std::string_view data) {
  std::array<unsigned char, SHA_DIGEST_LENGTH> digest{};
  SHA1(reinterpret_cast<const unsigned char*>(data.data()), data.size(), digest.data());
  return hex(digest.data(), digest.size());
}

std::int64_t ipow(std::int64_t base, int exp) {
  std::int64_t p = 1;
  for (int i = 0; i < exp; ++i) p *= base;
  return p;
}

// ----------------------------------------------------------------- output

class Csv {
 public:
  explicit Csv(std::initializer_list<std::string_view> header) {
    bool first = true;
    for (auto h : header) {
      if (!first) text_ += ',';
      text_ += h;
      first = false;
    }
    text_ += '\n';
  }
  Csv& cell(std::string_view s) {
    if (!line_start_) text_ += ',';
    text_ += s;
    line_start_ = false;
    return *this;
  }
  Csv& cell(double x) { return cell(format_number(x)); }
  Csv& cell(long long x) { return cell(std::to_string(x)); }
  Csv& cell(int x) { return cell(std::to_string(x)); }
  Csv& cell(std::size_t x) { return cell(std::to_string(x)); }
  void end_row() {
    text_ += '\n';
    line_start_ = true;
  }
  const std::string& text() const { return text_; }

 private:
  std::string text_;
  bool line_start_ = true;
};

// Serializes every file write and the manifest.
class OutputWriter {
 public:
  OutputWriter(const ExperimentSpec& spec, std::string hash)
      : spec_(spec), hash_(std::move(hash)), prefix_(std::string(to_string(spec.mode)) + "_" + hash_) {
    std::error_code ec;
    std::filesystem::create_directories(spec.out_dir, ec);
    if (ec) throw ConfigError("--out: cannot create directory '" + spec.out_dir.string() + "': " + ec.message());
  }

  void write(const std::string& suffix, const std::string& content) {
    const auto name = prefix_ + "_" + suffix;
    write_file(spec_.out_dir / name, content);
    files_.push_back({{"name", name}, {"bytes", content.size()}, {"sha1", git_blob_sha1(content)}});
    paths_.push_back(spec_.out_dir / name);
  }

  json& summary() { return summary_; }

  ExperimentOutcome finish(bool complete, const std::string& error = {}) {
    json m;
    m["format"] = "eclock-manifest/1";
    m["mode"] = std::string(to_string(spec_.mode));
    m["config_hash"] = hash_;
    m["config"] = spec_.resolved;
    m["status"] = complete ? "complete" : "partial";
    if (!error.empty()) m["error"] = error;
    m["files"] = files_;
    m["summary"] = summary_;
    ExperimentOutcome out;
    out.manifest = spec_.out_dir / (prefix_ + "_manifest.json");
    write_file(out.manifest, m.dump(2) + "\n");
    out.files = paths_;
    out.config_hash = hash_;
    out.complete = complete;
    return out;
  }

 private:
  static void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw std::runtime_error("cannot write " + path.string());
  }

  const ExperimentSpec& spec_;
  std::string hash_;
  std::string prefix_;
  json files_ = json::array();
  json summary_ = json::object();
  std::vector<std::filesystem::path> paths_;
};

RunOptions run_options(bool traces, bool records) {
  RunOptions o;
  o.keep_traces = traces;
  o.keep_records = records;
  o.cancel = &cancellation_flag();
  return o;
}

struct PointStats {
  StabilityReport report;
  bool empty = false;
};

PointStats point_stats(const ExperimentSpec& spec, const CascadeConfig& cascade,
                       const std::vector<ClockRunResult>& results) {
  AnalysisConfig analysis = spec.analysis;
  analysis.bootstrap_seed = cascade.seed;
  PointStats s;
  try {
    s.report = stability(results, analysis, cascade.tau(), cascade.noise.gamma);
  } catch (const EmptyReportError&) {
    s.empty = true;
    s.report.sigma = s.report.sigma_stderr = s.report.figure_of_merit = std::numeric_limits<double>::quiet_NaN();
    s.report.trials = results.size();
    std::size_t done = 0;
    for (const auto& r : results) done += r.aborted() ? 0 : 1;
    s.report.completed = done;
    s.report.abort_rate = static_cast<double>(results.size() - done) / static_cast<double>(results.size());
  }
  return s;
}

Csv stability_table() {
  return Csv({"noise", "protocol", "N", "m", "n", "steps", "T1", "sigma", "stderr", "F", "theory_F", "abort_rate"});
}

void stability_row(Csv& csv, const ExperimentSpec& spec, const CascadeConfig& c, const PointStats& s) {
  csv.cell(to_string(c.noise.kind))
      .cell(to_string(c.ensembles[0].protocol))
      .cell(c.ensembles[0].n_atoms)
      .cell(c.levels())
      .cell(c.n)
      .cell(static_cast<long long>(c.steps))
      .cell(c.T1)
      .cell(s.report.sigma)
      .cell(s.report.sigma_stderr)
      .cell(s.report.figure_of_merit)
      .cell(theory_figure_of_merit(spec, c))
      .cell(s.report.abort_rate);
  csv.end_row();
}

void run_mode(const ExperimentSpec& spec, OutputWriter& out) {
  const auto& c = spec.cascade;
  const auto results = run_trials(c, spec.workers, run_options(spec.dump_noise, spec.dump_records));

  Csv trials({"trial", "omega_bar", "omega_bar_residual", "aborted"});
  for (const auto& r : results) {
    trials.cell(static_cast<long long>(r.trial)).cell(r.omega_bar).cell(r.omega_bar_residual);
    trials.cell(r.aborted() ? "true" : "false");
    trials.end_row();
  }
  out.write("trials.csv", trials.text());

  if (spec.dump_noise) {
    Csv noise({"step", "delta_phi0"});
    const auto& inc = results.front().noise_increments;
    for (std::size_t k = 0; k < inc.size(); ++k) {
      noise.cell(static_cast<long long>(k + 1)).cell(inc[k]);
      noise.end_row();
    }
    out.write("noise.csv", noise.text());
  }
  if (spec.dump_records) {
    Csv rec({"trial", "ensemble", "step", "bit", "rotation"});
    for (const auto& r : results) {
      for (const auto& m : r.records) {
        const auto& o = m.outcome;
        auto row = [&](int bit, double rotation) {
          rec.cell(static_cast<long long>(r.trial)).cell(m.ensemble + 1).cell(static_cast<long long>(m.step));
          rec.cell(bit).cell(rotation);
          rec.end_row();
        };
        if (o.record.empty()) {
          // Projective readout: one common basis, ones listed first.
          const int atoms = c.ensembles[m.ensemble].n_atoms;
          for (int a = 0; a < atoms; ++a) row(a < o.n_down ? 1 : 0, 0.0);
        } else {
          std::size_t pos = 0;
          for (std::size_t b = 0; b < o.batch_sizes.size(); ++b) {
            for (int a = 0; a < o.batch_sizes[b]; ++a) row(o.record[pos++], o.rotations[b]);
          }
        }
      }
    }
    out.write("records.csv", rec.text());
  }

  const auto stats = point_stats(spec, c, results);
  Csv table = stability_table();
  stability_row(table, spec, c, stats);
  out.write("stability.csv", table.text());
  out.summary()["sigma"] = stats.report.sigma;
  out.summary()["figure_of_merit"] = stats.report.figure_of_merit;
  out.summary()["abort_rate"] = stats.report.abort_rate;
  if (stats.empty) throw EmptyReportError("every trial aborted");
}

struct SweepPoint {
  NoiseKind noise;
  int n;
  int atoms;
  int m;
};

std::vector<SweepPoint> sweep_points(const ExperimentSpec& spec) {
  const auto& sw = spec.sweep;
  std::vector<std::pair<int, int>> pairs;  // (n, N)
  if (sw.zip) {
    for (std::size_t i = 0; i < sw.multipliers.size(); ++i) pairs.emplace_back(sw.multipliers[i], sw.atoms[i]);
  } else if (sw.atoms.empty()) {
    for (int n : sw.multipliers) pairs.emplace_back(n, min_atoms(n, sw.beta));
  } else {
    for (int n : sw.multipliers) {
      for (int a : sw.atoms) pairs.emplace_back(n, a);
    }
  }
  std::vector<SweepPoint> points;
  for (auto noise : sw.noises) {
    for (auto [n, a] : pairs) {
      for (int m : sw.levels) points.push_back({noise, n, a, m});
    }
  }
  return points;
}

CascadeConfig sweep_cascade(const ExperimentSpec& spec, const SweepPoint& p) {
  auto c = cascade_for(spec, p.noise, p.n, p.atoms, p.m);
  if (spec.sweep.round_steps && p.m > 1) {
    const auto period = ipow(p.n, p.m - 1);
    c.steps = (c.steps + period - 1) / period * period;
  }
  return c;
}

void sweep_mode(const ExperimentSpec& spec, OutputWriter& out) {
  Csv table = stability_table();
  try {
    for (const auto& p : sweep_points(spec)) {
      const auto c = sweep_cascade(spec, p);
      const auto results = run_trials(c, spec.workers, run_options(false, false));
      stability_row(table, spec, c, point_stats(spec, c, results));
    }
  } catch (...) {
    out.write("stability.csv", table.text());
    throw;
  }
  out.write("stability.csv", table.text());
}

void scan_mode(const ExperimentSpec& spec, OutputWriter& out) {
  const auto& c = spec.cascade;
  BreakdownSpec b;
  b.protocol = c.ensembles[0].protocol;
  b.n_atoms = c.ensembles[0].n_atoms;
  b.noise = c.noise.kind;
  b.grid = spec.analysis.breakdown_grid;
  b.steps = c.steps;
  b.trials = c.trials;
  b.seed = c.seed;
  b.alpha = c.ensembles[0].alpha;
  b.feedback_rounds = c.ensembles[0].feedback_rounds;
  b.gaussian_fast_path = c.gaussian_fast_path;
  b.grid_points = c.grid_points;
  b.workers = spec.workers;
  b.cancel = &cancellation_flag();
  const auto result = breakdown_scan(b);

  Csv scan({"gammaT", "sigma", "stderr", "F", "abort_rate"});
  for (const auto& p : result.curve) {
    scan.cell(p.gamma_T).cell(p.report.sigma).cell(p.report.sigma_stderr).cell(p.report.figure_of_merit);
    scan.cell(p.report.abort_rate);
    scan.end_row();
  }
  out.write("scan.csv", scan.text());
  Csv summary({"protocol", "noise", "N", "steps", "trials", "beta_estimate", "low_confidence", "diagnostic"});
  summary.cell(to_string(b.protocol)).cell(to_string(b.noise)).cell(b.n_atoms).cell(static_cast<long long>(b.steps));
  summary.cell(b.trials).cell(result.beta_estimate).cell(result.low_confidence ? "true" : "false");
  summary.cell(result.diagnostic);
  summary.end_row();
  out.write("breakdown.csv", summary.text());
  out.summary()["beta_estimate"] = result.beta_estimate;
  out.summary()["low_confidence"] = result.low_confidence;
}

struct LowDecade {
  double plateau = 0.0;
  double flatness = 0.0;
};

// Mean and max/min of S over the first ten positive-frequency bins.
LowDecade lowest_decade(const Spectrum& s) {
  const std::size_t last = std::min<std::size_t>(10, s.density.size() - 1);
  LowDecade d;
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (std::size_t k = 1; k <= last; ++k) {
    d.plateau += s.density[k];
    lo = std::min(lo, s.density[k]);
    hi = std::max(hi, s.density[k]);
  }
  d.plateau /= static_cast<double>(last);
  d.flatness = hi / lo;
  return d;
}

std::string spectrum_csv(const Spectrum& s) {
  Csv csv({"f", "S"});
  for (std::size_t k = 0; k < s.density.size(); ++k) {
    csv.cell(s.frequency[k]).cell(s.density[k]);
    csv.end_row();
  }
  return csv.text();
}

void spectrum_mode(const ExperimentSpec& spec, OutputWriter& out) {
  Csv plateau({"label", "m", "plateau", "flatness", "reference"});
  const int segments = spec.analysis.spectrum_segments;
  const Window window = spec.analysis.window;
  bool unlocked_done = !spec.spectrum_unlocked;
  try {
    for (int m : spec.sweep.levels) {
      const auto c = cascade_for(spec, spec.cascade.noise.kind, spec.cascade.n, spec.cascade.ensembles[0].n_atoms, m);
      const auto results = run_trials(c, spec.workers, run_options(true, false));
      if (!unlocked_done) {
        // The free-running trace depends only on (seed, trial).
        std::vector<Spectrum> spectra;
        for (const auto& r : results) spectra.push_back(spectrum(unlocked_frequency_trace(r), c.T1, segments, window));
        const auto avg = average_spectra(spectra);
        out.write("unlocked.csv", spectrum_csv(avg));
        const auto d = lowest_decade(avg);
        plateau.cell("unlocked").cell(0).cell(d.plateau).cell(d.flatness).cell("");
        plateau.end_row();
        unlocked_done = true;
      }
      std::vector<Spectrum> spectra;
      for (const auto& r : results) {
        if (r.aborted()) continue;
        spectra.push_back(spectrum(locked_frequency_trace(r), c.T1, segments, window));
      }
      if (spectra.empty()) throw EmptyReportError("every trial aborted at m=" + std::to_string(m));
      const auto avg = average_spectra(spectra);
      const auto label = "m" + std::to_string(m);
      out.write(label + ".csv", spectrum_csv(avg));
      const auto d = lowest_decade(avg);
      const double reference = 1.0 / (static_cast<double>(c.ensembles[0].n_atoms) * c.T1);
      plateau.cell(label).cell(m).cell(d.plateau).cell(d.flatness).cell(reference);
      plateau.end_row();
    }
  } catch (...) {
    out.write("plateau.csv", plateau.text());
    throw;
  }
  out.write("plateau.csv", plateau.text());
}

}  // namespace

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::Run: return "run";
    case Mode::SweepN: return "sweep-n";
    case Mode::ScanBeta: return "scan-beta";
    case Mode::Spectrum: return "spectrum";
  }
  return "run";
}

Mode mode_from_string(std::string_view name) {
  if (name == "run") return Mode::Run;
  if (name == "sweep-n" || name == "sweep-N") return Mode::SweepN;
  if (name == "scan-beta") return Mode::ScanBeta;
  if (name == "spectrum") return Mode::Spectrum;
  throw ConfigError("unknown mode '" + std::string(name) + "' (expected run | sweep-n | scan-beta | spectrum)");
}

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc()) throw std::runtime_error("format_number failed");
  return std::string(buf.data(), ptr);
}

ConfigMap parse_config_text(std::string_view text, std::string_view source) {
  ConfigMap out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    const auto where = std::string(source) + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const auto key = std::string(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (out.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    out[key] = std::string(trim(line.substr(eq + 1)));
  }
  return out;
}

ConfigMap load_config_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("--config: cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

const ConfigMap& default_config() {
  static const ConfigMap defaults = [] {
    ConfigMap m;
    for (const auto& [k, v] : schema()) m[k] = v.first;
    return m;
  }();
  return defaults;
}

namespace {

const std::map<std::string, ConfigMap, std::less<>>& presets() {
  // Desk-scale versions of the published runs (tau = 1e4..1e5 T1 instead of 1e6 T1).
  static const std::map<std::string, ConfigMap, std::less<>> p = {
      {"default", {}},
      {"fig1b",
       {{"mode", "spectrum"},
        {"ensemble.atoms", "20"},
        {"clock.T1", "0.1"},
        {"clock.n", "2"},
        {"clock.steps", "36000"},
        {"noise.kind", "one-over-f"},
        {"sweep.m", "1, 2, 3"},
        {"trials", "20"}}},
      {"fig2",
       {{"mode", "sweep-n"},
        {"ensemble.protocol", "conventional"},
        {"clock.T1", "0.1"},
        {"clock.steps", "10000"},
        {"sweep.n", "2, 3, 4, 5, 6, 7, 8, 9, 10"},
        {"sweep.atoms", "auto"},
        {"sweep.beta", "0.1"},
        {"sweep.m", "1, 2, 3, 4"},
        {"sweep.noise", "white, one-over-f"},
        {"sweep.round_steps", "true"},
        {"trials", "100"}}},
      {"fig3",
       {{"mode", "sweep-n"},
        {"ensemble.protocol", "adaptive"},
        {"clock.T1", "0.3"},
        {"clock.steps", "10000"},
        {"sweep.n", "2, 2, 3, 4, 5, 6, 7, 8, 9, 10"},
        {"sweep.atoms", "4, 7, 10, 14, 17, 20, 24, 27, 30, 34"},
        {"sweep.zip", "true"},
        {"sweep.m", "1, 2, 3, 4"},
        {"sweep.noise", "white"},
        {"sweep.round_steps", "true"},
        {"trials", "100"}}},
      {"fig3-1f",
       {{"mode", "sweep-n"},
        {"ensemble.protocol", "adaptive"},
        {"clock.T1", "0.2"},
        {"clock.steps", "10000"},
        {"sweep.n", "2, 3, 4, 5, 6, 7, 8, 9, 10"},
        {"sweep.atoms", "7, 10, 14, 17, 20, 24, 27, 30, 34"},
        {"sweep.zip", "true"},
        {"sweep.m", "1, 2, 3, 4"},
        {"sweep.noise", "one-over-f"},
        {"sweep.round_steps", "true"},
        {"trials", "100"}}},
      {"figS1-conventional",
       {{"mode", "scan-beta"},
        {"ensemble.protocol", "conventional"},
        {"ensemble.atoms", "1000"},
        {"clock.steps", "10000"},
        {"noise.kind", "white"},
        {"analysis.breakdown_grid", "0.02, 0.05, 0.08, 0.1, 0.12, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5"},
        {"trials", "400"}}},
      {"figS1-adaptive",
       {{"mode", "scan-beta"},
        {"ensemble.protocol", "adaptive"},
        {"ensemble.atoms", "1000"},
        {"clock.steps", "10000"},
        {"noise.kind", "white"},
        {"measurement.grid_points", "257"},
        {"analysis.breakdown_grid", "0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.6, 0.7"},
        {"trials", "40"}}},
      {"figS1-adaptive-1f",
       {{"mode", "scan-beta"},
        {"ensemble.protocol", "adaptive"},
        {"ensemble.atoms", "1000"},
        {"clock.steps", "10000"},
        {"noise.kind", "one-over-f"},
        {"measurement.grid_points", "257"},
        {"analysis.breakdown_grid", "0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.5"},
        {"trials", "100"}}},
  };
  return p;
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& [k, v] : presets()) names.push_back(k);
  return names;
}

const ConfigMap& preset(std::string_view name) {
  const auto it = presets().find(name);
  if (it == presets().end()) {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + std::string(name) + "' (known: " + known + ")");
  }
  return it->second;
}

CascadeConfig cascade_for(const ExperimentSpec& spec, NoiseKind noise, int n, int atoms, int levels) {
  const auto& r = spec.resolved;
  CascadeConfig c = spec.cascade;
  c.noise.kind = noise;
  c.n = n;
  EnsembleSpec e = spec.cascade.ensembles.at(0);
  e.n_atoms = atoms;
  e.prior_variance.reset();
  c.ensembles.assign(static_cast<std::size_t>(levels), e);

  std::vector<double> alpha;
  if (r.at("ensemble.alpha") == "auto") {
    alpha = noise == NoiseKind::White ? std::vector<double>{0.01} : std::vector<double>{0.5, 0.01};
  } else {
    alpha = double_list(r.at("ensemble.alpha"));
  }
  std::vector<double> prior;
  if (r.at("ensemble.prior_variance") != "auto") prior = double_list(r.at("ensemble.prior_variance"));
  for (std::size_t j = 0; j < c.ensembles.size(); ++j) {
    c.ensembles[j].alpha = alpha[std::min(j, alpha.size() - 1)];
    if (j < prior.size()) c.ensembles[j].prior_variance = prior[j];
  }
  return c;
}

double theory_figure_of_merit(const ExperimentSpec& spec, const CascadeConfig& c) {
  const double beta1 = c.noise.gamma * c.T1;
  const int atoms = c.ensembles.at(0).n_atoms;
  const double beta = spec.theory_beta.value_or(static_cast<double>(c.n) / atoms);
  if (!(beta1 > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return eclock::theory_figure_of_merit(static_cast<int>(c.levels()), atoms, beta1, beta);
}

ExperimentSpec parse_config(const std::vector<ConfigMap>& layers) {
  const auto& keys = schema();
  ConfigMap merged = default_config();
  for (const auto& layer : layers) {
    for (const auto& [k, v] : layer) {
      if (!keys.count(k)) throw ConfigError("unknown key '" + k + "'");
      merged[k] = v;
    }
  }
  ExperimentSpec spec;
  for (const auto& [k, v] : merged) spec.resolved[k] = keys.at(k).second(k, v);
  const auto& r = spec.resolved;

  spec.mode = mode_from_string(r.at("mode"));
  auto& c = spec.cascade;
  c.seed = parse_integer<std::uint64_t>("seed", r.at("seed"));
  c.trials = parse_integer<int>("trials", r.at("trials"));
  c.n = parse_integer<int>("clock.n", r.at("clock.n"));
  c.steps = parse_integer<std::int64_t>("clock.steps", r.at("clock.steps"));
  c.T1 = parse_double("clock.T1", r.at("clock.T1"));
  c.noise = {noise_kind_from_string(r.at("noise.kind")), parse_double("noise.gamma", r.at("noise.gamma"))};
  c.grid_points = parse_integer<std::size_t>("measurement.grid_points", r.at("measurement.grid_points"));
  c.gaussian_fast_path = parse_bool("measurement.gaussian_fast_path", r.at("measurement.gaussian_fast_path"));
  EnsembleSpec e;
  e.n_atoms = parse_integer<int>("ensemble.atoms", r.at("ensemble.atoms"));
  e.protocol = protocol_from_string(r.at("ensemble.protocol"));
  e.feedback_rounds = parse_integer<int>("ensemble.rounds", r.at("ensemble.rounds"));
  c.ensembles = {e};
  if (r.at("ensemble.alpha") != "auto" && double_list(r.at("ensemble.alpha")).empty()) {
    throw ConfigError("ensemble.alpha: expected 'auto' or a list of gains");
  }

  auto& a = spec.analysis;
  a.omega = parse_double("analysis.omega", r.at("analysis.omega"));
  a.spectrum_segments = parse_integer<int>("analysis.spectrum_segments", r.at("analysis.spectrum_segments"));
  a.window = window_from_string(r.at("analysis.window"));
  a.bootstrap_resamples = parse_integer<int>("analysis.bootstrap_resamples", r.at("analysis.bootstrap_resamples"));
  a.breakdown_grid = double_list(r.at("analysis.breakdown_grid"));
  a.bootstrap_seed = c.seed;
  validate(a);
  if (r.at("analysis.beta") != "auto") {
    const auto b = double_list(r.at("analysis.beta"));
    if (b.size() != 1 || !(b[0] > 0.0)) throw ConfigError("analysis.beta: expected 'auto' or one value > 0");
    spec.theory_beta = b[0];
  }

  auto& sw = spec.sweep;
  sw.multipliers = r.at("sweep.n").empty() ? std::vector<int>{c.n} : int_list(r.at("sweep.n"));
  sw.levels = r.at("sweep.m").empty() ? std::vector<int>{parse_integer<int>("clock.m", r.at("clock.m"))}
                                      : int_list(r.at("sweep.m"));
  if (r.at("sweep.noise").empty()) {
    sw.noises = {c.noise.kind};
  } else {
    for (const auto& s : split_list(r.at("sweep.noise"))) sw.noises.push_back(noise_kind_from_string(s));
  }
  if (r.at("sweep.atoms").empty()) {
    sw.atoms = {e.n_atoms};
  } else if (r.at("sweep.atoms") != "auto") {
    sw.atoms = int_list(r.at("sweep.atoms"));
  }
  sw.beta = parse_double("sweep.beta", r.at("sweep.beta"));
  sw.zip = parse_bool("sweep.zip", r.at("sweep.zip"));
  sw.round_steps = parse_bool("sweep.round_steps", r.at("sweep.round_steps"));
  spec.spectrum_unlocked = parse_bool("spectrum.unlocked", r.at("spectrum.unlocked"));
  spec.dump_noise = parse_bool("output.noise_csv", r.at("output.noise_csv"));
  spec.dump_records = parse_bool("output.records_csv", r.at("output.records_csv"));

  if (!(sw.beta > 0.0)) throw ConfigError("sweep.beta must be > 0");
  if (sw.zip && sw.atoms.size() != sw.multipliers.size()) {
    throw ConfigError("sweep.zip needs sweep.atoms and sweep.n of equal length (" + std::to_string(sw.atoms.size()) +
                      " vs " + std::to_string(sw.multipliers.size()) + ")");
  }

  const auto m = parse_integer<int>("clock.m", r.at("clock.m"));
  auto check = [&](const CascadeConfig& cc, const std::string& where) {
    try {
      validate(cc);
    } catch (const ConfigError& err) {
      throw ConfigError(where.empty() ? err.what() : where + ": " + err.what());
    }
  };
  switch (spec.mode) {
    case Mode::Run:
      c = cascade_for(spec, c.noise.kind, c.n, e.n_atoms, m);
      check(c, "");
      break;
    case Mode::SweepN:
      for (const auto& p : sweep_points(spec)) {
        check(sweep_cascade(spec, p), "sweep point (noise=" + std::string(to_string(p.noise)) +
                                          ", n=" + std::to_string(p.n) + ", N=" + std::to_string(p.atoms) +
                                          ", m=" + std::to_string(p.m) + ")");
      }
      c = cascade_for(spec, c.noise.kind, c.n, e.n_atoms, 1);
      break;
    case Mode::ScanBeta:
      if (a.breakdown_grid.empty()) throw ConfigError("analysis.breakdown_grid must not be empty for scan-beta");
      c = cascade_for(spec, c.noise.kind, 2, e.n_atoms, 1);
      check(c, "");
      break;
    case Mode::Spectrum:
      for (int lv : sw.levels) check(cascade_for(spec, c.noise.kind, c.n, e.n_atoms, lv), "m=" + std::to_string(lv));
      if (c.steps < 2 * a.spectrum_segments) {
        throw ConfigError("clock.steps must be >= 2 * analysis.spectrum_segments for spectrum mode");
      }
      c = cascade_for(spec, c.noise.kind, c.n, e.n_atoms, sw.levels.front());
      break;
  }
  return spec;
}

std::string canonical_text(const ConfigMap& resolved) {
  std::string out;
  for (const auto& [k, v] : resolved) out += k + " = " + v + "\n";
  return out;
}

std::string config_hash(const ConfigMap& resolved) { return sha1_hex(canonical_text(resolved)).substr(0, 12); }

std::string git_blob_sha1(std::string_view content) {
  std::string blob = "blob " + std::to_string(content.size());
  blob.push_back('\0');
  blob.append(content);
  return sha1_hex(blob);
}

std::atomic<bool>& cancellation_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

ExperimentOutcome run_experiment(const ExperimentSpec& spec) {
  OutputWriter out(spec, config_hash(spec.resolved));
  try {
    switch (spec.mode) {
      case Mode::Run: run_mode(spec, out); break;
      case Mode::SweepN: sweep_mode(spec, out); break;
      case Mode::ScanBeta: scan_mode(spec, out); break;
      case Mode::Spectrum: spectrum_mode(spec, out); break;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    auto outcome = out.finish(false, e.what());
    throw ExperimentAborted(e.what(), std::move(outcome));
  }
  return out.finish(true);
}

ExperimentSpec spec_from_manifest(const std::filesystem::path& manifest) {
  std::ifstream f(manifest, std::ios::binary);
  if (!f) throw ConfigError("--manifest: cannot read '" + manifest.string() + "'");
  json m;
  try {
    f >> m;
  } catch (const json::exception& e) {
    throw ConfigError("--manifest: " + manifest.string() + " is not valid JSON: " + e.what());
  }
  if (!m.contains("config") || !m["config"].is_object()) {
    throw ConfigError("--manifest: " + manifest.string() + " has no config object");
  }
  ConfigMap config;
  for (const auto& [k, v] : m["config"].items()) {
    if (!v.is_string()) throw ConfigError("--manifest: config value of '" + k + "' is not a string");
    config[k] = v.get<std::string>();
  }
  auto spec = parse_config({config});
  if (m.contains("config_hash") && m["config_hash"] != config_hash(spec.resolved)) {
    throw ConfigError("--manifest: stored config_hash does not match its config");
  }
  return spec;
}

}  // namespace eclock
