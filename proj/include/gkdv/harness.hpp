#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gkdv/evolver.hpp"
#include "gkdv/modulation.hpp"
#include "gkdv/profiles.hpp"

namespace gkdv {

/// Key/value run configuration. Every key has a value for every preset, so
/// the echo in the run metadata determines the run completely.
class Config {
 public:
  static const std::vector<std::string>& preset_names();
  static Config preset(const std::string& name);

  /// `key = value` lines, '#' comments. A `preset` line selects the base
  /// values; unknown keys are config errors naming the line.
  static Config parse(const std::string& text, const std::string& source = "config");
  static Config load(const std::filesystem::path& path);
  /// A preset name or a path to a config file.
  static Config resolve(const std::string& preset_or_path);

  void set(const std::string& key, const std::string& value);
  /// "key=value"
  void assign(const std::string& assignment);

  const std::string& get(const std::string& key) const;
  double number(const std::string& key) const;
  long integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> list(const std::string& key) const;

  const std::string& name() const { return get("preset"); }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }
  std::string echo() const;

  SolverConfig solver() const;
  ClassifierConfig classifier() const;
  DecomposeOptions decompose_options() const;

 private:
  std::map<std::string, std::string> values_;
};

/// Output root: $GKDV_OUT if set, otherwise ./runs.
std::filesystem::path output_root();

ProfileSet preset_profiles(const Config& cfg);

/// Initial data on the periodic window (grid coordinates) and its lab map.
struct InitialData {
  Field u0;
  WindowMap map;
  double E0 = 0.0;       // lab energy
  double M0 = 0.0;
  double gate = 0.0;     // int_{y>0} y^10 (u0 - Q)^2 in the lab frame
};
InitialData initial_data(const Config& cfg, const ProfileSet& ps);

/// Simulates and writes metadata.txt, series.csv, diagnostics.csv,
/// snapshots/, snapshots.csv and mass_ledger.csv into `dir`.
RunRecord simulate(const Config& cfg, const std::filesystem::path& dir);

struct Check {
  std::string name;
  double value = 0.0;
  std::string target;
  bool pass = false;
};

struct Report {
  std::string json;  // report.json contents
  std::vector<Check> checks;
  bool pass() const;
};

/// Classification, fits and tail analysis from the persisted files only.
Report analyze(const std::filesystem::path& dir, const Config& cfg);

/// Reads the config echoed into dir/metadata.txt.
Config read_run_config(const std::filesystem::path& dir);

Report identity_report(const Config& cfg);
Report ode_portrait_report(const Config& cfg, const std::filesystem::path& csv_out);

/// Full pipeline for one config; writes report.json. Returns the report.
Report run(const Config& cfg, const std::filesystem::path& dir);

/// Recomputes report.json from a run directory (config overrides applied on top of the echo).
Report replay(const std::filesystem::path& dir, const std::vector<std::string>& overrides = {});

/// Persisted pieces of a run directory.
struct RunFiles {
  Trajectory series;  // series.csv joined with diagnostics.csv
  std::vector<SnapshotRef> snapshots;
  std::vector<std::string> snapshot_tags;
  MassLedger ledger;
  std::map<std::string, std::string> run_info;  // [run] section of metadata
};
RunFiles read_run(const std::filesystem::path& dir);

/// Tail table at one checkpoint snapshot.
struct TailCheckpoint {
  std::string tag;
  double t = 0.0, lambda = 0.0, x = 0.0, ell0 = 0.0;
  TailReport table;
  double best_octave_error = 0.0;  // max |log2(scaled / reference)| over the best octave
  double best_octave_R = 0.0;
  // finite-time wake model: the plateau b Q_L1 / 2 shed at x while 1/lambda = 1/lambda0 + k (x - x0)
  double model_k = 0.0;
  std::vector<double> model_scaled;
};
std::vector<TailCheckpoint> tail_checkpoints(const std::filesystem::path& dir, const Config& cfg);

}  // namespace gkdv
