#include "gkdv/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

#include "gkdv/linop.hpp"
#include "gkdv/reduced_ode.hpp"

namespace gkdv {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

Error config_error(const std::string& what) { return Error(ErrorCode::config, "harness", what); }
Error integrity_error(const std::string& what) { return Error(ErrorCode::integrity, "harness", what); }

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using Table = std::vector<std::pair<std::string, std::string>>;

const Table& base_values() {
  static const Table t = {
      {"preset", "soliton"},
      // window and profile grids
      {"n", "2048"},
      {"L", "50"},
      {"profile_n", "2048"},
      {"profile_L", "30"},
      // initial data: amplitude * Q_{b0}(x) + perturbation, lab x = 0 at initial_position * L
      {"b0", "0"},
      {"amplitude", "1"},
      {"perturbation", "0"},
      {"perturbation_seed", "1"},
      {"initial_position", "-0.2"},
      // solver
      {"scheme", "etd-rk4"},
      {"dt", "auto"},
      {"cfl", "0.2"},
      {"dealias_fraction", "0.66666666666666663"},
      {"pad_factor", "4"},
      {"window_policy", "fixed"},
      {"regrid_lambda_ratio", "0.6"},
      {"regrid_margin", "0.15"},
      {"regrid_target", "-0.3"},
      {"snapshot_stride", "0"},
      {"modulation_stride", "50"},
      {"t_max", "10"},
      {"sponge_width", "0.1"},
      {"sponge_strength", "5"},
      {"max_steps", "50000000"},
      // modulation and classification
      {"gamma", "0.75"},
      {"decompose_b_max", "0.5"},
      {"decompose_tolerance", "1e-10"},
      {"tube_refine_above", "0.02"},
      {"tube_core_radius", "10"},
      {"B", "100"},
      {"alpha_star", "0.1"},
      {"lambda_exit", "2"},
      {"lambda_blowup", "0.5"},
      {"C_star", "10"},
      {"lambda_floor", "0.2"},
      {"stop_on_exit", "true"},
      {"stop_on_tube", "true"},
      // tail measurement
      {"checkpoints", "none"},
      {"tail_R_min", "2"},
      {"tail_R_per_octave", "4"},
      // reduced ODE portrait
      {"sweep", "-0.1:0.1:0.02"},
      {"lambda0", "1"},
      {"ode_t_max", "1000"},
  };
  return t;
}

const std::map<std::string, Table>& preset_overrides() {
  static const std::map<std::string, Table> m = {
      {"soliton", {}},
      {"blowup",
       {{"b0", "0.05"},
        {"n", "4096"},
        {"L", "100"},
        {"window_policy", "tracking"},
        {"initial_position", "-0.3"},
        {"t_max", "100"},
        {"checkpoints", "0.4,0.3,0.2"}}},
      {"tail",
       {{"b0", "0.05"},
        {"n", "4096"},
        {"L", "100"},
        {"window_policy", "tracking"},
        {"initial_position", "-0.3"},
        {"t_max", "100"},
        {"checkpoints", "0.4,0.3,0.2"}}},
      {"negative-energy",
       {{"amplitude", "1.02"},
        {"alpha_star", "0.15"},
        {"n", "4096"},
        {"L", "100"},
        {"window_policy", "tracking"},
        {"initial_position", "-0.3"},
        {"t_max", "100"},
        {"checkpoints", "0.4,0.3,0.2"}}},
      {"exit", {{"b0", "-0.05"}, {"L", "100"}, {"initial_position", "0"}, {"t_max", "40"}, {"stop_on_tube", "false"}}},
      {"identity-suite", {{"profile_n", "4096"}, {"profile_L", "25"}}},
      {"ode-portrait", {}},
  };
  return m;
}

bool is_evolution(const std::string& preset) { return preset != "identity-suite" && preset != "ode-portrait"; }

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw config_error("key '" + key + "': '" + v + "' is not a number");
  return out;
}

}  // namespace

// ---------------------------------------------------------------- config

const std::vector<std::string>& Config::preset_names() {
  static const std::vector<std::string> names = {"soliton", "blowup", "exit", "negative-energy",
                                                 "identity-suite", "ode-portrait", "tail"};
  return names;
}

Config Config::preset(const std::string& name) {
  const auto it = preset_overrides().find(name);
  if (it == preset_overrides().end()) throw config_error("unknown preset '" + name + "'");
  Config c;
  for (const auto& [k, v] : base_values()) c.values_[k] = v;
  for (const auto& [k, v] : it->second) c.values_[k] = v;
  c.values_["preset"] = name;
  return c;
}

Config Config::parse(const std::string& text, const std::string& source) {
  std::vector<std::tuple<int, std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  std::string preset_name = "soliton";
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw config_error(source + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw config_error(source + ":" + std::to_string(lineno) + ": empty key");
    if (key == "preset") preset_name = value;
    entries.emplace_back(lineno, key, value);
  }
  Config c = preset(preset_name);
  for (const auto& [no, key, value] : entries) {
    try {
      c.set(key, value);
    } catch (const Error& e) {
      throw config_error(source + ":" + std::to_string(no) + ": " + e.what());
    }
  }
  return c;
}

Config Config::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

Config Config::resolve(const std::string& preset_or_path) {
  if (preset_overrides().count(preset_or_path)) return preset(preset_or_path);
  if (fs::exists(preset_or_path)) return load(preset_or_path);
  throw config_error("'" + preset_or_path + "' is neither a preset nor a config file");
}

void Config::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw config_error("unknown key '" + key + "'");
  if (key == "preset" && !preset_overrides().count(value)) throw config_error("unknown preset '" + value + "'");
  it->second = value;
}

void Config::assign(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw config_error("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& Config::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw config_error("unknown key '" + key + "'");
  return it->second;
}

double Config::number(const std::string& key) const { return parse_double(key, get(key)); }

long Config::integer(const std::string& key) const {
  const double v = number(key);
  if (v != std::floor(v) || std::abs(v) > 9e15) throw config_error("key '" + key + "' must be an integer");
  return static_cast<long>(v);
}

bool Config::flag(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw config_error("key '" + key + "' must be true or false");
}

std::vector<double> Config::list(const std::string& key) const {
  std::vector<double> out;
  const std::string& v = get(key);
  if (v == "none" || v.empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  return out;
}

std::string Config::echo() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

SolverConfig Config::solver() const {
  SolverConfig s;
  const std::string& scheme = get("scheme");
  if (scheme == "etd-rk4")
    s.scheme = Scheme::etd_rk4;
  else if (scheme == "if-rk4")
    s.scheme = Scheme::if_rk4;
  else
    throw config_error("scheme must be etd-rk4 or if-rk4");
  if (get("dt") != "auto") s.dt = number("dt");
  s.cfl = number("cfl");
  s.dealias_fraction = number("dealias_fraction");
  s.pad_factor = static_cast<int>(integer("pad_factor"));
  const std::string& wp = get("window_policy");
  if (wp == "fixed")
    s.window_policy = WindowPolicy::fixed;
  else if (wp == "tracking")
    s.window_policy = WindowPolicy::tracking;
  else
    throw config_error("window_policy must be fixed or tracking");
  s.regrid_lambda_ratio = number("regrid_lambda_ratio");
  s.regrid_margin = number("regrid_margin");
  s.regrid_target = number("regrid_target");
  s.snapshot_stride = static_cast<int>(integer("snapshot_stride"));
  s.modulation_stride = static_cast<int>(integer("modulation_stride"));
  s.t_max = number("t_max");
  s.sponge_width = number("sponge_width");
  s.sponge_strength = number("sponge_strength");
  s.max_steps = integer("max_steps");
  try {
    validate(s);
  } catch (const Error& e) {
    throw config_error(e.what());
  }
  return s;
}

ClassifierConfig Config::classifier() const {
  ClassifierConfig c;
  c.alpha_star = number("alpha_star");
  c.lambda_exit = number("lambda_exit");
  c.lambda_blowup = number("lambda_blowup");
  c.C_star = number("C_star");
  c.lambda_floor = number("lambda_floor");
  try {
    validate(c);
  } catch (const Error& e) {
    throw config_error(e.what());
  }
  return c;
}

DecomposeOptions Config::decompose_options() const {
  DecomposeOptions o;
  o.gamma = number("gamma");
  o.b_max = number("decompose_b_max");
  o.tolerance = number("decompose_tolerance");
  o.tube_refine_above = number("tube_refine_above");
  o.tube_core_radius = number("tube_core_radius");
  return o;
}

fs::path output_root() {
  const char* env = std::getenv("GKDV_OUT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

// ---------------------------------------------------------------- initial data

ProfileSet preset_profiles(const Config& cfg) {
  return build_profiles(Grid::bounded(cfg.integer("profile_n"), cfg.number("profile_L")));
}

namespace {

// Q_b(z) off the profile grid: closed-form Q, P held at its left limit.
double qb_value(double z, double b, const ProfileSet& ps, double gamma) {
  double q = std::pow(3.0, 0.25) / std::sqrt(std::cosh(2.0 * z));
  if (b != 0.0) {
    const double chi = cutoff(std::pow(std::abs(b), gamma) * z);
    if (chi > 0.0) {
      const double y_lo = ps.grid.point(0), y_hi = ps.grid.point(ps.grid.size() - 1);
      const double P = z < y_lo ? ps.P[0] : (z > y_hi ? 0.0 : evaluate_at(ps.P, z));
      q += b * chi * P;
    }
  }
  return q;
}

// Smooth random bump sum normalized to unit H^1 norm.
Field perturbation_shape(const Grid& g, double x_offset, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> amp(0.0, 1.0);
  std::uniform_real_distribution<double> centre(-3.0, 3.0), width(0.5, 2.0);
  struct Bump {
    double a, c, w;
  };
  std::vector<Bump> bumps;
  for (int i = 0; i < 3; ++i) {
    const double a = amp(rng), c = centre(rng), w = width(rng);
    bumps.push_back({a, c, w});
  }
  Field f = Field::sample(g, [&](double y) {
    const double x = x_offset + y;
    double s = 0.0;
    for (const Bump& bp : bumps) s += bp.a * std::exp(-(x - bp.c) * (x - bp.c) / (bp.w * bp.w));
    return s;
  });
  const double h1 = std::sqrt(integrate(pow(f, 2)) + integrate(pow(differentiate(f, 1), 2)));
  return (1.0 / h1) * f;
}

}  // namespace

InitialData initial_data(const Config& cfg, const ProfileSet& ps) {
  const Grid g = Grid::periodic(cfg.integer("n"), cfg.number("L"));
  const double b0 = cfg.number("b0"), a = cfg.number("amplitude"), gamma = cfg.number("gamma");
  WindowMap map;
  map.x_offset = -cfg.number("initial_position") * g.half_length();
  Field u = Field::sample(g, [&](double y) { return a * qb_value(map.x_offset + y, b0, ps, gamma); });
  const double delta = cfg.number("perturbation");
  if (delta != 0.0)
    u = u + delta * perturbation_shape(g, map.x_offset, static_cast<std::uint64_t>(cfg.integer("perturbation_seed")));
  InitialData d{u, map};
  const Conserved c = conserved(u);
  d.M0 = c.M;
  d.E0 = c.E;
  // class-A gate on eps_0 = u0 - Q in the lab frame
  const double q0 = std::pow(3.0, 0.25);
  double gate = 0.0;
  for (Index k = 0; k < g.size(); ++k) {
    const double x = map.x_offset + g.point(k);
    if (x <= 0.0) continue;
    const double e = u[k] - q0 / std::sqrt(std::cosh(2.0 * x));
    gate += std::pow(x, 10) * e * e * g.spacing();
  }
  d.gate = gate;
  return d;
}

// ---------------------------------------------------------------- persistence

namespace {

const char* kSeriesHeader = "t,s_est,lambda,x,b,M,E,N1,N2,F11,J1,J2,J,res_lambda,res_b";
const char* kDiagHeader = "t,N1loc,N2loc,F12,F21,F22,eps_loc,tube_distance,ux_ratio,newton_iters";

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::integrity, "harness", "cannot write " + p.string());
  out << s;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw integrity_error("missing file " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string series_csv(const Trajectory& tr) {
  std::string out = std::string(kSeriesHeader) + "\n";
  for (const SeriesRow& r : tr) {
    const double v[] = {r.t, r.s_est, r.lambda, r.x, r.b, r.M, r.E, r.N1, r.N2, r.F11, r.J1, r.J2, r.J, r.res_lambda, r.res_b};
    for (size_t i = 0; i < std::size(v); ++i) out += (i ? "," : "") + fmt(v[i]);
    out += "\n";
  }
  return out;
}

std::string diagnostics_csv(const Trajectory& tr) {
  std::string out = std::string(kDiagHeader) + "\n";
  for (const SeriesRow& r : tr) {
    const double v[] = {r.t, r.N1loc, r.N2loc, r.F12, r.F21, r.F22, r.eps_loc, r.tube_distance, r.ux_ratio};
    for (size_t i = 0; i < std::size(v); ++i) out += (i ? "," : "") + fmt(v[i]);
    out += "," + std::to_string(r.newton_iters) + "\n";
  }
  return out;
}

std::string ledger_csv(const MassLedger& ledger) {
  std::string out = "bin,x_center,mass\n";
  for (const auto& [k, m] : ledger.bins())
    out += std::to_string(k) + "," + fmt((static_cast<double>(k) + 0.5) * ledger.bin_width()) + "," + fmt(m) + "\n";
  return out;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p, const std::string& header) {
  const std::string text = read_text(p);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || trim(line) != header) throw integrity_error(p.filename().string() + ": bad header");
  const size_t cols = std::count(header.begin(), header.end(), ',') + 1;
  std::vector<std::vector<std::string>> rows;
  int no = 1;
  while (std::getline(in, line)) {
    ++no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(trim(c));
    if (cells.size() != cols)
      throw integrity_error(p.filename().string() + ":" + std::to_string(no) + ": expected " + std::to_string(cols) +
                            " columns");
    rows.push_back(std::move(cells));
  }
  return rows;
}

double cell(const fs::path& p, const std::string& s) {
  try {
    return parse_double("cell", s);
  } catch (const Error&) {
    throw integrity_error(p.filename().string() + ": corrupt value '" + s + "'");
  }
}

MassLedger read_ledger(const fs::path& p) {
  MassLedger ledger;
  for (const auto& row : read_csv(p, "bin,x_center,mass")) ledger.set_bin(std::stol(row[0]), cell(p, row[2]));
  return ledger;
}

// Lab-frame ledger including sponge mass not yet flushed to it.
MassLedger merged_ledger(const EvolveView& view) {
  MassLedger out = view.ledger;
  const Grid& g = view.v.grid();
  for (Index k = 0; k < g.size(); ++k) {
    const double m = view.pending_absorbed[k];
    if (m != 0.0) out.add(view.map.x_offset + view.map.scale * g.point(k), m);
  }
  return out;
}

std::map<std::string, std::string> read_sections(const fs::path& p, const std::string& section) {
  std::map<std::string, std::string> out;
  std::istringstream in(read_text(p));
  std::string line, current;
  bool seen = false;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      current = line.substr(1, line.size() - 2);
      seen = seen || current == section;
      continue;
    }
    if (current != section) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw integrity_error(p.filename().string() + ": malformed line '" + line + "'");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  if (!seen) throw integrity_error(p.filename().string() + ": missing [" + section + "] section");
  return out;
}

std::string tag_name(double level) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "checkpoint_%.3g", level);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------- simulate

RunRecord simulate(const Config& cfg, const fs::path& dir) {
  if (!is_evolution(cfg.name())) throw config_error("preset '" + cfg.name() + "' does not evolve");
  const SolverConfig solver = cfg.solver();
  const ClassifierConfig cls = cfg.classifier();
  const DecomposeOptions dopt = cfg.decompose_options();
  const bool stop_on_exit = cfg.flag("stop_on_exit");
  const bool stop_on_tube = cfg.flag("stop_on_tube");
  std::vector<double> levels = cfg.list("checkpoints");
  std::sort(levels.rbegin(), levels.rend());

  const ProfileSet ps = preset_profiles(cfg);
  const Weights weights(cfg.number("B"));
  const InitialData init = initial_data(cfg, ps);
  const double normQp = std::sqrt(ps.normQp2);

  fs::create_directories(dir / "snapshots");
  for (const auto& entry : fs::directory_iterator(dir / "snapshots")) fs::remove(entry.path());

  struct Snap {
    SnapshotRef ref;
    std::string tag;
  };
  std::vector<Snap> snaps;
  auto write_snap = [&](const EvolveView& view, const std::string& tag) {
    Snap s;
    s.ref.index = static_cast<int>(snaps.size());
    s.ref.t = view.t;
    s.ref.map = view.map;
    char name[64];
    std::snprintf(name, sizeof name, "snapshots/snap_%05d.gkdv", s.ref.index);
    s.ref.path = name;
    s.tag = tag;
    write_snapshot(dir / s.ref.path, view.v, view.t);
    if (tag.rfind("checkpoint", 0) == 0)
      write_text(dir / ("snapshots/ledger_" + std::to_string(s.ref.index) + ".csv"), ledger_csv(merged_ledger(view)));
    snaps.push_back(s);
    return s.ref;
  };

  std::optional<ModulationSeed> last;  // lab frame
  std::size_t next_level = 0;

  EvolveCallbacks cb;
  cb.on_snapshot = [&](const EvolveView& view) -> std::optional<SnapshotRef> {
    const bool final_call = view.step > 0 && (solver.snapshot_stride == 0 || view.step % solver.snapshot_stride != 0);
    return write_snap(view, final_call ? "final" : "stride");
  };
  cb.on_modulation = [&](const EvolveView& view) {
    ModulationFeedback fb;
    const double sigma = view.map.scale;
    std::optional<ModulationSeed> seed;
    if (last) seed = ModulationSeed{last->lambda / sigma, (last->x - view.map.x_offset) / sigma, last->b};
    std::optional<ModulationState> fit;
    try {
      fit = decompose(view.v, ps, seed, dopt);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::decomposition_failed && e.code() != ErrorCode::coverage) throw;
      fb.stop = true;
      fb.reason = "decomposition_failed";
      return fb;
    }
    const ModulationState& st = *fit;
    const DiagnosticSet d = diagnostics(st, ps, weights, dopt.gamma);
    SeriesRow& r = fb.row;
    r.lambda = sigma * st.lambda;
    r.x = view.map.x_offset + sigma * st.x;
    r.b = st.b;
    r.N1 = d.N1;
    r.N2 = d.N2;
    r.F11 = d.F[0][0];
    r.F12 = d.F[0][1];
    r.F21 = d.F[1][0];
    r.F22 = d.F[1][1];
    r.J1 = d.J1;
    r.J2 = d.J2;
    r.J = d.J;
    r.N1loc = d.N1loc;
    r.N2loc = d.N2loc;
    r.eps_loc = d.eps_loc;
    r.tube_distance = st.tube_distance;
    r.newton_iters = st.newton_iters;
    r.ux_ratio = st.lambda * l2_norm(differentiate(view.v, 1)) / normQp;
    fb.valid = true;
    fb.lambda_grid = st.lambda;
    fb.x_grid = st.x;
    last = ModulationSeed{r.lambda, r.x, r.b};
    while (next_level < levels.size() && r.lambda <= levels[next_level]) write_snap(view, tag_name(levels[next_level++]));
    if (r.lambda <= cls.lambda_floor) {
      fb.stop = true;
      fb.reason = "lambda_floor";
    } else if (stop_on_exit && r.lambda >= cls.lambda_exit) {
      fb.stop = true;
      fb.reason = "lambda_exit";
    } else if (stop_on_tube && r.tube_distance >= cls.alpha_star) {
      fb.stop = true;
      fb.reason = "tube_exit";
    }
    return fb;
  };

  RunRecord rec = evolve(init.u0, solver, cb, init.map);

  Trajectory& tr = rec.series;
  if (!tr.empty()) {
    const std::vector<double> s = reconstruct_s(tr);
    for (size_t i = 0; i < tr.size(); ++i) tr[i].s_est = s[i];
    if (tr.size() >= 5) {
      const ResidualReport rr = residual_laws(tr);
      // rows cover interior points only; the two ends keep 0
      for (size_t k = 0; k < rr.rows.size(); ++k) {
        tr[k + 1].res_lambda = rr.rows[k].res_lambda;
        tr[k + 1].res_b = rr.rows[k].res_b;
      }
    }
  }

  std::string meta = "# gkdv run metadata\n[config]\n" + cfg.echo() + "[run]\n";
  meta += "termination = " + rec.termination + "\n";
  meta += "steps = " + std::to_string(rec.steps) + "\n";
  meta += "regrids = " + std::to_string(rec.regrids) + "\n";
  meta += "final_t = " + fmt(rec.final_t) + "\n";
  meta += "released_mass = " + fmt(rec.released_mass) + "\n";
  meta += "absorbed_mass = " + fmt(rec.absorbed_mass) + "\n";
  meta += "M0 = " + fmt(init.M0) + "\n";
  meta += "E0 = " + fmt(init.E0) + "\n";
  meta += "gate = " + fmt(init.gate) + "\n";
  meta += "wall_seconds = " + fmt(rec.wall_seconds) + "\n";
  write_text(dir / "metadata.txt", meta);
  write_text(dir / "series.csv", series_csv(tr));
  write_text(dir / "diagnostics.csv", diagnostics_csv(tr));
  write_text(dir / "mass_ledger.csv", ledger_csv(rec.ledger));
  std::string idx = "index,tag,t,x_offset,scale,t_offset,path\n";
  for (const Snap& s : snaps)
    idx += std::to_string(s.ref.index) + "," + s.tag + "," + fmt(s.ref.t) + "," + fmt(s.ref.map.x_offset) + "," +
           fmt(s.ref.map.scale) + "," + fmt(s.ref.map.t_offset) + "," + s.ref.path + "\n";
  write_text(dir / "snapshots.csv", idx);
  rec.snapshots.clear();
  for (const Snap& s : snaps) rec.snapshots.push_back(s.ref);
  return rec;
}

// ---------------------------------------------------------------- reading back

Config read_run_config(const fs::path& dir) {
  const auto kv = read_sections(dir / "metadata.txt", "config");
  const auto p = kv.find("preset");
  if (p == kv.end()) throw integrity_error("metadata.txt: no preset in [config]");
  Config c = Config::preset(p->second);
  for (const auto& [k, v] : kv) {
    try {
      c.set(k, v);
    } catch (const Error& e) {
      throw integrity_error(std::string("metadata.txt: ") + e.what());
    }
  }
  return c;
}

RunFiles read_run(const fs::path& dir) {
  RunFiles f;
  f.run_info = read_sections(dir / "metadata.txt", "run");
  const fs::path sp = dir / "series.csv", dp = dir / "diagnostics.csv";
  const auto srows = read_csv(sp, kSeriesHeader);
  const auto drows = read_csv(dp, kDiagHeader);
  if (srows.size() != drows.size()) throw integrity_error("diagnostics.csv: row count differs from series.csv");
  for (size_t i = 0; i < srows.size(); ++i) {
    const auto& a = srows[i];
    const auto& d = drows[i];
    SeriesRow r;
    double* dst[] = {&r.t, &r.s_est, &r.lambda, &r.x, &r.b, &r.M, &r.E, &r.N1, &r.N2, &r.F11, &r.J1, &r.J2, &r.J,
                     &r.res_lambda, &r.res_b};
    for (size_t c = 0; c < std::size(dst); ++c) *dst[c] = cell(sp, a[c]);
    if (cell(dp, d[0]) != r.t) throw integrity_error("diagnostics.csv: time column does not match series.csv");
    double* ddst[] = {&r.N1loc, &r.N2loc, &r.F12, &r.F21, &r.F22, &r.eps_loc, &r.tube_distance, &r.ux_ratio};
    for (size_t c = 0; c < std::size(ddst); ++c) *ddst[c] = cell(dp, d[c + 1]);
    r.newton_iters = static_cast<int>(cell(dp, d[9]));
    if (!f.series.empty() && !(r.t > f.series.back().t))
      throw integrity_error("series.csv: time not strictly increasing at row " + std::to_string(i + 2));
    f.series.push_back(r);
  }
  const fs::path ip = dir / "snapshots.csv";
  for (const auto& row : read_csv(ip, "index,tag,t,x_offset,scale,t_offset,path")) {
    SnapshotRef ref;
    ref.index = static_cast<int>(cell(ip, row[0]));
    ref.t = cell(ip, row[2]);
    ref.map = WindowMap{cell(ip, row[3]), cell(ip, row[4]), cell(ip, row[5])};
    ref.path = row[6];
    if (!fs::exists(dir / ref.path)) throw integrity_error("missing file " + (dir / ref.path).string());
    f.snapshots.push_back(ref);
    f.snapshot_tags.push_back(row[1]);
  }
  f.ledger = read_ledger(dir / "mass_ledger.csv");
  return f;
}

// ---------------------------------------------------------------- analysis

bool Report::pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

namespace {

json checks_json(const std::vector<Check>& checks) {
  json arr = json::array();
  for (const Check& c : checks) arr.push_back({{"name", c.name}, {"value", c.value}, {"target", c.target}, {"pass", c.pass}});
  return arr;
}

Report finish(json j, std::vector<Check> checks) {
  Report r;
  j["checks"] = checks_json(checks);
  j["pass"] = std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
  r.json = j.dump(2) + "\n";
  r.checks = std::move(checks);
  return r;
}

double info_number(const RunFiles& f, const std::string& key) {
  const auto it = f.run_info.find(key);
  if (it == f.run_info.end()) throw integrity_error("metadata.txt: missing '" + key + "' in [run]");
  return cell("metadata.txt", it->second);
}

std::string info_text(const RunFiles& f, const std::string& key) {
  const auto it = f.run_info.find(key);
  if (it == f.run_info.end()) throw integrity_error("metadata.txt: missing '" + key + "' in [run]");
  return it->second;
}

json fit_json(const BlowupFit& f) {
  return {{"ell0", f.ell0},
          {"T_est", f.T_est},
          {"r2", f.r2},
          {"points", f.points},
          {"lambda_window", {f.lambda_window_min, f.lambda_window_max}},
          {"ratio_mean", f.ratio_mean},
          {"ratio_variation", f.ratio_variation},
          {"ratio_final", f.ratio_final},
          {"tx_final", f.tx_final},
          {"tx_target", f.tx_target},
          {"ux_ratio_min", f.ux_ratio_min},
          {"ux_ratio_max", f.ux_ratio_max},
          {"ux_ratio_final", f.ux_ratio_final}};
}

// max |log2(scaled / reference)| over 5 consecutive rows (one octave at 4 per octave), best window
std::pair<double, double> best_octave(const TailReport& t, int per_octave) {
  double best = std::numeric_limits<double>::infinity(), R = 0.0;
  const size_t span = static_cast<size_t>(per_octave);
  for (size_t i = 0; i + span < t.rows.size() + 0; ++i) {
    double worst = 0.0;
    for (size_t k = i; k <= i + span; ++k) {
      const double s = t.rows[k].scaled;
      worst = std::max(worst, s > 0.0 ? std::abs(std::log2(s / t.reference)) : std::numeric_limits<double>::infinity());
    }
    if (worst < best) {
      best = worst;
      R = t.rows[i].R;
    }
  }
  return {best, R};
}

}  // namespace

std::vector<TailCheckpoint> tail_checkpoints(const fs::path& dir, const Config& cfg) {
  const RunFiles f = read_run(dir);
  const ProfileSet ps = preset_profiles(cfg);
  const DecomposeOptions dopt = cfg.decompose_options();
  const int per_octave = static_cast<int>(cfg.integer("tail_R_per_octave"));
  if (per_octave < 1) throw config_error("tail_R_per_octave must be >= 1");
  std::vector<TailCheckpoint> out;
  for (size_t i = 0; i < f.snapshots.size(); ++i) {
    if (f.snapshot_tags[i].rfind("checkpoint", 0) != 0) continue;
    const SnapshotRef& ref = f.snapshots[i];
    const Snapshot snap = read_snapshot(dir / ref.path);
    Trajectory upto;
    for (const SeriesRow& r : f.series)
      if (r.t <= ref.t) upto.push_back(r);
    if (upto.empty()) throw Error(ErrorCode::fit_window, "harness", "no series rows before " + f.snapshot_tags[i]);
    const SeriesRow& near = upto.back();
    const double sigma = ref.map.scale;
    ModulationState st = decompose(snap.field, ps,
                                   ModulationSeed{near.lambda / sigma, (near.x - ref.map.x_offset) / sigma, near.b}, dopt);
    st.lambda *= sigma;
    st.x = ref.map.x_offset + sigma * st.x;
    TailCheckpoint cp;
    cp.tag = f.snapshot_tags[i];
    cp.t = ref.t;
    cp.lambda = st.lambda;
    cp.x = st.x;
    const BlowupFit fit = blowup_fit(upto, 2.0);
    cp.ell0 = fit.ell0;
    cp.model_k = fit.ratio_mean;
    std::vector<double> R;
    const double R_min = cfg.number("tail_R_min"), R_max = st.x - 10.0 * st.lambda;
    for (int k = 0;; ++k) {
      const double r = R_min * std::pow(2.0, static_cast<double>(k) / per_octave);
      if (r > R_max) break;
      R.push_back(r);
    }
    if (R.size() < static_cast<size_t>(per_octave) + 1)
      throw Error(ErrorCode::geometry, "harness", cp.tag + ": less than one octave of R between tail_R_min and x - 10 lambda");
    const MassLedger ledger = read_ledger(dir / ("snapshots/ledger_" + std::to_string(ref.index) + ".csv"));
    cp.table = tail_profile(snap.field, ref.map, st, ps, R, cp.ell0, &ledger, dopt.gamma);
    std::tie(cp.best_octave_error, cp.best_octave_R) = best_octave(cp.table, per_octave);
    const double inv0 = 1.0 / f.series.front().lambda, x0 = f.series.front().x, k = cp.model_k;
    for (double r : R) {
      const double a = inv0 + k * (r - x0), c = inv0 + k * (R_max - x0);
      cp.model_scaled.push_back(r * r * ps.normQ_L1 * ps.normQ_L1 * k / 8.0 * (1.0 / (a * a) - 1.0 / (c * c)));
    }
    out.push_back(std::move(cp));
  }
  return out;
}

Report analyze(const fs::path& dir, const Config& cfg) {
  const RunFiles f = read_run(dir);
  const std::string preset = cfg.name();
  const ClassifierConfig cls = cfg.classifier();
  const std::string termination = info_text(f, "termination");
  json j;
  j["preset"] = preset;
  j["termination"] = termination;
  j["rows"] = f.series.size();
  const double M0 = info_number(f, "M0"), E0 = info_number(f, "E0"), gate = info_number(f, "gate");
  j["initial"] = {{"M0", M0}, {"E0", E0}, {"gate", gate}};

  std::vector<Check> checks;
  auto check = [&](const std::string& name, double value, const std::string& target, bool pass) {
    checks.push_back({name, value, target, pass});
  };

  const ClassifierResult c = classify(f.series, cls, termination);
  j["classification"] = {{"verdict", to_string(c.verdict)},
                         {"reason", c.reason},
                         {"t_event", c.t_event},
                         {"lambda_event", c.lambda_event},
                         {"lambda_min", c.lambda_min},
                         {"lambda_max", c.lambda_max},
                         {"max_tube_distance", c.max_tube_distance},
                         {"separated", c.separated},
                         {"t_separation", c.t_separation},
                         {"b_separation", c.b_separation},
                         {"N1_separation", c.N1_separation},
                         {"separation_sign", c.separation_sign}};

  if (!f.series.empty()) {
    double drift = 0.0, edrift = 0.0;
    const double t0 = f.series.front().t, t1 = f.series.back().t;
    for (const SeriesRow& r : f.series) {
      drift = std::max(drift, std::abs(r.M - M0) / M0);
      edrift = std::max(edrift, std::abs(r.E - E0));
    }
    const double span = std::max(t1 - t0, 1e-300);
    j["conservation"] = {{"mass_drift", drift}, {"mass_drift_per_time", drift / span}, {"energy_drift", edrift},
                         {"energy_drift_per_time", edrift / span}, {"released_mass", info_number(f, "released_mass")},
                         {"absorbed_mass", info_number(f, "absorbed_mass")}};
    if (f.series.size() >= 5) {
      const ResidualReport rr = residual_laws(f.series);
      j["residuals"] = {{"median_ratio_lambda", rr.median_ratio_lambda},
                        {"median_ratio_b", rr.median_ratio_b},
                        {"median_ratio_loc", rr.median_ratio_loc},
                        {"ratio_drift_last_half", rr.ratio_drift_last_half}};
    }
  }

  const bool blowup_like = preset == "blowup" || preset == "tail" || preset == "negative-energy";
  if (preset == "soliton") {
    check("verdict", c.verdict == Verdict::soliton ? 1.0 : 0.0, "Soliton", c.verdict == Verdict::soliton);
    // no series (every decomposition failed) leaves the drift undefined
    const double rate = j.contains("conservation") ? j["conservation"]["mass_drift_per_time"].get<double>()
                                                   : std::numeric_limits<double>::quiet_NaN();
    check("mass_drift_per_time", rate, "< 1e-9", rate < 1e-9);
  } else if (blowup_like) {
    check("verdict", c.verdict == Verdict::blowup ? 1.0 : 0.0, "Blowup", c.verdict == Verdict::blowup);
    std::optional<BlowupFit> fit;
    try {
      fit = blowup_fit(f.series);
      j["fit"] = fit_json(*fit);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::fit_window) throw;
      j["fit"] = {{"error", e.what()}};
    }
    if (preset == "blowup") {
      check("fit_r2", fit ? fit->r2 : 0.0, "> 0.99", fit && fit->r2 > 0.99);
      check("ratio_variation", fit ? fit->ratio_variation : 1.0, "< 0.1", fit && fit->ratio_variation < 0.1);
      check("ux_ratio_min", fit ? fit->ux_ratio_min : 0.0, ">= 0.9", fit && fit->ux_ratio_min >= 0.9);
      check("ux_ratio_max", fit ? fit->ux_ratio_max : 0.0, "<= 1.1", fit && fit->ux_ratio_max <= 1.1);
    }
    if (preset == "negative-energy") {
      check("E0", E0, "< 0", E0 < 0.0);
      check("class_A_gate", gate, "< 1", gate < 1.0);
    }
    if (preset == "tail") {
      const auto cps = tail_checkpoints(dir, cfg);
      json arr = json::array();
      for (const TailCheckpoint& cp : cps) {
        json rows = json::array();
        for (size_t i = 0; i < cp.table.rows.size(); ++i) {
          const TailRow& r = cp.table.rows[i];
          rows.push_back({{"R", r.R}, {"window_mass", r.window_mass}, {"ledger_mass", r.ledger_mass},
                          {"scaled", r.scaled}, {"finite_time_model", cp.model_scaled[i]}});
        }
        arr.push_back({{"tag", cp.tag}, {"t", cp.t}, {"lambda", cp.lambda}, {"x", cp.x}, {"ell0", cp.ell0},
                       {"reference", cp.table.reference}, {"slope", cp.table.slope},
                       {"best_octave_log2_error", cp.best_octave_error}, {"best_octave_R", cp.best_octave_R},
                       {"model_k", cp.model_k}, {"rows", rows}});
      }
      j["tail"] = arr;
      const double last = cps.empty() ? std::numeric_limits<double>::infinity() : cps.back().best_octave_error;
      check("tail_factor2_octave", last, "<= 1 (log2)", last <= 1.0);
      bool mono = cps.size() >= 2;
      for (size_t i = 1; i < cps.size(); ++i) mono = mono && cps[i].best_octave_error <= cps[i - 1].best_octave_error;
      check("tail_improves_with_floor", mono ? 1.0 : 0.0, "monotone", mono);
    }
  } else if (preset == "exit") {
    check("verdict", c.verdict == Verdict::exit ? 1.0 : 0.0, "Exit", c.verdict == Verdict::exit);
    check("lambda_max", c.lambda_max, ">= lambda_exit", c.lambda_max >= cls.lambda_exit);
    const double b0 = std::abs(cfg.number("b0"));
    double dev = 0.0;
    for (const SeriesRow& r : f.series) dev = std::max(dev, std::abs(r.lambda / (1.0 + b0 * r.t) - 1.0));
    j["exit_law_deviation"] = dev;
    check("exit_law_deviation", dev, "< 0.15", dev < 0.15);
  }
  return finish(std::move(j), std::move(checks));
}

// ---------------------------------------------------------------- identity suite and ODE portrait

Report identity_report(const Config& cfg) {
  const ProfileSet ps = preset_profiles(cfg);
  const DualProfiles du = dual_profiles(ps);
  const Grid& g = ps.grid;
  const Index last = g.size() - 1;
  std::vector<Check> checks;
  json j;
  j["preset"] = "identity-suite";
  j["grid"] = {{"n", g.size()}, {"L", g.half_length()}};
  auto rel_sup = [](const Field& residual, const Field& scale) { return residual.sup_norm() / scale.sup_norm(); };
  const double intQ = ps.intQ;

  const double pq = std::abs(ps.PQ - intQ * intQ / 16.0) / (intQ * intQ / 16.0);
  checks.push_back({"PQ", pq, "< 1e-6", pq < 1e-6});
  const Field Q3 = pow(ps.Q, 3);
  const double lqp = rel_sup(apply_L(ps.Qp, ps.Q), ps.Qp);
  checks.push_back({"LQ'", lqp, "< 1e-7", lqp < 1e-7});
  const double lq3 = rel_sup(apply_L(Q3, ps.Q) + 8.0 * Q3, 8.0 * Q3);
  checks.push_back({"LQ^3", lq3, "< 1e-7", lq3 < 1e-7});
  const double llq = rel_sup(apply_L(ps.LamQ, ps.Q) + 2.0 * ps.Q, 2.0 * ps.Q);
  checks.push_back({"LLambdaQ", llq, "< 1e-7", llq < 1e-7});
  const double flux = flux_identity(ps);
  checks.push_back({"flux", flux, "< 1e-5", flux < 1e-5});
  const double plim = std::abs(ps.P[0] - 0.5 * intQ);
  checks.push_back({"P_left_limit", plim, "< 1e-4", plim < 1e-4});
  const double r1 = std::abs(du.rho1[last] + 2.0 / intQ);
  checks.push_back({"rho1_right_limit", r1, "< 1e-4", r1 < 1e-4});
  const double r2 = std::abs(du.rho2[last] - 8.0 / intQ);
  checks.push_back({"rho2_right_limit", r2, "< 1e-4", r2 < 1e-4});
  const Field right = cumulative_from_right(ps.LamQ).value;
  const double total = integrate(ps.LamQ);
  const Field from_left = Field::constant(g, total) - right;
  const double lam = std::abs(inner(ps.LamQ, from_left) - intQ * intQ / 8.0) / (intQ * intQ / 8.0);
  checks.push_back({"LambdaQ_primitive", lam, "< 1e-6", lam < 1e-6});
  j["constants"] = {{"intQ", ps.intQ}, {"intQ2", ps.intQ2}, {"intQ6", ps.intQ6}, {"normQp2", ps.normQp2},
                    {"PQ", ps.PQ}, {"normQ_L1", ps.normQ_L1}};
  return finish(std::move(j), std::move(checks));
}

Report ode_portrait_report(const Config& cfg, const fs::path& csv_out) {
  const std::string sweep = cfg.get("sweep");
  std::vector<double> parts;
  {
    std::stringstream ss(sweep);
    std::string item;
    while (std::getline(ss, item, ':')) parts.push_back(parse_double("sweep", trim(item)));
  }
  if (parts.size() != 3) throw config_error("sweep must be lo:hi:step");
  const std::vector<double> b0s = sweep_values(parts[0], parts[1], parts[2]);
  PortraitOptions opt;
  opt.lambda0 = cfg.number("lambda0");
  opt.t_max = cfg.number("ode_t_max");
  opt.lambda_exit = cfg.number("lambda_exit");
  const auto rows = phase_portrait(b0s, opt);
  std::string csv = "b0,fate,T,t_end,lambda_end,reason\n";
  json arr = json::array();
  bool consistent = true;
  double worst_T = 0.0;
  for (const PortraitRow& r : rows) {
    csv += fmt(r.b0) + "," + to_string(r.fate) + "," + fmt(r.T) + "," + fmt(r.t_end) + "," + fmt(r.lambda_end) + "," +
           to_string(r.reason) + "\n";
    arr.push_back({{"b0", r.b0}, {"fate", to_string(r.fate)}, {"t_end", r.t_end}, {"lambda_end", r.lambda_end}});
    const OdeFate expect = r.b0 > 0.0 ? OdeFate::blowup : (r.b0 < 0.0 ? OdeFate::exit : OdeFate::soliton);
    consistent = consistent && r.fate == expect;
    if (r.fate == OdeFate::blowup) {
      // the integration stops at a tiny lambda; the remaining time is lambda / (b / lambda^2)
      const double T_ode = r.t_end + r.lambda_end * opt.lambda0 * opt.lambda0 / r.b0;
      worst_T = std::max(worst_T, std::abs(T_ode - r.T) / r.T);
    }
  }
  if (!csv_out.empty()) {
    fs::create_directories(csv_out.parent_path().empty() ? fs::path(".") : csv_out.parent_path());
    write_text(csv_out, csv);
  }
  json j;
  j["preset"] = "ode-portrait";
  j["sweep"] = sweep;
  j["trajectories"] = arr;
  std::vector<Check> checks;
  checks.push_back({"fates_match_sign_of_b0", consistent ? 1.0 : 0.0, "all", consistent});
  checks.push_back({"blowup_time_rel_error", worst_T, "< 1e-8", worst_T < 1e-8});
  return finish(std::move(j), std::move(checks));
}

// ---------------------------------------------------------------- run / replay

Report run(const Config& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  Report rep;
  if (cfg.name() == "identity-suite") {
    write_text(dir / "metadata.txt", "# gkdv run metadata\n[config]\n" + cfg.echo());
    rep = identity_report(cfg);
  } else if (cfg.name() == "ode-portrait") {
    write_text(dir / "metadata.txt", "# gkdv run metadata\n[config]\n" + cfg.echo());
    rep = ode_portrait_report(cfg, dir / "portrait.csv");
  } else {
    simulate(cfg, dir);
    rep = analyze(dir, cfg);
  }
  write_text(dir / "report.json", rep.json);
  return rep;
}

Report replay(const fs::path& dir, const std::vector<std::string>& overrides) {
  Config cfg = read_run_config(dir);
  for (const std::string& o : overrides) cfg.assign(o);
  Report rep;
  if (cfg.name() == "identity-suite")
    rep = identity_report(cfg);
  else if (cfg.name() == "ode-portrait")
    rep = ode_portrait_report(cfg, {});
  else
    rep = analyze(dir, cfg);
  if (overrides.empty()) write_text(dir / "report.json", rep.json);
  return rep;
}

}  // namespace gkdv
