#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gkdv/grid.hpp"
#include "gkdv/spectral.hpp"

namespace gkdv {

enum class Scheme { etd_rk4, if_rk4 };
enum class WindowPolicy { fixed, tracking };

struct SolverConfig {
  Scheme scheme = Scheme::etd_rk4;
  std::optional<double> dt;     // grid-time step; when absent dt = cfl * h / max(1, 5 sup|u|^4)
  double cfl = 0.2;
  double dealias_fraction = 2.0 / 3.0;
  int pad_factor = 4;
  WindowPolicy window_policy = WindowPolicy::fixed;
  double regrid_lambda_ratio = 0.6;
  double regrid_margin = 0.15;
  double regrid_target = -0.3;  // soliton position after a regrid, as a fraction of L
  int snapshot_stride = 0;      // 0 disables periodic snapshots
  int modulation_stride = 50;
  double t_max = 1.0;
  double sponge_width = 0.1;    // fraction of the window
  double sponge_strength = 5.0;
  long max_steps = 50'000'000;
};

void validate(const SolverConfig& cfg);

/// Affine map between the computational window and the lab frame:
/// x = x_offset + scale * y,  u(t, x) = scale^{-1/2} v(tau, y),
/// t = t_offset + scale^3 * tau.
struct WindowMap {
  double x_offset = 0.0;
  double scale = 1.0;
  double t_offset = 0.0;
};

/// Mass deposited in the lab frame, binned by position: the part of the
/// solution released through window regrids and absorbed by the sponge.
class MassLedger {
 public:
  explicit MassLedger(double bin_width = 0.05) : bin_width_(bin_width) {}
  void add(double x, double mass);
  double total() const;
  /// Mass in bins whose centre lies right of R.
  double mass_right_of(double R) const;
  double bin_width() const noexcept { return bin_width_; }
  const std::map<long, double>& bins() const noexcept { return bins_; }
  void set_bin(long index, double mass) { bins_[index] = mass; }

 private:
  double bin_width_;
  std::map<long, double> bins_;
};

/// One row of series.csv.
struct SeriesRow {
  double t = 0.0;
  double s_est = 0.0;
  double lambda = 1.0;
  double x = 0.0;
  double b = 0.0;
  double M = 0.0;
  double E = 0.0;
  double N1 = 0.0;
  double N2 = 0.0;
  double F11 = 0.0;
  double J1 = 0.0;
  double J2 = 0.0;
  double J = 0.0;
  double res_lambda = 0.0;
  double res_b = 0.0;
  // persisted in diagnostics.csv
  double N1loc = 0.0;
  double N2loc = 0.0;
  double F12 = 0.0;
  double F21 = 0.0;
  double F22 = 0.0;
  double eps_loc = 0.0;        // int eps^2 e^{-|y|/10}
  double tube_distance = 0.0;  // distance to the Q_b family
  double ux_ratio = 0.0;       // lambda ||u_x|| / ||Q'||
  int newton_iters = 0;
};

struct SnapshotRef {
  int index = 0;
  double t = 0.0;
  std::string path;
  WindowMap map;
};

/// What a callback sees: current window field (grid coordinates) and map.
struct EvolveView {
  const Field& v;
  const WindowMap& map;
  double t;     // lab time
  double tau;   // grid time since last regrid
  long step;
  const MassLedger& ledger;          // released and flushed sponge mass so far
  const Vector& pending_absorbed;    // sponge mass per window node not yet flushed
};

struct ModulationFeedback {
  bool valid = false;
  double lambda_grid = 1.0;  // soliton scale in window coordinates
  double x_grid = 0.0;       // soliton centre in window coordinates
  SeriesRow row;             // modulation columns (t, M, E are filled by the evolver)
  bool stop = false;
  std::string reason;
};

struct EvolveCallbacks {
  std::function<ModulationFeedback(const EvolveView&)> on_modulation;
  std::function<std::optional<SnapshotRef>(const EvolveView&)> on_snapshot;
};

struct RunRecord {
  std::vector<SeriesRow> series;
  std::vector<SnapshotRef> snapshots;
  std::string termination;
  double wall_seconds = 0.0;
  long steps = 0;
  int regrids = 0;
  double released_mass = 0.0;
  double absorbed_mass = 0.0;
  MassLedger ledger;
  std::optional<Field> final_field;
  WindowMap final_map;
  double final_t = 0.0;
};

/// Pseudo-spectral integrator for v_t + (v_yy + v^5)_y = -sigma(y) v on a
/// periodic window: exact linear propagator, dealiased quintic term.
class Stepper {
 public:
  Stepper(const Grid& grid, const SolverConfig& cfg);

  const Grid& grid() const noexcept { return grid_; }

  void set_dt(double dt);
  double dt() const noexcept { return dt_; }

  /// Advances the spectrum by one step of size dt().
  void step(ComplexVector& vhat);

  /// Last sup|v| seen on the padded grid during a nonlinear evaluation.
  double last_sup() const noexcept { return last_sup_; }

  /// Sponge damping profile sigma(y) on the window.
  const Vector& sponge() const noexcept { return sponge_; }

  /// Mass removed by the sponge per window node since the last reset.
  const Vector& absorbed() const noexcept { return absorbed_; }
  void reset_absorbed() { absorbed_.setZero(); }

  void to_spectrum(const Vector& v, ComplexVector& vhat);
  void to_physical(const ComplexVector& vhat, Vector& v);

 private:
  void nonlinear(const ComplexVector& vhat, ComplexVector& out, bool first_stage);

  Grid grid_;
  SolverConfig cfg_;
  Index n_, m_;  // window and padded sizes
  Index cutoff_;
  Vector k_;
  ComplexVector lin_;  // i k^3
  Vector sponge_;
  bool sponge_on_;
  double dt_ = 0.0;
  // ETDRK4 / IFRK4 coefficients
  ComplexVector E_, E2_, Qc_, f1_, f2_, f3_;
  // work arrays
  ComplexVector pad_spec_, nv_, na_, nb_, nc_, a_, b_, c_;
  Vector fine_, coarse_, absorbed_;
  ComplexVector tmp_spec_;
  double last_sup_ = 0.0;
};

/// Recommended grid-time step for a field with the given sup norm.
double stable_dt(const Grid& grid, const SolverConfig& cfg, double sup);

/// One step from a physical field (convenience for tests).
Field step(const Field& u, double dt, const SolverConfig& cfg = {});

struct Conserved {
  double M = 0.0;
  double E = 0.0;
};

/// M = int u^2 and E = 1/2 int u_x^2 - 1/6 int u^6 by direct quadrature.
Conserved conserved(const Field& u);

/// Weight g with its first and third derivatives, sampled on a grid.
struct KatoWeight {
  Field g, g1, g3;
};

KatoWeight constant_weight(const Grid& grid);
/// g = (1 + tanh((y - center) / width)) / 2.
KatoWeight smooth_step_weight(const Grid& grid, double center, double width);

struct KatoReport {
  double mass_lhs = 0.0, mass_rhs = 0.0, mass_abs = 0.0, mass_rel = 0.0;
  double energy_lhs = 0.0, energy_rhs = 0.0, energy_abs = 0.0, energy_rel = 0.0;
};

/// Compares centred differences of int v^2 g and int (v_x^2 - v^6/3) g over
/// three snapshots spaced by `spacing` with the localized identities.
KatoReport kato_check(const Field& before, const Field& mid, const Field& after, double spacing,
                      const KatoWeight& w);

struct RegridResult {
  Field field;
  WindowMap map;
  double released_mass = 0.0;
  double core_captured = 1.0;
};

/// Re-samples v onto a fresh copy of its window so that old coordinate
/// `new_center` sits at target_fraction * L and lengths are scaled by
/// `new_scale`: v'(y') = r^{1/2} v(r y' + c').  Mass left of the new window
/// is released into `ledger` at its lab position.
RegridResult rescale_window(const Field& v, const WindowMap& map, double new_center, double new_scale,
                            double core_radius, double target_fraction, MassLedger* ledger);

/// Time integration driver.
RunRecord evolve(const Field& u0, const SolverConfig& cfg, const EvolveCallbacks& callbacks,
                 const WindowMap& initial_map = {});

}  // namespace gkdv
