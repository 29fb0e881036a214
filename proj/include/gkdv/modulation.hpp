#pragma once

#include <array>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gkdv/evolver.hpp"
#include "gkdv/grid.hpp"
#include "gkdv/profiles.hpp"

namespace gkdv {

struct ModulationSeed {
  double lambda = 1.0;
  double x = 0.0;
  double b = 0.0;
};

struct DecomposeOptions {
  double tolerance = 1e-10;  // on |G|
  int max_iterations = 50;
  double fd_step = 1e-6;
  double gamma = kDefaultGamma;
  double b_max = 0.5;                 // |b| beyond this is a failed decomposition
  double max_outside_fraction = 0.05;  // of the profile grid falling outside u's support
  double tube_refine_above = 0.0;      // below this ||eps|| is reported as the tube distance
  double tube_core_radius = 10.0;      // tube distance measured on |y| <= this (the wake beyond is radiation)
};

/// u = lambda^{-1/2} (Q_b + eps)((. - x) / lambda), eps orthogonal to y Lambda Q, Lambda Q, Q.
struct ModulationState {
  double t = 0.0;
  double lambda = 1.0;
  double x = 0.0;
  double b = 0.0;
  Field eps;
  int newton_iters = 0;
  std::array<double, 3> residuals{};
  double tube_distance = 0.0;  // L2 distance to the profile family (||eps|| when below tube_refine_above)
};

/// L2 norm of f over |y| <= core_radius (whole grid when infinite).
double core_norm(const Field& f, double core_radius);

/// Local minimum over (lambda', x', b') near the fitted parameters of
/// || lambda'^{1/2} u(lambda' y + x') - Q_b' ||_{L2(|y| <= core_radius)}, on ps.grid.
double tube_distance(const Field& u, const ProfileSet& ps, double lambda, double x, double b,
                     double gamma = kDefaultGamma, double b_range = 0.5,
                     double core_radius = std::numeric_limits<double>::infinity());

/// Newton iteration on G = ((eps, y Lambda Q), (eps, Lambda Q), (eps, Q)) with a
/// forward-difference Jacobian. u may live on any grid; eps is returned on ps.grid.
/// The default seed is (lambda matched to sup|u|, argmax |u|, 0).
ModulationState decompose(const Field& u, const ProfileSet& ps, std::optional<ModulationSeed> seed = std::nullopt,
                          const DecomposeOptions& opt = {});

/// Orthogonality values for given parameters (no iteration).
std::array<double, 3> orthogonality(const Field& u, const ProfileSet& ps, double lambda, double x, double b,
                                    double gamma = kDefaultGamma);

/// phi_1, phi_2, psi: e^y / 1+y / y^i and e^{2y} / 1 pieces joined on
/// [-1,-1/2] and [1/2,2] by C^2 bridges with positive derivative.
class Weights {
 public:
  explicit Weights(double B = 100.0);

  double B() const noexcept { return B_; }

  // unscaled
  double phi(int i, double y) const;
  double dphi(int i, double y) const;
  double psi(double y) const;
  double dpsi(double y) const;

  // scaled: phi_{i,B}(y) = phi_i(y / B)
  Field phi_B(int i, const Grid& g) const;
  Field dphi_B(int i, const Grid& g) const;  // d/dy of phi_{i,B}
  Field psi_B(const Grid& g) const;

  /// Bridge multiplier kappa (for tests): phi' = blend * (1 - kappa * plateau) on a bridge.
  double kappa(int which) const { return kappa_[which]; }

 private:
  struct Bridge {
    double a, w;
    int left, right;  // piece ids
    double kappa;
    double base;      // value at a
  };
  double piece(int id, double y) const;
  double dpiece(int id, double y) const;
  double bridge_derivative(const Bridge& br, double y) const;
  double bridge_value(const Bridge& br, double y) const;
  double fn(int which, double y) const;
  double dfn(int which, double y) const;

  double B_;
  std::array<Bridge, 5> bridges_;  // phi_1 left/right, phi_2 left/right, psi
  std::array<double, 5> kappa_{};
};

struct DiagnosticSet {
  double B = 100.0;
  double N1 = 0.0, N2 = 0.0, N1loc = 0.0, N2loc = 0.0;
  double J1 = 0.0, J2 = 0.0, J = 0.0;
  std::array<std::array<double, 2>, 2> F{};   // F[i-1][j-1]
  std::array<std::array<double, 2>, 2> JJ{};  // (1-J1)^{-(4(j-1)+2i)} - 1
  double eps_loc = 0.0;  // int eps^2 e^{-|y|/10}
  bool sandwich_ok = true;  // F_{i,j} > 0 whenever N_i > 0
};

DiagnosticSet diagnostics(const ModulationState& state, const ProfileSet& ps, const Weights& w,
                          double gamma = kDefaultGamma);

/// int_{y>0} y^10 eps^2.
double weighted_right_norm(const Field& eps);

// ---------------------------------------------------------------- trajectories

using Trajectory = std::vector<SeriesRow>;

/// s(t) = int dt / lambda^3 by the trapezoid rule, s(t_0) = 0.
std::vector<double> reconstruct_s(const Trajectory& tr);

struct ResidualRow {
  double t = 0.0, s = 0.0;
  double res_lambda = 0.0;  // lambda_s / lambda + b
  double res_x = 0.0;       // x_s / lambda - 1
  double res_b = 0.0;       // b_s + 2 b^2
  double d_ratio = 0.0;     // d/ds (b / lambda^2)
  double bound1 = 0.0;      // (int eps^2 e^{-|y|/10})^{1/2} + b^2
  double bound2 = 0.0;      // int eps^2 e^{-|y|/10} + b^2
  double ratio_lambda = 0.0, ratio_b = 0.0;
  double ratio_loc = 0.0;   // |res_lambda| / (N1loc^{1/2} + b^2)
};

struct ResidualReport {
  std::vector<ResidualRow> rows;
  double median_ratio_lambda = 0.0;
  double median_ratio_b = 0.0;
  double median_ratio_loc = 0.0;
  double ratio_drift_last_half = 0.0;  // relative variation of b/lambda^2 over the second half in t
};

ResidualReport residual_laws(const Trajectory& tr);

struct ClassifierConfig {
  double alpha_star = 0.1;
  double lambda_exit = 2.0;
  double lambda_blowup = 0.5;
  double C_star = 10.0;
  double lambda_floor = 0.2;
};

void validate(const ClassifierConfig& cfg);

enum class Verdict { soliton, exit, blowup, undecided };
const char* to_string(Verdict v);

struct ClassifierResult {
  Verdict verdict = Verdict::undecided;
  std::string reason;
  double t_event = 0.0;
  double lambda_event = 0.0;
  // separation diagnostic at the first time |b| >= C* N1
  bool separated = false;
  double t_separation = 0.0;
  double b_separation = 0.0;
  double N1_separation = 0.0;
  int separation_sign = 0;
  double max_tube_distance = 0.0;
  double lambda_min = 0.0, lambda_max = 0.0;
};

ClassifierResult classify(const Trajectory& tr, const ClassifierConfig& cfg, const std::string& termination = "");

struct BlowupFit {
  double ell0 = 0.0;
  double T_est = 0.0;
  double r2 = 0.0;
  double lambda_window_max = 0.0, lambda_window_min = 0.0;
  std::size_t points = 0;
  double ratio_mean = 0.0;           // b / lambda^2 over the window
  double ratio_variation = 0.0;      // (max - min) / mean of b / lambda^2
  double ratio_final = 0.0;
  double tx_final = 0.0;             // (T_est - t) x(t) at the last sample
  double tx_target = 0.0;            // 1 / ell0^2
  double ux_ratio_min = 0.0, ux_ratio_max = 0.0;
  double ux_ratio_final = 0.0;
};

/// Affine least-squares fit lambda ~ ell0 (T - t) on the final lambda decade.
BlowupFit blowup_fit(const Trajectory& tr, double decrease_required = 3.0);

struct TailRow {
  double R = 0.0;
  double window_mass = 0.0;  // int_{x>R} u~^2 inside the window (core excluded)
  double ledger_mass = 0.0;  // released/absorbed mass right of R
  double scaled = 0.0;       // R^2 (window + ledger)
};

struct TailReport {
  std::vector<TailRow> rows;
  double reference = 0.0;  // ||Q||_{L1}^2 / (8 ell0)
  double slope = 0.0;      // log-log slope of the tail mass in R (-2 expected)
  bool slope_ok = false;   // |slope + 2| <= 0.25
};

/// R^2 int_{x>R} u~^2 with u~ = u - lambda^{-1/2} Q_b((x - x(t))/lambda), core
/// |x - x(t)| < 10 lambda excluded. u is the window field in grid coordinates,
/// `state` is in lab coordinates.
TailReport tail_profile(const Field& v, const WindowMap& map, const ModulationState& state, const ProfileSet& ps,
                        std::span<const double> R_list, double ell0, const MassLedger* ledger = nullptr,
                        double gamma = kDefaultGamma);

/// Same table for a lab-frame residual given directly (synthetic checks).
TailReport tail_table(const Field& residual, std::span<const double> R_list, double ell0, double normQ_L1);

}  // namespace gkdv
