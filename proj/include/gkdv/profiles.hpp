#pragma once

#include <span>
#include <vector>

#include "gkdv/grid.hpp"

namespace gkdv {

/// Q(y) = (3 / cosh^2(2y))^{1/4}, the positive solution of Q'' + Q^5 = Q.
Field ground_state(const Grid& grid);
/// Closed-form Q' = -tanh(2y) Q.
Field ground_state_derivative(const Grid& grid);

/// Lambda f = f/2 + y f'.
Field scaling_generator(const Field& f);

struct ProfileSolve {
  Field P;
  Field Ptilde;
  double multiplier = 0.0;   // Lagrange multiplier of the bordered solve
  double solvability = 0.0;  // (R, Q')
};

/// Builds P with (L P)' = Lambda Q, P -> 0 at +inf and (P, Q') = 0, as
/// P = Ptilde - int_y^inf Lambda Q with L Ptilde = R and Ptilde orthogonal to Q'.
ProfileSolve solve_profile_P(const Field& Q, const Field& Qp, const Field& LamQ);

struct DualProfiles {
  Field rho1;
  Field rho2;
  Field rho;
};

/// Every profile and scalar constant of the ground-state family on one bounded grid.
struct ProfileSet {
  Grid grid;
  Field Q, Qp, LamQ, P, Ptilde, rho1, rho2, rho;
  double intQ = 0.0;
  double intQ2 = 0.0;
  double intQ6 = 0.0;
  double normQp2 = 0.0;
  double normLamQ2 = 0.0;
  double PQ = 0.0;
  double LamPQ = 0.0;
  double normQ_L1 = 0.0;
  double multiplier = 0.0;
  double solvability = 0.0;
};

ProfileSet build_profiles(const Grid& grid);

DualProfiles dual_profiles(const ProfileSet& ps);

/// Cutoff: 0 for y <= -2, 1 for y >= -1, quintic smoothstep in between.
double cutoff(double y);

inline constexpr double kDefaultGamma = 0.75;

struct LocalizedProfile {
  double b = 0.0;
  double gamma = kDefaultGamma;
  Field Qb;
  Field chi_b;
  Field Psi_b;
};

/// Q_b = Q + b chi(|b|^gamma y) P with the residual
/// -Psi_b = (Q_b'' - Q_b + Q_b^5)' + b Lambda Q_b. Requires |b| < b_max.
LocalizedProfile localized_profile(double b, const ProfileSet& ps, double gamma = kDefaultGamma,
                                   double b_max = 0.1);

/// Q_b alone (no residual, no regime check); used in the modulation Newton loop.
Field localized_Qb(double b, const ProfileSet& ps, double gamma = kDefaultGamma);

struct ProfileErrorRow {
  double b = 0.0;
  double sup_core = 0.0;     // sup |Psi_b| on |y| <= 5
  double sup_cutoff = 0.0;   // sup |Psi_b| on |b|^gamma y in [-2, -1] (NaN if off-grid)
  double psi_q = 0.0;        // (Psi_b, Q)
  double psi_q_over_b2 = 0.0;
};

struct ProfileErrorReport {
  std::vector<ProfileErrorRow> rows;
  double slope_core = 0.0;
  double slope_cutoff = 0.0;  // NaN when the cutoff zone is off-grid for some b
  double psi_q_target = 0.0;  // -||Q||_{L1}^2 / 8
};

ProfileErrorReport profile_error_report(const ProfileSet& ps, std::span<const double> bs,
                                        double gamma = kDefaultGamma);

/// Relative deviation of ((10 P^2 Q^3)' + Lambda P, Q) from (int Q)^2 / 8.
double flux_identity(const ProfileSet& ps);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace gkdv
