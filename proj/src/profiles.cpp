#include "gkdv/profiles.hpp"

#include <cmath>
#include <limits>

#include "gkdv/linop.hpp"

namespace gkdv {

Field ground_state(const Grid& grid) {
  const double c = std::pow(3.0, 0.25);
  return Field::sample(grid, [c](double y) { return c / std::sqrt(std::cosh(2.0 * y)); });
}

Field ground_state_derivative(const Grid& grid) {
  const double c = std::pow(3.0, 0.25);
  return Field::sample(grid, [c](double y) { return -std::tanh(2.0 * y) * c / std::sqrt(std::cosh(2.0 * y)); });
}

Field scaling_generator(const Field& f) {
  const Vector y = f.grid().points();
  const Vector d = differentiate(f, 1).values();
  return {f.grid(), (0.5 * f.values().array() + y.array() * d.array()).matrix()};
}

ProfileSolve solve_profile_P(const Field& Q, const Field& Qp, const Field& LamQ) {
  require_same_grid(Q, Qp, "solve_profile_P");
  require_same_grid(Q, LamQ, "solve_profile_P");
  const Grid& g = Q.grid();
  const Vector y = g.points();
  const Field tail = cumulative_from_right(LamQ).value;  // int_y^inf Lambda Q

  // (Lambda Q)' = 3/2 Q' + y Q'' with Q'' = Q - Q^5.
  Vector R(g.size());
  for (Index k = 0; k < g.size(); ++k) {
    const double q = Q[k];
    const double q4 = q * q * q * q;
    R[k] = 1.5 * Qp[k] + y[k] * (q - q4 * q) - 5.0 * q4 * tail[k];
  }
  const Field Rf(g, std::move(R));
  const double solvability = inner(Rf, Qp);
  if (std::abs(solvability) > 1e-8) {
    throw Error(ErrorCode::discretization, "profiles",
                "solvability (R, Q') = " + std::to_string(solvability) + " exceeds 1e-8");
  }
  const OperatorMatrix L = OperatorMatrix::linearized(Q);
  ConstrainedSolution sol = solve_constrained(L, Qp, Rf, 1e-6);
  if (std::abs(sol.multiplier) >= 1e-6) {
    throw Error(ErrorCode::grid_too_coarse, "profiles",
                "Lagrange multiplier " + std::to_string(sol.multiplier) + " is not negligible");
  }
  Field P = sol.f - tail;
  return {std::move(P), std::move(sol.f), sol.multiplier, solvability};
}

DualProfiles dual_profiles(const ProfileSet& ps) {
  const Field tail = cumulative_from_right(ps.LamQ).value;
  // int_{-inf}^y Lambda Q, using the same quadrature as the tail so that the
  // left end is exactly zero.
  const double total = tail[0];
  const Field left = Field::constant(ps.grid, total) - tail;
  const double iq = ps.intQ;
  const Field rho1 = (4.0 / (iq * iq)) * left;
  const Field base = (ps.LamPQ / ps.normLamQ2) * ps.LamQ + ps.P - Field::constant(ps.grid, 0.5 * iq);
  const Field rho2 = (16.0 / (iq * iq)) * base - 8.0 * rho1;
  Field rho = 4.0 * rho1 + rho2;
  return {rho1, rho2, std::move(rho)};
}

ProfileSet build_profiles(const Grid& grid) {
  if (grid.is_periodic())
    throw Error(ErrorCode::invalid_argument, "profiles", "profiles are built on a bounded grid");
  const Vector y = grid.points();
  Field Q = ground_state(grid);
  Field Qp = ground_state_derivative(grid);
  Field LamQ(grid, (0.5 * Q.values().array() + y.array() * Qp.values().array()).matrix());
  ProfileSolve solve = solve_profile_P(Q, Qp, LamQ);

  ProfileSet ps{grid,          Q, Qp, LamQ, solve.P, solve.Ptilde, Field::zeros(grid), Field::zeros(grid),
                Field::zeros(grid)};
  ps.intQ = integrate(Q);
  ps.intQ2 = inner(Q, Q);
  ps.intQ6 = integrate(pow(Q, 6));
  ps.normQp2 = inner(Qp, Qp);
  ps.normLamQ2 = inner(LamQ, LamQ);
  ps.PQ = inner(ps.P, Q);
  ps.LamPQ = inner(scaling_generator(ps.P), Q);
  ps.normQ_L1 = integrate(Q.map([](double q) { return std::abs(q); }));
  ps.multiplier = solve.multiplier;
  ps.solvability = solve.solvability;
  DualProfiles d = dual_profiles(ps);
  ps.rho1 = std::move(d.rho1);
  ps.rho2 = std::move(d.rho2);
  ps.rho = std::move(d.rho);
  return ps;
}

double cutoff(double y) {
  if (y <= -2.0) return 0.0;
  if (y >= -1.0) return 1.0;
  const double t = y + 2.0;
  return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
}

namespace {

Field cutoff_field(double b, const Grid& grid, double gamma) {
  if (b == 0.0) return Field::constant(grid, 1.0);
  const double s = std::pow(std::abs(b), gamma);
  return Field::sample(grid, [s](double y) { return cutoff(s * y); });
}

}  // namespace

Field localized_Qb(double b, const ProfileSet& ps, double gamma) {
  if (b == 0.0) return ps.Q;
  const Field chi = cutoff_field(b, ps.grid, gamma);
  return {ps.grid, (ps.Q.values().array() + b * chi.values().array() * ps.P.values().array()).matrix()};
}

LocalizedProfile localized_profile(double b, const ProfileSet& ps, double gamma, double b_max) {
  if (!(std::abs(b) < b_max))
    throw Error(ErrorCode::out_of_regime, "profiles", "|b| = " + std::to_string(std::abs(b)) + " >= " + std::to_string(b_max));
  Field chi = cutoff_field(b, ps.grid, gamma);
  Field Qb = localized_Qb(b, ps, gamma);
  if (b == 0.0) return {b, gamma, std::move(Qb), std::move(chi), Field::zeros(ps.grid)};

  // Q'' - Q + Q^5 = 0 holds in closed form, so only the correction
  // c = b chi P is differentiated numerically:
  // Q_b'' - Q_b + Q_b^5 = c'' - c + (Q_b^5 - Q^5).
  const Field c = b * (chi * ps.P);
  const Vector qb = Qb.values();
  const Vector q = ps.Q.values();
  const Vector q5_diff = (qb.array().pow(5) - q.array().pow(5)).matrix();
  const Field inner_expr(ps.grid, differentiate(c, 2).values() - c.values() + q5_diff);
  const Field lam_qb = ps.LamQ + scaling_generator(c);
  Field psi = -(differentiate(inner_expr, 1) + b * lam_qb);
  return {b, gamma, std::move(Qb), std::move(chi), std::move(psi)};
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  const size_t n = x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double dn = static_cast<double>(n);
  return (dn * sxy - sx * sy) / (dn * sxx - sx * sx);
}

ProfileErrorReport profile_error_report(const ProfileSet& ps, std::span<const double> bs, double gamma) {
  ProfileErrorReport report;
  report.psi_q_target = -ps.normQ_L1 * ps.normQ_L1 / 8.0;
  const Vector y = ps.grid.points();
  std::vector<double> babs, core, zone;
  bool zone_ok = true;
  for (double b : bs) {
    const LocalizedProfile lp = localized_profile(b, ps, gamma);
    ProfileErrorRow row;
    row.b = b;
    const double s = std::pow(std::abs(b), gamma);
    bool any_zone = false;
    for (Index k = 0; k < y.size(); ++k) {
      const double v = std::abs(lp.Psi_b[k]);
      if (std::abs(y[k]) <= 5.0) row.sup_core = std::max(row.sup_core, v);
      const double z = s * y[k];
      if (z >= -2.0 && z <= -1.0) {
        any_zone = true;
        row.sup_cutoff = std::max(row.sup_cutoff, v);
      }
    }
    if (!any_zone) {
      row.sup_cutoff = std::numeric_limits<double>::quiet_NaN();
      zone_ok = false;
    }
    row.psi_q = inner(lp.Psi_b, ps.Q);
    row.psi_q_over_b2 = row.psi_q / (b * b);
    report.rows.push_back(row);
    babs.push_back(std::abs(b));
    core.push_back(row.sup_core);
    zone.push_back(row.sup_cutoff);
  }
  report.slope_core = loglog_slope(babs, core);
  report.slope_cutoff = zone_ok ? loglog_slope(babs, zone) : std::numeric_limits<double>::quiet_NaN();
  return report;
}

double flux_identity(const ProfileSet& ps) {
  const Field term = differentiate(10.0 * (pow(ps.P, 2) * pow(ps.Q, 3)), 1) + scaling_generator(ps.P);
  const double lhs = inner(term, ps.Q);
  const double target = ps.intQ * ps.intQ / 8.0;
  return std::abs(lhs - target) / target;
}

}  // namespace gkdv
