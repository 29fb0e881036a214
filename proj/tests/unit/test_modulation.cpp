#include <cmath>
#include <functional>
#include <Eigen/Cholesky>
#include <limits>
#include <vector>

#include "doctest.h"
#include "gkdv/modulation.hpp"
#include "gkdv/reduced_ode.hpp"
#include "support.hpp"

using namespace gkdv;
using namespace gkdv::test;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

const ProfileSet& ps() { return profiles(2048, 25.0); }

DecomposeOptions fast() {
  DecomposeOptions o;
  o.tube_refine_above = kInf;
  return o;
}

// Q_b at any z: P continued by its left limit beyond the profile grid
double qb_at(double z, double b) {
  const ProfileSet& p = ps();
  const double y0 = p.grid.point(0), y1 = p.grid.point(p.grid.size() - 1);
  const double P = z < y0 ? p.P[0] : (z > y1 ? 0.0 : evaluate_at(p.P, z));
  const double chi = b == 0.0 ? 1.0 : cutoff(std::pow(std::abs(b), kDefaultGamma) * z);
  return std::pow(3.0, 0.25) / std::sqrt(std::cosh(2 * z)) + b * chi * P;
}

// lambda0^{-1/2} base((y - x0) / lambda0) on a periodic window
template <typename F>
Field transformed(F&& base, const Grid& g, double lambda0, double x0) {
  return Field::sample(g, [&](double y) { return base((y - x0) / lambda0) / std::sqrt(lambda0); });
}

Field transformed(const Field& base, const Grid& g, double lambda0, double x0) {
  return transformed([&](double z) { return evaluate_at(base, z); }, g, lambda0, x0);
}

// reduced-ODE data as a trajectory (eps = 0)
Trajectory ode_series(double b0, const std::vector<double>& ts) {
  Trajectory tr;
  for (double t : ts) {
    const ReducedState s = closed_form(b0, 1.0, t);
    SeriesRow r;
    r.t = t;
    r.lambda = s.lambda;
    r.b = s.b;
    r.x = s.x;
    r.ux_ratio = 1.0;
    tr.push_back(r);
  }
  return tr;
}

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> v;
  for (int i = 0; i < n; ++i) v.push_back(a + (b - a) * i / (n - 1));
  return v;
}

Field orthogonal_bump(const ProfileSet& p, double centre, double width, double amp) {
  Field e = Field::sample(p.grid, [&](double y) { return amp * std::exp(-std::pow((y - centre) / width, 2)); });
  const Vector y = p.grid.points();
  std::vector<Field> dirs{Field(p.grid, (y.array() * p.LamQ.values().array()).matrix()), p.LamQ, p.Q};
  // Gram-Schmidt against the three orthogonality directions
  for (size_t i = 0; i < dirs.size(); ++i) {
    for (size_t j = 0; j < i; ++j) dirs[i] = dirs[i] - (inner(dirs[i], dirs[j]) / inner(dirs[j], dirs[j])) * dirs[j];
  }
  for (const Field& d : dirs) e = e - (inner(e, d) / inner(d, d)) * d;
  return e;
}

// Gaussian bump with its components along yLamQ, LamQ, Q removed, evaluated analytically,
// plus a small raw bump. A raw bump of size a shifts b by roughly 30a since (LamQ, Q) = 0.
std::function<double(double)> mostly_orthogonal_bump(double centre, double amp, double raw) {
  auto q = [](double y) { return std::pow(3.0, 0.25) / std::sqrt(std::cosh(2.0 * y)); };
  auto lq = [q](double y) { return q(y) * (0.5 - y * std::tanh(2.0 * y)); };
  std::vector<std::function<double(double)>> dirs{[lq](double y) { return y * lq(y); }, lq, q};
  const Grid& g = ps().grid;
  std::vector<Field> fd;
  for (const auto& d : dirs) fd.push_back(Field::sample(g, d));
  // dirs are mutually orthogonal up to (yLamQ, Q), handle it with one Gram-Schmidt pass
  Eigen::Matrix3d M;
  Eigen::Vector3d r;
  const Field bump = Field::sample(g, [&](double y) { return std::exp(-std::pow(y - centre, 2)); });
  for (int i = 0; i < 3; ++i) {
    r[i] = inner(bump, fd[i]);
    for (int j = 0; j < 3; ++j) M(i, j) = inner(fd[i], fd[j]);
  }
  const Eigen::Vector3d c = M.ldlt().solve(r);
  return [=](double y) {
    const double e = std::exp(-std::pow(y - centre, 2));
    double v = e;
    for (int k = 0; k < 3; ++k) v -= c[k] * dirs[k](y);
    return amp * v + raw * e;
  };
}

}  // namespace

TEST_SUITE("modulation") {

TEST_CASE("decompose the ground state") {
  const ModulationState s = decompose(ps().Q, ps(), std::nullopt, fast());
  CHECK(std::abs(s.lambda - 1.0) < 1e-9);
  CHECK(std::abs(s.x) < 1e-9);
  CHECK(std::abs(s.b) < 1e-9);
  CHECK(l2_norm(s.eps) < 1e-9);
}

TEST_CASE("decompose a rescaled, translated soliton") {
  const Grid g = Grid::periodic(4096, 50.0);
  const Field u = transformed(ps().Q, g, 0.7, 3.0);
  const ModulationState s = decompose(u, ps(), std::nullopt, fast());
  CHECK(std::abs(s.lambda - 0.7) < 1e-7);
  CHECK(std::abs(s.x - 3.0) < 1e-7);
  CHECK(std::abs(s.b) < 1e-7);
}

TEST_CASE("decompose Q_b from a perturbed seed") {
  const Field u = localized_Qb(0.02, ps());
  const ModulationState s = decompose(u, ps(), ModulationSeed{1.05, 0.1, 0.0}, fast());
  CHECK(std::abs(s.lambda - 1.0) < 1e-7);
  CHECK(std::abs(s.x) < 1e-7);
  CHECK(std::abs(s.b - 0.02) < 1e-7);
  CHECK(l2_norm(s.eps) < 1e-7);
}

TEST_CASE("decomposition failure far from the family") {
  const Field u = Field::sample(ps().grid, [](double y) { return 0.1 * std::exp(-y * y / 50.0); });
  try {
    (void)decompose(u, ps(), std::nullopt, fast());
    FAIL("expected decomposition failure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::decomposition_failed);
  }
}

TEST_CASE("tube distance") {
  const Field Qb = localized_Qb(0.01, ps());
  CHECK(tube_distance(Qb, ps(), 1.0, 0.0, 0.01) < 1e-6);
  const Field bump = Field::sample(ps().grid, [](double y) { return 0.05 * std::exp(-std::pow(y - 3.0, 2)); });
  DecomposeOptions refine;
  refine.tube_refine_above = 0.0;
  const ModulationState s = decompose(ps().Q + bump, ps(), std::nullopt, refine);
  CHECK(s.tube_distance > 0.0);
  CHECK(s.tube_distance <= l2_norm(s.eps) * (1 + 1e-9));
}

TEST_CASE("weights") {
  const Weights w;
  CHECK(w.phi(1, -2.0) == std::exp(-2.0));
  CHECK(w.phi(2, 3.0) == 9.0);
  CHECK(w.phi(1, 0.25) == 1.25);
  CHECK(w.psi(0.0) == 1.0);
  CHECK(w.psi(-2.0) == std::exp(-4.0));
  for (double y = -5.0; y <= 5.0; y += 1e-3) {
    CHECK(w.dphi(1, y) > 0.0);
    CHECK(w.dphi(2, y) > 0.0);
    CHECK(w.dpsi(y) >= 0.0);
    CHECK(w.phi(1, y) <= w.phi(2, y) + 1e-15);
  }
  const Field p = w.phi_B(1, ps().grid);
  CHECK(evaluate_at(p, 10.0) == doctest::Approx(w.phi(1, 0.1)));
}

TEST_CASE("diagnostics") {
  const Weights w;
  const ModulationState zero{0.0, 1.0, 0.0, 0.0, Field::zeros(ps().grid)};
  const DiagnosticSet d0 = diagnostics(zero, ps(), w);
  CHECK(d0.N1 == 0.0);
  CHECK(d0.N2 == 0.0);
  CHECK(std::abs(d0.F[0][0]) < 1e-14);
  CHECK(d0.J1 == 0.0);
  CHECK(d0.J2 == 0.0);

  const ModulationState small{0.0, 1.0, 0.0, 0.0, orthogonal_bump(ps(), 1.0, 1.5, 1e-3)};
  const DiagnosticSet d1 = diagnostics(small, ps(), w);
  CHECK(d1.F[0][0] > 0.0);
  CHECK(d1.F[0][0] / d1.N1 >= 0.1);
  CHECK(d1.F[0][0] / d1.N1 <= 10.0);
  CHECK(d1.N1 <= d1.N2);
  CHECK(d1.sandwich_ok);

  const Field far = Field::sample(ps().grid, [](double y) { return 1e-3 * std::exp(-std::pow(y - 20.0, 2)); });
  const ModulationState right{0.0, 1.0, 0.0, 0.0, far};
  const DiagnosticSet d2 = diagnostics(right, ps(), w);
  CHECK(d2.J1 == doctest::Approx(-2.0 / golden("intQ") * integrate(far)).epsilon(1e-4));
}

TEST_CASE("weighted right norm") {
  const Field e = Field::sample(ps().grid, [](double y) { return y < 0 ? 1.0 : 0.0; });
  CHECK(weighted_right_norm(e) == 0.0);
}

TEST_CASE("residual laws on reduced-ODE data") {
  const Trajectory tr = ode_series(0.05, linspace(0.0, 15.0, 3001));
  const ResidualReport r = residual_laws(tr);
  double worst = 0.0;
  for (const ResidualRow& row : r.rows)
    worst = std::max({worst, std::abs(row.res_lambda), std::abs(row.res_x), std::abs(row.res_b), std::abs(row.d_ratio)});
  CHECK(worst < 1e-6);
  CHECK(r.ratio_drift_last_half < 1e-12);
  CHECK_THROWS_AS(residual_laws(Trajectory(tr.begin(), tr.begin() + 4)), Error);
}

TEST_CASE("classifier on reduced-ODE trajectories") {
  const ClassifierConfig cfg;
  {
    const double T = blowup_time(0.05, 1.0);
    std::vector<double> ts;
    for (double t = 0.0; t < T * (1 - 0.1); t += 0.05) ts.push_back(t);
    const ClassifierResult c = classify(ode_series(0.05, ts), cfg);
    CHECK(c.verdict == Verdict::blowup);
    CHECK(c.lambda_event <= 0.5);
    CHECK(c.separation_sign == 1);
  }
  {
    const ClassifierResult c = classify(ode_series(-0.05, linspace(0.0, 30.0, 601)), cfg);
    CHECK(c.verdict == Verdict::exit);
    CHECK(c.lambda_event >= 2.0);
    CHECK(c.separation_sign == -1);
  }
  {
    const ClassifierResult c = classify(ode_series(0.0, linspace(0.0, 10.0, 101)), cfg);
    CHECK(c.verdict == Verdict::soliton);
    CHECK_FALSE(c.separated);
  }
  {
    Trajectory tr = ode_series(0.0, linspace(0.0, 10.0, 101));
    tr[50].tube_distance = 0.2;
    CHECK(classify(tr, cfg).verdict == Verdict::exit);
  }
  ClassifierConfig bad;
  bad.lambda_exit = 0.9;
  CHECK_THROWS_AS(classify({}, bad), Error);
}

TEST_CASE("blow-up fit on reduced-ODE data") {
  const double b0 = 0.05, T = 20.0;
  std::vector<double> ts;
  for (double r = 1.0; r > 1e-7; r *= 0.98) ts.push_back(T * (1.0 - r));
  const BlowupFit f = blowup_fit(ode_series(b0, ts));
  CHECK(std::abs(f.ell0 - b0) < 1e-8);
  CHECK(f.r2 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(f.T_est - T) < 1e-8);
  CHECK(rel(f.tx_final, 400.0) < 1e-6);
  CHECK(f.tx_target == doctest::Approx(400.0).epsilon(1e-7));
  CHECK(f.ratio_variation < 1e-10);

  try {
    (void)blowup_fit(ode_series(b0, linspace(0.0, 5.0, 50)));
    FAIL("expected fit-window error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::fit_window);
  }
}

TEST_CASE("synthetic tail tables") {
  const Grid g = Grid::bounded(2000001, 1000.0);
  const std::vector<double> R{2.0, 4.0, 8.0, 16.0};
  const double c = 0.3;
  const Field inv = Field::sample(g, [&](double x) { return x > 1.0 ? c / x : 0.0; });
  const TailReport t1 = tail_table(inv, R, 0.05, golden("intQ"));
  for (const TailRow& r : t1.rows) CHECK(rel(r.scaled, c * c * r.R * (1.0 - r.R / 1000.0)) < 1e-3);
  CHECK(t1.slope == doctest::Approx(-1.0).epsilon(0.02));
  CHECK_FALSE(t1.slope_ok);

  const double A = 0.7;
  const Field law = Field::sample(g, [&](double x) { return x > 1.0 ? std::sqrt(2 * A / (x * x * x)) : 0.0; });
  const TailReport t2 = tail_table(law, R, 0.05, golden("intQ"));
  for (const TailRow& r : t2.rows) CHECK(rel(r.scaled, A) < 1e-3);
  CHECK(t2.slope_ok);
  CHECK(t2.reference == doctest::Approx(golden("intQ") * golden("intQ") / 0.4));
  CHECK_THROWS_AS(tail_table(law, {}, 0.05, golden("intQ")), Error);
}

TEST_CASE("property: decomposition is equivariant") {
  Rng rng(61);
  const Grid g = Grid::periodic(8192, 100.0);
  for (int i = 0; i < kCases; ++i) {
    const double b = uniform(rng, -0.015, 0.015);
    const auto bump = mostly_orthogonal_bump(uniform(rng, -2, 2), uniform(rng, -0.02, 0.02), uniform(rng, -5e-4, 5e-4));
    auto base = [&](double z) { return qb_at(z, b) + bump(z); };
    const double l0 = uniform(rng, 0.7, 1.4), x0 = uniform(rng, -3.0, 3.0);
    const ModulationState m = decompose(transformed(base, g, 1.0, 0.0), ps(), std::nullopt, fast());
    const ModulationState n = decompose(transformed(base, g, l0, x0), ps(), std::nullopt, fast());
    CHECK(std::abs(n.lambda - l0 * m.lambda) < 1e-7);
    CHECK(std::abs(n.x - (l0 * m.x + x0)) < 1e-7);
    CHECK(std::abs(n.b - m.b) < 1e-7);
    CHECK(std::abs(l2_norm(n.eps) - l2_norm(m.eps)) < 1e-7);
  }
}

TEST_CASE("property: orthogonality after convergence") {
  Rng rng(62);
  const Grid g = Grid::periodic(4096, 50.0);
  for (int i = 0; i < kCases; ++i) {
    const double b = uniform(rng, -0.04, 0.04);
    const auto bump = mostly_orthogonal_bump(uniform(rng, -3, 3), uniform(rng, -0.02, 0.02), uniform(rng, -5e-4, 5e-4));
    const Field u = Field::sample(g, [&](double y) { return qb_at(y, b) + bump(y); });
    const ModulationState s = decompose(u, ps(), std::nullopt, fast());
    const auto res = orthogonality(u, ps(), s.lambda, s.x, s.b);
    for (double r : res) CHECK(std::abs(r) < 1e-9);
  }
}

TEST_CASE("property: J-factors follow their formula") {
  Rng rng(63);
  const Weights w;
  for (int i = 0; i < kCases; ++i) {
    const ModulationState s{0.0, 1.0, 0.0, uniform(rng, -0.05, 0.05),
                            orthogonal_bump(ps(), uniform(rng, -5, 5), uniform(rng, 0.5, 3), uniform(rng, -0.05, 0.05))};
    const DiagnosticSet d = diagnostics(s, ps(), w);
    for (int a = 1; a <= 2; ++a)
      for (int b = 1; b <= 2; ++b)
        CHECK(d.JJ[a - 1][b - 1] == std::pow(1.0 - d.J1, -(4.0 * (b - 1) + 2.0 * a)) - 1.0);
    CHECK(d.N1 <= d.N2);
    CHECK(d.J == doctest::Approx(4 * d.J1 + d.J2).epsilon(1e-12));
  }
}

TEST_CASE("property: rescaled time reconstruction") {
  Rng rng(64);
  for (int i = 0; i < kCases; ++i) {
    const double b0 = uniform(rng, -0.1, 0.1);
    const double t_end = b0 > 0 ? 0.5 * blowup_time(b0, 1.0) : 10.0;
    const Trajectory tr = ode_series(b0, linspace(0.0, t_end, 20001));
    const std::vector<double> s = reconstruct_s(tr);
    double err = 0.0;
    for (size_t k = 0; k < tr.size(); k += 500) {
      StopRule rule;
      rule.t_max = tr[k].t;
      const double exact = k == 0 ? 0.0 : integrate(b0, 1.0, rule).states.back().s;
      err = std::max(err, std::abs(s[k] - exact) / std::max(1.0, exact));
    }
    CHECK(err < 1e-8);
  }
}

}
