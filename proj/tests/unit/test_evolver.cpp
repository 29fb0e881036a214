#include <cmath>
#include <map>
#include <numbers>

#include "doctest.h"
#include "gkdv/evolver.hpp"
#include "gkdv/modulation.hpp"
#include "gkdv/profiles.hpp"
#include "support.hpp"

using namespace gkdv;
using namespace gkdv::test;

namespace {

Field soliton(const Grid& g, double c) {
  return Field::sample(g, [&](double y) { return std::pow(3.0, 0.25) / std::sqrt(std::cosh(2 * (y - c))); });
}

SolverConfig plain(double t_max, std::optional<double> dt = std::nullopt) {
  SolverConfig cfg;
  cfg.t_max = t_max;
  cfg.dt = dt;
  cfg.sponge_strength = 0.0;
  cfg.modulation_stride = 1 << 30;
  return cfg;
}

double wave_error(Index n, double L, std::optional<double> dt) {
  const Grid g = Grid::periodic(n, L);
  const RunRecord r = evolve(soliton(g, 0.0), plain(1.0, dt), {});
  return l2_norm(*r.final_field - soliton(g, 1.0));
}

}  // namespace

TEST_SUITE("evolver") {

TEST_CASE("zero data stays zero") {
  const Grid g = Grid::periodic(256, 10.0);
  CHECK(step(Field::zeros(g), 1e-2).sup_norm() == 0.0);
}

TEST_CASE("linear limit is the Airy phase") {
  const double L = 20.0, k = 3 * std::numbers::pi / L, A = 1e-6;
  const Grid g = Grid::periodic(512, L);
  const Field u0 = Field::sample(g, [&](double y) { return A * std::sin(k * y); });
  const RunRecord r = evolve(u0, plain(1.0, 1e-2), {});
  const Field exact = Field::sample(g, [&](double y) { return A * std::sin(k * y + k * k * k); });
  CHECK((*r.final_field - exact).sup_norm() / A < 1e-10);
}

TEST_CASE("traveling wave at n = 8192") {
  const Grid g = Grid::periodic(8192, 100.0);
  SolverConfig cfg = plain(1.0);
  cfg.modulation_stride = 100;
  const Field u0 = soliton(g, 0.0);
  const RunRecord r = evolve(u0, cfg, {});
  CHECK(l2_norm(*r.final_field - soliton(g, 1.0)) < 1e-5);
  const Conserved c0 = conserved(u0);
  double dm = 0.0, de = 0.0;
  for (const SeriesRow& row : r.series) {
    dm = std::max(dm, std::abs(row.M - c0.M) / c0.M);
    de = std::max(de, std::abs(row.E - c0.E));
  }
  CHECK(dm < 1e-10);
  CHECK(de < 1e-10);
  CHECK(r.termination == "t_max");
  CHECK(r.final_t == 1.0);
}

TEST_CASE("temporal order") {
  const double e1 = wave_error(2048, 50.0, 2e-3), e2 = wave_error(2048, 50.0, 1e-3), e3 = wave_error(2048, 50.0, 5e-4);
  MESSAGE("errors " << e1 << " " << e2 << " " << e3);
  CHECK(e1 / e2 >= 16.0);
  CHECK(e2 / e3 >= 16.0);
}

TEST_CASE("spatial order") {
  const double e1 = wave_error(256, 50.0, 1e-3), e2 = wave_error(512, 50.0, 1e-3);
  CHECK(e1 / e2 >= 8.0);
}

TEST_CASE("conserved quantities") {
  const ProfileSet& ps = profiles();
  const Conserved q = conserved(ps.Q);
  CHECK(rel(q.M, golden("intQ2")) < 1e-8);
  CHECK(std::abs(q.E) < 1e-8);
  const double a = 1.02;
  const Conserved qa = conserved(a * ps.Q);
  const double e_oracle = a * a / 2 * golden("normQp2") - std::pow(a, 6) / 6 * golden("intQ6");
  CHECK(qa.E < 0.0);
  CHECK(std::abs(qa.E - e_oracle) < 1e-8);
  const Field half = Field::sample(ps.grid, [](double y) { return std::sqrt(0.5) * std::pow(3.0, 0.25) / std::sqrt(std::cosh(y)); });
  CHECK(rel(conserved(half).M, golden("intQ2")) < 1e-8);
}

TEST_CASE("Kato identities") {
  const Grid g = Grid::periodic(2048, 50.0);
  const double dt = 2.5e-4;
  // steps at which to keep the field: t = 1 -+ 0.04, 1 -+ 0.02, 1
  std::map<long, Field> keep;
  const std::map<long, int> wanted{{3840, 0}, {3920, 0}, {4000, 0}, {4080, 0}, {4160, 0}};
  SolverConfig cfg = plain(1.04 + 1e-9, dt);
  cfg.snapshot_stride = 1;
  EvolveCallbacks cb;
  cb.on_snapshot = [&](const EvolveView& v) -> std::optional<SnapshotRef> {
    if (wanted.count(v.step)) keep.emplace(v.step, v.v);
    return std::nullopt;
  };
  (void)evolve(soliton(g, -1.0), cfg, cb);
  REQUIRE(keep.size() == 5);

  const KatoReport flat = kato_check(keep.at(3920), keep.at(4000), keep.at(4080), 0.02, constant_weight(g));
  CHECK(flat.mass_rel < 1e-8);
  CHECK(flat.energy_rel < 1e-8);

  const KatoWeight step = smooth_step_weight(g, 0.0, 1.0);
  const KatoReport wide = kato_check(keep.at(3840), keep.at(4000), keep.at(4160), 0.04, step);
  const KatoReport narrow = kato_check(keep.at(3920), keep.at(4000), keep.at(4080), 0.02, step);
  CHECK(narrow.mass_rel < std::max(1e-3, 10 * 0.02 * 0.02));
  CHECK(narrow.energy_rel < std::max(1e-3, 10 * 0.02 * 0.02));
  // O(spacing^2)
  CHECK(wide.mass_abs / narrow.mass_abs == doctest::Approx(4.0).epsilon(0.1));
  CHECK(wide.energy_abs / narrow.energy_abs == doctest::Approx(4.0).epsilon(0.1));

  // weight transition far from the soliton
  const Field far = soliton(g, 25.0);
  const KatoReport away = kato_check(far, far, far, 0.01, smooth_step_weight(g, -20.0, 1.0));
  CHECK(away.mass_rel < 1e-6);
  CHECK(away.energy_rel < 1e-6);
}

TEST_CASE("window regrids") {
  const Grid g = Grid::periodic(2048, 50.0);
  const Field Q = soliton(g, 0.0);
  const RegridResult id = rescale_window(Q, {}, 0.0, 1.0, 10.0, 0.0, nullptr);
  CHECK((id.field - Q).sup_norm() < 1e-12);
  CHECK(id.map.x_offset == 0.0);
  CHECK(id.map.scale == 1.0);

  const ProfileSet& ps = profiles(2048, 25.0);
  const double x0 = 2.5;
  const RegridResult moved = rescale_window(Q, {}, x0, 1.0, 10.0, 0.0, nullptr);
  const ModulationState before = decompose(Q, ps), after = decompose(moved.field, ps);
  CHECK(std::abs(after.x - (before.x - x0)) < 1e-7);
  CHECK(std::abs(after.lambda - before.lambda) < 1e-7);
  CHECK(moved.map.x_offset + after.x == doctest::Approx(before.x));

  const RegridResult zoom = rescale_window(Q, {}, 0.0, 0.5, 10.0, 0.0, nullptr);
  CHECK(zoom.map.scale == 0.5);
  auto core = [](const Field& f, double r) { return core_norm(f, r); };
  CHECK(rel(core(zoom.field, 20.0), core(Q, 10.0)) < 1e-6);

  // data left of the new window goes to the ledger at its lab position
  MassLedger ledger;
  const Field pair = Q + soliton(g, -30.0);
  const RegridResult cut = rescale_window(pair, {}, 0.0, 0.5, 10.0, 0.0, &ledger);
  CHECK(cut.released_mass > 0.5 * golden("intQ2"));
  CHECK(ledger.total() == doctest::Approx(cut.released_mass));
  CHECK(ledger.mass_right_of(-25.0) < 1e-3 * ledger.total());
}

TEST_CASE("sponge absorbs leftward radiation") {
  const Grid g = Grid::periodic(1024, 40.0);
  SolverConfig cfg = plain(20.0);
  cfg.sponge_strength = 5.0;
  const Field pulse = Field::sample(g, [](double y) { return 0.05 * std::exp(-(y + 20.0) * (y + 20.0)); });
  const RunRecord r = evolve(pulse, cfg, {});
  const double m0 = conserved(pulse).M, m1 = conserved(*r.final_field).M;
  CHECK(m1 < 0.5 * m0);
  CHECK(r.absorbed_mass == doctest::Approx(m0 - m1).epsilon(0.02));
}

TEST_CASE("config validation") {
  SolverConfig cfg;
  cfg.cfl = -1.0;
  CHECK_THROWS_AS(validate(cfg), Error);
  cfg = {};
  cfg.modulation_stride = 0;
  CHECK_THROWS_AS(validate(cfg), Error);
}

TEST_CASE("property: conservation for random data") {
  Rng rng(51);
  // resolved well past the dealiasing cutoff so the first projection keeps the mass
  const Grid g = Grid::periodic(1024, 30.0);
  for (int i = 0; i < kCases; ++i) {
    const Field u0 = 0.5 * random_bumps(g, rng, 3, 8.0);
    // fixed dt: the automatic step is tuned to soliton-scale data, the error here is O(dt^4)
    const RunRecord r = evolve(u0, plain(0.2, 1e-3), {});
    const Conserved c0 = conserved(u0), c1 = conserved(*r.final_field);
    CHECK(std::abs(c1.M - c0.M) / c0.M / 0.2 < 1e-9);
    CHECK(std::abs(c1.E - c0.E) / 0.2 < 1e-8);
  }
}

TEST_CASE("property: translation equivariance of a step") {
  Rng rng(52);
  const Grid g = Grid::periodic(256, 20.0);
  const Index n = g.size();
  for (int i = 0; i < kCases; ++i) {
    const Field u = 0.8 * random_bumps(g, rng, 2, 5.0);
    const Index m = static_cast<Index>(uniform(rng, 1, 200));
    Vector shifted(n);
    for (Index k = 0; k < n; ++k) shifted[k] = u[(k + m) % n];
    SolverConfig cfg = plain(1.0);
    const Field a = step(u, 5e-3, cfg), b = step(Field(g, shifted), 5e-3, cfg);
    double err = 0.0;
    for (Index k = 0; k < n; ++k) err = std::max(err, std::abs(b[k] - a[(k + m) % n]));
    CHECK(err < 1e-12 * (1.0 + u.sup_norm()));
  }
}

TEST_CASE("property: mass ledger bookkeeping") {
  Rng rng(53);
  for (int i = 0; i < kCases; ++i) {
    MassLedger ledger;
    double sum = 0.0, right = 0.0;
    const double R = uniform(rng, -10, 10);
    for (int j = 0; j < 50; ++j) {
      const double x = uniform(rng, -20, 20), m = uniform(rng, 0, 1);
      ledger.add(x, m);
      sum += m;
      const double centre = (std::floor(x / ledger.bin_width()) + 0.5) * ledger.bin_width();
      if (centre > R) right += m;
    }
    CHECK(ledger.total() == doctest::Approx(sum).epsilon(1e-13));
    CHECK(ledger.mass_right_of(R) == doctest::Approx(right).epsilon(1e-13));
  }
}

TEST_CASE("property: zoom preserves L2 mass of a centred core") {
  Rng rng(54);
  const Grid g = Grid::periodic(2048, 50.0);
  for (int i = 0; i < kCases; ++i) {
    const double lam = uniform(rng, 0.5, 1.5), r = uniform(rng, 0.5, 1.0);
    const Field u = Field::sample(g, [&](double y) { return std::pow(3.0, 0.25) / std::sqrt(lam * std::cosh(2 * y / lam)); });
    const RegridResult z = rescale_window(u, {}, 0.0, r, 10.0 * lam, 0.0, nullptr);
    CHECK(rel(l2_norm(z.field), l2_norm(u)) < 1e-6);
  }
}

}
