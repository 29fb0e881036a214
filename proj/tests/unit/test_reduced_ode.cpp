#include <cmath>

#include "doctest.h"
#include "gkdv/reduced_ode.hpp"
#include "support.hpp"

using namespace gkdv;
using namespace gkdv::test;

namespace {

double sup_rel_error(const ReducedTrajectory& tr, double b0, double l0) {
  // compared at equal lab time: along s the exit branch amplifies the phase error
  double e = 0.0;
  for (const ReducedState& s : tr.states) {
    const ReducedState c = closed_form(b0, l0, s.t);
    e = std::max({e, rel(s.lambda, c.lambda), std::abs(s.x - c.x) / (std::abs(c.x) + 1e-12)});
    e = std::max(e, b0 == 0.0 ? std::abs(s.b) : rel(s.b, c.b));
  }
  return e;
}

}  // namespace

TEST_SUITE("reduced_ode") {

TEST_CASE("soliton trajectory") {
  StopRule rule;
  rule.t_max = 50.0;
  const ReducedTrajectory tr = integrate(0.0, 1.3, rule);
  CHECK(tr.reason == StopReason::t_max);
  for (const ReducedState& s : tr.states) {
    CHECK(s.lambda == 1.3);
    CHECK(s.b == 0.0);
    CHECK(s.x == doctest::Approx(s.t / (1.3 * 1.3)).epsilon(1e-12));
  }
}

TEST_CASE("blow-up and exit laws") {
  StopRule r1;
  r1.t_max = 5.0;
  const ReducedTrajectory up = integrate(0.1, 1.0, r1);
  CHECK(std::abs(up.states.back().t - 5.0) < 1e-12);
  CHECK(std::abs(up.states.back().lambda - 0.5) < 1e-9);

  StopRule r2;
  r2.t_max = 10.0;
  const ReducedTrajectory down = integrate(-0.1, 1.0, r2);
  CHECK(std::abs(down.states.back().lambda - 2.0) < 1e-9);
}

TEST_CASE("closed form") {
  const double b0 = 0.05, T = blowup_time(b0, 1.0);
  CHECK(T == doctest::Approx(20.0));
  CHECK(std::isinf(blowup_time(-0.05, 1.0)));
  CHECK(std::isinf(blowup_time(0.0, 1.0)));
  for (double t : {1.0, 10.0, 19.0, 19.99}) {
    const ReducedState s = closed_form(b0, 1.0, t);
    CHECK(rel(s.b, b0 * b0 * b0 * (T - t) * (T - t)) < 1e-12);
    CHECK(rel(s.lambda, b0 * (T - t)) < 1e-12);
  }
  const double t = T * (1.0 - 1e-8);
  CHECK(rel((T - t) * closed_form(b0, 1.0, t).x, 1.0 / (b0 * b0)) < 1e-6);
  CHECK(closed_form_s(b0, 1.0, 1e4).t < T);
  CHECK(closed_form_s(b0, 1.0, 1e6).t > closed_form_s(b0, 1.0, 1e4).t);
  try {
    (void)closed_form(b0, 1.0, 20.0);
    FAIL("expected past-blowup");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::past_blowup);
  }
}

TEST_CASE("integrator matches closed forms") {
  StopRule rule;
  rule.t_max = 19.0;
  const ReducedTrajectory tr = integrate(0.05, 1.0, rule);
  CHECK(sup_rel_error(tr, 0.05, 1.0) < 1e-8);
  const ReducedTrajectory full = integrate(0.05, 1.0, StopRule{});
  CHECK(full.blowup_reached());
  CHECK(std::abs(full.states.back().t - 20.0) / 20.0 < 1e-8 + kBlowupLambda);
}

TEST_CASE("phase portrait") {
  const std::vector<double> b0s = sweep_values(-0.1, 0.1, 0.02);
  CHECK(b0s.size() == 11);
  CHECK(b0s[5] == 0.0);
  const auto rows = phase_portrait(b0s);
  for (const PortraitRow& r : rows) {
    if (r.b0 > 0) CHECK(r.fate == OdeFate::blowup);
    if (r.b0 < 0) CHECK(r.fate == OdeFate::exit);
    if (r.b0 == 0) CHECK(r.fate == OdeFate::soliton);
  }
  const double b[] = {0.05, -0.05, 0.0};
  const auto three = phase_portrait(b);
  CHECK(three[0].fate == OdeFate::blowup);
  CHECK(three[0].T == doctest::Approx(20.0));
  CHECK(three[1].fate == OdeFate::exit);
  CHECK(three[2].fate == OdeFate::soliton);
}

TEST_CASE("property: b / lambda^2 is conserved") {
  Rng rng(41);
  for (int i = 0; i < kCases; ++i) {
    const double b0 = uniform(rng, -0.2, 0.2), l0 = uniform(rng, 0.5, 2.0);
    StopRule rule;
    rule.t_max = b0 > 0 ? 0.9 * blowup_time(b0, l0) : 50.0;
    const ReducedTrajectory tr = integrate(b0, l0, rule);
    const double k0 = b0 / (l0 * l0);
    double drift = 0.0;
    for (const ReducedState& s : tr.states) drift = std::max(drift, std::abs(s.b / (s.lambda * s.lambda) - k0));
    CHECK(drift <= 1e-9 * std::abs(k0));
    CHECK(sup_rel_error(tr, b0, l0) < 1e-8);
  }
}

TEST_CASE("property: time reversal") {
  Rng rng(42);
  for (int i = 0; i < kCases; ++i) {
    const double b0 = uniform(rng, -0.2, 0.2), l0 = uniform(rng, 0.5, 2.0), s1 = uniform(rng, 0.5, 2.0);
    StopRule fwd;
    fwd.s_max = s1;
    const ReducedTrajectory a = integrate(b0, l0, fwd);
    CHECK(a.reason == StopReason::s_max);
    StopRule back;
    back.s_max = 0.0;
    const ReducedTrajectory r = integrate(a.states.back(), back);
    const ReducedState& e = r.states.back();
    CHECK(std::abs(e.s) < 1e-8);
    CHECK(std::abs(e.lambda - l0) < 1e-8 * l0);
    CHECK(std::abs(e.b - b0) < 1e-8 * (std::abs(b0) + 1e-3));
    CHECK(std::abs(e.t) < 1e-8 * (1.0 + a.states.back().t));
    CHECK(std::abs(e.x) < 1e-8 * (1.0 + a.states.back().x));
  }
}

}
