#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gkdv/error.hpp"

namespace gkdv {

/// lambda_s = -b lambda, b_s = -2 b^2, x_s = lambda, t_s = lambda^3.
struct ReducedState {
  double s = 0.0;
  double t = 0.0;
  double lambda = 1.0;
  double b = 0.0;
  double x = 0.0;
};

struct StopRule {
  double s_max = std::numeric_limits<double>::infinity();  // negative: integrate backwards to it
  double t_max = std::numeric_limits<double>::infinity();
  double lambda_floor = 0.0;
  double lambda_ceiling = std::numeric_limits<double>::infinity();
};

enum class StopReason { s_max, t_max, lambda_floor, lambda_ceiling, blowup, max_steps };
const char* to_string(StopReason r);

struct ReducedTrajectory {
  std::vector<ReducedState> states;  // every accepted step, first = initial state
  StopReason reason = StopReason::s_max;
  bool blowup_reached() const { return reason == StopReason::blowup; }
};

inline constexpr double kBlowupLambda = 1e-8;

/// Adaptive Dormand-Prince 5(4) in s. Stopping thresholds are located
/// exactly by re-stepping from the last accepted state.
ReducedTrajectory integrate(const ReducedState& initial, const StopRule& rule, double rtol = 1e-10);
ReducedTrajectory integrate(double b0, double lambda0, const StopRule& rule, double rtol = 1e-10);

/// Exact solution at lab time t (x0 = 0, s0 = 0 at t = 0). Past-blowup error when t >= T.
ReducedState closed_form(double b0, double lambda0, double t, double x0 = 0.0);

/// Exact solution at rescaled time s (s = t = 0 initially); defined for all
/// s >= 0 when b0 >= 0 and for s < 1/(2|b0|) when b0 < 0.
ReducedState closed_form_s(double b0, double lambda0, double s, double x0 = 0.0);

/// T = lambda0^3 / b0 for b0 > 0, +inf otherwise.
double blowup_time(double b0, double lambda0);

enum class OdeFate { blowup, exit, soliton, undecided };
const char* to_string(OdeFate f);

struct PortraitRow {
  double b0 = 0.0;
  OdeFate fate = OdeFate::undecided;
  double T = std::numeric_limits<double>::infinity();  // closed-form blow-up time
  double t_end = 0.0;
  double lambda_end = 1.0;
  StopReason reason = StopReason::t_max;
};

struct PortraitOptions {
  double lambda0 = 1.0;
  double t_max = 1000.0;
  double lambda_exit = 2.0;
};

std::vector<PortraitRow> phase_portrait(std::span<const double> b0s, const PortraitOptions& opt = {});

/// lo, lo+step, ..., hi (inclusive within rounding); values within 1e-9 step of 0 are snapped to 0.
std::vector<double> sweep_values(double lo, double hi, double step);

}  // namespace gkdv
