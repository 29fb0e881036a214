#include "gkdv/reduced_ode.hpp"

#include <array>
#include <cmath>

namespace gkdv {

namespace {

using Y = std::array<double, 4>;  // lambda, b, x, t

Y rhs(const Y& y) {
  const double l = y[0], b = y[1];
  return {-b * l, -2.0 * b * b, l, l * l * l};
}

Y axpy(const Y& y, double h, std::initializer_list<std::pair<double, const Y*>> terms) {
  Y out = y;
  for (const auto& [c, k] : terms)
    for (int i = 0; i < 4; ++i) out[i] += h * c * (*k)[i];
  return out;
}

struct StepResult {
  Y y5;
  double err;  // scaled error norm, accept when <= 1
};

// Dormand-Prince 5(4) tableau.
StepResult dp_step(const Y& y, double h, double rtol) {
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                   a65 = -5103.0 / 18656;
  constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                   e6 = 22.0 / 525, e7 = -1.0 / 40;
  const Y k1 = rhs(y);
  const Y k2 = rhs(axpy(y, h, {{a21, &k1}}));
  const Y k3 = rhs(axpy(y, h, {{a31, &k1}, {a32, &k2}}));
  const Y k4 = rhs(axpy(y, h, {{a41, &k1}, {a42, &k2}, {a43, &k3}}));
  const Y k5 = rhs(axpy(y, h, {{a51, &k1}, {a52, &k2}, {a53, &k3}, {a54, &k4}}));
  const Y k6 = rhs(axpy(y, h, {{a61, &k1}, {a62, &k2}, {a63, &k3}, {a64, &k4}, {a65, &k5}}));
  const Y y5 = axpy(y, h, {{b1, &k1}, {b3, &k3}, {b4, &k4}, {b5, &k5}, {b6, &k6}});
  const Y k7 = rhs(y5);
  double err = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double e = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
    const double sc = 1e-300 + rtol * std::max(std::abs(y[i]), std::abs(y5[i]));
    err = std::max(err, std::abs(e) / sc);
  }
  if (!std::isfinite(err)) err = 1e10;
  return {y5, err};
}

ReducedState make_state(double s, const Y& y) { return {s, y[3], y[0], y[1], y[2]}; }

// Signed distance past the first crossed threshold (>0 means crossed).
struct Crossing {
  StopReason reason;
  double excess;
};

bool crossed(const ReducedState& st, const StopRule& r, int dir, Crossing& c) {
  // ordered by precedence
  if (st.lambda < kBlowupLambda) {
    c = {StopReason::blowup, std::log(kBlowupLambda / st.lambda)};
    return true;
  }
  if (st.lambda < r.lambda_floor) {
    c = {StopReason::lambda_floor, std::log(r.lambda_floor / st.lambda)};
    return true;
  }
  if (st.lambda > r.lambda_ceiling) {
    c = {StopReason::lambda_ceiling, std::log(st.lambda / r.lambda_ceiling)};
    return true;
  }
  if (dir * (st.t - r.t_max) > 0.0 && std::isfinite(r.t_max)) {
    c = {StopReason::t_max, dir * (st.t - r.t_max)};
    return true;
  }
  if (dir * (st.s - r.s_max) > 0.0 && std::isfinite(r.s_max)) {
    c = {StopReason::s_max, dir * (st.s - r.s_max)};
    return true;
  }
  return false;
}

double threshold_value(StopReason reason, const ReducedState& st, const StopRule& r) {
  switch (reason) {
    case StopReason::blowup: return std::log(st.lambda / kBlowupLambda);
    case StopReason::lambda_floor: return std::log(st.lambda / r.lambda_floor);
    case StopReason::lambda_ceiling: return std::log(r.lambda_ceiling / st.lambda);
    case StopReason::t_max: return r.t_max - st.t;
    case StopReason::s_max: return r.s_max - st.s;
    default: return 0.0;
  }
}

}  // namespace

const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::s_max: return "s_max";
    case StopReason::t_max: return "t_max";
    case StopReason::lambda_floor: return "lambda_floor";
    case StopReason::lambda_ceiling: return "lambda_ceiling";
    case StopReason::blowup: return "blowup";
    case StopReason::max_steps: return "max_steps";
  }
  return "?";
}

const char* to_string(OdeFate f) {
  switch (f) {
    case OdeFate::blowup: return "Blowup";
    case OdeFate::exit: return "Exit";
    case OdeFate::soliton: return "Soliton";
    case OdeFate::undecided: return "Undecided";
  }
  return "?";
}

ReducedTrajectory integrate(const ReducedState& init, const StopRule& rule, double rtol) {
  if (!(init.lambda > 0.0)) throw Error(ErrorCode::invalid_argument, "reduced_ode", "lambda0 must be positive");
  if (!(rtol > 0.0)) throw Error(ErrorCode::invalid_argument, "reduced_ode", "rtol must be positive");
  const bool has_bound = std::isfinite(rule.s_max) || std::isfinite(rule.t_max) || rule.lambda_floor > 0.0 ||
                         std::isfinite(rule.lambda_ceiling) || init.b > 0.0;
  if (!has_bound) throw Error(ErrorCode::invalid_argument, "reduced_ode", "stopping rule never fires");
  const int dir = (std::isfinite(rule.s_max) && rule.s_max < init.s) ? -1 : 1;

  ReducedTrajectory tr;
  tr.states.push_back(init);
  double s = init.s;
  Y y{init.lambda, init.b, init.x, init.t};
  {
    Crossing c;
    if (crossed(init, rule, dir, c)) {
      tr.reason = c.reason;
      return tr;
    }
  }
  double h = dir * 1e-3 * std::min(1.0, 1.0 / std::max(std::abs(init.b), 1e-3));
  constexpr long kMaxSteps = 10'000'000;
  for (long n = 0; n < kMaxSteps; ++n) {
    StepResult sr = dp_step(y, h, rtol);
    if (sr.err > 1.0) {
      h *= std::max(0.1, 0.9 * std::pow(sr.err, -0.2));
      continue;
    }
    ReducedState cand = make_state(s + h, sr.y5);
    Crossing c;
    if (crossed(cand, rule, dir, c)) {
      // re-step from the accepted state with a bracketed secant on the step size
      double lo = 0.0, hi = h;
      double flo = threshold_value(c.reason, make_state(s, y), rule);
      double fhi = threshold_value(c.reason, cand, rule);
      ReducedState best = cand;
      for (int it = 0; it < 200; ++it) {
        double mid = hi - fhi * (hi - lo) / (fhi - flo);
        if (!(std::abs(mid - lo) > 0.0 && std::abs(hi - mid) > 0.0) || !std::isfinite(mid)) mid = 0.5 * (lo + hi);
        const ReducedState st = make_state(s + mid, dp_step(y, mid, rtol).y5);
        const double f = threshold_value(c.reason, st, rule);
        best = st;
        if (std::abs(f) <= 1e-14 * std::max(1.0, std::abs(threshold_value(c.reason, tr.states.front(), rule))))
          break;
        if ((f > 0.0) == (flo > 0.0)) {
          lo = mid;
          flo = f;
        } else {
          hi = mid;
          fhi = f;
        }
        if (std::abs(hi - lo) <= 1e-15 * std::max(1.0, std::abs(s))) break;
      }
      if (c.reason == StopReason::s_max) best.s = rule.s_max;
      tr.states.push_back(best);
      tr.reason = c.reason;
      return tr;
    }
    s += h;
    y = sr.y5;
    tr.states.push_back(cand);
    const double grow = sr.err > 0.0 ? std::min(5.0, 0.9 * std::pow(sr.err, -0.2)) : 5.0;
    h *= grow;
  }
  tr.reason = StopReason::max_steps;
  return tr;
}

ReducedTrajectory integrate(double b0, double lambda0, const StopRule& rule, double rtol) {
  return integrate(ReducedState{0.0, 0.0, lambda0, b0, 0.0}, rule, rtol);
}

double blowup_time(double b0, double lambda0) {
  return b0 > 0.0 ? lambda0 * lambda0 * lambda0 / b0 : std::numeric_limits<double>::infinity();
}

ReducedState closed_form(double b0, double lambda0, double t, double x0) {
  if (!(lambda0 > 0.0)) throw Error(ErrorCode::invalid_argument, "reduced_ode", "lambda0 must be positive");
  const double T = blowup_time(b0, lambda0);
  if (t >= T) throw Error(ErrorCode::past_blowup, "reduced_ode", "t = " + std::to_string(t) + " >= T = " + std::to_string(T));
  const double l02 = lambda0 * lambda0;
  if (b0 == 0.0) return {t / (l02 * lambda0), t, lambda0, 0.0, x0 + t / l02};
  const double lambda = lambda0 - (b0 / l02) * t;
  if (!(lambda > 0.0)) throw Error(ErrorCode::past_blowup, "reduced_ode", "lambda reaches 0 before t");
  const double k = b0 / l02;  // conserved b / lambda^2
  ReducedState st;
  st.t = t;
  st.lambda = lambda;
  st.b = k * lambda * lambda;
  st.x = x0 + (1.0 / lambda - 1.0 / lambda0) / k;
  st.s = (1.0 / (lambda * lambda) - 1.0 / l02) / (2.0 * k);
  return st;
}

ReducedState closed_form_s(double b0, double lambda0, double s, double x0) {
  if (!(lambda0 > 0.0)) throw Error(ErrorCode::invalid_argument, "reduced_ode", "lambda0 must be positive");
  const double q = 1.0 + 2.0 * b0 * s;
  if (!(q > 0.0)) throw Error(ErrorCode::out_of_regime, "reduced_ode", "lambda is infinite at this s");
  const double r = std::sqrt(q);
  const double l3 = lambda0 * lambda0 * lambda0;
  ReducedState st;
  st.s = s;
  st.lambda = lambda0 / r;
  st.b = b0 / q;
  if (b0 == 0.0) {
    st.t = l3 * s;
    st.x = x0 + lambda0 * s;
  } else {
    // 1 - 1/r and r - 1 written to avoid cancellation for small b0 s
    const double w = 2.0 * b0 * s;
    st.t = (l3 / b0) * (w / (r * (1.0 + r)));
    st.x = x0 + (lambda0 / b0) * (w / (r + 1.0));
  }
  return st;
}

std::vector<PortraitRow> phase_portrait(std::span<const double> b0s, const PortraitOptions& opt) {
  std::vector<PortraitRow> rows;
  for (double b0 : b0s) {
    StopRule rule;
    rule.t_max = opt.t_max;
    rule.lambda_ceiling = opt.lambda_exit * opt.lambda0;
    const ReducedTrajectory tr = integrate(b0, opt.lambda0, rule);
    const ReducedState& end = tr.states.back();
    PortraitRow row{b0, OdeFate::undecided, blowup_time(b0, opt.lambda0), end.t, end.lambda, tr.reason};
    if (tr.reason == StopReason::blowup)
      row.fate = OdeFate::blowup;
    else if (tr.reason == StopReason::lambda_ceiling)
      row.fate = OdeFate::exit;
    else if (tr.reason == StopReason::t_max && std::abs(end.lambda / opt.lambda0 - 1.0) < 1e-12)
      row.fate = OdeFate::soliton;
    rows.push_back(row);
  }
  return rows;
}

std::vector<double> sweep_values(double lo, double hi, double step) {
  if (!(step > 0.0) || !(hi >= lo))
    throw Error(ErrorCode::invalid_argument, "reduced_ode", "sweep needs lo <= hi and step > 0");
  std::vector<double> v;
  const long n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
  for (long i = 0; i <= n; ++i) {
    double x = lo + static_cast<double>(i) * step;
    if (std::abs(x) < 1e-9 * step) x = 0.0;
    v.push_back(x);
  }
  return v;
}

}  // namespace gkdv
