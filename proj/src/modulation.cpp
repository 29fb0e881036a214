#include "gkdv/modulation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

namespace gkdv {

namespace {

Error mod_error(ErrorCode code, const std::string& what) { return Error(code, "modulation", what); }

double smoothstep5(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<long>(m), v.end());
  double hi = v[m];
  if (v.size() % 2) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<long>(m));
  return 0.5 * (lo + hi);
}

// ---- residual field eps = lambda^{1/2} u(lambda y + x) - Q_b

struct Probe {
  const Field& u;
  const ProfileSet& ps;
  const std::array<Field, 3>& w;
  double gamma;
  double max_outside;

  Field eps(double lambda, double x, double b) const {
    const ResampleResult rs = resample(u, ps.grid, x, lambda, max_outside);
    return std::sqrt(lambda) * rs.field - localized_Qb(b, ps, gamma);
  }
  Eigen::Vector3d G(double lambda, double x, double b) const {
    const Field e = eps(lambda, x, b);
    return {inner(e, w[0]), inner(e, w[1]), inner(e, w[2])};
  }
};

std::array<Field, 3> orthogonality_weights(const ProfileSet& ps) {
  const Vector y = ps.grid.points();
  Field yLQ(ps.grid, (y.array() * ps.LamQ.values().array()).matrix());
  return {std::move(yLQ), ps.LamQ, ps.Q};
}

}  // namespace

double core_norm(const Field& f, double core_radius) {
  if (!std::isfinite(core_radius)) return l2_norm(f);
  Vector v = f.values();
  for (Index k = 0; k < v.size(); ++k)
    if (std::abs(f.grid().point(k)) > core_radius) v[k] = 0.0;
  return l2_norm(Field(f.grid(), std::move(v)));
}

double tube_distance(const Field& u, const ProfileSet& ps, double lambda, double x, double b, double gamma,
                     double b_range, double core_radius) {
  auto f = [&](const Eigen::Vector3d& p) {
    if (!(p[0] > 0.0) || std::abs(p[2]) > b_range) return std::numeric_limits<double>::infinity();
    try {
      const ResampleResult rs = resample(u, ps.grid, p[1], p[0], 1.0);
      return core_norm(std::sqrt(p[0]) * rs.field - localized_Qb(p[2], ps, gamma), core_radius);
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  // Nelder-Mead started from the better of the fitted b and b = 0
  Eigen::Vector3d start(lambda, x, b);
  const Eigen::Vector3d flat(lambda, x, 0.0);
  if (f(flat) < f(start)) start = flat;
  std::array<Eigen::Vector3d, 4> simplex;
  std::array<double, 4> val;
  simplex[0] = start;
  const Eigen::Vector3d steps(0.05 * lambda, 0.05 * lambda, 0.01);
  for (int k = 0; k < 3; ++k) {
    simplex[k + 1] = start;
    simplex[k + 1][k] += steps[k];
  }
  for (int k = 0; k < 4; ++k) val[k] = f(simplex[k]);
  for (int it = 0; it < 400; ++it) {
    std::array<int, 4> idx{0, 1, 2, 3};
    std::sort(idx.begin(), idx.end(), [&](int a, int c) { return val[a] < val[c]; });
    std::array<Eigen::Vector3d, 4> sp;
    std::array<double, 4> sv;
    for (int k = 0; k < 4; ++k) {
      sp[k] = simplex[idx[k]];
      sv[k] = val[idx[k]];
    }
    simplex = sp;
    val = sv;
    if (val[3] - val[0] <= 1e-7 * val[0] + 1e-10) break;
    const Eigen::Vector3d centroid = (simplex[0] + simplex[1] + simplex[2]) / 3.0;
    const Eigen::Vector3d xr = centroid + (centroid - simplex[3]);
    const double fr = f(xr);
    if (fr < val[0]) {
      const Eigen::Vector3d xe = centroid + 2.0 * (centroid - simplex[3]);
      const double fe = f(xe);
      if (fe < fr) {
        simplex[3] = xe;
        val[3] = fe;
      } else {
        simplex[3] = xr;
        val[3] = fr;
      }
    } else if (fr < val[2]) {
      simplex[3] = xr;
      val[3] = fr;
    } else {
      const Eigen::Vector3d xc = centroid + 0.5 * (simplex[3] - centroid);
      const double fc = f(xc);
      if (fc < val[3]) {
        simplex[3] = xc;
        val[3] = fc;
      } else {
        for (int k = 1; k < 4; ++k) {
          simplex[k] = simplex[0] + 0.5 * (simplex[k] - simplex[0]);
          val[k] = f(simplex[k]);
        }
      }
    }
  }
  return *std::min_element(val.begin(), val.end());
}

std::array<double, 3> orthogonality(const Field& u, const ProfileSet& ps, double lambda, double x, double b,
                                    double gamma) {
  const auto w = orthogonality_weights(ps);
  const Probe p{u, ps, w, gamma, 1.0};
  const Eigen::Vector3d g = p.G(lambda, x, b);
  return {g[0], g[1], g[2]};
}

ModulationState decompose(const Field& u, const ProfileSet& ps, std::optional<ModulationSeed> seed,
                          const DecomposeOptions& opt) {
  if (!seed) {
    Index k = 0;
    u.values().cwiseAbs().maxCoeff(&k);
    // amplitude-matched scale: sup Q = 3^{1/4}
    const double amp = std::abs(u[k]);
    const double lam = amp > 0.0 ? std::pow(std::pow(3.0, 0.25) / amp, 2) : 1.0;
    seed = ModulationSeed{lam, u.grid().point(k), 0.0};
  }
  if (!(seed->lambda > 0.0)) throw mod_error(ErrorCode::invalid_argument, "seed lambda must be positive");
  const auto w = orthogonality_weights(ps);
  const Probe probe{u, ps, w, opt.gamma, opt.max_outside_fraction};

  Eigen::Vector3d p(seed->lambda, seed->x, seed->b);
  auto eval = [&](const Eigen::Vector3d& q, Eigen::Vector3d& g) {
    try {
      g = probe.G(q[0], q[1], q[2]);
      return g.allFinite();
    } catch (const Error& e) {
      if (e.code() == ErrorCode::coverage) return false;
      throw;
    }
  };
  Eigen::Vector3d g;
  if (!eval(p, g)) throw mod_error(ErrorCode::decomposition_failed, "seed maps the profile grid outside the field");

  int it = 0;
  bool clamped = false;
  while (g.norm() >= opt.tolerance) {
    if (it >= opt.max_iterations)
      throw mod_error(ErrorCode::decomposition_failed,
                      "Newton did not converge in " + std::to_string(opt.max_iterations) + " iterations, |G| = " +
                          std::to_string(g.norm()));
    ++it;
    Eigen::Matrix3d J;
    const std::array<double, 3> steps{opt.fd_step * p[0], opt.fd_step * p[0], opt.fd_step};
    for (int c = 0; c < 3; ++c) {
      Eigen::Vector3d q = p, gq;
      q[c] += steps[c];
      if (!eval(q, gq)) throw mod_error(ErrorCode::decomposition_failed, "Jacobian probe left the field support");
      J.col(c) = (gq - g) / steps[c];
    }
    const Eigen::Vector3d dp = J.fullPivLu().solve(-g);
    if (!dp.allFinite()) throw mod_error(ErrorCode::decomposition_failed, "singular modulation Jacobian");
    double alpha = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < 12; ++bt, alpha *= 0.5) {
      Eigen::Vector3d q = p + alpha * dp;
      if (!(q[0] > 0.0)) {
        if (clamped) throw mod_error(ErrorCode::decomposition_failed, "lambda iterate became non-positive twice");
        clamped = true;
        q[0] = 0.5 * p[0];
      }
      Eigen::Vector3d gq;
      if (!eval(q, gq)) continue;
      if (gq.norm() < g.norm() || bt == 11) {
        p = q;
        g = gq;
        accepted = true;
        break;
      }
    }
    if (!accepted) throw mod_error(ErrorCode::decomposition_failed, "line search failed");
  }
  if (!(std::abs(p[2]) < opt.b_max))
    throw mod_error(ErrorCode::decomposition_failed, "|b| = " + std::to_string(std::abs(p[2])) + " beyond b_max");

  Field eps = probe.eps(p[0], p[1], p[2]);
  // ||eps|| bounds the tube distance from above; refine only when it matters
  const double enorm = core_norm(eps, opt.tube_core_radius);
  const double dist = enorm < opt.tube_refine_above
                          ? enorm
                          : tube_distance(u, ps, p[0], p[1], p[2], opt.gamma, opt.b_max, opt.tube_core_radius);
  ModulationState st{0.0, p[0], p[1], p[2], std::move(eps), it, {g[0], g[1], g[2]}, dist};
  return st;
}

// ---------------------------------------------------------------- weights

namespace {

// 16-point Gauss-Legendre nodes/weights on [-1, 1], computed once.
struct GaussLegendre {
  std::array<double, 16> x{}, w{};
  GaussLegendre() {
    constexpr int n = 16;
    for (int i = 0; i < n; ++i) {
      double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
      double dp = 0.0;
      for (int iter = 0; iter < 100; ++iter) {
        double p0 = 1.0, p1 = z;
        for (int k = 2; k <= n; ++k) {
          const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = n * (z * p1 - p0) / (z * z - 1.0);
        const double dz = p1 / dp;
        z -= dz;
        if (std::abs(dz) < 1e-16) break;
      }
      x[i] = z;
      w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
  }
};

const GaussLegendre& gauss() {
  static const GaussLegendre g;
  return g;
}

template <typename F>
double gl_integrate(F&& f, double a, double b) {
  const GaussLegendre& g = gauss();
  const double m = 0.5 * (a + b), r = 0.5 * (b - a);
  double s = 0.0;
  for (int i = 0; i < 16; ++i) s += g.w[i] * f(m + r * g.x[i]);
  return r * s;
}

constexpr double kPlateauRamp = 0.2;

double plateau(double tau) { return smoothstep5(tau / kPlateauRamp) * smoothstep5((1.0 - tau) / kPlateauRamp); }

}  // namespace

// piece ids: 0 e^y, 1 1+y, 2 y, 3 y^2, 4 e^{2y}, 5 constant 1
double Weights::piece(int id, double y) const {
  switch (id) {
    case 0: return std::exp(y);
    case 1: return 1.0 + y;
    case 2: return y;
    case 3: return y * y;
    case 4: return std::exp(2.0 * y);
    default: return 1.0;
  }
}

double Weights::dpiece(int id, double y) const {
  switch (id) {
    case 0: return std::exp(y);
    case 1: return 1.0;
    case 2: return 1.0;
    case 3: return 2.0 * y;
    case 4: return 2.0 * std::exp(2.0 * y);
    default: return 0.0;
  }
}

double Weights::bridge_derivative(const Bridge& br, double y) const {
  const double tau = (y - br.a) / br.w;
  const double s = smoothstep5(tau);
  const double blend = (1.0 - s) * dpiece(br.left, y) + s * dpiece(br.right, y);
  return blend * (1.0 - br.kappa * plateau(tau));
}

double Weights::bridge_value(const Bridge& br, double y) const {
  // panels split at the plateau corners, where the integrand is only C^2
  const double c1 = br.a + kPlateauRamp * br.w, c2 = br.a + (1.0 - kPlateauRamp) * br.w;
  const std::array<double, 4> cuts{br.a, c1, c2, br.a + br.w};
  double v = br.base;
  auto f = [&](double z) { return bridge_derivative(br, z); };
  for (int k = 0; k < 3; ++k) {
    const double lo = cuts[k], hi = std::min(cuts[k + 1], y);
    if (hi <= lo) break;
    v += gl_integrate(f, lo, hi);
  }
  return v;
}

Weights::Weights(double B) : B_(B) {
  if (!(B >= 10.0)) throw mod_error(ErrorCode::invalid_argument, "weight parameter B must be >= 10");
  const std::array<std::array<int, 4>, 5> spec{{
      {0, 1, -2, 0},  // phi_1 left bridge on [-1, -1/2]: e^y -> 1+y
      {1, 2, 1, 0},   // phi_1 right bridge on [1/2, 2]: 1+y -> y
      {0, 1, -2, 0},  // phi_2 left
      {1, 3, 1, 0},   // phi_2 right: 1+y -> y^2
      {4, 5, -2, 0},  // psi on [-1, -1/2]: e^{2y} -> 1
  }};
  for (int k = 0; k < 5; ++k) {
    const bool left = spec[k][2] == -2;
    Bridge br{left ? -1.0 : 0.5, left ? 0.5 : 1.5, spec[k][0], spec[k][1], 0.0, 0.0};
    br.base = piece(br.left, br.a);
    const double jump = piece(br.right, br.a + br.w) - br.base;
    Bridge plain = br;
    const double full = bridge_value(plain, br.a + br.w) - br.base;  // kappa = 0
    // integral of blend * plateau
    auto bp = [&](double z) {
      const double tau = (z - br.a) / br.w;
      const double s = smoothstep5(tau);
      return ((1.0 - s) * dpiece(br.left, z) + s * dpiece(br.right, z)) * plateau(tau);
    };
    double weighted = 0.0;
    const double c1 = br.a + kPlateauRamp * br.w, c2 = br.a + (1.0 - kPlateauRamp) * br.w;
    weighted += gl_integrate(bp, br.a, c1) + gl_integrate(bp, c1, c2) + gl_integrate(bp, c2, br.a + br.w);
    br.kappa = (full - jump) / weighted;
    bridges_[k] = br;
    kappa_[k] = br.kappa;
  }
}

double Weights::fn(int which, double y) const {
  if (which == 2) {
    if (y < -1.0) return std::exp(2.0 * y);
    if (y > -0.5) return 1.0;
    return bridge_value(bridges_[4], y);
  }
  const int off = which == 0 ? 0 : 2;
  if (y < -1.0) return std::exp(y);
  if (y <= -0.5) return bridge_value(bridges_[off], y);
  if (y < 0.5) return 1.0 + y;
  if (y <= 2.0) return bridge_value(bridges_[off + 1], y);
  return which == 0 ? y : y * y;
}

double Weights::dfn(int which, double y) const {
  if (which == 2) {
    if (y < -1.0) return 2.0 * std::exp(2.0 * y);
    if (y > -0.5) return 0.0;
    return bridge_derivative(bridges_[4], y);
  }
  const int off = which == 0 ? 0 : 2;
  if (y < -1.0) return std::exp(y);
  if (y <= -0.5) return bridge_derivative(bridges_[off], y);
  if (y < 0.5) return 1.0;
  if (y <= 2.0) return bridge_derivative(bridges_[off + 1], y);
  return which == 0 ? 1.0 : 2.0 * y;
}

double Weights::phi(int i, double y) const {
  if (i != 1 && i != 2) throw mod_error(ErrorCode::invalid_argument, "phi index must be 1 or 2");
  return fn(i - 1, y);
}
double Weights::dphi(int i, double y) const {
  if (i != 1 && i != 2) throw mod_error(ErrorCode::invalid_argument, "phi index must be 1 or 2");
  return dfn(i - 1, y);
}
double Weights::psi(double y) const { return fn(2, y); }
double Weights::dpsi(double y) const { return dfn(2, y); }

Field Weights::phi_B(int i, const Grid& g) const {
  return Field::sample(g, [&](double y) { return phi(i, y / B_); });
}
Field Weights::dphi_B(int i, const Grid& g) const {
  return Field::sample(g, [&](double y) { return dphi(i, y / B_) / B_; });
}
Field Weights::psi_B(const Grid& g) const {
  return Field::sample(g, [&](double y) { return psi(y / B_); });
}

// ---------------------------------------------------------------- diagnostics

DiagnosticSet diagnostics(const ModulationState& state, const ProfileSet& ps, const Weights& w, double gamma) {
  require_same_grid(state.eps, ps.Q, "diagnostics");
  const Grid& g = ps.grid;
  const Field& e = state.eps;
  DiagnosticSet d;
  d.B = w.B();
  const Field ey2 = pow(differentiate(e, 1), 2);
  const Field e2 = pow(e, 2);
  const Field psiB = w.psi_B(g);
  const double kin = integrate(ey2 * psiB);
  std::array<Field, 2> phiB{w.phi_B(1, g), w.phi_B(2, g)};
  d.N1 = kin + integrate(e2 * phiB[0]);
  d.N2 = kin + integrate(e2 * phiB[1]);
  d.N1loc = integrate(e2 * w.dphi_B(1, g));
  d.N2loc = integrate(e2 * w.dphi_B(2, g));
  d.J1 = inner(e, ps.rho1);
  d.J2 = inner(e, ps.rho2);
  d.J = inner(e, ps.rho);
  d.eps_loc = integrate(e2 * Field::sample(g, [](double y) { return std::exp(-std::abs(y) / 10.0); }));

  const Field Qb = localized_Qb(state.b, ps, gamma);
  const Vector& qb = Qb.values();
  const Vector& ev = e.values();
  Vector nl(g.size());
  for (Index k = 0; k < g.size(); ++k) {
    const double q = qb[k], x = ev[k];
    const double q5 = q * q * q * q * q;
    nl[k] = std::pow(x + q, 6) - q5 * q - 6.0 * x * q5;
  }
  const double pot = integrate(Field(g, std::move(nl)) * psiB) / 3.0;
  const std::array<double, 2> N{d.N1, d.N2};
  for (int i = 1; i <= 2; ++i) {
    const double mass = integrate(e2 * phiB[i - 1]);
    for (int j = 1; j <= 2; ++j) {
      const double jj = std::pow(1.0 - d.J1, -(4.0 * (j - 1) + 2.0 * i)) - 1.0;
      d.JJ[i - 1][j - 1] = jj;
      d.F[i - 1][j - 1] = kin + (1.0 + jj) * mass - pot;
      if (N[i - 1] > 0.0 && !(d.F[i - 1][j - 1] > 0.0)) d.sandwich_ok = false;
    }
  }
  return d;
}

double weighted_right_norm(const Field& eps) {
  const Field f = Field::sample(eps.grid(), [](double y) { return y > 0.0 ? std::pow(y, 10) : 0.0; });
  return integrate(f * pow(eps, 2));
}

// ---------------------------------------------------------------- trajectories

namespace {

void require_increasing(const Trajectory& tr) {
  for (size_t i = 1; i < tr.size(); ++i)
    if (!(tr[i].t > tr[i - 1].t)) throw mod_error(ErrorCode::invalid_argument, "trajectory times must increase strictly");
}

double lsq_slope(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double den = n * sxx - sx * sx;
  return den != 0.0 ? (n * sxy - sx * sy) / den : 0.0;
}

}  // namespace

std::vector<double> reconstruct_s(const Trajectory& tr) {
  require_increasing(tr);
  std::vector<double> s(tr.size(), 0.0);
  for (size_t i = 1; i < tr.size(); ++i) {
    const double f0 = 1.0 / std::pow(tr[i - 1].lambda, 3), f1 = 1.0 / std::pow(tr[i].lambda, 3);
    s[i] = s[i - 1] + 0.5 * (tr[i].t - tr[i - 1].t) * (f0 + f1);
  }
  return s;
}

ResidualReport residual_laws(const Trajectory& tr) {
  if (tr.size() < 5) throw mod_error(ErrorCode::fit_window, "residual laws need at least 5 modulation states");
  const std::vector<double> s = reconstruct_s(tr);
  ResidualReport rep;
  std::vector<double> rl, rb, rloc;
  auto d = [&](size_t i, auto&& get) {
    const double h1 = s[i] - s[i - 1], h2 = s[i + 1] - s[i];
    return -h2 / (h1 * (h1 + h2)) * get(i - 1) + (h2 - h1) / (h1 * h2) * get(i) + h1 / (h2 * (h1 + h2)) * get(i + 1);
  };
  for (size_t i = 1; i + 1 < tr.size(); ++i) {
    const SeriesRow& r = tr[i];
    ResidualRow row;
    row.t = r.t;
    row.s = s[i];
    const double ls = d(i, [&](size_t k) { return tr[k].lambda; });
    const double xs = d(i, [&](size_t k) { return tr[k].x; });
    const double bs = d(i, [&](size_t k) { return tr[k].b; });
    row.d_ratio = d(i, [&](size_t k) { return tr[k].b / (tr[k].lambda * tr[k].lambda); });
    row.res_lambda = ls / r.lambda + r.b;
    row.res_x = xs / r.lambda - 1.0;
    row.res_b = bs + 2.0 * r.b * r.b;
    const double b2 = r.b * r.b;
    row.bound1 = std::sqrt(r.eps_loc) + b2;
    row.bound2 = r.eps_loc + b2;
    row.ratio_lambda = row.bound1 > 0.0 ? std::abs(row.res_lambda) / row.bound1 : 0.0;
    row.ratio_b = row.bound2 > 0.0 ? std::abs(row.res_b) / row.bound2 : 0.0;
    const double bl = std::sqrt(r.N1loc) + b2;
    row.ratio_loc = bl > 0.0 ? std::abs(row.res_lambda) / bl : 0.0;
    rl.push_back(row.ratio_lambda);
    rb.push_back(row.ratio_b);
    rloc.push_back(row.ratio_loc);
    rep.rows.push_back(row);
  }
  rep.median_ratio_lambda = median(rl);
  rep.median_ratio_b = median(rb);
  rep.median_ratio_loc = median(rloc);
  const double tmid = 0.5 * (tr.front().t + tr.back().t);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
  int cnt = 0;
  for (const SeriesRow& r : tr) {
    if (r.t < tmid) continue;
    const double q = r.b / (r.lambda * r.lambda);
    lo = std::min(lo, q);
    hi = std::max(hi, q);
    sum += q;
    ++cnt;
  }
  rep.ratio_drift_last_half = cnt > 0 && sum != 0.0 ? (hi - lo) / std::abs(sum / cnt) : 0.0;
  return rep;
}

void validate(const ClassifierConfig& c) {
  if (!(0.0 < c.lambda_blowup && c.lambda_blowup < 1.0 && 1.0 < c.lambda_exit))
    throw mod_error(ErrorCode::invalid_argument, "need 0 < lambda_blowup < 1 < lambda_exit");
  if (!(c.alpha_star > 0.0)) throw mod_error(ErrorCode::invalid_argument, "alpha_star must be positive");
  if (!(c.C_star > 0.0)) throw mod_error(ErrorCode::invalid_argument, "C_star must be positive");
  if (!(c.lambda_floor > 0.0)) throw mod_error(ErrorCode::invalid_argument, "lambda_floor must be positive");
}

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::soliton: return "Soliton";
    case Verdict::exit: return "Exit";
    case Verdict::blowup: return "Blowup";
    case Verdict::undecided: return "Undecided";
  }
  return "?";
}

ClassifierResult classify(const Trajectory& tr, const ClassifierConfig& cfg, const std::string& termination) {
  validate(cfg);
  require_increasing(tr);
  ClassifierResult res;
  if (tr.empty()) {
    res.reason = "empty trajectory";
    return res;
  }
  res.lambda_min = res.lambda_max = tr.front().lambda;
  bool decided = false;
  for (size_t i = 0; i < tr.size(); ++i) {
    const SeriesRow& r = tr[i];
    res.lambda_min = std::min(res.lambda_min, r.lambda);
    res.lambda_max = std::max(res.lambda_max, r.lambda);
    res.max_tube_distance = std::max(res.max_tube_distance, r.tube_distance);
    if (!res.separated && std::abs(r.b) > cfg.C_star * r.N1) {
      res.separated = true;
      res.t_separation = r.t;
      res.b_separation = r.b;
      res.N1_separation = r.N1;
      res.separation_sign = r.b > 0.0 ? 1 : -1;
    }
    if (decided) continue;
    auto decide = [&](Verdict v, const char* why) {
      res.verdict = v;
      res.reason = why;
      res.t_event = r.t;
      res.lambda_event = r.lambda;
      decided = true;
    };
    if (r.lambda >= cfg.lambda_exit) {
      decide(Verdict::exit, "lambda reached lambda_exit");
    } else if (r.tube_distance >= cfg.alpha_star) {
      decide(Verdict::exit, "tube distance reached alpha_star");
    } else if (r.lambda <= cfg.lambda_blowup) {
      const size_t from = i >= 9 ? i - 9 : 0;
      std::vector<double> ts, ls;
      for (size_t k = from; k <= i; ++k) {
        ts.push_back(tr[k].t);
        ls.push_back(tr[k].lambda);
      }
      if (ts.size() >= 2 && lsq_slope(ts, ls) < 0.0 && r.lambda < tr.front().lambda)
        decide(Verdict::blowup, "lambda crossed lambda_blowup while decreasing");
    }
  }
  if (decided) return res;
  if (termination == "decomposition_failed") {
    res.verdict = Verdict::exit;
    res.reason = "decomposition failed (left the modulated family)";
    res.t_event = tr.back().t;
    res.lambda_event = tr.back().lambda;
    return res;
  }
  const bool in_band = res.lambda_min >= cfg.lambda_blowup && res.lambda_max <= cfg.lambda_exit;
  std::vector<double> ts, ns;
  const double tmid = 0.5 * (tr.front().t + tr.back().t);
  for (const SeriesRow& r : tr)
    if (r.t >= tmid) {
      ts.push_back(r.t);
      ns.push_back(r.N2);
    }
  const bool n2_decays = tr.back().N2 < 1e-10 || (ts.size() >= 2 && lsq_slope(ts, ns) <= 0.0);
  if (in_band && n2_decays) {
    res.verdict = Verdict::soliton;
    res.reason = "lambda stayed in [lambda_blowup, lambda_exit] with N2 non-increasing";
  } else {
    res.reason = in_band ? "N2 not decaying" : "no threshold event";
  }
  res.t_event = tr.back().t;
  res.lambda_event = tr.back().lambda;
  return res;
}

BlowupFit blowup_fit(const Trajectory& tr, double decrease_required) {
  if (tr.size() < 3) throw mod_error(ErrorCode::fit_window, "blow-up fit needs at least 3 samples");
  require_increasing(tr);
  const double lam_end = tr.back().lambda;
  size_t start = tr.size() - 1;
  while (start > 0 && tr[start - 1].lambda <= 10.0 * lam_end) --start;
  BlowupFit f;
  f.lambda_window_min = lam_end;
  f.lambda_window_max = 0.0;
  for (size_t i = start; i < tr.size(); ++i) f.lambda_window_max = std::max(f.lambda_window_max, tr[i].lambda);
  f.points = tr.size() - start;
  if (f.points < 3 || f.lambda_window_max < decrease_required * lam_end)
    throw mod_error(ErrorCode::fit_window, "lambda decreased only by " + std::to_string(f.lambda_window_max / lam_end) +
                                               " over the fit window (need " + std::to_string(decrease_required) + ")");
  std::vector<double> t, l;
  for (size_t i = start; i < tr.size(); ++i) {
    t.push_back(tr[i].t);
    l.push_back(tr[i].lambda);
  }
  const double n = static_cast<double>(t.size());
  double mt = 0, ml = 0;
  for (size_t i = 0; i < t.size(); ++i) {
    mt += t[i];
    ml += l[i];
  }
  mt /= n;
  ml /= n;
  double stt = 0, stl = 0, sll = 0;
  for (size_t i = 0; i < t.size(); ++i) {
    stt += (t[i] - mt) * (t[i] - mt);
    stl += (t[i] - mt) * (l[i] - ml);
    sll += (l[i] - ml) * (l[i] - ml);
  }
  const double beta = stl / stt;
  const double alpha = ml - beta * mt;
  f.ell0 = -beta;
  f.T_est = alpha / f.ell0;
  f.r2 = sll > 0.0 ? stl * stl / (stt * sll) : 1.0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
  f.ux_ratio_min = std::numeric_limits<double>::infinity();
  f.ux_ratio_max = -f.ux_ratio_min;
  for (size_t i = start; i < tr.size(); ++i) {
    const double q = tr[i].b / (tr[i].lambda * tr[i].lambda);
    lo = std::min(lo, q);
    hi = std::max(hi, q);
    sum += q;
    f.ux_ratio_min = std::min(f.ux_ratio_min, tr[i].ux_ratio);
    f.ux_ratio_max = std::max(f.ux_ratio_max, tr[i].ux_ratio);
  }
  f.ratio_mean = sum / n;
  f.ratio_variation = (hi - lo) / std::abs(f.ratio_mean);
  const SeriesRow& last = tr.back();
  f.ratio_final = last.b / (last.lambda * last.lambda);
  f.tx_final = (f.T_est - last.t) * last.x;
  f.tx_target = 1.0 / (f.ell0 * f.ell0);
  f.ux_ratio_final = last.ux_ratio;
  return f;
}

// ---------------------------------------------------------------- tail

namespace {

TailReport finish_tail(std::vector<TailRow> rows, double ell0, double normQ_L1) {
  TailReport rep;
  rep.rows = std::move(rows);
  rep.reference = normQ_L1 * normQ_L1 / (8.0 * ell0);
  std::vector<double> R, m;
  for (const TailRow& r : rep.rows) {
    const double total = r.window_mass + r.ledger_mass;
    if (total > 0.0) {
      R.push_back(r.R);
      m.push_back(total);
    }
  }
  rep.slope = R.size() >= 2 ? loglog_slope(R, m) : std::numeric_limits<double>::quiet_NaN();
  rep.slope_ok = std::abs(rep.slope + 2.0) <= 0.25;
  return rep;
}

}  // namespace

TailReport tail_profile(const Field& v, const WindowMap& map, const ModulationState& state, const ProfileSet& ps,
                        std::span<const double> R_list, double ell0, const MassLedger* ledger, double gamma) {
  if (R_list.empty()) throw mod_error(ErrorCode::geometry, "empty R list");
  if (!(ell0 > 0.0)) throw mod_error(ErrorCode::invalid_argument, "ell0 must be positive");
  const double core = 10.0 * state.lambda;
  for (double R : R_list)
    if (!(R >= 2.0 && R <= state.x - core))
      throw mod_error(ErrorCode::geometry, "R = " + std::to_string(R) + " outside [2, x(t) - 10 lambda] = [2, " +
                                               std::to_string(state.x - core) + "]");
  const Grid& g = v.grid();
  const double sigma = map.scale;
  const double dx = sigma * g.spacing();
  const double amp = 1.0 / std::sqrt(sigma);
  const double lam_amp = 1.0 / std::sqrt(state.lambda);
  const double sb = state.b != 0.0 ? std::pow(std::abs(state.b), gamma) : 0.0;
  const double q0 = std::pow(3.0, 0.25);
  const double p_left = ps.P[0];
  const double y_lo = ps.grid.point(0), y_hi = ps.grid.point(ps.grid.size() - 1);
  std::vector<double> xs, dens;
  for (Index k = 0; k < g.size(); ++k) {
    const double x = map.x_offset + sigma * g.point(k);
    if (std::abs(x - state.x) < core) continue;
    const double z = (x - state.x) / state.lambda;
    double qb = q0 / std::sqrt(std::cosh(2.0 * z));
    if (state.b != 0.0) {
      const double chi = cutoff(sb * z);
      if (chi > 0.0) {
        const double P = z < y_lo ? p_left : (z > y_hi ? 0.0 : evaluate_at(ps.P, z));
        qb += state.b * chi * P;
      }
    }
    const double r = amp * v[k] - lam_amp * qb;
    xs.push_back(x);
    dens.push_back(r * r * dx);
  }
  std::vector<TailRow> rows;
  for (double R : R_list) {
    TailRow row;
    row.R = R;
    for (size_t i = 0; i < xs.size(); ++i)
      if (xs[i] > R) row.window_mass += dens[i];
    row.ledger_mass = ledger ? ledger->mass_right_of(R) : 0.0;
    row.scaled = R * R * (row.window_mass + row.ledger_mass);
    rows.push_back(row);
  }
  return finish_tail(std::move(rows), ell0, ps.normQ_L1);
}

TailReport tail_table(const Field& residual, std::span<const double> R_list, double ell0, double normQ_L1) {
  if (R_list.empty()) throw mod_error(ErrorCode::geometry, "empty R list");
  const Grid& g = residual.grid();
  std::vector<TailRow> rows;
  for (double R : R_list) {
    TailRow row;
    row.R = R;
    for (Index k = 0; k < g.size(); ++k)
      if (g.point(k) > R) row.window_mass += residual[k] * residual[k] * g.spacing();
    row.scaled = R * R * row.window_mass;
    rows.push_back(row);
  }
  return finish_tail(std::move(rows), ell0, normQ_L1);
}

}  // namespace gkdv
