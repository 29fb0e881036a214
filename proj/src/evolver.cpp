#include "gkdv/evolver.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

namespace gkdv {

namespace {

using cd = std::complex<double>;

Error evolver_error(ErrorCode code, const std::string& what) { return Error(code, "evolver", what); }

double smoothstep5(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
}

// phi-type coefficients of ETDRK4 by averaging over a circle of radius 1
// around z, which avoids cancellation for small |z|.
struct EtdCoefficients {
  cd q, f1, f2, f3;
};

EtdCoefficients etd_coefficients(cd z, double h) {
  constexpr int kPoints = 32;
  EtdCoefficients c{};
  for (int j = 0; j < kPoints; ++j) {
    const double theta = 2.0 * std::numbers::pi * (j + 0.5) / kPoints;
    const cd lr = z + std::polar(1.0, theta);
    const cd e = std::exp(lr), e2 = std::exp(0.5 * lr);
    const cd lr3 = lr * lr * lr;
    c.q += (e2 - 1.0) / lr;
    c.f1 += (-4.0 - lr + e * (4.0 - 3.0 * lr + lr * lr)) / lr3;
    c.f2 += (2.0 + lr + e * (-2.0 + lr)) / lr3;
    c.f3 += (-4.0 - 3.0 * lr - lr * lr + e * (4.0 - lr)) / lr3;
  }
  const double s = h / kPoints;
  return {c.q * s, c.f1 * s, c.f2 * s, c.f3 * s};
}

}  // namespace

void validate(const SolverConfig& cfg) {
  if (cfg.dt && !(*cfg.dt > 0.0)) throw evolver_error(ErrorCode::invalid_argument, "dt must be positive");
  if (!(cfg.cfl > 0.0)) throw evolver_error(ErrorCode::invalid_argument, "cfl must be positive");
  if (!(cfg.dealias_fraction > 0.0 && cfg.dealias_fraction <= 2.0 / 3.0 + 1e-12))
    throw evolver_error(ErrorCode::invalid_argument, "dealias_fraction must lie in (0, 2/3] for the quintic term");
  if (cfg.pad_factor < 1) throw evolver_error(ErrorCode::invalid_argument, "pad_factor must be >= 1");
  if (!(cfg.regrid_lambda_ratio > 0.0 && cfg.regrid_lambda_ratio < 1.0))
    throw evolver_error(ErrorCode::invalid_argument, "regrid_lambda_ratio must lie in (0, 1)");
  if (!(cfg.regrid_margin > 0.0 && cfg.regrid_margin < 0.5))
    throw evolver_error(ErrorCode::invalid_argument, "regrid_margin must lie in (0, 0.5)");
  if (!(cfg.regrid_target > -1.0 && cfg.regrid_target < 1.0 - 2.0 * cfg.regrid_margin))
    throw evolver_error(ErrorCode::invalid_argument, "regrid_target must sit inside the window, left of the margin");
  if (cfg.snapshot_stride < 0) throw evolver_error(ErrorCode::invalid_argument, "snapshot_stride must be >= 0");
  if (cfg.modulation_stride < 1) throw evolver_error(ErrorCode::invalid_argument, "modulation_stride must be >= 1");
  if (!(cfg.t_max > 0.0)) throw evolver_error(ErrorCode::invalid_argument, "t_max must be positive");
  if (!(cfg.sponge_width >= 0.0 && cfg.sponge_width < 0.5))
    throw evolver_error(ErrorCode::invalid_argument, "sponge_width must lie in [0, 0.5)");
  if (!(cfg.sponge_strength >= 0.0)) throw evolver_error(ErrorCode::invalid_argument, "sponge_strength must be >= 0");
  if (cfg.max_steps < 1) throw evolver_error(ErrorCode::invalid_argument, "max_steps must be >= 1");
}

// ---------------------------------------------------------------- ledger

void MassLedger::add(double x, double mass) {
  if (mass == 0.0) return;
  bins_[static_cast<long>(std::floor(x / bin_width_))] += mass;
}

double MassLedger::total() const {
  double s = 0.0;
  for (const auto& [k, m] : bins_) s += m;
  return s;
}

double MassLedger::mass_right_of(double R) const {
  double s = 0.0;
  for (const auto& [k, m] : bins_)
    if ((static_cast<double>(k) + 0.5) * bin_width_ > R) s += m;
  return s;
}

// ---------------------------------------------------------------- stepper

Stepper::Stepper(const Grid& grid, const SolverConfig& cfg) : grid_(grid), cfg_(cfg) {
  if (!grid.is_periodic()) throw evolver_error(ErrorCode::invalid_argument, "the evolver needs a periodic grid");
  validate(cfg);
  n_ = grid.size();
  m_ = n_ * cfg.pad_factor;
  const Index half = n_ / 2;
  cutoff_ = static_cast<Index>(std::floor(cfg.dealias_fraction * static_cast<double>(half)));
  k_.resize(half + 1);
  lin_.resize(half + 1);
  const double k0 = std::numbers::pi / grid.half_length();
  for (Index j = 0; j <= half; ++j) {
    k_[j] = k0 * static_cast<double>(j);
    lin_[j] = cd(0.0, k_[j] * k_[j] * k_[j]);
  }
  lin_[half] = 0.0;  // Nyquist mode carries no odd derivative

  sponge_ = Vector::Zero(n_);
  sponge_on_ = cfg.sponge_strength > 0.0 && cfg.sponge_width > 0.0;
  if (sponge_on_) {
    const double L = grid.half_length();
    const double w = cfg.sponge_width * 2.0 * L;
    for (Index k = 0; k < n_; ++k) sponge_[k] = cfg.sponge_strength * smoothstep5((-L + w - grid.point(k)) / w);
  }
  absorbed_ = Vector::Zero(n_);
  pad_spec_ = ComplexVector::Zero(m_ / 2 + 1);
  const double dt0 = cfg.dt.value_or(stable_dt(grid, cfg, 1.0));
  set_dt(dt0);
}

void Stepper::set_dt(double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw evolver_error(ErrorCode::invalid_argument, "dt must be positive");
  if (dt == dt_) return;
  dt_ = dt;
  const Index s = lin_.size();
  E_.resize(s);
  E2_.resize(s);
  for (Index j = 0; j < s; ++j) {
    E_[j] = std::exp(dt * lin_[j]);
    E2_[j] = std::exp(0.5 * dt * lin_[j]);
  }
  if (cfg_.scheme == Scheme::etd_rk4) {
    Qc_.resize(s);
    f1_.resize(s);
    f2_.resize(s);
    f3_.resize(s);
    for (Index j = 0; j < s; ++j) {
      const EtdCoefficients c = etd_coefficients(dt * lin_[j], dt);
      Qc_[j] = c.q;
      f1_[j] = c.f1;
      f2_[j] = c.f2;
      f3_[j] = c.f3;
    }
  }
}

void Stepper::to_spectrum(const Vector& v, ComplexVector& vhat) { fft_for(n_).forward(v, vhat); }

void Stepper::to_physical(const ComplexVector& vhat, Vector& v) { fft_for(n_).inverse(vhat, v); }

// N(v) = -i k (v^5)^ - (sigma v)^, the quintic product formed on the padded grid
// from the truncated spectrum.
void Stepper::nonlinear(const ComplexVector& vhat, ComplexVector& out, bool first_stage) {
  const double up = static_cast<double>(m_) / static_cast<double>(n_);
  pad_spec_.setZero();
  for (Index j = 0; j <= cutoff_; ++j) pad_spec_[j] = vhat[j] * up;
  RealFft& fine_fft = fft_for(m_);
  fine_fft.inverse(pad_spec_, fine_);

  double sup = 0.0;
  bool finite = true;
  for (Index k = 0; k < m_; ++k) {
    const double u = fine_[k];
    if (!std::isfinite(u)) finite = false;
    sup = std::max(sup, std::abs(u));
    const double u2 = u * u;
    fine_[k] = u2 * u2 * u;
  }
  if (!finite || sup > 1e6) {
    last_sup_ = finite ? sup : std::numeric_limits<double>::infinity();
    throw evolver_error(ErrorCode::divergence, "sup|u| = " + std::to_string(last_sup_) + " exceeds 1e6 or is not finite");
  }
  last_sup_ = first_stage ? sup : std::max(last_sup_, sup);

  // sponge term on the window grid, reading the (truncated) field from the
  // padded samples before they are overwritten above; recompute from spectrum
  if (sponge_on_) {
    ComplexVector trunc = ComplexVector::Zero(vhat.size());
    for (Index j = 0; j <= cutoff_; ++j) trunc[j] = vhat[j];
    to_physical(trunc, coarse_);
    if (first_stage) {
      const double h = grid_.spacing();
      absorbed_.array() += 2.0 * dt_ * h * sponge_.array() * coarse_.array().square();
    }
    coarse_.array() *= sponge_.array();
    to_spectrum(coarse_, tmp_spec_);
  }

  fine_fft.forward(fine_, pad_spec_);
  const double down = 1.0 / up;
  out.resize(vhat.size());
  for (Index j = 0; j < out.size(); ++j) {
    cd value = j <= cutoff_ ? cd(0.0, -k_[j]) * pad_spec_[j] * down : cd(0.0);
    if (sponge_on_) value -= tmp_spec_[j];
    out[j] = value;
  }
}

void Stepper::step(ComplexVector& v) {
  const double h = dt_;
  if (cfg_.scheme == Scheme::etd_rk4) {
    nonlinear(v, nv_, true);
    a_ = E2_.cwiseProduct(v) + Qc_.cwiseProduct(nv_);
    nonlinear(a_, na_, false);
    b_ = E2_.cwiseProduct(v) + Qc_.cwiseProduct(na_);
    nonlinear(b_, nb_, false);
    c_ = E2_.cwiseProduct(a_) + Qc_.cwiseProduct(2.0 * nb_ - nv_);
    nonlinear(c_, nc_, false);
    v = E_.cwiseProduct(v) + f1_.cwiseProduct(nv_) + 2.0 * f2_.cwiseProduct(na_ + nb_) + f3_.cwiseProduct(nc_);
  } else {
    nonlinear(v, nv_, true);
    a_ = E2_.cwiseProduct(v + 0.5 * h * nv_);
    nonlinear(a_, na_, false);
    b_ = E2_.cwiseProduct(v) + 0.5 * h * na_;
    nonlinear(b_, nb_, false);
    c_ = E_.cwiseProduct(v) + h * E2_.cwiseProduct(nb_);
    nonlinear(c_, nc_, false);
    v = E_.cwiseProduct(v) + (h / 6.0) * (E_.cwiseProduct(nv_) + 2.0 * E2_.cwiseProduct(na_ + nb_) + nc_);
  }
}

double stable_dt(const Grid& grid, const SolverConfig& cfg, double sup) {
  const double s4 = sup * sup * sup * sup;
  return cfg.cfl * grid.spacing() / std::max(1.0, 5.0 * s4);
}

Field step(const Field& u, double dt, const SolverConfig& cfg) {
  Stepper st(u.grid(), cfg);
  st.set_dt(dt);
  ComplexVector vhat;
  st.to_spectrum(u.values(), vhat);
  st.step(vhat);
  Vector out;
  st.to_physical(vhat, out);
  return {u.grid(), std::move(out)};
}

// ---------------------------------------------------------------- diagnostics

Conserved conserved(const Field& u) {
  const Field ux = differentiate(u, 1);
  const double M = inner(u, u);
  const double E = 0.5 * inner(ux, ux) - integrate(pow(u, 6)) / 6.0;
  return {M, E};
}

KatoWeight constant_weight(const Grid& grid) {
  return {Field::constant(grid, 1.0), Field::zeros(grid), Field::zeros(grid)};
}

KatoWeight smooth_step_weight(const Grid& grid, double center, double width) {
  if (!(width > 0.0)) throw evolver_error(ErrorCode::invalid_argument, "weight width must be positive");
  auto th = [=](double y) { return std::tanh((y - center) / width); };
  Field g = Field::sample(grid, [&](double y) { return 0.5 * (1.0 + th(y)); });
  // g' = (1 - T^2) / (2w),  g''' = (1 - T^2)(6 T^2 - 2) / (2 w^3)
  Field g1 = Field::sample(grid, [&](double y) {
    const double t = th(y);
    return 0.5 * (1.0 - t * t) / width;
  });
  Field g3 = Field::sample(grid, [&](double y) {
    const double t = th(y);
    return 0.5 * (1.0 - t * t) * (6.0 * t * t - 2.0) / (width * width * width);
  });
  return {std::move(g), std::move(g1), std::move(g3)};
}

namespace {

double weighted_mass(const Field& v, const Field& g) { return integrate(pow(v, 2) * g); }

double weighted_energy(const Field& v, const Field& g) {
  const Field vx = differentiate(v, 1);
  return integrate((pow(vx, 2) - (1.0 / 3.0) * pow(v, 6)) * g);
}

}  // namespace

KatoReport kato_check(const Field& before, const Field& mid, const Field& after, double spacing,
                      const KatoWeight& w) {
  require_same_grid(before, mid, "kato_check");
  require_same_grid(after, mid, "kato_check");
  require_same_grid(w.g, mid, "kato_check");
  if (!(spacing > 0.0)) throw evolver_error(ErrorCode::invalid_argument, "snapshot spacing must be positive");
  KatoReport r;
  const Field& v = mid;
  const Field vx = differentiate(v, 1);
  const Field vxx = differentiate(v, 2);
  const Field v2 = pow(v, 2), vx2 = pow(vx, 2), v6 = pow(v, 6);

  r.mass_lhs = (weighted_mass(after, w.g) - weighted_mass(before, w.g)) / (2.0 * spacing);
  const double m1 = -3.0 * integrate(vx2 * w.g1);
  const double m2 = integrate(v2 * w.g3);
  const double m3 = (5.0 / 3.0) * integrate(v6 * w.g1);
  r.mass_rhs = m1 + m2 + m3;
  r.mass_abs = std::abs(r.mass_lhs - r.mass_rhs);
  double scale = std::abs(m1) + std::abs(m2) + std::abs(m3);
  if (scale < 1e-14) scale = std::max(weighted_mass(v, w.g), 1e-300);
  r.mass_rel = r.mass_abs / scale;

  r.energy_lhs = (weighted_energy(after, w.g) - weighted_energy(before, w.g)) / (2.0 * spacing);
  const Field vxx_plus = vxx + pow(v, 5);
  const double e1 = -integrate(pow(vxx_plus, 2) * w.g1);
  const double e2 = -2.0 * integrate(pow(vxx, 2) * w.g1);
  const double e3 = 10.0 * integrate(pow(v, 4) * vx2 * w.g1);
  const double e4 = integrate(vx2 * w.g3);
  r.energy_rhs = e1 + e2 + e3 + e4;
  r.energy_abs = std::abs(r.energy_lhs - r.energy_rhs);
  scale = std::abs(e1) + std::abs(e2) + std::abs(e3) + std::abs(e4);
  if (scale < 1e-14) scale = std::max(integrate((vx2 + (1.0 / 3.0) * v6) * w.g), 1e-300);
  r.energy_rel = r.energy_abs / scale;
  return r;
}

// ---------------------------------------------------------------- regrid

RegridResult rescale_window(const Field& v, const WindowMap& map, double new_center, double new_scale,
                            double core_radius, double target_fraction, MassLedger* ledger) {
  if (!(new_scale > 0.0)) throw evolver_error(ErrorCode::invalid_argument, "new_scale must be positive");
  const Grid& g = v.grid();
  const double L = g.half_length();
  const double h = g.spacing();
  const double shift = new_center - new_scale * target_fraction * L;
  const double lo = shift - new_scale * L, hi = shift + new_scale * L;

  double core_total = 0.0, core_inside = 0.0, released = 0.0;
  for (Index k = 0; k < g.size(); ++k) {
    const double y = g.point(k);
    const double m = h * v[k] * v[k];
    const bool inside = y >= lo && y < hi;
    if (std::abs(y - new_center) <= core_radius) {
      core_total += m;
      if (inside) core_inside += m;
    }
    if (!inside) {
      released += m;
      if (ledger) ledger->add(map.x_offset + map.scale * y, m);
    }
  }
  const double captured = core_total > 0.0 ? core_inside / core_total : 1.0;
  if (captured < 0.999)
    throw evolver_error(ErrorCode::regrid, "new window captures only " + std::to_string(captured) +
                                               " of the soliton-core mass");

  ResampleResult rs = resample(v, g, shift, new_scale, 1.0);
  Field out = std::sqrt(new_scale) * rs.field;
  WindowMap nm{map.x_offset + map.scale * shift, map.scale * new_scale, map.t_offset};
  return {std::move(out), nm, released, captured};
}

// ---------------------------------------------------------------- driver

namespace {

void flush_absorbed(Stepper& st, const WindowMap& map, MassLedger& ledger, double& absorbed_total) {
  const Vector& a = st.absorbed();
  for (Index k = 0; k < a.size(); ++k) {
    if (a[k] == 0.0) continue;
    ledger.add(map.x_offset + map.scale * st.grid().point(k), a[k]);
    absorbed_total += a[k];
  }
  st.reset_absorbed();
}

}  // namespace

RunRecord evolve(const Field& u0, const SolverConfig& cfg, const EvolveCallbacks& callbacks,
                 const WindowMap& initial_map) {
  validate(cfg);
  const auto wall_start = std::chrono::steady_clock::now();
  const Grid& grid = u0.grid();
  Stepper st(grid, cfg);
  RunRecord rec;
  WindowMap map = initial_map;
  double tau = 0.0;
  double t = map.t_offset;

  ComplexVector vhat;
  st.to_spectrum(u0.values(), vhat);
  Vector buf;

  double dt_sup4 = std::pow(u0.sup_norm(), 4);
  st.set_dt(cfg.dt.value_or(stable_dt(grid, cfg, u0.sup_norm())));

  auto current_field = [&]() {
    st.to_physical(vhat, buf);
    return Field(grid, buf);
  };

  bool stop = false;
  long step_count = 0;
  auto observe = [&](bool final_call) {
    const Field v = current_field();
    const EvolveView view{v, map, t, tau, step_count, rec.ledger, st.absorbed()};
    if (callbacks.on_snapshot && (final_call || (cfg.snapshot_stride > 0 && step_count % cfg.snapshot_stride == 0))) {
      if (auto ref = callbacks.on_snapshot(view)) rec.snapshots.push_back(*ref);
    }
    if (!(final_call || step_count % cfg.modulation_stride == 0)) return;
    ModulationFeedback fb;
    if (callbacks.on_modulation) fb = callbacks.on_modulation(view);
    SeriesRow row = fb.row;
    row.t = t;
    const Conserved c = conserved(v);
    row.M = c.M;
    row.E = c.E / (map.scale * map.scale);
    const bool fitted = fb.valid || !callbacks.on_modulation;
    if (fitted && (rec.series.empty() || row.t > rec.series.back().t)) rec.series.push_back(row);
    if (fb.stop && !final_call) {
      stop = true;
      rec.termination = fb.reason.empty() ? "callback" : fb.reason;
      return;
    }
    if (final_call || cfg.window_policy != WindowPolicy::tracking || !fb.valid) return;
    const double L = grid.half_length();
    const bool shrunk = fb.lambda_grid < cfg.regrid_lambda_ratio;
    const bool near_edge = fb.x_grid > L - cfg.regrid_margin * 2.0 * L;
    if (!shrunk && !near_edge) return;
    flush_absorbed(st, map, rec.ledger, rec.absorbed_mass);
    const double r = std::min(fb.lambda_grid, 1.0);
    RegridResult rg = rescale_window(v, map, fb.x_grid, r, 10.0 * fb.lambda_grid, cfg.regrid_target, &rec.ledger);
    rec.released_mass += rg.released_mass;
    ++rec.regrids;
    map = rg.map;
    map.t_offset = t;
    tau = 0.0;
    st.to_spectrum(rg.field.values(), vhat);
    const double sup = rg.field.sup_norm();
    dt_sup4 = std::pow(sup, 4);
    if (!cfg.dt) st.set_dt(stable_dt(grid, cfg, sup));
  };

  observe(false);
  try {
    while (!stop) {
      if (step_count >= cfg.max_steps) {
        rec.termination = "max_steps";
        break;
      }
      const double cube = map.scale * map.scale * map.scale;
      const double remaining = (cfg.t_max - t) / cube;
      if (remaining <= 1e-14 * std::max(1.0, cfg.t_max / cube)) {
        rec.termination = "t_max";
        break;
      }
      const double nominal = st.dt();
      const bool last = remaining <= nominal * (1.0 + 1e-12);
      if (last) st.set_dt(remaining);
      st.step(vhat);
      ++step_count;
      if (last) {
        tau += remaining;
        t = cfg.t_max;
        st.set_dt(nominal);
      } else {
        tau += nominal;
        t = map.t_offset + cube * tau;
      }
      if (!cfg.dt) {
        const double sup = st.last_sup();
        const double s4 = sup * sup * sup * sup;
        if (s4 > 1.2 * dt_sup4) {
          dt_sup4 = s4;
          st.set_dt(stable_dt(grid, cfg, sup));
        }
      }
      observe(false);
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::divergence) throw;
    throw evolver_error(ErrorCode::divergence, std::string(e.what()) + " (last valid t = " + std::to_string(t) + ")");
  }
  if (!stop && rec.termination.empty()) rec.termination = "t_max";
  observe(true);
  flush_absorbed(st, map, rec.ledger, rec.absorbed_mass);
  rec.steps = step_count;
  rec.final_field = current_field();
  rec.final_map = map;
  rec.final_t = t;
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  return rec;
}

}  // namespace gkdv
