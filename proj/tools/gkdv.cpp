// gkdv command line: profiles, identities, ode, evolve, classify, fit, tail, run, replay.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>

#include "CLI11.hpp"
#include "json.hpp"

#include "gkdv/harness.hpp"
#include "gkdv/reduced_ode.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace gkdv;

namespace {

Config make_config(const std::string& target, const std::vector<std::string>& sets) {
  Config cfg = Config::resolve(target);
  for (const auto& s : sets) cfg.assign(s);
  return cfg;
}

fs::path run_dir(const std::string& out, const Config& cfg) {
  return out.empty() ? output_root() / cfg.name() : fs::path(out);
}

int report_exit(const Report& r) {
  std::cout << r.json;
  return r.pass() ? 0 : 1;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gkdv: critical gKdV blow-up laboratory"};
  app.require_subcommand(1);

  // profiles
  auto* profiles = app.add_subcommand("profiles", "Q, Q', Lambda Q, P and the dual profiles as CSV");
  Index p_n = 2048;
  double p_L = 30.0;
  std::string p_out;
  profiles->add_option("--n", p_n, "grid points");
  profiles->add_option("--L", p_L, "half length");
  profiles->add_option("--out", p_out, "CSV path (default stdout)");

  // identities
  auto* identities = app.add_subcommand("identities", "profile and operator identity suite");
  std::vector<std::string> id_sets;
  identities->add_option("--set", id_sets, "key=value override");

  // ode
  auto* ode = app.add_subcommand("ode", "reduced modulation ODE: one trajectory or a phase portrait");
  double o_b0 = 0.05, o_l0 = 1.0, o_tmax = std::numeric_limits<double>::infinity(), o_floor = 0.0,
         o_ceiling = std::numeric_limits<double>::infinity(), o_smax = std::numeric_limits<double>::infinity();
  std::string o_sweep, o_out;
  ode->add_option("--b0", o_b0);
  ode->add_option("--lambda0", o_l0);
  ode->add_option("--t-max", o_tmax);
  ode->add_option("--s-max", o_smax);
  ode->add_option("--lambda-floor", o_floor);
  ode->add_option("--lambda-ceiling", o_ceiling);
  ode->add_option("--sweep", o_sweep, "lo:hi:step, classify a family of b0");
  ode->add_option("--out", o_out, "CSV path (default stdout)");

  // evolve / run
  std::vector<std::string> sets;
  std::string target, out, sweep;
  auto* evolve_cmd = app.add_subcommand("evolve", "simulate a preset or config file into a run directory");
  evolve_cmd->add_option("target", target, "preset name or config path")->required();
  evolve_cmd->add_option("--set", sets, "key=value override");
  evolve_cmd->add_option("--out", out, "run directory (default $GKDV_OUT/<preset>)");
  auto* run_cmd = app.add_subcommand("run", "full pipeline with the preset's acceptance checks");
  run_cmd->add_option("target", target, "preset name or config path")->required();
  run_cmd->add_option("--set", sets, "key=value override");
  run_cmd->add_option("--out", out, "run directory (default $GKDV_OUT/<preset>)");
  run_cmd->add_option("--sweep", sweep, "ode-portrait sweep lo:hi:step");

  // analysis of run directories
  std::string dir;
  auto* classify_cmd = app.add_subcommand("classify", "regime verdict from a run directory");
  auto* fit_cmd = app.add_subcommand("fit", "blow-up rate fit from a run directory");
  auto* tail_cmd = app.add_subcommand("tail", "tail-law tables at the checkpoint snapshots");
  auto* replay_cmd = app.add_subcommand("replay", "recompute report.json from persisted data");
  for (auto* c : {classify_cmd, fit_cmd, tail_cmd, replay_cmd}) {
    c->add_option("dir", dir, "run directory")->required();
    c->add_option("--set", sets, "key=value override of the echoed config");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (profiles->parsed()) {
      const ProfileSet ps = build_profiles(Grid::bounded(p_n, p_L));
      const DualProfiles du = dual_profiles(ps);
      std::ofstream file;
      if (!p_out.empty()) file.open(p_out);
      std::ostream& os = p_out.empty() ? std::cout : file;
      os << "y,Q,Qp,LamQ,P,rho1,rho2,rho\n";
      for (Index k = 0; k < ps.grid.size(); ++k)
        os << num(ps.grid.point(k)) << ',' << num(ps.Q[k]) << ',' << num(ps.Qp[k]) << ',' << num(ps.LamQ[k]) << ','
           << num(ps.P[k]) << ',' << num(du.rho1[k]) << ',' << num(du.rho2[k]) << ',' << num(du.rho[k]) << '\n';
      if (!p_out.empty()) {
        json j = {{"intQ", ps.intQ}, {"intQ2", ps.intQ2}, {"intQ6", ps.intQ6}, {"normQp2", ps.normQp2},
                  {"PQ", ps.PQ},     {"normQ_L1", ps.normQ_L1}};
        std::cout << j.dump(2) << "\n";
      }
      return 0;
    }
    if (identities->parsed()) return report_exit(identity_report(make_config("identity-suite", id_sets)));
    if (ode->parsed()) {
      std::ofstream file;
      if (!o_out.empty()) file.open(o_out);
      std::ostream& os = o_out.empty() ? std::cout : file;
      if (!o_sweep.empty()) {
        Config cfg = Config::preset("ode-portrait");
        cfg.set("sweep", o_sweep);
        cfg.set("lambda0", num(o_l0));
        const Report r = ode_portrait_report(cfg, o_out.empty() ? fs::path() : fs::path(o_out));
        if (o_out.empty()) std::cout << r.json;
        return r.pass() ? 0 : 1;
      }
      StopRule rule;
      rule.t_max = o_tmax;
      rule.s_max = o_smax;
      rule.lambda_floor = o_floor;
      rule.lambda_ceiling = o_ceiling;
      if (!std::isfinite(rule.t_max) && !std::isfinite(rule.s_max) && rule.lambda_floor == 0.0 &&
          !std::isfinite(rule.lambda_ceiling))
        rule.t_max = 1000.0;
      const ReducedTrajectory tr = integrate(o_b0, o_l0, rule);
      os << "s,t,lambda,b,x,b_over_lambda2\n";
      for (const ReducedState& s : tr.states)
        os << num(s.s) << ',' << num(s.t) << ',' << num(s.lambda) << ',' << num(s.b) << ',' << num(s.x) << ','
           << num(s.b / (s.lambda * s.lambda)) << '\n';
      std::cerr << "stop: " << to_string(tr.reason) << "\n";
      return 0;
    }
    if (evolve_cmd->parsed()) {
      const Config cfg = make_config(target, sets);
      const fs::path d = run_dir(out, cfg);
      const RunRecord rec = simulate(cfg, d);
      std::cout << "run directory: " << d.string() << "\ntermination: " << rec.termination
                << "\nsteps: " << rec.steps << "\nregrids: " << rec.regrids << "\nfinal t: " << num(rec.final_t)
                << "\nwall seconds: " << rec.wall_seconds << "\n";
      return 0;
    }
    if (run_cmd->parsed()) {
      Config cfg = make_config(target, sets);
      if (!sweep.empty()) cfg.set("sweep", sweep);
      return report_exit(run(cfg, run_dir(out, cfg)));
    }
    if (replay_cmd->parsed()) return report_exit(replay(dir, sets));
    Config cfg = read_run_config(dir);
    for (const auto& s : sets) cfg.assign(s);
    const RunFiles f = read_run(dir);
    if (classify_cmd->parsed()) {
      const ClassifierResult c = classify(f.series, cfg.classifier(), f.run_info.at("termination"));
      json j = {{"verdict", to_string(c.verdict)},       {"reason", c.reason},
                {"t_event", c.t_event},                  {"lambda_event", c.lambda_event},
                {"lambda_min", c.lambda_min},            {"lambda_max", c.lambda_max},
                {"max_tube_distance", c.max_tube_distance}, {"separated", c.separated},
                {"t_separation", c.t_separation},        {"separation_sign", c.separation_sign}};
      std::cout << j.dump(2) << "\n";
      return 0;
    }
    if (fit_cmd->parsed()) {
      const BlowupFit fit = blowup_fit(f.series);
      json j = {{"ell0", fit.ell0},
                {"T_est", fit.T_est},
                {"r2", fit.r2},
                {"points", fit.points},
                {"ratio_variation", fit.ratio_variation},
                {"tx_final", fit.tx_final},
                {"tx_target", fit.tx_target},
                {"ux_ratio_min", fit.ux_ratio_min},
                {"ux_ratio_max", fit.ux_ratio_max}};
      std::cout << j.dump(2) << "\n";
      return 0;
    }
    if (tail_cmd->parsed()) {
      json arr = json::array();
      for (const TailCheckpoint& cp : tail_checkpoints(dir, cfg)) {
        json rows = json::array();
        for (size_t i = 0; i < cp.table.rows.size(); ++i)
          rows.push_back({cp.table.rows[i].R, cp.table.rows[i].scaled, cp.model_scaled[i]});
        arr.push_back({{"tag", cp.tag}, {"lambda", cp.lambda}, {"x", cp.x}, {"ell0", cp.ell0},
                       {"reference", cp.table.reference}, {"best_octave_log2_error", cp.best_octave_error},
                       {"best_octave_R", cp.best_octave_R}, {"model_k", cp.model_k},
                       {"R_scaled_model", rows}});
      }
      std::cout << arr.dump(2) << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error [" << e.module() << "/" << to_string(e.code()) << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
