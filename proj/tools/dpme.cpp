#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "dpme/diagnostics.hpp"
#include "dpme/instances.hpp"
#include "dpme/parallel.hpp"
#include "dpme/sampling.hpp"
#include "dpme/solver.hpp"
#include "dpme/version.hpp"

using namespace dpme;
using nlohmann::json;

namespace {

// shortest round-trip decimal, locale independent
std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

int resolve_threads_flag(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("DPME_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  return resolve_threads(0);
}

void write_text_atomic(const std::string& path, const std::string& text) {
  std::string tmp = path + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

json make_header(const std::string& command, const json& config, std::uint64_t seed,
                 const std::string& instance_digest) {
  return json{{"tool", "dpme"},
              {"version", kVersion},
              {"command", command},
              {"config", config},
              {"seed", seed},
              {"instance_digest", instance_digest}};
}

std::string header_comment(const json& header) {
  std::string out;
  out += "# dpme " + std::string(kVersion) + "\n";
  out += "# command: " + header.at("command").get<std::string>() + "\n";
  out += "# config: " + header.at("config").dump() + "\n";
  out += "# seed: " + std::to_string(header.at("seed").get<std::uint64_t>()) + "\n";
  out += "# instance_digest: " + header.at("instance_digest").get<std::string>() + "\n";
  return out;
}

std::string trace_csv(const SolveReport& rep, const json& header, bool timing) {
  std::string out = header_comment(header);
  out += "outer,inner_iters,S_nu,gamma,epsilon,objective,feas_abs,feas_rel,kkt_abs,"
         "kkt_rel,criticality,time_s\n";
  for (const TraceRow& r : rep.trace) {
    out += std::to_string(r.outer) + "," + std::to_string(r.inner_iters) + "," +
           std::to_string(r.S_nu) + "," + fmt(r.gamma) + "," + fmt(r.epsilon) + "," +
           fmt(r.objective) + "," + fmt(r.feas_abs) + "," + fmt(r.feas_rel) + "," +
           fmt(r.kkt_abs) + "," + fmt(r.kkt_rel) + "," + fmt(r.criticality) + "," +
           fmt(timing ? r.time_s : 0.0) + "\n";
  }
  return out;
}

json vec_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vector vec_from_json(const json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

json solver_config_json(const SolverConfig& cfg) {
  return json{{"gamma0", cfg.gamma0},
              {"gamma_decay", cfg.gamma_decay},
              {"eps0", cfg.eps0},
              {"eps_decay", cfg.eps_decay},
              {"max_outer", cfg.max_outer},
              {"max_inner", cfg.max_inner},
              {"tol_feas_abs", cfg.tol_feas_abs},
              {"tol_feas_rel", cfg.tol_feas_rel},
              {"tol_obj_rel", cfg.tol_obj_rel},
              {"qp_tol", cfg.qp_tol},
              {"threads", cfg.threads},
              {"seed", cfg.seed}};
}

std::string solution_json(const SolveReport& rep, const json& header) {
  json sec = json::array();
  for (const ScenarioSolution& s : rep.second_stage)
    sec.push_back(json{{"value", s.value},
                       {"y", vec_json(s.y)},
                       {"dual_in", vec_json(s.dual_in)},
                       {"dual_eq", vec_json(s.dual_eq)},
                       {"dual_lo", vec_json(s.dual_lo)},
                       {"dual_up", vec_json(s.dual_up)}});
  json doc{{"header", header},
           {"status", to_string(rep.status)},
           {"x", vec_json(rep.x_final)},
           {"objective", rep.objective},
           {"feas_abs", rep.feas_abs},
           {"feas_rel", rep.feas_rel},
           {"kkt_abs", rep.kkt_abs},
           {"kkt_rel", rep.kkt_rel},
           {"criticality", rep.criticality},
           {"normal_cone_dist", rep.normal_cone_dist},
           {"gamma_final", rep.gamma_final},
           {"epsilon_final", rep.epsilon_final},
           {"outer_iterations", rep.trace.size()},
           {"reference_scenarios", rep.reference_scenarios},
           {"heuristic_continuous", rep.heuristic_continuous},
           {"offending_scenario", rep.offending_scenario},
           {"second_stage", std::move(sec)}};
  return doc.dump(1, '\t') + "\n";
}

int exit_code_for(SolveStatus status) {
  switch (status) {
    case SolveStatus::Converged: return 0;
    case SolveStatus::RecourseInfeasible: return 2;
    case SolveStatus::MaxOuter: return 3;
    case SolveStatus::InnerStall: return 4;
  }
  return 3;
}

struct SolveFlags {
  SolverConfig cfg;
  std::string instance;
  std::string report_path = "dpme_report.json";
  std::string trace_path = "dpme_trace.csv";
  bool timing = false;
  int threads_flag = 0;
};

void add_solver_flags(CLI::App* cmd, SolveFlags& f) {
  cmd->add_option("--instance", f.instance, "instance file")->required();
  cmd->add_option("--report", f.report_path, "solution/report output (JSON)");
  cmd->add_option("--trace", f.trace_path, "per-outer-iteration trace (CSV)");
  cmd->add_option("--gamma0", f.cfg.gamma0, "initial Moreau parameter");
  cmd->add_option("--gamma-decay", f.cfg.gamma_decay, "gamma decay in (0,1)");
  cmd->add_option("--eps0", f.cfg.eps0, "initial inner tolerance");
  cmd->add_option("--eps-decay", f.cfg.eps_decay, "epsilon decay in (0,1)");
  cmd->add_option("--max-outer", f.cfg.max_outer, "outer iteration cap");
  cmd->add_option("--max-inner", f.cfg.max_inner, "inner iteration cap");
  cmd->add_option("--tol-feas-abs", f.cfg.tol_feas_abs, "absolute feasibility stop");
  cmd->add_option("--tol-feas-rel", f.cfg.tol_feas_rel, "relative feasibility stop");
  cmd->add_option("--tol-obj-rel", f.cfg.tol_obj_rel, "relative objective-change stop");
  cmd->add_option("--qp-tol", f.cfg.qp_tol, "subproblem KKT tolerance");
  cmd->add_option("--seed", f.cfg.seed, "seed echoed into output headers");
  cmd->add_option("--threads", f.threads_flag,
                  "worker threads (0: DPME_THREADS or hardware)");
  cmd->add_flag("--timing", f.timing,
                "record wall-clock in the trace (off keeps re-runs byte-identical)");
}

SampleSchedule parse_schedule(const std::string& spec, long long eta_flag) {
  if (!spec.empty()) {
    auto colon = spec.find(':');
    std::string kind = spec.substr(0, colon);
    std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
    if (kind == "linear") return SampleSchedule::linear(std::stoll(arg));
    if (kind == "constant") return SampleSchedule::constant(std::stoll(arg));
    if (kind == "custom") {
      std::vector<long long> sizes;
      std::size_t pos = 0;
      while (pos < arg.size()) {
        auto comma = arg.find(',', pos);
        sizes.push_back(std::stoll(arg.substr(pos, comma - pos)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
      return SampleSchedule::custom_list(std::move(sizes));
    }
    throw CLI::ValidationError("--schedule",
                               "expected linear:N, constant:N or custom:a,b,...");
  }
  return SampleSchedule::linear(eta_flag);
}

int run_solve_common(const SolveFlags& flags, const std::string& command,
                     const std::string& schedule_spec, long long eta) {
  BilinearTwoStageModel model = load_instance(flags.instance);
  std::string digest = file_digest(flags.instance);

  SolverConfig cfg = flags.cfg;
  cfg.threads = resolve_threads_flag(flags.threads_flag);

  json config = solver_config_json(cfg);
  SolveReport rep;
  if (command == "solve") {
    rep = solve(model.first_stage, model.scenarios, cfg);
  } else {
    SampleSchedule sched = parse_schedule(schedule_spec, eta);
    config["schedule"] =
        schedule_spec.empty() ? "linear:" + std::to_string(eta) : schedule_spec;
    FinitePoolGenerator gen(model.scenarios);
    ScenarioPool pool = make_pool(gen, cfg.seed);
    rep = solve_sampled(model.first_stage, pool, sched, cfg);
  }

  json header = make_header(command, config, cfg.seed, digest);
  write_text_atomic(flags.report_path, solution_json(rep, header));
  write_text_atomic(flags.trace_path, trace_csv(rep, header, flags.timing));

  std::printf("status: %s\n", to_string(rep.status));
  std::printf("objective: %s\n", fmt(rep.objective).c_str());
  std::printf("x_final:");
  for (Eigen::Index i = 0; i < rep.x_final.size(); ++i)
    std::printf(" %s", fmt(rep.x_final[i]).c_str());
  std::printf("\n");
  std::printf("feas_abs %s  feas_rel %s  kkt_abs %s  kkt_rel %s\n",
              fmt(rep.feas_abs).c_str(), fmt(rep.feas_rel).c_str(),
              fmt(rep.kkt_abs).c_str(), fmt(rep.kkt_rel).c_str());
  std::printf("criticality %s (normal-cone distance %s) after %zu outer iterations\n",
              fmt(rep.criticality).c_str(), fmt(rep.normal_cone_dist).c_str(),
              rep.trace.size());
  if (!rep.message.empty()) std::printf("note: %s\n", rep.message.c_str());
  return exit_code_for(rep.status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decomposition solver for bilinear two-stage stochastic programs"};
  app.require_subcommand(1);

  // gen
  PowerConfig gen_cfg;
  long long gen_scenarios = 100;
  double gen_sigma = -1.0;
  std::string gen_out = "instance.json";
  auto* gen_cmd = app.add_subcommand("gen", "generate a power planning instance");
  gen_cmd->add_option("--plants", gen_cfg.n_plants, "number of plants");
  gen_cmd->add_option("--mix", gen_cfg.n_mix, "number of mixture components");
  gen_cmd->add_option("--locations", gen_cfg.n_locations, "number of demand locations");
  gen_cmd->add_option("--scenarios", gen_scenarios, "scenario count")->required();
  gen_cmd->add_option("--sigma", gen_sigma, "sigma of all truncated normals");
  gen_cmd->add_option("--beta", gen_cfg.budget_fraction, "budget fraction in (0,1)");
  gen_cmd->add_option("--seed", gen_cfg.seed, "generator seed");
  gen_cmd->add_option("--out", gen_out, "output instance file");
  gen_cmd->add_option("--q-lo", gen_cfg.q_trunc.lo, "production cost interval low");
  gen_cmd->add_option("--q-hi", gen_cfg.q_trunc.hi, "production cost interval high");
  gen_cmd->add_option("--pi-lo", gen_cfg.pi_trunc.lo, "price interval low");
  gen_cmd->add_option("--pi-hi", gen_cfg.pi_trunc.hi, "price interval high");
  gen_cmd->add_option("--d-lo", gen_cfg.d_trunc.lo, "demand interval low");
  gen_cmd->add_option("--d-hi", gen_cfg.d_trunc.hi, "demand interval high");
  gen_cmd->add_flag("--row-normalize-p", gen_cfg.row_normalize_p,
                    "normalize mixture masses per scenario instead of per component");

  // solve / solve-sampled
  SolveFlags solve_flags;
  auto* solve_cmd = app.add_subcommand("solve", "run the fixed-scenario solver");
  add_solver_flags(solve_cmd, solve_flags);

  SolveFlags sampled_flags;
  long long eta = 100;
  std::string schedule_spec;
  auto* sampled_cmd =
      app.add_subcommand("solve-sampled", "run the incremental-sampling solver");
  add_solver_flags(sampled_cmd, sampled_flags);
  sampled_cmd->add_option("--eta", eta, "linear sample growth rate (S_nu = eta * nu)");
  sampled_cmd->add_option("--schedule", schedule_spec,
                          "schedule: linear:N | constant:N | custom:a,b,...");

  // verify
  std::string ver_instance, ver_solution;
  double ver_tol_abs = 1e-2, ver_tol_rel = 1e-4;
  int ver_threads = 0;
  auto* ver_cmd = app.add_subcommand("verify", "check a solution's KKT residuals");
  ver_cmd->add_option("--instance", ver_instance, "instance file")->required();
  ver_cmd->add_option("--solution", ver_solution, "solution file")->required();
  ver_cmd->add_option("--tol-abs", ver_tol_abs, "absolute KKT threshold");
  ver_cmd->add_option("--tol-rel", ver_tol_rel, "relative KKT threshold");
  ver_cmd->add_option("--threads", ver_threads, "worker threads");

  // bench
  std::vector<long long> bench_scenarios{100, 200, 400};
  int bench_reps = 3;
  std::uint64_t bench_seed = 1;
  int bench_threads = 0;
  std::string bench_out = "bench.csv";
  auto* bench_cmd =
      app.add_subcommand("bench", "time solver phases across scenario counts");
  bench_cmd->add_option("--scenarios", bench_scenarios, "scenario counts to time");
  bench_cmd->add_option("--reps", bench_reps, "repetitions per count");
  bench_cmd->add_option("--seed", bench_seed, "instance seed");
  bench_cmd->add_option("--threads", bench_threads, "worker threads");
  bench_cmd->add_option("--out", bench_out, "timing CSV");

  // slice
  std::string slice_instance, slice_out = "slice.csv";
  int slice_scenario = 0, slice_axis = 0, slice_axis2 = -1;
  int slice_points = 101, slice_points2 = 0;
  double slice_lo = std::numeric_limits<double>::quiet_NaN();
  double slice_hi = std::numeric_limits<double>::quiet_NaN();
  double slice_lo2 = std::numeric_limits<double>::quiet_NaN();
  double slice_hi2 = std::numeric_limits<double>::quiet_NaN();
  auto* slice_cmd =
      app.add_subcommand("slice", "tabulate the recourse along one or two axes");
  slice_cmd->add_option("--instance", slice_instance, "instance file")->required();
  slice_cmd->add_option("--scenario", slice_scenario, "scenario index");
  slice_cmd->add_option("--axis", slice_axis, "first-stage coordinate to sweep");
  slice_cmd->add_option("--axis2", slice_axis2, "second coordinate (2-D slice)");
  slice_cmd->add_option("--points", slice_points, "grid points along axis");
  slice_cmd->add_option("--points2", slice_points2, "grid points along axis2");
  slice_cmd->add_option("--lo", slice_lo, "axis range low (default: Xbar)");
  slice_cmd->add_option("--hi", slice_hi, "axis range high (default: Xbar)");
  slice_cmd->add_option("--lo2", slice_lo2, "axis2 range low");
  slice_cmd->add_option("--hi2", slice_hi2, "axis2 range high");
  slice_cmd->add_option("--out", slice_out, "slice CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) {
      if (gen_sigma > 0.0) gen_cfg.set_sigma(gen_sigma);
      BilinearTwoStageModel model = generate_power_instance(gen_cfg, gen_scenarios);
      save_instance(model, gen_out, "power", gen_cfg.seed, &gen_cfg);
      DeSize size = compute_de_size(gen_cfg, gen_scenarios);
      std::printf("wrote %s\n", gen_out.c_str());
      std::printf("scenarios: %lld\n", gen_scenarios);
      std::printf("deterministic equivalent: %lld rows, %lld cols\n", size.rows,
                  size.cols);
      std::printf("digest: %s\n", file_digest(gen_out).c_str());
      return 0;
    }

    if (*solve_cmd) return run_solve_common(solve_flags, "solve", "", 0);
    if (*sampled_cmd)
      return run_solve_common(sampled_flags, "solve-sampled", schedule_spec, eta);

    if (*ver_cmd) {
      BilinearTwoStageModel model = load_instance(ver_instance);
      std::ifstream in(ver_solution);
      if (!in) throw std::runtime_error("cannot open " + ver_solution);
      json sol = json::parse(in);
      Vector x = vec_from_json(sol.at("x"));
      int threads = resolve_threads_flag(ver_threads);
      KktReport kkt;
      if (sol.contains("second_stage") && !sol.at("second_stage").empty()) {
        std::vector<Vector> ys;
        for (const json& s : sol.at("second_stage")) ys.push_back(vec_from_json(s.at("y")));
        kkt = kkt_residuals(model.first_stage, model.scenarios, x, ys, 1e-9, threads);
      } else {
        std::vector<ScenarioSolution> sols;
        sample_average_objective(model.first_stage, model.scenarios, x, 1e-9, threads,
                                 &sols);
        kkt = kkt_residuals(model.first_stage, model.scenarios, x, sols, 1e-9, threads);
      }
      std::printf("kkt_abs %s  kkt_rel %s\n", fmt(kkt.kkt_abs).c_str(),
                  fmt(kkt.kkt_rel).c_str());
      std::printf("feas_abs %s  feas_rel %s  opt_abs %s  opt_rel %s\n",
                  fmt(kkt.feas_abs).c_str(), fmt(kkt.feas_rel).c_str(),
                  fmt(kkt.opt_abs).c_str(), fmt(kkt.opt_rel).c_str());
      if (!kkt.worst_feas_row.empty())
        std::printf("worst feasibility row: %s\n", kkt.worst_feas_row.c_str());
      if (!kkt.worst_opt_row.empty())
        std::printf("worst optimality row: %s\n", kkt.worst_opt_row.c_str());
      bool pass = kkt.kkt_abs <= ver_tol_abs && kkt.kkt_rel <= ver_tol_rel;
      std::printf("%s (tol_abs %s, tol_rel %s)\n", pass ? "PASS" : "FAIL",
                  fmt(ver_tol_abs).c_str(), fmt(ver_tol_rel).c_str());
      return pass ? 0 : 2;
    }

    if (*bench_cmd) {
      int threads = resolve_threads_flag(bench_threads);
      json config{{"scenarios", bench_scenarios}, {"reps", bench_reps}, {"threads", threads}};
      json header = make_header("bench", config, bench_seed, "n/a");
      std::string csv = header_comment(header);
      csv += "S,rep,cut_build_s,master_s,verify_s,cut_per_scenario_ms\n";
      for (long long S : bench_scenarios) {
        PowerConfig cfg;
        cfg.seed = bench_seed;
        BilinearTwoStageModel model = generate_power_instance(cfg, S);
        for (int rep = 0; rep < bench_reps; ++rep) {
          SolverConfig scfg;
          scfg.threads = threads;
          auto tick = [] { return std::chrono::steady_clock::now(); };
          auto secs = [](auto a, auto b) {
            return std::chrono::duration<double>(b - a).count();
          };

          // one full cut sweep across all scenarios at the initial point
          auto t0 = tick();
          std::vector<SurrogateCut> cuts(model.scenarios.size());
          std::vector<EnvelopeResult> envs(model.scenarios.size());
          parallel_for(static_cast<long long>(model.scenarios.size()), threads,
                       [&](long long s) {
                         auto i = static_cast<std::size_t>(s);
                         cuts[i] = build_cut(model.first_stage, model.scenarios[i],
                                             model.first_stage.x0, scfg.gamma0,
                                             scfg.qp_tol, static_cast<int>(s), &envs[i]);
                       });
          double cut_s = secs(t0, tick());

          auto t1 = tick();
          MasterResult master = solve_master(model.first_stage, cuts, scfg.gamma0);
          double master_s = secs(t1, tick());

          auto t2 = tick();
          std::vector<ScenarioSolution> sols;
          sample_average_objective(model.first_stage, model.scenarios, master.x,
                                   scfg.qp_tol, threads, &sols);
          kkt_residuals(model.first_stage, model.scenarios, master.x, sols, scfg.qp_tol,
                        threads);
          double verify_s = secs(t2, tick());

          csv += std::to_string(S) + "," + std::to_string(rep) + "," + fmt(cut_s) + "," +
                 fmt(master_s) + "," + fmt(verify_s) + "," +
                 fmt(1000.0 * cut_s / static_cast<double>(S)) + "\n";
        }
      }
      write_text_atomic(bench_out, csv);
      std::printf("%s", csv.c_str());
      return 0;
    }

    if (*slice_cmd) {
      BilinearTwoStageModel model = load_instance(slice_instance);
      if (slice_scenario < 0 ||
          slice_scenario >= static_cast<int>(model.scenarios.size()))
        throw std::runtime_error("slice: scenario index out of range");
      SliceSpec spec;
      spec.base = model.first_stage.x0;
      spec.axis_i = slice_axis;
      spec.axis_j = slice_axis2;
      spec.n_i = slice_points;
      spec.n_j = slice_points2 > 0 ? slice_points2 : slice_points;
      spec.lo_i = slice_lo;
      spec.hi_i = slice_hi;
      spec.lo_j = slice_lo2;
      spec.hi_j = slice_hi2;
      SliceTable table = recourse_slice(
          model.first_stage, model.scenarios[static_cast<std::size_t>(slice_scenario)],
          spec);
      json config{{"scenario", slice_scenario}, {"axis", slice_axis}, {"axis2", slice_axis2}};
      json header = make_header("slice", config, 0, file_digest(slice_instance));
      std::string csv = header_comment(header);
      csv += table.two_d ? "x_i,x_j,psi\n" : "x_i,psi\n";
      for (const SliceRow& row : table.rows) {
        csv += fmt(row.xi);
        if (table.two_d) csv += "," + fmt(row.xj);
        csv += "," + fmt(row.value) + "\n";
      }
      write_text_atomic(slice_out, csv);
      std::printf("wrote %s (%zu rows)\n", slice_out.c_str(), table.rows.size());
      return 0;
    }
  } catch (const InstanceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const SchemaError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
