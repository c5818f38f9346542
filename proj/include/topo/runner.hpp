#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "topo/adaptivity.hpp"
#include "topo/config.hpp"
#include "topo/fem.hpp"
#include "topo/mma.hpp"
#include "topo/optimization.hpp"
#include "topo/presets.hpp"
#include "topo/regularization.hpp"
#include "topo/vtk.hpp"

namespace topo {

struct IterationRecord {
  int iter = 0;
  double objective = 0.0;
  double g_vol = 0.0;  // volume / bound - 1
  double g_pvm = 0.0;  // aggregated stress measure (<= 1 feasible)
  int cells = 0;
  int dofs = 0;
  double dt = 0.0;
  double t_acc = 0.0;
  int event = 0;  // 1 if the mesh changed this iteration
};

struct RunResult {
  int exit_code = 0;
  std::string message;
  std::vector<IterationRecord> history;
  std::optional<Forest> forest;  // final mesh
  Eigen::VectorXd rho, rho_tilde, rho_hat;
  double objective = 0.0;
  double total_time = 0.0;
  int peak_cells = 0;
  // Refinement level of the cell containing the probe point, per iteration
  // (empty unless a probe is requested).
  std::vector<int> probe_levels;
};

struct RunOptions {
  bool write_artifacts = true;
  bool quiet = true;
  double probe_x = std::numeric_limits<double>::quiet_NaN();
  double probe_y = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline int level_at_point(const Forest& forest, double x, double y) {
  std::int64_t lx = std::int64_t(std::floor(x / forest.dx_unit()));
  std::int64_t ly = std::int64_t(std::floor(y / forest.dy_unit()));
  lx = std::clamp<std::int64_t>(lx, 0, forest.lattice_nx() - 1);
  ly = std::clamp<std::int64_t>(ly, 0, forest.lattice_ny() - 1);
  int ci = forest.active_cell_at(lx, ly);
  return ci < 0 ? -1 : forest.cell(ci).level;
}

inline std::string snap_name(int iter) {
  std::ostringstream os;
  os << "snap_" << std::setw(4) << std::setfill('0') << iter;
  return os.str();
}

}  // namespace detail

inline void write_csv(const std::string& path, const std::vector<IterationRecord>& history) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path);
  os << "iter,objective,g_vol,g_pvm,cells,dofs,dt,t_acc,event\n";
  os << std::setprecision(17);
  for (const auto& r : history)
    os << r.iter << "," << r.objective << "," << r.g_vol << "," << r.g_pvm << "," << r.cells
       << "," << r.dofs << "," << r.dt << "," << r.t_acc << "," << r.event << "\n";
}

// Full optimization loop: filter/project -> solve -> responses/sensitivities
// -> (every interval-th iteration) adapt + transfer -> design update.
inline RunResult run_optimization(const ProblemSetup& setup, const RunOptions& ropt = {}) {
  const RunConfig& cfg = setup.cfg;
  RunResult res;
  const bool probe = !std::isnan(ropt.probe_x);
  const bool stress = setup.opt.kind == ProblemKind::compliance_volume_stress;
  const int m = stress ? 2 : 1;

  namespace fs = std::filesystem;
  if (ropt.write_artifacts) {
    fs::create_directories(cfg.output_dir);
    std::ofstream(fs::path(cfg.output_dir) / "config.txt") << echo_config(cfg);
  }

  Forest forest = setup.make_forest();
  FilterParams fparams = setup.filter;
  auto filter = std::make_unique<HelmholtzFilter>(forest, fparams);
  auto state = std::make_unique<StateProblem>(forest, setup.dirichlet, setup.tractions,
                                              setup.material, setup.simp);

  Eigen::VectorXd rho = Eigen::VectorXd::Constant(forest.num_active(), cfg.volume_fraction);
  MmaOptimizer mma(forest.num_active(), m, cfg.move_limit);
  Eigen::VectorXd warm;  // displacement warm start

  NewtonOptions nopt;
  nopt.load_steps = cfg.load_steps;
  nopt.max_iterations = cfg.max_newton;
  nopt.tol_rel = cfg.newton_tol_rel;
  nopt.tol_abs = cfg.newton_tol_abs;

  CriterionConfig ccfg;
  ccfg.kind = cfg.criterion == "cnf"    ? CriterionKind::cnf
              : cfg.criterion == "dens" ? CriterionKind::dens
              : cfg.criterion == "vnm"  ? CriterionKind::vnm
                                        : CriterionKind::none;
  ccfg.c_refine = cfg.c_refine;
  ccfg.c_coarsen = cfg.c_coarsen;
  ccfg.interval = cfg.adapt_interval;
  ccfg.dens_refine_lo = cfg.dens_lo;
  ccfg.dens_refine_hi = cfg.dens_hi;
  ccfg.dens_coarsen_lo = cfg.dens_void;
  ccfg.dens_coarsen_hi = cfg.dens_solid;
  ccfg.validate();

  double obj_scale = 1.0;
  double t_acc = 0.0;
  Eigen::VectorXd rho_tilde, rho_hat;

  try {
    for (int it = 1; it <= cfg.iterations; ++it) {
      auto tic = std::chrono::steady_clock::now();

      const double beta =
          std::min(cfg.beta0 * std::pow(2.0, (it - 1) / cfg.beta_double_every), cfg.beta_max);

      rho_tilde = filter->apply(rho);
      rho_hat = heaviside_project(rho_tilde, beta, cfg.eta);
      state->rho_hat = rho_hat;

      Solution sol;
      try {
        sol = solve_newton(*state, nopt, warm.size() ? &warm : nullptr);
      } catch (const SolverFailure&) {
        // A warm start can be inconsistent after projection sharpening or a
        // mesh change; retry cold with incremental loading.
        NewtonOptions retry = nopt;
        retry.load_steps = std::max(4, nopt.load_steps * 4);
        retry.max_bisections = nopt.max_bisections + 4;
        sol = solve_newton(*state, retry, nullptr);
      }
      warm = sol.u;

      ResponseEvaluator eval(*state, sol);
      const double obj = eval.compliance_value();
      if (it == 1) obj_scale = std::max(std::abs(obj), 1e-12);
      const double gvol = volume_constraint(rho, forest, setup.opt.volume_bound);
      const double gpvm = stress ? eval.pnorm_value(setup.opt.stress_limit,
                                                    setup.opt.pnorm_exponent, cfg.epsilon)
                                 : 0.0;

      // Sensitivities with respect to the raw design, via projection and
      // filter adjoints.
      auto chain_to_raw = [&](const Eigen::VectorXd& d_hat) {
        Eigen::VectorXd d_tilde(d_hat.size());
        for (int k = 0; k < d_hat.size(); ++k)
          d_tilde[k] = d_hat[k] * heaviside_derivative(rho_tilde[k], beta, cfg.eta);
        return filter->adjoint(d_tilde);
      };
      Eigen::VectorXd dC = chain_to_raw(eval.compliance_sensitivity());
      Eigen::VectorXd dG;
      if (stress)
        dG = chain_to_raw(
            eval.pnorm_sensitivity(setup.opt.stress_limit, setup.opt.pnorm_exponent, cfg.epsilon));
      Eigen::VectorXd areas(forest.num_active());
      for (int k = 0; k < forest.num_active(); ++k)
        areas[k] = forest.cell_area(forest.cell(forest.active_cells()[k]));

      // Snapshot before any mesh change so fields and mesh agree.
      const bool snap =
          ropt.write_artifacts && (it % cfg.snapshot_interval == 0 || it == cfg.iterations);
      if (snap) {
        Eigen::VectorXd vm = eval.cell_vm();
        NodalForceField fcnf = configurational_forces(*state, sol, cfg.epsilon);
        Snapshot s;
        const int nc = forest.num_active();
        s.rho.assign(rho.data(), rho.data() + nc);
        s.rho_tilde.assign(rho_tilde.data(), rho_tilde.data() + nc);
        s.rho_hat.assign(rho_hat.data(), rho_hat.data() + nc);
        s.vm.assign(vm.data(), vm.data() + nc);
        static constexpr int kCorners[4] = {0, 2, 6, 8};
        for (int k = 0; k < nc; ++k) {
          const Cell& c = forest.cell(forest.active_cells()[k]);
          s.geom.push_back(
              {forest.cell_x0(c), forest.cell_y0(c), forest.cell_hx(c), forest.cell_hy(c)});
          for (int corner : kCorners) {
            int node = state->dofmap.cell_nodes(k)[corner];
            s.corner_cnf.push_back({fcnf.values[2 * node], fcnf.values[2 * node + 1]});
          }
        }
        fs::path base = fs::path(cfg.output_dir) / detail::snap_name(it);
        write_snapshot(base.string() + ".state", s);
        write_vtu(base.string() + ".vtu", snapshot_mesh(s),
                  {{"density", s.rho_hat}, {"vm", s.vm}}, {{"cnf", s.corner_cnf}});
      }

      // Mesh adaptation.
      int event = 0;
      if (ccfg.kind != CriterionKind::none && it % ccfg.interval == 0 && it < cfg.iterations) {
        std::vector<AdaptFlag> flags;
        switch (ccfg.kind) {
          case CriterionKind::cnf: {
            NodalForceField f = configurational_forces(*state, sol, cfg.epsilon);
            flags = flags_cnf(f, ccfg.c_refine, ccfg.c_coarsen, forest, state->dofmap);
            break;
          }
          case CriterionKind::dens:
            flags = flags_dens(rho_tilde, forest, ccfg);
            break;
          case CriterionKind::vnm: {
            Eigen::VectorXd vm = eval.cell_vm();
            const std::vector<char> bc_cells = applied_bc_cell_mask(*state);
            flags = flags_vnm(vm, ccfg.c_refine, ccfg.c_coarsen, &bc_cells);
            break;
          }
          default:
            break;
        }

        Forest old_forest = forest;
        forest.execute_adaptation(flags);
        if (forest.num_active() != old_forest.num_active() ||
            forest.tree_dump() != old_forest.tree_dump()) {
          event = 1;
          DofMap old_dofmap(old_forest, 2, 2);
          rho = transfer_cell_field(old_forest, forest, rho);
          dC = transfer_cell_gradient(old_forest, forest, dC);
          if (stress) dG = transfer_cell_gradient(old_forest, forest, dG);
          Eigen::VectorXd x1 = transfer_cell_field(old_forest, forest, mma.xold1());
          Eigen::VectorXd x2 = transfer_cell_field(old_forest, forest, mma.xold2());
          Eigen::VectorXd lo = transfer_cell_field(old_forest, forest, mma.lower_asymptote());
          Eigen::VectorXd up = transfer_cell_field(old_forest, forest, mma.upper_asymptote());
          mma.reset_after_transfer(forest.num_active(), x1, x2, lo, up);

          state = std::make_unique<StateProblem>(forest, setup.dirichlet, setup.tractions,
                                                 setup.material, setup.simp);
          warm = transfer_displacement(old_forest, old_dofmap, sol.u, forest, state->dofmap);
          filter = std::make_unique<HelmholtzFilter>(forest, fparams);
          areas.resize(forest.num_active());
          for (int k = 0; k < forest.num_active(); ++k)
            areas[k] = forest.cell_area(forest.cell(forest.active_cells()[k]));
        } else {
          forest = std::move(old_forest);
        }
      }

      // Design update (on the possibly adapted mesh).
      {
        const int n = forest.num_active();
        Eigen::VectorXd df0 = dC / obj_scale;
        Eigen::VectorXd fval(m);
        Eigen::MatrixXd dfdx(m, n);
        fval[0] = volume_constraint(rho, forest, setup.opt.volume_bound) / setup.opt.volume_bound;
        dfdx.row(0) = areas.transpose() / setup.opt.volume_bound;
        if (stress) {
          fval[1] = gpvm - 1.0;
          dfdx.row(1) = dG.transpose();
        }
        rho = mma.update(rho, df0, fval, dfdx);
      }

      double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - tic).count();
      t_acc += dt;
      IterationRecord rec{it,
                          obj,
                          gvol / setup.opt.volume_bound,
                          gpvm,
                          forest.num_active(),
                          state->dofmap.n_dofs(),
                          dt,
                          t_acc,
                          event};
      res.history.push_back(rec);
      res.peak_cells = std::max(res.peak_cells, forest.num_active());
      if (probe) res.probe_levels.push_back(detail::level_at_point(forest, ropt.probe_x, ropt.probe_y));
      if (!ropt.quiet) {
        std::ostringstream line;
        line << "iter " << it << " obj " << obj << " g_vol " << rec.g_vol << " g_pvm " << gpvm
             << " cells " << rec.cells << (event ? " [adapt]" : "");
        std::fputs((line.str() + "\n").c_str(), stdout);
      }
      res.objective = obj;
    }
  } catch (const SolverFailure& e) {
    res.exit_code = 1;
    res.message = e.what();
  } catch (const InvertedElement& e) {
    res.exit_code = 1;
    res.message = e.what();
  }

  res.total_time = t_acc;
  res.forest = std::move(forest);
  res.rho = rho;
  res.rho_tilde = rho_tilde;
  res.rho_hat = rho_hat;

  if (ropt.write_artifacts) {
    write_csv((std::filesystem::path(cfg.output_dir) / "history.csv").string(), res.history);
    std::ofstream sum(std::filesystem::path(cfg.output_dir) / "summary.txt");
    sum << std::setprecision(12);
    sum << "status = " << (res.exit_code == 0 ? "ok" : "failed") << "\n";
    if (!res.message.empty()) sum << "error = " << res.message << "\n";
    sum << "iterations = " << res.history.size() << "\n"
        << "objective = " << res.objective << "\n"
        << "cells = " << (res.forest ? res.forest->num_active() : 0) << "\n"
        << "peak_cells = " << res.peak_cells << "\n"
        << "time = " << res.total_time << "\n";
  }
  return res;
}

}  // namespace topo
