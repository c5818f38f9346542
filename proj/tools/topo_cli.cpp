#include <CLI11.hpp>
#include <cstdio>
#include <exception>
#include <string>

#include "topo/config.hpp"
#include "topo/presets.hpp"
#include "topo/runner.hpp"
#include "topo/vtk.hpp"

namespace {

int cmd_check(const std::string& config_path) {
  topo::RunConfig cfg = topo::load_config(config_path);
  topo::ProblemSetup setup = topo::make_setup(cfg);
  topo::Forest forest = setup.make_forest();
  std::fputs(topo::echo_config(cfg).c_str(), stdout);
  std::printf("# cells = %d\n", forest.num_active());
  topo::DofMap dm(forest, 2, 2);
  std::printf("# dofs = %d\n", dm.n_dofs());
  return 0;
}

int cmd_run(const std::string& config_path, bool quiet) {
  topo::RunConfig cfg = topo::load_config(config_path);
  topo::ProblemSetup setup = topo::make_setup(cfg);
  topo::RunOptions ropt;
  ropt.quiet = quiet;
  topo::RunResult res = topo::run_optimization(setup, ropt);
  if (res.exit_code != 0) std::fprintf(stderr, "run failed: %s\n", res.message.c_str());
  return res.exit_code;
}

int cmd_export(const std::string& snapshot_path, const std::string& field,
               const std::string& out_path) {
  topo::Snapshot s = topo::read_snapshot(snapshot_path);
  std::map<std::string, std::vector<double>> cdata;
  std::map<std::string, std::vector<std::array<double, 2>>> pdata;
  if (field == "density")
    cdata["density"] = s.rho_hat;
  else if (field == "vm")
    cdata["vm"] = s.vm;
  else if (field == "cnf")
    pdata["cnf"] = s.corner_cnf;
  else
    throw topo::ConfigError("unknown field: " + field);
  std::string out = out_path;
  if (out.empty()) {
    out = snapshot_path;
    auto dot = out.rfind(".state");
    if (dot != std::string::npos) out = out.substr(0, dot);
    out += "_" + field + ".vtu";
  }
  topo::write_vtu(out, topo::snapshot_mesh(s), cdata, pdata);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adaptive topology optimization driver"};
  app.require_subcommand(1);

  std::string config_path, snapshot_path, field = "density", out_path;
  bool verbose = false;

  auto* run = app.add_subcommand("run", "run an optimization described by a config file");
  run->add_option("config", config_path, "config file")->required();
  run->add_flag("-v,--verbose", verbose, "print per-iteration progress");

  auto* check = app.add_subcommand("check", "validate a config and echo the resolved values");
  check->add_option("config", config_path, "config file")->required();

  auto* exp = app.add_subcommand("export", "convert a snapshot to a VTU file");
  exp->add_option("snapshot", snapshot_path, "snapshot (.state) file")->required();
  exp->add_option("--field", field, "density | vm | cnf");
  exp->add_option("-o,--output", out_path, "output path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, !verbose);
    if (check->parsed()) return cmd_check(config_path);
    if (exp->parsed()) return cmd_export(snapshot_path, field, out_path);
  } catch (const topo::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
