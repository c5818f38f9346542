#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "topo/config.hpp"
#include "topo/presets.hpp"
#include "topo/runner.hpp"
#include "topo/vtk.hpp"

using namespace topo;
namespace fs = std::filesystem;

namespace {

std::string write_temp(const std::string& name, const std::string& body) {
  fs::path p = fs::temp_directory_path() / name;
  std::ofstream(p) << body;
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// A desk-scale cantilever used by the run tests below.
RunConfig tiny_cantilever() {
  RunConfig cfg = load_config(write_temp("tiny.cfg",
                                         "problem.preset = cantilever\n"
                                         "problem.iterations = 6\n"
                                         "mesh.base_nx = 8\n"
                                         "mesh.base_ny = 4\n"
                                         "mesh.max_level = 2\n"
                                         "adapt.interval = 2\n"
                                         "output.snapshot_interval = 3\n"));
  return cfg;
}

}  // namespace

TEST_CASE("config defaults per preset") {
  RunConfig c = load_config(write_temp("c1.cfg", "problem.preset = cantilever\n"));
  CHECK(c.width == 2.0);
  CHECK(c.height == 1.0);
  CHECK(c.base_nx == 20);
  CHECK(c.base_ny == 10);
  CHECK(c.max_level == 4);
  CHECK(c.filter_radius == 0.1);
  CHECK(c.load_magnitude == 0.001);
  CHECK(c.lambda == 2.66);
  CHECK(c.mu == 0.71);
  CHECK(c.c_refine == 0.25);
  CHECK(c.c_coarsen == 0.01);

  RunConfig u = load_config(write_temp("c2.cfg", "problem.preset = ubeam\n"));
  CHECK(u.width == 1.0);
  CHECK(u.height == 2.0);
  CHECK(u.init_level == 1);
  CHECK(u.max_level == 4);
  CHECK(u.filter_radius == 0.2);
  CHECK(u.load_magnitude == 0.02);
  CHECK(u.stress_limit == 0.5);
  CHECK(u.pnorm_p == 8.0);
}

TEST_CASE("config overrides and error reporting") {
  RunConfig c = load_config(write_temp("c3.cfg",
                                       "problem.preset = cantilever\n"
                                       "filter.radius = 0.07  # inline comment\n"
                                       "problem.iterations = 3\n"));
  CHECK(c.filter_radius == 0.07);
  CHECK(c.iterations == 3);

  CHECK_THROWS_AS(load_config(write_temp("c4.cfg", "")), ConfigError);
  CHECK_THROWS_AS(load_config(write_temp("c5.cfg", "problem.iterations = 3\n")), ConfigError);
  CHECK_THROWS_AS(load_config(write_temp("c6.cfg",
                                         "problem.preset = cantilever\n"
                                         "problem.bogus = 1\n")),
                  ConfigError);
  CHECK_THROWS_AS(load_config(write_temp("c7.cfg",
                                         "problem.preset = cantilever\n"
                                         "problem.iterations = many\n")),
                  ConfigError);
  CHECK_THROWS_AS(load_config(write_temp("c8.cfg",
                                         "problem.preset = cantilever\n"
                                         "filter.radius = -0.1\n")),
                  ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/path.cfg"), ConfigError);
}

TEST_CASE("echoed config round trips") {
  RunConfig c = load_config(write_temp("c9.cfg",
                                       "problem.preset = ubeam\n"
                                       "adapt.criterion = vnm\n"
                                       "problem.volume_fraction = 0.42\n"));
  std::string echoed = echo_config(c);
  RunConfig d = load_config(write_temp("c10.cfg", echoed));
  CHECK(echo_config(d) == echoed);
  CHECK(d.criterion == "vnm");
  CHECK(d.volume_fraction == 0.42);
}

TEST_CASE("cantilever setup geometry and dof counts") {
  RunConfig cfg = load_config(write_temp("c11.cfg", "problem.preset = cantilever\n"));
  ProblemSetup s = make_setup(cfg);
  Forest f = s.make_forest();
  CHECK(f.num_active() == 200);
  DofMap dm(f, 2, 2);
  CHECK(dm.n_dofs() == (2 * 20 + 1) * (2 * 10 + 1) * 2);

  // Clamped edge: 21 nodes, both components.
  StateProblem state(f, s.dirichlet, s.tractions, s.material, s.simp);
  int dirichlet_lines = 0;
  for (const auto& [dof, line] : state.constraints.lines())
    if (line.entries.empty()) ++dirichlet_lines;
  CHECK(dirichlet_lines == 21 * 2);

  // Load resultant is traction magnitude times patch width, mesh-independent.
  Eigen::VectorXd fe = external_force(state);
  double fy = 0.0;
  for (int n = 0; n < dm.n_nodes(); ++n) fy += fe[dm.dof(n, 1)];
  CHECK(fy == Catch::Approx(-cfg.load_magnitude * cfg.load_patch).epsilon(1e-12));
  CHECK(s.opt.volume_bound == Catch::Approx(0.5 * 2.0));
}

TEST_CASE("filter boundary term stays off supports, loads, and symmetry planes") {
  RunConfig cant = load_config(write_temp("c13a.cfg", "problem.preset = cantilever\n"));
  ProblemSetup sc = make_setup(cant);
  Eigen::Vector2d n{0, 0};  // normal unused by the predicate
  CHECK_FALSE(sc.filter.robin_on({0.0, 0.7}, n));                    // clamp
  CHECK_FALSE(sc.filter.robin_on({cant.width, 0.5 * cant.height}, n));  // load patch
  CHECK(sc.filter.robin_on({cant.width, 0.1}, n));   // free part of the right edge
  CHECK(sc.filter.robin_on({0.7, 0.0}, n));          // free bottom edge

  RunConfig ub = load_config(write_temp("c13b.cfg", "problem.preset = ubeam\n"));
  ProblemSetup su = make_setup(ub);
  CHECK_FALSE(su.filter.robin_on({0.3, ub.height}, n));             // clamp
  CHECK_FALSE(su.filter.robin_on({ub.width, 0.25}, n));             // symmetry plane
  CHECK_FALSE(su.filter.robin_on({ub.width - 0.05, 0.0}, n));       // load patch
  CHECK(su.filter.robin_on({0.3, 0.0}, n));          // free part of the bottom edge
  CHECK(su.filter.robin_on({ub.cut_x, 1.2}, n));     // cutout edge
}

TEST_CASE("ubeam setup removes the cutout and keeps the corner on the boundary") {
  RunConfig cfg = load_config(write_temp("c12.cfg", "problem.preset = ubeam\n"));
  ProblemSetup s = make_setup(cfg);
  Forest f = s.make_forest();
  // 200 base cells - 75 removed, uniformly refined once.
  CHECK(f.num_active() == 125 * 4);
  CHECK(s.domain_area == Catch::Approx(2.0 - 0.75));
  // The cell just left of the re-entrant corner sees the hole on its right.
  std::int64_t px = std::int64_t(0.45 / f.dx_unit());
  std::int64_t py = std::int64_t(0.55 / f.dy_unit());
  int ci = f.active_cell_at(px, py);
  REQUIRE(ci >= 0);
  CHECK(f.on_domain_boundary(ci, kRight));
  // And the cell under the cutout sees it above.
  px = std::int64_t(0.55 / f.dx_unit());
  py = std::int64_t(0.45 / f.dy_unit());
  ci = f.active_cell_at(px, py);
  REQUIRE(ci >= 0);
  CHECK(f.on_domain_boundary(ci, kTop));
  CHECK(s.opt.kind == ProblemKind::compliance_volume_stress);
}

TEST_CASE("snapshot round trip") {
  Snapshot s;
  s.geom = {{0.0, 0.0, 0.5, 0.5}, {0.5, 0.0, 0.5, 0.5}};
  s.rho = {0.2, 0.8};
  s.rho_tilde = {0.25, 0.75};
  s.rho_hat = {0.1, 0.9};
  s.vm = {0.01, 0.02};
  for (int i = 0; i < 8; ++i) s.corner_cnf.push_back({0.1 * i, -0.1 * i});
  fs::path p = fs::temp_directory_path() / "snap_test.state";
  write_snapshot(p.string(), s);
  Snapshot r = read_snapshot(p.string());
  REQUIRE(r.geom.size() == 2);
  CHECK(r.rho_hat[1] == 0.9);
  CHECK(r.corner_cnf[7][1] == -0.1 * 7);
  CHECK_THROWS(read_snapshot(write_temp("bad.state", "not a snapshot\n")));
}

TEST_CASE("VTU writer emits a parseable unstructured grid") {
  Forest f(2, 2, 1.0, 1.0, 2);
  VtkMesh m = vtk_mesh(f);
  fs::path p = fs::temp_directory_path() / "mesh_test.vtu";
  std::map<std::string, std::vector<double>> cd{{"density", {0.1, 0.2, 0.3, 0.4}}};
  write_vtu(p.string(), m, cd);
  std::string body = slurp(p);
  CHECK(body.find("<VTKFile type=\"UnstructuredGrid\"") != std::string::npos);
  CHECK(body.find("NumberOfPoints=\"16\"") != std::string::npos);
  CHECK(body.find("NumberOfCells=\"4\"") != std::string::npos);
  CHECK(body.find("Name=\"density\"") != std::string::npos);
  // Balanced tags.
  for (const char* tag : {"VTKFile", "UnstructuredGrid", "Piece", "Points", "Cells", "CellData"}) {
    std::string open = std::string("<") + tag, close = std::string("</") + tag + ">";
    CHECK(body.find(open) != std::string::npos);
    CHECK(body.find(close) != std::string::npos);
  }
  CHECK_THROWS(write_vtu(p.string(), m, {{"short", {1.0}}}));
}

TEST_CASE("a short optimization run produces the full artifact set") {
  RunConfig cfg = tiny_cantilever();
  fs::path out = fs::temp_directory_path() / "topo_run_artifacts";
  fs::remove_all(out);
  cfg.output_dir = out.string();
  RunResult res = run_optimization(make_setup(cfg));
  REQUIRE(res.exit_code == 0);
  REQUIRE(res.history.size() == 6);
  CHECK(fs::exists(out / "config.txt"));
  CHECK(fs::exists(out / "history.csv"));
  CHECK(fs::exists(out / "summary.txt"));
  CHECK(fs::exists(out / "snap_0003.state"));
  CHECK(fs::exists(out / "snap_0006.vtu"));

  std::ifstream csv(out / "history.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "iter,objective,g_vol,g_pvm,cells,dofs,dt,t_acc,event");
  int rows = 0;
  std::string line;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 6);

  // Adaptation events only on multiples of the interval.
  for (const auto& r : res.history)
    if (r.event) CHECK(r.iter % cfg.adapt_interval == 0);

  // Snapshots can be re-exported to all three field types.
  Snapshot snap = read_snapshot((out / "snap_0006.state").string());
  CHECK(snap.geom.size() == std::size_t(res.history.back().cells));
  write_vtu((out / "re_density.vtu").string(), snapshot_mesh(snap), {{"density", snap.rho_hat}});
  write_vtu((out / "re_cnf.vtu").string(), snapshot_mesh(snap), {}, {{"cnf", snap.corner_cnf}});
  CHECK(fs::exists(out / "re_density.vtu"));
}

TEST_CASE("repeated runs are bitwise deterministic") {
  RunConfig cfg = tiny_cantilever();
  cfg.iterations = 4;
  fs::path out1 = fs::temp_directory_path() / "topo_det_1";
  fs::path out2 = fs::temp_directory_path() / "topo_det_2";
  fs::remove_all(out1);
  fs::remove_all(out2);
  cfg.output_dir = out1.string();
  RunResult a = run_optimization(make_setup(cfg));
  cfg.output_dir = out2.string();
  RunResult b = run_optimization(make_setup(cfg));
  REQUIRE(a.exit_code == 0);
  REQUIRE(b.exit_code == 0);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].objective == b.history[i].objective);  // bitwise
    CHECK(a.history[i].cells == b.history[i].cells);
  }
}

TEST_CASE("interval beyond the budget never adapts") {
  RunConfig cfg = tiny_cantilever();
  cfg.iterations = 3;
  cfg.adapt_interval = 100;
  cfg.output_dir = (fs::temp_directory_path() / "topo_noadapt").string();
  RunResult res = run_optimization(make_setup(cfg));
  REQUIRE(res.exit_code == 0);
  for (const auto& r : res.history) {
    CHECK(r.event == 0);
    CHECK(r.cells == 32);
  }
}

#ifdef TOPO_CLI_PATH
TEST_CASE("command line interface exit codes") {
  std::string cli = TOPO_CLI_PATH;
  std::string good = write_temp("cli_good.cfg", "problem.preset = cantilever\n");
  std::string bad = write_temp("cli_bad.cfg", "problem.preset = cantilever\nnope = 1\n");
  auto run = [](const std::string& cmd) {
    int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
    return WEXITSTATUS(rc);
  };
  CHECK(run(cli + " check " + good) == 0);
  CHECK(run(cli + " check " + bad) == 2);
  CHECK(run(cli + " check /no/such/file.cfg") == 2);
  CHECK(run(cli + " export /no/such/file.state") == 1);

  // run + export round trip on a tiny problem.
  fs::path out = fs::temp_directory_path() / "topo_cli_run";
  fs::remove_all(out);
  std::string runcfg = write_temp("cli_run.cfg",
                                  "problem.preset = cantilever\n"
                                  "problem.iterations = 2\n"
                                  "mesh.base_nx = 4\nmesh.base_ny = 2\nmesh.max_level = 1\n"
                                  "output.snapshot_interval = 2\n"
                                  "output.dir = " + (out / "o").string() + "\n");
  CHECK(run(cli + " run " + runcfg) == 0);
  CHECK(fs::exists(out / "o" / "snap_0002.state"));
  CHECK(run(cli + " export " + (out / "o" / "snap_0002.state").string() + " --field vm") == 0);
  CHECK(fs::exists(out / "o" / "snap_0002_vm.vtu"));
  CHECK(run(cli + " export " + (out / "o" / "snap_0002.state").string() + " --field bogus") == 2);
}
#endif
