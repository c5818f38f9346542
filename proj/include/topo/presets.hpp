#pragma once

#include <cmath>
#include <vector>

#include "topo/config.hpp"
#include "topo/constraints.hpp"
#include "topo/fem.hpp"
#include "topo/mesh.hpp"
#include "topo/optimization.hpp"
#include "topo/regularization.hpp"

namespace topo {

// Everything needed to assemble a run: mesh factory, boundary conditions,
// and the optimization problem definition.
struct ProblemSetup {
  RunConfig cfg;
  std::vector<DirichletSpec> dirichlet;
  std::vector<BoundarySegment> tractions;
  MaterialParams material;
  SimpParams simp;
  FilterParams filter;
  OptProblem opt;
  double domain_area = 0.0;

  Forest make_forest() const {
    Forest forest(cfg.base_nx, cfg.base_ny, cfg.width, cfg.height, cfg.max_level);
    if (cfg.preset == "ubeam") {
      const double cx = cfg.cut_x, cy = cfg.cut_y;
      forest.remove_base_cells([cx, cy](double x, double y) { return x > cx && y > cy; });
    }
    if (cfg.init_level > 0) forest.refine_uniform(cfg.init_level);
    return forest;
  }
};

namespace detail {
constexpr double kGeomTol = 1e-9;

// The Robin boundary term of the density filter mimics void outside the
// domain. That is wrong wherever the exterior is not void: behind supports
// (solid continuation), on loaded faces (the traction must enter through
// material), and across symmetry planes (mirror continuation). Build a
// predicate that keeps the Robin term only on genuinely free faces.
inline std::function<bool(const Eigen::Vector2d&, const Eigen::Vector2d&)> robin_on_free_faces(
    const std::vector<DirichletSpec>& dirichlet, const std::vector<BoundarySegment>& tractions) {
  return [dirichlet, tractions](const Eigen::Vector2d& mid, const Eigen::Vector2d&) {
    for (const auto& d : dirichlet)
      if (d.where(mid.x(), mid.y())) return false;
    for (const auto& t : tractions) {
      const double along = t.axis == 0 ? mid.y() : mid.x();
      const double across = t.axis == 0 ? mid.x() : mid.y();
      if (std::abs(across - t.coord) < kGeomTol && along > t.lo - kGeomTol &&
          along < t.hi + kGeomTol)
        return false;
    }
    return true;
  };
}
}  // namespace detail

// Cantilever: left edge clamped, downward load on a short patch centred on
// the right edge.
inline ProblemSetup preset_cantilever(const RunConfig& cfg) {
  ProblemSetup s;
  s.cfg = cfg;
  s.domain_area = cfg.width * cfg.height;

  DirichletSpec clamp;
  clamp.where = [](double x, double) { return std::abs(x) < detail::kGeomTol; };
  s.dirichlet.push_back(clamp);

  BoundarySegment load;
  load.axis = 0;  // vertical line
  load.coord = cfg.width;
  load.lo = 0.5 * cfg.height - 0.5 * cfg.load_patch;
  load.hi = 0.5 * cfg.height + 0.5 * cfg.load_patch;
  load.traction = {0.0, -cfg.load_magnitude};
  s.tractions.push_back(load);

  s.material = {cfg.lambda, cfg.mu};
  s.simp = {cfg.simp_exponent, cfg.simp_rho_min};

  s.filter.radius = cfg.filter_radius;
  s.filter.boundary_coeff = cfg.robin_coeff;
  s.filter.beta = cfg.beta0;
  s.filter.eta = cfg.eta;
  s.filter.epsilon = cfg.epsilon;
  s.filter.robin_on = detail::robin_on_free_faces(s.dirichlet, s.tractions);

  s.opt.kind = ProblemKind::compliance_volume;
  s.opt.volume_bound = cfg.volume_fraction * s.domain_area;
  s.opt.move_limit = cfg.move_limit;
  s.opt.iterations = cfg.iterations;
  return s;
}

// Half of a U-shaped frame, modelled as an L: vertical leg clamped at the
// top, symmetry rollers on the right edge of the base strip, downward load
// on the bottom face next to the symmetry plane.
inline ProblemSetup preset_ubeam(const RunConfig& cfg) {
  ProblemSetup s;
  s.cfg = cfg;
  const double cell_a = (cfg.width / cfg.base_nx) * (cfg.height / cfg.base_ny);
  // Area of the kept L-shape: count base cells the cutout predicate keeps.
  int kept = 0;
  const double hx = cfg.width / cfg.base_nx, hy = cfg.height / cfg.base_ny;
  for (int j = 0; j < cfg.base_ny; ++j)
    for (int i = 0; i < cfg.base_nx; ++i) {
      double x = (i + 0.5) * hx, y = (j + 0.5) * hy;
      if (!(x > cfg.cut_x && y > cfg.cut_y)) ++kept;
    }
  s.domain_area = kept * cell_a;

  DirichletSpec clamp;
  const double h = cfg.height;
  clamp.where = [h](double, double y) { return std::abs(y - h) < detail::kGeomTol; };
  s.dirichlet.push_back(clamp);

  DirichletSpec sym;
  const double w = cfg.width;
  sym.where = [w](double x, double) { return std::abs(x - w) < detail::kGeomTol; };
  sym.fix_x = true;
  sym.fix_y = false;
  s.dirichlet.push_back(sym);

  BoundarySegment load;
  load.axis = 1;  // horizontal line
  load.coord = 0.0;
  load.lo = cfg.width - cfg.load_patch;
  load.hi = cfg.width;
  load.traction = {0.0, -cfg.load_magnitude};
  s.tractions.push_back(load);

  s.material = {cfg.lambda, cfg.mu};
  s.simp = {cfg.simp_exponent, cfg.simp_rho_min};

  s.filter.radius = cfg.filter_radius;
  s.filter.boundary_coeff = cfg.robin_coeff;
  s.filter.beta = cfg.beta0;
  s.filter.eta = cfg.eta;
  s.filter.epsilon = cfg.epsilon;
  // Covers the symmetry plane (a Dirichlet spec), the clamp, and the load.
  s.filter.robin_on = detail::robin_on_free_faces(s.dirichlet, s.tractions);

  s.opt.kind = ProblemKind::compliance_volume_stress;
  s.opt.volume_bound = cfg.volume_fraction * s.domain_area;
  s.opt.stress_limit = cfg.stress_limit;
  s.opt.pnorm_exponent = cfg.pnorm_p;
  s.opt.move_limit = cfg.move_limit;
  s.opt.iterations = cfg.iterations;
  return s;
}

inline ProblemSetup make_setup(const RunConfig& cfg) {
  if (cfg.preset == "cantilever") return preset_cantilever(cfg);
  if (cfg.preset == "ubeam") return preset_ubeam(cfg);
  throw ConfigError("unknown preset: " + cfg.preset);
}

}  // namespace topo
