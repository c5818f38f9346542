#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "topo/fem.hpp"
#include "topo/mechanics.hpp"
#include "topo/regularization.hpp"

namespace topo {

// Discrete nodal configurational forces on the active mesh. Hanging-node
// contributions are redistributed to their masters; F_max is taken over
// non-hanging nodes only.
struct NodalForceField {
  Eigen::VectorXd values;       // 2 entries per node, DofMap ordering
  std::vector<char> hanging;    // per node
  double f_max = 0.0;

  Eigen::Vector2d at(int node) const { return {values[2 * node], values[2 * node + 1]}; }
  double magnitude(int node) const { return at(node).norm(); }
};

enum class CriterionKind { cnf, dens, vnm, none };

struct CriterionConfig {
  CriterionKind kind = CriterionKind::cnf;
  double c_refine = 0.25;
  double c_coarsen = 0.01;
  int interval = 5;
  // DENS bands on the filtered density.
  double dens_refine_lo = 0.2, dens_refine_hi = 0.8;
  double dens_coarsen_lo = 0.01, dens_coarsen_hi = 0.99;

  void validate() const {
    if (!(0.0 <= c_coarsen && c_coarsen < c_refine && c_refine <= 1.0))
      throw std::invalid_argument("CriterionConfig: need 0 <= c_c < c_r <= 1");
    if (interval < 1) throw std::invalid_argument("CriterionConfig: interval must be >= 1");
  }
};

// Marks the cells whose support touches an applied boundary condition: any
// cell with a node on a Dirichlet segment or a loaded segment. The traction-
// free format behind the configurational force expression does not hold
// there, and stresses concentrate at the same spots, so both normalizations
// treat these cells as carrying reaction artifacts.
inline std::vector<char> applied_bc_cell_mask(const StateProblem& state) {
  const Forest& forest = *state.forest;
  const DofMap& dm = state.dofmap;
  std::vector<char> on_bc(dm.n_nodes(), 0);
  for (const auto& [dof, line] : state.constraints.lines())
    if (line.entries.empty()) on_bc[dm.dof_node(dof)] = 1;
  constexpr double tol = 1e-9;
  for (const auto& seg : state.neumann)
    for (int n = 0; n < dm.n_nodes(); ++n) {
      const double along = seg.axis == 0 ? dm.node_y(n) : dm.node_x(n);
      const double across = seg.axis == 0 ? dm.node_x(n) : dm.node_y(n);
      if (std::abs(across - seg.coord) < tol && along > seg.lo - tol && along < seg.hi + tol)
        on_bc[n] = 1;
    }
  std::vector<char> mask(forest.num_active(), 0);
  for (int k = 0; k < forest.num_active(); ++k)
    for (int n : dm.cell_nodes(k))
      if (on_bc[n]) { mask[k] = 1; break; }
  return mask;
}

// Assembles F_CNF^I = sum_e int f_eps(rho_hat_e) Sigma(F) grad_X N^i dV
// over the cells adjacent to each node.
inline NodalForceField configurational_forces(const StateProblem& state, const Solution& sol,
                                              double epsilon) {
  if (!sol.converged) throw SolverFailure(0);
  const Forest& forest = *state.forest;
  const DofMap& dm = state.dofmap;
  NodalForceField field;
  field.values = Eigen::VectorXd::Zero(dm.n_dofs());
  field.hanging.assign(dm.n_nodes(), 0);

  Eigen::VectorXd ue(18);
  for (int k = 0; k < forest.num_active(); ++k) {
    const Cell& c = forest.cell(forest.active_cells()[k]);
    const double hx = forest.cell_hx(c), hy = forest.cell_hy(c);
    const double detJ = 0.25 * hx * hy;
    auto dofs = dm.cell_dofs(k);
    for (int i = 0; i < 18; ++i) ue[i] = sol.u[dofs[i]];
    const double fe = eps_relax(state.rho_hat[k], epsilon);
    for (const auto& gy : gauss3())
      for (const auto& gx : gauss3()) {
        ShapeEval<2> sh({gx.xi, gy.xi});
        std::array<Eigen::Vector2d, 9> gp;
        for (int n = 0; n < 9; ++n)
          gp[n] = {sh.grad[n][0] * 2.0 / hx, sh.grad[n][1] * 2.0 / hy};
        Eigen::Matrix2d F = detail::deformation_gradient(ue, gp);
        Eigen::Matrix2d sigma_rho = fe * eshelby_stress(F, state.material);
        const double jw = gx.w * gy.w * detJ;
        for (int n = 0; n < 9; ++n) {
          Eigen::Vector2d contrib = sigma_rho * gp[n] * jw;
          field.values[dofs[2 * n]] += contrib[0];
          field.values[dofs[2 * n + 1]] += contrib[1];
        }
      }
  }

  // Redistribute hanging contributions to master nodes.
  for (const auto& [slave, line] : state.hanging.lines()) {
    for (auto& [m, w] : line.entries) field.values[m] += w * field.values[slave];
    field.values[slave] = 0.0;
    field.hanging[dm.dof_node(slave)] = 1;
  }

  // F_max normalizes the thresholds. Nodes of cells carrying applied-BC
  // reaction artifacts are skipped when taking the maximum; they can still
  // trigger refinement through the per-cell threshold test.
  const std::vector<char> bc_cells = applied_bc_cell_mask(state);
  std::vector<char> contaminated(dm.n_nodes(), 0);
  for (int k = 0; k < forest.num_active(); ++k)
    if (bc_cells[k])
      for (int n : dm.cell_nodes(k)) contaminated[n] = 1;

  field.f_max = 0.0;
  for (int n = 0; n < dm.n_nodes(); ++n)
    if (!field.hanging[n] && !contaminated[n])
      field.f_max = std::max(field.f_max, field.magnitude(n));
  return field;
}

// Cell flags from nodal force magnitudes (Algorithm: refine if any corner
// vertex meets the refinement threshold, coarsen only if all four do not
// exceed the coarsening threshold; refine has priority). One addition to
// the vertex tests: a cell containing a node at the force maximum itself is
// always refined, whichever of its nine nodes carries it. With biquadratic
// elements the maximum can sit on an edge midside (a boundary re-entrant
// corner produces one), and vertex tests alone would then freeze the mesh
// with the largest force — the very quantity normalizing the thresholds —
// unresolved.
inline std::vector<AdaptFlag> flags_cnf(const NodalForceField& field, double c_r, double c_c,
                                        const Forest& forest, const DofMap& dofmap) {
  std::vector<AdaptFlag> flags(forest.num_active(), AdaptFlag::keep);
  if (field.f_max <= 0.0) return flags;  // fully unloaded: keep everything
  static constexpr int kCorners[4] = {0, 2, 6, 8};
  for (int k = 0; k < forest.num_active(); ++k) {
    bool refine = false;
    int coarsen_count = 0;
    for (int corner : kCorners) {
      double f = field.magnitude(dofmap.cell_nodes(k)[corner]);
      if (f >= c_r * field.f_max) refine = true;
      else if (f <= c_c * field.f_max) ++coarsen_count;
    }
    if (!refine)
      for (int node : dofmap.cell_nodes(k))
        if (field.magnitude(node) >= field.f_max) { refine = true; break; }
    if (refine) flags[k] = AdaptFlag::refine;
    else if (coarsen_count == 4) flags[k] = AdaptFlag::coarsen;
  }
  return flags;
}

inline std::vector<AdaptFlag> flags_dens(const Eigen::VectorXd& rho_tilde, const Forest& forest,
                                         const CriterionConfig& cfg = {}) {
  std::vector<AdaptFlag> flags(forest.num_active(), AdaptFlag::keep);
  for (int k = 0; k < forest.num_active(); ++k) {
    double r = rho_tilde[k];
    if (r >= cfg.dens_refine_lo && r <= cfg.dens_refine_hi) flags[k] = AdaptFlag::refine;
    else if (r <= cfg.dens_coarsen_lo || r >= cfg.dens_coarsen_hi) flags[k] = AdaptFlag::coarsen;
  }
  return flags;
}

// `exclude_from_max`, when given, drops the flagged cells (applied-BC stress
// concentrations) from the normalizing maximum; they still take part in the
// per-cell threshold tests.
inline std::vector<AdaptFlag> flags_vnm(const Eigen::VectorXd& vm_per_cell, double c_r,
                                        double c_c,
                                        const std::vector<char>* exclude_from_max = nullptr) {
  const int n = static_cast<int>(vm_per_cell.size());
  std::vector<AdaptFlag> flags(n, AdaptFlag::keep);
  double vm_max = 0.0;
  for (int k = 0; k < n; ++k)
    if (!exclude_from_max || !(*exclude_from_max)[k])
      vm_max = std::max(vm_max, vm_per_cell[k]);
  if (vm_max <= 0.0) return flags;
  for (int k = 0; k < n; ++k) {
    if (vm_per_cell[k] >= c_r * vm_max) flags[k] = AdaptFlag::refine;
    else if (vm_per_cell[k] <= c_c * vm_max) flags[k] = AdaptFlag::coarsen;
  }
  return flags;
}

// -------------------------------------------------------------------------
// Field transfer across one adaptation
// -------------------------------------------------------------------------

// Per-cell transfer rule: children inherit the parent value on refinement,
// a coarsened parent gets the (equal-area) mean of its former children.
// Conserves area-weighted totals exactly.
inline Eigen::VectorXd transfer_cell_field(const Forest& old_forest, const Forest& new_forest,
                                           const Eigen::VectorXd& values_old) {
  std::unordered_map<std::string, double> by_key;
  for (int k = 0; k < old_forest.num_active(); ++k)
    by_key[old_forest.cell_key(old_forest.active_cells()[k])] = values_old[k];

  Eigen::VectorXd out(new_forest.num_active());
  for (int k = 0; k < new_forest.num_active(); ++k) {
    std::string key = new_forest.cell_key(new_forest.active_cells()[k]);
    auto it = by_key.find(key);
    if (it != by_key.end()) {
      out[k] = it->second;  // unchanged cell
      continue;
    }
    // Refined: parent key is this key minus the trailing quadrant digit.
    if (key.find(':') != std::string::npos) {
      std::string parent = key.substr(0, key.size() - 1);
      if (parent.back() == ':') parent.pop_back();
      auto pit = by_key.find(parent);
      if (pit != by_key.end()) {
        out[k] = pit->second;
        continue;
      }
    }
    // Coarsened: mean over the four former children.
    double sum = 0.0;
    int cnt = 0;
    std::string sep = key.find(':') == std::string::npos ? ":" : "";
    for (int q = 0; q < 4; ++q) {
      auto cit = by_key.find(key + sep + char('0' + q));
      if (cit != by_key.end()) {
        sum += cit->second;
        ++cnt;
      }
    }
    if (cnt != 4)
      throw std::runtime_error("transfer_cell_field: forests not related by one adaptation");
    out[k] = 0.25 * sum;
  }
  return out;
}

// Transfer rule for gradients with respect to per-cell design variables:
// transporting the gradient *density* (gradient / cell area) with the value
// rule splits a refined cell's entry evenly over its children and sums the
// children's entries on coarsening.
inline Eigen::VectorXd transfer_cell_gradient(const Forest& old_forest, const Forest& new_forest,
                                              const Eigen::VectorXd& grad_old) {
  Eigen::VectorXd dens(grad_old.size());
  for (int k = 0; k < old_forest.num_active(); ++k)
    dens[k] = grad_old[k] / old_forest.cell_area(old_forest.cell(old_forest.active_cells()[k]));
  Eigen::VectorXd moved = transfer_cell_field(old_forest, new_forest, dens);
  for (int k = 0; k < new_forest.num_active(); ++k)
    moved[k] *= new_forest.cell_area(new_forest.cell(new_forest.active_cells()[k]));
  return moved;
}

// Displacement warm start: evaluates the old FE field at every new node
// (biquadratic interpolation on refinement, injection on coarsening).
inline Eigen::VectorXd transfer_displacement(const Forest& old_forest, const DofMap& old_dofmap,
                                             const Eigen::VectorXd& u_old,
                                             const Forest& new_forest,
                                             const DofMap& new_dofmap) {
  Eigen::VectorXd u_new = Eigen::VectorXd::Zero(new_dofmap.n_dofs());
  std::unordered_map<int, int> active_pos;
  active_pos.reserve(old_forest.num_active());
  for (int k = 0; k < old_forest.num_active(); ++k) active_pos[old_forest.active_cells()[k]] = k;
  for (int n = 0; n < new_dofmap.n_nodes(); ++n) {
    // Locate the old active cell containing this node (clamped to the domain).
    std::int64_t px = new_dofmap.node_lat_x(n) / 2;
    std::int64_t py = new_dofmap.node_lat_y(n) / 2;
    px = std::min(px, old_forest.lattice_nx() - 1);
    py = std::min(py, old_forest.lattice_ny() - 1);
    int ci = old_forest.active_cell_at(px, py);
    if (ci < 0) continue;
    const Cell& c = old_forest.cell(ci);
    double xi = (0.5 * double(new_dofmap.node_lat_x(n)) - double(c.ix)) / double(c.size) * 2.0 - 1.0;
    double eta = (0.5 * double(new_dofmap.node_lat_y(n)) - double(c.iy)) / double(c.size) * 2.0 - 1.0;
    xi = std::clamp(xi, -1.0, 1.0);
    eta = std::clamp(eta, -1.0, 1.0);
    auto kit = active_pos.find(ci);
    if (kit == active_pos.end()) continue;
    int k_old = kit->second;
    ShapeEval<2> sh({xi, eta});
    Eigen::Vector2d val = Eigen::Vector2d::Zero();
    for (int a = 0; a < 9; ++a) {
      int node = old_dofmap.cell_nodes(k_old)[a];
      val[0] += sh.value[a] * u_old[old_dofmap.dof(node, 0)];
      val[1] += sh.value[a] * u_old[old_dofmap.dof(node, 1)];
    }
    u_new[new_dofmap.dof(n, 0)] = val[0];
    u_new[new_dofmap.dof(n, 1)] = val[1];
  }
  return u_new;
}

}  // namespace topo
