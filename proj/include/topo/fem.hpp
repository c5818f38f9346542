#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "topo/constraints.hpp"
#include "topo/dofmap.hpp"
#include "topo/mechanics.hpp"
#include "topo/mesh.hpp"

namespace topo {

// -------------------------------------------------------------------------
// Reference element
// -------------------------------------------------------------------------

// 1D Lagrange basis on {-1, 0, 1} (degree 2) or {-1, 1} (degree 1).
inline void lagrange_1d(int degree, double xi, double* val, double* grad) {
  if (degree == 1) {
    val[0] = 0.5 * (1.0 - xi); val[1] = 0.5 * (1.0 + xi);
    grad[0] = -0.5;            grad[1] = 0.5;
  } else {
    val[0] = 0.5 * xi * (xi - 1.0);
    val[1] = 1.0 - xi * xi;
    val[2] = 0.5 * xi * (xi + 1.0);
    grad[0] = xi - 0.5;
    grad[1] = -2.0 * xi;
    grad[2] = xi + 0.5;
  }
}

// Tensor-product basis; nodes ordered row-major in (i, j) as in DofMap.
template <int Degree>
struct ShapeEval {
  static constexpr int kNodes = (Degree + 1) * (Degree + 1);
  std::array<double, kNodes> value;
  std::array<Eigen::Vector2d, kNodes> grad;  // reference gradients

  explicit ShapeEval(const Eigen::Vector2d& xi) {
    double vx[3], gx[3], vy[3], gy[3];
    lagrange_1d(Degree, xi[0], vx, gx);
    lagrange_1d(Degree, xi[1], vy, gy);
    for (int j = 0; j <= Degree; ++j)
      for (int i = 0; i <= Degree; ++i) {
        int n = j * (Degree + 1) + i;
        value[n] = vx[i] * vy[j];
        grad[n] = {gx[i] * vy[j], vx[i] * gy[j]};
      }
  }
};

struct GaussPoint1d {
  double xi, w;
};

inline const std::array<GaussPoint1d, 3>& gauss3() {
  static const std::array<GaussPoint1d, 3> pts = {{
      {-std::sqrt(3.0 / 5.0), 5.0 / 9.0},
      {0.0, 8.0 / 9.0},
      {std::sqrt(3.0 / 5.0), 5.0 / 9.0},
  }};
  return pts;
}

inline const std::array<GaussPoint1d, 2>& gauss2() {
  static const std::array<GaussPoint1d, 2> pts = {{
      {-1.0 / std::sqrt(3.0), 1.0},
      {1.0 / std::sqrt(3.0), 1.0},
  }};
  return pts;
}

// -------------------------------------------------------------------------
// Problem description
// -------------------------------------------------------------------------

// Constant traction on an axis-aligned boundary segment. axis = 0 means the
// segment lies on the vertical line x = coord with span [lo, hi] in y.
struct BoundarySegment {
  int axis = 0;
  double coord = 0.0;
  double lo = 0.0, hi = 0.0;
  Eigen::Vector2d traction = Eigen::Vector2d::Zero();
};

struct SimpParams {
  double exponent = 3.0;
  double rho_min = 1e-6;

  double stiffness(double rho_hat) const {
    return rho_min + (1.0 - rho_min) * std::pow(rho_hat, exponent);
  }
  double stiffness_derivative(double rho_hat) const {
    return (1.0 - rho_min) * exponent * std::pow(rho_hat, exponent - 1.0);
  }
};

// Nonlinear elastic state problem on the active mesh: biquadratic elements,
// SIMP-scaled Neo-Hookean material, hanging-node plus Dirichlet constraints.
struct StateProblem {
  const Forest* forest = nullptr;
  DofMap dofmap;                  // degree 2, 2 components
  ConstraintSet hanging;          // hanging-node constraints only
  ConstraintSet constraints;      // hanging + Dirichlet, closed
  std::vector<BoundarySegment> neumann;
  Eigen::VectorXd rho_hat;        // per active cell
  MaterialParams material;
  SimpParams simp;

  StateProblem() = default;

  StateProblem(const Forest& f, const std::vector<DirichletSpec>& dirichlet,
               std::vector<BoundarySegment> tractions, MaterialParams mat = {},
               SimpParams sp = {})
      : forest(&f),
        dofmap(f, 2, 2),
        neumann(std::move(tractions)),
        material(mat),
        simp(sp) {
    hanging = build_hanging_constraints(f, dofmap);
    constraints = hanging;
    apply_dirichlet(dofmap, dirichlet, constraints);
    constraints.close();
    ConstraintSet h = hanging;
    h.close();
    hanging = std::move(h);
    rho_hat = Eigen::VectorXd::Ones(f.num_active());
  }

  int n_dofs() const { return dofmap.n_dofs(); }
};

struct SolverFailure : std::runtime_error {
  int load_step;
  explicit SolverFailure(int step)
      : std::runtime_error("Newton solver failed to converge in load step " + std::to_string(step)),
        load_step(step) {}
};

struct Solution {
  Eigen::VectorXd u;
  bool converged = false;
  int newton_iterations = 0;
  std::vector<double> residual_history;
};

// -------------------------------------------------------------------------
// Assembly
// -------------------------------------------------------------------------

struct AssemblyResult {
  Eigen::VectorXd f_int;              // raw internal forces (unconstrained rows)
  Eigen::SparseMatrix<double> tangent;  // constraint-condensed
  double energy = 0.0;
  bool inverted = false;
};

namespace detail {

inline Eigen::Matrix2d deformation_gradient(const Eigen::VectorXd& ue,
                                            const std::array<Eigen::Vector2d, 9>& grad_phys) {
  Eigen::Matrix2d F = Eigen::Matrix2d::Identity();
  for (int n = 0; n < 9; ++n) {
    F(0, 0) += ue[2 * n] * grad_phys[n][0];
    F(0, 1) += ue[2 * n] * grad_phys[n][1];
    F(1, 0) += ue[2 * n + 1] * grad_phys[n][0];
    F(1, 1) += ue[2 * n + 1] * grad_phys[n][1];
  }
  return F;
}

}  // namespace detail

// Assembles internal forces and (optionally) the condensed tangent at u.
// Inverted quadrature points set result.inverted instead of throwing so the
// line search can back off.
inline AssemblyResult assemble(const StateProblem& state, const Eigen::VectorXd& u,
                               bool with_tangent) {
  const Forest& forest = *state.forest;
  const DofMap& dm = state.dofmap;
  AssemblyResult out;
  out.f_int = Eigen::VectorXd::Zero(dm.n_dofs());
  std::vector<Eigen::Triplet<double>> triplets;
  if (with_tangent) triplets.reserve(std::size_t(forest.num_active()) * 18 * 18);
  Eigen::VectorXd fcond = Eigen::VectorXd::Zero(dm.n_dofs());

  // Reference-point data is identical for every cell (rectangles).
  struct QpRef {
    ShapeEval<2> shape;
    double w;
  };
  static const std::vector<QpRef> qps = [] {
    std::vector<QpRef> v;
    for (const auto& gy : gauss3())
      for (const auto& gx : gauss3())
        v.push_back({ShapeEval<2>({gx.xi, gy.xi}), gx.w * gy.w});
    return v;
  }();

  Eigen::VectorXd ue(18), fe(18);
  Eigen::MatrixXd ke(18, 18);
  for (int k = 0; k < forest.num_active(); ++k) {
    const Cell& c = forest.cell(forest.active_cells()[k]);
    const double hx = forest.cell_hx(c), hy = forest.cell_hy(c);
    const double detJ = 0.25 * hx * hy;
    const double g = state.simp.stiffness(state.rho_hat[k]);
    auto dofs = dm.cell_dofs(k);
    for (int i = 0; i < 18; ++i) ue[i] = u[dofs[i]];
    fe.setZero();
    if (with_tangent) ke.setZero();

    for (const auto& qp : qps) {
      std::array<Eigen::Vector2d, 9> gp;
      for (int n = 0; n < 9; ++n)
        gp[n] = {qp.shape.grad[n][0] * 2.0 / hx, qp.shape.grad[n][1] * 2.0 / hy};
      Eigen::Matrix2d F = detail::deformation_gradient(ue, gp);
      if (F.determinant() <= 0.0) {
        out.inverted = true;
        continue;
      }
      const double jw = qp.w * detJ;
      out.energy += g * strain_energy(F, state.material) * jw;
      Eigen::Matrix2d P = g * piola_stress(F, state.material);
      for (int n = 0; n < 9; ++n) {
        fe[2 * n] += (P(0, 0) * gp[n][0] + P(0, 1) * gp[n][1]) * jw;
        fe[2 * n + 1] += (P(1, 0) * gp[n][0] + P(1, 1) * gp[n][1]) * jw;
      }
      if (with_tangent) {
        Tangent2 A = material_tangent(F, state.material);
        for (int a = 0; a < 9; ++a)
          for (int b = 0; b < 9; ++b) {
            double k00 = 0, k01 = 0, k10 = 0, k11 = 0;
            for (int J = 0; J < 2; ++J)
              for (int L = 0; L < 2; ++L) {
                const double gg = gp[a][J] * gp[b][L];
                k00 += A(0, J, 0, L) * gg;
                k01 += A(0, J, 1, L) * gg;
                k10 += A(1, J, 0, L) * gg;
                k11 += A(1, J, 1, L) * gg;
              }
            const double s = g * jw;
            ke(2 * a, 2 * b) += s * k00;
            ke(2 * a, 2 * b + 1) += s * k01;
            ke(2 * a + 1, 2 * b) += s * k10;
            ke(2 * a + 1, 2 * b + 1) += s * k11;
          }
      }
    }
    for (int i = 0; i < 18; ++i) out.f_int[dofs[i]] += fe[i];
    if (with_tangent) {
      Eigen::VectorXd dummy = Eigen::VectorXd::Zero(18);
      state.constraints.scatter(ke, dummy, dofs, triplets, fcond);
    }
  }
  if (with_tangent) {
    state.constraints.append_identity(triplets);
    out.tangent.resize(dm.n_dofs(), dm.n_dofs());
    out.tangent.setFromTriplets(triplets.begin(), triplets.end());
  }
  return out;
}

// External load vector from the Neumann segments; integration is per active
// boundary face so the total load is mesh independent.
inline Eigen::VectorXd external_force(const StateProblem& state) {
  const Forest& forest = *state.forest;
  const DofMap& dm = state.dofmap;
  Eigen::VectorXd f = Eigen::VectorXd::Zero(dm.n_dofs());
  const double tol = 1e-12 * std::max(forest.domain_width(), forest.domain_height());
  for (int k = 0; k < forest.num_active(); ++k) {
    int ci = forest.active_cells()[k];
    const Cell& c = forest.cell(ci);
    for (int side = 0; side < 4; ++side) {
      if (!forest.on_domain_boundary(ci, side)) continue;
      const bool vertical = (side == kLeft || side == kRight);
      double fc = vertical ? (side == kLeft ? forest.cell_x0(c) : forest.cell_x0(c) + forest.cell_hx(c))
                           : (side == kBottom ? forest.cell_y0(c) : forest.cell_y0(c) + forest.cell_hy(c));
      double flo = vertical ? forest.cell_y0(c) : forest.cell_x0(c);
      double fhi = flo + (vertical ? forest.cell_hy(c) : forest.cell_hx(c));
      for (const auto& seg : state.neumann) {
        if ((seg.axis == 0) != vertical) continue;
        if (std::abs(seg.coord - fc) > tol) continue;
        double lo = std::max(flo, seg.lo), hi = std::min(fhi, seg.hi);
        if (hi - lo <= tol) continue;
        // Map the overlap into the face reference coordinate [-1, 1].
        double a = 2.0 * (lo - flo) / (fhi - flo) - 1.0;
        double b = 2.0 * (hi - flo) / (fhi - flo) - 1.0;
        for (const auto& gq : gauss3()) {
          double xi_edge = 0.5 * (a + b) + 0.5 * (b - a) * gq.xi;
          double jac = 0.5 * (hi - lo);  // edge length of the overlap / 2
          Eigen::Vector2d xi;
          if (side == kLeft) xi = {-1.0, xi_edge};
          else if (side == kRight) xi = {1.0, xi_edge};
          else if (side == kBottom) xi = {xi_edge, -1.0};
          else xi = {xi_edge, 1.0};
          ShapeEval<2> sh(xi);
          for (int n = 0; n < 9; ++n) {
            int node = dm.cell_nodes(k)[n];
            f[dm.dof(node, 0)] += sh.value[n] * seg.traction[0] * gq.w * jac;
            f[dm.dof(node, 1)] += sh.value[n] * seg.traction[1] * gq.w * jac;
          }
        }
      }
    }
  }
  return f;
}

// -------------------------------------------------------------------------
// Newton-Raphson with incremental loading
// -------------------------------------------------------------------------

struct NewtonOptions {
  int load_steps = 1;
  int max_iterations = 50;
  double tol_rel = 1e-9;
  double tol_abs = 1e-12;
  int max_bisections = 4;
  bool throw_on_failure = true;
};

namespace detail {

inline double constrained_residual_norm(const StateProblem& state, const Eigen::VectorXd& r) {
  Eigen::VectorXd rc = r;
  state.constraints.condense_vector(rc);
  return rc.norm();
}

// One load level; returns false on non-convergence.
inline bool newton_at_load(const StateProblem& state, const Eigen::VectorXd& f_ext_raw,
                           double scale, const NewtonOptions& opt, Eigen::VectorXd& u,
                           Solution& sol) {
  Eigen::VectorXd f_ext_c = scale * f_ext_raw;
  state.constraints.condense_vector(f_ext_c);
  const double fnorm = f_ext_c.norm();
  const double tol = std::max(opt.tol_rel * fnorm, opt.tol_abs);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
  for (int it = 0; it < opt.max_iterations; ++it) {
    AssemblyResult as = assemble(state, u, true);
    if (as.inverted) return false;  // caller backtracks via load bisection
    Eigen::VectorXd r = scale * f_ext_raw - as.f_int;
    state.constraints.condense_vector(r);
    double rnorm = r.norm();
    sol.residual_history.push_back(rnorm);
    if (rnorm <= tol) return true;
    solver.compute(as.tangent);
    if (solver.info() != Eigen::Success) return false;
    Eigen::VectorXd du = solver.solve(r);
    state.constraints.distribute_increment(du);
    ++sol.newton_iterations;
    // Backtracking line search on the constrained residual norm.
    double alpha = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 12; ++ls) {
      Eigen::VectorXd trial = u + alpha * du;
      AssemblyResult tr = assemble(state, trial, false);
      if (!tr.inverted) {
        Eigen::VectorXd rt = scale * f_ext_raw - tr.f_int;
        state.constraints.condense_vector(rt);
        if (rt.norm() < rnorm || alpha < 1e-3) {
          u = trial;
          accepted = true;
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!accepted) return false;
  }
  return false;
}

}  // namespace detail

// Solves the state problem by incremental loading; a failed step is bisected
// automatically up to opt.max_bisections times.
inline Solution solve_newton(const StateProblem& state, const NewtonOptions& opt = {},
                             const Eigen::VectorXd* warm_start = nullptr) {
  if (opt.load_steps < 1) throw std::invalid_argument("solve_newton: load_steps must be >= 1");
  Solution sol;
  sol.u = Eigen::VectorXd::Zero(state.n_dofs());
  if (warm_start && warm_start->size() == sol.u.size()) sol.u = *warm_start;
  state.constraints.distribute(sol.u);
  Eigen::VectorXd f_ext = external_force(state);

  double s = 0.0;
  double ds = 1.0 / opt.load_steps;
  int bisections = 0;
  int step_index = 0;
  while (s < 1.0 - 1e-15) {
    double target = std::min(1.0, s + ds);
    ++step_index;
    Eigen::VectorXd u_backup = sol.u;
    if (detail::newton_at_load(state, f_ext, target, opt, sol.u, sol)) {
      s = target;
      if (bisections > 0) {  // try growing back after a successful substep
        ds = std::min(ds * 2.0, 1.0 - s + 1e-16);
        --bisections;
      }
    } else {
      sol.u = u_backup;
      if (++bisections > opt.max_bisections) {
        if (opt.throw_on_failure) throw SolverFailure(step_index);
        sol.converged = false;
        return sol;
      }
      ds *= 0.5;
    }
  }
  sol.converged = true;
  return sol;
}

// Per-cell von Mises stress, maximum over the 3x3 quadrature points.
inline Eigen::VectorXd cell_von_mises(const StateProblem& state, const Eigen::VectorXd& u) {
  const Forest& forest = *state.forest;
  Eigen::VectorXd vm = Eigen::VectorXd::Zero(forest.num_active());
  Eigen::VectorXd ue(18);
  for (int k = 0; k < forest.num_active(); ++k) {
    const Cell& c = forest.cell(forest.active_cells()[k]);
    const double hx = forest.cell_hx(c), hy = forest.cell_hy(c);
    auto dofs = state.dofmap.cell_dofs(k);
    for (int i = 0; i < 18; ++i) ue[i] = u[dofs[i]];
    double m = 0.0;
    for (const auto& gy : gauss3())
      for (const auto& gx : gauss3()) {
        ShapeEval<2> sh({gx.xi, gy.xi});
        std::array<Eigen::Vector2d, 9> gp;
        for (int n = 0; n < 9; ++n) gp[n] = {sh.grad[n][0] * 2.0 / hx, sh.grad[n][1] * 2.0 / hy};
        Eigen::Matrix2d F = detail::deformation_gradient(ue, gp);
        m = std::max(m, von_mises(cauchy_stress(F, state.material)));
      }
    vm[k] = m;
  }
  return vm;
}

}  // namespace topo
