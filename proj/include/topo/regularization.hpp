#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "topo/constraints.hpp"
#include "topo/dofmap.hpp"
#include "topo/fem.hpp"
#include "topo/mesh.hpp"

namespace topo {

struct FilterParams {
  double radius = 0.1;          // classical linear-filter radius convention
  double boundary_coeff = 0.5;  // Robin coefficient of the boundary energy term
  double beta = 1.0;            // Heaviside sharpness
  double eta = 0.5;             // Heaviside threshold
  double epsilon = 0.1;         // relaxation parameter for stress/Eshelby weighting
  // Faces (midpoint, outward normal) where the Robin term applies; symmetry
  // planes are typically excluded.
  std::function<bool(const Eigen::Vector2d&, const Eigen::Vector2d&)> robin_on =
      [](const Eigen::Vector2d&, const Eigen::Vector2d&) { return true; };

  void validate() const {
    if (radius <= 0.0) throw std::invalid_argument("FilterParams: radius must be > 0");
    if (beta <= 0.0) throw std::invalid_argument("FilterParams: beta must be > 0");
    if (eta <= 0.0 || eta >= 1.0) throw std::invalid_argument("FilterParams: eta must be in (0,1)");
    if (epsilon <= 0.0 || epsilon > 1.0)
      throw std::invalid_argument("FilterParams: epsilon must be in (0,1]");
  }
};

// Helmholtz PDE filter on the active mesh with bilinear nodal field:
//   -(r/(2*sqrt(3)))^2 lap(rho_tilde) + rho_tilde = rho
// plus a Robin boundary term c * int_dB rho_tilde delta_rho_tilde dA.
// The source is exactly adjoint to centroid sampling, which makes the
// cell-to-cell map self-adjoint under the area-weighted inner product.
class HelmholtzFilter {
 public:
  HelmholtzFilter(const Forest& forest, const FilterParams& params)
      : forest_(&forest), params_(params), dofmap_(forest, 1, 1) {
    params_.validate();
    constraints_ = build_hanging_constraints(forest, dofmap_);
    constraints_.close();
    assemble_system();
  }

  const DofMap& dofmap() const { return dofmap_; }

  // rho per active cell -> filtered rho_tilde per active cell (centroid
  // sampled, clamped to [0,1]). The nodal field is kept for adaptivity use.
  Eigen::VectorXd apply(const Eigen::VectorXd& rho) {
    nodal_ = solve_from_cells(rho);
    Eigen::VectorXd out(forest_->num_active());
    for (int k = 0; k < forest_->num_active(); ++k)
      out[k] = std::clamp(centroid_value(k, nodal_), 0.0, 1.0);
    return out;
  }

  const Eigen::VectorXd& nodal_field() const { return nodal_; }

  // Pulls a per-cell derivative with respect to rho_tilde back to raw rho.
  Eigen::VectorXd adjoint(const Eigen::VectorXd& dR_drho_tilde) const {
    // RHS carries the sampling weights (1/4 per corner); the area factor of
    // the source enters on the output side.
    Eigen::VectorXd w = Eigen::VectorXd::Zero(dofmap_.n_dofs());
    for (int k = 0; k < forest_->num_active(); ++k) {
      Eigen::VectorXd fe = Eigen::VectorXd::Constant(4, 0.25 * dR_drho_tilde[k]);
      std::vector<int> dofs(dofmap_.cell_nodes(k).begin(), dofmap_.cell_nodes(k).end());
      constraints_.scatter_vector(fe, dofs, w);
    }
    state_solver_check();
    Eigen::VectorXd lambda = solver_.solve(w);
    constraints_.distribute_increment(lambda);
    Eigen::VectorXd out(forest_->num_active());
    for (int k = 0; k < forest_->num_active(); ++k) {
      const Cell& c = forest_->cell(forest_->active_cells()[k]);
      out[k] = forest_->cell_area(c) * centroid_value(k, lambda);
    }
    return out;
  }

 private:
  double centroid_value(int k, const Eigen::VectorXd& nodal) const {
    const auto& nodes = dofmap_.cell_nodes(k);
    return 0.25 * (nodal[nodes[0]] + nodal[nodes[1]] + nodal[nodes[2]] + nodal[nodes[3]]);
  }

  // Adjoint of centroid sampling scaled by area: int_cell N_I dV = area/4.
  void scatter_centroid(int k, double value, Eigen::VectorXd& w) const {
    const Cell& c = forest_->cell(forest_->active_cells()[k]);
    const double a4 = 0.25 * forest_->cell_area(c);
    Eigen::VectorXd fe = Eigen::VectorXd::Constant(4, a4 * value);
    std::vector<int> dofs(dofmap_.cell_nodes(k).begin(), dofmap_.cell_nodes(k).end());
    constraints_.scatter_vector(fe, dofs, w);
  }

  Eigen::VectorXd solve_from_cells(const Eigen::VectorXd& rho) {
    Eigen::VectorXd b = Eigen::VectorXd::Zero(dofmap_.n_dofs());
    for (int k = 0; k < forest_->num_active(); ++k) scatter_centroid(k, rho[k], b);
    state_solver_check();
    Eigen::VectorXd x = solver_.solve(b);
    constraints_.distribute_increment(x);
    return x;
  }

  void state_solver_check() const {
    if (solver_.info() != Eigen::Success)
      throw std::runtime_error("HelmholtzFilter: factorization failed");
  }

  void assemble_system() {
    const Forest& forest = *forest_;
    const double k2 = std::pow(params_.radius / (2.0 * std::sqrt(3.0)), 2);
    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::VectorXd dummy_rhs = Eigen::VectorXd::Zero(dofmap_.n_dofs());
    Eigen::MatrixXd ke(4, 4);
    Eigen::VectorXd fe = Eigen::VectorXd::Zero(4);
    for (int k = 0; k < forest.num_active(); ++k) {
      int ci = forest.active_cells()[k];
      const Cell& c = forest.cell(ci);
      const double hx = forest.cell_hx(c), hy = forest.cell_hy(c);
      const double detJ = 0.25 * hx * hy;
      ke.setZero();
      for (const auto& gy : gauss2())
        for (const auto& gx : gauss2()) {
          ShapeEval<1> sh({gx.xi, gy.xi});
          const double jw = gx.w * gy.w * detJ;
          for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b) {
              Eigen::Vector2d ga = {sh.grad[a][0] * 2.0 / hx, sh.grad[a][1] * 2.0 / hy};
              Eigen::Vector2d gb = {sh.grad[b][0] * 2.0 / hx, sh.grad[b][1] * 2.0 / hy};
              ke(a, b) += (k2 * ga.dot(gb) + sh.value[a] * sh.value[b]) * jw;
            }
        }
      // Robin boundary mass on domain-boundary faces.
      if (params_.boundary_coeff != 0.0) {
        for (int side = 0; side < 4; ++side) {
          if (!forest.on_domain_boundary(ci, side)) continue;
          Eigen::Vector2d normal, mid;
          double len;
          face_geometry(c, side, mid, normal, len);
          if (!params_.robin_on(mid, normal)) continue;
          for (const auto& gq : gauss2()) {
            Eigen::Vector2d xi;
            if (side == kLeft) xi = {-1.0, gq.xi};
            else if (side == kRight) xi = {1.0, gq.xi};
            else if (side == kBottom) xi = {gq.xi, -1.0};
            else xi = {gq.xi, 1.0};
            ShapeEval<1> sh(xi);
            const double jw = gq.w * 0.5 * len * params_.boundary_coeff;
            for (int a = 0; a < 4; ++a)
              for (int b = 0; b < 4; ++b) ke(a, b) += sh.value[a] * sh.value[b] * jw;
          }
        }
      }
      std::vector<int> dofs(dofmap_.cell_nodes(k).begin(), dofmap_.cell_nodes(k).end());
      constraints_.scatter(ke, fe, dofs, triplets, dummy_rhs);
    }
    constraints_.append_identity(triplets);
    Eigen::SparseMatrix<double> A(dofmap_.n_dofs(), dofmap_.n_dofs());
    A.setFromTriplets(triplets.begin(), triplets.end());
    solver_.compute(A);
    state_solver_check();
  }

  void face_geometry(const Cell& c, int side, Eigen::Vector2d& mid, Eigen::Vector2d& normal,
                     double& len) const {
    const double x0 = forest_->cell_x0(c), y0 = forest_->cell_y0(c);
    const double hx = forest_->cell_hx(c), hy = forest_->cell_hy(c);
    switch (side) {
      case kLeft:   mid = {x0, y0 + 0.5 * hy};      normal = {-1, 0}; len = hy; break;
      case kRight:  mid = {x0 + hx, y0 + 0.5 * hy}; normal = {1, 0};  len = hy; break;
      case kBottom: mid = {x0 + 0.5 * hx, y0};      normal = {0, -1}; len = hx; break;
      default:      mid = {x0 + 0.5 * hx, y0 + hy}; normal = {0, 1};  len = hx; break;
    }
  }

  const Forest* forest_;
  FilterParams params_;
  DofMap dofmap_;
  ConstraintSet constraints_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
  Eigen::VectorXd nodal_;
};

// Smoothed Heaviside projection.
inline double heaviside_project(double rho_tilde, double beta, double eta) {
  return (std::tanh(beta * eta) + std::tanh(beta * (rho_tilde - eta))) /
         (std::tanh(beta * eta) + std::tanh(beta * (1.0 - eta)));
}

inline double heaviside_derivative(double rho_tilde, double beta, double eta) {
  double t = std::tanh(beta * (rho_tilde - eta));
  return beta * (1.0 - t * t) / (std::tanh(beta * eta) + std::tanh(beta * (1.0 - eta)));
}

inline Eigen::VectorXd heaviside_project(const Eigen::VectorXd& rho_tilde, double beta, double eta) {
  return rho_tilde.unaryExpr([&](double v) { return heaviside_project(v, beta, eta); });
}

// Relaxation factor f_eps(rho_hat) = rho_hat / (eps (1 - rho_hat) + rho_hat).
inline double eps_relax(double rho_hat, double epsilon) {
  return rho_hat / (epsilon * (1.0 - rho_hat) + rho_hat);
}

inline double eps_relax_derivative(double rho_hat, double epsilon) {
  double den = epsilon * (1.0 - rho_hat) + rho_hat;
  return epsilon / (den * den);
}

}  // namespace topo
