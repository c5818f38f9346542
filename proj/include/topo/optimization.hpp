#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "topo/fem.hpp"
#include "topo/mechanics.hpp"
#include "topo/regularization.hpp"

namespace topo {

enum class ProblemKind { compliance_volume, compliance_volume_stress };

struct OptProblem {
  ProblemKind kind = ProblemKind::compliance_volume;
  double volume_bound = 0.5;   // absolute area bound Vbar
  double stress_limit = 0.5;   // sigma_a, used when the stress constraint is active
  double pnorm_exponent = 8.0;
  double move_limit = 0.2;
  int iterations = 200;

  void validate() const {
    if (volume_bound <= 0.0) throw std::invalid_argument("OptProblem: volume bound must be > 0");
    if (kind == ProblemKind::compliance_volume_stress && stress_limit <= 0.0)
      throw std::invalid_argument("OptProblem: stress limit must be > 0");
    if (pnorm_exponent < 2.0) throw std::invalid_argument("OptProblem: p must be >= 2");
  }
};

inline double compliance(const Solution& sol, const Eigen::VectorXd& f_ext) {
  if (!sol.converged) throw SolverFailure(0);
  return sol.u.dot(f_ext);  // same face quadrature as the assembled load
}

inline double volume_constraint(const Eigen::VectorXd& rho, const Forest& forest, double vbar) {
  double v = 0.0;
  for (int k = 0; k < forest.num_active(); ++k)
    v += rho[k] * forest.cell_area(forest.cell(forest.active_cells()[k]));
  return v - vbar;
}

// Evaluates responses and adjoint sensitivities at a converged state. The
// tangent is re-assembled at the converged displacement and factorized once;
// both adjoint solves reuse the factorization.
class ResponseEvaluator {
 public:
  ResponseEvaluator(const StateProblem& state, const Solution& sol)
      : state_(&state), sol_(&sol) {
    if (!sol.converged) throw SolverFailure(0);
    AssemblyResult as = assemble(state, sol.u, true);
    solver_.compute(as.tangent);
    if (solver_.info() != Eigen::Success)
      throw std::runtime_error("ResponseEvaluator: tangent factorization failed");
    f_ext_ = external_force(state);
  }

  const Eigen::VectorXd& external_load() const { return f_ext_; }

  double compliance_value() const { return sol_->u.dot(f_ext_); }

  // dC/drho_hat per cell via the adjoint K^T lam = f_ext.
  Eigen::VectorXd compliance_sensitivity() const {
    Eigen::VectorXd lam = adjoint_solve(f_ext_);
    return element_pullback(lam);
  }

  // Volume-normalized P-norm of the relaxed normalized von Mises field.
  double pnorm_value(double sigma_a, double p, double epsilon) const {
    double T = 0.0, V = 0.0;
    quad_loop([&](int k, double jw, const Eigen::Matrix2d& F) {
      double sn = eps_relax(state_->rho_hat[k], epsilon) *
                  von_mises(cauchy_stress(F, state_->material)) / sigma_a;
      T += std::pow(sn, p) * jw;
      V += jw;
    });
    return std::pow(T / V, 1.0 / p);
  }

  // dG_PVM/drho_hat: explicit relaxation term plus state adjoint term.
  Eigen::VectorXd pnorm_sensitivity(double sigma_a, double p, double epsilon) const {
    const Forest& forest = *state_->forest;
    double T = 0.0, V = 0.0;
    quad_loop([&](int k, double jw, const Eigen::Matrix2d& F) {
      double sn = eps_relax(state_->rho_hat[k], epsilon) *
                  von_mises(cauchy_stress(F, state_->material)) / sigma_a;
      T += std::pow(sn, p) * jw;
      V += jw;
    });
    const double G = std::pow(T / V, 1.0 / p);
    const double outer = (G > 0.0) ? std::pow(G, 1.0 - p) / V : 0.0;

    Eigen::VectorXd explicit_term = Eigen::VectorXd::Zero(forest.num_active());
    Eigen::VectorXd dGdu = Eigen::VectorXd::Zero(state_->n_dofs());
    Eigen::VectorXd ue(18);
    for (int k = 0; k < forest.num_active(); ++k) {
      const Cell& c = forest.cell(forest.active_cells()[k]);
      const double hx = forest.cell_hx(c), hy = forest.cell_hy(c);
      const double detJ = 0.25 * hx * hy;
      auto dofs = state_->dofmap.cell_dofs(k);
      for (int i = 0; i < 18; ++i) ue[i] = sol_->u[dofs[i]];
      const double fe_relax = eps_relax(state_->rho_hat[k], epsilon);
      const double dfe = eps_relax_derivative(state_->rho_hat[k], epsilon);
      Eigen::VectorXd ge = Eigen::VectorXd::Zero(18);
      for (const auto& gy : gauss3())
        for (const auto& gx : gauss3()) {
          ShapeEval<2> sh({gx.xi, gy.xi});
          std::array<Eigen::Vector2d, 9> gp;
          for (int n = 0; n < 9; ++n)
            gp[n] = {sh.grad[n][0] * 2.0 / hx, sh.grad[n][1] * 2.0 / hy};
          Eigen::Matrix2d F = detail::deformation_gradient(ue, gp);
          const double jw = gx.w * gy.w * detJ;
          double vm = von_mises(cauchy_stress(F, state_->material));
          double sn = fe_relax * vm / sigma_a;
          if (sn <= 0.0) continue;
          const double coef = outer * std::pow(sn, p - 1.0) * jw;  // dG/d(sn) at this point
          explicit_term[k] += coef * dfe * vm / sigma_a;
          Eigen::Matrix2d dvm = von_mises_tangent(F, state_->material);
          const double cu = coef * fe_relax / sigma_a;
          for (int n = 0; n < 9; ++n) {
            ge[2 * n] += cu * (dvm(0, 0) * gp[n][0] + dvm(0, 1) * gp[n][1]);
            ge[2 * n + 1] += cu * (dvm(1, 0) * gp[n][0] + dvm(1, 1) * gp[n][1]);
          }
        }
      for (int i = 0; i < 18; ++i) dGdu[dofs[i]] += ge[i];
    }
    Eigen::VectorXd lam = adjoint_solve(dGdu);
    return explicit_term + element_pullback(lam);
  }

  // Per-cell von Mises maxima, for the VNM criterion.
  Eigen::VectorXd cell_vm() const { return cell_von_mises(*state_, sol_->u); }

 private:
  // Solves K lam = rhs with constraint condensation and distributes.
  Eigen::VectorXd adjoint_solve(const Eigen::VectorXd& rhs_raw) const {
    Eigen::VectorXd rhs = rhs_raw;
    state_->constraints.condense_vector(rhs);
    Eigen::VectorXd lam = solver_.solve(rhs);
    state_->constraints.distribute_increment(lam);
    return lam;
  }

  // -lam^T d(f_int)/drho_hat_e = -g'(rho_hat_e) lam^T r_e, with r_e the
  // unscaled element internal force at the converged displacement.
  Eigen::VectorXd element_pullback(const Eigen::VectorXd& lam) const {
    const Forest& forest = *state_->forest;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(forest.num_active());
    Eigen::VectorXd ue(18), le(18);
    for (int k = 0; k < forest.num_active(); ++k) {
      const Cell& c = forest.cell(forest.active_cells()[k]);
      const double hx = forest.cell_hx(c), hy = forest.cell_hy(c);
      const double detJ = 0.25 * hx * hy;
      auto dofs = state_->dofmap.cell_dofs(k);
      for (int i = 0; i < 18; ++i) {
        ue[i] = sol_->u[dofs[i]];
        le[i] = lam[dofs[i]];
      }
      double acc = 0.0;
      for (const auto& gy : gauss3())
        for (const auto& gx : gauss3()) {
          ShapeEval<2> sh({gx.xi, gy.xi});
          std::array<Eigen::Vector2d, 9> gp;
          for (int n = 0; n < 9; ++n)
            gp[n] = {sh.grad[n][0] * 2.0 / hx, sh.grad[n][1] * 2.0 / hy};
          Eigen::Matrix2d F = detail::deformation_gradient(ue, gp);
          Eigen::Matrix2d P = piola_stress(F, state_->material);
          const double jw = gx.w * gy.w * detJ;
          for (int n = 0; n < 9; ++n)
            acc += (le[2 * n] * (P(0, 0) * gp[n][0] + P(0, 1) * gp[n][1]) +
                    le[2 * n + 1] * (P(1, 0) * gp[n][0] + P(1, 1) * gp[n][1])) * jw;
        }
      out[k] = -state_->simp.stiffness_derivative(state_->rho_hat[k]) * acc;
    }
    return out;
  }

  template <class Fn>
  void quad_loop(Fn&& fn) const {
    const Forest& forest = *state_->forest;
    Eigen::VectorXd ue(18);
    for (int k = 0; k < forest.num_active(); ++k) {
      const Cell& c = forest.cell(forest.active_cells()[k]);
      const double hx = forest.cell_hx(c), hy = forest.cell_hy(c);
      const double detJ = 0.25 * hx * hy;
      auto dofs = state_->dofmap.cell_dofs(k);
      for (int i = 0; i < 18; ++i) ue[i] = sol_->u[dofs[i]];
      for (const auto& gy : gauss3())
        for (const auto& gx : gauss3()) {
          ShapeEval<2> sh({gx.xi, gy.xi});
          std::array<Eigen::Vector2d, 9> gp;
          for (int n = 0; n < 9; ++n)
            gp[n] = {sh.grad[n][0] * 2.0 / hx, sh.grad[n][1] * 2.0 / hy};
          Eigen::Matrix2d F = detail::deformation_gradient(ue, gp);
          fn(k, gx.w * gy.w * detJ, F);
        }
    }
  }

  const StateProblem* state_;
  const Solution* sol_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
  Eigen::VectorXd f_ext_;
};

}  // namespace topo
