#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <functional>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "topo/dofmap.hpp"
#include "topo/mesh.hpp"

namespace topo {

// Affine constraints tying slave dofs to master dofs:
//   u[slave] = sum_i w_i * u[master_i] + inhomogeneity.
// Covers hanging-node interpolation and Dirichlet values (empty master list).
class ConstraintSet {
 public:
  struct Line {
    std::vector<std::pair<int, double>> entries;
    double inhomogeneity = 0.0;
  };

  bool empty() const { return lines_.empty(); }
  std::size_t size() const { return lines_.size(); }
  bool is_constrained(int dof) const { return lines_.count(dof) > 0; }
  const std::map<int, Line>& lines() const { return lines_; }

  const Line* get(int dof) const {
    auto it = lines_.find(dof);
    return it == lines_.end() ? nullptr : &it->second;
  }

  void add_line(int slave) { lines_[slave]; }

  void add_entry(int slave, int master, double weight) {
    lines_[slave].entries.emplace_back(master, weight);
  }

  void set_inhomogeneity(int slave, double value) { lines_[slave].inhomogeneity = value; }

  // Replaces any existing line (used when Dirichlet overrides a hanging rule).
  void set_dirichlet(int slave, double value) {
    Line l;
    l.inhomogeneity = value;
    lines_[slave] = std::move(l);
  }

  // Resolves constraint chains so no slave appears among the masters.
  void close() {
    const std::size_t max_rounds = lines_.size() + 1;
    for (auto& [slave, line] : lines_) {
      std::size_t round = 0;
      while (true) {
        bool dirty = false;
        std::map<int, double> merged;
        double inhom = line.inhomogeneity;
        for (auto& [m, w] : line.entries) {
          auto it = lines_.find(m);
          if (it != lines_.end()) {
            dirty = true;
            inhom += w * it->second.inhomogeneity;
            for (auto& [mm, ww] : it->second.entries) merged[mm] += w * ww;
          } else {
            merged[m] += w;
          }
        }
        if (!dirty) break;
        line.entries.assign(merged.begin(), merged.end());
        line.inhomogeneity = inhom;
        if (++round > max_rounds) throw std::runtime_error("ConstraintSet: cyclic constraints");
      }
    }
    closed_ = true;
  }

  bool closed() const { return closed_; }

  // Sets slave entries from their masters (including inhomogeneities).
  void distribute(Eigen::VectorXd& u) const {
    for (const auto& [slave, line] : lines_) {
      double v = line.inhomogeneity;
      for (auto& [m, w] : line.entries) v += w * u[m];
      u[slave] = v;
    }
  }

  // Homogeneous variant for Newton increments.
  void distribute_increment(Eigen::VectorXd& du) const {
    for (const auto& [slave, line] : lines_) {
      double v = 0.0;
      for (auto& [m, w] : line.entries) v += w * du[m];
      du[slave] = v;
    }
  }

  // Routes slave entries of a residual-like vector to their masters.
  void condense_vector(Eigen::VectorXd& f) const {
    for (const auto& [slave, line] : lines_) {
      for (auto& [m, w] : line.entries) f[m] += w * f[slave];
      f[slave] = 0.0;
    }
  }

  // Scatters a local matrix/vector pair into triplets and a global vector,
  // expanding constrained rows and columns with their master weights.
  void scatter(const Eigen::MatrixXd& ke, const Eigen::VectorXd& fe,
               const std::vector<int>& dofs,
               std::vector<Eigen::Triplet<double>>& triplets,
               Eigen::VectorXd& f) const {
    const int n = static_cast<int>(dofs.size());
    thread_local std::vector<std::pair<int, double>> rows, cols;
    for (int i = 0; i < n; ++i) {
      expand(dofs[i], rows);
      for (auto& [gi, wi] : rows) f[gi] += wi * fe[i];
      for (int j = 0; j < n; ++j) {
        const double kij = ke(i, j);
        if (kij == 0.0) continue;
        expand(dofs[j], cols);
        for (auto& [gi, wi] : rows)
          for (auto& [gj, wj] : cols) triplets.emplace_back(gi, gj, wi * wj * kij);
      }
    }
  }

  void scatter_vector(const Eigen::VectorXd& fe, const std::vector<int>& dofs,
                      Eigen::VectorXd& f) const {
    thread_local std::vector<std::pair<int, double>> rows;
    for (std::size_t i = 0; i < dofs.size(); ++i) {
      expand(dofs[i], rows);
      for (auto& [gi, wi] : rows) f[gi] += wi * fe[i];
    }
  }

  // Unit diagonal on slave rows so the condensed matrix stays regular.
  void append_identity(std::vector<Eigen::Triplet<double>>& triplets) const {
    for (const auto& [slave, line] : lines_) triplets.emplace_back(slave, slave, 1.0);
  }

 private:
  void expand(int dof, std::vector<std::pair<int, double>>& out) const {
    out.clear();
    auto it = lines_.find(dof);
    if (it == lines_.end()) {
      out.emplace_back(dof, 1.0);
    } else {
      for (auto& [m, w] : it->second.entries) out.emplace_back(m, w);
    }
  }

  std::map<int, Line> lines_;
  bool closed_ = false;
};

namespace detail {

// 1D Lagrange weight of node k (of degree+1 equispaced nodes on [0,1]) at t.
inline double lagrange_weight(int degree, int k, double t) {
  double w = 1.0;
  for (int m = 0; m <= degree; ++m) {
    if (m == k) continue;
    double tm = double(m) / degree;
    double tk = double(k) / degree;
    w *= (t - tm) / (tk - tm);
  }
  return w;
}

}  // namespace detail

// Builds hanging-node constraints: on each coarse edge abutting two fine
// edges, fine-side nodes without a coarse counterpart are constrained by the
// coarse element's edge trace (degree 1: midpoint average, degree 2:
// biquadratic trace).
inline ConstraintSet build_hanging_constraints(const Forest& forest, const DofMap& dofmap) {
  if (!forest.is_balanced())
    throw std::runtime_error("build_hanging_constraints: forest is not 2:1 balanced");
  const int d = dofmap.degree();
  ConstraintSet cs;
  for (int k = 0; k < forest.num_active(); ++k) {
    int ci = forest.active_cells()[k];
    const Cell& c = forest.cell(ci);
    for (int side = 0; side < 4; ++side) {
      auto nb = forest.side_neighbors(ci, side);
      if (nb.size() < 2) continue;  // ci is the coarse side only when two finer cells abut
      // Coarse edge nodes of ci along this side, in edge order.
      std::vector<int> coarse(d + 1);
      const int npd = d + 1;
      for (int a = 0; a <= d; ++a) {
        int i, j;
        switch (side) {
          case kLeft:   i = 0; j = a; break;
          case kRight:  i = d; j = a; break;
          case kBottom: i = a; j = 0; break;
          default:      i = a; j = d; break;
        }
        coarse[a] = dofmap.cell_nodes(k)[j * npd + i];
      }
      const bool vertical = (side == kLeft || side == kRight);
      const std::int64_t edge0 = 2 * (vertical ? c.iy : c.ix);
      const std::int64_t edge_len = 2 * c.size;
      // Fine-side nodes on this edge live at lattice positions
      // edge0 + p * (c.size / d), p = 0 .. 2d.
      const std::int64_t fine_step = c.size / d;
      for (int p = 0; p <= 2 * d; ++p) {
        if (p % 2 == 0) continue;  // coincides with a coarse node position
        std::int64_t along = edge0 + p * fine_step;
        std::int64_t nx, ny;
        if (vertical) {
          nx = 2 * (side == kLeft ? c.ix : c.ix + c.size);
          ny = along;
        } else {
          ny = 2 * (side == kBottom ? c.iy : c.iy + c.size);
          nx = along;
        }
        int slave_node = dofmap.find_node(nx, ny);
        if (slave_node < 0) continue;
        double t = double(along - edge0) / double(edge_len);
        for (int comp = 0; comp < dofmap.ncomp(); ++comp) {
          int slave = dofmap.dof(slave_node, comp);
          if (cs.is_constrained(slave)) continue;
          cs.add_line(slave);
          for (int a = 0; a <= d; ++a)
            cs.add_entry(slave, dofmap.dof(coarse[a], comp), detail::lagrange_weight(d, a, t));
        }
      }
    }
  }
  return cs;
}

struct DirichletSpec {
  std::function<bool(double, double)> where;  // node position predicate
  bool fix_x = true, fix_y = true;
  // Prescribed value as a function of position, per component.
  std::function<double(double, double, int)> value = [](double, double, int) { return 0.0; };
};

// Adds Dirichlet lines for matching nodes; overrides hanging rules on conflict.
inline void apply_dirichlet(const DofMap& dofmap, const std::vector<DirichletSpec>& specs,
                            ConstraintSet& cs) {
  for (const auto& spec : specs) {
    for (int n = 0; n < dofmap.n_nodes(); ++n) {
      double x = dofmap.node_x(n), y = dofmap.node_y(n);
      if (!spec.where(x, y)) continue;
      for (int comp = 0; comp < dofmap.ncomp(); ++comp) {
        if ((comp == 0 && !spec.fix_x) || (comp == 1 && !spec.fix_y)) continue;
        cs.set_dirichlet(dofmap.dof(n, comp), spec.value(x, y, comp));
      }
    }
  }
}

}  // namespace topo
