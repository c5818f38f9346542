#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "topo/mesh.hpp"

namespace topo {

// Tensor-product Lagrange dof layout on the active cells of a forest.
// Nodes are keyed on an integer lattice with 2*2^max_level steps per base
// cell, so corner, mid-edge and center nodes of any admissible cell land on
// integer coordinates. Geometrically coincident nodes share one global node;
// hanging nodes are resolved later by constraints.
class DofMap {
 public:
  DofMap() = default;

  DofMap(const Forest& forest, int degree, int ncomp)
      : degree_(degree), ncomp_(ncomp) {
    if (degree != 1 && degree != 2) throw std::invalid_argument("DofMap: degree must be 1 or 2");
    const int npd = degree + 1;               // nodes per direction
    nodes_per_cell_ = npd * npd;
    cell_nodes_.resize(forest.num_active());
    key_to_node_.reserve(forest.num_active() * nodes_per_cell_);
    for (int k = 0; k < forest.num_active(); ++k) {
      const Cell& c = forest.cell(forest.active_cells()[k]);
      const std::int64_t step = 2 * c.size / degree;
      cell_nodes_[k].resize(nodes_per_cell_);
      for (int j = 0; j < npd; ++j)
        for (int i = 0; i < npd; ++i) {
          std::int64_t nx = 2 * c.ix + i * step;
          std::int64_t ny = 2 * c.iy + j * step;
          cell_nodes_[k][j * npd + i] = node_index(nx, ny, forest);
        }
    }
  }

  int degree() const { return degree_; }
  int ncomp() const { return ncomp_; }
  int nodes_per_cell() const { return nodes_per_cell_; }
  int n_nodes() const { return static_cast<int>(node_x_.size()); }
  int n_dofs() const { return n_nodes() * ncomp_; }

  const std::vector<int>& cell_nodes(int active_cell) const { return cell_nodes_[active_cell]; }

  int dof(int node, int comp) const { return node * ncomp_ + comp; }
  int dof_node(int dof) const { return dof / ncomp_; }
  int dof_comp(int dof) const { return dof % ncomp_; }

  double node_x(int node) const { return node_x_[node]; }
  double node_y(int node) const { return node_y_[node]; }
  std::int64_t node_lat_x(int node) const { return lat_x_[node]; }
  std::int64_t node_lat_y(int node) const { return lat_y_[node]; }

  // Global node at the given node-lattice coordinate, -1 if absent.
  int find_node(std::int64_t nx, std::int64_t ny) const {
    auto it = key_to_node_.find(pack(nx, ny));
    return it == key_to_node_.end() ? -1 : it->second;
  }

  // Gathers the global dof indices of one cell, component-major per node.
  std::vector<int> cell_dofs(int active_cell) const {
    std::vector<int> dofs(nodes_per_cell_ * ncomp_);
    for (int n = 0; n < nodes_per_cell_; ++n)
      for (int c = 0; c < ncomp_; ++c)
        dofs[n * ncomp_ + c] = dof(cell_nodes_[active_cell][n], c);
    return dofs;
  }

 private:
  static std::uint64_t pack(std::int64_t x, std::int64_t y) {
    return (std::uint64_t(std::uint32_t(x)) << 32) | std::uint64_t(std::uint32_t(y));
  }

  int node_index(std::int64_t nx, std::int64_t ny, const Forest& forest) {
    auto [it, inserted] = key_to_node_.try_emplace(pack(nx, ny), n_nodes());
    if (inserted) {
      lat_x_.push_back(nx);
      lat_y_.push_back(ny);
      node_x_.push_back(0.5 * double(nx) * forest.dx_unit());
      node_y_.push_back(0.5 * double(ny) * forest.dy_unit());
    }
    return it->second;
  }

  int degree_ = 2;
  int ncomp_ = 2;
  int nodes_per_cell_ = 9;
  std::vector<std::vector<int>> cell_nodes_;
  std::unordered_map<std::uint64_t, int> key_to_node_;
  std::vector<std::int64_t> lat_x_, lat_y_;
  std::vector<double> node_x_, node_y_;
};

}  // namespace topo
