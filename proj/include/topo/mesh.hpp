#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace topo {

enum class AdaptFlag : std::uint8_t { keep, refine, coarsen };

// Sides are ordered left, right, bottom, top.
enum Side : int { kLeft = 0, kRight = 1, kBottom = 2, kTop = 3 };

struct Cell {
  int parent = -1;
  std::array<int, 4> children{{-1, -1, -1, -1}};  // SW, SE, NW, NE
  int level = 0;
  bool active = true;
  bool alive = true;
  int base_index = 0;
  std::string path;  // quadrant digits '0'..'3' from the base cell down
  // Lower-left corner and edge length in lattice units (2^max_level per base cell).
  std::int64_t ix = 0, iy = 0, size = 0;

  bool has_children() const { return children[0] >= 0; }
};

// Quadtree forest over a structured rectangular base grid. Active cells tile
// the domain; inactive ancestors are kept so coarsening can reactivate them.
class Forest {
 public:
  Forest(int nx, int ny, double width, double height, int max_level = 8)
      : nx_(nx), ny_(ny), width_(width), height_(height), max_level_(max_level) {
    if (nx < 1 || ny < 1 || width <= 0.0 || height <= 0.0)
      throw std::invalid_argument("Forest: non-positive mesh dimensions");
    if (max_level < 0 || max_level > 24)
      throw std::invalid_argument("Forest: unsupported max_level");
    scale_ = std::int64_t{1} << max_level_;
    cells_.reserve(static_cast<std::size_t>(nx) * ny);
    base_alive_.assign(static_cast<std::size_t>(nx) * ny, true);
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        Cell c;
        c.base_index = j * nx + i;
        c.ix = std::int64_t(i) * scale_;
        c.iy = std::int64_t(j) * scale_;
        c.size = scale_;
        cells_.push_back(c);
      }
    rebuild_active();
  }

  int base_nx() const { return nx_; }
  int base_ny() const { return ny_; }
  double domain_width() const { return width_; }
  double domain_height() const { return height_; }
  int max_level() const { return max_level_; }
  std::int64_t lattice_per_base() const { return scale_; }
  std::int64_t lattice_nx() const { return std::int64_t(nx_) * scale_; }
  std::int64_t lattice_ny() const { return std::int64_t(ny_) * scale_; }

  const Cell& cell(int ci) const { return cells_[ci]; }
  const std::vector<int>& active_cells() const { return active_; }
  int num_active() const { return static_cast<int>(active_.size()); }

  double dx_unit() const { return width_ / (double(nx_) * double(scale_)); }
  double dy_unit() const { return height_ / (double(ny_) * double(scale_)); }
  double cell_x0(const Cell& c) const { return double(c.ix) * dx_unit(); }
  double cell_y0(const Cell& c) const { return double(c.iy) * dy_unit(); }
  double cell_hx(const Cell& c) const { return double(c.size) * dx_unit(); }
  double cell_hy(const Cell& c) const { return double(c.size) * dy_unit(); }
  double cell_area(const Cell& c) const { return cell_hx(c) * cell_hy(c); }

  // Carve non-rectangular domains out of the base grid before any refinement.
  // Removes base cells whose centroid satisfies the predicate.
  void remove_base_cells(const std::function<bool(double, double)>& removed) {
    for (int b = 0; b < nx_ * ny_; ++b) {
      const Cell& c = cells_[b];
      if (c.has_children()) throw std::logic_error("remove_base_cells: forest already refined");
      double cx = cell_x0(c) + 0.5 * cell_hx(c);
      double cy = cell_y0(c) + 0.5 * cell_hy(c);
      if (removed(cx, cy)) {
        cells_[b].alive = false;
        cells_[b].active = false;
        base_alive_[b] = false;
      }
    }
    rebuild_active();
  }

  double domain_area() const {
    double a = 0.0;
    for (int b = 0; b < nx_ * ny_; ++b)
      if (base_alive_[b]) a += cell_area(cells_[b]);
    return a;
  }

  double total_active_area() const {
    double a = 0.0;
    for (int ci : active_) a += cell_area(cells_[ci]);
    return a;
  }

  void refine_uniform(int times) {
    if (times < 0) throw std::invalid_argument("refine_uniform: negative count");
    for (int t = 0; t < times; ++t) {
      for (int ci : active_)
        if (cells_[ci].level >= max_level_)
          throw std::runtime_error("refine_uniform: refinement level cap exceeded");
      std::vector<int> snapshot = active_;
      for (int ci : snapshot) refine_cell(ci);
      rebuild_active();
    }
  }

  // Active cell containing the lattice point (px, py); -1 outside the domain.
  int active_cell_at(std::int64_t px, std::int64_t py) const {
    if (px < 0 || py < 0 || px >= lattice_nx() || py >= lattice_ny()) return -1;
    int b = int(py / scale_) * nx_ + int(px / scale_);
    if (!base_alive_[b]) return -1;
    int ci = b;
    while (cells_[ci].has_children()) {
      const Cell& c = cells_[ci];
      std::int64_t h = c.size / 2;
      int q = (px >= c.ix + h ? 1 : 0) + (py >= c.iy + h ? 2 : 0);
      ci = c.children[q];
    }
    return ci;
  }

  // Active cells sharing the given side of cell ci, ordered along the edge.
  std::vector<int> side_neighbors(int ci, int side) const {
    const Cell& c = cells_[ci];
    std::vector<int> out;
    std::int64_t t = 0;
    while (t < c.size) {
      std::int64_t px, py;
      switch (side) {
        case kLeft:   px = c.ix - 1;      py = c.iy + t; break;
        case kRight:  px = c.ix + c.size; py = c.iy + t; break;
        case kBottom: px = c.ix + t;      py = c.iy - 1; break;
        default:      px = c.ix + t;      py = c.iy + c.size; break;
      }
      int n = active_cell_at(px, py);
      if (n < 0) break;  // side lies on the domain boundary
      out.push_back(n);
      const Cell& nc = cells_[n];
      std::int64_t along = (side == kLeft || side == kRight) ? nc.iy : nc.ix;
      std::int64_t base = (side == kLeft || side == kRight) ? c.iy : c.ix;
      t = along + nc.size - base;
    }
    return out;
  }

  bool on_domain_boundary(int ci, int side) const {
    const Cell& c = cells_[ci];
    switch (side) {
      case kLeft:   return active_cell_at(c.ix - 1, c.iy) < 0;
      case kRight:  return active_cell_at(c.ix + c.size, c.iy) < 0;
      case kBottom: return active_cell_at(c.ix, c.iy - 1) < 0;
      default:      return active_cell_at(c.ix, c.iy + c.size) < 0;
    }
  }

  // Executes refine/coarsen flags with refine-over-coarsen priority, restores
  // 2:1 balance by promoting cells to refine, coarsens only complete sibling
  // quartets, and suppresses unrefined islands afterwards.
  void execute_adaptation(const std::vector<AdaptFlag>& flags) {
    if (flags.size() != active_.size())
      throw std::invalid_argument("execute_adaptation: one flag per active cell required");
    std::vector<char> want_refine(cells_.size(), 0), want_coarsen(cells_.size(), 0);
    std::deque<int> queue;
    for (std::size_t k = 0; k < active_.size(); ++k) {
      int ci = active_[k];
      if (flags[k] == AdaptFlag::refine) {
        if (cells_[ci].level < max_level_) {
          want_refine[ci] = 1;
          queue.push_back(ci);
        }
      } else if (flags[k] == AdaptFlag::coarsen) {
        want_coarsen[ci] = 1;
      }
    }

    // 2:1 closure: a refined cell may not leave a neighbor two levels coarser.
    while (!queue.empty()) {
      int ci = queue.front();
      queue.pop_front();
      for (int side = 0; side < 4; ++side)
        for (int n : side_neighbors(ci, side))
          if (cells_[n].level < cells_[ci].level && !want_refine[n]) {
            want_refine[n] = 1;
            want_coarsen[n] = 0;
            queue.push_back(n);
          }
    }

    // Sibling quartets eligible for coarsening.
    std::vector<int> parents;
    std::vector<char> seen(cells_.size(), 0);
    for (int ci : active_) {
      if (!want_coarsen[ci] || want_refine[ci]) continue;
      int p = cells_[ci].parent;
      if (p < 0 || seen[p]) continue;
      seen[p] = 1;
      bool ok = true;
      for (int ch : cells_[p].children)
        if (ch < 0 || !cells_[ch].active || !want_coarsen[ch] || want_refine[ch]) ok = false;
      if (!ok) continue;
      // Coarsening may not leave the reactivated parent against a cell more
      // than one level finer after pending refinements execute.
      for (int ch : cells_[p].children) {
        for (int side = 0; side < 4 && ok; ++side)
          for (int n : side_neighbors(ch, side)) {
            if (cells_[n].parent == p) continue;
            int post = cells_[n].level + (want_refine[n] ? 1 : 0);
            if (post > cells_[ch].level) { ok = false; break; }
          }
        if (!ok) break;
      }
      if (ok) parents.push_back(p);
    }

    std::vector<int> snapshot = active_;
    for (int ci : snapshot)
      if (want_refine[ci]) refine_cell(ci);
    for (int p : parents) coarsen_quartet(p);
    rebuild_active();

    suppress_islands();
  }

  bool is_balanced() const {
    for (int ci : active_)
      for (int side = 0; side < 4; ++side)
        for (int n : side_neighbors(ci, side))
          if (std::abs(cells_[n].level - cells_[ci].level) > 1) return false;
    return true;
  }

  // An island is a cell surrounded by strictly finer neighbors on all four
  // sides; cells touching the domain boundary never qualify.
  bool has_island(int ci) const {
    const Cell& c = cells_[ci];
    for (int side = 0; side < 4; ++side) {
      auto nbs = side_neighbors(ci, side);
      if (nbs.empty()) return false;
      for (int n : nbs)
        if (cells_[n].level <= c.level) return false;
    }
    return true;
  }

  bool has_any_island() const {
    for (int ci : active_)
      if (has_island(ci)) return true;
    return false;
  }

  std::string cell_key(int ci) const {
    const Cell& c = cells_[ci];
    std::string key = "b" + std::to_string(c.base_index);
    if (!c.path.empty()) key += ":" + c.path;
    return key;
  }

  // Plain-text dump for golden-file tests: one line per alive cell in
  // deterministic depth-first order.
  std::string tree_dump() const {
    std::ostringstream os;
    for (int b = 0; b < nx_ * ny_; ++b) {
      if (!base_alive_[b]) continue;
      dump_subtree(b, os);
    }
    return os.str();
  }

 private:
  void dump_subtree(int ci, std::ostringstream& os) const {
    const Cell& c = cells_[ci];
    os << cell_key(ci) << " " << c.level << " " << (c.active ? 1 : 0) << "\n";
    if (c.has_children())
      for (int ch : c.children) dump_subtree(ch, os);
  }

  int refine_cell(int ci) {
    const Cell c = cells_[ci];  // copy: push_back below invalidates references
    if (!c.active) throw std::logic_error("refine_cell: cell not active");
    if (c.level >= max_level_) throw std::runtime_error("refine_cell: at level cap");
    std::int64_t h = c.size / 2;
    int first = static_cast<int>(cells_.size());
    for (int q = 0; q < 4; ++q) {
      Cell ch;
      ch.parent = ci;
      ch.level = c.level + 1;
      ch.base_index = c.base_index;
      ch.path = c.path + char('0' + q);
      ch.ix = c.ix + (q % 2 == 1 ? h : 0);
      ch.iy = c.iy + (q / 2 == 1 ? h : 0);
      ch.size = h;
      cells_.push_back(ch);
    }
    Cell& cc = cells_[ci];  // push_back may have invalidated the reference
    cc.active = false;
    for (int q = 0; q < 4; ++q) cc.children[q] = first + q;
    return first;
  }

  void coarsen_quartet(int p) {
    for (int ch : cells_[p].children) {
      cells_[ch].active = false;
      cells_[ch].alive = false;
    }
    cells_[p].children = {{-1, -1, -1, -1}};
    cells_[p].active = true;
  }

  void suppress_islands() {
    std::vector<int> islands;
    for (int ci : active_)
      if (cells_[ci].level < max_level_ && has_island(ci)) islands.push_back(ci);
    if (islands.empty()) return;
    for (int ci : islands) refine_cell(ci);
    rebuild_active();
  }

  void rebuild_active() {
    active_.clear();
    for (int b = 0; b < nx_ * ny_; ++b) {
      if (!base_alive_[b]) continue;
      collect_active(b);
    }
  }

  void collect_active(int ci) {
    const Cell& c = cells_[ci];
    if (c.active) {
      active_.push_back(ci);
      return;
    }
    if (c.has_children())
      for (int ch : c.children) collect_active(ch);
  }

  int nx_, ny_;
  double width_, height_;
  int max_level_;
  std::int64_t scale_;
  std::vector<Cell> cells_;
  std::vector<bool> base_alive_;
  std::vector<int> active_;
};

inline Forest create_base_mesh(int nx, int ny, double width, double height, int max_level = 8) {
  return Forest(nx, ny, width, height, max_level);
}

}  // namespace topo
