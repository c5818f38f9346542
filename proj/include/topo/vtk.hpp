#pragma once

#include <array>
#include <fstream>
#include <iomanip>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "topo/adaptivity.hpp"
#include "topo/dofmap.hpp"
#include "topo/mesh.hpp"

namespace topo {

// Quad soup for output: 4 corner coordinates per active cell. Hanging
// vertices are simply duplicated per cell.
struct VtkMesh {
  std::vector<std::array<double, 8>> cells;  // x0,y0 x1,y1 x2,y2 x3,y3 (CCW)
};

inline VtkMesh vtk_mesh(const Forest& forest) {
  VtkMesh m;
  m.cells.reserve(forest.num_active());
  for (int ci : forest.active_cells()) {
    const Cell& c = forest.cell(ci);
    double x0 = forest.cell_x0(c), y0 = forest.cell_y0(c);
    double x1 = x0 + forest.cell_hx(c), y1 = y0 + forest.cell_hy(c);
    m.cells.push_back({x0, y0, x1, y0, x1, y1, x0, y1});
  }
  return m;
}

// XML unstructured-grid writer (ASCII VTU).
inline void write_vtu(const std::string& path, const VtkMesh& mesh,
                      const std::map<std::string, std::vector<double>>& cell_data = {},
                      const std::map<std::string, std::vector<std::array<double, 2>>>&
                          corner_vectors = {}) {
  const std::size_t nc = mesh.cells.size();
  for (auto& [name, v] : cell_data)
    if (v.size() != nc) throw std::invalid_argument("write_vtu: cell data size mismatch: " + name);
  for (auto& [name, v] : corner_vectors)
    if (v.size() != 4 * nc)
      throw std::invalid_argument("write_vtu: point data size mismatch: " + name);

  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_vtu: cannot open " + path);
  os << std::setprecision(12);
  os << "<?xml version=\"1.0\"?>\n"
     << "<VTKFile type=\"UnstructuredGrid\" version=\"0.1\" byte_order=\"LittleEndian\">\n"
     << "<UnstructuredGrid>\n"
     << "<Piece NumberOfPoints=\"" << 4 * nc << "\" NumberOfCells=\"" << nc << "\">\n";
  os << "<Points>\n<DataArray type=\"Float64\" NumberOfComponents=\"3\" format=\"ascii\">\n";
  for (const auto& c : mesh.cells)
    for (int v = 0; v < 4; ++v) os << c[2 * v] << " " << c[2 * v + 1] << " 0\n";
  os << "</DataArray>\n</Points>\n";
  os << "<Cells>\n<DataArray type=\"Int32\" Name=\"connectivity\" format=\"ascii\">\n";
  for (std::size_t k = 0; k < nc; ++k)
    os << 4 * k << " " << 4 * k + 1 << " " << 4 * k + 2 << " " << 4 * k + 3 << "\n";
  os << "</DataArray>\n<DataArray type=\"Int32\" Name=\"offsets\" format=\"ascii\">\n";
  for (std::size_t k = 0; k < nc; ++k) os << 4 * (k + 1) << "\n";
  os << "</DataArray>\n<DataArray type=\"UInt8\" Name=\"types\" format=\"ascii\">\n";
  for (std::size_t k = 0; k < nc; ++k) os << "9\n";  // VTK_QUAD
  os << "</DataArray>\n</Cells>\n";
  os << "<CellData>\n";
  for (auto& [name, v] : cell_data) {
    os << "<DataArray type=\"Float64\" Name=\"" << name << "\" format=\"ascii\">\n";
    for (double x : v) os << x << "\n";
    os << "</DataArray>\n";
  }
  os << "</CellData>\n<PointData>\n";
  for (auto& [name, v] : corner_vectors) {
    os << "<DataArray type=\"Float64\" Name=\"" << name
       << "\" NumberOfComponents=\"3\" format=\"ascii\">\n";
    for (auto& p : v) os << p[0] << " " << p[1] << " 0\n";
    os << "</DataArray>\n";
  }
  os << "</PointData>\n</Piece>\n</UnstructuredGrid>\n</VTKFile>\n";
}

// Nodal vector field sampled at the 4 corners of every cell.
inline std::vector<std::array<double, 2>> corner_vector_field(const Forest& forest,
                                                              const DofMap& dofmap,
                                                              const Eigen::VectorXd& nodal2) {
  static constexpr int kCorners[4] = {0, 2, 6, 8};
  std::vector<std::array<double, 2>> out;
  out.reserve(4 * forest.num_active());
  for (int k = 0; k < forest.num_active(); ++k)
    for (int corner : kCorners) {
      int node = dofmap.cell_nodes(k)[corner];
      out.push_back({nodal2[2 * node], nodal2[2 * node + 1]});
    }
  return out;
}

// -------------------------------------------------------------------------
// Plain-text snapshot, convertible to VTU by the `export` subcommand without
// re-running the solver.
// -------------------------------------------------------------------------

struct Snapshot {
  // Per cell: geometry and scalar fields.
  std::vector<std::array<double, 4>> geom;  // x0 y0 hx hy
  std::vector<double> rho, rho_tilde, rho_hat, vm;
  // Per cell: configurational-force vector at each of its 4 corners.
  std::vector<std::array<double, 2>> corner_cnf;
};

inline void write_snapshot(const std::string& path, const Snapshot& s) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_snapshot: cannot open " + path);
  os << std::setprecision(17);
  os << "topo-snapshot 1\n" << "cells " << s.geom.size() << "\n";
  for (std::size_t k = 0; k < s.geom.size(); ++k) {
    os << s.geom[k][0] << " " << s.geom[k][1] << " " << s.geom[k][2] << " " << s.geom[k][3]
       << " " << s.rho[k] << " " << s.rho_tilde[k] << " " << s.rho_hat[k] << " " << s.vm[k];
    for (int v = 0; v < 4; ++v)
      os << " " << s.corner_cnf[4 * k + v][0] << " " << s.corner_cnf[4 * k + v][1];
    os << "\n";
  }
}

inline Snapshot read_snapshot(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_snapshot: cannot open " + path);
  std::string magic;
  int version;
  is >> magic >> version;
  if (magic != "topo-snapshot" || version != 1)
    throw std::runtime_error("read_snapshot: not a snapshot file: " + path);
  std::string tag;
  std::size_t n;
  is >> tag >> n;
  if (tag != "cells") throw std::runtime_error("read_snapshot: malformed file");
  Snapshot s;
  s.geom.resize(n);
  s.rho.resize(n);
  s.rho_tilde.resize(n);
  s.rho_hat.resize(n);
  s.vm.resize(n);
  s.corner_cnf.resize(4 * n);
  for (std::size_t k = 0; k < n; ++k) {
    is >> s.geom[k][0] >> s.geom[k][1] >> s.geom[k][2] >> s.geom[k][3] >> s.rho[k] >>
        s.rho_tilde[k] >> s.rho_hat[k] >> s.vm[k];
    for (int v = 0; v < 4; ++v) is >> s.corner_cnf[4 * k + v][0] >> s.corner_cnf[4 * k + v][1];
  }
  if (!is) throw std::runtime_error("read_snapshot: truncated file");
  return s;
}

inline VtkMesh snapshot_mesh(const Snapshot& s) {
  VtkMesh m;
  m.cells.reserve(s.geom.size());
  for (auto& g : s.geom)
    m.cells.push_back({g[0], g[1], g[0] + g[2], g[1], g[0] + g[2], g[1] + g[3], g[0], g[1] + g[3]});
  return m;
}

}  // namespace topo
