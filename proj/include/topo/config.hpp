#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace topo {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat "section.key = value" run configuration. Defaults depend on the
// chosen preset; every key may be overridden in the file.
struct RunConfig {
  std::string preset;  // "cantilever" | "ubeam"

  // problem
  int iterations = 150;
  double volume_fraction = 0.5;
  double stress_limit = 0.5;
  double pnorm_p = 8.0;

  // geometry / base mesh
  double width = 2.0, height = 1.0;
  double cut_x = 0.5, cut_y = 0.5;  // ubeam: remove cells with centroid beyond both
  int base_nx = 20, base_ny = 10;
  int init_level = 0, max_level = 4;

  // material
  double lambda = 2.66, mu = 0.71;

  // simp
  double simp_exponent = 3.0, simp_rho_min = 1e-6;

  // filter / projection / relaxation
  double filter_radius = 0.1;
  double robin_coeff = 0.5;
  double beta0 = 1.0, beta_max = 16.0, eta = 0.5;
  int beta_double_every = 50;
  double epsilon = 0.1;

  // adaptivity
  std::string criterion = "cnf";  // cnf | dens | vnm | none
  double c_refine = 0.25, c_coarsen = 0.01;
  int adapt_interval = 5;
  double dens_lo = 0.2, dens_hi = 0.8, dens_void = 0.01, dens_solid = 0.99;

  // load
  double load_magnitude = 0.001;  // traction density on the loaded patch
  double load_patch = 0.1;        // patch width

  // solver
  int load_steps = 1, max_newton = 50;
  double newton_tol_rel = 1e-9, newton_tol_abs = 1e-12;

  // optimizer
  double move_limit = 0.2;

  // output
  std::string output_dir = "out";
  int snapshot_interval = 50;
};

namespace detail {

inline void apply_preset_defaults(RunConfig& c) {
  if (c.preset == "cantilever") {
    c.width = 2.0;
    c.height = 1.0;
    c.base_nx = 20;
    c.base_ny = 10;
    c.init_level = 0;
    c.max_level = 4;
    c.filter_radius = 0.1;
    c.load_magnitude = 0.001;
    c.load_patch = 0.1;
  } else if (c.preset == "ubeam") {
    c.width = 1.0;
    c.height = 2.0;
    c.base_nx = 10;
    c.base_ny = 20;
    c.init_level = 1;
    c.max_level = 4;
    c.filter_radius = 0.2;
    c.load_magnitude = 0.02;
    c.load_patch = 0.1;
  } else {
    throw ConfigError("problem.preset: unknown preset '" + c.preset +
                      "' (expected cantilever or ubeam)");
  }
}

template <class T>
T parse_value(const std::string& key, const std::string& text);

template <>
inline double parse_value<double>(const std::string& key, const std::string& text) {
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(text, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  if (pos != text.size()) throw ConfigError(key + ": expected a number, got '" + text + "'");
  return v;
}

template <>
inline int parse_value<int>(const std::string& key, const std::string& text) {
  std::size_t pos = 0;
  int v;
  try {
    v = std::stoi(text, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + text + "'");
  }
  if (pos != text.size()) throw ConfigError(key + ": expected an integer, got '" + text + "'");
  return v;
}

template <>
inline std::string parse_value<std::string>(const std::string&, const std::string& text) {
  return text;
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

inline void validate(const RunConfig& c) {
  auto bad = [](const std::string& m) { throw ConfigError(m); };
  if (c.iterations < 1) bad("problem.iterations must be >= 1");
  if (c.volume_fraction <= 0 || c.volume_fraction > 1)
    bad("problem.volume_fraction must lie in (0, 1]");
  if (c.stress_limit <= 0) bad("problem.stress_limit must be positive");
  if (c.pnorm_p < 1) bad("problem.pnorm_p must be >= 1");
  if (c.width <= 0 || c.height <= 0) bad("geometry dimensions must be positive");
  if (c.base_nx < 1 || c.base_ny < 1) bad("mesh.base_nx/base_ny must be >= 1");
  if (c.init_level < 0 || c.max_level < c.init_level)
    bad("mesh.init_level/max_level must satisfy 0 <= init <= max");
  if (c.lambda <= 0 || c.mu <= 0) bad("material constants must be positive");
  if (c.filter_radius <= 0) bad("filter.radius must be positive");
  if (c.beta0 < 1 || c.beta_max < c.beta0) bad("project.beta0/beta_max must satisfy 1 <= beta0 <= beta_max");
  if (c.eta <= 0 || c.eta >= 1) bad("project.eta must lie in (0, 1)");
  if (c.beta_double_every < 1) bad("project.double_every must be >= 1");
  if (c.epsilon <= 0 || c.epsilon > 1) bad("relax.epsilon must lie in (0, 1]");
  if (c.criterion != "cnf" && c.criterion != "dens" && c.criterion != "vnm" &&
      c.criterion != "none")
    bad("adapt.criterion must be one of cnf, dens, vnm, none");
  if (c.c_refine <= c.c_coarsen || c.c_refine > 1 || c.c_coarsen < 0)
    bad("adapt thresholds must satisfy 0 <= c_coarsen < c_refine <= 1");
  if (c.adapt_interval < 1) bad("adapt.interval must be >= 1");
  if (c.load_patch <= 0) bad("load.patch must be positive");
  if (c.load_steps < 1 || c.max_newton < 1) bad("solver steps must be >= 1");
  if (c.move_limit <= 0 || c.move_limit > 1) bad("optimizer.move_limit must lie in (0, 1]");
  if (c.snapshot_interval < 1) bad("output.snapshot_interval must be >= 1");
}

// Parses a config file: '#' comments, blank lines, "section.key = value".
inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);

  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    entries.emplace_back(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  if (entries.empty()) throw ConfigError(path + ": empty config (problem.preset is required)");

  RunConfig c;
  for (auto& [k, v] : entries)
    if (k == "problem.preset") c.preset = v;
  if (c.preset.empty()) throw ConfigError(path + ": missing required key problem.preset");
  detail::apply_preset_defaults(c);

  for (auto& [key, val] : entries) {
    using detail::parse_value;
    if (key == "problem.preset") continue;
    else if (key == "problem.iterations") c.iterations = parse_value<int>(key, val);
    else if (key == "problem.volume_fraction") c.volume_fraction = parse_value<double>(key, val);
    else if (key == "problem.stress_limit") c.stress_limit = parse_value<double>(key, val);
    else if (key == "problem.pnorm_p") c.pnorm_p = parse_value<double>(key, val);
    else if (key == "geometry.width") c.width = parse_value<double>(key, val);
    else if (key == "geometry.height") c.height = parse_value<double>(key, val);
    else if (key == "geometry.cut_x") c.cut_x = parse_value<double>(key, val);
    else if (key == "geometry.cut_y") c.cut_y = parse_value<double>(key, val);
    else if (key == "mesh.base_nx") c.base_nx = parse_value<int>(key, val);
    else if (key == "mesh.base_ny") c.base_ny = parse_value<int>(key, val);
    else if (key == "mesh.init_level") c.init_level = parse_value<int>(key, val);
    else if (key == "mesh.max_level") c.max_level = parse_value<int>(key, val);
    else if (key == "material.lambda") c.lambda = parse_value<double>(key, val);
    else if (key == "material.mu") c.mu = parse_value<double>(key, val);
    else if (key == "simp.exponent") c.simp_exponent = parse_value<double>(key, val);
    else if (key == "simp.rho_min") c.simp_rho_min = parse_value<double>(key, val);
    else if (key == "filter.radius") c.filter_radius = parse_value<double>(key, val);
    else if (key == "filter.robin_coeff") c.robin_coeff = parse_value<double>(key, val);
    else if (key == "project.beta0") c.beta0 = parse_value<double>(key, val);
    else if (key == "project.beta_max") c.beta_max = parse_value<double>(key, val);
    else if (key == "project.eta") c.eta = parse_value<double>(key, val);
    else if (key == "project.double_every") c.beta_double_every = parse_value<int>(key, val);
    else if (key == "relax.epsilon") c.epsilon = parse_value<double>(key, val);
    else if (key == "adapt.criterion") c.criterion = parse_value<std::string>(key, val);
    else if (key == "adapt.c_refine") c.c_refine = parse_value<double>(key, val);
    else if (key == "adapt.c_coarsen") c.c_coarsen = parse_value<double>(key, val);
    else if (key == "adapt.interval") c.adapt_interval = parse_value<int>(key, val);
    else if (key == "adapt.dens_lo") c.dens_lo = parse_value<double>(key, val);
    else if (key == "adapt.dens_hi") c.dens_hi = parse_value<double>(key, val);
    else if (key == "adapt.dens_void") c.dens_void = parse_value<double>(key, val);
    else if (key == "adapt.dens_solid") c.dens_solid = parse_value<double>(key, val);
    else if (key == "load.magnitude") c.load_magnitude = parse_value<double>(key, val);
    else if (key == "load.patch") c.load_patch = parse_value<double>(key, val);
    else if (key == "solver.load_steps") c.load_steps = parse_value<int>(key, val);
    else if (key == "solver.max_newton") c.max_newton = parse_value<int>(key, val);
    else if (key == "solver.newton_tol_rel") c.newton_tol_rel = parse_value<double>(key, val);
    else if (key == "solver.newton_tol_abs") c.newton_tol_abs = parse_value<double>(key, val);
    else if (key == "optimizer.move_limit") c.move_limit = parse_value<double>(key, val);
    else if (key == "output.dir") c.output_dir = parse_value<std::string>(key, val);
    else if (key == "output.snapshot_interval") c.snapshot_interval = parse_value<int>(key, val);
    else throw ConfigError(path + ": unknown key '" + key + "'");
  }
  validate(c);
  return c;
}

// Resolved configuration in the same format load_config reads.
inline std::string echo_config(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "problem.preset = " << c.preset << "\n"
     << "problem.iterations = " << c.iterations << "\n"
     << "problem.volume_fraction = " << c.volume_fraction << "\n"
     << "problem.stress_limit = " << c.stress_limit << "\n"
     << "problem.pnorm_p = " << c.pnorm_p << "\n"
     << "geometry.width = " << c.width << "\n"
     << "geometry.height = " << c.height << "\n"
     << "geometry.cut_x = " << c.cut_x << "\n"
     << "geometry.cut_y = " << c.cut_y << "\n"
     << "mesh.base_nx = " << c.base_nx << "\n"
     << "mesh.base_ny = " << c.base_ny << "\n"
     << "mesh.init_level = " << c.init_level << "\n"
     << "mesh.max_level = " << c.max_level << "\n"
     << "material.lambda = " << c.lambda << "\n"
     << "material.mu = " << c.mu << "\n"
     << "simp.exponent = " << c.simp_exponent << "\n"
     << "simp.rho_min = " << c.simp_rho_min << "\n"
     << "filter.radius = " << c.filter_radius << "\n"
     << "filter.robin_coeff = " << c.robin_coeff << "\n"
     << "project.beta0 = " << c.beta0 << "\n"
     << "project.beta_max = " << c.beta_max << "\n"
     << "project.eta = " << c.eta << "\n"
     << "project.double_every = " << c.beta_double_every << "\n"
     << "relax.epsilon = " << c.epsilon << "\n"
     << "adapt.criterion = " << c.criterion << "\n"
     << "adapt.c_refine = " << c.c_refine << "\n"
     << "adapt.c_coarsen = " << c.c_coarsen << "\n"
     << "adapt.interval = " << c.adapt_interval << "\n"
     << "adapt.dens_lo = " << c.dens_lo << "\n"
     << "adapt.dens_hi = " << c.dens_hi << "\n"
     << "adapt.dens_void = " << c.dens_void << "\n"
     << "adapt.dens_solid = " << c.dens_solid << "\n"
     << "load.magnitude = " << c.load_magnitude << "\n"
     << "load.patch = " << c.load_patch << "\n"
     << "solver.load_steps = " << c.load_steps << "\n"
     << "solver.max_newton = " << c.max_newton << "\n"
     << "solver.newton_tol_rel = " << c.newton_tol_rel << "\n"
     << "solver.newton_tol_abs = " << c.newton_tol_abs << "\n"
     << "optimizer.move_limit = " << c.move_limit << "\n"
     << "output.dir = " << c.output_dir << "\n"
     << "output.snapshot_interval = " << c.snapshot_interval << "\n";
  return os.str();
}

}  // namespace topo
