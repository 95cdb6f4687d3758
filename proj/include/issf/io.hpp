#pragma once

// File formats: key=value scenario configs, trajectory.csv, the indented
// invariant report, and SVG plots.

#include <issf/sim.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace issf::io {

using sim::ScenarioConfig;
using sim::TrajectoryLog;

class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string& msg)
      : std::runtime_error("config line " + std::to_string(line) + ": " + msg), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

class SchemaError : public std::runtime_error {
 public:
  explicit SchemaError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) return std::nullopt;
  return v;
}

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

// Config -----------------------------------------------------------------------

/// Named presets for the CLI, each starting from the unicycle example defaults.
inline std::optional<ScenarioConfig> preset(std::string_view name) {
  using sim::ControllerKind;
  using sim::PlantKind;
  ScenarioConfig c;
  if (name == "cbf-unbounded") {
    c.controller = ControllerKind::cbf_unbounded;
    c.gains.delta_heading = 0.5;
  } else if (name == "backup-static") {
    c.controller = ControllerKind::backup;
  } else if (name == "backup-moving") {
    c.controller = ControllerKind::backup;
    c.obstacle = unicycle::ObstacleTrack::sinusoidal(2.0, -0.25, 0.1, 2.0 * std::numbers::pi / 5.0);
  } else if (name == "issf-fos") {
    c.controller = ControllerKind::issf_backup;
    c.plant = PlantKind::fos_proxy;
    c.noise = 0.05;
  } else if (name == "pure-backup") {
    c.controller = ControllerKind::pure_backup;
    c.duration = 3.0 * c.gains.T;
  } else if (name == "synthetic-d") {
    c.controller = ControllerKind::issf_backup;
    c.plant = PlantKind::rom_with_injected_d;
    c.B_inj = 0.01;
  } else {
    return std::nullopt;
  }
  return c;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"cbf-unbounded", "backup-static", "backup-moving",
                                              "issf-fos",      "pure-backup",   "synthetic-d"};
  return names;
}

/// Applies key=value lines on top of `base`. '#' starts a comment.
inline ScenarioConfig parse_config(std::istream& in, ScenarioConfig base) {
  using unicycle::ObstacleTrack;
  ScenarioConfig c = std::move(base);
  bool sinusoidal = c.obstacle.kind() == ObstacleTrack::Kind::sinusoidal;
  double xi_O = c.obstacle.xi_O(), eta_bar_O = c.obstacle.eta_bar_O();
  double A_eta = sinusoidal ? c.obstacle.A_eta() : 0.1;
  double Omega = sinusoidal ? c.obstacle.Omega() : 2.0 * std::numbers::pi / 5.0;

  std::map<std::string_view, double*> num{
      {"v_max", &c.bounds.v_max},        {"v_min", &c.bounds.v_min},
      {"omega_max", &c.bounds.omega_max}, {"eta_g", &c.desired.eta_g},
      {"v_g", &c.desired.v_g},           {"K_eta", &c.desired.K_eta},
      {"K_psi", &c.desired.K_psi},       {"R_O", &c.R_O},
      {"xi_O", &xi_O},                   {"eta_bar_O", &eta_bar_O},
      {"A_eta", &A_eta},                 {"Omega", &Omega},
      {"delta", &c.gains.delta_heading}, {"epsilon", &c.gains.epsilon},
      {"gamma", &c.gains.gamma},         {"gamma_b", &c.gains.gamma_b},
      {"Gamma_11", &c.gains.input_weight(0)}, {"Gamma_22", &c.gains.input_weight(1)},
      {"T", &c.gains.T},                 {"sigma", &c.gains.sigma},
      {"sigma_b", &c.gains.sigma_b},     {"p_slack", &c.penalty},
      {"p_slack_b", &c.penalty_b},       {"tau", &c.tau},
      {"noise", &c.noise},               {"B_inj", &c.B_inj},
      {"duration", &c.duration},         {"control_dt", &c.control_dt},
      {"xi_0", &c.x0.xi},                {"eta_0", &c.x0.eta},
      {"psi_0", &c.x0.psi}};
  std::map<std::string_view, int*> ints{
      {"N_c", &c.gains.N_c}, {"substeps", &c.gains.substeps}, {"plant_substeps", &c.plant_substeps}};

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = line;
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = detail::trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ConfigError(lineno, "expected key=value");
    const std::string_view key = detail::trim(s.substr(0, eq));
    const std::string_view val = detail::trim(s.substr(eq + 1));

    if (auto it = num.find(key); it != num.end()) {
      const auto v = detail::parse_double(val);
      if (!v) throw ConfigError(lineno, "bad number for " + std::string(key));
      *it->second = *v;
    } else if (auto jt = ints.find(key); jt != ints.end()) {
      const auto v = detail::parse_double(val);
      if (!v || *v != std::floor(*v)) throw ConfigError(lineno, "bad integer for " + std::string(key));
      *jt->second = static_cast<int>(*v);
    } else if (key == "seed") {
      std::uint64_t v = 0;
      const auto res = std::from_chars(val.data(), val.data() + val.size(), v);
      if (res.ec != std::errc() || res.ptr != val.data() + val.size()) throw ConfigError(lineno, "bad seed");
      c.seed = v;
    } else if (key == "controller") {
      const auto k = sim::parse_controller(val);
      if (!k) throw ConfigError(lineno, "unknown controller " + std::string(val));
      c.controller = *k;
    } else if (key == "plant") {
      const auto k = sim::parse_plant(val);
      if (!k) throw ConfigError(lineno, "unknown plant " + std::string(val));
      c.plant = *k;
    } else if (key == "obstacle") {
      if (val == "static") sinusoidal = false;
      else if (val == "sinusoidal") sinusoidal = true;
      else throw ConfigError(lineno, "obstacle must be static or sinusoidal");
    } else if (key == "disturbance") {
      if (val == "adversarial") c.disturbance = sim::DisturbanceMode::adversarial;
      else if (val == "random") c.disturbance = sim::DisturbanceMode::random;
      else throw ConfigError(lineno, "disturbance must be adversarial or random");
    } else {
      throw ConfigError(lineno, "unknown key " + std::string(key));
    }
  }
  c.obstacle = sinusoidal ? ObstacleTrack::sinusoidal(xi_O, eta_bar_O, A_eta, Omega)
                          : ObstacleTrack::stationary(xi_O, eta_bar_O);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(lineno, e.what());
  }
  return c;
}

inline ScenarioConfig parse_config(std::string_view text, ScenarioConfig base) {
  std::istringstream in{std::string(text)};
  return parse_config(in, std::move(base));
}

/// Writes every key so the file fully reproduces the scenario.
inline void write_config(std::ostream& out, const ScenarioConfig& c) {
  using detail::fmt;
  const bool sinusoidal = c.obstacle.kind() == unicycle::ObstacleTrack::Kind::sinusoidal;
  out << "controller=" << sim::to_string(c.controller) << '\n'
      << "plant=" << sim::to_string(c.plant) << '\n'
      << "obstacle=" << (sinusoidal ? "sinusoidal" : "static") << '\n'
      << "disturbance=" << sim::to_string(c.disturbance) << '\n'
      << "seed=" << c.seed << '\n'
      << "v_max=" << fmt(c.bounds.v_max) << '\n'
      << "v_min=" << fmt(c.bounds.v_min) << '\n'
      << "omega_max=" << fmt(c.bounds.omega_max) << '\n'
      << "eta_g=" << fmt(c.desired.eta_g) << '\n'
      << "v_g=" << fmt(c.desired.v_g) << '\n'
      << "K_eta=" << fmt(c.desired.K_eta) << '\n'
      << "K_psi=" << fmt(c.desired.K_psi) << '\n'
      << "R_O=" << fmt(c.R_O) << '\n'
      << "xi_O=" << fmt(c.obstacle.xi_O()) << '\n'
      << "eta_bar_O=" << fmt(c.obstacle.eta_bar_O()) << '\n';
  if (sinusoidal) out << "A_eta=" << fmt(c.obstacle.A_eta()) << '\n' << "Omega=" << fmt(c.obstacle.Omega()) << '\n';
  out << "delta=" << fmt(c.gains.delta_heading) << '\n'
      << "epsilon=" << fmt(c.gains.epsilon) << '\n'
      << "gamma=" << fmt(c.gains.gamma) << '\n'
      << "gamma_b=" << fmt(c.gains.gamma_b) << '\n'
      << "Gamma_11=" << fmt(c.gains.input_weight(0)) << '\n'
      << "Gamma_22=" << fmt(c.gains.input_weight(1)) << '\n'
      << "T=" << fmt(c.gains.T) << '\n'
      << "N_c=" << c.gains.N_c << '\n'
      << "substeps=" << c.gains.substeps << '\n'
      << "sigma=" << fmt(c.gains.sigma) << '\n'
      << "sigma_b=" << fmt(c.gains.sigma_b) << '\n'
      << "p_slack=" << fmt(c.penalty) << '\n'
      << "p_slack_b=" << fmt(c.penalty_b) << '\n'
      << "tau=" << fmt(c.tau) << '\n'
      << "noise=" << fmt(c.noise) << '\n'
      << "B_inj=" << fmt(c.B_inj) << '\n'
      << "duration=" << fmt(c.duration) << '\n'
      << "control_dt=" << fmt(c.control_dt) << '\n'
      << "plant_substeps=" << c.plant_substeps << '\n'
      << "xi_0=" << fmt(c.x0.xi) << '\n'
      << "eta_0=" << fmt(c.x0.eta) << '\n'
      << "psi_0=" << fmt(c.x0.psi) << '\n';
}

// trajectory.csv -----------------------------------------------------------------

inline const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols{"t",        "xi",      "eta",       "psi",    "v_cmd",
                                             "omega_cmd", "v_act",  "omega_act", "h",      "hbar_min",
                                             "hbar_b",   "d_norm2", "qp_status", "max_slack"};
  return cols;
}

inline void write_csv(std::ostream& out, const TrajectoryLog& log) {
  using detail::fmt;
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const auto& r : log.records) {
    out << fmt(r.t) << ',' << fmt(r.pose.xi) << ',' << fmt(r.pose.eta) << ',' << fmt(r.pose.psi) << ','
        << fmt(r.u_cmd.v) << ',' << fmt(r.u_cmd.omega) << ',' << fmt(r.u_act.v) << ',' << fmt(r.u_act.omega)
        << ',' << fmt(r.h) << ',' << fmt(r.hbar_min) << ',' << fmt(r.hbar_b) << ',' << fmt(r.d_norm2) << ','
        << r.qp_status << ',' << fmt(r.max_slack) << '\n';
  }
}

/// Parses a trajectory.csv. Columns may appear in any order; a missing
/// column raises SchemaError naming it.
inline std::vector<sim::LogRecord> read_csv(std::istream& in) {
  std::string header;
  if (!std::getline(in, header) || detail::trim(header).empty()) throw SchemaError("empty CSV");
  std::vector<std::string> names;
  {
    std::stringstream ss(header);
    std::string tok;
    while (std::getline(ss, tok, ',')) names.emplace_back(detail::trim(tok));
  }
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < names.size(); ++i) index[names[i]] = i;
  for (const auto& col : csv_columns()) {
    if (!index.count(col)) throw SchemaError("missing column " + col);
  }

  std::vector<sim::LogRecord> recs;
  std::string line;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) cells.emplace_back(detail::trim(tok));
    if (cells.size() != names.size())
      throw SchemaError("line " + std::to_string(lineno) + ": expected " + std::to_string(names.size()) + " cells");
    const auto num = [&](const char* col) {
      const auto v = detail::parse_double(cells[index.at(col)]);
      if (!v) throw SchemaError("line " + std::to_string(lineno) + ": bad number in column " + col);
      return *v;
    };
    sim::LogRecord r;
    r.t = num("t");
    r.pose = {num("xi"), num("eta"), num("psi")};
    r.u_cmd = {num("v_cmd"), num("omega_cmd")};
    r.u_act = {num("v_act"), num("omega_act")};
    r.h = num("h");
    r.hbar_min = num("hbar_min");
    r.hbar_b = num("hbar_b");
    r.d_norm2 = num("d_norm2");
    r.qp_status = cells[index.at("qp_status")];
    r.max_slack = num("max_slack");
    recs.push_back(std::move(r));
  }
  return recs;
}

// Report -------------------------------------------------------------------------

inline void write_report(std::ostream& out, const std::string& scenario, const ScenarioConfig& cfg,
                         const sim::InvariantReport& rep) {
  using detail::fmt;
  out << "report:\n"
      << "  scenario: " << scenario << '\n'
      << "  controller: " << sim::to_string(cfg.controller) << '\n'
      << "  plant: " << sim::to_string(cfg.plant) << '\n'
      << "  steps: " << rep.steps << '\n'
      << "  passed: " << (rep.passed() ? "true" : "false") << '\n'
      << "  input_bounds_violated: " << (rep.input_bounds_violated ? "true" : "false") << '\n'
      << "  metrics:\n"
      << "    min_h: " << fmt(rep.min_h) << '\n'
      << "    min_hbar: " << fmt(rep.min_hbar) << '\n'
      << "    min_hbar_b: " << fmt(rep.min_hbar_b) << '\n'
      << "    max_box_violation: " << fmt(rep.max_box_violation) << '\n'
      << "    max_slack: " << fmt(rep.max_slack) << '\n'
      << "    qp_faults: " << rep.qp_faults << '\n'
      << "    h_threshold: " << fmt(rep.h_threshold) << '\n'
      << "  discrepancy_fit:\n"
      << "    A: " << fmt(rep.fit.A) << '\n'
      << "    lambda: " << fmt(rep.fit.lambda) << '\n'
      << "    B: " << fmt(rep.fit.B) << '\n'
      << "    residual: " << fmt(rep.fit.residual) << '\n'
      << "  cd_set:\n"
      << "    applicable: " << (rep.cd_applicable ? "true" : "false") << '\n';
  if (rep.cd_applicable) {
    out << "    initial_margin: " << fmt(rep.cd_initial_margin) << '\n'
        << "    worst_margin: " << fmt(rep.cd_worst_margin) << '\n';
  }
  if (!rep.cd_note.empty()) out << "    note: " << rep.cd_note << '\n';
  out << "  checks:\n";
  for (const auto& c : rep.checks) out << "    " << c.name << ": " << sim::to_string(c.verdict) << '\n';
  const auto failed = rep.failures();
  out << "  failed:";
  if (failed.empty()) out << " none";
  for (std::size_t i = 0; i < failed.size(); ++i) out << (i ? ", " : " ") << failed[i];
  out << '\n';
}

// SVG ----------------------------------------------------------------------------

struct Series {
  std::string name;
  std::string color;
  std::vector<double> x;
  std::vector<double> y;
};

struct HLine {
  double y;
  std::string color;
};

struct Circle {
  double cx, cy, r;
};

/// Minimal line chart: one <path> per series, dashed <line> per reference
/// level, optional circles drawn in data coordinates.
inline std::string svg_plot(const std::string& title, const std::vector<Series>& series,
                            const std::vector<HLine>& levels = {}, const std::vector<Circle>& circles = {},
                            bool equal_aspect = false) {
  constexpr double W = 640, H = 400, pad = 48;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  const auto grow = [&](double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) return;
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
  };
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) grow(s.x[i], s.y[i]);
  for (const auto& c : circles) {
    grow(c.cx - c.r, c.cy - c.r);
    grow(c.cx + c.r, c.cy + c.r);
  }
  for (const auto& l : levels) {
    if (std::isfinite(x0)) grow(x0, l.y);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x1 = x0 + 1;
  if (y1 - y0 < 1e-12) y1 = y0 + 1;
  double sx = (W - 2 * pad) / (x1 - x0), sy = (H - 2 * pad) / (y1 - y0);
  if (equal_aspect) sx = sy = std::min(sx, sy);
  const auto X = [&](double x) { return pad + (x - x0) * sx; };
  const auto Y = [&](double y) { return H - pad - (y - y0) * sy; };

  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(2);
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\">\n"
    << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
    << "<text x=\"" << pad << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n"
    << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << W - 2 * pad << "\" height=\"" << H - 2 * pad
    << "\" fill=\"none\" stroke=\"#888\"/>\n";
  for (const auto& c : circles) {
    o << "<circle cx=\"" << X(c.cx) << "\" cy=\"" << Y(c.cy) << "\" r=\"" << c.r * sx
      << "\" fill=\"#f4c7c3\" stroke=\"#c0392b\"/>\n";
  }
  for (const auto& l : levels) {
    o << "<line x1=\"" << X(x0) << "\" y1=\"" << Y(l.y) << "\" x2=\"" << X(x1) << "\" y2=\"" << Y(l.y)
      << "\" stroke=\"" << l.color << "\" stroke-dasharray=\"6 4\"/>\n";
  }
  for (const auto& s : series) {
    o << "<path fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" data-series=\"" << s.name
      << "\" d=\"";
    bool pen = false;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
        pen = false;
        continue;
      }
      o << (pen ? " L" : " M") << X(s.x[i]) << ' ' << Y(s.y[i]);
      pen = true;
    }
    o << "\"/>\n";
  }
  double ly = pad + 14;
  for (const auto& s : series) {
    o << "<text x=\"" << W - pad - 110 << "\" y=\"" << ly << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\""
      << s.color << "\">" << s.name << "</text>\n";
    ly += 14;
  }
  o << "</svg>\n";
  return o.str();
}

inline std::string trajectory_svg(const TrajectoryLog& log) {
  Series path{"trajectory", "#1f77b4", {}, {}};
  for (const auto& r : log.records) {
    path.x.push_back(r.pose.xi);
    path.y.push_back(r.pose.eta);
  }
  const auto& ob = log.config.obstacle;
  return svg_plot("trajectory (xi, eta)", {path}, {}, {{ob.xi_O(), ob.eta_bar_O(), log.config.R_O}}, true);
}

inline std::string inputs_svg(const TrajectoryLog& log) {
  Series v{"v_cmd", "#1f77b4", {}, {}}, w{"omega_cmd", "#ff7f0e", {}, {}};
  for (const auto& r : log.records) {
    v.x.push_back(r.t);
    v.y.push_back(r.u_cmd.v);
    w.x.push_back(r.t);
    w.y.push_back(r.u_cmd.omega);
  }
  const auto& b = log.config.bounds;
  return svg_plot("inputs", {v, w},
                  {{b.v_min, "#1f77b4"}, {b.v_max, "#1f77b4"}, {-b.omega_max, "#ff7f0e"}, {b.omega_max, "#ff7f0e"}});
}

inline std::string h_svg(const TrajectoryLog& log) {
  Series h{"h", "#2ca02c", {}, {}};
  for (const auto& r : log.records) {
    h.x.push_back(r.t);
    h.y.push_back(r.h);
  }
  return svg_plot("h(t)", {h}, {{0.0, "#c0392b"}});
}

}  // namespace issf::io
