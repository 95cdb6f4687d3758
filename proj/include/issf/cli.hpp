#pragma once

// simulate / check commands. The tool binary only parses flags and forwards
// here so tests can drive the commands in-process.

#include <issf/io.hpp>
#include <issf/sim.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>

namespace issf::cli {

inline constexpr const char* kVersion = "0.1.0";

inline constexpr int kExitPass = 0;
inline constexpr int kExitFail = 1;
inline constexpr int kExitUsage = 2;

struct RunManifest {
  std::string scenario;
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::string version = kVersion;
  double wall_seconds = 0.0;
};

inline void write_manifest(std::ostream& out, const RunManifest& m) {
  out << "manifest:\n"
      << "  scenario: " << m.scenario << '\n'
      << "  config_path: " << (m.config_path.empty() ? "(none)" : m.config_path) << '\n'
      << "  out_dir: " << m.out_dir << '\n'
      << "  seed: " << m.seed << '\n'
      << "  version: " << m.version << '\n'
      << "  wall_seconds: " << m.wall_seconds << '\n';
}

struct SimulateOptions {
  std::string scenario;
  std::optional<std::string> config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
};

namespace detail {

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

inline void usage(std::ostream& err) {
  err << "usage: issf simulate --scenario <name> [--config <path>] [--out <dir>] [--seed <int>]\n"
      << "       issf check --log <csv> [--config <path>]\n"
      << "scenarios:";
  for (const auto& n : io::preset_names()) err << ' ' << n;
  err << '\n';
}

}  // namespace detail

inline int cmd_simulate(const SimulateOptions& opt, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  const auto base = io::preset(opt.scenario);
  if (!base) {
    err << "unknown scenario: " << opt.scenario << '\n';
    detail::usage(err);
    return kExitUsage;
  }
  sim::ScenarioConfig cfg = *base;
  if (opt.config_path) {
    std::ifstream in(*opt.config_path);
    if (!in) {
      err << "cannot open config " << *opt.config_path << '\n';
      return kExitUsage;
    }
    try {
      cfg = io::parse_config(in, cfg);
    } catch (const io::ConfigError& e) {
      err << e.what() << '\n';
      return kExitUsage;
    }
  }
  if (opt.seed) cfg.seed = *opt.seed;

  const auto start = std::chrono::steady_clock::now();
  const fs::path dir(opt.out_dir);
  fs::create_directories(dir);

  sim::TrajectoryLog log;
  try {
    log = sim::run_scenario(cfg);
  } catch (const std::exception& e) {
    err << "run failed: " << e.what() << '\n';
    return kExitFail;
  }
  const sim::InvariantReport rep = sim::check_invariants(log, cfg);

  {
    std::ofstream f(dir / "trajectory.csv", std::ios::binary);
    io::write_csv(f, log);
  }
  {
    std::ofstream f(dir / "config.txt", std::ios::binary);
    io::write_config(f, cfg);
  }
  std::ostringstream report;
  io::write_report(report, opt.scenario, cfg, rep);
  if (log.abort_reason) report << "  aborted: " << *log.abort_reason << '\n';
  detail::write_file(dir / "report.txt", report.str());
  detail::write_file(dir / "trajectory.svg", io::trajectory_svg(log));
  detail::write_file(dir / "inputs.svg", io::inputs_svg(log));
  detail::write_file(dir / "h.svg", io::h_svg(log));

  RunManifest m;
  m.scenario = opt.scenario;
  m.config_path = opt.config_path.value_or("");
  m.out_dir = dir.string();
  m.seed = cfg.seed;
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  {
    std::ofstream f(dir / "manifest.txt", std::ios::binary);
    write_manifest(f, m);
  }

  out << report.str();
  return rep.passed() ? kExitPass : kExitFail;
}

struct CheckOptions {
  std::string log_path;
  std::optional<std::string> config_path;
};

/// Re-checks a stored trajectory.csv. Without --config, a config.txt next to
/// the log is used when present.
inline int cmd_check(const CheckOptions& opt, std::ostream& out, std::ostream& err) {
  namespace fs = std::filesystem;
  std::optional<std::string> cfg_path = opt.config_path;
  if (!cfg_path) {
    const fs::path sibling = fs::path(opt.log_path).parent_path() / "config.txt";
    if (fs::exists(sibling)) cfg_path = sibling.string();
  }
  sim::ScenarioConfig cfg;
  if (cfg_path) {
    std::ifstream in(*cfg_path);
    if (!in) {
      err << "cannot open config " << *cfg_path << '\n';
      return kExitUsage;
    }
    try {
      cfg = io::parse_config(in, cfg);
    } catch (const io::ConfigError& e) {
      err << e.what() << '\n';
      return kExitUsage;
    }
  }

  std::ifstream in(opt.log_path, std::ios::binary);
  if (!in) {
    err << "cannot open log " << opt.log_path << '\n';
    return kExitUsage;
  }
  sim::TrajectoryLog log;
  log.config = cfg;
  try {
    log.records = io::read_csv(in);
  } catch (const io::SchemaError& e) {
    err << "schema error: " << e.what() << '\n';
    return kExitUsage;
  }
  if (log.records.empty()) {
    err << "schema error: log has no rows\n";
    return kExitUsage;
  }
  const sim::InvariantReport rep = sim::check_invariants(log, cfg);
  io::write_report(out, fs::path(opt.log_path).filename().string(), cfg, rep);
  return rep.passed() ? kExitPass : kExitFail;
}

}  // namespace issf::cli
