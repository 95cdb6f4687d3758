#pragma once

// Closed-loop scenario execution for the unicycle obstacle problem, the
// discrepancy envelope fit ||d||^2 <= A exp(-lambda t) + B, and invariant
// checks (safe set, input box, tightened time-varying set C_d(t)).

#include <issf/flow.hpp>
#include <issf/qp.hpp>
#include <issf/safety.hpp>
#include <issf/unicycle.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace issf::sim {

using unicycle::DesiredParams;
using unicycle::FosState;
using unicycle::Input2;
using unicycle::InputBounds;
using unicycle::ObstacleTrack;
using unicycle::State3;

enum class ControllerKind { cbf_unbounded, cbf_bounded, backup, issf_backup, pure_backup };
enum class PlantKind { rom, fos_proxy, rom_with_injected_d };
enum class DisturbanceMode { adversarial, random };

inline const char* to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::cbf_unbounded: return "cbf-unbounded";
    case ControllerKind::cbf_bounded: return "cbf-bounded";
    case ControllerKind::backup: return "backup";
    case ControllerKind::issf_backup: return "issf-backup";
    case ControllerKind::pure_backup: return "pure-backup";
  }
  return "?";
}

inline const char* to_string(PlantKind k) {
  switch (k) {
    case PlantKind::rom: return "rom";
    case PlantKind::fos_proxy: return "fos-proxy";
    case PlantKind::rom_with_injected_d: return "rom-with-injected-d";
  }
  return "?";
}

inline const char* to_string(DisturbanceMode m) {
  return m == DisturbanceMode::adversarial ? "adversarial" : "random";
}

inline std::optional<ControllerKind> parse_controller(std::string_view s) {
  for (auto k : {ControllerKind::cbf_unbounded, ControllerKind::cbf_bounded, ControllerKind::backup,
                 ControllerKind::issf_backup, ControllerKind::pure_backup}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

inline std::optional<PlantKind> parse_plant(std::string_view s) {
  for (auto k : {PlantKind::rom, PlantKind::fos_proxy, PlantKind::rom_with_injected_d}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

struct ScenarioConfig {
  ControllerKind controller = ControllerKind::backup;
  PlantKind plant = PlantKind::rom;
  ObstacleTrack obstacle = ObstacleTrack::stationary(2.0, -0.25);
  double R_O = 0.75;
  SafetyGains gains;
  DesiredParams desired;
  InputBounds bounds;
  State3 x0;
  double duration = 40.0;
  double control_dt = 0.05;
  int plant_substeps = 10;
  double tau = 0.5;
  double noise = 0.0;
  double B_inj = 0.0;
  DisturbanceMode disturbance = DisturbanceMode::adversarial;
  double penalty = 1e18;
  double penalty_b = 1e18;
  std::uint64_t seed = 0;

  int steps() const { return static_cast<int>(std::lround(duration / control_dt)); }

  void validate() const {
    if (!(duration > 0.0) || !(control_dt > 0.0)) throw std::invalid_argument("duration and control_dt must be positive");
    if (std::abs(steps() * control_dt - duration) > 1e-9 * duration)
      throw std::invalid_argument("control_dt must divide duration");
    if (plant_substeps < 1) throw std::invalid_argument("plant substeps must be >= 1");
    if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
    if (noise < 0.0 || B_inj < 0.0) throw std::invalid_argument("noise and B_inj must be nonnegative");
    if (!(R_O > 0.0)) throw std::invalid_argument("R_O must be positive");
    if (bounds.v_min > bounds.v_max || bounds.omega_max < 0.0) throw std::invalid_argument("invalid input bounds");
    gains.validate();
  }
};

/// Status strings: optimal, infeasible, max-iterations, fault (exception in
/// the controller), none (no QP solved).
struct LogRecord {
  double t = 0.0;
  State3 pose;
  Input2 u_cmd;
  Input2 u_act;
  double h = 0.0;
  double hbar_min = 0.0;
  double hbar_b = 0.0;
  Eigen::Vector3d d = Eigen::Vector3d::Zero();
  double d_norm2 = 0.0;
  std::string qp_status = "none";
  double max_slack = 0.0;
  int active_rows = 0;
};

struct TrajectoryLog {
  ScenarioConfig config;
  std::vector<LogRecord> records;
  std::optional<std::string> abort_reason;
};

namespace detail {

inline bool qp_ran(const std::string& status) { return status != "none"; }

inline int active_row_count(const QpSolution& s) {
  int n = 0;
  for (Eigen::Index i = 0; i < s.row_multipliers.size(); ++i) n += s.row_multipliers(i) > 0.0;
  return n;
}

}  // namespace detail

/// Runs a closed loop with zero-order-hold control at control_dt. QP faults
/// hold the previous input and are recorded; divergence aborts with a
/// partial log.
inline TrajectoryLog run_scenario(const ScenarioConfig& cfg) {
  cfg.validate();
  const auto model = unicycle::model();
  const auto spec = unicycle::make_safety_spec(cfg.obstacle, cfg.gains.delta_heading, cfg.R_O);
  const auto bspec = unicycle::make_backup_spec(cfg.obstacle, cfg.bounds, cfg.gains.epsilon);
  const InputBox<2> box = cfg.bounds.box();

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  TrajectoryLog log;
  log.config = cfg;
  const int steps = cfg.steps();
  log.records.reserve(static_cast<std::size_t>(steps) + 1);

  FosState plant{cfg.x0, 0.0, 0.0, {}};
  Input2 u_prev = unicycle::backup_policy(cfg.x0, 0.0, cfg.obstacle, cfg.bounds, cfg.gains.epsilon).u;
  const double sqrt_b = std::sqrt(cfg.B_inj);

  for (int k = 0; k <= steps; ++k) {
    const double t = k * cfg.control_dt;
    const State3 x = plant.pose;
    const Eigen::Vector3d xv = x.vec();
    LogRecord rec;
    rec.t = t;
    rec.pose = x;
    Input2 u = u_prev;
    try {
      const Eigen::Vector2d k_d = unicycle::desired_controller(x, cfg.desired).vec();
      std::optional<QpSolution> sol;
      std::optional<Membership> mem;
      switch (cfg.controller) {
        case ControllerKind::cbf_unbounded:
          sol = cbf_qp_controller<3, 2>(xv, t, k_d, model, spec, cfg.gains, InputBox<2>::unbounded());
          break;
        case ControllerKind::cbf_bounded:
          sol = cbf_qp_controller<3, 2>(xv, t, k_d, model, spec, cfg.gains, box);
          break;
        case ControllerKind::backup: {
          auto r = backup_controller<3, 2>(xv, t, k_d, model, spec, bspec, cfg.gains, box);
          sol = std::move(r.solution);
          mem = r.si;
          break;
        }
        case ControllerKind::issf_backup: {
          auto r = issf_backup_controller<3, 2>(xv, t, k_d, model, spec, bspec, cfg.gains, box, cfg.penalty,
                                                cfg.penalty_b);
          sol = std::move(r.solution);
          mem = r.si;
          break;
        }
        case ControllerKind::pure_backup:
          u = Input2::from(bspec.k_b(xv, t));
          break;
      }
      if (!mem) mem = membership_SI(backup_flow<3, 2>(xv, t, model, bspec, cfg.gains), spec, bspec);
      rec.hbar_min = mem->hbar_min;
      rec.hbar_b = mem->hbar_b;
      rec.h = spec.h(xv, t).value;
      if (sol) {
        rec.qp_status = to_string(sol->status);
        rec.max_slack = sol->max_slack();
        rec.active_rows = detail::active_row_count(*sol);
        if (sol->optimal()) u = Input2::from(sol->u);
      }
    } catch (const std::exception&) {
      rec.qp_status = "fault";
      rec.h = std::numeric_limits<double>::quiet_NaN();
      try {
        rec.h = spec.h(xv, t).value;
      } catch (const std::exception&) {
      }
    }
    rec.u_cmd = u;

    // Disturbance realized over [t, t + dt].
    Eigen::Vector3d d_random = Eigen::Vector3d::Zero();
    switch (cfg.plant) {
      case PlantKind::rom:
        rec.u_act = u;
        break;
      case PlantKind::fos_proxy:
        plant.rate_noise = cfg.noise > 0.0 ? Input2{cfg.noise * unit(rng), cfg.noise * unit(rng)} : Input2{};
        rec.u_act = plant.realized_rates();
        rec.d = unicycle::discrepancy(plant, u);
        break;
      case PlantKind::rom_with_injected_d:
        rec.u_act = u;
        if (cfg.disturbance == DisturbanceMode::random) {
          Eigen::Vector3d dir(normal(rng), normal(rng), normal(rng));
          d_random = sqrt_b * dir / dir.norm();
          rec.d = d_random;
        } else {
          const Eigen::Vector3d g = spec.h(xv, t).grad.transpose();
          rec.d = g.norm() > 0.0 ? Eigen::Vector3d(-sqrt_b * g / g.norm()) : Eigen::Vector3d::Zero();
        }
        break;
    }
    rec.d_norm2 = rec.d.squaredNorm();
    log.records.push_back(rec);
    u_prev = u;
    if (k == steps) break;

    try {
      const double h = cfg.control_dt / cfg.plant_substeps;
      if (cfg.plant == PlantKind::fos_proxy) {
        plant = unicycle::fos_step(plant, u, cfg.control_dt, cfg.tau, cfg.plant_substeps);
      } else {
        const auto rhs = [&](const Eigen::Vector3d& s, double tau) -> Eigen::Vector3d {
          Eigen::Vector3d dx = unicycle::rom_dynamics(State3::from(s), u);
          if (cfg.plant == PlantKind::rom_with_injected_d) {
            if (cfg.disturbance == DisturbanceMode::random) {
              dx += d_random;
            } else {
              const Eigen::Vector3d g = spec.h(s, tau).grad.transpose();
              if (g.norm() > 0.0) dx -= sqrt_b * g / g.norm();
            }
          }
          return dx;
        };
        Eigen::Vector3d s = xv;
        for (int j = 0; j < cfg.plant_substeps; ++j) s = rk4_step<3>(rhs, s, t + j * h, h);
        plant.pose = State3::from(s);
      }
    } catch (const std::exception& e) {
      log.abort_reason = e.what();
      break;
    }
  }
  return log;
}

// Discrepancy envelope ---------------------------------------------------------

/// ||d||^2 <= A exp(-lambda t) + B on the logged samples (t relative to the
/// first record). residual is the largest excess of a sample over the envelope.
struct DiscrepancyFit {
  double A = 0.0;
  double lambda = 1.0;
  double B = 0.0;
  double residual = 0.0;

  double envelope(double t) const { return A * std::exp(-lambda * t) + B; }
};

/// B starts as the max of the trailing half; lambda is a log-linear fit of
/// ||d||^2 - B over the leading run of samples above B (down to a 1e-6
/// relative floor); B is then raised to cover every sample after that run and
/// A is the smallest scale that dominates the rest.
inline DiscrepancyFit fit_discrepancy(const TrajectoryLog& log) {
  DiscrepancyFit fit;
  const auto& recs = log.records;
  if (recs.empty()) return fit;
  const std::size_t n = recs.size();
  const double t0 = recs.front().t;
  double ymax = 0.0;
  for (const auto& r : recs) ymax = std::max(ymax, r.d_norm2);
  if (ymax == 0.0) return fit;

  double B = 0.0;
  for (std::size_t k = n / 2; k < n; ++k) B = std::max(B, recs[k].d_norm2);

  double emax = 0.0;
  for (const auto& r : recs) emax = std::max(emax, r.d_norm2 - B);
  std::size_t run = 0;
  while (run < n && recs[run].d_norm2 - B > 1e-6 * emax) ++run;

  if (run >= 2) {
    double st = 0, sy = 0, stt = 0, sty = 0;
    for (std::size_t k = 0; k < run; ++k) {
      const double t = recs[k].t - t0;
      const double y = std::log(recs[k].d_norm2 - B);
      st += t;
      sy += y;
      stt += t * t;
      sty += t * y;
    }
    const double m = static_cast<double>(run);
    const double denom = m * stt - st * st;
    if (denom > 0.0) {
      const double slope = (m * sty - st * sy) / denom;
      if (slope < 0.0) fit.lambda = -slope;
    }
  }
  for (std::size_t k = run; k < n; ++k) B = std::max(B, recs[k].d_norm2);
  fit.B = B;

  double A = 0.0;
  for (const auto& r : recs) {
    const double excess = r.d_norm2 - B;
    if (excess > 0.0) A = std::max(A, excess * std::exp(fit.lambda * (r.t - t0)));
  }
  fit.A = A * (1.0 + 1e-12);
  for (const auto& r : recs) fit.residual = std::max(fit.residual, r.d_norm2 - fit.envelope(r.t - t0));
  return fit;
}

// Invariant report ---------------------------------------------------------------

enum class Verdict { pass, fail, not_applicable, info };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::not_applicable: return "n/a";
    case Verdict::info: return "info";
  }
  return "?";
}

struct Check {
  std::string name;
  Verdict verdict;
  std::string detail;
};

inline constexpr double kMarginTol = 1e-3;
inline constexpr double kBoxTol = 1e-6;

struct InvariantReport {
  std::size_t steps = 0;
  double min_h = 0.0;
  double min_hbar = 0.0;
  double min_hbar_b = 0.0;
  double max_box_violation = 0.0;
  double max_slack = 0.0;
  int qp_faults = 0;
  bool input_bounds_violated = false;
  DiscrepancyFit fit;
  double h_threshold = 0.0;
  bool cd_applicable = false;
  double cd_initial_margin = 0.0;
  double cd_worst_margin = 0.0;
  std::string cd_note;
  std::vector<Check> checks;

  bool passed() const {
    return std::none_of(checks.begin(), checks.end(), [](const Check& c) { return c.verdict == Verdict::fail; });
  }
  const Check* find(std::string_view name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }
  std::vector<std::string> failures() const {
    std::vector<std::string> out;
    for (const auto& c : checks)
      if (c.verdict == Verdict::fail) out.push_back(c.name);
    return out;
  }
};

/// Per-step margin of the tightened set C_d(t) (ISSf form). With A = B = 0 it
/// reduces to min(hbar_min, hbar_b).
inline double cd_margin(const LogRecord& r, double t, const DiscrepancyFit& fit, const SafetyGains& g) {
  double mh = r.hbar_min;
  double mb = r.hbar_b;
  if (fit.B > 0.0) {
    mh += fit.B / (4.0 * g.sigma * g.gamma);
    mb += fit.B / (4.0 * g.sigma_b * g.gamma_b);
  }
  if (fit.A > 0.0) {
    mh -= fit.A * std::exp(-fit.lambda * t) / (4.0 * g.sigma * (fit.lambda - g.gamma));
    mb -= fit.A * std::exp(-fit.lambda * t) / (4.0 * g.sigma_b * (fit.lambda - g.gamma_b));
  }
  return std::min(mh, mb);
}

inline InvariantReport check_invariants(const TrajectoryLog& log, const ScenarioConfig& cfg) {
  InvariantReport rep;
  const auto& recs = log.records;
  rep.steps = recs.size();
  if (recs.empty()) {
    rep.checks.push_back({"log", Verdict::fail, "empty log"});
    return rep;
  }
  rep.min_h = rep.min_hbar = rep.min_hbar_b = std::numeric_limits<double>::infinity();
  const InputBox<2> box = cfg.bounds.box();
  for (const auto& r : recs) {
    rep.min_h = std::min(rep.min_h, std::isnan(r.h) ? -std::numeric_limits<double>::infinity() : r.h);
    rep.min_hbar = std::min(rep.min_hbar, r.hbar_min);
    rep.min_hbar_b = std::min(rep.min_hbar_b, r.hbar_b);
    rep.max_box_violation = std::max(rep.max_box_violation, box.violation(r.u_cmd.vec()));
    rep.max_slack = std::max(rep.max_slack, r.max_slack);
    if (detail::qp_ran(r.qp_status) && r.qp_status != "optimal") ++rep.qp_faults;
  }
  rep.input_bounds_violated = rep.max_box_violation > kBoxTol;
  rep.fit = fit_discrepancy(log);

  const bool disturbed = cfg.plant != PlantKind::rom;
  const auto& g = cfg.gains;
  const bool robust = cfg.controller == ControllerKind::issf_backup && g.sigma > 0.0 && g.sigma_b > 0.0;
  if (disturbed && robust) {
    rep.h_threshold = -rep.fit.B / (4.0 * g.sigma * g.gamma) - kMarginTol;
  } else if (cfg.controller == ControllerKind::pure_backup) {
    rep.h_threshold = -kMarginTol;
  } else {
    rep.h_threshold = 0.0;
  }

  rep.checks.push_back({"min_h", rep.min_h >= rep.h_threshold ? Verdict::pass : Verdict::fail,
                        "min h >= " + std::to_string(rep.h_threshold)});
  if (cfg.controller == ControllerKind::cbf_unbounded) {
    rep.checks.push_back({"input_bounds", Verdict::info, "unbounded controller; violations expected"});
  } else {
    rep.checks.push_back({"input_bounds", rep.input_bounds_violated ? Verdict::fail : Verdict::pass,
                          "commanded inputs within box +- 1e-6"});
  }
  if (cfg.controller == ControllerKind::pure_backup) {
    rep.checks.push_back({"qp_status", Verdict::not_applicable, "no QP"});
  } else {
    rep.checks.push_back({"qp_status", rep.qp_faults == 0 ? Verdict::pass : Verdict::fail,
                          std::to_string(rep.qp_faults) + " non-optimal steps"});
  }
  rep.checks.push_back({"max_slack", Verdict::info, "largest slack over the run"});

  // Tightened set C_d(t).
  const bool backup_type = cfg.controller == ControllerKind::backup ||
                           cfg.controller == ControllerKind::issf_backup ||
                           cfg.controller == ControllerKind::pure_backup;
  const bool zero_d = rep.fit.A == 0.0 && rep.fit.B == 0.0;
  if (!backup_type) {
    rep.cd_note = "controller does not enforce backup conditions";
  } else if (!zero_d && !robust) {
    rep.cd_note = "nonzero discrepancy requires sigma, sigma_b > 0";
  } else if (rep.fit.A > 0.0 && !(g.gamma < rep.fit.lambda && g.gamma_b < rep.fit.lambda)) {
    rep.cd_note = "gamma, gamma_b < lambda does not hold";
  } else {
    rep.cd_applicable = true;
  }

  if (rep.cd_applicable) {
    const double t0 = recs.front().t;
    std::vector<double> margins;
    margins.reserve(recs.size());
    for (const auto& r : recs) margins.push_back(cd_margin(r, r.t - t0, rep.fit, g));
    rep.cd_initial_margin = margins.front();
    rep.cd_worst_margin = *std::min_element(margins.begin(), margins.end());
    bool monotone = true;
    for (std::size_t k = 0; k + 1 < margins.size(); ++k) {
      if (margins[k] >= -kMarginTol && margins[k + 1] < -kMarginTol) monotone = false;
    }
    if (rep.cd_initial_margin >= -kMarginTol) {
      rep.checks.push_back({"cd_margin", rep.cd_worst_margin >= -kMarginTol ? Verdict::pass : Verdict::fail,
                            "worst C_d margin >= -1e-3"});
    } else {
      rep.cd_note = "initial state outside C_d(0)";
      rep.checks.push_back({"cd_margin", Verdict::not_applicable, rep.cd_note});
    }
    rep.checks.push_back({"cd_forward_invariant", monotone ? Verdict::pass : Verdict::fail,
                          "membership in C_d never lost once held"});
  } else {
    rep.checks.push_back({"cd_margin", Verdict::not_applicable, rep.cd_note});
    rep.checks.push_back({"cd_forward_invariant", Verdict::not_applicable, rep.cd_note});
  }
  if (log.abort_reason) rep.checks.push_back({"completed", Verdict::fail, *log.abort_reason});
  return rep;
}

// Gradient bounds ---------------------------------------------------------------

struct GradientBounds {
  double D = 0.0;
  double D_b = 0.0;
  std::size_t samples = 0;
};

/// Empirical suprema of ||grad_h(phi_b) Q|| and ||grad_h_b(phi_b) Q|| over
/// every grid node of the backup flows seeded at the given states.
inline GradientBounds estimate_gradient_bounds(const std::vector<State3>& states, const std::vector<double>& times,
                                               const ScenarioConfig& cfg) {
  if (states.size() != times.size()) throw std::invalid_argument("estimate_gradient_bounds: size mismatch");
  const auto model = unicycle::model();
  const auto spec = unicycle::make_safety_spec(cfg.obstacle, cfg.gains.delta_heading, cfg.R_O);
  const auto bspec = unicycle::make_backup_spec(cfg.obstacle, cfg.bounds, cfg.gains.epsilon);
  GradientBounds gb;
  for (std::size_t k = 0; k < states.size(); ++k) {
    const auto flow = backup_flow<3, 2>(states[k].vec(), times[k], model, bspec, cfg.gains);
    for (std::size_t i = 0; i < flow.size(); ++i) {
      const double ti = flow.base_time + flow.thetas[i];
      gb.D = std::max(gb.D, (spec.h(flow.states[i], ti).grad * flow.sens[i]).norm());
      gb.D_b = std::max(gb.D_b, (bspec.h_b(flow.states[i], ti).grad * flow.sens[i]).norm());
    }
    ++gb.samples;
  }
  return gb;
}

inline GradientBounds estimate_gradient_bounds(const TrajectoryLog& log) {
  std::vector<State3> states;
  std::vector<double> times;
  for (const auto& r : log.records) {
    states.push_back(r.pose);
    times.push_back(r.t);
  }
  return estimate_gradient_bounds(states, times, log.config);
}

}  // namespace issf::sim
