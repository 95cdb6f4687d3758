#include <issf/sim.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

using namespace issf;
using namespace issf::sim;

namespace {

double min_h(const TrajectoryLog& log) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& r : log.records) m = std::min(m, r.h);
  return m;
}

double max_box_violation(const TrajectoryLog& log) {
  double m = 0.0;
  const auto box = log.config.bounds.box();
  for (const auto& r : log.records) m = std::max(m, box.violation(r.u_cmd.vec()));
  return m;
}

// Pure backup loop driving straight away from a distant obstacle: the command
// is the constant (v_max, 0) and the proxy starts at rest, so ||d||^2 is the
// lag step response 0.04 exp(-4t) for tau = 0.5.
ScenarioConfig lag_step(double noise) {
  ScenarioConfig c;
  c.controller = ControllerKind::pure_backup;
  c.plant = PlantKind::fos_proxy;
  c.x0 = {7.0, -0.25, 0.0};
  c.duration = 10.0;
  c.noise = noise;
  return c;
}

TrajectoryLog synthetic_log(const std::vector<double>& d2, double dt = 0.05) {
  TrajectoryLog log;
  for (std::size_t k = 0; k < d2.size(); ++k) {
    LogRecord r;
    r.t = k * dt;
    r.d_norm2 = d2[k];
    log.records.push_back(r);
  }
  return log;
}

}  // namespace

TEST(ScenarioConfigContract, ValidateRejectsBadValues) {
  ScenarioConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.steps(), 800);
  c.control_dt = 0.03;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ScenarioConfig{};
  c.tau = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ScenarioConfig{};
  c.noise = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(EnumNames, RoundTrip) {
  for (auto k : {ControllerKind::cbf_unbounded, ControllerKind::cbf_bounded, ControllerKind::backup,
                 ControllerKind::issf_backup, ControllerKind::pure_backup})
    EXPECT_EQ(parse_controller(to_string(k)), k);
  for (auto k : {PlantKind::rom, PlantKind::fos_proxy, PlantKind::rom_with_injected_d})
    EXPECT_EQ(parse_plant(to_string(k)), k);
  EXPECT_FALSE(parse_controller("nosuch").has_value());
}

TEST(RunScenario, LogShape) {
  ScenarioConfig c;
  c.duration = 2.0;
  const auto log = run_scenario(c);
  ASSERT_EQ(log.records.size(), 41u);
  EXPECT_EQ(log.records.front().t, 0.0);
  EXPECT_NEAR(log.records.back().t, 2.0, 1e-12);
  EXPECT_EQ(log.records.front().pose.xi, 0.0);
  EXPECT_FALSE(log.abort_reason.has_value());
  for (const auto& r : log.records) EXPECT_EQ(r.qp_status, "optimal");
}

TEST(RunScenario, PureBackupFromSafeStateStaysSafe) {
  ScenarioConfig c;
  c.controller = ControllerKind::pure_backup;
  c.duration = 12.0;
  c.x0 = {0.5, 0.4, 0.6};
  const auto log = run_scenario(c);
  EXPECT_GE(min_h(log), -1e-3);
  for (const auto& r : log.records) {
    EXPECT_EQ(r.qp_status, "none");
    EXPECT_GE(std::min(r.hbar_min, r.hbar_b), 0.0) << r.t;
  }
}

TEST(RunScenario, UnboundedCbfStallsWithoutHeadingPenalty) {
  ScenarioConfig c;
  c.controller = ControllerKind::cbf_unbounded;
  c.gains.delta_heading = 0.0;
  const auto log = run_scenario(c);
  const auto& last = log.records.back();
  EXPECT_LT(last.u_cmd.v, 0.05);
  EXPECT_LT(last.pose.xi, 2.0 - 0.75);
  EXPECT_GE(min_h(log), 0.0);
}

TEST(RunScenario, UnboundedCbfWithHeadingPenaltyViolatesSpeedLimits) {
  ScenarioConfig c;
  c.controller = ControllerKind::cbf_unbounded;
  c.gains.delta_heading = 0.5;
  const auto log = run_scenario(c);
  EXPECT_GE(min_h(log), 0.0);
  EXPECT_GT(max_box_violation(log), 0.0);
  const auto rep = check_invariants(log, c);
  EXPECT_TRUE(rep.input_bounds_violated);
  EXPECT_EQ(rep.find("input_bounds")->verdict, Verdict::info);
}

TEST(RunScenario, BackupStaticSafeWithinBounds) {
  ScenarioConfig c;
  const auto log = run_scenario(c);
  EXPECT_GE(min_h(log), 0.0);
  EXPECT_LE(max_box_violation(log), 1e-6);
}

TEST(RunScenario, FaultHoldsPreviousInput) {
  // Start inside the obstacle margin heading in: the hard QP is infeasible at
  // the first step and the initial hold is the backup policy.
  ScenarioConfig c;
  c.duration = 0.1;
  c.x0 = {1.2, -0.2, 0.0};
  const auto log = run_scenario(c);
  ASSERT_EQ(log.records.size(), 3u);
  EXPECT_EQ(log.records[0].qp_status, "infeasible");
  const auto kb = unicycle::backup_policy(c.x0, 0.0, c.obstacle, c.bounds, c.gains.epsilon).u;
  EXPECT_EQ(log.records[0].u_cmd.v, kb.v);
  EXPECT_EQ(log.records[0].u_cmd.omega, kb.omega);
  const auto rep = check_invariants(log, c);
  EXPECT_EQ(rep.find("qp_status")->verdict, Verdict::fail);
}

TEST(RunScenario, Deterministic) {
  ScenarioConfig c;
  c.controller = ControllerKind::issf_backup;
  c.plant = PlantKind::fos_proxy;
  c.noise = 0.05;
  c.seed = 77;
  c.duration = 10.0;
  const auto a = run_scenario(c), b = run_scenario(c);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t k = 0; k < a.records.size(); ++k) {
    EXPECT_EQ(a.records[k].pose.vec(), b.records[k].pose.vec());
    EXPECT_EQ(a.records[k].u_cmd.vec(), b.records[k].u_cmd.vec());
    EXPECT_EQ(a.records[k].d, b.records[k].d);
  }
  c.seed = 78;
  const auto other = run_scenario(c);
  EXPECT_NE(other.records.back().pose.vec(), a.records.back().pose.vec());
}

TEST(FitDiscrepancy, ZeroDiscrepancyConvention) {
  const auto fit = fit_discrepancy(synthetic_log(std::vector<double>(50, 0.0)));
  EXPECT_EQ(fit.A, 0.0);
  EXPECT_EQ(fit.lambda, 1.0);
  EXPECT_EQ(fit.B, 0.0);
}

TEST(FitDiscrepancy, ExactExponentialPlusFloor) {
  std::vector<double> d2;
  for (int k = 0; k < 200; ++k) d2.push_back(0.3 * std::exp(-2.5 * k * 0.05) + 0.001);
  const auto fit = fit_discrepancy(synthetic_log(d2));
  EXPECT_LE(fit.residual, 1e-12);
  EXPECT_NEAR(fit.B, 0.001, 1e-5);
  EXPECT_NEAR(fit.lambda, 2.5, 0.25);
  for (std::size_t k = 0; k < d2.size(); ++k) EXPECT_GE(fit.envelope(k * 0.05) * (1 + 1e-12), d2[k]);
}

TEST(FitDiscrepancy, LagStepResponse) {
  const auto log = run_scenario(lag_step(0.0));
  for (const auto& r : log.records)
    EXPECT_NEAR(r.d_norm2, 0.04 * std::exp(-4.0 * r.t), 1e-10) << r.t;
  const auto fit = fit_discrepancy(log);
  EXPECT_GE(fit.lambda, 3.2);
  EXPECT_LE(fit.lambda, 4.8);
  EXPECT_LE(fit.B, 1e-6);
  EXPECT_LE(fit.residual, 1e-9);
}

TEST(FitDiscrepancy, LagPlusNoiseFloor) {
  // Constant command, uniform rate noise held over each sample.
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  TrajectoryLog log;
  unicycle::FosState s;
  const unicycle::Input2 cmd{0.2, 0.0};
  for (int k = 0; k <= 200; ++k) {
    s.rate_noise = {0.05 * unit(rng), 0.05 * unit(rng)};
    LogRecord r;
    r.t = k * 0.05;
    r.d_norm2 = unicycle::discrepancy(s, cmd).squaredNorm();
    log.records.push_back(r);
    s = unicycle::fos_step(s, cmd, 0.05, 0.5, 10);
  }
  const auto fit = fit_discrepancy(log);
  EXPECT_GE(fit.B, 0.001);
  EXPECT_LE(fit.B, 0.01);
  EXPECT_LE(fit.residual, 0.0);
}

TEST(CdMargin, Arithmetic) {
  LogRecord r;
  r.hbar_min = 0.3;
  r.hbar_b = 0.5;
  SafetyGains g;
  EXPECT_EQ(cd_margin(r, 0.0, DiscrepancyFit{}, g), 0.3);
  DiscrepancyFit f;
  f.A = 0.02;
  f.lambda = 4.0;
  f.B = 0.01;
  // 0.3 - 0.02 e^{-4t}/(4*0.1*3) + 0.01/(4*0.1*1)
  EXPECT_NEAR(cd_margin(r, 0.5, f, g), 0.3 - 0.02 * std::exp(-2.0) / 1.2 + 0.025, 1e-15);
}

TEST(CheckInvariants, RomBackupReducesToPlainMargin) {
  ScenarioConfig c;
  c.controller = ControllerKind::backup;
  c.obstacle = unicycle::ObstacleTrack::sinusoidal(2.0, -0.25, 0.1, 2.0 * std::numbers::pi / 5.0);
  c.duration = 10.0;
  const auto log = run_scenario(c);
  const auto rep = check_invariants(log, c);
  EXPECT_EQ(rep.fit.A, 0.0);
  EXPECT_EQ(rep.fit.B, 0.0);
  EXPECT_TRUE(rep.cd_applicable);
  EXPECT_EQ(rep.h_threshold, 0.0);
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& r : log.records) worst = std::min({worst, r.hbar_min, r.hbar_b});
  EXPECT_EQ(rep.cd_worst_margin, worst);
  EXPECT_TRUE(rep.passed()) << "failures: " << rep.failures().size();
}

TEST(CheckInvariants, CorruptedHFailsMinH) {
  ScenarioConfig c;
  c.duration = 2.0;
  auto log = run_scenario(c);
  ASSERT_TRUE(check_invariants(log, c).passed());
  log.records[10].h = -1.0;
  const auto rep = check_invariants(log, c);
  EXPECT_FALSE(rep.passed());
  const auto f = rep.failures();
  EXPECT_NE(std::find(f.begin(), f.end(), "min_h"), f.end());
}

TEST(CheckInvariants, EmptyLogFails) {
  EXPECT_FALSE(check_invariants(TrajectoryLog{}, ScenarioConfig{}).passed());
}

TEST(CheckInvariants, InjectedRandomDisturbanceMargin) {
  ScenarioConfig c;
  c.controller = ControllerKind::issf_backup;
  c.plant = PlantKind::rom_with_injected_d;
  c.B_inj = 0.01;
  c.disturbance = DisturbanceMode::random;
  c.seed = 3;
  const auto log = run_scenario(c);
  for (const auto& r : log.records) EXPECT_NEAR(r.d_norm2, 0.01, 1e-12);
  EXPECT_GE(min_h(log), -0.01 / (4 * 0.1 * 1.0) - 1e-3);
}

TEST(CheckInvariants, AdversarialDisturbanceOpposesGradient) {
  ScenarioConfig c;
  c.controller = ControllerKind::issf_backup;
  c.plant = PlantKind::rom_with_injected_d;
  c.B_inj = 0.01;
  c.duration = 1.0;
  const auto log = run_scenario(c);
  const auto spec = unicycle::make_safety_spec(c.obstacle, 0.0, c.R_O);
  for (const auto& r : log.records) {
    const Eigen::Vector3d g = spec.h(r.pose.vec(), r.t).grad.transpose();
    EXPECT_NEAR(r.d.dot(g), -0.1 * g.norm(), 1e-12);
  }
}

TEST(RobustnessComparison, IssfBeatsStandardOnProxy) {
  ScenarioConfig c;
  c.plant = PlantKind::fos_proxy;
  c.noise = 0.05;
  c.seed = 0;
  c.controller = ControllerKind::backup;
  const auto std_log = run_scenario(c);
  c.controller = ControllerKind::issf_backup;
  const auto issf_log = run_scenario(c);
  EXPECT_GE(min_h(issf_log), min_h(std_log) + 1e-3);
  const auto rep = check_invariants(issf_log, c);
  EXPECT_GE(rep.min_h, rep.h_threshold);
  EXPECT_EQ(rep.find("cd_forward_invariant")->verdict, Verdict::pass);
}

TEST(RobustnessComparison, IssfSlackStaysNegligibleOnProxy) {
  ScenarioConfig c;
  c.plant = PlantKind::fos_proxy;
  c.noise = 0.05;
  c.controller = ControllerKind::issf_backup;
  const auto log = run_scenario(c);
  double worst = 0.0;
  for (const auto& r : log.records) worst = std::max(worst, r.max_slack);
  EXPECT_LE(worst, 1e-6);
}

TEST(GradientBoundsEstimate, FlatGeometryNearUnit) {
  ScenarioConfig c;
  c.gains.T = 0.2;
  c.gains.N_c = 4;
  std::vector<unicycle::State3> states{{-20, 5, 0.3}, {30, -10, 2.0}, {2, 40, -1.0}};
  const auto gb = estimate_gradient_bounds(states, {0.0, 0.0, 0.0}, c);
  EXPECT_GE(gb.D, 1 - 1e-3);
  EXPECT_EQ(gb.samples, 3u);
}

TEST(GradientBoundsEstimate, MonotoneInSampleSet) {
  ScenarioConfig c;
  std::vector<unicycle::State3> states{{0, 0, 0}, {0.5, 0.3, 0.4}, {3, -1, 2}, {1, 1, -1}};
  std::vector<double> times(states.size(), 0.0);
  double prev_D = 0, prev_Db = 0;
  for (std::size_t n = 1; n <= states.size(); ++n) {
    const auto gb = estimate_gradient_bounds({states.begin(), states.begin() + n}, {times.begin(), times.begin() + n}, c);
    EXPECT_GE(gb.D, prev_D);
    EXPECT_GE(gb.D_b, prev_Db);
    prev_D = gb.D;
    prev_Db = gb.D_b;
  }
}

TEST(GradientBoundsEstimate, ZeroHorizonNodeIsGradientNorm) {
  ScenarioConfig c;
  const unicycle::State3 x{0.3, 0.1, 0.2};
  const auto gb = estimate_gradient_bounds({x}, {0.0}, c);
  const double g0 = unicycle::safety_h(x, 0.0, c.obstacle, 0.0, c.R_O).grad.norm();
  EXPECT_GE(gb.D, g0);
  const auto flow = backup_flow<3, 2>(x.vec(), 0.0, unicycle::model(),
                                      unicycle::make_backup_spec(c.obstacle, c.bounds, c.gains.epsilon), c.gains);
  EXPECT_EQ(flow.sens[0], Eigen::Matrix3d::Identity());
  EXPECT_EQ((unicycle::safety_h(x, 0.0, c.obstacle, 0.0, c.R_O).grad * flow.sens[0]).norm(), g0);
  EXPECT_THROW(estimate_gradient_bounds({x}, {}, c), std::invalid_argument);
}
