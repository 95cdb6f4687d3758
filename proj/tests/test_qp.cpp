#include "oracles.hpp"

#include <issf/qp.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using issf::ConstraintRow;
using issf::QpProblem;
using issf::QpStatus;
using issf::solve;

namespace {

// Tracking cost for k_d with weight diag(1, 0.25): P = 2*diag, q = -P k_d.
QpProblem tracking(Eigen::Vector2d k_d) {
  const Eigen::Matrix2d P = Eigen::Vector2d(2.0, 0.5).asDiagonal();
  return QpProblem(P, -P * k_d, Eigen::Vector2d(0.1, -0.3), Eigen::Vector2d(0.2, 0.3));
}

}  // namespace

TEST(QpProblem, RejectsInvalidData) {
  Eigen::Matrix2d asym;
  asym << 1, 0.5, 0, 1;
  EXPECT_THROW(QpProblem(asym, Eigen::Vector2d::Zero()), std::invalid_argument);
  EXPECT_THROW(QpProblem(Eigen::Matrix2d(Eigen::Vector2d(1, -1).asDiagonal()), Eigen::Vector2d::Zero()),
               std::invalid_argument);
  EXPECT_THROW(QpProblem(Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero(), Eigen::Vector2d(1, 0),
                         Eigen::Vector2d(0, 1)),
               std::invalid_argument);
  QpProblem ok(Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero());
  EXPECT_THROW(ok.add_row({Eigen::Vector3d::Ones(), 0.0, std::nullopt, "x"}), std::invalid_argument);
  EXPECT_THROW(ok.add_row({Eigen::Vector2d::Ones(), 0.0, -1.0, "x"}), std::invalid_argument);
}

TEST(Solve, FeasibleUnconstrainedOptimum) {
  const auto s = solve(tracking({0.2, 0.1}));
  ASSERT_TRUE(s.optimal());
  EXPECT_NEAR(s.u(0), 0.2, 1e-12);
  EXPECT_NEAR(s.u(1), 0.1, 1e-12);
  EXPECT_LE(issf::kkt_residual(tracking({0.2, 0.1}), s), 1e-8);
}

TEST(Solve, TargetOutsideBoxProjects) {
  const auto p = tracking({0.3, 0.5});
  const auto s = solve(p);
  ASSERT_TRUE(s.optimal());
  EXPECT_NEAR(s.u(0), 0.2, 1e-12);
  EXPECT_NEAR(s.u(1), 0.3, 1e-12);
  EXPECT_LE(issf::kkt_residual(p, s), 1e-8);
  // 200 x 200 grid over the box.
  double best = 1e300;
  Eigen::Vector2d arg;
  for (int i = 0; i < 200; ++i)
    for (int j = 0; j < 200; ++j) {
      const Eigen::Vector2d u(0.1 + 0.1 * i / 199, -0.3 + 0.6 * j / 199);
      const double f = oracle::objective(p, u);
      if (f < best) best = f, arg = u;
    }
  EXPECT_NEAR(arg(0), 0.2, 1e-12);
  EXPECT_NEAR(arg(1), 0.3, 1e-12);
  EXPECT_LE(s.objective, best + 1e-12);
  EXPECT_NE(std::find(s.active_set.begin(), s.active_set.end(), "ub[0]"), s.active_set.end());
  EXPECT_NE(std::find(s.active_set.begin(), s.active_set.end(), "ub[1]"), s.active_set.end());
}

TEST(Solve, SlackRowWithHugePenaltyActsHard) {
  auto p = tracking({0.1, 0.0});
  p.add_row({Eigen::Vector2d(1, 0), 0.15, 1e18, "h"});
  const auto s = solve(p);
  ASSERT_TRUE(s.optimal());
  EXPECT_NEAR(s.u(0), 0.15, 1e-9);
  EXPECT_NEAR(s.u(1), 0.0, 1e-12);
  EXPECT_LE(s.slacks[0], 1e-12);
  EXPECT_LE(issf::kkt_residual(p, s), 1e-8);
  // 1-D KKT by hand: minimize (u-0.1)^2 over u >= 0.15 gives 0.15.
}

TEST(Solve, ModerateSlackPenaltyClosedForm) {
  // min (u0 - 0.1)^2 + p s^2, u0 + s >= 0.15 -> s = 0.05 / (1 + p).
  for (double pen : {0.5, 1.0, 10.0}) {
    auto p = tracking({0.1, 0.0});
    p.add_row({Eigen::Vector2d(1, 0), 0.15, pen, "h"});
    const auto s = solve(p);
    ASSERT_TRUE(s.optimal());
    EXPECT_NEAR(s.slacks[0], 0.05 / (1 + pen), 1e-12) << pen;
    EXPECT_NEAR(s.u(0), 0.15 - 0.05 / (1 + pen), 1e-12);
    EXPECT_LE(issf::kkt_residual(p, s), 1e-8);
  }
}

TEST(Solve, InfeasibleReportsSubset) {
  auto p = tracking({0.15, 0.0});
  p.add_row({Eigen::Vector2d(-1, 0), -0.05, std::nullopt, "cap"});  // v <= 0.05 < v_min
  const auto s = solve(p);
  EXPECT_EQ(s.status, QpStatus::infeasible);
  EXPECT_NE(std::find(s.infeasible_subset.begin(), s.infeasible_subset.end(), "cap"), s.infeasible_subset.end());
  EXPECT_NE(std::find(s.infeasible_subset.begin(), s.infeasible_subset.end(), "lb[0]"), s.infeasible_subset.end());
}

TEST(Solve, ZeroRowIsVacuousOrInfeasible) {
  auto p = tracking({0.15, 0.1});
  p.add_row({Eigen::Vector2d::Zero(), -1.0, std::nullopt, "vacuous"});
  const auto s = solve(p);
  ASSERT_TRUE(s.optimal());
  EXPECT_NEAR(s.u(0), 0.15, 1e-12);
  EXPECT_NEAR(s.u(1), 0.1, 1e-12);
  auto bad = tracking({0.15, 0.1});
  bad.add_row({Eigen::Vector2d::Zero(), 1.0, std::nullopt, "impossible"});
  EXPECT_EQ(solve(bad).status, QpStatus::infeasible);
}

TEST(Solve, TieBreakLowestIndex) {
  QpProblem p(Eigen::Matrix2d::Identity() * 2, Eigen::Vector2d::Zero());
  p.add_row({Eigen::Vector2d(1, 0), 1.0, std::nullopt, "first"});
  p.add_row({Eigen::Vector2d(1, 0), 1.0, std::nullopt, "second"});
  const auto s = solve(p);
  ASSERT_TRUE(s.optimal());
  ASSERT_EQ(s.active_set.size(), 1u);
  EXPECT_EQ(s.active_set[0], "first");
}

TEST(KktResidual, PerturbationIsDetected) {
  const auto p = tracking({0.3, 0.5});
  auto s = solve(p);
  ASSERT_LE(issf::kkt_residual(p, s), 1e-8);
  s.u(0) += 1e-3;
  EXPECT_GE(issf::kkt_residual(p, s), 1e-4);
}

TEST(KktResidual, OriginOptimum) {
  const QpProblem p(Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero());
  const auto s = solve(p);
  ASSERT_TRUE(s.optimal());
  EXPECT_EQ(s.u, Eigen::Vector2d::Zero());
  EXPECT_EQ(issf::kkt_residual(p, s), 0.0);
}

TEST(SolveProperties, GridOracleEquivalence) {
  std::mt19937_64 rng(2024);
  for (int k = 0; k < 100; ++k) {
    const auto rq = oracle::random_feasible_qp(rng);
    const auto s = solve(rq.problem);
    ASSERT_TRUE(s.optimal()) << "problem " << k;
    EXPECT_LE(issf::kkt_residual(rq.problem, s), 1e-8) << "problem " << k;
    const auto g = oracle::grid_minimum(rq.problem);
    EXPECT_LE(s.objective, g.best + 1e-12) << "problem " << k;
    EXPECT_LE(g.best - s.objective, oracle::grid_tolerance(g)) << "problem " << k;
  }
}

TEST(SolveProperties, SlackMonotoneInPenalty) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Vector2d k_d(unit(rng), unit(rng));
    std::vector<ConstraintRow> rows;
    for (int i = 0; i < 4; ++i) rows.push_back({Eigen::Vector2d(unit(rng), unit(rng)), 1.5 * unit(rng), 1.0, ""});
    std::vector<double> prev(rows.size(), std::numeric_limits<double>::infinity());
    for (double pen = 1e2; pen <= 1e18; pen *= 10) {
      QpProblem p(Eigen::Matrix2d::Identity() * 2, -2 * k_d, Eigen::Vector2d(-1, -1), Eigen::Vector2d(1, 1));
      for (auto r : rows) {
        r.slack_penalty = pen;
        p.add_row(r);
      }
      const auto s = solve(p);
      ASSERT_TRUE(s.optimal());
      // Row multipliers grow like 2*pen*slack, so the residual is judged relative to them.
      const double scale = 1.0 + s.row_multipliers.cwiseAbs().maxCoeff();
      EXPECT_LE(issf::kkt_residual(p, s), 1e-8 * scale) << "trial " << trial << " penalty " << pen;
      for (std::size_t i = 0; i < rows.size(); ++i)
        EXPECT_LE(s.slacks[i], prev[i] * (1 + 1e-9) + 1e-15) << "trial " << trial << " row " << i << " penalty " << pen;
      prev = s.slacks;
    }
  }
}

TEST(SolveProperties, SingleSlackRowMonotoneInPenalty) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Vector2d k_d(unit(rng), unit(rng));
    const Eigen::Vector2d a(unit(rng), unit(rng));
    const double b = 2.0 * unit(rng);
    double prev = std::numeric_limits<double>::infinity();
    for (double pen = 1e2; pen <= 1e18; pen *= 10) {
      QpProblem p(Eigen::Matrix2d::Identity() * 2, -2 * k_d, Eigen::Vector2d(-1, -1), Eigen::Vector2d(1, 1));
      p.add_row({a, b, pen, "r"});
      const auto s = solve(p);
      ASSERT_TRUE(s.optimal());
      EXPECT_LE(s.slacks[0], prev * (1 + 1e-9) + 1e-15);
      prev = s.slacks[0];
    }
  }
}

TEST(SolveProperties, AllSlackNeverInfeasible) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    QpProblem p(Eigen::Matrix2d::Identity() * 2, Eigen::Vector2d(unit(rng), unit(rng)), Eigen::Vector2d(-1, -1),
                Eigen::Vector2d(1, 1));
    for (int i = 0; i < 6; ++i) p.add_row({Eigen::Vector2d(unit(rng), unit(rng)), 5.0 * unit(rng), 1e18, ""});
    const auto s = solve(p);
    EXPECT_TRUE(s.optimal()) << "trial " << trial << " status " << issf::to_string(s.status);
  }
}
