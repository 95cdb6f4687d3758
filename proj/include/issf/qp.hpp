#pragma once

// Dense convex QP solver for controller-rate problems:
//
//   minimize   1/2 u'Pu + q'u + sum_i p_i delta_i^2
//   subject to a_i'u >= b_i            (hard rows)
//              a_i'u >= b_i - delta_i  (slack rows, delta_i >= 0)
//              lb <= u <= ub
//
// Slack rows are lifted into extra decision variables. Each slack is stored
// scaled by sqrt(2 p_i) so its Hessian block is the identity; penalties as
// large as 1e18 therefore never enter a factorization directly.
//
// The active-set iteration is the dual method of Goldfarb and Idnani. The
// working-set factorization is recomputed from scratch at every pivot.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace issf {

/// a'u >= b, optionally relaxed to a'u >= b - delta with cost p delta^2.
struct ConstraintRow {
  Eigen::VectorXd a;
  double b = 0.0;
  std::optional<double> slack_penalty;
  std::string label;
};

enum class QpStatus { optimal, infeasible, max_iterations };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::infeasible: return "infeasible";
    case QpStatus::max_iterations: return "max-iterations";
  }
  return "unknown";
}

class QpProblem {
 public:
  QpProblem(Eigen::MatrixXd P, Eigen::VectorXd q, Eigen::VectorXd lb, Eigen::VectorXd ub)
      : P_(std::move(P)), q_(std::move(q)), lb_(std::move(lb)), ub_(std::move(ub)) {
    const auto m = P_.rows();
    if (m == 0 || P_.cols() != m || q_.size() != m || lb_.size() != m || ub_.size() != m)
      throw std::invalid_argument("QpProblem: dimension mismatch");
    if (!P_.allFinite() || !q_.allFinite()) throw std::invalid_argument("QpProblem: non-finite cost");
    if ((P_ - P_.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw std::invalid_argument("QpProblem: P is not symmetric");
    if (Eigen::LLT<Eigen::MatrixXd>(P_).info() != Eigen::Success)
      throw std::invalid_argument("QpProblem: P is not positive definite");
    for (Eigen::Index j = 0; j < m; ++j) {
      if (std::isnan(lb_(j)) || std::isnan(ub_(j)) || lb_(j) > ub_(j))
        throw std::invalid_argument("QpProblem: invalid box bounds");
    }
  }

  /// Unbounded box.
  QpProblem(Eigen::MatrixXd P, Eigen::VectorXd q)
      : QpProblem(P, q,
                  Eigen::VectorXd::Constant(q.size(), -std::numeric_limits<double>::infinity()),
                  Eigen::VectorXd::Constant(q.size(), std::numeric_limits<double>::infinity())) {}

  void add_row(ConstraintRow row) {
    if (row.a.size() != dim()) throw std::invalid_argument("QpProblem: row dimension mismatch");
    if (!row.a.allFinite() || !std::isfinite(row.b))
      throw std::invalid_argument("QpProblem: non-finite row " + row.label);
    if (row.slack_penalty && !(*row.slack_penalty > 0.0 && std::isfinite(*row.slack_penalty)))
      throw std::invalid_argument("QpProblem: slack penalty must be positive");
    rows_.push_back(std::move(row));
  }

  Eigen::Index dim() const { return P_.rows(); }
  const Eigen::MatrixXd& P() const { return P_; }
  const Eigen::VectorXd& q() const { return q_; }
  const Eigen::VectorXd& lb() const { return lb_; }
  const Eigen::VectorXd& ub() const { return ub_; }
  const std::vector<ConstraintRow>& rows() const { return rows_; }

 private:
  Eigen::MatrixXd P_;
  Eigen::VectorXd q_;
  Eigen::VectorXd lb_, ub_;
  std::vector<ConstraintRow> rows_;
};

struct QpSolution {
  QpStatus status = QpStatus::optimal;
  Eigen::VectorXd u;
  // Indexed like QpProblem::rows(); zero for hard rows.
  std::vector<double> slacks;
  double objective = 0.0;
  std::vector<std::string> active_set;
  // Irreducible conflicting subset when status == infeasible.
  std::vector<std::string> infeasible_subset;
  // KKT multipliers (all nonnegative) for rows, lower/upper bounds, slack bounds.
  Eigen::VectorXd row_multipliers;
  Eigen::VectorXd lower_multipliers;
  Eigen::VectorXd upper_multipliers;
  Eigen::VectorXd slack_multipliers;
  int iterations = 0;

  bool optimal() const { return status == QpStatus::optimal; }
  double max_slack() const {
    double s = 0.0;
    for (double d : slacks) s = std::max(s, d);
    return s;
  }
};

inline constexpr double kActivityTol = 1e-10;

namespace detail {

// Inequality n'z >= e on the lifted variable z = (u, scaled slacks).
struct LiftedConstraint {
  Eigen::VectorXd n;
  double e;
  enum class Kind { row, lower, upper, slack } kind;
  Eigen::Index index;
};

inline double slack_scale(double penalty) { return 1.0 / std::sqrt(2.0 * penalty); }

inline std::string constraint_label(const QpProblem& p, const LiftedConstraint& c) {
  switch (c.kind) {
    case LiftedConstraint::Kind::row: return p.rows()[c.index].label;
    case LiftedConstraint::Kind::lower: return "lb[" + std::to_string(c.index) + "]";
    case LiftedConstraint::Kind::upper: return "ub[" + std::to_string(c.index) + "]";
    case LiftedConstraint::Kind::slack: return p.rows()[c.index].label + ".slack";
  }
  return {};
}

}  // namespace detail

/// Solves the problem; identical inputs give bit-identical outputs.
inline QpSolution solve(const QpProblem& problem) {
  using detail::LiftedConstraint;
  const Eigen::Index m = problem.dim();
  const auto& rows = problem.rows();

  // Lift slack rows.
  std::vector<Eigen::Index> slack_col(rows.size(), -1);
  std::vector<double> scale(rows.size(), 0.0);
  Eigen::Index nvar = m;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].slack_penalty) {
      slack_col[i] = nvar++;
      scale[i] = detail::slack_scale(*rows[i].slack_penalty);
    }
  }

  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(nvar, nvar);
  H.topLeftCorner(m, m) = problem.P();
  Eigen::VectorXd c = Eigen::VectorXd::Zero(nvar);
  c.head(m) = problem.q();

  // Ordering fixes tie-breaking: rows, then box, then slack nonnegativity.
  std::vector<LiftedConstraint> cons;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Eigen::VectorXd n = Eigen::VectorXd::Zero(nvar);
    n.head(m) = rows[i].a;
    if (slack_col[i] >= 0) n(slack_col[i]) = scale[i];
    cons.push_back({std::move(n), rows[i].b, LiftedConstraint::Kind::row, static_cast<Eigen::Index>(i)});
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    if (std::isfinite(problem.lb()(j))) {
      Eigen::VectorXd n = Eigen::VectorXd::Zero(nvar);
      n(j) = 1.0;
      cons.push_back({std::move(n), problem.lb()(j), LiftedConstraint::Kind::lower, j});
    }
    if (std::isfinite(problem.ub()(j))) {
      Eigen::VectorXd n = Eigen::VectorXd::Zero(nvar);
      n(j) = -1.0;
      cons.push_back({std::move(n), -problem.ub()(j), LiftedConstraint::Kind::upper, j});
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (slack_col[i] < 0) continue;
    Eigen::VectorXd n = Eigen::VectorXd::Zero(nvar);
    n(slack_col[i]) = 1.0;
    cons.push_back({std::move(n), 0.0, LiftedConstraint::Kind::slack, static_cast<Eigen::Index>(i)});
  }

  const Eigen::LLT<Eigen::MatrixXd> llt(H);
  const Eigen::MatrixXd L = llt.matrixL();
  Eigen::VectorXd z = -llt.solve(c);

  std::vector<std::size_t> active;
  std::vector<double> lambda;
  std::vector<char> in_active(cons.size(), 0);

  QpSolution sol;
  const int max_iter = 100 * static_cast<int>(m + rows.size());
  int iter = 0;

  const auto residual = [&](std::size_t k) { return cons[k].n.dot(z) - cons[k].e; };

  auto finish = [&](QpStatus status) {
    sol.status = status;
    sol.iterations = iter;
    sol.u = z.head(m);
    sol.slacks.assign(rows.size(), 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (slack_col[i] >= 0) sol.slacks[i] = std::max(0.0, z(slack_col[i])) * scale[i];
    }
    sol.row_multipliers = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rows.size()));
    sol.lower_multipliers = Eigen::VectorXd::Zero(m);
    sol.upper_multipliers = Eigen::VectorXd::Zero(m);
    sol.slack_multipliers = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < active.size(); ++k) {
      const auto& con = cons[active[k]];
      switch (con.kind) {
        case LiftedConstraint::Kind::row: sol.row_multipliers(con.index) = lambda[k]; break;
        case LiftedConstraint::Kind::lower: sol.lower_multipliers(con.index) = lambda[k]; break;
        case LiftedConstraint::Kind::upper: sol.upper_multipliers(con.index) = lambda[k]; break;
        case LiftedConstraint::Kind::slack: sol.slack_multipliers(con.index) = lambda[k]; break;
      }
      sol.active_set.push_back(detail::constraint_label(problem, con));
    }
    double obj = 0.5 * sol.u.dot(problem.P() * sol.u) + problem.q().dot(sol.u);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (slack_col[i] >= 0) obj += 0.5 * z(slack_col[i]) * z(slack_col[i]);
    }
    sol.objective = obj;
    return sol;
  };

  while (true) {
    // Most violated constraint; strict comparison keeps the lowest index on ties.
    std::size_t p = cons.size();
    double worst = -kActivityTol;
    for (std::size_t k = 0; k < cons.size(); ++k) {
      if (in_active[k]) continue;
      const double s = residual(k);
      if (s < worst) {
        worst = s;
        p = k;
      }
    }
    if (p == cons.size()) return finish(QpStatus::optimal);

    double lambda_p = 0.0;
    while (true) {
      if (++iter > max_iter) return finish(QpStatus::max_iterations);

      const auto q = static_cast<Eigen::Index>(active.size());
      Eigen::MatrixXd Q = Eigen::MatrixXd::Identity(nvar, nvar);
      Eigen::MatrixXd R(q, q);
      if (q > 0) {
        Eigen::MatrixXd N(nvar, q);
        for (Eigen::Index k = 0; k < q; ++k) N.col(k) = cons[active[k]].n;
        const Eigen::MatrixXd B = L.triangularView<Eigen::Lower>().solve(N);
        const Eigen::HouseholderQR<Eigen::MatrixXd> qr(B);
        Q = qr.householderQ();
        R = qr.matrixQR().topLeftCorner(q, q).triangularView<Eigen::Upper>();
      }
      const Eigen::VectorXd d = Q.transpose() * L.triangularView<Eigen::Lower>().solve(cons[p].n);
      const Eigen::VectorXd d2 = d.tail(nvar - q);
      const Eigen::VectorXd step =
          L.transpose().triangularView<Eigen::Upper>().solve(Q.rightCols(nvar - q) * d2);
      Eigen::VectorXd r = Eigen::VectorXd::Zero(q);
      if (q > 0) r = R.triangularView<Eigen::Upper>().solve(d.head(q));

      const bool in_span = d2.norm() <= 1e-13 * d.norm();

      double t1 = std::numeric_limits<double>::infinity();
      Eigen::Index drop = -1;
      for (Eigen::Index k = 0; k < q; ++k) {
        if (r(k) > 0.0) {
          const double ratio = lambda[k] / r(k);
          if (ratio < t1) {
            t1 = ratio;
            drop = k;
          }
        }
      }
      double t2 = std::numeric_limits<double>::infinity();
      if (!in_span) t2 = -residual(p) / step.dot(cons[p].n);

      if (!std::isfinite(t1) && !std::isfinite(t2)) {
        sol.infeasible_subset.push_back(detail::constraint_label(problem, cons[p]));
        for (Eigen::Index k = 0; k < q; ++k) {
          if (r(k) < -1e-12 * std::max(1.0, r.cwiseAbs().maxCoeff()))
            sol.infeasible_subset.push_back(detail::constraint_label(problem, cons[active[k]]));
        }
        return finish(QpStatus::infeasible);
      }

      const double t = std::min(t1, t2);
      if (std::isfinite(t2)) z += t * step;
      for (Eigen::Index k = 0; k < q; ++k) lambda[k] -= t * r(k);
      lambda_p += t;

      if (t2 <= t1) {
        active.push_back(p);
        lambda.push_back(lambda_p);
        in_active[p] = 1;
        break;
      }
      in_active[active[drop]] = 0;
      active.erase(active.begin() + drop);
      lambda.erase(lambda.begin() + drop);
    }
  }
}

/// Max of stationarity, primal/dual feasibility and complementarity
/// violations. Slack terms are measured in the solver's scaled coordinates.
inline double kkt_residual(const QpProblem& problem, const QpSolution& s) {
  const Eigen::Index m = problem.dim();
  const auto& rows = problem.rows();
  const auto nrows = static_cast<Eigen::Index>(rows.size());
  const auto mult = [](const Eigen::VectorXd& v, Eigen::Index i, Eigen::Index n) {
    return v.size() == n ? v(i) : 0.0;
  };

  Eigen::VectorXd grad = problem.P() * s.u + problem.q();
  double res = 0.0;
  for (Eigen::Index i = 0; i < nrows; ++i) {
    const double lam = mult(s.row_multipliers, i, nrows);
    grad -= lam * rows[i].a;
    res = std::max(res, -lam);
    const double delta = i < static_cast<Eigen::Index>(s.slacks.size()) ? s.slacks[i] : 0.0;
    const double activity = rows[i].a.dot(s.u) + delta - rows[i].b;
    res = std::max(res, -activity);
    res = std::max(res, std::abs(lam * activity));
    if (rows[i].slack_penalty) {
      const double sc = detail::slack_scale(*rows[i].slack_penalty);
      const double scaled = delta / sc;
      const double nu = mult(s.slack_multipliers, i, nrows);
      res = std::max(res, std::abs(scaled - lam * sc - nu));
      res = std::max(res, -nu);
      res = std::max(res, std::abs(nu * scaled));
      res = std::max(res, -delta);
    } else if (delta != 0.0) {
      res = std::max(res, std::abs(delta));
    }
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    const double mu_l = mult(s.lower_multipliers, j, m);
    const double mu_u = mult(s.upper_multipliers, j, m);
    grad(j) += -mu_l + mu_u;
    res = std::max({res, -mu_l, -mu_u});
    if (std::isfinite(problem.lb()(j))) {
      const double gap = s.u(j) - problem.lb()(j);
      res = std::max({res, -gap, std::abs(mu_l * gap)});
    } else {
      res = std::max(res, std::abs(mu_l));
    }
    if (std::isfinite(problem.ub()(j))) {
      const double gap = problem.ub()(j) - s.u(j);
      res = std::max({res, -gap, std::abs(mu_u * gap)});
    } else {
      res = std::max(res, std::abs(mu_u));
    }
  }
  return std::max(res, grad.cwiseAbs().maxCoeff());
}

}  // namespace issf
