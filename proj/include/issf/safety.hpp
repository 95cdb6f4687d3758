#pragma once

// Safety filters built from control barrier functions:
//   * cbf_qp_controller       plain CBF-QP
//   * backup_controller       discretized backup-set QP (hard rows)
//   * issf_backup_controller  input-to-state safe backup-set QP (slack rows)
//
// For a control-affine model x' = f(x) + g(x) u, a barrier value h with
// gradient grad_h and explicit time derivative dh_dt yields the affine row
//   (grad_h g) u >= -gamma h - grad_h f - dh_dt.
// Backup rows apply the same template to h(phi_b(theta_i, x)) with the chain
// rule gradient grad_h(phi_b) Q(theta_i, x).

#include <issf/flow.hpp>
#include <issf/qp.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace issf {

template <int N, int M>
struct ControlAffineModel {
  std::function<Vec<N>(const Vec<N>&)> f;
  std::function<Eigen::Matrix<double, N, M>(const Vec<N>&)> g;
};

/// Value, state gradient and explicit time derivative of a barrier function.
template <int N>
struct BarrierEval {
  double value = 0.0;
  Eigen::Matrix<double, 1, N> grad = Eigen::Matrix<double, 1, N>::Zero();
  double dt = 0.0;
};

template <int N>
struct SafetySpec {
  std::function<BarrierEval<N>(const Vec<N>&, double)> h;
};

template <int N, int M>
struct BackupSpec {
  std::function<BarrierEval<N>(const Vec<N>&, double)> h_b;
  std::function<Vec<M>(const Vec<N>&, double)> k_b;
  // d/dx of the closed backup loop f(x) + g(x) k_b(x, t).
  std::function<Mat<N>(const Vec<N>&, double)> closed_loop_jacobian;
};

template <int M>
struct InputBox {
  Vec<M> lb = Vec<M>::Constant(-std::numeric_limits<double>::infinity());
  Vec<M> ub = Vec<M>::Constant(std::numeric_limits<double>::infinity());

  static InputBox unbounded() { return {}; }
  bool finite() const { return lb.allFinite() && ub.allFinite(); }
  /// Largest violation of the box by u (0 when inside).
  double violation(const Vec<M>& u) const {
    double v = 0.0;
    for (int j = 0; j < M; ++j) v = std::max({v, lb(j) - u(j), u(j) - ub(j)});
    return v;
  }
};

/// Linear class-K gains alpha(r) = gamma r, alpha_b(r) = gamma_b r, robustness
/// weights, backup horizon and grid. Defaults are the unicycle example values.
struct SafetyGains {
  double gamma = 1.0;
  double gamma_b = 1.0;
  double sigma = 0.1;
  double sigma_b = 0.1;
  double T = 4.0;
  int N_c = 80;
  int substeps = 5;
  double delta_heading = 0.0;
  double epsilon = 0.01;
  // Diagonal of the tracking weight in ||u - k_d||^2.
  Eigen::VectorXd input_weight = Eigen::Vector2d(1.0, 0.25);

  void validate() const {
    if (!(gamma > 0.0) || !(gamma_b > 0.0)) throw std::invalid_argument("SafetyGains: gamma, gamma_b must be > 0");
    if (!(T > 0.0)) throw std::invalid_argument("SafetyGains: T must be > 0");
    if (N_c < 1 || substeps < 1) throw std::invalid_argument("SafetyGains: N_c and substeps must be >= 1");
    if (sigma < 0.0 || sigma_b < 0.0) throw std::invalid_argument("SafetyGains: sigma, sigma_b must be >= 0");
    if ((input_weight.array() <= 0.0).any()) throw std::invalid_argument("SafetyGains: input weight must be positive");
  }
};

template <int N, int M>
VectorField<N> backup_field(const ControlAffineModel<N, M>& model, const BackupSpec<N, M>& bspec) {
  return VectorField<N>{
      [model, k_b = bspec.k_b](const Vec<N>& x, double t) -> Vec<N> {
        return model.f(x) + model.g(x) * k_b(x, t);
      },
      bspec.closed_loop_jacobian};
}

template <int N, int M>
BackupFlow<N> backup_flow(const Vec<N>& x, double t, const ControlAffineModel<N, M>& model,
                          const BackupSpec<N, M>& bspec, const SafetyGains& gains) {
  return integrate_backup_flow(backup_field(model, bspec), x, t, gains.T, gains.N_c, gains.substeps);
}

/// Objective ||u - k_d||^2_Gamma written as 1/2 u'Pu + q'u.
template <int M>
QpProblem tracking_problem(const Vec<M>& k_d, const SafetyGains& gains, const InputBox<M>& box) {
  if (gains.input_weight.size() != M) throw std::invalid_argument("tracking_problem: weight dimension");
  const Eigen::VectorXd w = gains.input_weight;
  Eigen::MatrixXd P = (2.0 * w).asDiagonal();
  Eigen::VectorXd q = -2.0 * w.cwiseProduct(Eigen::VectorXd(k_d));
  return QpProblem(std::move(P), std::move(q), Eigen::VectorXd(box.lb), Eigen::VectorXd(box.ub));
}

/// Row for the derivative condition on a composite barrier with gradient
/// dh_dx (w.r.t. the current state) evaluated at the current state x.
template <int N, int M>
ConstraintRow barrier_row(const Vec<N>& x, const ControlAffineModel<N, M>& model,
                          const Eigen::Matrix<double, 1, N>& dh_dx, double value, double dh_dt,
                          double gamma, double robust_weight, std::string label) {
  ConstraintRow row;
  row.a = (dh_dx * model.g(x)).transpose();
  row.b = -gamma * value - (dh_dx * model.f(x)).value() - dh_dt +
          robust_weight * dh_dx.squaredNorm();
  row.label = std::move(label);
  return row;
}

template <int N, int M>
ConstraintRow cbf_row(const Vec<N>& x, double t, const ControlAffineModel<N, M>& model,
                      const SafetySpec<N>& spec, double gamma) {
  const BarrierEval<N> e = spec.h(x, t);
  return barrier_row(x, model, e.grad, e.value, e.dt, gamma, 0.0, "h");
}

template <int N, int M>
QpSolution cbf_qp_controller(const Vec<N>& x, double t, const Vec<M>& k_d,
                             const ControlAffineModel<N, M>& model, const SafetySpec<N>& spec,
                             const SafetyGains& gains, const InputBox<M>& box) {
  gains.validate();
  QpProblem qp = tracking_problem(k_d, gains, box);
  qp.add_row(cbf_row(x, t, model, spec, gains.gamma));
  return solve(qp);
}

/// N_c + 1 rows "hbar_i" on the trajectory grid plus one "hb" row at theta = T.
/// robust = true adds sigma ||d hbar_i / dx||^2 (sigma_b for hb) to each b.
template <int N, int M>
std::vector<ConstraintRow> assemble_backup_rows(const Vec<N>& x, double t, const BackupFlow<N>& flow,
                                                const ControlAffineModel<N, M>& model,
                                                const SafetySpec<N>& spec, const BackupSpec<N, M>& bspec,
                                                const SafetyGains& gains, bool robust) {
  std::vector<ConstraintRow> rows;
  rows.reserve(flow.size() + 1);
  const double sigma = robust ? gains.sigma : 0.0;
  const double sigma_b = robust ? gains.sigma_b : 0.0;
  for (std::size_t i = 0; i < flow.size(); ++i) {
    const double ti = t + flow.thetas[i];
    const BarrierEval<N> e = spec.h(flow.states[i], ti);
    const Eigen::Matrix<double, 1, N> dh_dx = e.grad * flow.sens[i];
    rows.push_back(barrier_row(x, model, dh_dx, e.value, e.dt, gains.gamma, sigma, "hbar_" + std::to_string(i)));
  }
  const BarrierEval<N> eb = bspec.h_b(flow.terminal_state(), t + flow.horizon);
  const Eigen::Matrix<double, 1, N> dhb_dx = eb.grad * flow.terminal_sens();
  rows.push_back(barrier_row(x, model, dhb_dx, eb.value, eb.dt, gains.gamma_b, sigma_b, "hb"));
  return rows;
}

/// Membership of the flow's seed state in the implicit invariant set (or its
/// thresholded neighborhood). margin = min(hbar_min - h_threshold, hbar_b - hb_threshold).
struct Membership {
  bool member = false;
  double margin = 0.0;
  double hbar_min = 0.0;
  double hbar_b = 0.0;
};

template <int N, int M>
Membership membership_thresholded(const BackupFlow<N>& flow, const SafetySpec<N>& spec,
                                  const BackupSpec<N, M>& bspec, double h_threshold,
                                  double hb_threshold) {
  Membership m;
  m.hbar_min = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < flow.size(); ++i) {
    m.hbar_min = std::min(m.hbar_min, spec.h(flow.states[i], flow.base_time + flow.thetas[i]).value);
  }
  m.hbar_b = bspec.h_b(flow.terminal_state(), flow.base_time + flow.horizon).value;
  m.margin = std::min(m.hbar_min - h_threshold, m.hbar_b - hb_threshold);
  m.member = m.margin >= 0.0;
  return m;
}

template <int N, int M>
Membership membership_SI(const BackupFlow<N>& flow, const SafetySpec<N>& spec, const BackupSpec<N, M>& bspec) {
  return membership_thresholded(flow, spec, bspec, 0.0, 0.0);
}

/// Thresholds -B / (4 sigma gamma) and -B / (4 sigma_b gamma_b).
template <int N, int M>
Membership membership_Sd(const BackupFlow<N>& flow, const SafetySpec<N>& spec, const BackupSpec<N, M>& bspec,
                         const SafetyGains& gains, double disturbance_bound) {
  if (!(gains.sigma > 0.0) || !(gains.sigma_b > 0.0))
    throw std::invalid_argument("membership_Sd: sigma and sigma_b must be positive");
  if (disturbance_bound < 0.0) throw std::invalid_argument("membership_Sd: bound must be nonnegative");
  return membership_thresholded(flow, spec, bspec, -disturbance_bound / (4.0 * gains.sigma * gains.gamma),
                                -disturbance_bound / (4.0 * gains.sigma_b * gains.gamma_b));
}

template <int N>
struct BackupControl {
  QpSolution solution;
  BackupFlow<N> flow;
  // Evaluated at every call; diagnoses infeasible solves.
  Membership si;
};

template <int N, int M>
BackupControl<N> backup_controller(const Vec<N>& x, double t, const Vec<M>& k_d,
                                   const ControlAffineModel<N, M>& model, const SafetySpec<N>& spec,
                                   const BackupSpec<N, M>& bspec, const SafetyGains& gains,
                                   const InputBox<M>& box) {
  gains.validate();
  if (!box.finite()) throw std::invalid_argument("backup_controller: input box must be finite");
  BackupControl<N> out{QpSolution{}, backup_flow(x, t, model, bspec, gains), Membership{}};
  QpProblem qp = tracking_problem(k_d, gains, box);
  for (auto& row : assemble_backup_rows(x, t, out.flow, model, spec, bspec, gains, false)) qp.add_row(std::move(row));
  out.solution = solve(qp);
  out.si = membership_SI(out.flow, spec, bspec);
  return out;
}

template <int N, int M>
BackupControl<N> issf_backup_controller(const Vec<N>& x, double t, const Vec<M>& k_d,
                                        const ControlAffineModel<N, M>& model, const SafetySpec<N>& spec,
                                        const BackupSpec<N, M>& bspec, const SafetyGains& gains,
                                        const InputBox<M>& box, double penalty, double penalty_b) {
  gains.validate();
  if (!(penalty > 0.0) || !(penalty_b > 0.0)) throw std::invalid_argument("issf_backup_controller: penalties must be positive");
  BackupControl<N> out{QpSolution{}, backup_flow(x, t, model, bspec, gains), Membership{}};
  QpProblem qp = tracking_problem(k_d, gains, box);
  auto rows = assemble_backup_rows(x, t, out.flow, model, spec, bspec, gains, true);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].slack_penalty = (i + 1 == rows.size()) ? penalty_b : penalty;
    qp.add_row(std::move(rows[i]));
  }
  out.solution = solve(qp);
  out.si = membership_SI(out.flow, spec, bspec);
  return out;
}

/// Largest violation b - a'u over rows (0 when all hold).
template <int M>
double row_violation(const std::vector<ConstraintRow>& rows, const Vec<M>& u) {
  double v = 0.0;
  for (const auto& r : rows) v = std::max(v, r.b - r.a.dot(Eigen::VectorXd(u)));
  return v;
}

}  // namespace issf
