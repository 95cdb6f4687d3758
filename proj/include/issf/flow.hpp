#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace issf {

template <int N>
using Vec = Eigen::Matrix<double, N, 1>;
template <int N>
using Mat = Eigen::Matrix<double, N, N>;

/// Raised when a fixed-step integration produces NaN or Inf.
class IntegrationDiverged : public std::runtime_error {
 public:
  explicit IntegrationDiverged(double t)
      : std::runtime_error("integration diverged at t=" + std::to_string(t)), time_(t) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

/// Time-varying vector field x' = f(x, t) together with its state Jacobian.
template <int N>
struct VectorField {
  static constexpr int dim = N;
  std::function<Vec<N>(const Vec<N>&, double)> eval;
  std::function<Mat<N>(const Vec<N>&, double)> jacobian;
};

namespace detail {

template <int K, class F>
Vec<K> rk4_raw(const F& f, const Vec<K>& x, double t, double dt) {
  const Vec<K> k1 = f(x, t);
  const Vec<K> k2 = f(x + 0.5 * dt * k1, t + 0.5 * dt);
  const Vec<K> k3 = f(x + 0.5 * dt * k2, t + 0.5 * dt);
  const Vec<K> k4 = f(x + dt * k3, t + dt);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

/// One classical RK4 step of x' = rhs(x, t) over [t, t + dt].
template <int K, class F>
Vec<K> rk4_step(const F& rhs, const Vec<K>& x, double t, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("rk4_step: dt must be positive");
  Vec<K> next = detail::rk4_raw<K>(rhs, x, t, dt);
  if (!next.allFinite()) throw IntegrationDiverged(t + dt);
  return next;
}

template <int N>
Vec<N> rk4_step(const VectorField<N>& field, const Vec<N>& x, double t, double dt) {
  return rk4_step<N>(field.eval, x, t, dt);
}

/// Backup trajectory and its sensitivity Q = d(phi)/dx sampled on theta_i = i T / N_c.
template <int N>
struct BackupFlow {
  double horizon = 0.0;
  int grid_count = 0;
  int substeps = 0;
  double base_time = 0.0;
  std::vector<double> thetas;
  std::vector<Vec<N>> states;
  std::vector<Mat<N>> sens;

  std::size_t size() const { return states.size(); }
  const Vec<N>& terminal_state() const { return states.back(); }
  const Mat<N>& terminal_sens() const { return sens.back(); }
};

/// Integrates the flow and the variational equation Q' = (df/dx) Q, Q(0) = I,
/// jointly with RK4. The field is evaluated at wall time t + theta.
template <int N>
BackupFlow<N> integrate_backup_flow(const VectorField<N>& field, const Vec<N>& x, double t,
                                    double horizon, int grid_count, int substeps = 5) {
  if (!(horizon > 0.0)) throw std::invalid_argument("integrate_backup_flow: horizon must be positive");
  if (grid_count < 1) throw std::invalid_argument("integrate_backup_flow: grid_count must be >= 1");
  if (substeps < 1) throw std::invalid_argument("integrate_backup_flow: substeps must be >= 1");

  constexpr int K = N + N * N;
  using Aug = Vec<K>;
  const auto rhs = [&field](const Aug& z, double tau) {
    const Vec<N> s = z.template head<N>();
    const Eigen::Map<const Mat<N>> q(z.data() + N);
    Aug dz;
    dz.template head<N>() = field.eval(s, tau);
    Eigen::Map<Mat<N>>(dz.data() + N) = field.jacobian(s, tau) * q;
    return dz;
  };

  BackupFlow<N> flow;
  flow.horizon = horizon;
  flow.grid_count = grid_count;
  flow.substeps = substeps;
  flow.base_time = t;
  flow.thetas.reserve(grid_count + 1);
  flow.states.reserve(grid_count + 1);
  flow.sens.reserve(grid_count + 1);

  Aug z;
  z.template head<N>() = x;
  Eigen::Map<Mat<N>>(z.data() + N).setIdentity();
  flow.thetas.push_back(0.0);
  flow.states.push_back(x);
  flow.sens.push_back(Mat<N>::Identity());

  const double node_dt = horizon / grid_count;
  const double step = node_dt / substeps;
  for (int i = 0; i < grid_count; ++i) {
    const double theta0 = i * horizon / grid_count;
    for (int j = 0; j < substeps; ++j) {
      z = rk4_step<K>(rhs, z, t + theta0 + j * step, step);
    }
    flow.thetas.push_back((i + 1) * horizon / grid_count);
    flow.states.push_back(z.template head<N>());
    flow.sens.push_back(Eigen::Map<const Mat<N>>(z.data() + N));
  }
  return flow;
}

/// phi(theta, x) using ceil(theta / max_step) uniform RK4 steps.
template <int N>
Vec<N> flow_state(const VectorField<N>& field, const Vec<N>& x, double t, double theta,
                  double max_step = 0.01) {
  if (theta < 0.0) throw std::invalid_argument("flow_state: theta must be nonnegative");
  if (theta == 0.0) return x;
  const int steps = std::max(1, static_cast<int>(std::ceil(theta / max_step - 1e-9)));
  const double dt = theta / steps;
  Vec<N> s = x;
  for (int k = 0; k < steps; ++k) s = rk4_step(field, s, t + k * dt, dt);
  return s;
}

/// Central-difference estimate of d(phi(theta, x))/dx. Test oracle for the
/// sensitivities produced by integrate_backup_flow.
template <int N>
Mat<N> fd_sensitivity(const VectorField<N>& field, const Vec<N>& x, double t, double theta,
                      double eps, double max_step = 0.01) {
  if (!(eps > 0.0)) throw std::invalid_argument("fd_sensitivity: eps must be positive");
  Mat<N> jac;
  for (int j = 0; j < N; ++j) {
    Vec<N> xp = x, xm = x;
    xp(j) += eps;
    xm(j) -= eps;
    jac.col(j) = (flow_state(field, xp, t, theta, max_step) - flow_state(field, xm, t, theta, max_step)) /
                 (2.0 * eps);
  }
  return jac;
}

}  // namespace issf
