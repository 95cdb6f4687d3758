#pragma once

// Unicycle obstacle-avoidance model suite: reduced-order model, obstacle
// tracks, desired and backup controllers, the heading-penalized distance
// barrier h, the backup barrier h_b, and a full-order proxy (unicycle with
// first-order actuator lag) whose tracking error acts as a disturbance.

#include <issf/flow.hpp>
#include <issf/safety.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace issf::unicycle {

struct State3 {
  double xi = 0.0;
  double eta = 0.0;
  double psi = 0.0;

  Eigen::Vector3d vec() const { return {xi, eta, psi}; }
  static State3 from(const Eigen::Vector3d& v) { return {v(0), v(1), v(2)}; }
  Eigen::Vector2d position() const { return {xi, eta}; }
};

struct Input2 {
  double v = 0.0;
  double omega = 0.0;

  Eigen::Vector2d vec() const { return {v, omega}; }
  static Input2 from(const Eigen::Vector2d& u) { return {u(0), u(1)}; }
};

struct InputBounds {
  double v_min = 0.1;
  double v_max = 0.2;
  double omega_max = 0.3;

  InputBox<2> box() const {
    InputBox<2> b;
    b.lb = Eigen::Vector2d(v_min, -omega_max);
    b.ub = Eigen::Vector2d(v_max, omega_max);
    return b;
  }
};

struct DesiredParams {
  double v_g = 0.2;
  double eta_g = 0.0;
  double K_eta = 0.5;
  double K_psi = 0.5;
};

/// Obstacle center p_O(t). The sinusoidal track moves along eta:
/// eta_O(t) = eta_bar_O - A_eta sin(Omega t) / Omega.
class ObstacleTrack {
 public:
  enum class Kind { stationary, sinusoidal };

  static ObstacleTrack stationary(double xi_O, double eta_O) {
    return ObstacleTrack(Kind::stationary, xi_O, eta_O, 0.0, 1.0);
  }
  static ObstacleTrack sinusoidal(double xi_O, double eta_bar_O, double A_eta, double Omega) {
    if (!(Omega > 0.0)) throw std::invalid_argument("ObstacleTrack: Omega must be positive");
    return ObstacleTrack(Kind::sinusoidal, xi_O, eta_bar_O, A_eta, Omega);
  }

  Kind kind() const { return kind_; }
  double xi_O() const { return xi_O_; }
  double eta_bar_O() const { return eta_bar_O_; }
  double A_eta() const { return A_eta_; }
  double Omega() const { return Omega_; }

  Eigen::Vector2d position(double t) const {
    if (kind_ == Kind::stationary) return {xi_O_, eta_bar_O_};
    return {xi_O_, eta_bar_O_ - A_eta_ * std::sin(Omega_ * t) / Omega_};
  }
  Eigen::Vector2d velocity(double t) const {
    if (kind_ == Kind::stationary) return Eigen::Vector2d::Zero();
    return {0.0, -A_eta_ * std::cos(Omega_ * t)};
  }
  Eigen::Vector2d acceleration(double t) const {
    if (kind_ == Kind::stationary) return Eigen::Vector2d::Zero();
    return {0.0, A_eta_ * Omega_ * std::sin(Omega_ * t)};
  }

 private:
  ObstacleTrack(Kind k, double xi, double eta, double a, double w)
      : kind_(k), xi_O_(xi), eta_bar_O_(eta), A_eta_(a), Omega_(w) {}

  Kind kind_;
  double xi_O_;
  double eta_bar_O_;
  double A_eta_;
  double Omega_;
};

class DegenerateGeometry : public std::domain_error {
 public:
  DegenerateGeometry() : std::domain_error("state coincides with the obstacle center") {}
};

inline constexpr double kMinDistance = 1e-9;

/// Distance D, outward normal n, projector P = I - n n', heading q and its
/// left normal r.
struct Geometry {
  double D;
  Eigen::Vector2d n;
  Eigen::Matrix2d P;
  Eigen::Vector2d q;
  Eigen::Vector2d r;

  static Geometry at(const State3& x, const Eigen::Vector2d& p_O) {
    const Eigen::Vector2d rel = x.position() - p_O;
    const double D = rel.norm();
    if (!(D > kMinDistance)) throw DegenerateGeometry();
    const Eigen::Vector2d n = rel / D;
    return {D, n, Eigen::Matrix2d::Identity() - n * n.transpose(),
            Eigen::Vector2d(std::cos(x.psi), std::sin(x.psi)),
            Eigen::Vector2d(-std::sin(x.psi), std::cos(x.psi))};
  }
};

inline Eigen::Vector3d rom_dynamics(const State3& x, const Input2& u) {
  return {u.v * std::cos(x.psi), u.v * std::sin(x.psi), u.omega};
}

inline ControlAffineModel<3, 2> model() {
  return {[](const Eigen::Vector3d&) { return Eigen::Vector3d::Zero().eval(); },
          [](const Eigen::Vector3d& x) {
            Eigen::Matrix<double, 3, 2> g;
            g << std::cos(x(2)), 0.0, std::sin(x(2)), 0.0, 0.0, 1.0;
            return g;
          }};
}

inline Input2 desired_controller(const State3& x, const DesiredParams& p) {
  return {p.v_g, p.K_eta * (p.eta_g - x.eta) - p.K_psi * std::sin(x.psi)};
}

/// h = D - R_O + delta n'q.
inline BarrierEval<3> safety_h(const State3& x, double t, const ObstacleTrack& track, double delta,
                               double R_O) {
  const Geometry g = Geometry::at(x, track.position(t));
  const Eigen::Vector2d pdot = track.velocity(t);
  BarrierEval<3> e;
  e.value = g.D - R_O + delta * g.n.dot(g.q);
  e.grad.head<2>() = g.n.transpose() + delta * g.q.transpose() * g.P / g.D;
  e.grad(2) = delta * g.n.dot(g.r);
  e.dt = -g.n.dot(pdot) - delta * g.q.dot(g.P * pdot) / g.D;
  return e;
}

/// h_b = n'(q v_max - pdot_O).
inline BarrierEval<3> backup_h(const State3& x, double t, const ObstacleTrack& track, double v_max) {
  const Geometry g = Geometry::at(x, track.position(t));
  const Eigen::Vector2d pdot = track.velocity(t);
  const Eigen::Vector2d w = g.q * v_max - pdot;
  BarrierEval<3> e;
  e.value = g.n.dot(w);
  e.grad.head<2>() = w.transpose() * g.P / g.D;
  e.grad(2) = g.n.dot(g.r) * v_max;
  e.dt = -w.dot(g.P * pdot) / g.D - g.n.dot(track.acceleration(t));
  return e;
}

struct BackupPolicy {
  Input2 u;
  // d/dx of rom_dynamics(x, k_b(x, t)).
  Eigen::Matrix3d field_jacobian;
};

/// k_b = [v_max, omega_max tanh(n'r / epsilon)]: turn away from the obstacle
/// at full rate and drive at full speed.
inline BackupPolicy backup_policy(const State3& x, double t, const ObstacleTrack& track,
                                  const InputBounds& bounds, double epsilon) {
  const Geometry g = Geometry::at(x, track.position(t));
  const double s = g.n.dot(g.r) / epsilon;
  const double th = std::tanh(s);
  BackupPolicy out;
  out.u = {bounds.v_max, bounds.omega_max * th};
  const double slope = bounds.omega_max * (1.0 - th * th) / epsilon;
  out.field_jacobian.setZero();
  out.field_jacobian(0, 2) = -bounds.v_max * std::sin(x.psi);
  out.field_jacobian(1, 2) = bounds.v_max * std::cos(x.psi);
  out.field_jacobian.block<1, 2>(2, 0) = slope * g.r.transpose() * g.P / g.D;
  out.field_jacobian(2, 2) = -slope * g.n.dot(g.q);
  return out;
}

inline SafetySpec<3> make_safety_spec(const ObstacleTrack& track, double delta, double R_O) {
  return {[=](const Eigen::Vector3d& x, double t) { return safety_h(State3::from(x), t, track, delta, R_O); }};
}

inline BackupSpec<3, 2> make_backup_spec(const ObstacleTrack& track, const InputBounds& bounds, double epsilon) {
  return {[=](const Eigen::Vector3d& x, double t) { return backup_h(State3::from(x), t, track, bounds.v_max); },
          [=](const Eigen::Vector3d& x, double t) {
            return backup_policy(State3::from(x), t, track, bounds, epsilon).u.vec();
          },
          [=](const Eigen::Vector3d& x, double t) {
            return backup_policy(State3::from(x), t, track, bounds, epsilon).field_jacobian;
          }};
}

// Full-order proxy -----------------------------------------------------------

/// Pose plus lagged actuator rates. rate_noise is a bounded perturbation
/// added to the realized rates, held for the current step.
struct FosState {
  State3 pose;
  double v_act = 0.0;
  double omega_act = 0.0;
  Input2 rate_noise{};

  /// Rates the pose actually integrates with.
  Input2 realized_rates() const { return {v_act + rate_noise.v, omega_act + rate_noise.omega}; }
};

/// Advances the proxy by dt with `substeps` RK4 steps. Rates follow
/// v_act' = (v - v_act) / tau (same for omega).
inline FosState fos_step(const FosState& s, const Input2& u, double dt, double tau, int substeps = 1) {
  if (!(tau > 0.0) || !(dt > 0.0) || substeps < 1) throw std::invalid_argument("fos_step: tau, dt, substeps");
  using V5 = Vec<5>;
  const Input2 noise = s.rate_noise;
  const auto rhs = [&](const V5& z, double) {
    const State3 pose{z(0), z(1), z(2)};
    const Eigen::Vector3d pd = rom_dynamics(pose, {z(3) + noise.v, z(4) + noise.omega});
    V5 dz;
    dz << pd, (u.v - z(3)) / tau, (u.omega - z(4)) / tau;
    return dz;
  };
  V5 z;
  z << s.pose.vec(), s.v_act, s.omega_act;
  const double h = dt / substeps;
  for (int k = 0; k < substeps; ++k) z = rk4_step<5>(rhs, z, k * h, h);
  return {State3{z(0), z(1), z(2)}, z(3), z(4), noise};
}

inline FosState fos_step(FosState s, const Input2& u, double dt, double tau, const Input2& noise,
                         int substeps = 1) {
  s.rate_noise = noise;
  return fos_step(s, u, dt, tau, substeps);
}

/// d = (realized pose rate) - (ROM prediction under u).
inline Eigen::Vector3d discrepancy(const FosState& s, const Input2& u) {
  const Input2 a = s.realized_rates();
  return {(a.v - u.v) * std::cos(s.pose.psi), (a.v - u.v) * std::sin(s.pose.psi), a.omega - u.omega};
}

}  // namespace issf::unicycle
