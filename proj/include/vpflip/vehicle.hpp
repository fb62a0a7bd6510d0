#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>

#include "vpflip/errors.hpp"
#include "vpflip/so3.hpp"

// Variable-pitch quadcopter rigid-body model and fixed-step integrator.
//
// Translation runs in the inertial frame with collective thrust along the
// body z axis, gravity and diagonal linear drag. Attitude uses the Euler
// Lagrangian form J(euler) * dd(euler) + C(euler, d(euler)) * d(euler) = tau,
// with J built from the Z-Y-X Euler-rate-to-body-rate map and C from its
// Christoffel symbols. The rotation matrix is integrated alongside the Euler
// state and is the authoritative attitude for the geometric error terms.

namespace vpflip {

using Vec12 = Eigen::Matrix<double, 12, 1>;

struct VehicleParams {
  double mass = 2.0;       // kg
  double gravity = 9.81;   // m/s^2
  Vec3 drag{0.15, 0.15, 0.20};       // diagonal drag, kg/s
  Vec3 inertia{0.06, 0.06, 0.10};    // body principal inertia, kg m^2
  double arm_length = 0.30;          // rotor arm to CoM, m
  double blade_radius = 0.12;        // blade tip radius, m
  double blade_chord = 0.02;         // m
  int blades_per_rotor = 2;
  double air_density = 1.225;        // kg/m^3
  double blade_speed = 900.0;        // steady-state blade speed, rad/s
  double lift_slope = 5.7;           // airfoil lift-curve slope, 1/rad
  double inflow_ratio = 0.05;
  double blade_angle_min = -0.45;    // rad
  double blade_angle_max = 0.45;     // rad
  double pitch_guard = 1e-3;  // margin to the |theta| = pi/2 singularity, rad

  void validate() const {
    if (mass <= 0.0) throw ConfigError("vehicle: mass must be positive");
    if ((drag.array() < 0.0).any()) throw ConfigError("vehicle: drag must be non-negative");
    if ((inertia.array() <= 0.0).any()) throw ConfigError("vehicle: inertia must be positive");
    if (arm_length <= 0.0 || blade_radius <= 0.0 || blade_chord <= 0.0) {
      throw ConfigError("vehicle: rotor geometry must be positive");
    }
    if (blades_per_rotor < 1) throw ConfigError("vehicle: blades_per_rotor must be >= 1");
    if (air_density <= 0.0 || blade_speed <= 0.0 || lift_slope <= 0.0) {
      throw ConfigError("vehicle: aero constants must be positive");
    }
    if (!(blade_angle_min < blade_angle_max)) {
      throw ConfigError("vehicle: blade_angle_min must be below blade_angle_max");
    }
  }

  double hover_thrust() const { return mass * gravity; }
};

struct Wrench {
  double thrust = 0.0;  // N, along body z
  Vec3 torque = Vec3::Zero();  // N m, generalized Euler torques

  Eigen::Vector4d stacked() const { return {thrust, torque.x(), torque.y(), torque.z()}; }
};

struct VehicleState {
  Vec3 position = Vec3::Zero();   // m
  Vec3 velocity = Vec3::Zero();   // m/s
  Vec3 euler = Vec3::Zero();      // (phi, theta, psi), rad
  Vec3 euler_rate = Vec3::Zero(); // rad/s
  Mat3 rotation = Mat3::Identity();

  Vec12 packed() const {
    Vec12 x;
    x << position, velocity, euler, euler_rate;
    return x;
  }

  static VehicleState unpack(const Vec12& x, const Mat3& r) {
    VehicleState s;
    s.position = x.segment<3>(0);
    s.velocity = x.segment<3>(3);
    s.euler = x.segment<3>(6);
    s.euler_rate = x.segment<3>(9);
    s.rotation = r;
    return s;
  }
};

/// Euler-rate-to-body-rate map W for the Z-Y-X convention: omega_body =
/// W(euler) * euler_rate.
inline Mat3 euler_rate_map(const Vec3& euler) {
  const double cf = std::cos(euler.x()), sf = std::sin(euler.x());
  const double ct = std::cos(euler.y()), st = std::sin(euler.y());
  Mat3 w;
  // clang-format off
  w << 1.0,  0.0,     -st,
       0.0,   cf, sf * ct,
       0.0,  -sf, cf * ct;
  // clang-format on
  return w;
}

inline Vec3 body_rates(const VehicleState& s) {
  return euler_rate_map(s.euler) * s.euler_rate;
}

namespace detail {

// dW/dphi and dW/dtheta; W does not depend on psi.
inline std::array<Mat3, 2> euler_rate_map_derivatives(const Vec3& euler) {
  const double cf = std::cos(euler.x()), sf = std::sin(euler.x());
  const double ct = std::cos(euler.y()), st = std::sin(euler.y());
  Mat3 dphi = Mat3::Zero();
  dphi(1, 1) = -sf;
  dphi(1, 2) = cf * ct;
  dphi(2, 1) = -cf;
  dphi(2, 2) = -sf * ct;
  Mat3 dtheta = Mat3::Zero();
  dtheta(0, 2) = -ct;
  dtheta(1, 2) = -sf * st;
  dtheta(2, 2) = -cf * st;
  return {dphi, dtheta};
}

inline void check_pitch(const Vec3& euler, const VehicleParams& p) {
  if (std::abs(std::abs(euler.y()) - M_PI / 2.0) < p.pitch_guard) {
    throw SingularityError("attitude model: pitch within guard band of +/- pi/2");
  }
}

}  // namespace detail

/// Configuration-dependent inertia of the Euler-angle attitude model,
/// J = W^T * diag(inertia) * W. Symmetric positive definite away from the
/// pitch singularity.
inline Mat3 inertia_matrix(const Vec3& euler, const VehicleParams& p) {
  detail::check_pitch(euler, p);
  const Mat3 w = euler_rate_map(euler);
  return w.transpose() * p.inertia.asDiagonal() * w;
}

/// Coriolis matrix from the Christoffel symbols of inertia_matrix, so that
/// dJ/dt - 2C is skew-symmetric along trajectories.
inline Mat3 coriolis_matrix(const Vec3& euler, const Vec3& euler_rate, const VehicleParams& p) {
  detail::check_pitch(euler, p);
  const Mat3 w = euler_rate_map(euler);
  const auto dw = detail::euler_rate_map_derivatives(euler);
  const Mat3 ib = p.inertia.asDiagonal();

  // dJ[k] = dJ/dq_k for q = (phi, theta, psi); the psi derivative vanishes.
  std::array<Mat3, 3> dj;
  for (int k = 0; k < 2; ++k) {
    dj[k] = dw[k].transpose() * ib * w + w.transpose() * ib * dw[k];
  }
  dj[2].setZero();

  Mat3 c = Mat3::Zero();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double cij = 0.0;
      for (int k = 0; k < 3; ++k) {
        cij += 0.5 * (dj[k](i, j) + dj[j](i, k) - dj[i](j, k)) * euler_rate(k);
      }
      c(i, j) = cij;
    }
  }
  return c;
}

/// Right-hand side of the 12-state vehicle dynamics. The thrust acts along
/// the third column of the tracked rotation matrix, so negative thrust
/// supports inverted flight.
inline Vec12 state_derivative(const VehicleState& s, const Wrench& w, const VehicleParams& p) {
  const Vec3 thrust_accel = s.rotation.col(2) * (w.thrust / p.mass);
  const Vec3 accel = thrust_accel - Vec3(0.0, 0.0, p.gravity) -
                     (p.drag.asDiagonal() * s.velocity) / p.mass;

  const Mat3 j = inertia_matrix(s.euler, p);
  const Mat3 c = coriolis_matrix(s.euler, s.euler_rate, p);
  const Vec3 euler_accel = j.ldlt().solve(w.torque - c * s.euler_rate);

  Vec12 dx;
  dx << s.velocity, accel, s.euler_rate, euler_accel;
  return dx;
}

/// Classical RK4 step on the 12-dim state with the rotation matrix advanced
/// by the Simpson-weighted body rate of the four stages.
inline VehicleState rk4_step(const VehicleState& s, const Wrench& w, double h,
                             const VehicleParams& p) {
  if (h <= 0.0) throw ConfigError("rk4_step: step size must be positive");

  const Vec12 x0 = s.packed();
  auto deriv = [&](const Vec12& x) {
    return state_derivative(VehicleState::unpack(x, s.rotation), w, p);
  };

  const Vec12 k1 = deriv(x0);
  const Vec12 k2 = deriv(x0 + 0.5 * h * k1);
  const Vec12 k3 = deriv(x0 + 0.5 * h * k2);
  const Vec12 k4 = deriv(x0 + h * k3);
  const Vec12 x1 = x0 + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

  auto stage_rates = [&](const Vec12& x) {
    return euler_rate_map(x.segment<3>(6)) * Vec3(x.segment<3>(9));
  };
  const Vec3 omega = (stage_rates(x0) + 2.0 * stage_rates(x0 + 0.5 * h * k1) +
                      2.0 * stage_rates(x0 + 0.5 * h * k2) + stage_rates(x0 + h * k3)) /
                     6.0;

  return VehicleState::unpack(x1, integrate_rotation(s.rotation, omega, h));
}

}  // namespace vpflip
