#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "vpflip/errors.hpp"
#include "vpflip/vehicle.hpp"

// Control allocation for the variable-pitch rotor set.
//
// Thrust and the roll/pitch torques are linear in the per-rotor thrust
// coefficients (mixing matrix M1 below); the yaw torque couples through
// kappa(C) = sum_i s_i * sqrt(|C_i|) * C_i with rotor spin pattern
// s = (-1, +1, -1, +1). A commanded wrench is mapped to coefficients by the
// weighted minimum-norm problem
//
//   min 0.5 C^T W C + 0.5 mu * (tau_psi / a_tilde - kappa(C))^2
//   s.t. M1 C = (T, tau_phi, tau_theta),
//
// whose stationarity condition rearranges into the implicit relation
// C = Upsilon(C)^{-1} M1^T (M1 Upsilon(C)^{-1} M1^T)^{-1} H1. The linear
// constraint holds at every iterate; iteration resolves the yaw coupling.

namespace vpflip {

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

enum class KappaGradMode {
  Paper,     // diagonal 1.5 * s_i * sign(C_i) / sqrt(|C_i|), times C
  Analytic,  // gradient taken as 0.5 * s_i / sqrt(|C_i|) per component
};

struct AllocationConfig {
  Mat4 weight = Mat4::Identity();  // W, symmetric positive definite
  double mu_yaw = 1e7;      // yaw-penalty weight; large values pin kappa(C)
  double eps_coeff = 1e-6;  // |C_i| floor inside the yaw-gradient terms
  double tol = 1e-10;       // fixed-point residual tolerance on ||F(C) - C||
  int max_iters = 300;
  double relaxation = 0.5;  // initial (and maximum) damping factor
  KappaGradMode grad_mode = KappaGradMode::Paper;

  void validate() const {
    if ((weight - weight.transpose()).norm() > 1e-12) {
      throw ConfigError("allocation: weight matrix must be symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Mat4> es(weight);
    if (es.eigenvalues().minCoeff() <= 0.0) {
      throw ConfigError("allocation: weight matrix must be positive definite");
    }
    if (mu_yaw <= 0.0) throw ConfigError("allocation: mu_yaw must be positive");
    if (eps_coeff <= 0.0) throw ConfigError("allocation: eps_coeff must be positive");
    if (tol <= 0.0) throw ConfigError("allocation: tol must be positive");
    if (max_iters < 1) throw ConfigError("allocation: max_iters must be >= 1");
    if (relaxation <= 0.0 || relaxation > 1.0) {
      throw ConfigError("allocation: relaxation must be in (0, 1]");
    }
  }
};

struct RotorConstants {
  double thrust_gain;  // N per unit thrust coefficient
  double yaw_gain;     // a_tilde, N m per unit sqrt(|C|) * C
  double solidity;

  static RotorConstants from(const VehicleParams& p) {
    RotorConstants k;
    k.thrust_gain = p.air_density * M_PI * std::pow(p.blade_radius, 4) *
                    p.blade_speed * p.blade_speed;
    k.yaw_gain = p.blade_radius * k.thrust_gain / std::sqrt(2.0);
    k.solidity = p.blades_per_rotor * p.blade_chord / (M_PI * p.blade_radius);
    return k;
  }
};

namespace detail {
inline constexpr std::array<double, 4> kYawSign{-1.0, 1.0, -1.0, 1.0};
inline double sign_of(double x) { return x < 0.0 ? -1.0 : 1.0; }  // sign(0) = +1
}  // namespace detail

/// Linear part of the mixing: rows map C to (thrust, tau_phi, tau_theta).
inline Mat34 thrust_mixing_matrix(const RotorConstants& k, double arm_length) {
  const double kv = k.thrust_gain;
  const double lk = arm_length * kv;
  Mat34 m;
  // clang-format off
  m <<  kv,  kv,  kv, kv,
       0.0, -lk, 0.0, lk,
       -lk, 0.0,  lk, 0.0;
  // clang-format on
  return m;
}

/// Yaw coupling kappa(C); tau_psi = yaw_gain * kappa(C).
inline double kappa(const Vec4& c) {
  double k = 0.0;
  for (int i = 0; i < 4; ++i) {
    k += detail::kYawSign[i] * std::sqrt(std::abs(c(i))) * c(i);
  }
  return k;
}

/// Diagonal factor F with F(C) * C standing in for d(kappa)/dC.
inline Mat4 kappa_gradient_factor(const Vec4& c, double eps, KappaGradMode mode) {
  Mat4 f = Mat4::Zero();
  for (int i = 0; i < 4; ++i) {
    const double mag = std::max(std::abs(c(i)), eps);
    const double sgn = detail::sign_of(c(i));
    if (mode == KappaGradMode::Paper) {
      f(i, i) = 1.5 * detail::kYawSign[i] * sgn / std::sqrt(mag);
    } else {
      f(i, i) = 0.5 * detail::kYawSign[i] * sgn / std::pow(mag, 1.5);
    }
  }
  return f;
}

/// Gradient surrogate used in the stationarity condition, F(C) * C.
inline Vec4 kappa_gradient(const Vec4& c, double eps, KappaGradMode mode) {
  return kappa_gradient_factor(c, eps, mode) * c;
}

/// Full mixing map: coefficients to achievable wrench.
inline Wrench coefficients_to_wrench(const Vec4& c, const RotorConstants& k, double arm_length) {
  const Eigen::Vector3d h1 = thrust_mixing_matrix(k, arm_length) * c;
  Wrench w;
  w.thrust = h1(0);
  w.torque = Vec3(h1(1), h1(2), k.yaw_gain * kappa(c));
  return w;
}

/// Blade angle of each rotor from its thrust coefficient (affine map).
inline Vec4 coefficients_to_blade_angles(const Vec4& c, const RotorConstants& k,
                                         const VehicleParams& p) {
  const double slope = 6.0 / (k.solidity * p.lift_slope);
  return Vec4::Constant(1.5 * p.inflow_ratio) + slope * c;
}

/// Inverse of coefficients_to_blade_angles.
inline Vec4 blade_angles_to_coefficients(const Vec4& alpha, const RotorConstants& k,
                                         const VehicleParams& p) {
  const double gain = k.solidity * p.lift_slope / 6.0;
  return gain * (alpha - Vec4::Constant(1.5 * p.inflow_ratio));
}

inline std::pair<Vec4, std::array<bool, 4>> saturate_blade_angles(const Vec4& alpha,
                                                                  double alpha_min,
                                                                  double alpha_max) {
  if (!(alpha_min < alpha_max)) {
    throw ConfigError("saturate_blade_angles: alpha_min must be below alpha_max");
  }
  Vec4 out;
  std::array<bool, 4> clipped{};
  for (int i = 0; i < 4; ++i) {
    out(i) = std::clamp(alpha(i), alpha_min, alpha_max);
    clipped[i] = out(i) != alpha(i);
  }
  return {out, clipped};
}

/// Hover solution: equal coefficients carrying the vehicle weight.
inline Vec4 hover_coefficients(const VehicleParams& p) {
  const RotorConstants k = RotorConstants::from(p);
  return Vec4::Constant(p.hover_thrust() / (4.0 * k.thrust_gain));
}

struct AllocationConvergenceError : ConvergenceError {
  AllocationConvergenceError(const std::string& what, const Vec4& iterate, double residual)
      : ConvergenceError(what), last_iterate(iterate), last_residual(residual) {}
  Vec4 last_iterate;
  double last_residual;
};

/// Solves the implicit allocation relation for the thrust coefficients.
///
/// The bare fixed-point map is locally unstable whenever the yaw penalty is
/// strong (its linearization along the null space of M1 has gain of order
/// mu_yaw * |d kappa|^2), so the damping factor backs off geometrically until
/// the residual contracts and re-expands after accepted steps. Convergence is
/// declared on the undamped residual ||F(C) - C||.
inline Vec4 wrench_to_coefficients(const Eigen::Vector3d& h1, double tau_psi,
                                   const AllocationConfig& cfg, const RotorConstants& k,
                                   double arm_length, const Vec4& guess) {
  const Mat34 m1 = thrust_mixing_matrix(k, arm_length);
  const double kappa_target = tau_psi / k.yaw_gain;

  auto fixed_point_map = [&](const Vec4& c) -> Vec4 {
    const double mismatch = kappa_target - kappa(c);
    const Mat4 upsilon =
        cfg.weight - cfg.mu_yaw * mismatch * kappa_gradient_factor(c, cfg.eps_coeff, cfg.grad_mode);
    const Eigen::PartialPivLU<Mat4> lu(upsilon);
    const Eigen::Matrix<double, 4, 3> g = lu.solve(m1.transpose());
    const Eigen::Matrix3d s = m1 * g;
    const Vec3 lambda = Eigen::PartialPivLU<Eigen::Matrix3d>(s).solve(h1);
    const Vec4 next = g * lambda;
    if (!next.allFinite()) {
      throw NumericsError("allocation: singular weighting matrix in fixed-point map");
    }
    return next;
  };

  Vec4 c = guess;
  Vec4 fc = fixed_point_map(c);
  double residual = (fc - c).norm();
  double lam = cfg.relaxation;

  for (int iter = 0; residual >= cfg.tol; ++iter) {
    if (iter >= cfg.max_iters) {
      std::ostringstream msg;
      msg << "allocation: no convergence after " << cfg.max_iters
          << " iterations, residual " << residual;
      throw AllocationConvergenceError(msg.str(), c, residual);
    }
    const Vec4 trial = c + lam * (fc - c);
    const Vec4 ftrial = fixed_point_map(trial);
    const double trial_residual = (ftrial - trial).norm();
    if (trial_residual < residual) {
      c = trial;
      fc = ftrial;
      residual = trial_residual;
      lam = std::min(lam * 1.5, cfg.relaxation);
    } else {
      lam *= 0.5;
      if (lam < 1e-14) {
        throw AllocationConvergenceError("allocation: damping underflow, iteration stalled", c,
                                         residual);
      }
    }
  }
  return c;
}

struct AllocationResult {
  Wrench achievable;
  Vec4 coefficients;        // fixed-point solution before saturation
  Vec4 coefficients_final;  // after blade-angle saturation and re-mapping
  Vec4 blade_angles;        // saturated
  std::array<bool, 4> saturated{};
};

/// Commanded wrench -> coefficients -> blade angles -> clamp -> achievable
/// wrench. The returned wrench is what the plant actually receives.
inline AllocationResult allocate(const Wrench& command, const AllocationConfig& cfg,
                                 const VehicleParams& p, const Vec4& guess) {
  const RotorConstants k = RotorConstants::from(p);
  const Eigen::Vector3d h1(command.thrust, command.torque.x(), command.torque.y());

  AllocationResult r;
  r.coefficients = wrench_to_coefficients(h1, command.torque.z(), cfg, k, p.arm_length, guess);
  const Vec4 alpha = coefficients_to_blade_angles(r.coefficients, k, p);
  auto [alpha_sat, clipped] = saturate_blade_angles(alpha, p.blade_angle_min, p.blade_angle_max);
  r.blade_angles = alpha_sat;
  r.saturated = clipped;
  r.coefficients_final = blade_angles_to_coefficients(alpha_sat, k, p);
  r.achievable = coefficients_to_wrench(r.coefficients_final, k, p.arm_length);
  return r;
}

}  // namespace vpflip
