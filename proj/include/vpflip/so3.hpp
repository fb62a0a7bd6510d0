#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "vpflip/errors.hpp"

// Rotation-group primitives.
//
// Convention used throughout the library: rotations are body-to-world
// matrices composed Z-Y-X, R = Rz(psi) * Ry(theta) * Rx(phi), i.e. yaw about
// the world z axis, then pitch, then roll. Angular velocities are expressed
// in the body frame.

namespace vpflip {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Skew-symmetric matrix of v, so that hat(v) * w == v.cross(w).
inline Mat3 hat(const Vec3& v) {
  Mat3 m;
  // clang-format off
  m <<    0.0, -v.z(),  v.y(),
        v.z(),    0.0, -v.x(),
       -v.y(),  v.x(),    0.0;
  // clang-format on
  return m;
}

/// Inverse of hat. Rejects matrices whose symmetric part exceeds `tol`.
inline Vec3 vee(const Mat3& m, double tol = 1e-9) {
  if ((m + m.transpose()).norm() >= tol) {
    throw NumericsError("vee: matrix is not skew-symmetric");
  }
  return {m(2, 1), m(0, 2), m(1, 0)};
}

/// Rodrigues formula, exact for any rotation vector w.
inline Mat3 exp_so3(const Vec3& w) {
  const double angle = w.norm();
  const Mat3 k = hat(w);
  double a, b;  // R = I + a*K + b*K^2
  if (angle < 1e-8) {
    const double a2 = angle * angle;
    a = 1.0 - a2 / 6.0;
    b = 0.5 - a2 / 24.0;
  } else {
    a = std::sin(angle) / angle;
    b = (1.0 - std::cos(angle)) / (angle * angle);
  }
  return Mat3::Identity() + a * k + b * (k * k);
}

/// Nearest rotation in the Frobenius sense (polar projection via SVD).
inline Mat3 reorthonormalize(const Mat3& r) {
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) {
    u.col(2) *= -1.0;
  }
  return u * v.transpose();
}

inline double orthonormality_error(const Mat3& r) {
  return (r.transpose() * r - Mat3::Identity()).norm();
}

inline bool is_rotation(const Mat3& r, double tol = 1e-9) {
  return orthonormality_error(r) < tol && std::abs(r.determinant() - 1.0) < tol;
}

/// One kinematic step of Rdot = R * hat(omega_body): exponential-map update
/// followed by a polar projection to absorb floating-point drift.
inline Mat3 integrate_rotation(const Mat3& r, const Vec3& omega_body, double h) {
  return reorthonormalize(r * exp_so3(omega_body * h));
}

/// Body-to-world rotation from Z-Y-X Euler angles (roll phi, pitch theta,
/// yaw psi).
inline Mat3 euler_to_rotation(double phi, double theta, double psi) {
  const double cf = std::cos(phi), sf = std::sin(phi);
  const double ct = std::cos(theta), st = std::sin(theta);
  const double cp = std::cos(psi), sp = std::sin(psi);
  Mat3 r;
  // clang-format off
  r << ct * cp,  sf * st * cp - cf * sp,  cf * st * cp + sf * sp,
       ct * sp,  sf * st * sp + cf * cp,  cf * st * sp - sf * cp,
           -st,                 sf * ct,                 cf * ct;
  // clang-format on
  return r;
}

}  // namespace vpflip
