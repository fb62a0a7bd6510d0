#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <memory>
#include <optional>
#include <utility>

#include "vpflip/errors.hpp"
#include "vpflip/riccati.hpp"
#include "vpflip/sdre.hpp"
#include "vpflip/so3.hpp"
#include "vpflip/theta_d.hpp"
#include "vpflip/vehicle.hpp"

// Flight controller for the flip mission.
//
// Outer loop: finite-horizon LQR on the linear translational model commands
// a specific force; collective thrust is its projection on the current body
// z axis, so the achievable direction decides the sign (negative thrust
// carries inverted flight). The desired attitude is rebuilt from the
// commanded specific force, with the desired roll overridden by the
// three-phase flip schedule. Inner loop: the attitude gain acts on the
// geometric errors (e_R, e_Omega) defined directly on the rotation group,
// which stay meaningful through the flip where Euler-angle errors would not.

namespace vpflip {

using Vec6 = Eigen::Matrix<double, 6, 1>;

// ---------------------------------------------------------------------------
// Translational loop
// ---------------------------------------------------------------------------

inline MatrixXd translational_A(const VehicleParams& p) {
  MatrixXd a = MatrixXd::Zero(6, 6);
  a.topRightCorner(3, 3).setIdentity();
  a.bottomRightCorner(3, 3) = -(p.drag / p.mass).asDiagonal();
  return a;
}

inline MatrixXd translational_B() {
  MatrixXd b = MatrixXd::Zero(6, 3);
  b.bottomRows(3).setIdentity();
  return b;
}

inline GainSchedule translational_gain(const MatrixXd& q, const MatrixXd& r, const MatrixXd& s,
                                       const VehicleParams& p, double tf, double h,
                                       const RiccatiOptions& opts = {}) {
  return solve_riccati_schedule(translational_A(p), translational_B(), q, r, s, tf, h, opts);
}

/// Specific-force command u_t = -R^{-1} B^T K(t) (x_t - x_des).
inline Vec3 translational_control(const GainSchedule& sched, const Vec6& x_t, const Vec6& x_des,
                                  double t) {
  const MatrixXd k = sched.interpolate(t);
  const Vec6 err = x_t - x_des;
  const Vec3 bt_k_err = (k * err).tail<3>();  // B^T K e for B = [0; I]
  return -sched.R.llt().solve(bt_k_err);
}

/// Collective thrust realizing the body-z component of the commanded
/// specific force: T = m (R13 u1 + R23 u2 + R33 (u3 + g)).
inline double recover_thrust(const Vec3& u_t, const Mat3& r, const VehicleParams& p) {
  return p.mass *
         (r(0, 2) * u_t.x() + r(1, 2) * u_t.y() + r(2, 2) * (u_t.z() + p.gravity));
}

// ---------------------------------------------------------------------------
// Attitude reference and flip schedule
// ---------------------------------------------------------------------------

enum class PhiDesMode {
  Normalized,    // arcsin argument divided by |u + g e3| (dimensionally sound)
  PaperLiteral,  // squared-magnitude denominator, kept for comparison
};

struct FlipSchedule {
  double t1 = 3.0;
  double t2 = 11.0;
  double t_final = 20.0;
  double phi_f = M_PI;

  void validate() const {
    if (!(0.0 < t1 && t1 < t2 && t2 < t_final)) {
      throw ConfigError("flip: require 0 < t1 < t2 < t_final");
    }
  }

  int phase(double t) const {
    if (t < t1) return 0;
    if (t < t2) return 1;
    return 2;
  }
};

struct DesiredAngles {
  double phi = 0.0;
  double theta = 0.0;
};

/// Tilt angles realizing the commanded specific force at the given yaw.
inline DesiredAngles desired_tilt_angles(const Vec3& u_t, double psi_des, double gravity,
                                         PhiDesMode mode) {
  const double sp = std::sin(psi_des), cp = std::cos(psi_des);
  const double uz = u_t.z() + gravity;

  DesiredAngles out;
  double den_theta = uz;
  if (std::abs(den_theta) < 1e-9) den_theta = den_theta < 0.0 ? -1e-9 : 1e-9;
  out.theta = std::atan((u_t.y() * sp + u_t.x() * cp) / den_theta);

  const double num = u_t.x() * sp - u_t.y() * cp;
  double arg;
  if (mode == PhiDesMode::Normalized) {
    const double mag = std::sqrt(u_t.x() * u_t.x() + u_t.y() * u_t.y() + uz * uz);
    arg = mag < 1e-12 ? 0.0 : num / mag;
    arg = std::clamp(arg, -1.0, 1.0);  // |num| <= mag, clamp absorbs roundoff
  } else {
    const double den = u_t.x() * u_t.x() + u_t.y() * u_t.y() + uz * uz;
    arg = den < 1e-12 ? 0.0 : num / den;
    if (arg < -1.0 || arg > 1.0) {
      throw NumericsError("desired_tilt_angles: arcsin argument outside [-1, 1]");
    }
  }
  out.phi = std::asin(arg);
  return out;
}

/// Three-phase desired-roll override: passthrough, constant phi_f inside the
/// flip window, passthrough plus phi_f afterwards.
inline double flip_roll(double phi_smooth, double t, const FlipSchedule& flip) {
  switch (flip.phase(t)) {
    case 0:
      return phi_smooth;
    case 1:
      return flip.phi_f;
    default:
      return phi_smooth + flip.phi_f;
  }
}

struct AttitudeReference {
  Mat3 r_d = Mat3::Identity();
  double phi_des = 0.0;
  double theta_des = 0.0;
  double psi_des = 0.0;
  int phase = 0;
};

inline AttitudeReference attitude_reference(const Vec3& u_t, double psi_des, double t,
                                            const FlipSchedule& flip, double gravity,
                                            PhiDesMode mode) {
  const DesiredAngles tilt = desired_tilt_angles(u_t, psi_des, gravity, mode);
  AttitudeReference ref;
  ref.phase = flip.phase(t);
  ref.phi_des = flip_roll(tilt.phi, t, flip);
  ref.theta_des = tilt.theta;
  ref.psi_des = psi_des;
  ref.r_d = euler_to_rotation(ref.phi_des, ref.theta_des, ref.psi_des);
  return ref;
}

/// Desired body rate from the reference stream by a one-step-lagged central
/// difference: after pushing R_d(t_k) the estimate corresponds to t_{k-1}.
/// Samples straddling a flip-phase change yield zero, so the schedule's
/// jumps never differentiate into the feedforward.
class DesiredRateEstimator {
 public:
  explicit DesiredRateEstimator(double step) : step_(step) {
    if (step <= 0.0) throw ConfigError("rate estimator: step must be positive");
  }

  Vec3 push(const Mat3& r_d, int phase) {
    history_.push_back({r_d, phase});
    if (history_.size() > 3) history_.pop_front();
    if (history_.size() < 3) return Vec3::Zero();

    const auto& oldest = history_[0];
    const auto& mid = history_[1];
    const auto& newest = history_[2];
    if (oldest.phase != newest.phase) return Vec3::Zero();

    const Mat3 slope = mid.r_d.transpose() * (newest.r_d - oldest.r_d) / (2.0 * step_);
    const Mat3 skew = 0.5 * (slope - slope.transpose());
    return {skew(2, 1), skew(0, 2), skew(1, 0)};
  }

  void reset() { history_.clear(); }

 private:
  struct Sample {
    Mat3 r_d;
    int phase;
  };
  double step_;
  std::deque<Sample> history_;
};

// ---------------------------------------------------------------------------
// Geometric attitude errors
// ---------------------------------------------------------------------------

/// Error function E(R, R_d) = 2 - sqrt(trace(R_d^T R) + 1), in [0, 2].
inline double error_function(const Mat3& r, const Mat3& r_d) {
  const double tp1 = (r_d.transpose() * r).trace() + 1.0;
  return 2.0 - std::sqrt(std::max(tp1, 0.0));
}

enum class AntipodalGuard {
  Clamp,  // floor the denominator, flag the event
  Error,  // throw
};

/// Geometric attitude error e_R = (R_d^T R - R^T R_d)^vee / (2 sqrt(tr + 1)).
/// Near the antipodal configuration the denominator is floored at
/// sqrt(eps_trace) or the call fails, per `guard`.
inline Vec3 attitude_error(const Mat3& r, const Mat3& r_d, double eps_trace = 1e-8,
                           AntipodalGuard guard = AntipodalGuard::Clamp,
                           bool* guard_hit = nullptr) {
  const Mat3 m = r_d.transpose() * r;
  double tp1 = m.trace() + 1.0;
  const bool hit = tp1 < eps_trace;
  if (guard_hit) *guard_hit = hit;
  if (hit) {
    if (guard == AntipodalGuard::Error) {
      throw NumericsError("attitude_error: near-antipodal attitude, error direction undefined");
    }
    tp1 = eps_trace;
  }
  const Mat3 num = m - m.transpose();
  const Vec3 axis(num(2, 1), num(0, 2), num(1, 0));
  return axis / (2.0 * std::sqrt(tp1));
}

/// Body angular-rate tracking error e_Omega = Pi - R^T R_d Pi_d.
inline Vec3 angular_rate_error(const Vec3& pi, const Mat3& r, const Mat3& r_d,
                               const Vec3& pi_d) {
  return pi - r.transpose() * r_d * pi_d;
}

// ---------------------------------------------------------------------------
// Attitude inner loop
// ---------------------------------------------------------------------------

/// State-dependent factorization of the Euler attitude dynamics around
/// hover: A0 = [0 I; 0 0], B0 = [0; J0^{-1}] with J0 the body inertia.
inline SdcModel attitude_sdc(const VehicleParams& p) {
  SdcModel m;
  m.A0 = MatrixXd::Zero(6, 6);
  m.A0.topRightCorner(3, 3).setIdentity();
  m.B0 = MatrixXd::Zero(6, 3);
  m.B0.bottomRows(3) = Vec3(p.inertia.cwiseInverse()).asDiagonal();

  m.A_dev = [p](const VectorXd& x) -> MatrixXd {
    const Vec3 euler = x.segment<3>(0);
    const Vec3 rate = x.segment<3>(3);
    const Mat3 j = inertia_matrix(euler, p);
    const Mat3 c = coriolis_matrix(euler, rate, p);
    MatrixXd dev = MatrixXd::Zero(6, 6);
    dev.bottomRightCorner(3, 3) = -j.ldlt().solve(c);
    return dev;
  };
  m.B_dev = [p](const VectorXd& x) -> MatrixXd {
    const Vec3 euler = x.segment<3>(0);
    const Mat3 j = inertia_matrix(euler, p);
    MatrixXd dev = MatrixXd::Zero(6, 3);
    dev.bottomRows(3) =
        j.ldlt().solve(Mat3::Identity()) - Mat3(Vec3(p.inertia.cwiseInverse()).asDiagonal());
    return dev;
  };
  return m;
}

/// Common interface of the two attitude gain computations; only this part
/// differs between a theta-D mission and an SDRE mission.
class AttitudeControlLaw {
 public:
  struct StepInfo {
    double seconds = 0.0;
    double lyap_residual1 = 0.0;
    double lyap_residual2 = 0.0;
    double rho1 = 0.0;
    double rho2 = 0.0;
    double min_modified_q_eigenvalue = 0.0;
  };

  virtual ~AttitudeControlLaw() = default;
  virtual Vec3 torque(const Vec6& x_a, double t, const Vec6& error, StepInfo* info) const = 0;
};

class ThetaDAttitudeLaw final : public AttitudeControlLaw {
 public:
  ThetaDAttitudeLaw(GainSchedule sched, SdcModel sdc, ThetaDConfig cfg, bool prefactor = true)
      : impl_(std::move(sched), std::move(sdc), cfg, prefactor) {}

  Vec3 torque(const Vec6& x_a, double t, const Vec6& error, StepInfo* info) const override {
    ThetaDController::Diagnostics diag;
    double seconds = 0.0;
    const VectorXd u = impl_.control(x_a, t, error, info ? &diag : nullptr,
                                     info ? &seconds : nullptr);
    if (info) {
      info->seconds = seconds;
      info->lyap_residual1 = diag.lyap_residual1;
      info->lyap_residual2 = diag.lyap_residual2;
      info->rho1 = diag.rho1;
      info->rho2 = diag.rho2;
      info->min_modified_q_eigenvalue = diag.min_modified_q_eigenvalue;
    }
    return u;
  }

  const ThetaDController& controller() const { return impl_; }

 private:
  ThetaDController impl_;
};

class SdreAttitudeLaw final : public AttitudeControlLaw {
 public:
  SdreAttitudeLaw(SdcModel sdc, MatrixXd q, MatrixXd r, MatrixXd s, double tf)
      : impl_(std::move(sdc), std::move(q), std::move(r), std::move(s), tf) {}

  Vec3 torque(const Vec6& x_a, double t, const Vec6& error, StepInfo* info) const override {
    double seconds = 0.0;
    const VectorXd u = impl_.control(x_a, t, error, nullptr, info ? &seconds : nullptr);
    if (info) {
      *info = StepInfo{};
      info->seconds = seconds;
    }
    return u;
  }

  const SdreController& controller() const { return impl_; }

 private:
  SdreController impl_;
};

}  // namespace vpflip
