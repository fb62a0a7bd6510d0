#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <sstream>
#include <vector>

#include "vpflip/errors.hpp"

// Finite-horizon differential Riccati equation for a constant pair (A0, B0):
//
//   -dT0/dt = T0 A0 + A0^T T0 - T0 B0 R^{-1} B0^T T0 + Q,   T0(tf) = S.
//
// Solved offline by backward RK4 on a uniform grid and stored as a gain
// schedule for online interpolation.

namespace vpflip {

using Eigen::MatrixXd;

struct RiccatiOptions {
  double divergence_bound = 1e12;  // abort when ||T0|| exceeds this
};

struct GainSchedule {
  double t0 = 0.0;
  double tf = 0.0;
  double step = 0.0;
  MatrixXd A0, B0, Q, R, S;
  std::vector<MatrixXd> knots;  // knots[k] = T0(t0 + k * step); knots.back() == S

  int dim() const { return static_cast<int>(A0.rows()); }
  int knot_count() const { return static_cast<int>(knots.size()); }

  void check_time(double t) const {
    if (t < t0 - 1e-9 || t > tf + 1e-9) {
      std::ostringstream msg;
      msg << "gain schedule: t = " << t << " outside [" << t0 << ", " << tf << "]";
      throw ConfigError(msg.str());
    }
  }

  int nearest_knot_index(double t) const {
    check_time(t);
    const int k = static_cast<int>(std::lround((t - t0) / step));
    return std::clamp(k, 0, knot_count() - 1);
  }

  /// Piecewise-linear interpolation; exact at the knots.
  MatrixXd interpolate(double t) const {
    check_time(t);
    const double pos = (t - t0) / step;
    const int lo = std::clamp(static_cast<int>(std::floor(pos)), 0, knot_count() - 2);
    const double w = std::clamp(pos - lo, 0.0, 1.0);
    if (w == 0.0) return knots[lo];
    if (w == 1.0) return knots[lo + 1];
    return (1.0 - w) * knots[lo] + w * knots[lo + 1];
  }

  /// Closed-loop matrix A0 - B0 R^{-1} B0^T T0 at a stored knot.
  MatrixXd closed_loop_at_knot(int k) const {
    return A0 - B0 * R.llt().solve(B0.transpose() * knots.at(k));
  }

  /// Largest equation residual over interior knots, with dT0/dt taken from
  /// central differences of the stored grid.
  double max_riccati_residual() const {
    const MatrixXd rinv = R.llt().solve(MatrixXd::Identity(dim(), dim()));
    double worst = 0.0;
    for (int k = 1; k + 1 < knot_count(); ++k) {
      const MatrixXd dt = (knots[k + 1] - knots[k - 1]) / (2.0 * step);
      const MatrixXd& t0k = knots[k];
      const MatrixXd res = dt + t0k * A0 + A0.transpose() * t0k -
                           t0k * B0 * rinv * B0.transpose() * t0k + Q;
      worst = std::max(worst, res.norm());
    }
    return worst;
  }
};

namespace detail {

inline void require_symmetric_psd(const MatrixXd& m, const char* name) {
  if ((m - m.transpose()).norm() > 1e-9 * std::max(1.0, m.norm())) {
    throw ConfigError(std::string(name) + " must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-9 * std::max(1.0, m.norm())) {
    throw ConfigError(std::string(name) + " must be positive semidefinite");
  }
}

inline void require_symmetric_pd(const MatrixXd& m, const char* name) {
  if ((m - m.transpose()).norm() > 1e-9 * std::max(1.0, m.norm())) {
    throw ConfigError(std::string(name) + " must be symmetric");
  }
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) {
    throw ConfigError(std::string(name) + " must be positive definite");
  }
}

}  // namespace detail

/// Backward RK4 integration of the Riccati equation on [0, tf] with grid
/// step `h`. tf must be an integer multiple of h. Each step symmetrizes the
/// iterate; divergence beyond opts.divergence_bound aborts with the failing
/// time in the message.
inline GainSchedule solve_riccati_schedule(const MatrixXd& a0, const MatrixXd& b0,
                                           const MatrixXd& q, const MatrixXd& r,
                                           const MatrixXd& s, double tf, double h,
                                           const RiccatiOptions& opts = {}) {
  const int n = static_cast<int>(a0.rows());
  if (a0.cols() != n || b0.rows() != n) throw ConfigError("riccati: dimension mismatch");
  if (q.rows() != n || s.rows() != n || r.rows() != b0.cols()) {
    throw ConfigError("riccati: penalty dimension mismatch");
  }
  if (h <= 0.0 || tf <= 0.0) throw ConfigError("riccati: tf and h must be positive");
  detail::require_symmetric_pd(r, "riccati: R");
  detail::require_symmetric_psd(q, "riccati: Q");
  detail::require_symmetric_psd(s, "riccati: S");

  const double steps_exact = tf / h;
  const int steps = static_cast<int>(std::lround(steps_exact));
  if (steps < 1 || std::abs(steps_exact - steps) > 1e-6) {
    throw ConfigError("riccati: tf must be an integer multiple of the grid step");
  }

  const MatrixXd rinv = r.llt().solve(MatrixXd::Identity(r.rows(), r.cols()));
  const MatrixXd gain_quad = b0 * rinv * b0.transpose();
  auto rhs = [&](const MatrixXd& t) -> MatrixXd {
    return -(t * a0 + a0.transpose() * t - t * gain_quad * t + q);
  };

  GainSchedule sched;
  sched.t0 = 0.0;
  sched.tf = tf;
  sched.step = h;
  sched.A0 = a0;
  sched.B0 = b0;
  sched.Q = q;
  sched.R = r;
  sched.S = 0.5 * (s + s.transpose());
  sched.knots.assign(steps + 1, MatrixXd());
  sched.knots[steps] = sched.S;

  MatrixXd t = sched.S;
  for (int k = steps; k-- > 0;) {
    const double hb = -h;  // integrating backward in time
    const MatrixXd k1 = rhs(t);
    const MatrixXd k2 = rhs(t + 0.5 * hb * k1);
    const MatrixXd k3 = rhs(t + 0.5 * hb * k2);
    const MatrixXd k4 = rhs(t + hb * k3);
    t += (hb / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    t = 0.5 * (t + t.transpose());
    if (!t.allFinite() || t.norm() > opts.divergence_bound) {
      std::ostringstream msg;
      msg << "riccati: backward integration diverged at t = " << k * h;
      throw NumericsError(msg.str());
    }
    sched.knots[k] = t;
  }
  return sched;
}

}  // namespace vpflip
