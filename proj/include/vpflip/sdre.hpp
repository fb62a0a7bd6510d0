#pragma once

#include <lapacke.h>

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <sstream>
#include <unsupported/Eigen/MatrixFunctions>
#include <utility>
#include <vector>

#include "vpflip/errors.hpp"
#include "vpflip/theta_d.hpp"

// Finite-time SDRE baseline.
//
// At every step the dynamics are frozen at the current state-dependent pair
// (A(x), B(x)) and the finite-horizon Riccati solution is formed in closed
// form: the stabilizing algebraic solution P_ss plus a terminal correction
// built from the matrix exponential of the closed-loop pair over the
// remaining horizon,
//
//   P(x, t) = P_ss + F22 * (F11 * (S - P_ss)^{-1} + F12)^{-1},
//
// where [F11 F12; 0 F22] = expm([-Acl, B R^{-1} B^T; 0, Acl^T] * (tf - t)).
// Per step this costs one algebraic Riccati equation (dense ordered-Schur
// solve), one matrix exponential and two matrix inversions. Nothing is
// cached between steps.

extern "C" inline lapack_logical vpflip_select_stable_eig(const double* re, const double*) {
  return *re < 0.0 ? 1 : 0;
}

namespace vpflip {

/// Stabilizing solution of A^T P + P A - P B R^{-1} B^T P + Q = 0 via the
/// ordered real Schur form of the Hamiltonian matrix.
inline MatrixXd solve_care_schur(const MatrixXd& a, const MatrixXd& b, const MatrixXd& q,
                                 const MatrixXd& r, double* residual = nullptr) {
  const int n = static_cast<int>(a.rows());
  const MatrixXd rinv_bt = r.llt().solve(b.transpose());

  MatrixXd ham(2 * n, 2 * n);
  ham.topLeftCorner(n, n) = a;
  ham.topRightCorner(n, n) = -b * rinv_bt;
  ham.bottomLeftCorner(n, n) = -q;
  ham.bottomRightCorner(n, n) = -a.transpose();

  MatrixXd vs(2 * n, 2 * n);
  std::vector<double> wr(2 * n), wi(2 * n);
  lapack_int sdim = 0;
  const lapack_int info = LAPACKE_dgees(
      LAPACK_COL_MAJOR, 'V', 'S', vpflip_select_stable_eig, 2 * n, ham.data(), 2 * n, &sdim,
      wr.data(), wi.data(), vs.data(), 2 * n);
  if (info != 0 || sdim != n) {
    std::ostringstream msg;
    msg << "care: Schur decomposition failed (info " << info << ", stable dim " << sdim << ")";
    throw NumericsError(msg.str());
  }

  const MatrixXd u1 = vs.topLeftCorner(n, n);
  const MatrixXd u2 = vs.bottomLeftCorner(n, n);
  Eigen::FullPivLU<MatrixXd> lu(u1);
  if (!lu.isInvertible()) {
    throw NumericsError("care: stable invariant subspace is not a graph over the state space");
  }
  MatrixXd p = u2 * lu.inverse();
  p = 0.5 * (p + p.transpose());

  const double res = (a.transpose() * p + p * a - p * b * rinv_bt * p + q).norm() /
                     std::max(1.0, q.norm());
  if (!p.allFinite() || res > 1e-7) {
    throw NumericsError("care: residual check failed");
  }
  if (residual) *residual = res;
  return p;
}

/// Finite-horizon Riccati solution for a frozen pair at time-to-go tau,
/// honoring P = S at tau = 0 and P -> P_ss as tau grows.
inline MatrixXd finite_horizon_riccati_gain(const MatrixXd& a, const MatrixXd& b,
                                            const MatrixXd& q, const MatrixXd& r,
                                            const MatrixXd& s, double tau) {
  if (tau < 0.0) throw ConfigError("sdre: time beyond the final horizon");
  if (tau == 0.0) return 0.5 * (s + s.transpose());

  const int n = static_cast<int>(a.rows());
  const MatrixXd p_ss = solve_care_schur(a, b, q, r);
  const MatrixXd gain_quad = b * r.llt().solve(b.transpose());
  const MatrixXd acl = a - gain_quad * p_ss;

  const MatrixXd delta = s - p_ss;
  Eigen::FullPivLU<MatrixXd> delta_lu(delta);
  if (!delta_lu.isInvertible()) {
    throw NumericsError("sdre: terminal weight coincides with the steady Riccati solution");
  }
  const MatrixXd xf = delta_lu.inverse();  // matrix inverse #1

  MatrixXd block(2 * n, 2 * n);
  block.topLeftCorner(n, n) = -acl;
  block.topRightCorner(n, n) = gain_quad;
  block.bottomLeftCorner(n, n).setZero();
  block.bottomRightCorner(n, n) = acl.transpose();
  const MatrixXd e = (block * tau).exp();

  const MatrixXd f11 = e.topLeftCorner(n, n);
  const MatrixXd f12 = e.topRightCorner(n, n);
  const MatrixXd f22 = e.bottomRightCorner(n, n);

  const MatrixXd w = f11 * xf + f12;
  Eigen::PartialPivLU<MatrixXd> w_lu(w);
  MatrixXd p = p_ss + f22 * w_lu.inverse();  // matrix inverse #2
  p = 0.5 * (p + p.transpose());
  if (!p.allFinite()) {
    throw NumericsError("sdre: singular finite-horizon correction");
  }
  return p;
}

class SdreController {
 public:
  struct Diagnostics {
    double symmetry_error = 0.0;
  };

  SdreController(SdcModel sdc, MatrixXd q, MatrixXd r, MatrixXd s, double tf)
      : sdc_(std::move(sdc)), q_(std::move(q)), r_(std::move(r)), s_(std::move(s)), tf_(tf) {
    rinv_ = r_.llt().solve(MatrixXd::Identity(r_.rows(), r_.cols()));
  }

  double horizon() const { return tf_; }

  /// Riccati gain at (x, t); no warm starting across calls.
  MatrixXd gain(const VectorXd& x, double t) const {
    const MatrixXd a = sdc_.A_full(x);
    const MatrixXd b = sdc_.B_full(x);
    return finite_horizon_riccati_gain(a, b, q_, r_, s_, tf_ - t);
  }

  /// Feedback for regulation error `err`; `seconds` receives the wall time
  /// of the gain computation plus assembly.
  VectorXd control(const VectorXd& x, double t, const VectorXd& err,
                   Diagnostics* diag = nullptr, double* seconds = nullptr) const {
    const auto start = std::chrono::steady_clock::now();
    const MatrixXd a = sdc_.A_full(x);
    const MatrixXd b = sdc_.B_full(x);
    const MatrixXd p = finite_horizon_riccati_gain(a, b, q_, r_, s_, tf_ - t);
    const VectorXd u = -(rinv_ * (b.transpose() * (p * err)));
    if (seconds) {
      *seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    if (diag) diag->symmetry_error = (p - p.transpose()).norm();
    return u;
  }

 private:
  SdcModel sdc_;
  MatrixXd q_, r_, s_;
  double tf_;
  MatrixXd rinv_;
};

}  // namespace vpflip
