#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include "vpflip/errors.hpp"

// Dense solver for the Lyapunov-type equation T * Acl + Acl^T * T = RHS via
// vectorization: (Acl^T (+) Acl^T) vec(T) = vec(RHS), where (+) is the
// Kronecker sum. The operator depends only on Acl, so it can be factored
// once and reused across right-hand sides.

namespace vpflip {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline VectorXd vectorize(const MatrixXd& m) {
  return Eigen::Map<const VectorXd>(m.data(), m.size());
}

inline MatrixXd unvectorize(const VectorXd& v, int rows, int cols) {
  return Eigen::Map<const MatrixXd>(v.data(), rows, cols);
}

/// Kronecker-sum operator of the equation T * Acl + Acl^T * T = RHS in
/// column-major vectorized form.
inline MatrixXd lyapunov_operator(const MatrixXd& acl) {
  const int n = static_cast<int>(acl.rows());
  const MatrixXd eye = MatrixXd::Identity(n, n);
  return Eigen::kroneckerProduct(acl.transpose(), eye) +
         Eigen::kroneckerProduct(eye, acl.transpose());
}

/// Back-substitution against a prefactored operator; symmetrizes the result
/// when the right-hand side is symmetric. No residual validation.
inline MatrixXd solve_lyapunov_prefactored(const Eigen::PartialPivLU<MatrixXd>& lu,
                                           const MatrixXd& rhs) {
  const int n = static_cast<int>(rhs.rows());
  MatrixXd t = unvectorize(lu.solve(vectorize(rhs)), n, n);
  const double rhs_norm = rhs.norm();
  if (rhs_norm == 0.0 || (rhs - rhs.transpose()).norm() < 1e-12 * rhs_norm) {
    t = 0.5 * (t + t.transpose());
  }
  return t;
}

inline double lyapunov_relative_residual(const MatrixXd& acl, const MatrixXd& t,
                                         const MatrixXd& rhs) {
  const double rhs_norm = rhs.norm();
  if (rhs_norm == 0.0) return 0.0;
  return (t * acl + acl.transpose() * t - rhs).norm() / rhs_norm;
}

/// Solves T * Acl + Acl^T * T = rhs and validates the solution. Throws on a
/// singular or badly conditioned operator. `rel_residual`, when given,
/// receives the achieved relative equation residual.
inline MatrixXd solve_lyapunov(const MatrixXd& acl, const MatrixXd& rhs,
                               double* rel_residual = nullptr) {
  Eigen::PartialPivLU<MatrixXd> lu(lyapunov_operator(acl));
  const MatrixXd t = solve_lyapunov_prefactored(lu, rhs);
  const double rel = lyapunov_relative_residual(acl, t, rhs);
  if (!t.allFinite() || rel > 1e-6) {
    throw NumericsError("lyapunov: singular or ill-conditioned operator");
  }
  if (rel_residual) *rel_residual = rel;
  return t;
}

}  // namespace vpflip
