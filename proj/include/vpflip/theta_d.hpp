#pragma once

#include <Eigen/Dense>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "vpflip/errors.hpp"
#include "vpflip/lyapunov.hpp"
#include "vpflip/riccati.hpp"

// Finite-time theta-D suboptimal control engine.
//
// The plant is factored as xdot = (A0 + A(x)) x + (B0 + B(x)) u with a
// constant stabilizable pair (A0, B0). The time-varying base gain T0(t)
// comes from the offline Riccati schedule; the state-dependent corrections
// T1, T2 solve the Lyapunov equations
//
//   Ti Acl(t) + Acl(t)^T Ti = rho_i(t) * {series right-hand side},
//
// with Acl(t) = A0 - B0 R^{-1} B0^T T0(t) and rho_i(t) = 1 - p_i e^{-q_i t}
// suppressing the transient gain. The feedback is
//
//   u = -R^{-1} (B0 + B(x))^T (T0 + theta T1 + theta^2 T2) e,
//
// where e is the caller's regulation error (the state itself for plain
// regulation). The vectorized Lyapunov operator depends only on the schedule
// knot, so its LU factors are built eagerly offline; online work is
// interpolation, small matrix products and two back-substitutions.

namespace vpflip {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct ThetaDConfig {
  double p1 = 0.9;
  double p2 = 0.99;
  double q1 = 10.0;   // 1/s
  double q2 = 100.0;  // 1/s
  double theta = 1.0;

  void validate() const {
    if (p1 < 0.0 || p1 > 1.0 || p2 < 0.0 || p2 > 1.0) {
      throw ConfigError("theta_d: p1, p2 must lie in [0, 1]");
    }
    if (q1 <= 0.0 || q2 <= 0.0) throw ConfigError("theta_d: q1, q2 must be positive");
    if (theta <= 0.0) throw ConfigError("theta_d: theta must be positive");
  }

  double p(int i) const { return i == 1 ? p1 : p2; }
  double q(int i) const { return i == 1 ? q1 : q2; }
};

/// Transient gain-suppression factor, 1 - p_i e^{-q_i t}.
inline double rho(int i, double t, const ThetaDConfig& cfg) {
  if (i != 1 && i != 2) throw ConfigError("rho: series index must be 1 or 2");
  return 1.0 - cfg.p(i) * std::exp(-cfg.q(i) * t);
}

/// State-dependent coefficient factorization around a constant pair.
struct SdcModel {
  MatrixXd A0, B0;
  std::function<MatrixXd(const VectorXd&)> A_dev;  // A(x) = A_full(x) - A0
  std::function<MatrixXd(const VectorXd&)> B_dev;  // B(x) = B_full(x) - B0

  MatrixXd A_full(const VectorXd& x) const { return A0 + A_dev(x); }
  MatrixXd B_full(const VectorXd& x) const { return B0 + B_dev(x); }

  static SdcModel constant(const MatrixXd& a0, const MatrixXd& b0) {
    SdcModel m;
    m.A0 = a0;
    m.B0 = b0;
    const int n = static_cast<int>(a0.rows());
    const int k = static_cast<int>(b0.cols());
    m.A_dev = [n](const VectorXd&) { return MatrixXd::Zero(n, n); };
    m.B_dev = [n, k](const VectorXd&) { return MatrixXd::Zero(n, k); };
    return m;
  }
};

/// Kalman rank test of the pair (A, B).
inline bool pointwise_controllable(const MatrixXd& a, const MatrixXd& b, double tol = 1e-9) {
  const int n = static_cast<int>(a.rows());
  MatrixXd ctrb(n, n * b.cols());
  MatrixXd block = b;
  for (int k = 0; k < n; ++k) {
    ctrb.middleCols(k * b.cols(), b.cols()) = block;
    block = a * block;
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(ctrb);
  qr.setThreshold(tol);
  return qr.rank() == n;
}

class ThetaDController {
 public:
  struct Diagnostics {
    double rho1 = 0.0;
    double rho2 = 0.0;
    double lyap_residual1 = 0.0;
    double lyap_residual2 = 0.0;
    // Smallest eigenvalue of Q + theta D1 + theta^2 D2, the state penalty as
    // modified by the implied perturbation terms. Monitored, never enforced.
    double min_modified_q_eigenvalue = 0.0;
  };

  struct SeriesTerms {
    MatrixXd t0, t1, t2;
    MatrixXd sum;                    // t0 + theta t1 + theta^2 t2
    MatrixXd acl;                    // closed-loop matrix used by the solves
    std::array<MatrixXd, 2> braces;  // right-hand sides before rho scaling
    double seconds = 0.0;            // wall time of the gain computation
  };

  ThetaDController(GainSchedule schedule, SdcModel sdc, ThetaDConfig cfg, bool prefactor = true)
      : sched_(std::move(schedule)), sdc_(std::move(sdc)), cfg_(cfg) {
    cfg_.validate();
    const int n = sched_.dim();
    if (sdc_.A0.rows() != n || sdc_.B0.rows() != n) {
      throw ConfigError("theta_d: SDC dimensions do not match the gain schedule");
    }
    rinv_ = sched_.R.llt().solve(MatrixXd::Identity(sched_.R.rows(), sched_.R.cols()));
    closed_loop_.reserve(sched_.knot_count());
    for (int k = 0; k < sched_.knot_count(); ++k) {
      closed_loop_.push_back(sdc_.A0 - sdc_.B0 * rinv_ * sdc_.B0.transpose() * sched_.knots[k]);
    }
    if (prefactor) {
      factors_.reserve(closed_loop_.size());
      for (const MatrixXd& acl : closed_loop_) {
        factors_.emplace_back(lyapunov_operator(acl));
      }
    }
  }

  const GainSchedule& schedule() const { return sched_; }
  const ThetaDConfig& config() const { return cfg_; }
  const SdcModel& sdc() const { return sdc_; }

  /// Computes the gain series at (x, t). Residual validation and diagnostics
  /// run after the timed span.
  SeriesTerms series(const VectorXd& x, double t, Diagnostics* diag = nullptr) const {
    SeriesTerms s = series_unchecked(x, t);
    validate_and_diagnose(s, t, diag);
    return s;
  }

  /// Feedback for regulation error `err`. `seconds`, when given, receives
  /// the wall time of the gain computation alone (interpolation, series
  /// solves, feedback assembly), excluding validation and diagnostics.
  VectorXd control(const VectorXd& x, double t, const VectorXd& err,
                   Diagnostics* diag = nullptr, double* seconds = nullptr) const {
    const auto start = std::chrono::steady_clock::now();

    SeriesTerms s = series_unchecked(x, t);
    const MatrixXd g = sdc_.B_full(x);
    const VectorXd u = -(rinv_ * (g.transpose() * (s.sum * err)));
    if (seconds) {
      *seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    validate_and_diagnose(s, t, diag);
    return u;
  }

  VectorXd control(const VectorXd& x, double t) const { return control(x, t, x); }

 private:
  SeriesTerms series_unchecked(const VectorXd& x, double t) const {
    const auto start = std::chrono::steady_clock::now();
    SeriesTerms out;
    out.t0 = sched_.interpolate(t);
    const int knot = sched_.nearest_knot_index(t);
    out.acl = closed_loop_[knot];

    const MatrixXd a_dev = sdc_.A_dev(x) / cfg_.theta;
    const MatrixXd b_dev = sdc_.B_dev(x) / cfg_.theta;

    std::vector<const MatrixXd*> terms{&out.t0};
    for (int i = 1; i <= 2; ++i) {
      out.braces[i - 1] = series_rhs(i, terms, a_dev, b_dev);
      const MatrixXd rhs = rho(i, t, cfg_) * out.braces[i - 1];
      MatrixXd ti = factors_.empty()
                        ? solve_lyapunov_prefactored(
                              Eigen::PartialPivLU<MatrixXd>(lyapunov_operator(out.acl)), rhs)
                        : solve_lyapunov_prefactored(factors_[knot], rhs);
      if (i == 1) {
        out.t1 = std::move(ti);
        terms.push_back(&out.t1);
      } else {
        out.t2 = std::move(ti);
      }
    }
    out.sum = out.t0 + cfg_.theta * out.t1 + cfg_.theta * cfg_.theta * out.t2;
    out.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
  }

  // Series right-hand side (before the rho_i scaling) for term i, expanded
  // from the compact recursion; a_dev and b_dev arrive already divided by
  // theta. terms[0] = T0, terms[1] = T1, ...
  MatrixXd series_rhs(int i, const std::vector<const MatrixXd*>& terms, const MatrixXd& a_dev,
                      const MatrixXd& b_dev) const {
    const MatrixXd& b0 = sdc_.B0;
    MatrixXd rhs = -(*terms[i - 1]) * a_dev - a_dev.transpose() * (*terms[i - 1]);
    const MatrixXd cross = b0 * rinv_ * b_dev.transpose() + b_dev * rinv_ * b0.transpose();
    for (int j = 0; j <= i - 1; ++j) {
      rhs += (*terms[j]) * cross * (*terms[i - 1 - j]);
    }
    for (int j = 0; j <= i - 2; ++j) {
      rhs += (*terms[j]) * b_dev * rinv_ * b_dev.transpose() * (*terms[i - 2 - j]);
    }
    for (int j = 1; j <= i - 1; ++j) {
      rhs += (*terms[j]) * b0 * rinv_ * b0.transpose() * (*terms[i - j]);
    }
    return rhs;
  }

  void validate_and_diagnose(const SeriesTerms& s, double t, Diagnostics* diag) const {
    const double r1 = lyapunov_relative_residual(s.acl, s.t1, rho(1, t, cfg_) * s.braces[0]);
    const double r2 = lyapunov_relative_residual(s.acl, s.t2, rho(2, t, cfg_) * s.braces[1]);
    if (!s.sum.allFinite() || r1 > 1e-6 || r2 > 1e-6) {
      throw NumericsError("theta_d: Lyapunov solve failed validation");
    }
    if (diag) {
      diag->rho1 = rho(1, t, cfg_);
      diag->rho2 = rho(2, t, cfg_);
      diag->lyap_residual1 = r1;
      diag->lyap_residual2 = r2;
      // Implied perturbation terms D_i = p_i e^{-q_i t} * braces_i modify the
      // state penalty; watch its smallest eigenvalue.
      MatrixXd qmod = sched_.Q;
      for (int i = 1; i <= 2; ++i) {
        const double scale = cfg_.p(i) * std::exp(-cfg_.q(i) * t) * std::pow(cfg_.theta, i);
        qmod += scale * 0.5 * (s.braces[i - 1] + s.braces[i - 1].transpose());
      }
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(qmod, Eigen::EigenvaluesOnly);
      diag->min_modified_q_eigenvalue = es.eigenvalues().minCoeff();
    }
  }

  GainSchedule sched_;
  SdcModel sdc_;
  ThetaDConfig cfg_;
  MatrixXd rinv_;
  std::vector<MatrixXd> closed_loop_;
  std::vector<Eigen::PartialPivLU<MatrixXd>> factors_;
};

}  // namespace vpflip
