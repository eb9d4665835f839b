#pragma once

/**
 * @file
 * @brief Dense convex QP  min 1/2 x'Px + q'x  s.t.  l <= Ax <= u  by ADMM operator splitting with
 * an active-set polishing step.
 */

#include "core.hpp"

#include <limits>

namespace assm {

struct QPProblem
{
  Mat P;
  Vec q;
  Mat A;
  Vec l;
  Vec u;
};

struct QPSettings
{
  double rho{0.1};  ///< relative to the mean diagonal of P when that exceeds one
  double sigma{1e-6};
  double alpha{1.6};
  double tolerance{1e-6};
  int max_iterations{5000};
  int adapt_interval{50};  ///< iterations between penalty rebalancing checks; 0 keeps rho fixed
  bool polish{true};
};

struct QPSolution
{
  Vec x;
  Vec y;  ///< constraint multipliers (negative: lower bound active, positive: upper)
  int iterations{0};
  double primal_residual{0};
  double dual_residual{0};
  bool converged{false};
  bool polished{false};
  double objective{0};
};

inline double qp_objective(const QPProblem & p, const Vec & x) { return 0.5 * x.dot(p.P * x) + p.q.dot(x); }

/// Infinity-norm primal residual |Ax - proj(Ax)| and dual residual |Px + q + A'y|.
inline std::pair<double, double> qp_residuals(const QPProblem & p, const Vec & x, const Vec & y)
{
  const Vec ax = p.A * x;
  const Vec proj = ax.cwiseMax(p.l).cwiseMin(p.u);
  const double rp = p.A.rows() ? (ax - proj).cwiseAbs().maxCoeff() : 0.0;
  const Vec g = p.P * x + p.q + p.A.transpose() * y;
  const double rd = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
  return {rp, rd};
}

namespace detail {

/// Equality-constrained solve on the guessed active set; returns true when it improves feasibility.
inline bool polish_qp(const QPProblem & p, QPSolution & sol, double tol)
{
  const Index n = p.P.rows();
  const Index m = p.A.rows();
  std::vector<Index> act;
  std::vector<double> rhs;
  for (Index i = 0; i < m; ++i) {
    const bool lower = sol.y[i] < -tol || (p.l[i] == p.u[i]);
    const bool upper = sol.y[i] > tol;
    if (lower || upper) {
      act.push_back(i);
      rhs.push_back(sol.y[i] > 0 ? p.u[i] : p.l[i]);
    }
  }
  const auto k = static_cast<Index>(act.size());
  Mat kkt = Mat::Zero(n + k, n + k);
  kkt.topLeftCorner(n, n) = p.P + 1e-10 * Mat::Identity(n, n);
  Vec b(n + k);
  b.head(n) = -p.q;
  for (Index j = 0; j < k; ++j) {
    kkt.block(n + j, 0, 1, n) = p.A.row(act[static_cast<std::size_t>(j)]);
    kkt.block(0, n + j, n, 1) = p.A.row(act[static_cast<std::size_t>(j)]).transpose();
    kkt(n + j, n + j) = -1e-10;
    b[n + j] = rhs[static_cast<std::size_t>(j)];
  }
  const Eigen::PartialPivLU<Mat> lu(kkt);
  Vec z = lu.solve(b);
  if (!z.allFinite()) return false;
  // iterative refinement against the regularization
  Mat exact = kkt;
  exact.topLeftCorner(n, n) = p.P;
  for (Index j = 0; j < k; ++j) exact(n + j, n + j) = 0.0;
  for (int it = 0; it < 3; ++it) z += lu.solve(b - exact * z);
  Vec x = z.head(n);
  Vec y = Vec::Zero(m);
  for (Index j = 0; j < k; ++j) y[act[static_cast<std::size_t>(j)]] = z[n + j];
  // sign consistency of the multipliers and feasibility of the inactive rows
  for (Index j = 0; j < k; ++j) {
    const Index i = act[static_cast<std::size_t>(j)];
    if (p.l[i] == p.u[i]) continue;
    const bool at_upper = sol.y[i] > 0;
    if ((at_upper && y[i] < -tol) || (!at_upper && y[i] > tol)) return false;
  }
  const auto [rp, rd] = qp_residuals(p, x, y);
  const auto [rp0, rd0] = qp_residuals(p, sol.x, sol.y);
  if (std::max(rp, rd) <= std::max({rp0, rd0, tol})) {
    sol.x = x;
    sol.y = y;
    sol.primal_residual = rp;
    sol.dual_residual = rd;
    sol.polished = true;
    return true;
  }
  return false;
}

}  // namespace detail

/**
 * @brief Solves the QP. `warm_x`/`warm_y` seed the iteration when sized correctly.
 *
 * Throws an infeasible-horizon error when some l_i > u_i.
 */
inline QPSolution solve_qp(const QPProblem & p, const QPSettings & s = {}, const Vec & warm_x = Vec(),
                           const Vec & warm_y = Vec())
{
  const Index n = p.P.rows();
  const Index m = p.A.rows();
  require(p.P.cols() == n && p.q.size() == n, "qp: P/q shape");
  require(p.A.cols() == n || m == 0, "qp: A shape");
  require(p.l.size() == m && p.u.size() == m, "qp: bound shape");
  for (Index i = 0; i < m; ++i)
    if (p.l[i] > p.u[i]) throw Error(ErrorKind::infeasible_horizon, "qp: contradictory bounds on row " + std::to_string(i));

  QPSolution sol;
  sol.x = warm_x.size() == n ? warm_x : Vec::Zero(n);
  sol.y = warm_y.size() == m ? warm_y : Vec::Zero(m);
  Vec z = (p.A * sol.x).cwiseMax(p.l).cwiseMin(p.u);

  // the penalty follows the curvature scale of P; equality rows get a stiffer one
  const double curvature = n > 0 ? p.P.diagonal().cwiseAbs().sum() / static_cast<double>(n) : 0.0;
  const double rho0 = s.rho * std::max(1.0, curvature);
  Vec rho = Vec::Constant(m, rho0);
  for (Index i = 0; i < m; ++i)
    if (p.l[i] == p.u[i]) rho[i] = 1e3 * rho0;
  Eigen::LLT<Mat> llt;
  const auto factor = [&] {
    llt.compute(p.P + s.sigma * Mat::Identity(n, n) + p.A.transpose() * rho.asDiagonal() * p.A);
    require(llt.info() == Eigen::Success, "qp: P must be positive semidefinite");
  };
  factor();
  const auto inf_norm = [](const Vec & v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; };

  for (int it = 1; it <= s.max_iterations; ++it) {
    const Vec rhs = s.sigma * sol.x - p.q + p.A.transpose() * (rho.cwiseProduct(z) - sol.y);
    const Vec xt = llt.solve(rhs);
    const Vec zt = p.A * xt;
    const Vec x_new = s.alpha * xt + (1 - s.alpha) * sol.x;
    const Vec zr = s.alpha * zt + (1 - s.alpha) * z;
    const Vec z_new = (zr + sol.y.cwiseQuotient(rho)).cwiseMax(p.l).cwiseMin(p.u);
    sol.y += rho.cwiseProduct(zr - z_new);
    sol.x = x_new;
    z = z_new;
    sol.iterations = it;
    if (it % 10 == 0 || it == s.max_iterations) {
      const auto [rp, rd] = qp_residuals(p, sol.x, sol.y);
      sol.primal_residual = rp;
      sol.dual_residual = rd;
      const double scale = 1.0 + std::max(p.q.size() ? p.q.cwiseAbs().maxCoeff() : 0.0,
                                          (p.P * sol.x).size() ? (p.P * sol.x).cwiseAbs().maxCoeff() : 0.0);
      if (rp <= s.tolerance && rd <= s.tolerance * scale) {
        sol.converged = true;
        break;
      }
      // rebalance primal against dual progress; linear-cost variables otherwise stall the iteration
      if (s.adapt_interval > 0 && m > 0 && it % s.adapt_interval == 0) {
        const double rp_n = rp / std::max({inf_norm(p.A * sol.x), inf_norm(z), 1e-12});
        const double rd_n =
          rd / std::max({inf_norm(p.P * sol.x), inf_norm(p.A.transpose() * sol.y), inf_norm(p.q), 1e-12});
        const double ratio = std::sqrt(rp_n / std::max(rd_n, 1e-300));
        if (std::isfinite(ratio) && (ratio > 5.0 || ratio < 0.2)) {
          const double f = std::clamp(ratio, 1e-6, 1e6);
          rho *= f;
          factor();
        }
      }
      if (s.polish && it % 25 == 0 && detail::polish_qp(p, sol, 1e-9) &&
          std::max(sol.primal_residual, sol.dual_residual) <= s.tolerance) {
        sol.converged = true;
        break;
      }
    }
  }
  if (s.polish && !sol.polished) {
    detail::polish_qp(p, sol, 1e-9);
    if (std::max(sol.primal_residual, sol.dual_residual) <= s.tolerance) sol.converged = true;
  }
  sol.objective = qp_objective(p, sol.x);
  return sol;
}

}  // namespace assm
