#pragma once

/**
 * @file
 * @brief Receding-horizon tracking control on reduced models: discretization, sequential convex
 * programming for the horizon problem, the closed-loop driver and tracking metrics.
 */

#include "core.hpp"
#include "dictionary.hpp"
#include "dynamics.hpp"
#include "embedding.hpp"
#include "qp.hpp"
#include "ssm.hpp"
#include "trajectory.hpp"

#include <chrono>
#include <deque>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace assm {

/// Spherical keep-out region in workspace coordinates.
struct KeepOut
{
  Vec center;
  double radius{0};

  double penetration(const Vec & z) const { return std::max(0.0, radius - (z - center).norm()); }
};

struct SCPSettings
{
  int max_iterations{20};
  double trust_region{1.0};      ///< initial infinity-norm radius on the input update
  double max_trust_region{1e3};
  double min_trust_region{1e-7};
  double tolerance{1e-5};        ///< relative cost change that ends the iteration
  double slack_weight{1e4};      ///< l1 weight on keep-out violations
  QPSettings qp{};
};

struct OCPSpec
{
  double horizon{0.02};  ///< planning-horizon length in seconds
  int substeps{10};
  int apply_substeps{0};  ///< substeps applied before replanning; 0 applies the whole plan
  Mat Q;                  ///< w x w workspace weight
  Mat R;                  ///< n_u x n_u input weight
  Box input_box;
  std::vector<KeepOut> keep_outs;
  SCPSettings scp{};

  double substep() const { return horizon / substeps; }
  int applied() const { return apply_substeps > 0 ? std::min(apply_substeps, substeps) : substeps; }

  void validate() const
  {
    require(horizon > 0 && substeps >= 1, "ocp: horizon and substeps must be positive");
    require(Q.rows() == Q.cols() && R.rows() == R.cols(), "ocp: cost matrices must be square");
    require(R.rows() == input_box.dim(), "ocp: R and input box dimensions differ");
    const Eigen::SelfAdjointEigenSolver<Mat> eq(0.5 * (Q + Q.transpose()));
    const Eigen::SelfAdjointEigenSolver<Mat> er(0.5 * (R + R.transpose()));
    require(Q.size() == 0 || eq.eigenvalues().minCoeff() >= -1e-12, "ocp: Q_z must be positive semidefinite");
    require(er.eigenvalues().minCoeff() > 0, "ocp: R_u must be positive definite");
    for (const auto & k : keep_outs)
      require(k.center.size() == Q.rows() && k.radius > 0, "ocp: keep-out dimension or radius invalid");
  }
};

// ---------------------------------------------------------------------------------------------
// Prediction models

/**
 * @brief Discrete-time model used inside the horizon problem: r' = step(r, u) and workspace
 * output z = output(r). Inputs are whatever the model treats as its control (deviations for
 * reduced SSM models, absolute inputs for the baselines).
 */
class PredictionModel
{
public:
  virtual ~PredictionModel() = default;

  virtual Index state_dim() const = 0;
  virtual Index input_dim() const = 0;
  virtual Index output_dim() const = 0;
  virtual Vec step(const Vec & r, const Vec & u) const = 0;
  virtual Vec output(const Vec & r) const = 0;

  /// Step Jacobians d step/d r and d step/d u; central differences unless overridden.
  virtual void step_jacobians(const Vec & r, const Vec & u, Mat & a, Mat & b) const
  {
    a = fd_jacobian([&](const Vec & x) { return step(x, u); }, r);
    b = fd_jacobian([&](const Vec & v) { return step(r, v); }, u);
  }

  virtual Mat output_jacobian(const Vec & r) const
  {
    return fd_jacobian([&](const Vec & x) { return output(x); }, r);
  }
};

/**
 * @brief RK4 step map of r' = R phi(r) + B u with zero-order-hold input, and workspace output
 * z = C (W psi(r) + anchor). Jacobians are propagated through the RK4 stages exactly.
 */
class DiscreteReducedModel : public PredictionModel
{
public:
  DiscreteReducedModel(StaticSSMModel model, double dt, Mat workspace, int rk_steps = 1)
    : m_(std::move(model)), dt_(dt), c_(std::move(workspace)), rk_steps_(rk_steps)
  {
    require(dt_ > 0 && rk_steps_ >= 1, "discretize: dt and rk steps must be positive");
    require(c_.cols() == m_.embedded_dim(), "discretize: workspace map must act on the embedded observable");
    cw_ = c_ * m_.W;
    c_anchor_ = c_ * m_.anchor;
  }

  Index state_dim() const override { return m_.d(); }
  Index input_dim() const override { return m_.input_dim(); }
  Index output_dim() const override { return c_.rows(); }
  double dt() const { return dt_; }
  const StaticSSMModel & model() const { return m_; }

  Vec step(const Vec & r, const Vec & u) const override
  {
    return advance(r, u, nullptr, nullptr);
  }

  void step_jacobians(const Vec & r, const Vec & u, Mat & a, Mat & b) const override { advance(r, u, &a, &b); }

  Vec output(const Vec & r) const override { return cw_ * m_.w_basis().evaluate(r) + c_anchor_; }
  Mat output_jacobian(const Vec & r) const override { return cw_ * m_.w_basis().jacobian(r); }

private:
  Vec field(const Vec & r, const Vec & bu) const { return m_.R * m_.r_basis().evaluate(r) + bu; }
  Mat field_jacobian(const Vec & r) const { return m_.R * m_.r_basis().jacobian(r); }

  Vec advance(Vec r, const Vec & u, Mat * a, Mat * b) const
  {
    const Index d = m_.d();
    const Index n_u = input_dim();
    const double h = dt_ / rk_steps_;
    const Vec bu = m_.B * u;
    Mat ar = Mat::Identity(d, d);
    Mat au = Mat::Zero(d, n_u);
    const bool jac = a != nullptr;
    for (int s = 0; s < rk_steps_; ++s) {
      const Vec k1 = field(r, bu);
      const Vec r2 = r + 0.5 * h * k1;
      const Vec k2 = field(r2, bu);
      const Vec r3 = r + 0.5 * h * k2;
      const Vec k3 = field(r3, bu);
      const Vec r4 = r + h * k3;
      const Vec k4 = field(r4, bu);
      if (jac) {
        // stage sensitivities with respect to (r at the start of this step, u)
        const Mat j1 = field_jacobian(r);
        const Mat k1r = j1;
        const Mat k1u = m_.B;
        const Mat j2 = field_jacobian(r2);
        const Mat k2r = j2 * (Mat::Identity(d, d) + 0.5 * h * k1r);
        const Mat k2u = j2 * (0.5 * h * k1u) + m_.B;
        const Mat j3 = field_jacobian(r3);
        const Mat k3r = j3 * (Mat::Identity(d, d) + 0.5 * h * k2r);
        const Mat k3u = j3 * (0.5 * h * k2u) + m_.B;
        const Mat j4 = field_jacobian(r4);
        const Mat k4r = j4 * (Mat::Identity(d, d) + h * k3r);
        const Mat k4u = j4 * (h * k3u) + m_.B;
        const Mat sr = Mat::Identity(d, d) + h / 6.0 * (k1r + 2 * k2r + 2 * k3r + k4r);
        const Mat su = h / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u);
        au = sr * au + su;
        ar = sr * ar;
      }
      r += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    if (jac) {
      *a = ar;
      *b = au;
    }
    return r;
  }

  StaticSSMModel m_;
  double dt_;
  Mat c_;
  int rk_steps_;
  Mat cw_;
  Vec c_anchor_;
};

inline DiscreteReducedModel discretize_model(const StaticSSMModel & model, double dt_sub, const Mat & workspace,
                                             int rk_steps = 1)
{
  return DiscreteReducedModel(model, dt_sub, workspace, rk_steps);
}

// ---------------------------------------------------------------------------------------------
// Horizon problem

struct OCPProblem
{
  const PredictionModel * model{nullptr};
  Vec r0;
  Vec input_offset;  ///< absolute input = offset + model input
  Mat target;        ///< w x N, target at substeps 1..N
  double dt{0};
};

struct OCPSolution
{
  Mat inputs;      ///< model inputs, n_u x N
  Mat states;      ///< d x (N+1)
  Mat outputs;     ///< w x N (substeps 1..N)
  double cost{0};  ///< penalized objective
  double violation{0};
  int iterations{0};  ///< accepted SCP steps
  int qp_iterations{0};
  bool converged{false};
  bool soft_violation{false};  ///< keep-out slack remains active at the solution
  std::vector<double> accepted_costs;
};

namespace detail {

struct Rollout
{
  Mat states;
  Mat outputs;
  double tracking{0};
  double input{0};
  double violation{0};  ///< sum of penetration depths
  bool finite{true};
};

inline Rollout rollout(const OCPSpec & spec, const OCPProblem & prob, const Mat & u)
{
  const Index n = u.cols();
  Rollout out;
  out.states.resize(prob.r0.size(), n + 1);
  out.outputs.resize(prob.target.rows(), n);
  out.states.col(0) = prob.r0;
  for (Index k = 0; k < n; ++k) {
    out.states.col(k + 1) = prob.model->step(out.states.col(k), u.col(k));
    out.outputs.col(k) = prob.model->output(out.states.col(k + 1));
    const Vec e = out.outputs.col(k) - prob.target.col(k);
    const Vec ua = prob.input_offset + u.col(k);
    out.tracking += prob.dt * e.dot(spec.Q * e);
    out.input += prob.dt * ua.dot(spec.R * ua);
    for (const auto & ko : spec.keep_outs) out.violation += ko.penetration(out.outputs.col(k));
  }
  out.finite = out.states.allFinite() && out.outputs.allFinite();
  return out;
}

inline double merit(const OCPSpec & spec, const Rollout & r)
{
  if (!r.finite) return std::numeric_limits<double>::infinity();
  return r.tracking + r.input + spec.scp.slack_weight * r.violation;
}

}  // namespace detail

/**
 * @brief Sequential convex programming on the input sequence.
 *
 * Each iteration linearizes the dynamics and the output along the incumbent, linearizes the
 * keep-out spheres as half-spaces with l1 slack, and solves the trust-region QP. Steps are
 * accepted when the realized decrease of the penalized objective is at least a tenth of the
 * predicted one.
 */
inline OCPSolution solve_ocp_scp(const OCPSpec & spec, const OCPProblem & prob, const Mat & warm_start = Mat())
{
  require(prob.model != nullptr, "ocp: missing model");
  const Index n_u = prob.model->input_dim();
  const Index d = prob.model->state_dim();
  const Index w = prob.model->output_dim();
  const Index N = spec.substeps;
  require(prob.r0.size() == d, "ocp: initial state dimension");
  require(prob.input_offset.size() == n_u && spec.input_box.dim() == n_u, "ocp: input dimension");
  require(prob.target.rows() == w && prob.target.cols() == N, "ocp: target slice must be w x N");
  require(spec.Q.rows() == w, "ocp: Q_z dimension differs from the workspace");
  if ((spec.input_box.lo.array() > spec.input_box.hi.array()).any())
    throw Error(ErrorKind::infeasible_horizon, "ocp: contradictory input box");

  const Vec dlo = spec.input_box.lo - prob.input_offset;
  const Vec dhi = spec.input_box.hi - prob.input_offset;
  const Box dev_box{dlo, dhi};
  Mat u = warm_start.rows() == n_u && warm_start.cols() == N ? warm_start : Mat::Zero(n_u, N);
  for (Index k = 0; k < N; ++k) u.col(k) = dev_box.clamp(u.col(k));

  const auto n_keep = static_cast<Index>(spec.keep_outs.size());
  const Index n_dec = N * n_u;
  const Index n_slack = N * n_keep;
  const Index n_var = n_dec + n_slack;
  const double inf = std::numeric_limits<double>::infinity();

  OCPSolution sol;
  detail::Rollout cur = detail::rollout(spec, prob, u);
  if (!cur.finite) {
    u.setZero();
    for (Index k = 0; k < N; ++k) u.col(k) = dev_box.clamp(u.col(k));
    cur = detail::rollout(spec, prob, u);
  }
  if (!cur.finite) throw Error(ErrorKind::model_domain_exceeded, "ocp: rollout of the initial guess is not finite");
  double j_cur = detail::merit(spec, cur);
  sol.accepted_costs.push_back(j_cur);
  double trust = spec.scp.trust_region;
  Vec qp_x, qp_y;

  for (int it = 0; it < spec.scp.max_iterations; ++it) {
    // condensed output sensitivities G_k = dz_k/dU
    std::vector<Mat> g(static_cast<std::size_t>(N));
    Mat s = Mat::Zero(d, n_dec);
    for (Index k = 0; k < N; ++k) {
      Mat a, b;
      prob.model->step_jacobians(cur.states.col(k), u.col(k), a, b);
      s = a * s;
      s.middleCols(k * n_u, n_u) += b;
      g[static_cast<std::size_t>(k)] = prob.model->output_jacobian(cur.states.col(k + 1)) * s;
    }

    QPProblem qp;
    qp.P = Mat::Zero(n_var, n_var);
    qp.q = Vec::Zero(n_var);
    for (Index k = 0; k < N; ++k) {
      const Mat & gk = g[static_cast<std::size_t>(k)];
      const Vec e = cur.outputs.col(k) - prob.target.col(k);
      qp.P.topLeftCorner(n_dec, n_dec) += 2 * prob.dt * gk.transpose() * spec.Q * gk;
      qp.q.head(n_dec) += 2 * prob.dt * gk.transpose() * spec.Q * e;
      const Vec ua = prob.input_offset + u.col(k);
      qp.P.block(k * n_u, k * n_u, n_u, n_u) += 2 * prob.dt * spec.R;
      qp.q.segment(k * n_u, n_u) += 2 * prob.dt * spec.R * ua;
    }
    qp.P = 0.5 * (qp.P + qp.P.transpose());
    qp.q.tail(n_slack).setConstant(spec.scp.slack_weight);

    const Index rows = n_var + n_slack;
    qp.A = Mat::Zero(rows, n_var);
    qp.l.resize(rows);
    qp.u.resize(rows);
    qp.A.topLeftCorner(n_var, n_var).setIdentity();
    for (Index k = 0; k < N; ++k)
      for (Index i = 0; i < n_u; ++i) {
        const Index j = k * n_u + i;
        qp.l[j] = std::max(dlo[i] - u(i, k), -trust);
        qp.u[j] = std::min(dhi[i] - u(i, k), trust);
      }
    qp.l.segment(n_dec, n_slack).setZero();
    qp.u.segment(n_dec, n_slack).setConstant(inf);
    for (Index k = 0; k < N; ++k)
      for (Index c = 0; c < n_keep; ++c) {
        const KeepOut & ko = spec.keep_outs[static_cast<std::size_t>(c)];
        const Vec off = cur.outputs.col(k) - ko.center;
        const double dist = off.norm();
        const Vec normal = dist > 1e-12 ? Vec(off / dist) : Vec(Vec::Unit(w, 0));
        const Index row = n_var + k * n_keep + c;
        qp.A.block(row, 0, 1, n_dec) = normal.transpose() * g[static_cast<std::size_t>(k)];
        qp.A(row, n_dec + k * n_keep + c) = 1.0;
        qp.l[row] = ko.radius - normal.dot(off);
        qp.u[row] = inf;
      }

    const QPSolution qs = solve_qp(qp, spec.scp.qp, qp_x, qp_y);
    sol.qp_iterations += qs.iterations;
    qp_x = qs.x;
    qp_y = qs.y;
    const Vec du = qs.x.head(n_dec);
    const double model_cost = qs.objective + (cur.tracking + cur.input);
    const double predicted = j_cur - model_cost;
    if (!(predicted > spec.scp.tolerance * std::max(std::abs(j_cur), 1e-12))) {
      sol.converged = true;
      break;
    }
    Mat trial = u + Eigen::Map<const Mat>(du.data(), n_u, N);
    for (Index k = 0; k < N; ++k) trial.col(k) = dev_box.clamp(trial.col(k));
    const detail::Rollout next = detail::rollout(spec, prob, trial);
    const double j_next = detail::merit(spec, next);
    const double ratio = (j_cur - j_next) / predicted;
    if (ratio > 0.1) {
      const double change = j_cur - j_next;
      u = trial;
      cur = next;
      j_cur = j_next;
      ++sol.iterations;
      sol.accepted_costs.push_back(j_cur);
      if (ratio > 0.75) trust = std::min(2 * trust, spec.scp.max_trust_region);
      if (change <= spec.scp.tolerance * std::max(std::abs(j_cur), 1e-12)) {
        sol.converged = true;
        break;
      }
    } else {
      trust *= 0.5;
      qp_x.resize(0);
      qp_y.resize(0);
    }
    if (trust < spec.scp.min_trust_region) break;
  }

  sol.inputs = u;
  sol.states = cur.states;
  sol.outputs = cur.outputs;
  sol.cost = j_cur;
  sol.violation = cur.violation;
  sol.soft_violation = cur.violation > 0;
  return sol;
}

// ---------------------------------------------------------------------------------------------
// Controllers and the closed loop

struct Plan
{
  Mat inputs;  ///< absolute inputs, n_u x m, one column per substep
  int iterations{0};
  bool converged{true};
  bool extrapolated{false};
  bool clipped{false};
};

/// A feedback policy that returns a piecewise-constant input plan from the current observation.
class Controller
{
public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  /// Duration of one input piece.
  virtual double substep() const = 0;
  /// Pieces applied before the next call to plan().
  virtual Index apply_count() const = 0;
  virtual Plan plan(double t, const Vec & y_now, const TargetTrack & target) = 0;
  virtual void reset() {}
};

/// Samples target columns at t + k dt for k = 1..n.
inline Mat target_slice(const TargetTrack & target, double t, double dt, Index n)
{
  Mat out(target.dim(), n);
  for (Index k = 0; k < n; ++k) out.col(k) = target(t + static_cast<double>(k + 1) * dt);
  return out;
}

/**
 * @brief MPC on a sampled aSSM family (full dictionary or one of its approximations): at each
 * horizon the family is sampled at the current observation and the horizon problem is solved
 * warm-started from the shifted previous plan.
 */
class AssmMPC : public Controller
{
public:
  AssmMPC(ModelFamily family, OCPSpec spec, Mat workspace, AnchorMode mode = AnchorMode::steady_state,
          int rk_steps = 1)
    : family_(std::move(family)), spec_(std::move(spec)), workspace_(std::move(workspace)), mode_(mode),
      rk_steps_(rk_steps)
  {
    spec_.validate();
    require(workspace_.rows() == spec_.Q.rows(), "assm mpc: workspace map and Q_z dimensions differ");
  }

  std::string name() const override { return to_string(family_.order()); }
  double substep() const override { return spec_.substep(); }
  Index apply_count() const override { return spec_.applied(); }
  void reset() override { previous_.resize(0, 0); }
  const OCPSolution & last_solution() const { return last_; }

  Plan plan(double t, const Vec & y_now, const TargetTrack & target) override
  {
    const AnchoredModel am = assm_model_at(family_, y_now, spec_.input_box, mode_);
    const DiscreteReducedModel dm(am.bundle.model, spec_.substep(), workspace_, rk_steps_);
    OCPProblem prob;
    prob.model = &dm;
    prob.r0 = am.r0;
    prob.input_offset = am.u_s0;
    prob.dt = spec_.substep();
    prob.target = target_slice(target, t, prob.dt, spec_.substeps);
    Mat warm;
    if (previous_.cols() == spec_.substeps) {
      warm.resize(previous_.rows(), previous_.cols());
      const Index shift = apply_count();
      for (Index k = 0; k < warm.cols(); ++k)
        warm.col(k) = previous_.col(std::min<Index>(k + shift, previous_.cols() - 1)) - am.u_s0;
    }
    last_ = solve_ocp_scp(spec_, prob, warm);
    Plan p;
    p.inputs = last_.inputs.colwise() + am.u_s0;
    previous_ = p.inputs;
    p.iterations = last_.iterations;
    p.converged = last_.converged;
    p.extrapolated = am.extrapolated;
    for (Index k = 0; k < p.inputs.cols(); ++k) {
      const Vec c = spec_.input_box.clamp(p.inputs.col(k));
      if ((c - p.inputs.col(k)).cwiseAbs().maxCoeff() > 1e-12) p.clipped = true;
      p.inputs.col(k) = c;
    }
    return p;
  }

private:
  ModelFamily family_;
  OCPSpec spec_;
  Mat workspace_;
  AnchorMode mode_;
  int rk_steps_;
  Mat previous_;
  OCPSolution last_;
};

/// Closed-loop options shared by every controller.
struct RunOptions
{
  double integration_dt{1e-3};
  EmbeddingSpec embedding{};  ///< delay buffer; lags must be multiples of the controller substep
  Mat workspace;              ///< w x observable_dim map from raw observables to the workspace
  std::vector<KeepOut> keep_outs;
};

struct StepRecord
{
  double time{0};
  double solve_time{0};
  double running_ise{0};
  int iterations{0};
  bool converged{true};
  bool extrapolated{false};
  bool clipped{false};
};

struct TrackingMetrics
{
  double ise{0};
  double violation_ratio{0};
  double max_violation{0};
};

struct ParetoRecord
{
  std::string variant;
  double mean_solve_time{0};
  double ise{0};
};

struct MPCResult
{
  std::string variant;
  Vec times;
  Mat workspace;  ///< w x T closed-loop workspace trajectory
  Mat target;     ///< w x T
  Mat inputs;     ///< n_u x T, input applied on [t_k, t_k+1) (last column repeats)
  std::vector<StepRecord> steps;
  TrackingMetrics metrics;
  double slowness{0};
  bool aborted{false};
  std::string abort_reason;

  double mean_solve_time() const
  {
    if (steps.empty()) return 0.0;
    double s = 0;
    for (const auto & r : steps) s += r.solve_time;
    return s / static_cast<double>(steps.size());
  }
  ParetoRecord pareto() const { return {variant, mean_solve_time(), metrics.ise}; }
};

/**
 * @brief ISE by the trapezoid rule on |z - target|^2, the fraction of samples inside any keep-out
 * region and the deepest penetration.
 */
inline TrackingMetrics tracking_metrics(const Vec & times, const Mat & z, const Mat & target,
                                        const std::vector<KeepOut> & keep_outs = {})
{
  require(times.size() == z.cols() && z.cols() == target.cols() && z.rows() == target.rows(),
          "metrics: misaligned samples");
  TrackingMetrics m;
  const Index n = times.size();
  if (n == 0) return m;
  Vec e2(n);
  Index inside = 0;
  for (Index k = 0; k < n; ++k) {
    e2[k] = (z.col(k) - target.col(k)).squaredNorm();
    double depth = 0;
    bool hit = false;
    for (const auto & ko : keep_outs) {
      const double dist = (z.col(k) - ko.center).norm();
      if (dist < ko.radius) {
        hit = true;
        depth = std::max(depth, ko.radius - dist);
      }
    }
    if (hit) ++inside;
    m.max_violation = std::max(m.max_violation, depth);
  }
  for (Index k = 1; k < n; ++k) m.ise += 0.5 * (times[k] - times[k - 1]) * (e2[k] + e2[k - 1]);
  m.violation_ratio = static_cast<double>(inside) / static_cast<double>(n);
  return m;
}

inline TrackingMetrics tracking_metrics(const Vec & times, const Mat & z, const TargetTrack & target,
                                        const std::vector<KeepOut> & keep_outs = {})
{
  Mat g(target.dim(), times.size());
  for (Index k = 0; k < times.size(); ++k) g.col(k) = target(times[k]);
  return tracking_metrics(times, z, g, keep_outs);
}

/// Mean finite-difference speed of the samples of one path.
inline double mean_speed(const Vec & times, const Mat & points)
{
  if (times.size() < 2) return 0.0;
  double s = 0;
  for (Index k = 1; k < times.size(); ++k) s += (points.col(k) - points.col(k - 1)).norm();
  return s / (times[times.size() - 1] - times[0]);
}

/**
 * @brief Ratio of the target's mean speed to the mean speed of the uncontrolled decays (both in
 * workspace coordinates).
 */
inline double slowness_measure(const TargetTrack & target, const std::vector<Trajectory> & decays)
{
  require(!decays.empty(), "slowness: no decays");
  target.validate();
  double den = 0;
  for (const auto & d : decays) den += mean_speed(d.times, d.values);
  den /= static_cast<double>(decays.size());
  if (!(den > 0)) throw Error(ErrorKind::undefined_normalizer, "slowness: decays have zero mean speed");
  return mean_speed(target.times, target.points) / den;
}

namespace detail {

/// Rolling buffer that stacks the observations needed by a delay embedding.
class DelayBuffer
{
public:
  DelayBuffer(EmbeddingSpec spec, double dt) : spec_(spec)
  {
    lag_ = spec_.copies > 1 ? spec_.lag_steps(dt) : 0;
  }

  void seed(const Vec & y)
  {
    hist_.assign(static_cast<std::size_t>(lag_ * (spec_.copies - 1) + 1), y);
  }

  void push(const Vec & y)
  {
    hist_.push_back(y);
    hist_.pop_front();
  }

  /// Oldest copy first, matching the embedding of recorded trajectories.
  Vec embedded() const
  {
    const Index m = hist_.back().size();
    Vec out(m * spec_.copies);
    for (int c = 0; c < spec_.copies; ++c) out.segment(c * m, m) = hist_[static_cast<std::size_t>(c * lag_)];
    return out;
  }

private:
  EmbeddingSpec spec_;
  Index lag_{0};
  std::deque<Vec> hist_;
};

}  // namespace detail

/**
 * @brief Runs `ctrl` against the true simulator from state x0 over the target's time span.
 *
 * Inputs are held constant over each controller substep and the plant is integrated with RK4.
 * The workspace is recorded at every substep boundary. Integration divergence ends the run with
 * a partial, flagged result.
 */
inline MPCResult mpc_run(const DynamicsModel & plant, Controller & ctrl, const TargetTrack & target, const Vec & x0,
                         const RunOptions & opt)
{
  target.validate();
  const double h = ctrl.substep();
  require(h > 0 && ctrl.apply_count() >= 1, "closed loop: invalid controller timing");
  const double span = target.t_end() - target.t_begin();
  const auto n_steps = static_cast<Index>(std::llround(span / h));
  require(n_steps >= 1 && std::abs(static_cast<double>(n_steps) * h - span) <= 1e-9 * std::max(1.0, span),
          "closed loop: target duration must be a multiple of the controller substep");
  const auto stride = static_cast<int>(std::llround(h / opt.integration_dt));
  require(stride >= 1 && std::abs(stride * opt.integration_dt - h) <= 1e-9 * h,
          "closed loop: substep must be a multiple of the integration step");
  const Mat cmap = opt.workspace.size() ? opt.workspace : plant.workspace_map();
  require(cmap.cols() == plant.observable_dim(), "closed loop: workspace map dimension");

  ctrl.reset();
  MPCResult res;
  res.variant = ctrl.name();
  const Index n_u = plant.input_dim();
  res.times.resize(n_steps + 1);
  res.workspace.resize(cmap.rows(), n_steps + 1);
  res.target.resize(cmap.rows(), n_steps + 1);
  res.inputs = Mat::Zero(n_u, n_steps + 1);

  Vec x = x0;
  detail::DelayBuffer buffer(opt.embedding, h);
  buffer.seed(plant.observe(x));
  const Box box = plant.input_box();
  const double t0 = target.t_begin();
  res.times[0] = t0;
  res.workspace.col(0) = cmap * plant.observe(x);
  res.target.col(0) = target(t0);

  auto running_ise = [&](Index upto) {
    return tracking_metrics(res.times.head(upto + 1), res.workspace.leftCols(upto + 1), res.target.leftCols(upto + 1))
      .ise;
  };

  Index k = 0;
  try {
    while (k < n_steps) {
      const double t = t0 + static_cast<double>(k) * h;
      const auto start = std::chrono::steady_clock::now();
      Plan plan;
      try {
        plan = ctrl.plan(t, buffer.embedded(), target);
      } catch (const Error & e) {
        if (e.kind() == ErrorKind::integration_diverged || e.kind() == ErrorKind::model_domain_exceeded) throw;
        throw Error(e.kind(), "horizon " + std::to_string(res.steps.size()) + ": " + e.what());
      }
      StepRecord rec;
      rec.solve_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      rec.time = t;
      rec.iterations = plan.iterations;
      rec.converged = plan.converged;
      rec.extrapolated = plan.extrapolated;
      rec.clipped = plan.clipped;
      require(plan.inputs.rows() == n_u && plan.inputs.cols() >= 1, "closed loop: empty plan");
      const Index apply = std::min<Index>({ctrl.apply_count(), plan.inputs.cols(), n_steps - k});
      for (Index j = 0; j < apply; ++j) {
        const Vec u = box.clamp(plan.inputs.col(j));
        if (!box.contains(plan.inputs.col(j), 1e-12)) rec.clipped = true;
        const InputSignal hold = constant_input(u);
        const double ts = t0 + static_cast<double>(k) * h;
        for (int s = 0; s < stride; ++s) x = rk4_step(plant, x, hold, ts + s * opt.integration_dt, opt.integration_dt);
        if (!x.allFinite()) throw IntegrationDiverged(ts);
        res.inputs.col(k) = u;
        ++k;
        res.times[k] = t0 + static_cast<double>(k) * h;
        const Vec y = plant.observe(x);
        buffer.push(y);
        res.workspace.col(k) = cmap * y;
        res.target.col(k) = target(res.times[k]);
      }
      rec.running_ise = running_ise(k);
      res.steps.push_back(rec);
    }
    res.inputs.col(n_steps) = res.inputs.col(n_steps - 1);
  } catch (const Error & e) {
    if (e.kind() != ErrorKind::integration_diverged && e.kind() != ErrorKind::model_domain_exceeded) throw;
    res.aborted = true;
    res.abort_reason = e.what();
    res.times.conservativeResize(k + 1);
    res.workspace.conservativeResize(Eigen::NoChange, k + 1);
    res.target.conservativeResize(Eigen::NoChange, k + 1);
    res.inputs.conservativeResize(Eigen::NoChange, k + 1);
  }
  res.metrics = tracking_metrics(res.times, res.workspace, res.target, opt.keep_outs);
  return res;
}

}  // namespace assm
