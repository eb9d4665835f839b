#pragma once

/**
 * @file
 * @brief Comparison controllers: trajectory piecewise-linear (TPWL) models driven by the same
 * horizon solver, and a Koopman-style linear model with LQR feedback plus static feedforward.
 */

#include "core.hpp"
#include "dynamics.hpp"
#include "embedding.hpp"
#include "mpc.hpp"
#include "regression.hpp"
#include "signals.hpp"
#include "trajectory.hpp"

#include <string>
#include <vector>

namespace assm {

// ---------------------------------------------------------------------------------------------
// Continuous algebraic Riccati equation

struct CareSolution
{
  Mat P;
  Mat K;
  double residual{0};  ///< |A'P + PA - PGP + Q|_F / max(1, |Q|_F + |A'P + PA|_F)
  int iterations{0};
};

inline double care_residual(const Mat & a, const Mat & g, const Mat & q, const Mat & p)
{
  const Mat lin = a.transpose() * p + p * a;
  const Mat res = lin - p * g * p + q;
  return res.norm() / std::max(1.0, q.norm() + lin.norm());
}

/**
 * @brief Stabilizing solution of A'P + PA - P B R^-1 B' P + Q = 0 by the structure-preserving
 * doubling algorithm, polished with Newton-Kleinman steps.
 *
 * Throws a stability-violation error when the closed loop A - BK is not Hurwitz.
 */
inline CareSolution solve_care(const Mat & a, const Mat & b, const Mat & q, const Mat & r, double tol = 1e-12,
                               int max_iterations = 100)
{
  const Index n = a.rows();
  require(a.cols() == n && b.rows() == n && q.rows() == n && q.cols() == n, "care: dimension mismatch");
  require(r.rows() == b.cols() && r.cols() == b.cols(), "care: R dimension mismatch");
  const Eigen::LLT<Mat> r_llt(r);
  require(r_llt.info() == Eigen::Success, "care: R must be positive definite");
  const Mat g = b * r_llt.solve(b.transpose());
  const Mat id = Mat::Identity(n, n);

  const double gamma = std::max(1.0, a.norm());
  const Mat ag = a - gamma * id;
  const Eigen::PartialPivLU<Mat> ag_lu(ag);
  const Mat ag_inv = ag_lu.inverse();
  const Mat w = ag.transpose() + q * ag_inv * g;
  const Mat v = ag + g * ag_inv.transpose() * q;
  const Mat w_inv = w.partialPivLu().inverse();
  const Mat v_inv = v.partialPivLu().inverse();
  Mat e = id + 2 * gamma * v_inv;
  Mat f = id + 2 * gamma * w_inv;
  Mat gk = 2 * gamma * ag_inv * g * w_inv;
  Mat hk = 2 * gamma * w_inv * q * ag_inv;

  CareSolution out;
  for (int it = 1; it <= max_iterations; ++it) {
    const Eigen::PartialPivLU<Mat> lu1(id + gk * hk);
    const Eigen::PartialPivLU<Mat> lu2(id + hk * gk);
    const Mat e1 = e * lu1.solve(e);
    const Mat f1 = f * lu2.solve(f);
    const Mat g1 = gk + e * lu1.solve(gk * f);
    const Mat h1 = hk + f * lu2.solve(hk * e);
    const double change = (h1 - hk).norm() / std::max(1.0, h1.norm());
    e = e1;
    f = f1;
    gk = g1;
    hk = h1;
    out.iterations = it;
    if (change <= tol) break;
  }
  Mat p = 0.5 * (hk + hk.transpose());

  // Newton-Kleinman polish: (A - GP)'X + X(A - GP) = -(Q + PGP)
  for (int it = 0; it < 3 && care_residual(a, g, q, p) > 1e-14; ++it) {
    const Mat acl = a - g * p;
    const Mat rhs = -(q + p * g * p);
    Mat kron = Mat::Zero(n * n, n * n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        kron.block(i * n, j * n, n, n) += acl(j, i) * id;
        if (i == j) kron.block(i * n, j * n, n, n) += acl.transpose();
      }
    const Vec x = kron.partialPivLu().solve(Eigen::Map<const Vec>(rhs.data(), rhs.size()));
    Mat pn = Eigen::Map<const Mat>(x.data(), n, n);
    pn = 0.5 * (pn + pn.transpose());
    if (!(care_residual(a, g, q, pn) < care_residual(a, g, q, p))) break;
    p = pn;
  }
  out.P = p;
  out.K = r_llt.solve(b.transpose() * p);
  out.residual = care_residual(a, g, q, p);
  if (!p.allFinite() || max_real_part(a - b * out.K) >= 0)
    throw Error(ErrorKind::stability_violation, "care: solution is not stabilizing");
  return out;
}

// ---------------------------------------------------------------------------------------------
// TPWL

struct TPWLLocal
{
  Vec x;  ///< full-state linearization point
  Vec u;
  Vec anchor;  ///< reduced coordinates of x
  Mat a;       ///< reduced affine model  xr' = a xr + b u + c
  Mat b;
  Vec c;
};

struct TPWLOptions
{
  Index basis_size{2};
  double threshold{0.1};
};

class TPWLModel
{
public:
  TPWLModel() = default;
  TPWLModel(Mat basis, std::vector<TPWLLocal> locals, double threshold)
    : basis_(std::move(basis)), locals_(std::move(locals)), threshold_(threshold)
  {
    require(!locals_.empty(), "tpwl: at least one local model required");
    require((basis_.transpose() * basis_ - Mat::Identity(basis_.cols(), basis_.cols())).norm() <= 1e-8,
            "tpwl: basis must be orthonormal");
  }

  const Mat & basis() const { return basis_; }
  const std::vector<TPWLLocal> & locals() const { return locals_; }
  double threshold() const { return threshold_; }
  Index size() const { return static_cast<Index>(locals_.size()); }
  Index reduced_dim() const { return basis_.cols(); }
  Index input_dim() const { return locals_.front().b.cols(); }

  Vec reduce(const Vec & x) const { return basis_.transpose() * x; }
  Vec lift(const Vec & xr) const { return basis_ * xr; }

  /// Local model whose anchor is nearest in reduced coordinates (first on ties).
  static Index nearest(const std::vector<TPWLLocal> & locals, const Vec & xr)
  {
    Index best = 0;
    double dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < locals.size(); ++i) {
      const double d2 = (locals[i].anchor - xr).squaredNorm();
      if (d2 < dist) {
        dist = d2;
        best = static_cast<Index>(i);
      }
    }
    return best;
  }
  Index nearest(const Vec & xr) const { return nearest(locals_, xr); }

  static Vec derivative(const TPWLLocal & l, const Vec & xr, const Vec & u) { return l.a * xr + l.b * u + l.c; }
  Vec derivative(const Vec & xr, const Vec & u, Index model) const
  {
    return derivative(locals_[static_cast<std::size_t>(model)], xr, u);
  }

  static TPWLLocal linearize(const DynamicsModel & plant, const Mat & basis, const Vec & x, const Vec & u)
  {
    const Linearization lin = linearize_at(plant, x, u);
    TPWLLocal l;
    l.x = x;
    l.u = u;
    l.anchor = basis.transpose() * x;
    l.a = basis.transpose() * lin.a * basis;
    l.b = basis.transpose() * lin.b;
    l.c = basis.transpose() * (plant.rhs(x, u) - lin.a * x - lin.b * u);
    return l;
  }

private:
  Mat basis_;
  std::vector<TPWLLocal> locals_;
  double threshold_{0.1};
};

/// RK4 step of the local affine model selected at the start of the step.
inline Vec tpwl_step(const TPWLModel & m, const Vec & xr, const Vec & u, double dt)
{
  const Index i = m.nearest(xr);
  const Vec k1 = m.derivative(xr, u, i);
  const Vec k2 = m.derivative(xr + 0.5 * dt * k1, u, i);
  const Vec k3 = m.derivative(xr + 0.5 * dt * k2, u, i);
  const Vec k4 = m.derivative(xr + dt * k3, u, i);
  return xr + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
}

/**
 * @brief Builds the reduced basis from the controlled state snapshots, then scans each response:
 * the latest local linear model is simulated alongside the true response, and when the pointwise
 * relative state error exceeds the threshold a new linearization is taken at the true state of
 * that sample and the simulation restarts from there.
 *
 * The pointwise error is |x_pred - x| / max(|x|, mean |x| over the response), so samples passing
 * close to the origin do not spawn models on their own.
 */
inline TPWLModel tpwl_train(const DynamicsModel & plant, const std::vector<Trajectory> & responses,
                            const TPWLOptions & opt = {})
{
  require(!responses.empty(), "tpwl: no training responses");
  require(opt.threshold > 0, "tpwl: threshold must be positive");
  Index cols = 0;
  for (const auto & r : responses) {
    require(r.has_inputs() && r.dim() == plant.state_dim(), "tpwl: responses must hold full states and inputs");
    cols += r.size();
  }
  require(cols > 0, "tpwl: empty training responses");
  require(opt.basis_size >= 1 && opt.basis_size <= plant.state_dim(), "tpwl: invalid basis size");
  Mat snaps(plant.state_dim(), cols);
  Index c = 0;
  for (const auto & r : responses) {
    snaps.middleCols(c, r.size()) = r.values;
    c += r.size();
  }
  const Eigen::BDCSVD<Mat> svd(snaps, Eigen::ComputeThinU);
  const Mat basis = svd.matrixU().leftCols(opt.basis_size);

  std::vector<TPWLLocal> locals;
  const auto spawn = [&](const Vec & x, const Vec & u) {
    const Vec xr = basis.transpose() * x;
    for (std::size_t i = 0; i < locals.size(); ++i)
      if ((locals[i].anchor - xr).norm() <= 1e-12 * std::max(1.0, xr.norm()) && (locals[i].u - u).norm() <= 1e-12)
        return i;
    locals.push_back(TPWLModel::linearize(plant, basis, x, u));
    return locals.size() - 1;
  };

  for (const auto & r : responses) {
    double mean_norm = 0;
    for (Index k = 0; k < r.size(); ++k) mean_norm += r.values.col(k).norm();
    mean_norm /= static_cast<double>(r.size());

    std::size_t active = spawn(r.values.col(0), r.inputs.col(0));
    Vec xr = basis.transpose() * r.values.col(0);
    for (Index k = 1; k < r.size(); ++k) {
      const double h = r.times[k] - r.times[k - 1];
      const TPWLLocal & l = locals[active];
      // recorded inputs are interpolated linearly between samples inside the step
      const Vec u0 = r.inputs.col(k - 1);
      const Vec u1 = r.inputs.col(k);
      const Vec um = 0.5 * (u0 + u1);
      const Vec k1 = TPWLModel::derivative(l, xr, u0);
      const Vec k2 = TPWLModel::derivative(l, xr + 0.5 * h * k1, um);
      const Vec k3 = TPWLModel::derivative(l, xr + 0.5 * h * k2, um);
      const Vec k4 = TPWLModel::derivative(l, xr + h * k3, u1);
      xr += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
      const Vec x = r.values.col(k);
      const double scale = std::max({x.norm(), mean_norm, 1e-300});
      if ((basis * xr - x).norm() / scale > opt.threshold) {
        active = spawn(x, r.inputs.col(k));
        xr = basis.transpose() * x;
      }
    }
  }
  return TPWLModel(basis, std::move(locals), opt.threshold);
}

struct TPWLDataSpec
{
  int count{5};
  double duration{20.0};
  double knot_spacing{1.0};
  Box input_range;  ///< absolute input range of the Latin-hypercube knots
  IntegrateOptions integrate{1e-3, 10};
};

/// Full-model responses from `x0` to piecewise-linear Latin-hypercube input sequences.
inline std::vector<Trajectory> tpwl_training_responses(const DynamicsModel & plant, const Vec & x0,
                                                        const TPWLDataSpec & spec, std::uint64_t seed)
{
  require(spec.count >= 1, "tpwl data: count must be >= 1");
  require(spec.input_range.dim() == plant.input_dim(), "tpwl data: input range dimension");
  std::vector<Trajectory> out;
  for (int k = 0; k < spec.count; ++k) {
    const TargetTrack knots =
      lhs_signal(seed + static_cast<std::uint64_t>(k) * 7919u, spec.duration, spec.knot_spacing, spec.input_range);
    const Box box = plant.input_box();
    const InputSignal u = [&knots, &box](double t) { return box.clamp(knots(t)); };
    out.push_back(integrate_ode(plant, x0, u, 0.0, spec.duration, spec.integrate));
  }
  return out;
}

/// TPWL as a horizon-problem model: state = reduced coordinates, input = absolute input.
class TPWLPrediction : public PredictionModel
{
public:
  TPWLPrediction(const TPWLModel & model, double dt, Mat workspace)
    : m_(model), dt_(dt), c_(std::move(workspace) * model.basis())
  {}

  Index state_dim() const override { return m_.reduced_dim(); }
  Index input_dim() const override { return m_.input_dim(); }
  Index output_dim() const override { return c_.rows(); }
  Vec step(const Vec & r, const Vec & u) const override { return tpwl_step(m_, r, u, dt_); }
  Vec output(const Vec & r) const override { return c_ * r; }
  Mat output_jacobian(const Vec &) const override { return c_; }

private:
  const TPWLModel & m_;
  double dt_;
  Mat c_;
};

/// Horizon-problem controller on a TPWL model; the observation must be the full state.
class TPWLController : public Controller
{
public:
  TPWLController(TPWLModel model, OCPSpec spec, Mat workspace)
    : model_(std::move(model)), spec_(std::move(spec)), workspace_(std::move(workspace))
  {
    spec_.validate();
  }

  std::string name() const override { return "tpwl"; }
  double substep() const override { return spec_.substep(); }
  Index apply_count() const override { return spec_.applied(); }
  void reset() override { previous_.resize(0, 0); }
  const TPWLModel & model() const { return model_; }

  Plan plan(double t, const Vec & y_now, const TargetTrack & target) override
  {
    require(y_now.size() == model_.basis().rows(), "tpwl controller: observation must be the full state");
    const TPWLPrediction pm(model_, spec_.substep(), workspace_);
    OCPProblem prob;
    prob.model = &pm;
    prob.r0 = model_.reduce(y_now);
    prob.input_offset = Vec::Zero(model_.input_dim());
    prob.dt = spec_.substep();
    prob.target = target_slice(target, t, prob.dt, spec_.substeps);
    Mat warm;
    if (previous_.cols() == spec_.substeps) {
      warm = previous_;
      const Index shift = apply_count();
      for (Index k = 0; k < warm.cols(); ++k) warm.col(k) = previous_.col(std::min<Index>(k + shift, warm.cols() - 1));
    }
    const OCPSolution sol = solve_ocp_scp(spec_, prob, warm);
    previous_ = sol.inputs;
    Plan p;
    p.inputs = sol.inputs;
    p.iterations = sol.iterations;
    p.converged = sol.converged;
    return p;
  }

private:
  TPWLModel model_;
  OCPSpec spec_;
  Mat workspace_;
  Mat previous_;
};

// ---------------------------------------------------------------------------------------------
// Koopman static pregain

struct KoopmanModel
{
  Mat A;     ///< observable dynamics  y' = A y + B u
  Mat B;
  Mat G;     ///< static operator  u_bar = G z_s
  Mat lift;  ///< maps a workspace target into the observable space
  Mat K;     ///< LQR gain
  CareSolution care;
  bool open_loop_stable{false};
};

/**
 * @brief Least-squares fits of (A, B) from snapshots Y, derivatives Ydot and inputs U, and of G
 * from static pairs (z_s, u_bar).
 */
inline KoopmanModel koopman_fit(const Mat & y, const Mat & ydot, const Mat & u, const Mat & z_static,
                                const Mat & u_static)
{
  require(y.cols() == ydot.cols() && y.cols() == u.cols() && y.rows() == ydot.rows(), "koopman: snapshot shapes");
  require(z_static.cols() == u_static.cols() && u_static.rows() == u.rows(), "koopman: static pair shapes");
  require(z_static.cols() >= z_static.rows(), "koopman: need at least as many static pairs as workspace dimensions");
  const Eigen::JacobiSVD<Mat> usvd(u);
  const Vec sv = usvd.singularValues();
  if (sv.size() == 0 || !(sv.minCoeff() > 1e-10 * std::max(1.0, sv.maxCoeff())) || sv.size() < u.rows())
    throw Error(ErrorKind::rank_deficient, "koopman: input snapshots are rank deficient");

  KoopmanModel m;
  Mat feat(y.rows() + u.rows(), y.cols());
  feat << y, u;
  LeastSquaresOptions lo;
  lo.context = "koopman dynamics";
  const Mat ab = least_squares(feat, ydot, lo).coeffs;
  m.A = ab.leftCols(y.rows());
  m.B = ab.rightCols(u.rows());
  lo.context = "koopman static operator";
  m.G = least_squares(z_static, u_static, lo).coeffs;
  m.open_loop_stable = max_real_part(m.A) < 0;
  return m;
}

/// Computes the LQR pregain for costs (Q_k, R_k); throws when it does not stabilize (A, B).
inline void koopman_set_gain(KoopmanModel & m, const Mat & q, const Mat & r)
{
  m.care = solve_care(m.A, m.B, q, r);
  m.K = m.care.K;
}

struct PregainOutput
{
  Vec u;
  bool clipped{false};
};

/// u = -K (z - lift Gamma) + G Gamma, clipped to the input box.
inline PregainOutput koopman_pregain_control(const KoopmanModel & m, const Vec & z, const Vec & gamma,
                                             const Box & input_box)
{
  require(m.K.cols() == z.size(), "koopman control: gain not computed or observable dimension mismatch");
  const Vec goal = m.lift.size() ? Vec(m.lift * gamma) : gamma;
  const Vec raw = -m.K * (z - goal) + m.G * gamma;
  PregainOutput out;
  out.u = input_box.clamp(raw);
  out.clipped = (out.u - raw).cwiseAbs().maxCoeff() > 1e-12;
  return out;
}

/// Pregain feedback applied every substep through the common closed-loop driver.
class KoopmanController : public Controller
{
public:
  KoopmanController(KoopmanModel model, double substep, Box input_box)
    : m_(std::move(model)), h_(substep), box_(std::move(input_box))
  {
    require(h_ > 0, "koopman controller: substep must be positive");
  }

  std::string name() const override { return "koopman"; }
  double substep() const override { return h_; }
  Index apply_count() const override { return 1; }
  const KoopmanModel & model() const { return m_; }

  Plan plan(double t, const Vec & y_now, const TargetTrack & target) override
  {
    const PregainOutput o = koopman_pregain_control(m_, y_now, target(t), box_);
    Plan p;
    p.inputs = o.u;
    p.clipped = o.clipped;
    return p;
  }

private:
  KoopmanModel m_;
  double h_;
  Box box_;
};

}  // namespace assm
