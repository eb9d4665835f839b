#pragma once

/**
 * @file
 * @brief Static spectral-submanifold models: tangent space, polynomial parametrization, polynomial
 * reduced dynamics, control calibration, orientation alignment and reduced simulation.
 */

#include "core.hpp"
#include "embedding.hpp"
#include "regression.hpp"
#include "trajectory.hpp"

#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace assm {

/**
 * @brief One SSM fitted about a fixed static input.
 *
 * Reduced coordinates are r = V^T (y - anchor); the lift is y = W phi_w(r) + anchor and the
 * reduced dynamics are r' = R phi_r(r) + B (u - static_input).
 */
class StaticSSMModel
{
public:
  Vec anchor;
  Vec static_input;
  Mat V;
  Mat W;
  Mat R;
  Mat B;

  StaticSSMModel() = default;
  StaticSSMModel(Index d, int n_w, int n_r) { set_orders(d, n_w, n_r); }

  void set_orders(Index d, int n_w, int n_r)
  {
    require(d >= 1 && n_w >= 1 && n_r >= 1, "ssm: d, n_w and n_r must be >= 1");
    d_ = d;
    n_w_ = n_w;
    n_r_ = n_r;
    wb_ = MonomialBasis::orders_1_to(d, n_w);
    rb_ = MonomialBasis::orders_1_to(d, n_r);
  }

  Index d() const { return d_; }
  int n_w() const { return n_w_; }
  int n_r() const { return n_r_; }
  Index embedded_dim() const { return V.rows(); }
  Index input_dim() const { return B.cols(); }
  const MonomialBasis & w_basis() const { return wb_; }
  const MonomialBasis & r_basis() const { return rb_; }

  Vec reduce(const Vec & y) const { return V.transpose() * (y - anchor); }
  Vec lift(const Vec & r) const { return W * wb_.evaluate(r) + anchor; }
  /// Lift without the anchor, i.e. the centered observable.
  Vec lift_centered(const Vec & r) const { return W * wb_.evaluate(r); }
  Vec autonomous_field(const Vec & r) const { return R * rb_.evaluate(r); }
  Vec vector_field(const Vec & r, const Vec & u_dev) const { return autonomous_field(r) + B * u_dev; }
  Mat linear_part() const { return R.leftCols(d_); }

  void validate() const
  {
    require(d_ >= 1, "ssm: orders not set");
    require(V.cols() == d_ && W.rows() == V.rows() && W.cols() == wb_.size(), "ssm: W shape mismatch");
    require(R.rows() == d_ && R.cols() == rb_.size(), "ssm: R shape mismatch");
    require(anchor.size() == V.rows(), "ssm: anchor size mismatch");
    require(B.rows() == d_ || B.size() == 0, "ssm: B shape mismatch");
    require(B.size() == 0 || static_input.size() == B.cols(), "ssm: static input size mismatch");
  }

private:
  Index d_{0};
  int n_w_{0};
  int n_r_{0};
  MonomialBasis wb_;
  MonomialBasis rb_;
};

// ---------------------------------------------------------------------------------------------

struct TangentFit
{
  Mat V;
  Vec singular_values;
  double residual_energy{0};  ///< fraction of squared singular values beyond d
};

inline TangentFit fit_tangent_space(const Mat & snapshots, Index d)
{
  require(d >= 1 && d <= snapshots.rows(), "tangent space: d out of range");
  require(snapshots.cols() >= 1 && snapshots.allFinite(), "tangent space: empty or non-finite data");
  Eigen::BDCSVD<Mat> svd(snapshots, Eigen::ComputeThinU);
  TangentFit out;
  out.singular_values = svd.singularValues();
  const Vec & s = out.singular_values;
  if (s.size() < d || !(s[d - 1] > 1e-12 * std::max(1.0, s[0])))
    throw Error(ErrorKind::rank_deficient, "tangent space: snapshot rank below d = " + std::to_string(d));
  out.V = svd.matrixU().leftCols(d);
  const double total = s.squaredNorm();
  out.residual_energy = total > 0 ? s.tail(s.size() - d).squaredNorm() / total : 0.0;
  return out;
}

struct ParametrizationFit
{
  Mat W;
  double train_error{0};  ///< mean |y - W phi(V^T y)| / max |y|
  LeastSquaresFit ls;
};

inline ParametrizationFit fit_parametrization(const Mat & snapshots, const Mat & V, int n_w, double ridge = 0.0)
{
  const auto basis = MonomialBasis::orders_1_to(V.cols(), n_w);
  require(snapshots.cols() >= 3 * basis.size(), "parametrization: need at least 3 m_{n_w} samples");
  const Mat phi = basis.evaluate_columns(V.transpose() * snapshots);
  ParametrizationFit out;
  out.ls = least_squares(phi, snapshots, {1e10, ridge, "parametrization W"});
  out.W = out.ls.coeffs;
  const double peak = snapshots.colwise().norm().maxCoeff();
  out.train_error = peak > 0 ? (snapshots - out.W * phi).colwise().norm().mean() / peak : 0.0;
  return out;
}

struct DynamicsFitOptions
{
  bool require_stable{true};
  double ridge{0.0};
};

struct DynamicsFit
{
  Mat R;
  Eigen::VectorXcd eigenvalues;
  LeastSquaresFit ls;
};

/// Least squares of r' = V^T y' on monomials of r over centered decays.
inline DynamicsFit fit_reduced_dynamics(const std::vector<const Trajectory *> & decays, const Mat & V, int n_r,
                                        const DynamicsFitOptions & opt = {})
{
  require(!decays.empty(), "reduced dynamics: no trajectories");
  const auto basis = MonomialBasis::orders_1_to(V.cols(), n_r);
  Index cols = 0;
  for (const auto * t : decays) cols += t->size();
  Mat phi(basis.size(), cols);
  Mat rdot(V.cols(), cols);
  Index c = 0;
  for (const auto * t : decays) {
    const Trajectory deriv = finite_difference(*t);
    phi.middleCols(c, t->size()) = basis.evaluate_columns(V.transpose() * t->values);
    rdot.middleCols(c, t->size()) = V.transpose() * deriv.values;
    c += t->size();
  }
  require(cols >= 3 * basis.size(), "reduced dynamics: need at least 3 m_{n_r} samples");
  DynamicsFit out;
  out.ls = least_squares(phi, rdot, {1e10, opt.ridge, "reduced dynamics R"});
  out.R = out.ls.coeffs;
  out.eigenvalues = sorted_eigenvalues(out.R.leftCols(V.cols()));
  if (opt.require_stable && out.eigenvalues[0].real() >= 0)
    throw Error(ErrorKind::stability_violation,
                "reduced dynamics: linear part has eigenvalue with real part " +
                  std::to_string(out.eigenvalues[0].real()) + " >= 0");
  return out;
}

inline DynamicsFit fit_reduced_dynamics(const std::vector<Trajectory> & decays, const Mat & V, int n_r,
                                        const DynamicsFitOptions & opt = {})
{
  std::vector<const Trajectory *> ptrs;
  for (const auto & t : decays) ptrs.push_back(&t);
  return fit_reduced_dynamics(ptrs, V, n_r, opt);
}

enum class InputMode { deviation, absolute };

struct ControlFit
{
  Mat B;
  double residual{0};           ///< |T - B U|_F
  double relative_residual{0};  ///< residual / |T|_F
  LeastSquaresFit ls;
};

/**
 * @brief B = argmin |V^T Y' - R phi(V^T Y) - B U|_F with V and R held fixed.
 *
 * `controlled` are centered trajectories carrying absolute inputs; in deviation mode the
 * regressor is u - u_s.
 */
inline ControlFit calibrate_control_matrix(const Mat & V, const Mat & R, int n_r, const Vec & u_s,
                                           const std::vector<Trajectory> & controlled, InputMode mode)
{
  require(!controlled.empty(), "control calibration: no controlled trajectories");
  const auto basis = MonomialBasis::orders_1_to(V.cols(), n_r);
  Index cols = 0;
  for (const auto & t : controlled) {
    require(t.has_inputs() && t.inputs.cols() == t.size(), "control calibration: inputs not aligned");
    cols += t.size();
  }
  const Index n_u = controlled.front().inputs.rows();
  require(mode == InputMode::absolute || u_s.size() == n_u, "control calibration: static input size");
  Mat target(V.cols(), cols);
  Mat u(n_u, cols);
  Index c = 0;
  for (const auto & t : controlled) {
    const Mat r = V.transpose() * t.values;
    target.middleCols(c, t.size()) = V.transpose() * finite_difference(t).values - R * basis.evaluate_columns(r);
    u.middleCols(c, t.size()) = mode == InputMode::deviation ? Mat(t.inputs.colwise() - u_s) : t.inputs;
    c += t.size();
  }

  Eigen::JacobiSVD<Mat> svd(u, Eigen::ComputeFullU);
  const Vec sv = svd.singularValues();
  const double tol = 1e-10 * std::max(1.0, sv.size() ? sv[0] : 0.0) * std::sqrt(static_cast<double>(cols));
  std::string null_dirs;
  for (Index i = 0; i < n_u; ++i) {
    if (i < sv.size() && sv[i] > tol) continue;
    std::ostringstream os;
    os << " [" << svd.matrixU().col(i).transpose() << "]";
    null_dirs += os.str();
  }
  if (!null_dirs.empty())
    throw Error(ErrorKind::unidentifiable, "control calibration: input matrix rank below n_u; null directions" +
                                             null_dirs);

  ControlFit out;
  out.ls = least_squares(u, target, {1e10, 0.0, "control matrix B"});
  out.B = out.ls.coeffs;
  out.residual = out.ls.residual_norm;
  const double tn = target.norm();
  out.relative_residual = tn > 0 ? out.residual / tn : 0.0;
  return out;
}

inline ControlFit calibrate_control_matrix(const StaticSSMModel & model, const std::vector<Trajectory> & controlled,
                                           InputMode mode)
{
  return calibrate_control_matrix(model.V, model.R, model.n_r(), model.static_input, controlled, mode);
}

// ---------------------------------------------------------------------------------------------
// Reduced simulation

using ReducedField = std::function<Vec(double, const Vec &)>;

/// RK4 on r' = field(t, r) sampled every dt on [t0, t1]; throws when |r| leaves the blow-up bound.
inline Trajectory integrate_reduced(const ReducedField & field, const Vec & r0, double t0, double t1, double dt,
                                    std::optional<double> bound = std::nullopt)
{
  require(dt > 0 && t1 >= t0, "reduced simulation: invalid span");
  require(r0.allFinite(), "reduced simulation: r0 must be finite");
  const double limit = bound.value_or(1e3 * r0.norm() + 1.0);
  const auto steps = static_cast<Index>(std::llround((t1 - t0) / dt));
  Trajectory out;
  out.times.resize(steps + 1);
  out.values.resize(r0.size(), steps + 1);
  Vec r = r0;
  for (Index k = 0; k <= steps; ++k) {
    const double t = t0 + static_cast<double>(k) * dt;
    out.times[k] = t;
    out.values.col(k) = r;
    if (k == steps) break;
    const Vec k1 = field(t, r);
    const Vec k2 = field(t + 0.5 * dt, r + 0.5 * dt * k1);
    const Vec k3 = field(t + 0.5 * dt, r + 0.5 * dt * k2);
    const Vec k4 = field(t + dt, r + dt * k3);
    r += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!r.allFinite() || r.norm() > limit)
      throw Error(ErrorKind::model_domain_exceeded,
                  "reduced state left its domain at t = " + std::to_string(t + dt) + " (|r| > " +
                    std::to_string(limit) + ")");
  }
  return out;
}

struct ReducedSimulation
{
  Trajectory reduced;
  Trajectory lifted;
};

/// `bound` overrides the default blow-up limit 1e3 |r0| + 1.
inline ReducedSimulation simulate_reduced(const StaticSSMModel & model, const Vec & r0, const InputSignal & deviation,
                                          double t0, double t1, double dt, std::optional<double> bound = std::nullopt)
{
  model.validate();
  ReducedSimulation out;
  out.reduced = integrate_reduced(
    [&](double t, const Vec & r) {
      if (model.B.size() == 0 || !deviation) return model.autonomous_field(r);
      return model.vector_field(r, deviation(t));
    },
    r0, t0, t1, dt, bound);
  out.lifted.times = out.reduced.times;
  out.lifted.values.resize(model.embedded_dim(), out.reduced.size());
  for (Index k = 0; k < out.reduced.size(); ++k) out.lifted.values.col(k) = model.lift(out.reduced.values.col(k));
  out.lifted.label = TrajectoryLabel::derived;
  return out;
}

// ---------------------------------------------------------------------------------------------
// Orientation alignment

struct AlignmentWarning
{
  std::size_t model{0};
  Index column{0};
  double inner_product{0};
};

/// Applies r_i -> s_i r_i to every coefficient set of `m`.
inline void apply_orientation(StaticSSMModel & m, const Vec & signs)
{
  m.V = m.V * signs.asDiagonal();
  m.W = m.W * m.w_basis().sign_pushforward(signs).asDiagonal();
  m.R = signs.asDiagonal() * m.R * m.r_basis().sign_pushforward(signs).asDiagonal();
  if (m.B.size() > 0) m.B = signs.asDiagonal() * m.B;
}

struct AlignmentResult
{
  std::vector<StaticSSMModel> models;
  std::vector<Vec> signs;
  std::vector<AlignmentWarning> warnings;
};

inline AlignmentResult align_orientations(std::vector<StaticSSMModel> models, std::size_t reference)
{
  require(reference < models.size(), "alignment: reference index out of range");
  const Mat ref = models[reference].V;
  AlignmentResult out;
  for (std::size_t i = 0; i < models.size(); ++i) {
    auto & m = models[i];
    require(m.d() == models[reference].d() && m.embedded_dim() == ref.rows(),
            "alignment: models differ in d or embedded dimension");
    Vec s = Vec::Ones(m.d());
    for (Index j = 0; j < m.d(); ++j) {
      const double ip = m.V.col(j).dot(ref.col(j));
      if (std::abs(ip) < 0.1) out.warnings.push_back({i, j, ip});
      if (ip < 0) s[j] = -1.0;
    }
    apply_orientation(m, s);
    out.signs.push_back(s);
  }
  out.models = std::move(models);
  return out;
}

// ---------------------------------------------------------------------------------------------
// Fitting a full static model from one snapshot group

struct StaticFitSpec
{
  Index d{2};
  int n_w{3};
  int n_r{3};
  InputMode input_mode{InputMode::deviation};
  double ridge{0.0};
  bool require_stable{true};
  /// Orthonormal p x d chart used at every node instead of the snapshot SVD basis. Useful when
  /// d equals the embedding dimension, where the SVD basis is only defined up to a rotation.
  Mat fixed_chart;
};

struct StaticFitReport
{
  Vec singular_values;
  double residual_energy{0};
  double train_reconstruction_error{0};
  double test_nmte{0};
  std::vector<double> test_nmte_per_trajectory;
  Eigen::VectorXcd eigenvalues;
  double tangency_error{0};           ///< |W_lin - V|_max
  double chart_consistency_error{0};  ///< |V^T W_lin - I|_max
  double normal_residual_w{0};
  double normal_residual_r{0};
  double normal_residual_b{0};
  double control_relative_residual{0};
};

struct StaticFit
{
  StaticSSMModel model;
  StaticFitReport report;
};

/// Mean test NMTE of the autonomous reduced model on centered trajectories.
inline std::vector<double> self_prediction_nmte(const StaticSSMModel & model, const std::vector<const Trajectory *> & tests)
{
  std::vector<double> out;
  for (const auto * t : tests) {
    StaticSSMModel centered = model;
    centered.anchor.setZero();
    const Vec r0 = centered.reduce(t->values.col(0));
    const auto sim = simulate_reduced(centered, r0, nullptr, t->times[0], t->times[t->size() - 1], t->dt());
    const Index n = std::min(sim.lifted.size(), t->size());
    out.push_back(trajectory_nmte(sim.lifted.values.leftCols(n), t->values.leftCols(n)));
  }
  return out;
}

inline StaticFit fit_static_model(const SnapshotGroup & group, const StaticFitSpec & spec)
{
  const std::string who = "group '" + group.name + "'";
  try {
    StaticFit out;
    out.model.set_orders(spec.d, spec.n_w, spec.n_r);
    out.model.anchor = group.anchor;
    out.model.static_input = group.static_input;

    const Mat y = group.train_snapshots();
    TangentFit tan = fit_tangent_space(y, spec.d);
    if (spec.fixed_chart.size() > 0) {
      require(spec.fixed_chart.rows() == y.rows() && spec.fixed_chart.cols() == spec.d, "static fit: fixed chart shape");
      tan.V = spec.fixed_chart;
    }
    out.model.V = tan.V;
    out.report.singular_values = tan.singular_values;
    out.report.residual_energy = tan.residual_energy;

    const ParametrizationFit pw = fit_parametrization(y, tan.V, spec.n_w, spec.ridge);
    out.model.W = pw.W;
    out.report.train_reconstruction_error = pw.train_error;
    out.report.normal_residual_w = pw.ls.normal_residual;

    const DynamicsFit dyn = fit_reduced_dynamics(group.split(true), tan.V, spec.n_r, {spec.require_stable, spec.ridge});
    out.model.R = dyn.R;
    out.report.eigenvalues = dyn.eigenvalues;
    out.report.normal_residual_r = dyn.ls.normal_residual;

    const Mat w_lin = out.model.W.leftCols(spec.d);
    out.report.tangency_error = (w_lin - tan.V).cwiseAbs().maxCoeff();
    out.report.chart_consistency_error =
      (tan.V.transpose() * w_lin - Mat::Identity(spec.d, spec.d)).cwiseAbs().maxCoeff();

    if (!group.controlled.empty()) {
      const ControlFit cf = calibrate_control_matrix(out.model, group.controlled, spec.input_mode);
      out.model.B = cf.B;
      out.report.normal_residual_b = cf.ls.normal_residual;
      out.report.control_relative_residual = cf.relative_residual;
    }

    const auto tests = group.split(false);
    out.report.test_nmte_per_trajectory = self_prediction_nmte(out.model, tests);
    double s = 0;
    for (double v : out.report.test_nmte_per_trajectory) s += v;
    out.report.test_nmte = tests.empty() ? 0.0 : s / static_cast<double>(tests.size());
    return out;
  } catch (const Error & e) {
    throw Error(e.kind(), who + ": " + e.what());
  }
}

struct OrderSweepEntry
{
  int n_w{0};
  int n_r{0};
  double test_nmte{0};
  std::string error;
};

/// Fits every (n_w, n_r) pair and reports the test NMTE (or the failure) of each.
inline std::vector<OrderSweepEntry> sweep_orders(const SnapshotGroup & group, Index d, const std::vector<int> & orders)
{
  std::vector<OrderSweepEntry> out;
  for (int nw : orders) {
    for (int nr : orders) {
      OrderSweepEntry e{nw, nr, 0.0, {}};
      try {
        e.test_nmte = fit_static_model(group, {d, nw, nr, InputMode::deviation, 0.0, true}).report.test_nmte;
      } catch (const Error & err) {
        e.error = err.what();
        e.test_nmte = std::numeric_limits<double>::infinity();
      }
      out.push_back(e);
    }
  }
  return out;
}

}  // namespace assm
