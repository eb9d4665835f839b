#pragma once

// Independent reference computations shared by the unit tests and the acceptance checks. Each
// oracle recomputes its quantity from first principles instead of calling the code under test
// for the answer.

#include "assm/baselines.hpp"
#include "assm/dictionary.hpp"
#include "assm/dynamics.hpp"
#include "assm/mpc.hpp"
#include "assm/regression.hpp"

#include <random>

namespace oracle {

using assm::Index;
using assm::Mat;
using assm::Vec;

inline Mat random_matrix(Index rows, Index cols, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

// ---------------------------------------------------------------------------------------------
// Integrator order: final-time error of x'' = -x against cos/sin at step h and h/2.

inline double rk4_observed_order(double h = 0.05, double t_end = 2.0 * M_PI)
{
  const auto osc = assm::harmonic_oscillator();
  const Vec x0 = (Vec(2) << 1.0, 0.0).finished();
  const Vec exact = (Vec(2) << std::cos(t_end), -std::sin(t_end)).finished();
  const auto err = [&](double step) {
    const auto n = static_cast<Index>(std::llround(t_end / step));
    const double hh = t_end / static_cast<double>(n);
    Vec x = x0;
    for (Index k = 0; k < n; ++k) x = assm::rk4_step(osc, x, assm::constant_input(Vec::Zero(1)), k * hh, hh);
    return (x - exact).norm();
  };
  return std::log2(err(h) / err(0.5 * h));
}

// ---------------------------------------------------------------------------------------------
// Finite-difference Jacobian of a random linear system against its matrices.

inline double fd_linear_jacobian_error(std::uint64_t seed = 11)
{
  const Mat m = random_matrix(5, 5, seed);
  const Mat n = random_matrix(5, 2, seed + 1);
  const assm::LinearModel lin(m, n);
  const Vec x = random_matrix(5, 1, seed + 2);
  const Vec u = random_matrix(2, 1, seed + 3);
  const auto j = assm::linearize_at(lin, x, u);
  return std::max((j.a - m).cwiseAbs().maxCoeff(), (j.b - n).cwiseAbs().maxCoeff());
}

// ---------------------------------------------------------------------------------------------
// Least squares: relative normal-equation residual |(Y - C Phi) Phi^T| / (|Y| |Phi|).

inline double least_squares_normal_residual(std::uint64_t seed = 21)
{
  const Mat phi = random_matrix(9, 400, seed);
  const Mat y = random_matrix(3, 9, seed + 1) * phi + 0.1 * random_matrix(3, 400, seed + 2);
  const auto fit = assm::least_squares(phi, y);
  return ((y - fit.coeffs * phi) * phi.transpose()).norm() / (y.norm() * phi.norm());
}

// ---------------------------------------------------------------------------------------------
// Synthetic dictionary whose coefficients are a prescribed function of the grid coordinate.
//
// One-dimensional SSMs in a two-dimensional observable with n_w = n_r = 2 and two inputs. The
// critical manifold is the identity (y_s = u), so grid coordinates coincide with inputs.

using CoefficientField = std::function<Vec(const Vec &)>;

inline assm::ModelBundle synthetic_bundle(const Vec & q, const CoefficientField & field)
{
  assm::StaticSSMModel m(1, 2, 2);
  const Vec c = field(q);  // W(0,1), W(1,0), W(1,1), R, B, b_first
  m.anchor = q;
  m.static_input = q;
  m.V = (Mat(2, 1) << 1.0, 0.0).finished();
  m.W = (Mat(2, 2) << 1.0, c[0], c[1], c[2]).finished();
  m.R = (Mat(1, 2) << c[3], c[4]).finished();
  m.B = (Mat(1, 2) << c[5], c[6]).finished();
  assm::ModelBundle b;
  b.model = m;
  b.b_first = (Mat(1, 2) << c[7], c[8]).finished();
  return b;
}

inline std::shared_ptr<const assm::ASSMDictionary> synthetic_dictionary(const CoefficientField & field,
                                                                        assm::SamplerConfig sampler, int n = 4,
                                                                        double half = 1.0)
{
  std::vector<assm::DictionaryNode> nodes;
  const auto pts = assm::grid_points(assm::Box::uniform(2, -half, half), {n, n});
  for (std::size_t i = 0; i < pts.size(); ++i)
    nodes.push_back({"n" + std::to_string(i), pts[i], synthetic_bundle(pts[i], field), {}});
  Mat s(2, 3), inv(2, 3);
  s << 0, 1, 0, 0, 0, 1;
  inv = s;
  auto cm = assm::CriticalManifoldMap::from_coefficients(2, s, 1, inv, 1, Mat::Identity(2, 2), 0.0);
  return std::make_shared<const assm::ASSMDictionary>(std::move(nodes), std::move(cm), sampler);
}

/// A coefficient field that is an exact quadratic in q.
inline Vec quadratic_field(const Vec & q)
{
  Vec c(9);
  for (Index i = 0; i < 9; ++i) {
    const double k = static_cast<double>(i + 1);
    c[i] = 0.3 * k - 0.2 * q[0] + 0.1 * k * q[1] + 0.05 * k * q[0] * q[0] - 0.07 * q[0] * q[1] + 0.02 * k * q[1] * q[1];
  }
  c[3] = -1.0 - 0.1 * q[0] * q[0];  // keeps the reduced linear part stable
  return c;
}

inline Vec flatten_bundle(const assm::ModelBundle & b)
{
  Vec v(10);
  v << b.model.W(0, 1), b.model.W(1, 0), b.model.W(1, 1), b.model.R(0, 0), b.model.R(0, 1), b.model.B(0, 0),
    b.model.B(0, 1), b.b_first(0, 0), b.b_first(0, 1), b.model.anchor[0];
  return v;
}

/// Max deviation of QPR queries from the generating quadratic at random in-box points.
inline double qpr_quadratic_error(int probes = 50, std::uint64_t seed = 31)
{
  assm::SamplerConfig sc;
  sc.kind = assm::SamplerKind::qpr;
  sc.order = 2;
  const auto dict = synthetic_dictionary(quadratic_field, sc);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0;
  for (int k = 0; k < probes; ++k) {
    const Vec q = (Vec(2) << u(rng), u(rng)).finished();
    const Vec got = flatten_bundle(dict->query(q));
    const Vec want = flatten_bundle(synthetic_bundle(q, quadratic_field));
    worst = std::max(worst, (got - want).cwiseAbs().maxCoeff());
  }
  return worst;
}

struct MidwCheck
{
  double partition_error{0};  ///< max |sum of weights - 1| at random points
  double node_error{0};       ///< max deviation of node queries from the stored coefficients
};

inline MidwCheck midw_partition_and_nodes(int probes = 50, std::uint64_t seed = 41)
{
  assm::SamplerConfig sc;
  sc.kind = assm::SamplerKind::midw;
  const auto dict = synthetic_dictionary(quadratic_field, sc);
  MidwCheck c;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < probes; ++k) {
    const Vec q = (Vec(2) << u(rng), u(rng)).finished();
    const Vec w = dict->midw_weights(q);
    if (w.size() > 0) c.partition_error = std::max(c.partition_error, std::abs(w.sum() - 1.0));
  }
  for (const auto & n : dict->nodes())
    c.node_error = std::max(c.node_error, (flatten_bundle(dict->query(n.q)) - flatten_bundle(n.bundle)).cwiseAbs().maxCoeff());
  return c;
}

// ---------------------------------------------------------------------------------------------
// Continuous algebraic Riccati equation residual, computed directly from the returned P.

inline double care_relative_residual(std::uint64_t seed = 51)
{
  const Mat a = random_matrix(6, 6, seed);
  const Mat b = random_matrix(6, 2, seed + 1);
  const Mat q = Mat::Identity(6, 6);
  const Mat r = 0.5 * Mat::Identity(2, 2);
  const auto sol = assm::solve_care(a, b, q, r);
  const Mat p = sol.P;
  const Mat res = a.transpose() * p + p * a - p * b * r.inverse() * b.transpose() * p + q;
  return res.norm() / std::max(1.0, p.norm());
}

// ---------------------------------------------------------------------------------------------
// SCP on a linear prediction model against the finite-horizon discrete Riccati recursion.

class LinearPrediction : public assm::PredictionModel
{
public:
  LinearPrediction(Mat a, Mat b, Mat c) : a_(std::move(a)), b_(std::move(b)), c_(std::move(c)) {}
  Index state_dim() const override { return a_.rows(); }
  Index input_dim() const override { return b_.cols(); }
  Index output_dim() const override { return c_.rows(); }
  Vec step(const Vec & r, const Vec & u) const override { return a_ * r + b_ * u; }
  Vec output(const Vec & r) const override { return c_ * r; }
  void step_jacobians(const Vec &, const Vec &, Mat & a, Mat & b) const override
  {
    a = a_;
    b = b_;
  }
  Mat output_jacobian(const Vec &) const override { return c_; }

private:
  Mat a_, b_, c_;
};

/// Minimizer of sum_k dt [ |C x_{k+1} - t_k|_Q^2 + |o + u_k|_R^2 ] by backward Riccati recursion.
inline Mat riccati_tracking_inputs(const Mat & a, const Mat & b, const Mat & c, const Mat & q, const Mat & r,
                                   const Vec & offset, const Mat & target, const Vec & x0, double dt)
{
  const Index n = a.rows();
  const Index N = target.cols();
  std::vector<Mat> gains(static_cast<std::size_t>(N));
  std::vector<Vec> ffs(static_cast<std::size_t>(N));
  Mat p = Mat::Zero(n, n);
  Vec s = Vec::Zero(n);
  for (Index k = N - 1; k >= 0; --k) {
    const Mat pt = dt * c.transpose() * q * c + p;
    const Vec st = -dt * c.transpose() * q * target.col(k) + s;
    const Mat h = b.transpose() * pt * b + dt * r;
    const Eigen::LDLT<Mat> hl(h);
    const Mat kx = hl.solve(b.transpose() * pt * a);
    const Vec kf = hl.solve(b.transpose() * st + dt * r * offset);
    gains[static_cast<std::size_t>(k)] = kx;
    ffs[static_cast<std::size_t>(k)] = kf;
    p = a.transpose() * pt * a - a.transpose() * pt * b * kx;
    s = a.transpose() * st - a.transpose() * pt * b * kf;
  }
  Mat u(b.cols(), N);
  Vec x = x0;
  for (Index k = 0; k < N; ++k) {
    u.col(k) = -gains[static_cast<std::size_t>(k)] * x - ffs[static_cast<std::size_t>(k)];
    x = a * x + b * u.col(k);
  }
  return u;
}

struct ScpRiccatiCheck
{
  double input_error{0};
  int iterations{0};
};

inline ScpRiccatiCheck scp_vs_riccati(std::uint64_t seed = 61)
{
  const double dt = 0.02;
  const Mat ac = (Mat(4, 4) << 0, 1, 0, 0, -2, -0.5, 0.3, 0, 0, 0, 0, 1, 0.2, 0, -3, -0.4).finished();
  const Mat a = (Mat::Identity(4, 4) + dt * ac + 0.5 * dt * dt * ac * ac);
  const Mat b = dt * random_matrix(4, 2, seed);
  const Mat c = (Mat(2, 4) << 1, 0, 0, 0, 0, 0, 1, 0).finished();
  LinearPrediction model(a, b, c);

  assm::OCPSpec spec;
  spec.horizon = 0.2;
  spec.substeps = 10;
  spec.Q = 100.0 * Mat::Identity(2, 2);
  spec.R = 0.1 * Mat::Identity(2, 2);
  spec.input_box = assm::Box::uniform(2, -1e6, 1e6);
  spec.scp.trust_region = 1e6;
  spec.scp.max_trust_region = 1e8;

  assm::OCPProblem prob;
  prob.model = &model;
  prob.r0 = random_matrix(4, 1, seed + 1);
  prob.input_offset = (Vec(2) << 0.3, -0.2).finished();
  prob.target = 0.5 * random_matrix(2, spec.substeps, seed + 2);
  prob.dt = spec.substep();

  const auto sol = assm::solve_ocp_scp(spec, prob);
  const Mat ref = riccati_tracking_inputs(a, b, c, spec.Q, spec.R, prob.input_offset, prob.target, prob.r0, prob.dt);
  return {(sol.inputs - ref).cwiseAbs().maxCoeff(), sol.iterations};
}

// ---------------------------------------------------------------------------------------------
// Mechanical energy along unforced runs: largest per-step relative increase.

inline double max_relative_energy_increase(const assm::DynamicsModel & model, const Vec & x0, double duration,
                                           double dt = 1e-3)
{
  const auto traj =
    assm::integrate_ode(model, x0, assm::constant_input(Vec::Zero(model.input_dim())), 0.0, duration, {dt, 1});
  double worst = -std::numeric_limits<double>::infinity();
  double prev = *model.energy(traj.values.col(0));
  const double scale = std::max(std::abs(prev), 1e-12);
  for (Index k = 1; k < traj.size(); ++k) {
    const double e = *model.energy(traj.values.col(k));
    worst = std::max(worst, (e - prev) / scale);
    prev = e;
  }
  return worst;
}

}  // namespace oracle
