#include "oracles.hpp"

#include "assm/collect.hpp"
#include "assm/embedding.hpp"
#include "assm/io.hpp"
#include "assm/openloop.hpp"
#include "assm/signals.hpp"
#include "assm/ssm.hpp"

#include <gtest/gtest.h>

using namespace assm;

namespace {

Trajectory series(const Vec & times, const Mat & values)
{
  Trajectory t;
  t.times = times;
  t.values = values;
  return t;
}

Vec linspace_times(Index n, double dt)
{
  Vec t(n);
  for (Index k = 0; k < n; ++k) t[k] = static_cast<double>(k) * dt;
  return t;
}

fs::path scratch_dir(const std::string & name)
{
  const fs::path p = fs::temp_directory_path() / ("assm_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// dynamics

TEST(Integrator, Rk4ConvergesAtFourthOrder) { EXPECT_NEAR(oracle::rk4_observed_order(), 4.0, 0.1); }

TEST(Integrator, OscillatorReturnsAfterOnePeriod)
{
  const auto osc = harmonic_oscillator();
  const auto t = integrate_ode(osc, (Vec(2) << 1.0, 0.0).finished(), constant_input(Vec::Zero(1)), 0.0,
                               2.0 * M_PI, {2.0 * M_PI / 6283.0, 1});
  EXPECT_NEAR(t.values(0, t.size() - 1), 1.0, 1e-6);
  EXPECT_NEAR(t.values(1, t.size() - 1), 0.0, 1e-6);
}

TEST(Integrator, PendulumRestStateStaysPut)
{
  const DoublePendulumModel p;
  const auto t = integrate_ode(p, Vec::Zero(4), constant_input(Vec::Zero(2)), 0.0, 10.0, {1e-3, 100});
  EXPECT_LE(t.values.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Integrator, PendulumDecayDissipatesEnergy)
{
  const DoublePendulumModel p;
  const Vec x0 = (Vec(4) << 0.2, -0.2, 0.0, 0.0).finished();
  const auto t = integrate_ode(p, x0, constant_input(Vec::Zero(2)), 0.0, 100.0, {1e-3, 1000});
  EXPECT_LT(t.values.col(t.size() - 1).norm(), 1e-6);
  EXPECT_LE(oracle::max_relative_energy_increase(p, x0, 20.0), 1e-8);
}

TEST(Equilibrium, GravityBalanceHasSmallResidual)
{
  const DoublePendulumModel p;
  Vec x = Vec::Zero(4);
  x.head(2) << M_PI / 18, -M_PI / 18;
  const Vec u = find_static_input(p, x);
  const Vec xs = find_equilibrium(p, u, Vec::Zero(4));
  EXPECT_LE(p.rhs(xs, u).norm(), 1e-10);
  EXPECT_NEAR((xs - x).norm(), 0.0, 1e-8);
  EXPECT_LE(find_equilibrium(p, Vec::Zero(2), Vec::Zero(4)).norm(), 1e-12);
}

TEST(Equilibrium, InputOutsideBoxIsRejected)
{
  const DoublePendulumModel p;
  try {
    find_equilibrium(p, Vec::Constant(2, 1e3), Vec::Zero(4));
    FAIL() << "expected an error";
  } catch (const Error & e) {
    EXPECT_EQ(e.kind(), ErrorKind::precondition);
  }
}

TEST(Linearization, LinearModelIsReproduced) { EXPECT_LE(oracle::fd_linear_jacobian_error(), 1e-6); }

TEST(Linearization, PendulumGridIsStableWithSpectralSplitting)
{
  const DoublePendulumModel p;
  const auto cfgs = grid_points(Box::uniform(2, -M_PI / 9, M_PI / 9), {6, 6});
  for (const auto & q : cfgs) {
    Vec x = Vec::Zero(4);
    x.head(2) = q;
    const auto lin = linearize_at(p, x, find_static_input(p, x));
    EXPECT_LT(lin.eigen[0].real(), 0.0);
    EXPECT_LT(lin.eigen[2].real(), lin.eigen[1].real());
  }
}

// ---------------------------------------------------------------------------------------------
// signals

TEST(Signals, PerlinTargetIsBoundedAndDeterministic)
{
  const Box box = Box::uniform(2, -M_PI / 9, M_PI / 9);
  const auto a = generate_perlin_target(7, 50.0, 0.01, box, 6);
  const auto b = generate_perlin_target(7, 50.0, 0.01, box, 6);
  for (Index k = 0; k < a.size(); ++k) EXPECT_TRUE(box.contains(a.points.col(k), 1e-15));
  EXPECT_EQ(hash_matrix(a.points), hash_matrix(b.points));
}

TEST(Signals, PerlinSupersamplingIsSmooth)
{
  const Box box = Box::uniform(2, -M_PI / 9, M_PI / 9);
  const auto coarse = generate_perlin_target(7, 50.0, 0.01, box, 6);
  const auto fine = generate_perlin_target(7, 50.0, 0.005, box, 6);
  double worst = 0;
  for (Index k = 0; k < fine.size(); ++k)
    worst = std::max(worst, (fine.points.col(k) - coarse(fine.times[k])).norm());
  EXPECT_LE(worst, 1e-3);
}

TEST(Signals, LorenzAmplitudeAndDecorrelation)
{
  EXPECT_EQ(generate_lorenz_deviation(1, 10.0, 0.01, 0.0).values.cwiseAbs().maxCoeff(), 0.0);
  const auto a = generate_lorenz_deviation(1, 200.0, 0.01, 1.2);
  EXPECT_NEAR(a.values.cwiseAbs().maxCoeff(), 1.2, 1e-12);
  const auto b = generate_lorenz_deviation(2, 200.0, 0.01, 1.2);
  const Vec x = a.values.row(0).transpose().array() - a.values.mean();
  const Vec y = b.values.row(0).transpose().array() - b.values.mean();
  EXPECT_LT(std::abs(x.dot(y)) / (x.norm() * y.norm()), 0.5);
}

TEST(Signals, LatinHypercubeStratifies)
{
  const auto pts = sample_lhs(3, 4, Box::uniform(2, 0.0, 1.0));
  for (Index dim = 0; dim < 2; ++dim) {
    std::vector<int> bins(4, 0);
    for (const auto & p : pts) ++bins[static_cast<std::size_t>(std::min(3, static_cast<int>(p[dim] * 4)))];
    for (int b : bins) EXPECT_EQ(b, 1);
  }
  const DoublePendulumModel p;
  for (const auto & u : sample_lhs(5, 100, p.input_box())) EXPECT_TRUE(p.input_box().contains(u));
}

// ---------------------------------------------------------------------------------------------
// embedding

TEST(Embedding, DelayStacksLaggedCopies)
{
  const auto t = series(linspace_times(4, 0.1), (Mat(1, 4) << 1, 2, 3, 4).finished());
  const auto e = delay_embed(t, {2, 0.1});
  ASSERT_EQ(e.size(), 3);
  EXPECT_EQ(e.values, (Mat(2, 3) << 1, 2, 3, 2, 3, 4).finished());
  EXPECT_EQ(delay_embed(t, {1, 0.0}).values, t.values);
  const auto w = series(linspace_times(50, 0.01), oracle::random_matrix(2, 50, 3));
  const auto e4 = delay_embed(w, {4, 0.01});
  EXPECT_EQ(e4.dim(), 8);
  EXPECT_EQ(e4.size(), 47);
}

TEST(Embedding, FiniteDifferencesArePolynomialExact)
{
  const Vec t = linspace_times(200, 0.01);
  const auto d = finite_difference(series(t, t.array().square().matrix().transpose()));
  for (Index k = 2; k < 198; ++k) EXPECT_NEAR(d.values(0, k), 2.0 * t[k], 1e-8);
  const Vec ts = linspace_times(5000, 1e-3);
  const auto ds = finite_difference(series(ts, ts.array().sin().matrix().transpose()));
  for (Index k = 2; k < 4998; ++k) EXPECT_NEAR(ds.values(0, k), std::cos(ts[k]), 1e-10);
  const auto dc = finite_difference(series(ts, Mat::Constant(1, 5000, 3.0)));
  EXPECT_EQ(dc.values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Embedding, NmteClosedForms)
{
  Mat truth = Mat::Zero(2, 10);
  truth.row(0).setConstant(2.0);
  Mat pred = truth;
  EXPECT_EQ(trajectory_nmte(pred, truth), 0.0);
  pred.row(0).array() += 0.1;
  EXPECT_NEAR(trajectory_nmte(pred, truth), 0.05, 1e-15);
  Mat pred2 = truth;
  pred2.row(0).array() += 0.4;
  EXPECT_NEAR(nmte(std::vector<Mat>{pred, pred2}, std::vector<Mat>{truth, truth}), 0.5 * (0.05 + 0.2), 1e-15);
}

// ---------------------------------------------------------------------------------------------
// regression and static SSM fits

TEST(Regression, MonomialCounts)
{
  const auto b2 = MonomialBasis::orders_1_to(2, 2);
  EXPECT_EQ(b2.size(), 5);
  EXPECT_EQ(b2.evaluate((Vec(2) << 2.0, 3.0).finished()), (Vec(5) << 2, 3, 4, 6, 9).finished());
  EXPECT_EQ(MonomialBasis::orders_1_to(2, 3).size(), 9);
  EXPECT_EQ(MonomialBasis::orders_1_to(2, 3).evaluate(Vec::Zero(2)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Regression, NormalEquationsHold) { EXPECT_LE(oracle::least_squares_normal_residual(), 1e-8); }

TEST(StaticFit, TangentSpaceOfPlaneData)
{
  Mat y = Mat::Zero(5, 40);
  y.topRows(2) = oracle::random_matrix(2, 40, 5);
  const auto fit = fit_tangent_space(y, 2);
  // principal angles via the singular values of E^T V
  const Eigen::JacobiSVD<Mat> svd(fit.V.topRows(2));
  EXPECT_NEAR(svd.singularValues().minCoeff(), 1.0, 1e-10);
  EXPECT_LE((fit.V.transpose() * fit.V - Mat::Identity(2, 2)).norm(), 1e-12);
}

TEST(StaticFit, ParametrizationRecoversQuadraticGraph)
{
  const Vec r = oracle::random_matrix(1, 60, 6).transpose();
  Mat y(2, 60);
  y.row(0) = r.transpose();
  y.row(1) = 0.7 * r.array().square().matrix().transpose();
  const auto fit = fit_parametrization(y, (Mat(2, 1) << 1.0, 0.0).finished(), 2);
  EXPECT_NEAR(fit.W(1, 1), 0.7, 1e-8);
  EXPECT_NEAR(fit.W(0, 0), 1.0, 1e-8);
  EXPECT_LE(std::abs(fit.W(0, 1)) + std::abs(fit.W(1, 0)), 1e-8);
}

TEST(StaticFit, ReducedDynamicsOfLinearDecay)
{
  std::vector<Trajectory> decays;
  const Vec t = linspace_times(1001, 0.005);
  for (int k = 0; k < 3; ++k) {
    const Vec r0 = oracle::random_matrix(2, 1, 70 + k);
    Mat v(3, t.size());
    for (Index i = 0; i < t.size(); ++i) {
      const Vec r = (Vec(2) << r0[0] * std::exp(-t[i]), r0[1] * std::exp(-2.0 * t[i])).finished();
      v.col(i) << r[0], r[1], 0.0;
    }
    decays.push_back(series(t, v));
  }
  const Mat V = Mat::Identity(3, 2);
  const auto fit = fit_reduced_dynamics(decays, V, 1);
  EXPECT_LE((fit.R - (Mat(2, 2) << -1, 0, 0, -2).finished()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(StaticFit, AlignmentUndoesSignFlips)
{
  StaticSSMModel m(2, 2, 2);
  m.V = Mat::Identity(3, 2);
  m.W = oracle::random_matrix(3, 5, 8);
  m.W.leftCols(2) = m.V;
  m.R = oracle::random_matrix(2, 5, 9);
  m.R.leftCols(2) = -Mat::Identity(2, 2);
  m.B = oracle::random_matrix(2, 1, 10);
  m.anchor = Vec::Zero(3);
  m.static_input = Vec::Zero(1);
  StaticSSMModel flipped = m;
  apply_orientation(flipped, (Vec(2) << -1.0, 1.0).finished());
  const auto aligned = align_orientations({m, flipped}, 0);
  EXPECT_LE((aligned.models[1].V - m.V).norm(), 1e-12);
  EXPECT_LE((aligned.models[1].W - m.W).norm(), 1e-12);
  EXPECT_LE((aligned.models[1].R - m.R).norm(), 1e-12);
}

// ---------------------------------------------------------------------------------------------
// dictionary samplers and critical manifold

TEST(Dictionary, QprReproducesRealizableQuadratic) { EXPECT_LE(oracle::qpr_quadratic_error(), 1e-8); }

TEST(Dictionary, MidwPartitionOfUnityAndNodeExactness)
{
  const auto c = oracle::midw_partition_and_nodes();
  EXPECT_LE(c.partition_error, 1e-12);
  EXPECT_EQ(c.node_error, 0.0);
}

TEST(Dictionary, MidwMidpointIsTheMeanOfTwoNodes)
{
  SamplerConfig sc;
  sc.kind = SamplerKind::midw;
  sc.radius = 0.5;  // 2x2 grid spacing is 2, so only two nodes lie in the ball
  const auto dict = oracle::synthetic_dictionary(oracle::quadratic_field, sc, 2, 1.0);
  const Vec a = dict->nodes()[0].q, b = dict->nodes()[1].q;
  const Vec mid = 0.5 * (a + b);
  sc.radius = 1.2;
  const auto wide = oracle::synthetic_dictionary(oracle::quadratic_field, sc, 2, 1.0);
  const Vec want = 0.5 * (oracle::flatten_bundle(wide->nodes()[0].bundle) + oracle::flatten_bundle(wide->nodes()[1].bundle));
  EXPECT_LE((oracle::flatten_bundle(wide->query(mid)) - want).cwiseAbs().maxCoeff(), 1e-12);
  const auto far = dict->query(mid);
  EXPECT_TRUE(far.extrapolated);
}

TEST(Dictionary, ConstantCoefficientsGiveConstantQueries)
{
  const auto constant = [](const Vec &) {
    Vec c(9);
    c << 0.1, 0.2, 0.3, -1.0, 0.4, 0.5, 0.6, 0.7, 0.8;
    return c;
  };
  const auto dict = oracle::synthetic_dictionary(constant, SamplerConfig{});
  const Vec q = (Vec(2) << 0.31, -0.77).finished();
  const Vec got = oracle::flatten_bundle(dict->query(q));
  const Vec want = oracle::flatten_bundle(oracle::synthetic_bundle(q, constant));
  EXPECT_LE((got.head(9) - want.head(9)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(CriticalManifold, LinearMapIsRecoveredExactly)
{
  const Mat m = (Mat(4, 2) << 1.0, 0.2, -0.3, 0.8, 0.0, 0.0, 0.0, 0.0).finished();
  std::vector<Vec> us, ys;
  for (const auto & u : grid_points(Box::uniform(2, -1, 1), {3, 3})) {
    us.push_back(u);
    ys.push_back(m * u);
  }
  Mat sel = Mat::Zero(2, 4);
  sel.leftCols(2).setIdentity();
  const auto cm = CriticalManifoldMap::fit(us, ys, 2, 2, sel);
  EXPECT_LE(cm.round_trip_error(), 1e-10);
  const Vec u = (Vec(2) << 0.37, -0.61).finished();
  EXPECT_LE((cm.forward(u) - m * u).norm(), 1e-10);
  const auto single = CriticalManifoldMap::fit({us[4]}, {ys[4]}, 0, 0, sel);
  EXPECT_LE((single.forward(u) - ys[4]).norm(), 1e-12);
  EXPECT_LE((single.inverse(Vec::Zero(2)) - us[4]).norm(), 1e-12);
}

// ---------------------------------------------------------------------------------------------
// persistence

TEST(Persistence, TrajectoryCsvRoundTripIsExact)
{
  const auto dir = scratch_dir("traj");
  Trajectory t = series(linspace_times(20, 0.01), oracle::random_matrix(3, 20, 90));
  t.inputs = oracle::random_matrix(2, 20, 91);
  write_trajectory_csv(dir / "t.csv", t, {"abc"}, "y");
  const auto back = read_trajectory_csv(dir / "t.csv", TrajectoryLabel::decay);
  EXPECT_EQ(back.values, t.values);
  EXPECT_EQ(back.inputs, t.inputs);
  EXPECT_EQ(back.times, t.times);
  EXPECT_EQ(read_text(dir / "t.csv").rfind("# config_hash=abc", 0), 0u);
}

TEST(Persistence, DictionaryJsonRoundTripPreservesQueries)
{
  const auto dict = oracle::synthetic_dictionary(oracle::quadratic_field, SamplerConfig{});
  const auto back = dictionary_from_json(Json::parse(to_json(*dict).dump()));
  const Vec q = (Vec(2) << 0.2, -0.4).finished();
  EXPECT_LE((oracle::flatten_bundle(back->query(q)) - oracle::flatten_bundle(dict->query(q))).cwiseAbs().maxCoeff(),
            1e-14);
}

TEST(Persistence, MissingFileIsAnIoError)
{
  try {
    read_text("/nonexistent/assm/file.json");
    FAIL();
  } catch (const Error & e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
    EXPECT_TRUE(e.is_validation());
  }
}
