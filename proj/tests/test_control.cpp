#include "oracles.hpp"

#include "assm/pipeline.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace assm;

namespace {

fs::path scratch_dir(const std::string & name)
{
  const fs::path p = fs::temp_directory_path() / ("assm_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig smoke_config()
{
  return load_config(fs::path(ASSM_SOURCE_DIR) / "configs" / "smoke.json");
}

std::vector<fs::path> csv_files(const fs::path & root)
{
  std::vector<fs::path> out;
  for (const auto & e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() == ".csv") out.push_back(fs::relative(e.path(), root));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Riccati and horizon problem

TEST(Riccati, ResidualIsTiny) { EXPECT_LE(oracle::care_relative_residual(), 1e-9); }

TEST(Riccati, ClosedLoopIsStable)
{
  const Mat a = oracle::random_matrix(5, 5, 3);
  const Mat b = oracle::random_matrix(5, 2, 4);
  const auto sol = solve_care(a, b, Mat::Identity(5, 5), Mat::Identity(2, 2));
  EXPECT_LT(max_real_part(a - b * sol.K), 0.0);
}

TEST(HorizonProblem, MatchesFiniteHorizonRiccati)
{
  const auto c = oracle::scp_vs_riccati();
  EXPECT_LE(c.input_error, 1e-6);
  EXPECT_LE(c.iterations, 2);
}

TEST(HorizonProblem, ContradictoryBoxIsInfeasible)
{
  oracle::LinearPrediction model(Mat::Identity(2, 2), Mat::Identity(2, 1), Mat::Identity(1, 2).leftCols(2));
  OCPSpec spec;
  spec.substeps = 3;
  spec.Q = Mat::Identity(1, 1);
  spec.R = Mat::Identity(1, 1);
  spec.input_box = Box{Vec::Constant(1, 1.0), Vec::Constant(1, -1.0)};
  OCPProblem prob{&model, Vec::Zero(2), Vec::Zero(1), Mat::Zero(1, 3), 0.01};
  try {
    solve_ocp_scp(spec, prob);
    FAIL();
  } catch (const Error & e) {
    EXPECT_EQ(e.kind(), ErrorKind::infeasible_horizon);
  }
}

TEST(HorizonProblem, KeepOutIsRespected)
{
  // double integrator pushed through a disc centred on the straight-line target path
  const double dt = 0.05;
  const Mat a = (Mat(4, 4) << 1, 0, dt, 0, 0, 1, 0, dt, 0, 0, 1, 0, 0, 0, 0, 1).finished();
  const Mat b = (Mat(4, 2) << 0.5 * dt * dt, 0, 0, 0.5 * dt * dt, dt, 0, 0, dt).finished();
  const Mat c = Mat::Identity(4, 4).topRows(2);
  oracle::LinearPrediction model(a, b, c);
  OCPSpec spec;
  spec.horizon = 2.0;
  spec.substeps = 40;
  spec.Q = 10.0 * Mat::Identity(2, 2);
  spec.R = 1e-3 * Mat::Identity(2, 2);
  spec.input_box = Box::uniform(2, -20, 20);
  spec.keep_outs = {KeepOut{(Vec(2) << 0.5, 0.0).finished(), 0.1}};
  Mat target(2, 40);
  for (Index k = 0; k < 40; ++k) target.col(k) << static_cast<double>(k + 1) / 40.0, 0.0;
  OCPProblem prob{&model, Vec::Zero(4), Vec::Zero(2), target, dt};
  const auto sol = solve_ocp_scp(spec, prob);
  double depth = 0;
  for (Index k = 0; k < sol.outputs.cols(); ++k) depth = std::max(depth, spec.keep_outs[0].penetration(sol.outputs.col(k)));
  EXPECT_LE(depth, 1e-3);
}

// ---------------------------------------------------------------------------------------------
// closed-loop metrics

TEST(Metrics, ClosedForms)
{
  Vec t(101);
  for (Index k = 0; k <= 100; ++k) t[k] = 0.01 * static_cast<double>(k);
  Mat target = Mat::Zero(2, 101);
  EXPECT_EQ(tracking_metrics(t, target, target).ise, 0.0);
  Mat z = target;
  z.row(0).array() += 0.3;
  z.row(1).array() -= 0.4;
  EXPECT_NEAR(tracking_metrics(t, z, target).ise, 0.25, 1e-12);

  Mat path = Mat::Zero(2, 100);
  for (Index k = 0; k < 100; ++k) path.col(k) << 10.0, 0.0;
  for (Index k = 40; k < 50; ++k) path.col(k) << 0.3 * static_cast<double>(k - 40) / 10.0 + 0.7, 0.0;
  const KeepOut ko{Vec::Zero(2), 1.0};
  const auto m = tracking_metrics(t.head(100), path, path, {ko});
  EXPECT_NEAR(m.violation_ratio, 0.1, 1e-15);
  EXPECT_NEAR(m.max_violation, 0.3, 1e-12);
}

TEST(Metrics, SlownessOfStraightLines)
{
  TargetTrack line;
  line.times = Vec::LinSpaced(11, 0.0, 1.0);
  line.points = Mat::Zero(2, 11);
  line.points.row(0) = 2.0 * line.times.transpose();
  Trajectory decay;
  decay.times = line.times;
  decay.values = Mat::Zero(2, 11);
  decay.values.row(1) = 8.0 * line.times.transpose();
  EXPECT_NEAR(slowness_measure(line, {decay}), 0.25, 1e-10);
  line.points.setZero();
  EXPECT_EQ(slowness_measure(line, {decay}), 0.0);
}

// ---------------------------------------------------------------------------------------------
// baselines

TEST(Tpwl, LinearSystemNeedsNoModelsBeyondItsStarts)
{
  const Mat m = (Mat(2, 2) << 0, 1, -2, -0.3).finished();
  const LinearModel lin(m, (Mat(2, 1) << 0, 1).finished(), Box::uniform(1, -1, 1));
  TPWLDataSpec ds;
  ds.count = 2;
  ds.duration = 5.0;
  ds.input_range = Box::uniform(1, -1, 1);
  const auto responses = tpwl_training_responses(lin, Vec::Zero(2), ds, 3);
  const auto tp = tpwl_train(lin, responses, {2, 0.01});
  EXPECT_EQ(tp.size(), responses.size());
  const Vec x = (Vec(2) << 0.3, -0.2).finished();
  const Vec u = Vec::Constant(1, 0.5);
  const Vec next = tpwl_step(tp, tp.basis().transpose() * x, u, 0.01);
  const Vec truth = rk4_step(lin, x, constant_input(u), 0.0, 0.01);
  EXPECT_LE((tp.basis() * next - truth).norm(), 1e-8);
}

TEST(Tpwl, TighterThresholdNeverShrinksTheBank)
{
  const DoublePendulumModel p;
  TPWLDataSpec ds;
  ds.count = 2;
  ds.duration = 10.0;
  ds.input_range = Box::uniform(2, -5.0, 5.0);
  const auto responses = tpwl_training_responses(p, Vec::Zero(4), ds, 5);
  Index prev = 0;
  for (double th : {0.2, 0.1, 0.05}) {
    const auto tp = tpwl_train(p, responses, {4, th});
    EXPECT_GE(tp.size(), prev);
    prev = tp.size();
  }
  EXPECT_GE(prev, 2);
}

TEST(Tpwl, SwitchesAtTheMidpointBetweenAnchors)
{
  TPWLLocal a, b;
  for (TPWLLocal * l : {&a, &b}) {
    l->u = Vec::Zero(1);
    l->a = -Mat::Identity(1, 1);
    l->b = Mat::Zero(1, 1);
    l->c = Vec::Zero(1);
  }
  a.x = a.anchor = Vec::Constant(1, 0.0);
  b.x = b.anchor = Vec::Constant(1, 1.0);
  b.c = Vec::Constant(1, 5.0);
  const TPWLModel m(Mat::Identity(1, 1), {a, b}, 0.1);
  EXPECT_EQ(m.nearest(Vec::Constant(1, 0.49)), 0);
  EXPECT_EQ(m.nearest(Vec::Constant(1, 0.51)), 1);
}

TEST(Koopman, RecoversLinearTimeInvariantModel)
{
  const Mat a = (Mat(3, 3) << -1, 0.5, 0, 0, -2, 1, 0.3, 0, -0.5).finished();
  const Mat b = oracle::random_matrix(3, 2, 7);
  const Mat y = oracle::random_matrix(3, 200, 8);
  const Mat u = oracle::random_matrix(2, 200, 9);
  const Mat g = (Mat(2, 2) << 1.0, 0.5, -0.2, 2.0).finished();
  const Mat zs = oracle::random_matrix(2, 6, 10);
  const auto km = koopman_fit(y, a * y + b * u, u, zs, g * zs);
  EXPECT_LE((km.A - a).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LE((km.B - b).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LE((km.G - g).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Koopman, ZeroInputsAreRankDeficient)
{
  try {
    koopman_fit(oracle::random_matrix(2, 50, 1), oracle::random_matrix(2, 50, 2), Mat::Zero(1, 50),
                oracle::random_matrix(1, 3, 3), oracle::random_matrix(1, 3, 4));
    FAIL();
  } catch (const Error & e) {
    EXPECT_EQ(e.kind(), ErrorKind::rank_deficient);
  }
}

TEST(Koopman, PregainIsPureFeedforwardOnTarget)
{
  KoopmanModel m;
  m.K = oracle::random_matrix(2, 2, 11);
  m.G = oracle::random_matrix(2, 2, 12);
  const Box box = Box::uniform(2, -100, 100);
  EXPECT_EQ(koopman_pregain_control(m, Vec::Zero(2), Vec::Zero(2), box).u.norm(), 0.0);
  const Vec gamma = (Vec(2) << 0.3, -0.1).finished();
  EXPECT_LE((koopman_pregain_control(m, gamma, gamma, box).u - m.G * gamma).norm(), 1e-15);
}

// ---------------------------------------------------------------------------------------------
// configuration

TEST(Config, UnknownKeysAndBadValuesAreRejected)
{
  for (const char * text : {R"({"grid": "pi9:6x6", "bogus": 1})", R"({"fit": {"d": "two"}})",
                            R"({"control": {"variants": ["magic"]}})", R"({"grid": "6x6"})"}) {
    try {
      parse_config(Json::parse(text));
      ADD_FAILURE() << text;
    } catch (const Error & e) {
      EXPECT_EQ(e.kind(), ErrorKind::precondition) << text;
    }
  }
}

TEST(Config, HashTracksResolvedContent)
{
  const RunConfig a = parse_config(Json::parse(R"({"preset": "pendulum-openloop"})"));
  const RunConfig b = parse_config(Json::parse(R"({"preset": "pendulum-openloop", "seed": 1})"));
  const RunConfig c = parse_config(Json::parse(R"({"preset": "pendulum-openloop", "seed": 2})"));
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash(c));
}

TEST(Config, GridSpecifications)
{
  const auto g = GridSpec::parse("pi9:6x6");
  EXPECT_NEAR(g.half_width, M_PI / 9, 1e-15);
  EXPECT_EQ(g.points().size(), 36u);
  EXPECT_EQ(GridSpec::parse("u0.2:3x2").space, GridSpec::Space::input);
}

// ---------------------------------------------------------------------------------------------
// pipeline

TEST(Pipeline, CollectIsByteIdenticalAcrossRuns)
{
  RunConfig c = smoke_config();
  c.grid = "pi9:2x2";
  const auto a = scratch_dir("collect_a");
  const auto b = scratch_dir("collect_b");
  run_collect(c, a);
  run_collect(c, b);
  const auto files = csv_files(a);
  ASSERT_EQ(files, csv_files(b));
  EXPECT_EQ(files.size(), 4u * 3u);
  for (const auto & f : files) EXPECT_EQ(read_text(a / f), read_text(b / f)) << f;
}

TEST(Pipeline, GridBeyondStabilityListsPerPointFailures)
{
  RunConfig c = smoke_config();
  c.grid = "2.5:3x1";
  c.collection.decay_duration = 2.0;
  c.fit.assemble.truncate_to = 1.0;
  const auto dir = scratch_dir("unstable");
  try {
    run_collect(c, dir);
    ADD_FAILURE() << "collection over an unstable grid succeeded";
  } catch (const Error & e) {
    EXPECT_EQ(e.kind(), ErrorKind::stability_violation);
    const std::string what = e.what();
    EXPECT_NE(what.find("#0"), std::string::npos) << what;
    EXPECT_NE(what.find("#2"), std::string::npos) << what;
    EXPECT_EQ(what.find("#1"), std::string::npos) << what;
  }
}

TEST(Pipeline, EndToEndSmokeRun)
{
  const RunConfig c = smoke_config();
  const auto dir = scratch_dir("smoke");
  const auto col = run_collect(c, dir);
  EXPECT_EQ(col.groups, 9u);
  const auto tr = run_train(c, dir);
  EXPECT_TRUE(fs::exists(dir / "models" / "dictionary_qpr.json"));
  EXPECT_TRUE(fs::exists(dir / "models" / "dictionary_midw.json"));
  EXPECT_LE(tr.mean_test_nmte, 0.1);
  const auto qpr = load_dictionary(dir, "qpr");
  const auto midw = load_dictionary(dir, "midw");
  ASSERT_EQ(qpr->nodes().size(), midw->nodes().size());
  for (std::size_t i = 0; i < qpr->nodes().size(); ++i)
    EXPECT_EQ(detail::flatten(qpr->nodes()[i].bundle), detail::flatten(midw->nodes()[i].bundle));

  const auto ol = run_openloop(c, dir);
  ASSERT_EQ(ol.size(), 2u);
  EXPECT_GE(ol[0].report.fraction_below_10, 0.9);

  const auto oc = run_control(c, dir);
  ASSERT_EQ(oc.results.size(), 4u);
  for (const auto & r : oc.results) EXPECT_TRUE(fs::exists(dir / "control" / (r.variant + ".csv")));
  std::istringstream pareto(read_text(dir / "control" / "pareto.csv"));
  std::string line;
  int rows = 0;
  while (std::getline(pareto, line)) rows += !line.empty() && line[0] != '#';
  EXPECT_EQ(rows, 5);  // header and one row per variant
  const Json summary = read_json(dir / "control" / "control_summary.json");
  for (const auto & v : summary.at("variants")) {
    EXPECT_TRUE(v.contains("violation_ratio"));
    EXPECT_TRUE(v.contains("mean_solve_time_s"));
  }
  run_report(c, dir);
  const Json rep = read_json(dir / "report.json");
  EXPECT_TRUE(rep.contains("control"));
  EXPECT_EQ(rep.at("provenance").at("config_hash"), config_hash(c));
}

TEST(Pipeline, RestTargetIsHeldExactly)
{
  RunConfig c = smoke_config();
  const auto dir = scratch_dir("rest");
  run_collect(c, dir);
  run_train(c, dir);
  c.control.target.kind = "rest";
  c.control.target.duration = 2.0;
  const auto oc = run_control(c, dir);
  for (const auto & r : oc.results) EXPECT_LE(r.metrics.ise, 1e-8) << r.variant;
}

TEST(Pipeline, CorruptedGroupIsNamed)
{
  RunConfig c = smoke_config();
  c.grid = "pi9:2x2";
  const auto dir = scratch_dir("corrupt");
  run_collect(c, dir);
  std::ofstream(dir / "dataset" / "u2" / "decay_1.csv") << "# broken\nt,y0\n0,abc\n";
  try {
    run_train(c, dir);
    FAIL();
  } catch (const Error & e) {
    EXPECT_NE(std::string(e.what()).find("u2"), std::string::npos) << e.what();
  }
}
