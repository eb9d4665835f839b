// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero when
// any hard criterion fails. Run directories are created under $ASSM_OUTPUT_ROOT (default: the
// system temporary directory).

#include "oracles.hpp"

#include "assm/pipeline.hpp"

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>

using namespace assm;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict
{
  bool pass{false};
  std::string detail;
  bool soft{false};
};

std::string fmt(const char * f, double v)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path work_root()
{
  fs::path root = fs::temp_directory_path();
  if (const char * env = std::getenv("ASSM_OUTPUT_ROOT"); env && *env) root = env;
  return root / "assm_acceptance";
}

fs::path fresh(const fs::path & p)
{
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig config_named(const std::string & name) { return load_config(fs::path(ASSM_SOURCE_DIR) / "configs" / name); }

void progress(const std::string & msg) { std::cerr << "[acceptance] " << msg << std::endl; }

// ---------------------------------------------------------------------------------------------

Verdict numerical_invariants()
{
  std::vector<std::string> bad;
  std::ostringstream d;
  const auto check = [&](const std::string & name, double value, double bound) {
    d << name << "=" << fmt("%.2e", value) << " ";
    if (!(value <= bound)) bad.push_back(name);
  };
  const double order = oracle::rk4_observed_order();
  d << "rk4_order=" << fmt("%.3f", order) << " ";
  if (std::abs(order - 4.0) > 0.1) bad.push_back("rk4_order");
  check("fd_jacobian", oracle::fd_linear_jacobian_error(), 1e-6);
  check("ls_normal", oracle::least_squares_normal_residual(), 1e-8);
  const auto midw = oracle::midw_partition_and_nodes();
  check("midw_partition", midw.partition_error, 1e-12);
  check("midw_nodes", midw.node_error, 0.0);
  check("qpr_quadratic", oracle::qpr_quadratic_error(), 1e-8);
  check("riccati", oracle::care_relative_residual(), 1e-9);
  check("scp_riccati", oracle::scp_vs_riccati().input_error, 1e-6);

  const DoublePendulumModel p;
  const Box start = Box{(Vec(4) << -M_PI / 9, -M_PI / 9, -1.0, -1.0).finished(),
                        (Vec(4) << M_PI / 9, M_PI / 9, 1.0, 1.0).finished()};
  double energy = -1.0;
  for (const auto & x0 : sample_lhs(17, 12, start))
    energy = std::max(energy, oracle::max_relative_energy_increase(p, x0, 20.0));
  check("energy_increase", energy, 1e-8);

  std::string tail;
  for (const auto & b : bad) tail += " " + b;
  return {bad.empty(), d.str() + (bad.empty() ? "" : "failed:" + tail)};
}

struct OpenLoopRun
{
  double full{0}, first{0}, zeroth{0};
};

double window_nmte(const ModelFamily & fam, const SplitInput & in, const Vec & x0, const Trajectory & truth,
                   Index begin, Index end)
{
  try {
    const auto pred = predict_open_loop(fam, in, x0, 0.0, truth.times[truth.size() - 1], truth.dt());
    return trajectory_nmte(pred.values.middleCols(begin, end - begin), truth.values.middleCols(begin, end - begin));
  } catch (const Error & e) {
    if (e.kind() != ErrorKind::model_domain_exceeded) throw;
    return std::numeric_limits<double>::infinity();
  }
}

OpenLoopRun adiabatic_prediction(const DynamicsModel & model, std::shared_ptr<const ASSMDictionary> dict,
                                 const InputSignal & slow, double delta, Index begin, Index end)
{
  SplitInput in{slow, {}};
  if (delta > 0) {
    LorenzParams lp;
    lp.time_scale = 0.25;
    in.deviation = broadcast_deviation(generate_lorenz_deviation(11, 200.0, 0.01, delta, lp), model.input_dim());
  }
  const Vec x0 = find_equilibrium(model, slow(0.0), Vec::Zero(model.state_dim()));
  const auto truth = integrate_ode(model, x0, [&](double t) { return in.total(t); }, 0.0, 200.0, {1e-3, 10});
  OpenLoopRun r;
  r.full = window_nmte(ModelFamily(dict, ModelOrder::full), in, x0, truth, begin, end);
  r.first = window_nmte(ModelFamily(dict, ModelOrder::first), in, x0, truth, begin, end);
  r.zeroth = window_nmte(ModelFamily(dict, ModelOrder::zeroth), in, x0, truth, begin, end);
  return r;
}

const MPCResult * find_variant(const std::vector<MPCResult> & rs, const std::string & v)
{
  for (const auto & r : rs)
    if (r.variant == v) return &r;
  return nullptr;
}

bool same_csv_tree(const fs::path & a, const fs::path & b, std::size_t & count, std::string & mismatch)
{
  std::vector<fs::path> fa, fb;
  for (const auto & e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file() && e.path().extension() == ".csv") fa.push_back(fs::relative(e.path(), a));
  for (const auto & e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file() && e.path().extension() == ".csv") fb.push_back(fs::relative(e.path(), b));
  std::sort(fa.begin(), fa.end());
  std::sort(fb.begin(), fb.end());
  count = fa.size();
  if (fa != fb) {
    mismatch = "file lists differ";
    return false;
  }
  for (const auto & f : fa)
    if (read_text(a / f) != read_text(b / f)) {
      mismatch = f.string();
      return false;
    }
  return true;
}

}  // namespace

int main()
{
  std::map<int, Verdict> v;
  const fs::path root = work_root();
  progress("run directories under " + root.string());

  try {
    progress("7: numerical invariants");
    v[7] = numerical_invariants();
  } catch (const std::exception & e) {
    v[7] = {false, std::string("exception: ") + e.what()};
  }

  // 1-4: pendulum grid with two-dimensional SSMs
  try {
    const RunConfig c = config_named("pendulum_openloop.json");
    const fs::path dir = fresh(root / "openloop");
    const auto t0 = Clock::now();
    progress("1: collecting the 36-point grid");
    run_collect(c, dir);
    progress("1: training");
    const TrainSummary tr = run_train(c, dir);
    const double t_fit = seconds_since(t0);
    v[1] = {tr.mean_test_nmte <= 0.10 && tr.max_test_nmte <= 0.15 && t_fit <= 300.0,
            "mean test NMTE " + fmt("%.4f", tr.mean_test_nmte) + ", max " + fmt("%.4f", tr.max_test_nmte) + ", " +
              fmt("%.0f", t_fit) + " s"};

    const double rel_round_trip = tr.round_trip / tr.box_width;
    v[4] = {tr.manifold_residual <= 1e-6 && rel_round_trip <= 0.02,
            "residual " + fmt("%.2e", tr.manifold_residual) + " (polynomial S " +
              fmt("%.2e", tr.manifold_residual_polynomial) + "), round trip " + fmt("%.4f", 100 * rel_round_trip) +
              "% of box width"};

    const auto model = make_model(c);
    const auto dict = load_dictionary(dir, "qpr");
    const auto track = generate_perlin_target(7, 200.0, 0.01, Box::uniform(2, -M_PI / 9, M_PI / 9), 6);
    const InputSignal slow = static_input_track(*model, track);

    progress("2: slow Perlin input, no deviation");
    auto t2 = Clock::now();
    const auto r2 = adiabatic_prediction(*model, dict, slow, 0.0, 0, 20001);
    const double s2 = seconds_since(t2);
    v[2] = {r2.full <= 0.10 && r2.full < r2.zeroth && s2 <= 120.0,
            "aSSM " + fmt("%.4f", r2.full) + ", zeroth-order " + fmt("%.4f", r2.zeroth) + ", first-order " +
              fmt("%.4f", r2.first) + ", " + fmt("%.0f", s2) + " s"};

    progress("3: chaotic deviations");
    auto t3 = Clock::now();
    std::string d3;
    bool ok3 = true;
    for (double delta : {1.2, 3.2}) {
      const auto r = adiabatic_prediction(*model, dict, slow, delta, 5000, 15001);
      ok3 = ok3 && r.full <= 0.15 && r.first <= r.zeroth;
      d3 += "delta " + fmt("%.1f", delta) + ": aSSM " + fmt("%.4f", r.full) + " first " + fmt("%.4f", r.first) +
            " zeroth " + fmt("%.4f", r.zeroth) + "; ";
    }
    const double s3 = seconds_since(t3);
    v[3] = {ok3 && s3 <= 180.0, d3 + fmt("%.0f", s3) + " s"};
  } catch (const std::exception & e) {
    for (int k : {1, 2, 3, 4})
      if (!v.count(k)) v[k] = {false, std::string("exception: ") + e.what()};
  }

  // 5, 9: figure-8 tracking; 6: keep-out
  fs::path control_dir = root / "control";
  try {
    const RunConfig c = config_named("pendulum_control.json");
    fresh(control_dir);
    const auto t0 = Clock::now();
    progress("5: collecting the control dataset");
    run_collect(c, control_dir);
    progress("5: training dictionary and baselines");
    run_train(c, control_dir);
    progress("5: closed-loop runs");
    const ControlOutcome oc = run_control(c, control_dir);
    const double t5 = seconds_since(t0);
    const auto * full = find_variant(oc.results, "assm");
    const auto * first = find_variant(oc.results, "first-order");
    const auto * zeroth = find_variant(oc.results, "zeroth-order");
    const auto * koop = find_variant(oc.results, "koopman");
    const auto * tpwl = find_variant(oc.results, "tpwl");
    if (!full || !first || !zeroth || !koop || !tpwl) throw Error(ErrorKind::precondition, "missing control variant");
    const double a = full->metrics.ise, f = first->metrics.ise, z = zeroth->metrics.ise;
    const bool chain = a < f && f < z;
    const bool pair = a < f && a < z && std::abs(f - z) <= 0.1 * std::max(f, z);
    const bool baselines = a < koop->metrics.ise && a < tpwl->metrics.ise;
    const bool slow_ok = std::abs(oc.slowness - 0.5) <= 0.05;
    v[5] = {(chain || pair) && baselines && slow_ok && t5 <= 600.0,
            "r_s " + fmt("%.3f", oc.slowness) + ", ISE aSSM " + fmt("%.3e", a) + " first " + fmt("%.3e", f) +
              " zeroth " + fmt("%.3e", z) + " koopman " + fmt("%.3e", koop->metrics.ise) + " tpwl " +
              fmt("%.3e", tpwl->metrics.ise) + ", " + fmt("%.0f", t5) + " s"};

    const Json pareto = read_json(control_dir / "control" / "pareto.json");
    bool complete = pareto.at("records").size() == oc.results.size();
    for (const auto & r : pareto.at("records")) complete = complete && r.contains("mean_solve_time_s") && r.contains("ise");
    const double solve = full->mean_solve_time();
    const double per_window = solve / (c.control.horizon / 0.02);
    v[9] = {complete && solve <= 0.05,
            "Pareto records " + std::to_string(pareto.at("records").size()) + ", aSSM mean solve " +
              fmt("%.2f", 1e3 * solve) + " ms per plan over a " + fmt("%.2f", c.control.horizon) + " s horizon (" +
              fmt("%.2f", 1e3 * per_window) + " ms per 0.02 s)",
            true};
  } catch (const std::exception & e) {
    for (int k : {5, 9})
      if (!v.count(k)) v[k] = {false, std::string("exception: ") + e.what(), k == 9};
  }

  try {
    const RunConfig c = config_named("pendulum_keepout.json");
    const fs::path dir = fresh(root / "keepout");
    for (const char * sub : {"dataset", "models"}) fs::create_directory_symlink(fs::absolute(control_dir / sub), dir / sub);
    progress("6: keep-out run");
    const auto t0 = Clock::now();
    const ControlOutcome oc = run_control(c, dir);
    const double t6 = seconds_since(t0);
    const auto * full = find_variant(oc.results, "assm");
    if (!full) throw Error(ErrorKind::precondition, "missing aSSM variant");
    const double amp = c.control.target.amplitude;
    const double rel = full->metrics.max_violation / amp;
    v[6] = {rel <= 0.005 && full->metrics.violation_ratio < 0.02 && !oc.target.keep_outs.empty() && t6 <= 600.0,
            "max violation " + fmt("%.4f", 100 * rel) + "% of amplitude, violation ratio " +
              fmt("%.4f", full->metrics.violation_ratio) + ", ISE " + fmt("%.3e", full->metrics.ise) + ", " +
              fmt("%.0f", t6) + " s"};
  } catch (const std::exception & e) {
    v[6] = {false, std::string("exception: ") + e.what()};
  }

  try {
    const RunConfig c = config_named("smoke.json");
    std::array<fs::path, 2> dirs{fresh(root / "determinism_a"), fresh(root / "determinism_b")};
    for (const auto & d : dirs) {
      progress("8: end-to-end run in " + d.string());
      run_collect(c, d);
      run_train(c, d);
      run_openloop(c, d);
      run_control(c, d);
      run_report(c, d);
    }
    std::size_t n = 0;
    std::string mismatch;
    const bool same = same_csv_tree(dirs[0], dirs[1], n, mismatch);
    v[8] = {same && n > 0, std::to_string(n) + " CSV files compared" + (same ? ", all identical" : ", differs: " + mismatch)};
  } catch (const std::exception & e) {
    v[8] = {false, std::string("exception: ") + e.what()};
  }

  int hard_failures = 0;
  for (int k = 1; k <= 9; ++k) {
    const Verdict & r = v[k];
    std::cout << "criterion " << k << ": " << (r.pass ? "PASS" : "FAIL") << (r.soft ? " (soft)" : "") << " - "
              << r.detail << std::endl;
    if (!r.pass && !r.soft) ++hard_failures;
  }
  return hard_failures == 0 ? 0 : 1;
}
