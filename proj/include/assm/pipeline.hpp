#pragma once

/**
 * @file
 * @brief Declarative run configuration and the collect / train / openloop / control / report
 * stages shared by the command-line tool and the acceptance checks.
 *
 * Every stage reads its inputs from, and writes its outputs to, one run directory:
 *
 *     dataset/manifest.json, dataset/<group>/{decay,controlled}_<k>.csv
 *     models/dictionary_<sampler>.json, models/tpwl.json, models/koopman.json
 *     reports/training_report.json, reports/training_nodes.csv
 *     openloop/scatter_<variant>.csv, openloop/openloop_report.json
 *     control/<variant>.csv, control/pareto.csv, control/control_summary.json
 *     report.json, summary.csv
 *
 * CSV files hold only quantities that are reproducible bit for bit; wall-clock timings go to the
 * JSON documents.
 */

#include "baselines.hpp"
#include "collect.hpp"
#include "dictionary.hpp"
#include "io.hpp"
#include "mpc.hpp"
#include "openloop.hpp"
#include "signals.hpp"

#include <chrono>
#include <memory>
#include <set>

namespace assm {

// ---------------------------------------------------------------------------------------------
// Configuration

struct GridSpec
{
  enum class Space { configuration, input };
  Space space{Space::configuration};
  double half_width{0.0};
  std::vector<int> counts;

  /// "pi9:6x6" (configurations in [-pi/9, pi/9]^2), "0.3:5x5", or "u0.2:3x3" for an input grid.
  static GridSpec parse(const std::string & text)
  {
    const auto colon = text.find(':');
    require(colon != std::string::npos, "grid '" + text + "': expected <half-width>:<n1>x<n2>...");
    std::string w = text.substr(0, colon);
    GridSpec g;
    if (!w.empty() && w[0] == 'u') {
      g.space = Space::input;
      w = w.substr(1);
    }
    try {
      if (w.rfind("pi", 0) == 0) {
        const double div = w.size() > 2 ? std::stod(w.substr(2)) : 1.0;
        g.half_width = M_PI / div;
      } else {
        g.half_width = std::stod(w);
      }
      std::stringstream ss(text.substr(colon + 1));
      std::string part;
      while (std::getline(ss, part, 'x')) g.counts.push_back(std::stoi(part));
    } catch (const std::exception &) {
      throw Error(ErrorKind::precondition, "grid '" + text + "': malformed");
    }
    require(g.half_width > 0 && !g.counts.empty(), "grid '" + text + "': need a positive width and counts");
    for (int c : g.counts) require(c >= 1, "grid '" + text + "': counts must be >= 1");
    return g;
  }

  std::vector<Vec> points() const
  {
    return grid_points(Box::uniform(static_cast<Index>(counts.size()), -half_width, half_width), counts);
  }
};

struct TargetSpec
{
  std::string kind{"figure8"};  ///< figure8, perlin or rest
  double amplitude{0.25};
  double period{0.0};    ///< figure8; 0 derives the period from `slowness`
  double slowness{0.5};  ///< requested r_s when period is 0
  double duration{0.0};  ///< 0 selects one period (figure8) or 200 s
  double dt{0.01};
  std::uint64_t seed{7};
  int perlin_octaves{6};
};

struct KeepOutSpec
{
  double phase{0.125};           ///< center placed on the figure-8 at phase x period
  double radius_fraction{0.05};  ///< radius relative to the track amplitude
  double margin_fraction{0.0};   ///< extra planning radius relative to the amplitude; scoring uses the true radius
};

struct BaselineSpec
{
  bool tpwl{true};
  int tpwl_basis{4};
  double tpwl_threshold{0.1};
  int tpwl_count{5};
  double tpwl_duration{20.0};
  double tpwl_knot_spacing{1.0};
  bool koopman{true};
  std::string koopman_observable{"state"};  ///< state or delay
  double koopman_lag{0.01};
  double koopman_q{1.0};
  double koopman_r{0.001};
};

struct OpenLoopSpec
{
  double fraction{0.5};
  double horizon{0.05};
  std::string sampler{"qpr"};
  std::vector<std::string> variants{"assm", "first-order", "zeroth-order"};
};

struct ControlSpec
{
  double horizon{0.4};
  int substeps{20};
  int apply_substeps{5};
  double q_weight{14400.0};
  double r_weight{0.001};
  double integration_dt{1e-3};
  std::string sampler{"qpr"};
  std::string anchor{"steady-state"};
  std::vector<std::string> variants{"assm", "first-order", "zeroth-order", "koopman", "tpwl"};
  TargetSpec target;
  std::vector<KeepOutSpec> keep_outs;
};

struct RunConfig
{
  std::string model{"double-pendulum"};
  DoublePendulumModel::Config pendulum;
  ChainProxyModel::Config chain;
  std::uint64_t seed{1};
  std::string grid{"pi9:6x6"};
  CollectionSpec collection;
  EmbeddingSpec embedding;
  DictionaryFitSpec fit;
  bool fixed_chart{false};
  std::vector<std::string> samplers{"qpr", "midw"};
  BaselineSpec baselines;
  OpenLoopSpec openloop;
  ControlSpec control;
};

namespace detail {

inline void check_keys(const Json & j, const std::set<std::string> & allowed, const std::string & section)
{
  require(j.is_object(), "config: section '" + section + "' must be an object");
  for (const auto & [k, v] : j.items())
    require(allowed.count(k) > 0, "config: unknown key '" + k + "' in section '" + section + "'");
}

template <class T>
void read(const Json & j, const char * key, T & out)
{
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception & e) {
    throw Error(ErrorKind::precondition, std::string("config: key '") + key + "': " + e.what());
  }
}

inline void read_vec(const Json & j, const char * key, Vec & out)
{
  if (!j.contains(key)) return;
  std::vector<double> v;
  read(j, key, v);
  out = Eigen::Map<const Vec>(v.data(), static_cast<Index>(v.size()));
}

inline std::vector<double> to_std(const Vec & v) { return {v.data(), v.data() + v.size()}; }

inline SamplerConfig sampler_named(const std::string & name, const SamplerConfig & base)
{
  require(name == "qpr" || name == "midw", "config: sampler must be 'qpr' or 'midw', got '" + name + "'");
  SamplerConfig s = base;
  s.kind = name == "qpr" ? SamplerKind::qpr : SamplerKind::midw;
  return s;
}

}  // namespace detail

/// Default settings for the two pendulum testbeds: open-loop validation and closed-loop control.
inline RunConfig pendulum_openloop_defaults()
{
  RunConfig c;
  c.collection.decays_per_input = 2;
  c.collection.decay_duration = 100.0;
  c.collection.perturbation = (Vec(4) << 0.6, 0.6, 1.56, 1.56).finished();
  c.collection.perturbation_modes = 2;
  c.collection.control_amplitude = Vec::Constant(2, 1.0);
  c.collection.knot_spacing = 1.0;
  c.collection.controlled_duration = 20.0;
  c.fit.static_fit.d = 2;
  c.fit.static_fit.n_w = 3;
  c.fit.static_fit.n_r = 3;
  c.fit.assemble = {99.0, 0.5, 1e-6};
  return c;
}

inline RunConfig pendulum_control_defaults()
{
  RunConfig c;
  c.collection.decays_per_input = 8;
  c.collection.decay_duration = 30.0;
  c.collection.perturbation = (Vec(4) << 0.3, 0.3, 0.78, 0.78).finished();
  c.collection.perturbation_modes = 0;
  c.collection.control_amplitude = Vec::Constant(2, 1.0);
  c.collection.knot_spacing = 1.0;
  c.collection.controlled_duration = 20.0;
  c.fit.static_fit.d = 4;
  c.fit.static_fit.n_w = 1;
  c.fit.static_fit.n_r = 1;
  c.fit.n_s = 3;
  c.fit.n_i = 3;
  c.fit.assemble = {0.0, 0.5, 1e-6};
  c.fixed_chart = true;
  return c;
}

inline Json config_to_json(const RunConfig & c)
{
  using detail::to_std;
  Json keep = Json::array();
  for (const auto & k : c.control.keep_outs) keep.push_back({{"phase", k.phase}, {"radius_fraction", k.radius_fraction}, {"margin_fraction", k.margin_fraction}});
  const auto & t = c.control.target;
  return {
    {"model", c.model},
    {"pendulum",
     {{"length", c.pendulum.length},
      {"mass", c.pendulum.mass},
      {"gravity", c.pendulum.gravity},
      {"lower_damping", c.pendulum.lower_damping},
      {"torque_limit", to_std(c.pendulum.torque_limit)}}},
    {"chain",
     {{"links", c.chain.links},
      {"link_length", c.chain.link_length},
      {"link_mass", c.chain.link_mass},
      {"gravity", c.chain.gravity},
      {"joint_stiffness", c.chain.joint_stiffness},
      {"joint_damping", c.chain.joint_damping},
      {"actuated_joints", c.chain.actuated_joints},
      {"torque_limit", c.chain.torque_limit}}},
    {"seed", c.seed},
    {"grid", c.grid},
    {"collection",
     {{"decays_per_input", c.collection.decays_per_input},
      {"decay_duration", c.collection.decay_duration},
      {"sample_dt", c.collection.sample_dt},
      {"integration_dt", c.collection.integration_dt},
      {"perturbation", to_std(c.collection.perturbation)},
      {"perturbation_modes", c.collection.perturbation_modes},
      {"controlled_per_input", c.collection.controlled_per_input},
      {"controlled_duration", c.collection.controlled_duration},
      {"knot_spacing", c.collection.knot_spacing},
      {"control_amplitude", to_std(c.collection.control_amplitude)}}},
    {"embedding", {{"copies", c.embedding.copies}, {"lag", c.embedding.lag}}},
    {"fit",
     {{"d", c.fit.static_fit.d},
      {"n_w", c.fit.static_fit.n_w},
      {"n_r", c.fit.static_fit.n_r},
      {"ridge", c.fit.static_fit.ridge},
      {"require_stable", c.fit.static_fit.require_stable},
      {"fixed_chart", c.fixed_chart},
      {"truncate_to", c.fit.assemble.truncate_to},
      {"split_fraction", c.fit.assemble.split_fraction},
      {"settle_tolerance", c.fit.assemble.settle_tolerance},
      {"n_s", c.fit.n_s},
      {"n_i", c.fit.n_i},
      {"qpr_order", c.fit.sampler.order},
      {"midw_radius", c.fit.sampler.radius},
      {"midw_exponent", c.fit.sampler.exponent}}},
    {"samplers", c.samplers},
    {"baselines",
     {{"tpwl", c.baselines.tpwl},
      {"tpwl_basis", c.baselines.tpwl_basis},
      {"tpwl_threshold", c.baselines.tpwl_threshold},
      {"tpwl_count", c.baselines.tpwl_count},
      {"tpwl_duration", c.baselines.tpwl_duration},
      {"tpwl_knot_spacing", c.baselines.tpwl_knot_spacing},
      {"koopman", c.baselines.koopman},
      {"koopman_observable", c.baselines.koopman_observable},
      {"koopman_lag", c.baselines.koopman_lag},
      {"koopman_q", c.baselines.koopman_q},
      {"koopman_r", c.baselines.koopman_r}}},
    {"openloop",
     {{"fraction", c.openloop.fraction},
      {"horizon", c.openloop.horizon},
      {"sampler", c.openloop.sampler},
      {"variants", c.openloop.variants}}},
    {"control",
     {{"horizon", c.control.horizon},
      {"substeps", c.control.substeps},
      {"apply_substeps", c.control.apply_substeps},
      {"q_weight", c.control.q_weight},
      {"r_weight", c.control.r_weight},
      {"integration_dt", c.control.integration_dt},
      {"sampler", c.control.sampler},
      {"anchor", c.control.anchor},
      {"variants", c.control.variants},
      {"keep_outs", keep},
      {"target",
       {{"kind", t.kind},
        {"amplitude", t.amplitude},
        {"period", t.period},
        {"slowness", t.slowness},
        {"duration", t.duration},
        {"dt", t.dt},
        {"seed", t.seed},
        {"perlin_octaves", t.perlin_octaves}}}}},
  };
}

/**
 * @brief Parses a configuration document over `base`. Keys that are absent keep their base
 * value; unknown keys and malformed values raise a precondition error.
 *
 * A top-level "preset" key ("pendulum-openloop" or "pendulum-control") selects the base.
 */
inline RunConfig parse_config(const Json & j, RunConfig c = {})
{
  using namespace detail;
  check_keys(j,
             {"preset", "model", "pendulum", "chain", "seed", "grid", "collection", "embedding", "fit", "samplers",
              "baselines", "openloop", "control", "description"},
             "root");
  if (j.contains("preset")) {
    const auto p = j.at("preset").get<std::string>();
    require(p == "pendulum-openloop" || p == "pendulum-control", "config: unknown preset '" + p + "'");
    c = p == "pendulum-openloop" ? pendulum_openloop_defaults() : pendulum_control_defaults();
  }
  read(j, "model", c.model);
  require(c.model == "double-pendulum" || c.model == "chain-proxy",
          "config: model must be 'double-pendulum' or 'chain-proxy'");
  if (j.contains("pendulum")) {
    const Json & s = j.at("pendulum");
    check_keys(s, {"length", "mass", "gravity", "lower_damping", "torque_limit"}, "pendulum");
    read(s, "length", c.pendulum.length);
    read(s, "mass", c.pendulum.mass);
    read(s, "gravity", c.pendulum.gravity);
    read(s, "lower_damping", c.pendulum.lower_damping);
    read_vec(s, "torque_limit", c.pendulum.torque_limit);
  }
  if (j.contains("chain")) {
    const Json & s = j.at("chain");
    check_keys(s,
               {"links", "link_length", "link_mass", "gravity", "joint_stiffness", "joint_damping", "actuated_joints",
                "torque_limit"},
               "chain");
    read(s, "links", c.chain.links);
    read(s, "link_length", c.chain.link_length);
    read(s, "link_mass", c.chain.link_mass);
    read(s, "gravity", c.chain.gravity);
    read(s, "joint_stiffness", c.chain.joint_stiffness);
    read(s, "joint_damping", c.chain.joint_damping);
    read(s, "actuated_joints", c.chain.actuated_joints);
    read(s, "torque_limit", c.chain.torque_limit);
  }
  read(j, "seed", c.seed);
  read(j, "grid", c.grid);
  GridSpec::parse(c.grid);
  if (j.contains("collection")) {
    const Json & s = j.at("collection");
    check_keys(s,
               {"decays_per_input", "decay_duration", "sample_dt", "integration_dt", "perturbation",
                "perturbation_modes", "controlled_per_input", "controlled_duration", "knot_spacing",
                "control_amplitude"},
               "collection");
    auto & cs = c.collection;
    read(s, "decays_per_input", cs.decays_per_input);
    read(s, "decay_duration", cs.decay_duration);
    read(s, "sample_dt", cs.sample_dt);
    read(s, "integration_dt", cs.integration_dt);
    read_vec(s, "perturbation", cs.perturbation);
    read(s, "perturbation_modes", cs.perturbation_modes);
    read(s, "controlled_per_input", cs.controlled_per_input);
    read(s, "controlled_duration", cs.controlled_duration);
    read(s, "knot_spacing", cs.knot_spacing);
    read_vec(s, "control_amplitude", cs.control_amplitude);
  }
  if (j.contains("embedding")) {
    const Json & s = j.at("embedding");
    check_keys(s, {"copies", "lag"}, "embedding");
    read(s, "copies", c.embedding.copies);
    read(s, "lag", c.embedding.lag);
  }
  if (j.contains("fit")) {
    const Json & s = j.at("fit");
    check_keys(s,
               {"d", "n_w", "n_r", "ridge", "require_stable", "fixed_chart", "truncate_to", "split_fraction",
                "settle_tolerance", "n_s", "n_i", "qpr_order", "midw_radius", "midw_exponent"},
               "fit");
    auto & f = c.fit;
    read(s, "d", f.static_fit.d);
    read(s, "n_w", f.static_fit.n_w);
    read(s, "n_r", f.static_fit.n_r);
    read(s, "ridge", f.static_fit.ridge);
    read(s, "require_stable", f.static_fit.require_stable);
    read(s, "fixed_chart", c.fixed_chart);
    read(s, "truncate_to", f.assemble.truncate_to);
    read(s, "split_fraction", f.assemble.split_fraction);
    read(s, "settle_tolerance", f.assemble.settle_tolerance);
    read(s, "n_s", f.n_s);
    read(s, "n_i", f.n_i);
    read(s, "qpr_order", f.sampler.order);
    read(s, "midw_radius", f.sampler.radius);
    read(s, "midw_exponent", f.sampler.exponent);
  }
  read(j, "samplers", c.samplers);
  require(!c.samplers.empty(), "config: at least one sampler required");
  for (const auto & s : c.samplers) sampler_named(s, c.fit.sampler);
  if (j.contains("baselines")) {
    const Json & s = j.at("baselines");
    check_keys(s,
               {"tpwl", "tpwl_basis", "tpwl_threshold", "tpwl_count", "tpwl_duration", "tpwl_knot_spacing", "koopman",
                "koopman_observable", "koopman_lag", "koopman_q", "koopman_r"},
               "baselines");
    auto & b = c.baselines;
    read(s, "tpwl", b.tpwl);
    read(s, "tpwl_basis", b.tpwl_basis);
    read(s, "tpwl_threshold", b.tpwl_threshold);
    read(s, "tpwl_count", b.tpwl_count);
    read(s, "tpwl_duration", b.tpwl_duration);
    read(s, "tpwl_knot_spacing", b.tpwl_knot_spacing);
    read(s, "koopman", b.koopman);
    read(s, "koopman_observable", b.koopman_observable);
    read(s, "koopman_lag", b.koopman_lag);
    read(s, "koopman_q", b.koopman_q);
    read(s, "koopman_r", b.koopman_r);
    require(b.koopman_observable == "state" || b.koopman_observable == "delay",
            "config: koopman_observable must be 'state' or 'delay'");
  }
  if (j.contains("openloop")) {
    const Json & s = j.at("openloop");
    check_keys(s, {"fraction", "horizon", "sampler", "variants"}, "openloop");
    read(s, "fraction", c.openloop.fraction);
    read(s, "horizon", c.openloop.horizon);
    read(s, "sampler", c.openloop.sampler);
    read(s, "variants", c.openloop.variants);
  }
  if (j.contains("control")) {
    const Json & s = j.at("control");
    check_keys(s,
               {"horizon", "substeps", "apply_substeps", "q_weight", "r_weight", "integration_dt", "sampler", "anchor",
                "variants", "target", "keep_outs"},
               "control");
    auto & cc = c.control;
    read(s, "horizon", cc.horizon);
    read(s, "substeps", cc.substeps);
    read(s, "apply_substeps", cc.apply_substeps);
    read(s, "q_weight", cc.q_weight);
    read(s, "r_weight", cc.r_weight);
    read(s, "integration_dt", cc.integration_dt);
    read(s, "sampler", cc.sampler);
    read(s, "anchor", cc.anchor);
    read(s, "variants", cc.variants);
    require(cc.anchor == "steady-state" || cc.anchor == "observed", "config: anchor must be steady-state or observed");
    if (s.contains("target")) {
      const Json & t = s.at("target");
      check_keys(t, {"kind", "amplitude", "period", "slowness", "duration", "dt", "seed", "perlin_octaves"}, "target");
      read(t, "kind", cc.target.kind);
      read(t, "amplitude", cc.target.amplitude);
      read(t, "period", cc.target.period);
      read(t, "slowness", cc.target.slowness);
      read(t, "duration", cc.target.duration);
      read(t, "dt", cc.target.dt);
      read(t, "seed", cc.target.seed);
      read(t, "perlin_octaves", cc.target.perlin_octaves);
      require(cc.target.kind == "figure8" || cc.target.kind == "perlin" || cc.target.kind == "rest",
              "config: target kind must be figure8, perlin or rest");
    }
    if (s.contains("keep_outs")) {
      cc.keep_outs.clear();
      for (const auto & k : s.at("keep_outs")) {
        check_keys(k, {"phase", "radius_fraction", "margin_fraction"}, "keep_outs");
        KeepOutSpec ko;
        read(k, "phase", ko.phase);
        read(k, "radius_fraction", ko.radius_fraction);
        read(k, "margin_fraction", ko.margin_fraction);
        require(ko.radius_fraction > 0, "config: keep-out radius must be positive");
        require(ko.margin_fraction >= 0, "config: keep-out margin must be non-negative");
        cc.keep_outs.push_back(ko);
      }
    }
    for (const auto & v : cc.variants)
      require(v == "assm" || v == "first-order" || v == "zeroth-order" || v == "koopman" || v == "tpwl",
              "config: unknown control variant '" + v + "'");
  }
  c.collection.seed = c.seed;
  c.collection.workers = 0;
  return c;
}

inline RunConfig load_config(const fs::path & path)
{
  const Json j = read_json(path);
  try {
    return parse_config(j);
  } catch (const Json::exception & e) {
    throw Error(ErrorKind::precondition, "config '" + path.string() + "': " + e.what());
  }
}

/// FNV-1a hash of the canonical (fully resolved) configuration.
inline std::string config_hash(const RunConfig & c) { return hex64(fnv1a(config_to_json(c).dump())); }

// ---------------------------------------------------------------------------------------------
// Shared helpers

inline std::unique_ptr<DynamicsModel> make_model(const RunConfig & c)
{
  if (c.model == "double-pendulum") return std::make_unique<DoublePendulumModel>(c.pendulum);
  return std::make_unique<ChainProxyModel>(c.chain);
}

struct StaticInputPlan
{
  std::vector<Vec> inputs;
  std::vector<Vec> guesses;
};

inline StaticInputPlan static_input_plan(const DynamicsModel & model, const RunConfig & c)
{
  const GridSpec g = GridSpec::parse(c.grid);
  const auto pts = g.points();
  StaticInputPlan out;
  if (g.space == GridSpec::Space::input) {
    require(static_cast<Index>(g.counts.size()) == model.input_dim(), "grid: input grid dimension differs from n_u");
    out.inputs = pts;
    return out;
  }
  out.inputs = static_inputs_for_configurations(model, pts);
  for (const auto & q : pts) {
    Vec x = Vec::Zero(model.state_dim());
    x.head(q.size()) = q;
    out.guesses.push_back(x);
  }
  return out;
}

inline DictionaryFitSpec resolved_fit_spec(const RunConfig & c, Index embedded_dim)
{
  DictionaryFitSpec f = c.fit;
  if (c.fixed_chart) {
    require(f.static_fit.d == embedded_dim, "config: fixed_chart requires d equal to the embedding dimension");
    f.static_fit.fixed_chart = Mat::Identity(embedded_dim, embedded_dim);
  }
  return f;
}

/// Observables of all decays mapped to the workspace.
inline std::vector<Trajectory> workspace_decays(const DynamicsModel & model, const std::vector<RawGroup> & groups)
{
  const Mat c = model.workspace_map();
  std::vector<Trajectory> out;
  for (const auto & g : groups)
    for (const auto & d : g.decays) {
      Trajectory w = d;
      w.values = c * d.values;
      out.push_back(std::move(w));
    }
  return out;
}

/// Workspace map acting on the (possibly delay-embedded) observation: the newest copy.
inline Mat embedded_workspace_map(const DynamicsModel & model, const EmbeddingSpec & e)
{
  const Mat c = model.workspace_map();
  Mat out = Mat::Zero(c.rows(), c.cols() * e.copies);
  out.rightCols(c.cols()) = c;
  return out;
}

// ---------------------------------------------------------------------------------------------
// collect

inline void save_dataset(const fs::path & dir, const Dataset & ds, const Provenance & prov)
{
  Json groups = Json::array();
  for (const auto & g : ds.groups) {
    Json decays = Json::array(), controlled = Json::array();
    for (std::size_t k = 0; k < g.raw.decays.size(); ++k) {
      const std::string f = g.raw.name + "/decay_" + std::to_string(k) + ".csv";
      write_trajectory_csv(dir / f, g.raw.decays[k], prov, "y");
      decays.push_back(f);
    }
    for (std::size_t k = 0; k < g.raw.controlled.size(); ++k) {
      const std::string f = g.raw.name + "/controlled_" + std::to_string(k) + ".csv";
      write_trajectory_csv(dir / f, g.raw.controlled[k], prov, "y");
      controlled.push_back(f);
    }
    Json spec_re = Json::array(), spec_im = Json::array();
    for (Index i = 0; i < g.spectrum.size(); ++i) {
      spec_re.push_back(g.spectrum[i].real());
      spec_im.push_back(g.spectrum[i].imag());
    }
    groups.push_back({{"name", g.raw.name},
                      {"static_input", detail::to_std(g.raw.static_input)},
                      {"equilibrium", detail::to_std(g.equilibrium)},
                      {"steady_observable", detail::to_std(g.raw.steady_observable.value_or(Vec()))},
                      {"spectrum_real", spec_re},
                      {"spectrum_imag", spec_im},
                      {"decays", decays},
                      {"controlled", controlled}});
  }
  Json failures = Json::array();
  for (const auto & f : ds.failures)
    failures.push_back({{"index", f.index},
                        {"static_input", detail::to_std(f.static_input)},
                        {"kind", to_string(f.kind)},
                        {"message", f.message}});
  Json params = Json::object();
  for (const auto & [k, v] : ds.model_parameters) params[k] = v;
  write_json(dir / "manifest.json",
             {{"kind", "dataset"},
              {"model", ds.model_name},
              {"model_parameters", params},
              {"group_count", ds.groups.size()},
              {"decay_count", [&] {
                 std::size_t n = 0;
                 for (const auto & g : ds.groups) n += g.raw.decays.size();
                 return n;
               }()},
              {"groups", groups},
              {"failures", failures}},
             prov);
}

struct LoadedGroup
{
  RawGroup raw;
  Vec equilibrium;
  Eigen::VectorXcd spectrum;
};

inline std::vector<LoadedGroup> load_dataset(const fs::path & dir)
{
  const Json m = read_json(dir / "manifest.json");
  require(m.value("kind", std::string()) == "dataset", "'" + (dir / "manifest.json").string() + "' is not a dataset");
  std::vector<LoadedGroup> out;
  for (const auto & g : m.at("groups")) {
    LoadedGroup lg;
    lg.raw.name = g.at("name").get<std::string>();
    try {
      const auto su = g.at("static_input").get<std::vector<double>>();
      lg.raw.static_input = Eigen::Map<const Vec>(su.data(), static_cast<Index>(su.size()));
      const auto eq = g.at("equilibrium").get<std::vector<double>>();
      lg.equilibrium = Eigen::Map<const Vec>(eq.data(), static_cast<Index>(eq.size()));
      const auto so = g.at("steady_observable").get<std::vector<double>>();
      if (!so.empty()) lg.raw.steady_observable = Vec(Eigen::Map<const Vec>(so.data(), static_cast<Index>(so.size())));
      const auto re = g.at("spectrum_real").get<std::vector<double>>();
      const auto im = g.at("spectrum_imag").get<std::vector<double>>();
      lg.spectrum.resize(static_cast<Index>(re.size()));
      for (std::size_t i = 0; i < re.size(); ++i) lg.spectrum[static_cast<Index>(i)] = {re[i], im[i]};
      for (const auto & f : g.at("decays"))
        lg.raw.decays.push_back(read_trajectory_csv(dir / f.get<std::string>(), TrajectoryLabel::decay));
      for (const auto & f : g.at("controlled"))
        lg.raw.controlled.push_back(read_trajectory_csv(dir / f.get<std::string>(), TrajectoryLabel::controlled));
    } catch (const Error & e) {
      throw Error(e.kind(), "dataset group '" + lg.raw.name + "': " + e.what());
    } catch (const Json::exception & e) {
      throw Error(ErrorKind::precondition, "dataset group '" + lg.raw.name + "': " + e.what());
    }
    out.push_back(std::move(lg));
  }
  require(!out.empty(), "dataset '" + dir.string() + "' has no groups");
  return out;
}

inline std::vector<RawGroup> raw_of(const std::vector<LoadedGroup> & groups)
{
  std::vector<RawGroup> out;
  for (const auto & g : groups) out.push_back(g.raw);
  return out;
}

struct CollectSummary
{
  std::size_t groups{0};
  std::size_t decays{0};
  std::size_t failures{0};
};

inline CollectSummary run_collect(const RunConfig & c, const fs::path & out)
{
  const auto model = make_model(c);
  const auto plan = static_input_plan(*model, c);
  const Dataset ds = collect_dataset(*model, plan.inputs, c.collection, plan.guesses);
  save_dataset(out / "dataset", ds, {config_hash(c)});
  CollectSummary s;
  s.groups = ds.groups.size();
  for (const auto & g : ds.groups) s.decays += g.raw.decays.size();
  s.failures = ds.failures.size();
  return s;
}

// ---------------------------------------------------------------------------------------------
// train

/// Koopman snapshots from the controlled responses and static pairs from the group steady states.
inline KoopmanModel train_koopman(const DynamicsModel & model, const std::vector<LoadedGroup> & groups,
                                  const BaselineSpec & b)
{
  const Mat c = model.workspace_map();
  const bool delay = b.koopman_observable == "delay";
  std::vector<Mat> ys, yds, us;
  Index total = 0;
  for (const auto & g : groups)
    for (const auto & r : g.raw.controlled) {
      Trajectory obs = r;
      if (delay) {
        EmbeddingSpec e{2, b.koopman_lag};
        Trajectory z = r;
        z.values = c * r.values;
        obs = delay_embed(z, e);
      }
      const Trajectory d = finite_difference(obs);
      ys.push_back(obs.values);
      yds.push_back(d.values);
      us.push_back(obs.inputs);
      total += obs.size();
    }
  require(total > 0, "koopman: dataset has no controlled responses");
  Mat y(ys.front().rows(), total), yd(ys.front().rows(), total), u(us.front().rows(), total);
  Index o = 0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    y.middleCols(o, ys[i].cols()) = ys[i];
    yd.middleCols(o, ys[i].cols()) = yds[i];
    u.middleCols(o, ys[i].cols()) = us[i];
    o += ys[i].cols();
  }
  Mat zs(c.rows(), static_cast<Index>(groups.size())), uss(model.input_dim(), static_cast<Index>(groups.size()));
  for (std::size_t i = 0; i < groups.size(); ++i) {
    zs.col(static_cast<Index>(i)) = c * model.observe(groups[i].equilibrium);
    uss.col(static_cast<Index>(i)) = groups[i].raw.static_input;
  }
  KoopmanModel km = koopman_fit(y, yd, u, zs, uss);
  const Index w = c.rows();
  if (delay) {
    km.lift = Mat::Zero(2 * w, w);
    km.lift.topRows(w).setIdentity();
    km.lift.bottomRows(w).setIdentity();
  } else {
    km.lift = c.transpose();
  }
  const Index n = km.A.rows();
  koopman_set_gain(km, b.koopman_q * Mat::Identity(n, n), b.koopman_r * Mat::Identity(u.rows(), u.rows()));
  return km;
}

inline TPWLModel train_tpwl(const DynamicsModel & model, const std::vector<LoadedGroup> & groups,
                            const BaselineSpec & b, std::uint64_t seed)
{
  Vec lo = groups.front().raw.static_input, hi = lo;
  for (const auto & g : groups) {
    lo = lo.cwiseMin(g.raw.static_input);
    hi = hi.cwiseMax(g.raw.static_input);
  }
  TPWLDataSpec ds;
  ds.count = b.tpwl_count;
  ds.duration = b.tpwl_duration;
  ds.knot_spacing = b.tpwl_knot_spacing;
  ds.input_range = Box{lo, hi};
  const auto responses = tpwl_training_responses(model, model.rest_state(), ds, derive_seed(seed, 3, 0));
  return tpwl_train(model, responses, {b.tpwl_basis, b.tpwl_threshold});
}

/// Uniform random inputs in `box`.
inline std::vector<Vec> random_inputs(const Box & box, int count, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Vec> out;
  for (int k = 0; k < count; ++k) {
    Vec u(box.dim());
    for (Index i = 0; i < box.dim(); ++i) u[i] = box.lo[i] + unif(rng) * (box.hi[i] - box.lo[i]);
    out.push_back(u);
  }
  return out;
}

struct ManifoldResidual
{
  double refined{0};     ///< max |f(S(u)) + g(S(u), u)| with S refined by Newton
  double polynomial{0};  ///< same with the regressed polynomial S
};

inline ManifoldResidual critical_manifold_residual(const DynamicsModel & model, const CriticalManifoldMap & cm,
                                                   const std::vector<Vec> & inputs)
{
  ManifoldResidual r;
  for (const auto & u : inputs) {
    r.refined = std::max(r.refined, model.rhs(refined_steady_state(model, cm, u), u).norm());
    r.polynomial = std::max(r.polynomial, model.rhs(cm.forward(u), u).norm());
  }
  return r;
}

/// Bounding box of the dictionary's static inputs.
inline Box static_input_box(const ASSMDictionary & dict)
{
  Vec lo = dict.nodes().front().bundle.model.static_input, hi = lo;
  for (const auto & n : dict.nodes()) {
    lo = lo.cwiseMin(n.bundle.model.static_input);
    hi = hi.cwiseMax(n.bundle.model.static_input);
  }
  return {lo, hi};
}

struct TrainSummary
{
  std::shared_ptr<const ASSMDictionary> dictionary;  ///< built with the first configured sampler
  double mean_test_nmte{0};
  double max_test_nmte{0};
  double manifold_residual{0};
  double manifold_residual_polynomial{0};
  double round_trip{0};
  double box_width{0};
  std::size_t failures{0};
};

inline TrainSummary run_train(const RunConfig & c, const fs::path & out)
{
  const Provenance prov{config_hash(c)};
  const auto model = make_model(c);
  const auto groups = load_dataset(out / "dataset");
  const TrainingSet ts = assemble_training_set(raw_of(groups), c.embedding, c.fit.assemble);
  DictionaryFitSpec spec = resolved_fit_spec(c, ts.groups.front().anchor.size());
  spec.sampler = detail::sampler_named(c.samplers.front(), c.fit.sampler);
  const DictionaryBuild build = fit_dictionary(ts, spec);

  TrainSummary s;
  s.dictionary = build.dictionary;
  s.failures = build.failures.size();
  for (const auto & name : c.samplers) {
    const auto d = with_sampler(*build.dictionary, detail::sampler_named(name, c.fit.sampler));
    write_json(out / "models" / ("dictionary_" + name + ".json"), to_json(*d), prov);
  }

  CsvTable nodes;
  nodes.columns = {"name"};
  const Index g = build.dictionary->grid_coordinates().cols();
  for (Index i = 0; i < g; ++i) nodes.columns.push_back("q" + std::to_string(i));
  for (const char * col : {"test_nmte", "residual_energy", "spectral_gap"}) nodes.columns.push_back(col);
  Json node_json = Json::array();
  double sum = 0;
  for (const auto & n : build.dictionary->nodes()) {
    // no gap exists when the SSM spans the full state space
    double gap = std::numeric_limits<double>::quiet_NaN();
    for (const auto & lg : groups)
      if (lg.raw.name == n.name && c.fit.static_fit.d < lg.spectrum.size())
        gap = spectral_gap_ratio(lg.spectrum, c.fit.static_fit.d);
    std::vector<std::string> row{n.name};
    for (Index i = 0; i < g; ++i) row.push_back(format_double(n.q[i]));
    row.push_back(format_double(n.report.test_nmte));
    row.push_back(format_double(n.report.residual_energy));
    row.push_back(format_double(gap));
    nodes.add_row(std::move(row));
    node_json.push_back({{"name", n.name}, {"test_nmte", n.report.test_nmte}, {"spectral_gap", gap}});
    sum += n.report.test_nmte;
    s.max_test_nmte = std::max(s.max_test_nmte, n.report.test_nmte);
  }
  s.mean_test_nmte = sum / static_cast<double>(build.dictionary->nodes().size());
  write_csv(out / "reports" / "training_nodes.csv", nodes, prov);

  const Box ubox = static_input_box(*build.dictionary);
  s.box_width = (ubox.hi - ubox.lo).maxCoeff();
  const auto & cm = build.dictionary->critical_manifold();
  const auto probes = random_inputs(ubox, 100, derive_seed(c.seed, 4, 0));
  s.round_trip = cm.round_trip_error(probes);
  // the residual needs S to return full states; other observables leave it undefined
  s.manifold_residual = s.manifold_residual_polynomial = std::numeric_limits<double>::quiet_NaN();
  if (cm.s_coefficients().rows() == model->state_dim()) {
    const ManifoldResidual res = critical_manifold_residual(*model, cm, probes);
    s.manifold_residual = res.refined;
    s.manifold_residual_polynomial = res.polynomial;
  }

  Json failures = Json::array();
  for (const auto & f : build.failures) failures.push_back({{"group", f.group}, {"kind", to_string(f.kind)}, {"message", f.message}});
  Json warnings = Json::array();
  for (const auto & w : build.alignment_warnings) warnings.push_back(w.model);
  Json report = {{"kind", "training-report"},
                 {"mean_test_nmte", s.mean_test_nmte},
                 {"max_test_nmte", s.max_test_nmte},
                 {"critical_manifold_residual", s.manifold_residual},
                 {"critical_manifold_residual_polynomial", s.manifold_residual_polynomial},
                 {"chart_round_trip", s.round_trip},
                 {"chart_round_trip_relative", s.box_width > 0 ? s.round_trip / s.box_width : 0.0},
                 {"qpr_order", build.dictionary->qpr_order()},
                 {"midw_radius", build.dictionary->radius()},
                 {"nodes", node_json},
                 {"failures", failures},
                 {"alignment_warnings", warnings}};

  if (c.baselines.tpwl) {
    const TPWLModel tp = train_tpwl(*model, groups, c.baselines, c.seed);
    write_json(out / "models" / "tpwl.json", to_json(tp), prov);
    report["tpwl_models"] = tp.size();
  }
  if (c.baselines.koopman) {
    const KoopmanModel km = train_koopman(*model, groups, c.baselines);
    write_json(out / "models" / "koopman.json", to_json(km), prov);
    report["koopman_care_residual"] = km.care.residual;
    report["koopman_open_loop_stable"] = km.open_loop_stable;
  }
  write_json(out / "reports" / "training_report.json", report, prov);
  return s;
}

// ---------------------------------------------------------------------------------------------
// openloop

inline ModelOrder order_named(const std::string & v)
{
  if (v == "assm") return ModelOrder::full;
  if (v == "first-order") return ModelOrder::first;
  if (v == "zeroth-order") return ModelOrder::zeroth;
  throw Error(ErrorKind::precondition, "unknown model variant '" + v + "'");
}

inline std::shared_ptr<const ASSMDictionary> load_dictionary(const fs::path & out, const std::string & sampler)
{
  return dictionary_from_json(read_json(out / "models" / ("dictionary_" + sampler + ".json")));
}

struct OpenLoopVariant
{
  std::string variant;
  ScatterReport report;
};

inline std::vector<OpenLoopVariant> run_openloop(const RunConfig & c, const fs::path & out)
{
  const Provenance prov{config_hash(c)};
  const auto model = make_model(c);
  const auto dict = load_dictionary(out, c.openloop.sampler);
  const auto groups = load_dataset(out / "dataset");
  std::vector<Trajectory> responses;
  for (const auto & g : groups)
    for (const auto & r : g.raw.controlled) responses.push_back(c.embedding.copies > 1 ? delay_embed(r, c.embedding) : r);
  require(!responses.empty(), "openloop: dataset has no controlled responses");

  const auto decays = workspace_decays(*model, raw_of(groups));
  const Mat cw = embedded_workspace_map(*model, c.embedding);
  Json slowness = Json::array();
  for (const auto & r : responses) {
    TargetTrack path;
    path.times = r.times;
    path.points = cw * r.values;
    slowness.push_back(slowness_measure(path, decays));
  }

  std::vector<OpenLoopVariant> result;
  Json variants = Json::array();
  for (const auto & v : c.openloop.variants) {
    const ModelFamily fam(dict, order_named(v));
    OpenLoopVariant ov{v, {}};
    CsvTable tab;
    tab.columns = {"response", "time"};
    for (Index i = 0; i < dict->grid_coordinates().cols(); ++i) tab.columns.push_back("q" + std::to_string(i));
    tab.columns.push_back("nmte");
    tab.columns.push_back("extrapolated");
    double sum = 0, runtime = 0;
    std::size_t below = 0, count = 0;
    for (std::size_t k = 0; k < responses.size(); ++k) {
      ScatterOptions so{c.openloop.fraction, c.openloop.horizon, derive_seed(c.seed, 6, k)};
      const ScatterReport rep = scatter_validation(fam, responses[k], model->input_box(), so);
      for (const auto & p : rep.points) {
        std::vector<double> row{static_cast<double>(k), p.time};
        for (Index i = 0; i < p.q.size(); ++i) row.push_back(p.q[i]);
        for (Index i = p.q.size(); i < dict->grid_coordinates().cols(); ++i) row.push_back(0.0);
        row.push_back(p.nmte);
        row.push_back(p.extrapolated ? 1.0 : 0.0);
        tab.add_row(row);
        ov.report.points.push_back(p);
        sum += p.nmte;
        below += p.nmte <= 0.1;
        ++count;
      }
      runtime += rep.mean_runtime * static_cast<double>(rep.points.size());
    }
    ov.report.mean_nmte = sum / static_cast<double>(count);
    ov.report.fraction_below_10 = static_cast<double>(below) / static_cast<double>(count);
    ov.report.mean_runtime = runtime / static_cast<double>(count);
    write_csv(out / "openloop" / ("scatter_" + v + ".csv"), tab, prov);
    variants.push_back({{"variant", v},
                        {"points", count},
                        {"mean_nmte", ov.report.mean_nmte},
                        {"fraction_below_10", ov.report.fraction_below_10},
                        {"mean_runtime_s", ov.report.mean_runtime}});
    result.push_back(std::move(ov));
  }
  write_json(out / "openloop" / "openloop_report.json",
             {{"kind", "openloop-report"}, {"response_slowness", slowness}, {"variants", variants}}, prov);
  return result;
}

// ---------------------------------------------------------------------------------------------
// control

/// Figure-8 in the first two workspace coordinates: (A sin wt, A/2 sin 2wt).
inline TargetTrack figure8(double amplitude, double period, double duration, double dt, Index dim = 2)
{
  require(amplitude > 0 && period > 0 && duration > 0 && dt > 0, "figure-8: invalid parameters");
  require(dim >= 2, "figure-8: workspace must have at least two coordinates");
  const auto n = static_cast<Index>(std::llround(duration / dt));
  TargetTrack t;
  t.times.resize(n + 1);
  t.points = Mat::Zero(dim, n + 1);
  const double w = 2.0 * M_PI / period;
  for (Index k = 0; k <= n; ++k) {
    const double s = static_cast<double>(k) * dt;
    t.times[k] = s;
    t.points(0, k) = amplitude * std::sin(w * s);
    t.points(1, k) = 0.5 * amplitude * std::sin(2.0 * w * s);
  }
  return t;
}

/// Period giving the requested slowness: r_s scales with 1/period at fixed shape.
inline double figure8_period_for_slowness(double amplitude, double slowness, const std::vector<Trajectory> & decays,
                                          double dt, Index dim)
{
  require(slowness > 0, "figure-8: slowness must be positive");
  const double ref_period = 10.0;
  const double r = slowness_measure(figure8(amplitude, ref_period, ref_period, dt, dim), decays);
  return ref_period * r / slowness;
}

struct ResolvedTarget
{
  TargetTrack track;
  double period{0};
  std::vector<KeepOut> keep_outs;          ///< true regions, used for scoring
  std::vector<KeepOut> planned_keep_outs;  ///< enlarged by the planning margin
};

inline ResolvedTarget resolve_target(const DynamicsModel & model, const ControlSpec & cs,
                                     const std::vector<Trajectory> & decays)
{
  const TargetSpec & t = cs.target;
  const Index w = model.workspace_dim();
  ResolvedTarget r;
  if (t.kind == "figure8") {
    r.period = t.period > 0 ? t.period : figure8_period_for_slowness(t.amplitude, t.slowness, decays, t.dt, w);
    // round to whole controller substeps when they are whole target samples, else to samples
    const double substep = cs.horizon / cs.substeps;
    const double ratio = substep / t.dt;
    const double quantum = std::abs(ratio - std::round(ratio)) < 1e-9 && ratio >= 1 ? substep : t.dt;
    r.period = std::max(quantum, std::round(r.period / quantum) * quantum);
    r.track = figure8(t.amplitude, r.period, t.duration > 0 ? t.duration : r.period, t.dt, w);
    for (const auto & k : cs.keep_outs) {
      const double s = k.phase * r.period;
      KeepOut ko;
      ko.center = Vec::Zero(w);
      ko.center[0] = t.amplitude * std::sin(2.0 * M_PI * s / r.period);
      ko.center[1] = 0.5 * t.amplitude * std::sin(4.0 * M_PI * s / r.period);
      ko.radius = k.radius_fraction * t.amplitude;
      r.keep_outs.push_back(ko);
      ko.radius += k.margin_fraction * t.amplitude;
      r.planned_keep_outs.push_back(ko);
    }
  } else if (t.kind == "perlin") {
    r.track = generate_perlin_target(t.seed, t.duration > 0 ? t.duration : 200.0, t.dt,
                                     Box::uniform(w, -t.amplitude, t.amplitude), t.perlin_octaves);
    require(cs.keep_outs.empty(), "keep-out regions are placed along figure-8 targets only");
  } else {
    const double dur = t.duration > 0 ? t.duration : 10.0;
    r.track = figure8(1.0, 1.0, dur, t.dt, std::max<Index>(w, 2));
    r.track.points = Mat::Zero(w, r.track.times.size());
    require(cs.keep_outs.empty(), "keep-out regions are placed along figure-8 targets only");
  }
  return r;
}

inline OCPSpec ocp_spec(const DynamicsModel & model, const ControlSpec & cs, const std::vector<KeepOut> & keep_outs)
{
  OCPSpec s;
  s.horizon = cs.horizon;
  s.substeps = cs.substeps;
  s.apply_substeps = cs.apply_substeps;
  const Index w = model.workspace_dim();
  s.Q = cs.q_weight * Mat::Identity(w, w);
  s.R = cs.r_weight * Mat::Identity(model.input_dim(), model.input_dim());
  s.input_box = model.input_box();
  s.keep_outs = keep_outs;
  s.validate();
  return s;
}

struct ControlOutcome
{
  std::vector<MPCResult> results;
  ResolvedTarget target;
  double slowness{0};
};

inline ControlOutcome run_control(const RunConfig & c, const fs::path & out)
{
  const Provenance prov{config_hash(c)};
  const auto model = make_model(c);
  const auto groups = load_dataset(out / "dataset");
  const auto decays = workspace_decays(*model, raw_of(groups));

  ControlOutcome oc;
  oc.target = resolve_target(*model, c.control, decays);
  oc.slowness = slowness_measure(oc.target.track, decays);
  const OCPSpec spec = ocp_spec(*model, c.control, oc.target.planned_keep_outs);
  const Mat cw = embedded_workspace_map(*model, c.embedding);
  RunOptions ro;
  ro.integration_dt = c.control.integration_dt;
  ro.embedding = c.embedding;
  ro.workspace = model->workspace_map();
  ro.keep_outs = oc.target.keep_outs;
  const Vec x0 = model->rest_state();
  const AnchorMode anchor = c.control.anchor == "observed" ? AnchorMode::observed : AnchorMode::steady_state;

  std::shared_ptr<const ASSMDictionary> dict;
  CsvTable pareto;
  pareto.columns = {"variant", "ise", "violation_ratio", "max_violation", "plans", "mean_scp_iterations", "aborted"};
  Json summaries = Json::array();
  Json pareto_json = Json::array();
  for (const auto & v : c.control.variants) {
    std::unique_ptr<Controller> ctrl;
    if (v == "koopman") {
      ctrl = std::make_unique<KoopmanController>(koopman_from_json(read_json(out / "models" / "koopman.json")),
                                                 spec.substep(), model->input_box());
    } else if (v == "tpwl") {
      require(c.embedding.copies == 1, "tpwl control needs the full state as the observation");
      ctrl = std::make_unique<TPWLController>(tpwl_from_json(read_json(out / "models" / "tpwl.json")), spec,
                                              model->workspace_map());
    } else {
      if (!dict) dict = load_dictionary(out, c.control.sampler);
      ctrl = std::make_unique<AssmMPC>(ModelFamily(dict, order_named(v)), spec, cw, anchor);
    }
    MPCResult r = mpc_run(*model, *ctrl, oc.target.track, x0, ro);
    r.variant = v;
    r.slowness = oc.slowness;

    CsvTable tab;
    tab.columns = {"t"};
    for (Index i = 0; i < r.target.rows(); ++i) tab.columns.push_back("target" + std::to_string(i));
    for (Index i = 0; i < r.workspace.rows(); ++i) tab.columns.push_back("z" + std::to_string(i));
    for (Index i = 0; i < r.inputs.rows(); ++i) tab.columns.push_back("u" + std::to_string(i));
    for (Index k = 0; k < r.times.size(); ++k) {
      std::vector<double> row{r.times[k]};
      for (Index i = 0; i < r.target.rows(); ++i) row.push_back(r.target(i, k));
      for (Index i = 0; i < r.workspace.rows(); ++i) row.push_back(r.workspace(i, k));
      for (Index i = 0; i < r.inputs.rows(); ++i) row.push_back(r.inputs(i, k));
      tab.add_row(row);
    }
    write_csv(out / "control" / (v + ".csv"), tab, prov);

    CsvTable steps;
    steps.columns = {"t", "running_ise", "iterations", "converged", "extrapolated", "clipped"};
    double iters = 0;
    for (const auto & s : r.steps) {
      steps.add_row({s.time, s.running_ise, static_cast<double>(s.iterations), s.converged ? 1.0 : 0.0,
                     s.extrapolated ? 1.0 : 0.0, s.clipped ? 1.0 : 0.0});
      iters += s.iterations;
    }
    write_csv(out / "control" / (v + "_steps.csv"), steps, prov);
    const double mean_iters = r.steps.empty() ? 0.0 : iters / static_cast<double>(r.steps.size());
    pareto.add_row({v, format_double(r.metrics.ise), format_double(r.metrics.violation_ratio),
                    format_double(r.metrics.max_violation), std::to_string(r.steps.size()), format_double(mean_iters),
                    r.aborted ? "1" : "0"});
    Json solve_times = Json::array();
    for (const auto & s : r.steps) solve_times.push_back({{"t", s.time}, {"solve_time_s", s.solve_time}, {"running_ise", s.running_ise}});
    pareto_json.push_back({{"variant", v}, {"mean_solve_time_s", r.mean_solve_time()}, {"ise", r.metrics.ise}, {"steps", solve_times}});
    summaries.push_back({{"variant", v},
                         {"ise", r.metrics.ise},
                         {"violation_ratio", r.metrics.violation_ratio},
                         {"max_violation", r.metrics.max_violation},
                         {"slowness", r.slowness},
                         {"mean_solve_time_s", r.mean_solve_time()},
                         {"plans", r.steps.size()},
                         {"aborted", r.aborted},
                         {"abort_reason", r.abort_reason}});
    oc.results.push_back(std::move(r));
  }
  write_csv(out / "control" / "pareto.csv", pareto, prov);
  write_json(out / "control" / "pareto.json", {{"kind", "pareto"}, {"records", pareto_json}}, prov);
  Json keep = Json::array();
  for (const auto & k : oc.target.keep_outs) keep.push_back({{"center", detail::to_std(k.center)}, {"radius", k.radius}});
  write_json(out / "control" / "control_summary.json",
             {{"kind", "control-summary"},
              {"target", c.control.target.kind},
              {"period", oc.target.period},
              {"slowness", oc.slowness},
              {"keep_outs", keep},
              {"variants", summaries}},
             prov);
  return oc;
}

// ---------------------------------------------------------------------------------------------
// report

/// Collects the stage summaries present in the run directory into report.json and summary.csv.
inline Json run_report(const RunConfig & c, const fs::path & out)
{
  const Provenance prov{config_hash(c)};
  Json rep = {{"kind", "run-report"}, {"config", config_to_json(c)}};
  CsvTable tab;
  tab.columns = {"stage", "item", "metric", "value"};
  const auto add = [&](const std::string & stage, const std::string & item, const std::string & metric, double v) {
    tab.add_row({stage, item, metric, format_double(v)});
  };
  if (fs::exists(out / "dataset" / "manifest.json")) {
    const Json m = read_json(out / "dataset" / "manifest.json");
    rep["dataset"] = {{"groups", m.at("group_count")}, {"decays", m.at("decay_count")}, {"failures", m.at("failures").size()}};
    add("collect", "dataset", "groups", json_number(m.at("group_count")));
    add("collect", "dataset", "decays", json_number(m.at("decay_count")));
  }
  if (fs::exists(out / "reports" / "training_report.json")) {
    const Json t = read_json(out / "reports" / "training_report.json");
    rep["training"] = t;
    for (const char * k : {"mean_test_nmte", "max_test_nmte", "critical_manifold_residual", "chart_round_trip_relative"})
      add("train", "dictionary", k, json_number(t.at(k)));
  }
  if (fs::exists(out / "openloop" / "openloop_report.json")) {
    const Json o = read_json(out / "openloop" / "openloop_report.json");
    rep["openloop"] = o;
    for (const auto & v : o.at("variants")) {
      add("openloop", v.at("variant").get<std::string>(), "mean_nmte", json_number(v.at("mean_nmte")));
      add("openloop", v.at("variant").get<std::string>(), "fraction_below_10", v.at("fraction_below_10").get<double>());
    }
  }
  if (fs::exists(out / "control" / "control_summary.json")) {
    const Json s = read_json(out / "control" / "control_summary.json");
    rep["control"] = s;
    for (const auto & v : s.at("variants")) {
      const auto name = v.at("variant").get<std::string>();
      add("control", name, "ise", json_number(v.at("ise")));
      add("control", name, "violation_ratio", json_number(v.at("violation_ratio")));
      add("control", name, "max_violation", json_number(v.at("max_violation")));
    }
  }
  write_json(out / "report.json", rep, prov);
  write_csv(out / "summary.csv", tab, prov);
  return rep;
}

}  // namespace assm
