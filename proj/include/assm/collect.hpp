#pragma once

/**
 * @file
 * @brief Data collection about static inputs: equilibria, randomized decays and forced responses.
 */

#include "core.hpp"
#include "dynamics.hpp"
#include "embedding.hpp"
#include "signals.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace assm {

/// splitmix64 finalizer; derives independent seeds for (stream, index) pairs.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index)
{
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream * 1000003ull + index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct CollectionSpec
{
  int decays_per_input{2};
  double decay_duration{100.0};
  double sample_dt{0.01};
  double integration_dt{1e-3};
  Vec perturbation;  ///< semi-axes of the ellipsoid the decay initial states are drawn on
  int perturbation_modes{0};  ///< > 0 restricts perturbations to the slowest modes of the linearization
  int controlled_per_input{1};
  double controlled_duration{20.0};
  double knot_spacing{0.5};
  Vec control_amplitude;  ///< half widths of the input deviation box
  std::uint64_t seed{1};
  unsigned workers{0};

  IntegrateOptions integrate_options() const
  {
    const auto stride = static_cast<int>(std::llround(sample_dt / integration_dt));
    require(stride >= 1 && std::abs(stride * integration_dt - sample_dt) <= 1e-12 * sample_dt,
            "collection: sample_dt must be an integer multiple of integration_dt");
    return {integration_dt, stride};
  }
};

struct CollectedGroup
{
  RawGroup raw;
  Vec equilibrium;
  Eigen::VectorXcd spectrum;
};

struct CollectionFailure
{
  std::size_t index{0};
  Vec static_input;
  ErrorKind kind{ErrorKind::precondition};
  std::string message;
};

struct Dataset
{
  std::string model_name;
  std::vector<std::pair<std::string, double>> model_parameters;
  CollectionSpec spec;
  std::vector<CollectedGroup> groups;
  std::vector<CollectionFailure> failures;
};

/// Piecewise-linear input signal from a knot track, shifted by `offset` and clamped to `box`.
inline InputSignal track_input(TargetTrack track, Vec offset, Box box)
{
  return [track = std::move(track), offset = std::move(offset), box = std::move(box)](double t) {
    return box.clamp(offset + track(t));
  };
}

/// Orthonormal real basis of the span of the `modes` slowest eigenvectors of `a`.
inline Mat slow_subspace(const Mat & a, int modes)
{
  Eigen::EigenSolver<Mat> es(a);
  const Eigen::VectorXcd ev = es.eigenvalues();
  std::vector<Index> order(static_cast<std::size_t>(ev.size()));
  for (Index i = 0; i < ev.size(); ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](Index x, Index y) { return ev[x].real() > ev[y].real(); });
  require(modes >= 1 && modes <= a.rows(), "slow subspace: invalid mode count");
  Mat span(a.rows(), 2 * modes);
  for (int j = 0; j < modes; ++j) {
    const Eigen::VectorXcd v = es.eigenvectors().col(order[static_cast<std::size_t>(j)]);
    span.col(2 * j) = v.real();
    span.col(2 * j + 1) = v.imag();
  }
  Eigen::JacobiSVD<Mat> svd(span, Eigen::ComputeThinU);
  return svd.matrixU().leftCols(modes);
}

inline std::string group_name(std::size_t index) { return "u" + std::to_string(index); }

/**
 * @brief Equilibrium, stability check, decays and forced responses for one static input.
 *
 * Throws a precondition error when u_s is outside the input box and a stability-violation error
 * when the linearization at the equilibrium is not asymptotically stable.
 */
inline CollectedGroup collect_group(const DynamicsModel & model, const Vec & u_s, std::size_t index,
                                    const CollectionSpec & spec, const Vec & x_guess)
{
  require(model.input_box().contains(u_s, 1e-12), "static input " + std::to_string(index) + " outside input box");
  require(spec.decays_per_input >= 1, "collection: decays_per_input must be >= 1");
  const IntegrateOptions io = spec.integrate_options();
  CollectedGroup g;
  g.raw.name = group_name(index);
  g.raw.static_input = u_s;
  g.equilibrium = find_equilibrium(model, u_s, x_guess);
  const Linearization lin = linearize_at(model, g.equilibrium, u_s);
  g.spectrum = lin.eigen;
  if (!(lin.eigen[0].real() < 0))
    throw Error(ErrorKind::stability_violation, "equilibrium for static input " + std::to_string(index) +
                                                  " is not asymptotically stable");
  g.raw.steady_observable = model.observe(g.equilibrium);

  const Index n = model.state_dim();
  const Vec pert = spec.perturbation.size() == n ? spec.perturbation : Vec::Constant(n, 0.1);
  const InputSignal hold = constant_input(u_s);
  const Mat slow = spec.perturbation_modes > 0 ? slow_subspace(lin.a, spec.perturbation_modes) : Mat();
  for (int k = 0; k < spec.decays_per_input; ++k) {
    // random direction on the perturbation ellipsoid, so every decay starts at comparable amplitude
    std::mt19937_64 rng(derive_seed(spec.seed, 1, index * 1000 + static_cast<std::size_t>(k)));
    std::normal_distribution<double> normal;
    const Index m = slow.cols() > 0 ? slow.cols() : n;
    Vec c(m);
    for (Index i = 0; i < m; ++i) c[i] = normal(rng);
    if (!(c.norm() > 0)) c = Vec::Unit(m, 0);
    const Vec dir = slow.cols() > 0 ? Vec(slow * c) : c;
    const double scale = (dir.array() / pert.array().max(1e-300)).matrix().cwiseProduct(
                           (pert.array() > 0).cast<double>().matrix()).norm();
    require(scale > 0, "collection: perturbation direction has no component along the perturbation axes");
    const Vec x0 = g.equilibrium + dir / scale;
    Trajectory t = observe(model, integrate_ode(model, x0, hold, 0.0, spec.decay_duration, io));
    t.label = TrajectoryLabel::decay;
    g.raw.decays.push_back(std::move(t));
  }

  const Index n_u = model.input_dim();
  const Vec amp = spec.control_amplitude.size() == n_u ? spec.control_amplitude : Vec::Constant(n_u, 0.1);
  for (int k = 0; k < spec.controlled_per_input; ++k) {
    const auto knots = lhs_signal(derive_seed(spec.seed, 2, index * 1000 + static_cast<std::size_t>(k)),
                                  spec.controlled_duration, spec.knot_spacing, Box::symmetric(amp));
    // start from rest at the equilibrium: the first knot is pinned to zero deviation
    TargetTrack pinned = knots;
    pinned.points.col(0).setZero();
    const InputSignal u = track_input(pinned, u_s, model.input_box());
    Trajectory t = observe(model, integrate_ode(model, g.equilibrium, u, 0.0, spec.controlled_duration, io));
    t.label = TrajectoryLabel::controlled;
    g.raw.controlled.push_back(std::move(t));
  }
  return g;
}

/**
 * @brief Collects every static input in parallel. Per-point failures are recorded; the whole
 * collection fails when more than 10% of the points fail.
 */
inline Dataset collect_dataset(const DynamicsModel & model, const std::vector<Vec> & static_inputs,
                               const CollectionSpec & spec, const std::vector<Vec> & guesses = {})
{
  require(!static_inputs.empty(), "collection: no static inputs");
  Dataset ds;
  ds.model_name = model.name();
  ds.model_parameters = model.parameters();
  ds.spec = spec;
  std::vector<std::optional<CollectedGroup>> slots(static_inputs.size());
  std::vector<std::optional<CollectionFailure>> fails(static_inputs.size());
  parallel_for(
    static_inputs.size(),
    [&](std::size_t i) {
      const Vec guess = i < guesses.size() ? guesses[i] : model.rest_state();
      try {
        slots[i] = collect_group(model, static_inputs[i], i, spec, guess);
      } catch (const Error & e) {
        fails[i] = CollectionFailure{i, static_inputs[i], e.kind(), e.what()};
      }
    },
    spec.workers);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i]) ds.groups.push_back(std::move(*slots[i]));
    if (fails[i]) ds.failures.push_back(std::move(*fails[i]));
  }
  if (10 * ds.failures.size() > static_inputs.size()) {
    std::string msg = "collection: " + std::to_string(ds.failures.size()) + " of " +
                      std::to_string(static_inputs.size()) + " static inputs failed";
    for (const auto & f : ds.failures) msg += "; #" + std::to_string(f.index) + ": " + f.message;
    throw Error(ds.failures.front().kind, msg);
  }
  return ds;
}

inline std::vector<RawGroup> raw_groups(const Dataset & ds)
{
  std::vector<RawGroup> out;
  for (const auto & g : ds.groups) out.push_back(g.raw);
  return out;
}

/// Regular grid with counts[i] points per dimension spanning box (endpoints included).
inline std::vector<Vec> grid_points(const Box & box, const std::vector<int> & counts)
{
  require(box.valid() && static_cast<Index>(counts.size()) == box.dim(), "grid: dimension mismatch");
  std::vector<Vec> out;
  std::vector<int> idx(counts.size(), 0);
  for (int c : counts) require(c >= 1, "grid: counts must be >= 1");
  while (true) {
    Vec p(box.dim());
    for (Index i = 0; i < box.dim(); ++i) {
      const int c = counts[static_cast<std::size_t>(i)];
      const double a = c == 1 ? 0.5 : static_cast<double>(idx[static_cast<std::size_t>(i)]) / (c - 1);
      p[i] = box.lo[i] + a * (box.hi[i] - box.lo[i]);
    }
    out.push_back(p);
    std::size_t k = 0;
    while (k < counts.size() && ++idx[k] == counts[k]) idx[k++] = 0;
    if (k == counts.size()) break;
  }
  return out;
}

/// Static inputs holding a rod chain at each configuration (angles) in `configs`.
inline std::vector<Vec> static_inputs_for_configurations(const DynamicsModel & model, const std::vector<Vec> & configs)
{
  std::vector<Vec> out;
  const Index n = model.state_dim();
  for (const auto & q : configs) {
    Vec x = Vec::Zero(n);
    x.head(q.size()) = q;
    out.push_back(find_static_input(model, x));
  }
  return out;
}

}  // namespace assm
