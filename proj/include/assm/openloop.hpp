#pragma once

/**
 * @file
 * @brief Open-loop prediction with sampled model families and the short-horizon scatter
 * validation protocol.
 */

#include "core.hpp"
#include "dictionary.hpp"
#include "dynamics.hpp"
#include "embedding.hpp"
#include "signals.hpp"
#include "trajectory.hpp"

#include <chrono>
#include <random>
#include <vector>

namespace assm {

/// Input split into a slowly varying static part and a deviation: u(t) = u_s(t) + u_d(t).
struct SplitInput
{
  InputSignal slow;
  InputSignal deviation;  ///< may be empty (zero deviation)

  Vec total(double t) const { return deviation ? Vec(slow(t) + deviation(t)) : slow(t); }
};

/**
 * @brief Static inputs holding the configurations of `track` (first rows of the state), sampled
 * at the track times and linearly interpolated.
 */
inline InputSignal static_input_track(const DynamicsModel & model, const TargetTrack & track)
{
  track.validate();
  Mat us(model.input_dim(), track.size());
  for (Index k = 0; k < track.size(); ++k) {
    Vec x = Vec::Zero(model.state_dim());
    x.head(track.dim()) = track.points.col(k);
    us.col(k) = find_static_input(model, x);
  }
  return [times = track.times, us](double t) { return interpolate_columns(times, us, t); };
}

/// Scalar deviation signal applied identically to every input channel.
inline InputSignal broadcast_deviation(const Trajectory & scalar, Index n_u)
{
  return [times = scalar.times, v = scalar.values, n_u](double t) {
    return Vec::Constant(n_u, interpolate_columns(times, v, t)[0]);
  };
}

/**
 * @brief Predicts the observable under `input` with the family sampled along the steady state
 * of the slow input, q(t) = q(S(u_s(t))).
 *
 * The zeroth-order family treats the whole input as the deviation from zero. Returns observables
 * sampled every dt on [t0, t1]; throws model-domain-exceeded when the reduced state blows up.
 */
inline Trajectory predict_open_loop(const ModelFamily & family, const SplitInput & input, const Vec & y0, double t0,
                                    double t1, double dt, std::optional<double> bound = std::nullopt)
{
  const auto & cm = family.dictionary().critical_manifold();
  const bool zeroth = family.order() == ModelOrder::zeroth;
  auto bundle_at = [&](double t) { return family.at(cm.grid(cm.forward(input.slow(t)))); };
  auto deviation_at = [&](double t) -> Vec {
    if (zeroth) return input.total(t);
    return input.deviation ? input.deviation(t) : Vec::Zero(cm.input_dim());
  };

  const ModelBundle b0 = bundle_at(t0);
  const Vec r0 = b0.model.reduce(y0);
  const Trajectory red = integrate_reduced(
    [&](double t, const Vec & r) {
      const ModelBundle b = bundle_at(t);
      return b.model.vector_field(r, deviation_at(t));
    },
    r0, t0, t1, dt, bound.value_or(std::max(1e3 * r0.norm() + 1.0, 1e3)));
  Trajectory out;
  out.times = red.times;
  out.values.resize(y0.size(), red.size());
  for (Index k = 0; k < red.size(); ++k) out.values.col(k) = bundle_at(red.times[k]).model.lift(red.values.col(k));
  out.label = TrajectoryLabel::derived;
  return out;
}

// ---------------------------------------------------------------------------------------------
// Scatter validation

struct ScatterPoint
{
  double time{0};
  Vec q;
  double nmte{0};
  bool extrapolated{false};
  bool failed{false};
};

struct ScatterReport
{
  std::vector<ScatterPoint> points;
  double mean_nmte{0};
  double fraction_below_10{0};
  double mean_runtime{0};  ///< seconds per reduced simulation
};

struct ScatterOptions
{
  double fraction{0.5};
  double horizon{0.05};
  std::uint64_t seed{1};
};

/**
 * @brief Short-horizon validation on a forced response: at a random subset of sample times,
 * sample the model at the observation, simulate the reduced model with the recorded input over
 * the horizon and score the lifted prediction by NMTE.
 */
inline ScatterReport scatter_validation(const ModelFamily & family, const Trajectory & response, const Box & input_box,
                                        const ScatterOptions & opt = {})
{
  response.validate();
  require(response.has_inputs(), "scatter validation: response must carry inputs");
  require(opt.fraction > 0 && opt.fraction <= 1 && opt.horizon > 0, "scatter validation: invalid options");
  const double dt = response.dt();
  const auto steps = static_cast<Index>(std::llround(opt.horizon / dt));
  require(steps >= 1 && response.size() > steps + 1, "scatter validation: response shorter than the horizon");
  std::vector<Index> starts(static_cast<std::size_t>(response.size() - steps));
  for (std::size_t k = 0; k < starts.size(); ++k) starts[k] = static_cast<Index>(k);
  std::mt19937_64 rng(opt.seed);
  std::shuffle(starts.begin(), starts.end(), rng);
  starts.resize(std::max<std::size_t>(1, static_cast<std::size_t>(opt.fraction * static_cast<double>(starts.size()))));
  std::sort(starts.begin(), starts.end());

  ScatterReport rep;
  double total_time = 0;
  double sum = 0;
  std::size_t ok = 0, below = 0;
  for (Index k : starts) {
    ScatterPoint pt;
    pt.time = response.times[k];
    const Vec y = response.values.col(k);
    const auto t_start = std::chrono::steady_clock::now();
    try {
      const AnchoredModel am = assm_model_at(family, y, input_box, AnchorMode::steady_state);
      pt.q = am.q;
      pt.extrapolated = am.extrapolated;
      const Trajectory window = response.slice(k, k + steps + 1);
      const auto sim = simulate_reduced(
        am.bundle.model, am.r0,
        [&](double t) { return Vec(interpolate_columns(window.times, window.inputs, t) - am.u_s0); }, window.times[0],
        window.times[window.size() - 1], dt, 1e3);
      pt.nmte = trajectory_nmte(sim.lifted.values, window.values);
    } catch (const Error & e) {
      if (e.kind() != ErrorKind::model_domain_exceeded) throw;
      pt.failed = true;
      pt.nmte = std::numeric_limits<double>::infinity();
    }
    total_time += std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    if (!pt.failed) {
      sum += pt.nmte;
      ++ok;
    }
    if (pt.nmte <= 0.1) ++below;
    rep.points.push_back(std::move(pt));
  }
  const auto n = static_cast<double>(rep.points.size());
  rep.mean_nmte = ok == rep.points.size() ? sum / n : std::numeric_limits<double>::infinity();
  rep.fraction_below_10 = static_cast<double>(below) / n;
  rep.mean_runtime = total_time / n;
  return rep;
}

}  // namespace assm
