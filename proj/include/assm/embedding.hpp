#pragma once

/**
 * @file
 * @brief Delay embedding, centered snapshot assembly, finite-difference derivatives and the
 * normalized mean trajectory error (NMTE).
 */

#include "core.hpp"
#include "trajectory.hpp"

#include <optional>
#include <string>
#include <vector>

namespace assm {

struct EmbeddingSpec
{
  int copies{1};      ///< p
  double lag{0.0};    ///< tau in seconds; must be a multiple of the sample step when copies > 1

  Index embedded_dim(Index per_copy) const { return static_cast<Index>(copies) * per_copy; }

  Index lag_steps(double dt) const
  {
    if (copies <= 1) return 0;
    require(dt > 0, "embedding: sample step must be positive");
    const double ratio = lag / dt;
    const auto steps = static_cast<Index>(std::llround(ratio));
    require(steps >= 1 && std::abs(ratio - static_cast<double>(steps)) <= 1e-9 * std::max(1.0, ratio),
            "embedding: lag must be a positive integer multiple of dt");
    return steps;
  }
};

/// Returns a warning when the embedded dimension is below 2d + 1.
inline std::optional<std::string> embedding_dimension_warning(const EmbeddingSpec & spec, Index per_copy, Index d)
{
  if (spec.embedded_dim(per_copy) < 2 * d + 1)
    return "embedded dimension " + std::to_string(spec.embedded_dim(per_copy)) + " is below 2d+1 = " +
           std::to_string(2 * d + 1);
  return std::nullopt;
}

/**
 * @brief Stacks observables at t_k, t_k + tau, ..., t_k + (p-1) tau into column k.
 *
 * Output length is N - (p-1) tau/dt; times and inputs follow the first copy.
 */
inline Trajectory delay_embed(const Trajectory & traj, const EmbeddingSpec & spec)
{
  require(spec.copies >= 1, "embedding: copies must be >= 1");
  if (spec.copies == 1) return traj;
  const Index lag = spec.lag_steps(traj.dt());
  const Index span = lag * (spec.copies - 1);
  if (traj.size() <= span)
    throw Error(ErrorKind::embedding_length, "trajectory has " + std::to_string(traj.size()) +
                                               " samples, embedding needs more than " + std::to_string(span));
  const Index n = traj.size() - span;
  const Index m = traj.dim();
  Trajectory out;
  out.label = traj.label;
  out.times = traj.times.head(n);
  out.values.resize(m * spec.copies, n);
  for (int c = 0; c < spec.copies; ++c) out.values.middleRows(c * m, m) = traj.values.middleCols(c * lag, n);
  if (traj.has_inputs()) out.inputs = traj.inputs.leftCols(n);
  return out;
}

/// Embedded image of a constant observable (p stacked copies).
inline Vec embed_constant(const Vec & y, const EmbeddingSpec & spec)
{
  Vec out(y.size() * spec.copies);
  for (int c = 0; c < spec.copies; ++c) out.segment(c * y.size(), y.size()) = y;
  return out;
}

/**
 * @brief Time derivative of each row: 4th-order central differences in the interior, 2nd-order
 * central next to the ends and 2nd-order one-sided at the ends.
 */
inline Trajectory finite_difference(const Trajectory & traj)
{
  const Index n = traj.size();
  require(n >= 3, "finite_difference: need at least 3 samples");
  const double h = traj.dt();
  require(h > 0, "finite_difference: non-uniform or empty time grid");
  const Mat & y = traj.values;
  Trajectory out = traj;
  out.label = TrajectoryLabel::derived;
  Mat & d = out.values;
  d.resize(y.rows(), n);
  d.col(0) = (-3.0 * y.col(0) + 4.0 * y.col(1) - y.col(2)) / (2.0 * h);
  d.col(n - 1) = (3.0 * y.col(n - 1) - 4.0 * y.col(n - 2) + y.col(n - 3)) / (2.0 * h);
  for (Index k = 1; k < n - 1; ++k) {
    if (k >= 2 && k <= n - 3)
      d.col(k) = (-y.col(k + 2) + 8.0 * y.col(k + 1) - 8.0 * y.col(k - 1) + y.col(k - 2)) / (12.0 * h);
    else
      d.col(k) = (y.col(k + 1) - y.col(k - 1)) / (2.0 * h);
  }
  return out;
}

/// Mean over samples of |pred - truth| divided by max_t |truth| for one trajectory.
inline double trajectory_nmte(const Mat & pred, const Mat & truth)
{
  require(pred.rows() == truth.rows() && pred.cols() == truth.cols() && truth.cols() > 0,
          "nmte: misaligned trajectories");
  const double peak = truth.colwise().norm().maxCoeff();
  if (!(peak > 0)) throw Error(ErrorKind::undefined_normalizer, "truth trajectory has zero norm");
  return (pred - truth).colwise().norm().mean() / peak;
}

/// Average of per-trajectory NMTEs.
inline double nmte(const std::vector<Mat> & pred, const std::vector<Mat> & truth)
{
  require(!pred.empty() && pred.size() == truth.size(), "nmte: trajectory counts differ");
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += trajectory_nmte(pred[i], truth[i]);
  return s / static_cast<double>(pred.size());
}

/// NMTE of a concatenated prediction split at `boundaries` (start column of each trajectory).
inline double nmte(const Mat & pred, const Mat & truth, const std::vector<Index> & boundaries)
{
  require(pred.cols() == truth.cols(), "nmte: misaligned trajectories");
  std::vector<Mat> p, t;
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    const Index b = boundaries[i];
    const Index e = i + 1 < boundaries.size() ? boundaries[i + 1] : pred.cols();
    p.emplace_back(pred.middleCols(b, e - b));
    t.emplace_back(truth.middleCols(b, e - b));
  }
  return nmte(p, t);
}

// ---------------------------------------------------------------------------------------------
// Training sets

/// Raw data for one static input: decays released near its steady state and forced responses.
struct RawGroup
{
  std::string name;
  Vec static_input;
  std::optional<Vec> steady_observable;  ///< h(S(u_s)); estimated from decay ends when absent
  std::vector<Trajectory> decays;        ///< observables
  std::vector<Trajectory> controlled;    ///< observables with absolute inputs
};

/// Centered, embedded snapshot data for one static input.
struct SnapshotGroup
{
  std::string name;
  Vec static_input;
  Vec anchor;                          ///< embedded steady state y_s
  std::vector<Trajectory> decays;      ///< centered
  std::vector<bool> train;             ///< split tag per decay
  std::vector<Trajectory> controlled;  ///< centered; inputs are absolute

  std::vector<const Trajectory *> split(bool want_train) const
  {
    std::vector<const Trajectory *> out;
    for (std::size_t i = 0; i < decays.size(); ++i)
      if (train[i] == want_train) out.push_back(&decays[i]);
    return out;
  }

  Mat train_snapshots() const
  {
    Index cols = 0;
    for (auto * t : split(true)) cols += t->size();
    Mat y(anchor.size(), cols);
    Index c = 0;
    for (auto * t : split(true)) {
      y.middleCols(c, t->size()) = t->values;
      c += t->size();
    }
    return y;
  }
};

struct TrainingSet
{
  EmbeddingSpec spec;
  double truncate_to{0};
  double split_fraction{0.5};
  Index observable_dim{0};
  std::vector<SnapshotGroup> groups;
};

struct AssembleOptions
{
  double truncate_to{0};          ///< seconds kept at the end of each decay
  double split_fraction{0.5};
  double settle_tolerance{1e-6};  ///< bound on the final centered column, relative to the peak
};

inline Trajectory center(const Trajectory & t, const Vec & anchor)
{
  Trajectory out = t;
  out.values = t.values.colwise() - anchor;
  return out;
}

/**
 * @brief Truncates, delay-embeds, centers and splits grouped decay data.
 *
 * Truncation keeps the final `truncate_to` seconds of each decay. The first
 * ceil(split_fraction * count) decays of each group are tagged as training data.
 */
inline TrainingSet assemble_training_set(const std::vector<RawGroup> & raw, const EmbeddingSpec & spec,
                                         const AssembleOptions & opt)
{
  require(!raw.empty(), "training set: no groups");
  require(opt.split_fraction > 0 && opt.split_fraction < 1, "training set: split fraction in (0, 1)");
  TrainingSet ts;
  ts.spec = spec;
  ts.truncate_to = opt.truncate_to;
  ts.split_fraction = opt.split_fraction;
  for (const auto & g : raw) {
    const std::string who = "group '" + g.name + "'";
    require(!g.decays.empty(), who + ": empty group");
    require(g.decays.size() >= 2, who + ": need at least one training and one test decay");
    SnapshotGroup sg;
    sg.name = g.name;
    sg.static_input = g.static_input;
    std::vector<Trajectory> embedded;
    for (const auto & d : g.decays) {
      d.validate();
      require(d.values.allFinite(), who + ": non-finite samples");
      require(opt.truncate_to <= d.duration() + 1e-9, who + ": truncate_to longer than trajectory");
      const Trajectory kept = opt.truncate_to > 0 ? d.window(d.times[d.size() - 1] - opt.truncate_to,
                                                             d.times[d.size() - 1])
                                                  : d;
      embedded.push_back(delay_embed(kept, spec));
    }
    if (ts.observable_dim == 0) ts.observable_dim = g.decays.front().dim();
    require(g.decays.front().dim() == ts.observable_dim, who + ": observable dimension differs");
    if (g.steady_observable) {
      sg.anchor = embed_constant(*g.steady_observable, spec);
    } else {
      sg.anchor = Vec::Zero(embedded.front().dim());
      for (const auto & e : embedded) sg.anchor += e.values.col(e.size() - 1);
      sg.anchor /= static_cast<double>(embedded.size());
    }
    const auto n_train = static_cast<std::size_t>(std::ceil(opt.split_fraction * static_cast<double>(embedded.size())));
    for (std::size_t i = 0; i < embedded.size(); ++i) {
      Trajectory c = center(embedded[i], sg.anchor);
      const double peak = c.values.colwise().norm().maxCoeff();
      require(c.values.col(c.size() - 1).norm() <= opt.settle_tolerance * std::max(1.0, peak),
              who + ": decay " + std::to_string(i) + " has not settled at the group steady state");
      sg.decays.push_back(std::move(c));
      sg.train.push_back(i < n_train);
    }
    for (const auto & c : g.controlled) {
      c.validate();
      require(c.values.allFinite() && c.has_inputs(), who + ": controlled response must be finite with inputs");
      sg.controlled.push_back(center(delay_embed(c, spec), sg.anchor));
    }
    ts.groups.push_back(std::move(sg));
  }
  return ts;
}

}  // namespace assm
