#pragma once

#include "core.hpp"

#include <string>

namespace assm {

enum class TrajectoryLabel { decay, controlled, closed_loop, target, derived };

inline const char * to_string(TrajectoryLabel l)
{
  switch (l) {
    case TrajectoryLabel::decay: return "decay";
    case TrajectoryLabel::controlled: return "controlled";
    case TrajectoryLabel::closed_loop: return "closed-loop";
    case TrajectoryLabel::target: return "target";
    case TrajectoryLabel::derived: return "derived";
  }
  return "derived";
}

inline TrajectoryLabel trajectory_label_from(const std::string & s)
{
  if (s == "decay") return TrajectoryLabel::decay;
  if (s == "controlled") return TrajectoryLabel::controlled;
  if (s == "closed-loop") return TrajectoryLabel::closed_loop;
  if (s == "target") return TrajectoryLabel::target;
  return TrajectoryLabel::derived;
}

/**
 * @brief Uniformly sampled time series, one column per sample.
 *
 * `inputs` is either empty or has one column per sample holding the input applied at that time.
 */
struct Trajectory
{
  Vec times;
  Mat values;
  Mat inputs;
  TrajectoryLabel label{TrajectoryLabel::derived};

  Index size() const { return times.size(); }
  Index dim() const { return values.rows(); }
  bool has_inputs() const { return inputs.size() > 0; }

  double dt() const { return size() >= 2 ? times[1] - times[0] : 0.0; }
  double duration() const { return size() >= 2 ? times[size() - 1] - times[0] : 0.0; }

  /// Checks column/time agreement and uniform spacing (1e-12 relative, with an absolute floor
  /// for times near zero).
  void validate() const
  {
    require(values.cols() == times.size(), "trajectory: column count differs from time count");
    require(!has_inputs() || inputs.cols() == times.size(),
            "trajectory: input column count differs from time count");
    if (size() < 2) return;
    const double h = dt();
    require(h > 0, "trajectory: times must be strictly increasing");
    const double scale = std::max(std::abs(times[0]), std::abs(times[size() - 1]));
    for (Index k = 1; k < size(); ++k) {
      const double step = times[k] - times[k - 1];
      require(step > 0, "trajectory: times must be strictly increasing");
      require(std::abs(times[k] - (times[0] + static_cast<double>(k) * h)) <=
                1e-12 * std::max(1.0, scale) + 1e-12 * h * static_cast<double>(k),
              "trajectory: non-uniform time step");
    }
  }

  /// Columns [begin, end).
  Trajectory slice(Index begin, Index end) const
  {
    require(0 <= begin && begin <= end && end <= size(), "trajectory: slice out of range");
    Trajectory out;
    out.times = times.segment(begin, end - begin);
    out.values = values.middleCols(begin, end - begin);
    if (has_inputs()) out.inputs = inputs.middleCols(begin, end - begin);
    out.label = label;
    return out;
  }

  /// Column range whose times fall inside [t0, t1] (inclusive, with half-step slack).
  Trajectory window(double t0, double t1) const
  {
    const double slack = 0.5 * dt();
    Index b = 0;
    while (b < size() && times[b] < t0 - slack) ++b;
    Index e = b;
    while (e < size() && times[e] <= t1 + slack) ++e;
    return slice(b, e);
  }
};

/// Linear interpolation of columns of `values` at time t; clamps outside [times.front, times.back].
inline Vec interpolate_columns(const Vec & times, const Mat & values, double t)
{
  const Index n = times.size();
  require(n >= 1 && values.cols() == n, "interpolate: empty or misaligned samples");
  if (n == 1 || t <= times[0]) return values.col(0);
  if (t >= times[n - 1]) return values.col(n - 1);
  const double h = (times[n - 1] - times[0]) / static_cast<double>(n - 1);
  Index k = static_cast<Index>(std::floor((t - times[0]) / h));
  k = std::clamp<Index>(k, 0, n - 2);
  while (k > 0 && times[k] > t) --k;
  while (k < n - 2 && times[k + 1] < t) ++k;
  const double a = (t - times[k]) / (times[k + 1] - times[k]);
  return (1.0 - a) * values.col(k) + a * values.col(k + 1);
}

/**
 * @brief Sampled workspace target path with a linear-interpolation evaluator.
 */
struct TargetTrack
{
  Vec times;
  Mat points;  ///< w x N

  Index size() const { return times.size(); }
  Index dim() const { return points.rows(); }
  double t_begin() const { return times[0]; }
  double t_end() const { return times[size() - 1]; }

  Vec operator()(double t) const { return interpolate_columns(times, points, t); }

  void validate() const
  {
    require(size() >= 1 && points.cols() == size(), "target: misaligned samples");
    require(points.allFinite(), "target: non-finite samples");
    for (Index k = 1; k < size(); ++k) require(times[k] > times[k - 1], "target: times must increase");
  }
};

}  // namespace assm
