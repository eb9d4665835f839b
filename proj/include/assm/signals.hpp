#pragma once

/**
 * @file
 * @brief Seeded signal generators: 1-D Perlin gradient noise tracks, Lorenz-driven chaotic
 * deviations and Latin-hypercube input samples.
 */

#include "core.hpp"
#include "trajectory.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

namespace assm {

namespace detail {

inline Vec sample_times(double duration, double dt)
{
  require(duration > 0 && dt > 0, "signal: duration and dt must be positive");
  const auto n = static_cast<Index>(std::llround(duration / dt)) + 1;
  Vec t(n);
  for (Index k = 0; k < n; ++k) t[k] = static_cast<double>(k) * dt;
  return t;
}

inline double quintic_fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

/// Rescales each row of m so that its min maps to lo[i] and its max to hi[i].
inline void minmax_rescale_rows(Mat & m, const Vec & lo, const Vec & hi)
{
  for (Index i = 0; i < m.rows(); ++i) {
    const double mn = m.row(i).minCoeff();
    const double mx = m.row(i).maxCoeff();
    const double span = mx - mn;
    if (span <= 0) {
      m.row(i).setConstant(0.5 * (lo[i] + hi[i]));
      continue;
    }
    m.row(i) = (lo[i] + (m.row(i).array() - mn) * ((hi[i] - lo[i]) / span)).matrix();
    for (Index k = 0; k < m.cols(); ++k) m(i, k) = std::clamp(m(i, k), lo[i], hi[i]);
  }
}

}  // namespace detail

/// 1-D gradient noise with lattice gradients drawn from `rng` and quintic fade.
class PerlinNoise1D
{
public:
  PerlinNoise1D(std::mt19937_64 & rng, int cells)
  {
    require(cells >= 1, "perlin: need at least one lattice cell");
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    grad_.resize(static_cast<std::size_t>(cells) + 1);
    for (auto & g : grad_) g = unif(rng);
  }

  double operator()(double x) const
  {
    const double last = static_cast<double>(grad_.size() - 1);
    x = std::clamp(x, 0.0, last);
    auto i = static_cast<std::size_t>(std::floor(x));
    if (i >= grad_.size() - 1) i = grad_.size() - 2;
    const double f = x - static_cast<double>(i);
    const double s = detail::quintic_fade(f);
    return (1.0 - s) * grad_[i] * f + s * grad_[i + 1] * (f - 1.0);
  }

private:
  std::vector<double> grad_;
};

/**
 * @brief Perlin target track on [0, duration], one noise channel per box dimension, min-max
 * rescaled to the box. `cells` lattice cells span the whole duration (about cells / 2
 * oscillations).
 */
inline TargetTrack generate_perlin_target(std::uint64_t seed, double duration, double dt, const Box & box,
                                          int cells = 6)
{
  require(box.valid() && box.dim() >= 1, "perlin: invalid box");
  TargetTrack track;
  track.times = detail::sample_times(duration, dt);
  std::mt19937_64 rng(seed);
  track.points.resize(box.dim(), track.times.size());
  for (Index i = 0; i < box.dim(); ++i) {
    PerlinNoise1D noise(rng, cells);
    for (Index k = 0; k < track.times.size(); ++k)
      track.points(i, k) = noise(track.times[k] / duration * static_cast<double>(cells));
  }
  detail::minmax_rescale_rows(track.points, box.lo, box.hi);
  return track;
}

struct LorenzParams
{
  double sigma{10.0};
  double rho{28.0};
  double beta{8.0 / 3.0};
  double transient{10.0};
  double time_scale{1.0};  ///< Lorenz time advanced per second of signal time
};

/**
 * @brief Scalar chaotic deviation: first Lorenz component after a transient, rescaled to [-1, 1]
 * and multiplied by delta. Sampled at `dt` on [0, duration].
 */
inline Trajectory generate_lorenz_deviation(std::uint64_t seed, double duration, double dt, double delta,
                                            const LorenzParams & lp = {})
{
  require(delta >= 0, "lorenz: delta must be non-negative");
  Trajectory out;
  out.times = detail::sample_times(duration, dt);
  out.values = Mat::Zero(1, out.times.size());
  out.label = TrajectoryLabel::derived;
  if (delta == 0) return out;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> xy(-15.0, 15.0);
  std::uniform_real_distribution<double> zz(5.0, 40.0);
  Eigen::Vector3d s(xy(rng), xy(rng), zz(rng));
  auto rhs = [&](const Eigen::Vector3d & v) {
    return Eigen::Vector3d(lp.sigma * (v[1] - v[0]), v[0] * (lp.rho - v[2]) - v[1], v[0] * v[1] - lp.beta * v[2]);
  };
  const double big = dt * lp.time_scale;
  const int sub = std::max(1, static_cast<int>(std::ceil(big / 0.002)));
  const double h = big / sub;
  auto advance = [&](double span) {
    const auto n = static_cast<long>(std::llround(span / h));
    for (long k = 0; k < n; ++k) {
      const Eigen::Vector3d k1 = rhs(s);
      const Eigen::Vector3d k2 = rhs(s + 0.5 * h * k1);
      const Eigen::Vector3d k3 = rhs(s + 0.5 * h * k2);
      const Eigen::Vector3d k4 = rhs(s + h * k3);
      s += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
  };
  advance(lp.transient);
  for (Index k = 0; k < out.times.size(); ++k) {
    out.values(0, k) = s[0];
    advance(big);
  }
  detail::minmax_rescale_rows(out.values, Vec::Constant(1, -1.0), Vec::Constant(1, 1.0));
  out.values *= delta;
  return out;
}

/**
 * @brief Latin-hypercube sample of `count` points in `box`: every dimension gets exactly one
 * sample per equal-width stratum.
 */
inline std::vector<Vec> sample_lhs(std::uint64_t seed, Index count, const Box & box)
{
  require(count >= 1, "lhs: count must be >= 1");
  require(box.valid(), "lhs: invalid box");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Vec> pts(static_cast<std::size_t>(count), Vec(box.dim()));
  std::vector<Index> perm(static_cast<std::size_t>(count));
  for (Index i = 0; i < box.dim(); ++i) {
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (Index k = 0; k < count; ++k) {
      const double frac = (static_cast<double>(perm[static_cast<std::size_t>(k)]) + unif(rng)) /
                          static_cast<double>(count);
      pts[static_cast<std::size_t>(k)][i] = box.lo[i] + std::min(frac, 1.0) * (box.hi[i] - box.lo[i]);
    }
  }
  return pts;
}

/// Piecewise-linear signal through LHS knots spaced `knot_spacing` apart on [0, duration].
inline TargetTrack lhs_signal(std::uint64_t seed, double duration, double knot_spacing, const Box & box)
{
  require(knot_spacing > 0 && duration > 0, "lhs signal: invalid spacing");
  const auto knots = static_cast<Index>(std::ceil(duration / knot_spacing)) + 1;
  const auto pts = sample_lhs(seed, knots, box);
  TargetTrack tr;
  tr.times.resize(knots);
  tr.points.resize(box.dim(), knots);
  for (Index k = 0; k < knots; ++k) {
    tr.times[k] = static_cast<double>(k) * knot_spacing;
    tr.points.col(k) = pts[static_cast<std::size_t>(k)];
  }
  return tr;
}

}  // namespace assm
