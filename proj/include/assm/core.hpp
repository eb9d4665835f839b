#pragma once

/**
 * @file
 * @brief Shared numeric aliases, error types and small helpers.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <exception>
#include <limits>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace assm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Time-dependent input signal u(t).
using InputSignal = std::function<Vec(double)>;

/// Failure categories. Precondition failures map to CLI exit code 2, everything else to 3.
enum class ErrorKind {
  precondition,
  integration_diverged,
  no_steady_state,
  embedding_length,
  conditioning,
  stability_violation,
  unidentifiable,
  model_domain_exceeded,
  infeasible_horizon,
  undefined_normalizer,
  rank_deficient,
  io,
};

inline const char * to_string(ErrorKind k)
{
  switch (k) {
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::integration_diverged: return "integration-diverged";
    case ErrorKind::no_steady_state: return "no-steady-state";
    case ErrorKind::embedding_length: return "embedding-length";
    case ErrorKind::conditioning: return "conditioning";
    case ErrorKind::stability_violation: return "stability-violation";
    case ErrorKind::unidentifiable: return "unidentifiable-channels";
    case ErrorKind::model_domain_exceeded: return "model-domain-exceeded";
    case ErrorKind::infeasible_horizon: return "infeasible-horizon";
    case ErrorKind::undefined_normalizer: return "undefined-normalizer";
    case ErrorKind::rank_deficient: return "rank-deficient";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error
{
public:
  Error(ErrorKind kind, const std::string & what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind)
  {}

  ErrorKind kind() const noexcept { return kind_; }
  bool is_validation() const noexcept { return kind_ == ErrorKind::precondition || kind_ == ErrorKind::io; }

private:
  ErrorKind kind_;
};

/// Raised when the integrator produces a non-finite state.
class IntegrationDiverged : public Error
{
public:
  explicit IntegrationDiverged(double last_valid_time)
      : Error(ErrorKind::integration_diverged,
              "non-finite state after t = " + std::to_string(last_valid_time)),
        last_valid_time_(last_valid_time)
  {}

  double last_valid_time() const noexcept { return last_valid_time_; }

private:
  double last_valid_time_;
};

inline void require(bool cond, const std::string & msg)
{
  if (!cond) throw Error(ErrorKind::precondition, msg);
}

inline bool all_finite(const Eigen::Ref<const Mat> & m) { return m.allFinite(); }

/// Axis-aligned box [lo, hi] per dimension.
struct Box
{
  Vec lo;
  Vec hi;

  Index dim() const { return lo.size(); }
  bool valid() const { return lo.size() == hi.size() && (lo.array() <= hi.array()).all(); }
  bool contains(const Vec & v, double tol = 0.0) const
  {
    return v.size() == lo.size() && (v.array() >= lo.array() - tol).all() &&
           (v.array() <= hi.array() + tol).all();
  }
  Vec clamp(const Vec & v) const { return v.cwiseMax(lo).cwiseMin(hi); }
  Vec width() const { return hi - lo; }

  static Box symmetric(const Vec & half) { return Box{-half, half}; }
  static Box uniform(Index n, double lo, double hi)
  {
    return Box{Vec::Constant(n, lo), Vec::Constant(n, hi)};
  }
};

/// Runs fn(i) for i in [0, n) on a small thread pool. Results must be written by index
/// so the outcome does not depend on scheduling.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)> & fn,
                         unsigned max_workers = 0)
{
  unsigned workers = max_workers ? max_workers : std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto & e : errors)
    if (e) std::rethrow_exception(e);
}

/// 64-bit FNV-1a, used for provenance tags in output files.
inline std::uint64_t fnv1a(const void * data, std::size_t len, std::uint64_t h = 1469598103934665603ull)
{
  const auto * p = static_cast<const unsigned char *>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string & s, std::uint64_t h = 1469598103934665603ull)
{
  return fnv1a(s.data(), s.size(), h);
}

inline std::uint64_t hash_matrix(const Mat & m, std::uint64_t h = 1469598103934665603ull)
{
  const Index dims[2] = {m.rows(), m.cols()};
  h = fnv1a(dims, sizeof(dims), h);
  return fnv1a(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double), h);
}

inline std::string hex64(std::uint64_t h)
{
  static const char * digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = digits[h & 0xF];
  return s;
}

/// Eigenvalues sorted by descending real part.
inline Eigen::VectorXcd sorted_eigenvalues(const Mat & a)
{
  Eigen::EigenSolver<Mat> es(a, false);
  Eigen::VectorXcd ev = es.eigenvalues();
  std::vector<std::complex<double>> v(ev.data(), ev.data() + ev.size());
  std::stable_sort(v.begin(), v.end(), [](auto x, auto y) {
    if (x.real() != y.real()) return x.real() > y.real();
    return x.imag() > y.imag();
  });
  for (Index i = 0; i < ev.size(); ++i) ev[i] = v[static_cast<std::size_t>(i)];
  return ev;
}

inline double max_real_part(const Mat & a)
{
  if (a.size() == 0) return -std::numeric_limits<double>::infinity();
  return sorted_eigenvalues(a)[0].real();
}

}  // namespace assm
