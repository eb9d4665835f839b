#pragma once

/**
 * @file
 * @brief Graded-lexicographic monomial features and monitored least squares.
 */

#include "core.hpp"

#include <string>
#include <vector>

namespace assm {

inline long binomial(long n, long k)
{
  if (k < 0 || k > n) return 0;
  long r = 1;
  for (long i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

/**
 * @brief All monomials of total degree min_degree..max_degree in `dim` variables.
 *
 * Ordering is graded lexicographic: by degree, then exponent tuples in descending lexicographic
 * order, e.g. d = 2, degrees 1..2 gives [r1, r2, r1^2, r1 r2, r2^2].
 */
class MonomialBasis
{
public:
  static constexpr const char * ordering_tag = "graded-lex";

  MonomialBasis() = default;
  MonomialBasis(Index dim, int min_degree, int max_degree) : dim_(dim), min_(min_degree), max_(max_degree)
  {
    require(dim >= 1 && min_degree >= 0 && max_degree >= min_degree, "monomials: invalid degree range");
    std::vector<int> e(static_cast<std::size_t>(dim));
    for (int deg = min_degree; deg <= max_degree; ++deg) enumerate(deg, 0, e);
  }

  /// Degrees 1..n, length C(d + n, d) - 1.
  static MonomialBasis orders_1_to(Index dim, int n) { return MonomialBasis(dim, 1, n); }
  /// Degrees 0..n, length C(d + n, d).
  static MonomialBasis with_constant(Index dim, int n) { return MonomialBasis(dim, 0, n); }

  Index size() const { return static_cast<Index>(exps_.size()); }
  Index dim() const { return dim_; }
  int min_degree() const { return min_; }
  int max_degree() const { return max_; }
  const std::vector<std::vector<int>> & exponents() const { return exps_; }

  Vec evaluate(const Vec & r) const
  {
    Vec out(size());
    evaluate_into(r, out);
    return out;
  }

  void evaluate_into(const Vec & r, Eigen::Ref<Vec> out) const
  {
    // powers table, max degree is small
    Mat pw(dim_, max_ + 1);
    for (Index i = 0; i < dim_; ++i) {
      pw(i, 0) = 1.0;
      for (int k = 1; k <= max_; ++k) pw(i, k) = pw(i, k - 1) * r[i];
    }
    for (std::size_t m = 0; m < exps_.size(); ++m) {
      double v = 1.0;
      for (Index i = 0; i < dim_; ++i) v *= pw(i, exps_[m][static_cast<std::size_t>(i)]);
      out[static_cast<Index>(m)] = v;
    }
  }

  /// Column k holds the features of column k of `points`.
  Mat evaluate_columns(const Mat & points) const
  {
    Mat out(size(), points.cols());
    for (Index k = 0; k < points.cols(); ++k) evaluate_into(points.col(k), out.col(k));
    return out;
  }

  /// d(features)/dr, size() x dim.
  Mat jacobian(const Vec & r) const
  {
    Mat j = Mat::Zero(size(), dim_);
    for (std::size_t m = 0; m < exps_.size(); ++m) {
      for (Index i = 0; i < dim_; ++i) {
        const int ei = exps_[m][static_cast<std::size_t>(i)];
        if (ei == 0) continue;
        double v = ei;
        for (Index k = 0; k < dim_; ++k) {
          const int ek = exps_[m][static_cast<std::size_t>(k)] - (k == i ? 1 : 0);
          v *= std::pow(r[k], ek);
        }
        j(static_cast<Index>(m), i) = v;
      }
    }
    return j;
  }

  /// Factor each monomial picks up under r_i -> s_i r_i with s_i = +-1.
  Vec sign_pushforward(const Vec & signs) const
  {
    Vec out(size());
    for (std::size_t m = 0; m < exps_.size(); ++m) {
      double v = 1.0;
      for (Index i = 0; i < dim_; ++i)
        if (exps_[m][static_cast<std::size_t>(i)] % 2 != 0) v *= signs[i];
      out[static_cast<Index>(m)] = v;
    }
    return out;
  }

  /// Index of the first monomial of total degree `deg`.
  Index degree_offset(int deg) const
  {
    Index k = 0;
    while (k < size() && total_degree(k) < deg) ++k;
    return k;
  }

  int total_degree(Index m) const
  {
    int s = 0;
    for (int e : exps_[static_cast<std::size_t>(m)]) s += e;
    return s;
  }

private:
  void enumerate(int remaining, Index pos, std::vector<int> & e)
  {
    if (pos == dim_ - 1) {
      e[static_cast<std::size_t>(pos)] = remaining;
      exps_.push_back(e);
      return;
    }
    for (int k = remaining; k >= 0; --k) {
      e[static_cast<std::size_t>(pos)] = k;
      enumerate(remaining - k, pos + 1, e);
    }
  }

  Index dim_{0};
  int min_{1};
  int max_{1};
  std::vector<std::vector<int>> exps_;
};

struct LeastSquaresFit
{
  Mat coeffs;                       ///< targets.rows() x features.rows()
  double normal_condition{0};       ///< condition number of the column-equilibrated normal matrix
  double normal_residual{0};        ///< |(Y - C Phi) Phi^T| / (|Y| |Phi|)
  double residual_norm{0};          ///< |Y - C Phi|_F
};

struct LeastSquaresOptions
{
  double max_condition{1e10};
  double ridge{0.0};
  std::string context{"least squares"};
};

/**
 * @brief min_C |targets - C features|_F via column-pivoted QR of features^T.
 *
 * Features are one column per sample. Throws a conditioning error when the equilibrated normal
 * matrix exceeds `max_condition`.
 */
inline LeastSquaresFit least_squares(const Mat & features, const Mat & targets, const LeastSquaresOptions & opt = {})
{
  require(features.cols() == targets.cols(), opt.context + ": sample counts differ");
  require(features.cols() >= features.rows(), opt.context + ": fewer samples than features");
  LeastSquaresFit fit;
  const Index m = features.rows();

  Vec scale = features.rowwise().norm();
  for (Index i = 0; i < m; ++i)
    if (!(scale[i] > 0)) scale[i] = 1.0;
  const Mat scaled_t = (scale.cwiseInverse().asDiagonal() * features).transpose();

  Eigen::JacobiSVD<Mat> svd(scaled_t);
  const Vec sv = svd.singularValues();
  const double smax = sv.size() ? sv.maxCoeff() : 0.0;
  const double smin = sv.size() ? sv.minCoeff() : 0.0;
  fit.normal_condition = smin > 0 ? (smax / smin) * (smax / smin) : std::numeric_limits<double>::infinity();
  if (opt.ridge == 0.0 && fit.normal_condition > opt.max_condition)
    throw Error(ErrorKind::conditioning,
                opt.context + ": normal equations condition " + std::to_string(fit.normal_condition) +
                  " exceeds limit; try a lower polynomial order");

  Mat coeffs_scaled;
  if (opt.ridge > 0) {
    const Mat g = scaled_t.transpose() * scaled_t + opt.ridge * Mat::Identity(m, m);
    coeffs_scaled = g.ldlt().solve(scaled_t.transpose() * targets.transpose()).transpose();
  } else {
    coeffs_scaled = scaled_t.colPivHouseholderQr().solve(targets.transpose()).transpose();
  }
  fit.coeffs = coeffs_scaled * scale.cwiseInverse().asDiagonal();

  const Mat resid = targets - fit.coeffs * features;
  fit.residual_norm = resid.norm();
  const double denom = std::max(targets.norm() * features.norm(), std::numeric_limits<double>::min());
  fit.normal_residual = (resid * features.transpose()).norm() / denom;
  return fit;
}

}  // namespace assm
