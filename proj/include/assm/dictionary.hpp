#pragma once

/**
 * @file
 * @brief Scattered-grid dictionaries of static SSMs, the critical-manifold maps S and I, the MIDW
 * and QPR coefficient samplers and the zeroth/first-order model views.
 */

#include "collect.hpp"
#include "core.hpp"
#include "dynamics.hpp"
#include "embedding.hpp"
#include "regression.hpp"
#include "ssm.hpp"

#include <algorithm>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace assm {

// ---------------------------------------------------------------------------------------------
// Critical manifold

/**
 * @brief Polynomial maps S: u -> y_s and I: q -> u with q = selector * y.
 *
 * Both regressions include a constant term.
 */
class CriticalManifoldMap
{
public:
  CriticalManifoldMap() = default;

  /// Fits both maps. Orders above what the number of pairs supports are lowered.
  static CriticalManifoldMap fit(const std::vector<Vec> & inputs, const std::vector<Vec> & steady, int n_s, int n_i,
                                 const Mat & selector)
  {
    require(!inputs.empty() && inputs.size() == steady.size(), "critical manifold: need matching pairs");
    require(n_s >= 0 && n_i >= 0, "critical manifold: orders must be >= 0");
    const auto n = static_cast<Index>(inputs.size());
    const Index n_u = inputs.front().size();
    const Index p = steady.front().size();
    require(selector.cols() == p, "critical manifold: selector width must match observable dimension");
    CriticalManifoldMap cm;
    cm.selector_ = selector;
    cm.n_s_ = supported_order(n_u, n_s, n);
    cm.n_i_ = supported_order(selector.rows(), n_i, n);
    cm.sb_ = MonomialBasis::with_constant(n_u, cm.n_s_);
    cm.ib_ = MonomialBasis::with_constant(selector.rows(), cm.n_i_);

    Mat u(n_u, n), y(p, n);
    for (Index k = 0; k < n; ++k) {
      u.col(k) = inputs[static_cast<std::size_t>(k)];
      y.col(k) = steady[static_cast<std::size_t>(k)];
    }
    cm.s_coef_ = least_squares(cm.sb_.evaluate_columns(u), y, {1e10, 0.0, "critical manifold S"}).coeffs;
    cm.i_coef_ = least_squares(cm.ib_.evaluate_columns(selector * y), u, {1e10, 0.0, "chart inverse I"}).coeffs;
    cm.round_trip_ = 0;
    for (Index k = 0; k < n; ++k)
      cm.round_trip_ = std::max(cm.round_trip_, (cm.inverse(cm.grid(cm.forward(u.col(k)))) - u.col(k)).norm());
    return cm;
  }

  static CriticalManifoldMap from_coefficients(Index n_u, Mat s_coef, int n_s, Mat i_coef, int n_i, Mat selector,
                                               double round_trip)
  {
    CriticalManifoldMap cm;
    cm.selector_ = std::move(selector);
    cm.n_s_ = n_s;
    cm.n_i_ = n_i;
    cm.s_coef_ = std::move(s_coef);
    cm.i_coef_ = std::move(i_coef);
    cm.sb_ = MonomialBasis::with_constant(n_u, n_s);
    cm.ib_ = MonomialBasis::with_constant(cm.selector_.rows(), n_i);
    require(cm.sb_.size() == cm.s_coef_.cols() && cm.ib_.size() == cm.i_coef_.cols() && cm.i_coef_.rows() == n_u,
            "critical manifold: coefficient shapes do not match the orders");
    cm.round_trip_ = round_trip;
    return cm;
  }

  Vec forward(const Vec & u) const { return s_coef_ * sb_.evaluate(u); }
  Vec inverse(const Vec & q) const { return i_coef_ * ib_.evaluate(q); }
  Vec grid(const Vec & y) const { return selector_ * y; }

  int n_s() const { return n_s_; }
  int n_i() const { return n_i_; }
  const Mat & s_coefficients() const { return s_coef_; }
  const Mat & i_coefficients() const { return i_coef_; }
  const Mat & selector() const { return selector_; }
  Index grid_dim() const { return selector_.rows(); }
  Index input_dim() const { return i_coef_.rows(); }
  double round_trip_error() const { return round_trip_; }

  /// Round-trip error max_k |I(q(S(u_k))) - u_k| over arbitrary inputs.
  double round_trip_error(const std::vector<Vec> & inputs) const
  {
    double e = 0;
    for (const auto & u : inputs) e = std::max(e, (inverse(grid(forward(u))) - u).norm());
    return e;
  }

private:
  static int supported_order(Index dim, int wanted, Index samples)
  {
    int n = wanted;
    while (n > 0 && MonomialBasis::with_constant(dim, n).size() > samples) --n;
    return n;
  }

  Mat selector_;
  int n_s_{0};
  int n_i_{0};
  MonomialBasis sb_;
  MonomialBasis ib_;
  Mat s_coef_;
  Mat i_coef_;
  double round_trip_{0};
};

/**
 * @brief Steady state of the true model near the regressed S(u): Newton seeded with the
 * polynomial prediction. Requires the observable to be the full state.
 */
inline Vec refined_steady_state(const DynamicsModel & model, const CriticalManifoldMap & cm, const Vec & u)
{
  const Vec guess = cm.forward(u);
  require(guess.size() == model.state_dim(), "refined steady state: observable must be the full state");
  return find_equilibrium(model, u, guess);
}

// ---------------------------------------------------------------------------------------------
// Coefficient bundles

/// A sampled model: V, W, R, B with anchor y_s and static input u_s, plus the first-order B.
struct ModelBundle
{
  StaticSSMModel model;
  Mat b_first;  ///< control matrix calibrated in the origin chart (origin V and R)
  bool extrapolated{false};
};

namespace detail {

struct BundleLayout
{
  Index d{0}, p{0}, n_u{0};
  int n_w{0}, n_r{0};
  Index mw{0}, mr{0};

  Index size() const { return p * d + p * mw + d * mr + 2 * d * n_u + n_u + p; }
};

inline BundleLayout layout_of(const ModelBundle & b)
{
  BundleLayout l;
  l.d = b.model.d();
  l.p = b.model.embedded_dim();
  l.n_u = b.model.input_dim();
  l.n_w = b.model.n_w();
  l.n_r = b.model.n_r();
  l.mw = b.model.w_basis().size();
  l.mr = b.model.r_basis().size();
  return l;
}

inline Vec flatten(const ModelBundle & b)
{
  const BundleLayout l = layout_of(b);
  Vec z(l.size());
  Index o = 0;
  auto put = [&](const Mat & m) {
    z.segment(o, m.size()) = m.reshaped();
    o += m.size();
  };
  put(b.model.V);
  put(b.model.W);
  put(b.model.R);
  put(b.model.B);
  put(b.b_first);
  put(b.model.static_input);
  put(b.model.anchor);
  return z;
}

inline ModelBundle unflatten(const Vec & z, const BundleLayout & l)
{
  ModelBundle b;
  b.model.set_orders(l.d, l.n_w, l.n_r);
  Index o = 0;
  auto take = [&](Index r, Index c) {
    Mat m = z.segment(o, r * c).reshaped(r, c);
    o += r * c;
    return m;
  };
  b.model.V = take(l.p, l.d);
  b.model.W = take(l.p, l.mw);
  b.model.R = take(l.d, l.mr);
  b.model.B = take(l.d, l.n_u);
  b.b_first = take(l.d, l.n_u);
  b.model.static_input = take(l.n_u, 1);
  b.model.anchor = take(l.p, 1);
  return b;
}

}  // namespace detail

// ---------------------------------------------------------------------------------------------
// Dictionary

enum class SamplerKind { midw, qpr };

inline const char * to_string(SamplerKind k) { return k == SamplerKind::midw ? "midw" : "qpr"; }

struct SamplerConfig
{
  SamplerKind kind{SamplerKind::qpr};
  double radius{0.0};    ///< MIDW ball radius; 0 selects 1.5 x median nearest-neighbour spacing
  double exponent{2.0};  ///< MIDW exponent l
  int order{2};          ///< QPR order n_q (constant term always included)
};

struct DictionaryNode
{
  std::string name;
  Vec q;
  ModelBundle bundle;
  StaticFitReport report;
};

/**
 * @brief Immutable dictionary of aligned static models with a coefficient sampler.
 */
class ASSMDictionary
{
public:
  ASSMDictionary(std::vector<DictionaryNode> nodes, CriticalManifoldMap cm, SamplerConfig sampler)
    : nodes_(std::move(nodes)), cm_(std::move(cm)), sampler_(sampler)
  {
    require(!nodes_.empty(), "dictionary: no nodes");
    layout_ = detail::layout_of(nodes_.front().bundle);
    const auto n = static_cast<Index>(nodes_.size());
    q_.resize(n, nodes_.front().q.size());
    z_.resize(layout_.size(), n);
    for (Index i = 0; i < n; ++i) {
      const auto & nd = nodes_[static_cast<std::size_t>(i)];
      const auto l = detail::layout_of(nd.bundle);
      require(l.d == layout_.d && l.p == layout_.p && l.n_u == layout_.n_u && l.n_w == layout_.n_w &&
                l.n_r == layout_.n_r,
              "dictionary: members differ in dimensions or orders");
      require(nd.q.size() == q_.cols(), "dictionary: grid coordinate dimension differs");
      q_.row(i) = nd.q.transpose();
      z_.col(i) = detail::flatten(nd.bundle);
    }
    for (Index i = 0; i < n; ++i)
      for (Index j = i + 1; j < n; ++j)
        require((q_.row(i) - q_.row(j)).norm() > 1e-12, "dictionary: grid coordinates must be distinct");

    radius_ = sampler_.radius > 0 ? sampler_.radius : 1.5 * median_spacing();
    lo_ = q_.colwise().minCoeff().transpose();
    hi_ = q_.colwise().maxCoeff().transpose();

    int nq = std::max(0, sampler_.order);
    while (nq > 0 && MonomialBasis::with_constant(q_.cols(), nq).size() > n) --nq;
    qpr_order_ = nq;
    qb_ = MonomialBasis::with_constant(q_.cols(), qpr_order_);
    const Mat phi = qb_.evaluate_columns(q_.transpose());
    const LeastSquaresFit fit = least_squares(phi, z_, {1e12, 0.0, "coefficient regression"});
    qpr_coef_ = fit.coeffs;
    qpr_residual_ = fit.residual_norm;
  }

  const std::vector<DictionaryNode> & nodes() const { return nodes_; }
  const CriticalManifoldMap & critical_manifold() const { return cm_; }
  const SamplerConfig & sampler() const { return sampler_; }
  double radius() const { return radius_; }
  int qpr_order() const { return qpr_order_; }
  double qpr_training_residual() const { return qpr_residual_; }
  const Mat & grid_coordinates() const { return q_; }
  Index d() const { return layout_.d; }
  Index embedded_dim() const { return layout_.p; }
  Index input_dim() const { return layout_.n_u; }
  int n_w() const { return layout_.n_w; }
  int n_r() const { return layout_.n_r; }

  ModelBundle query(const Vec & q) const
  {
    return sampler_.kind == SamplerKind::midw ? midw_query(q) : qpr_query(q);
  }

  /// Normalized MIDW weights; empty when q lies outside every ball.
  Vec midw_weights(const Vec & q) const
  {
    require(q.size() == q_.cols(), "midw: grid coordinate dimension");
    const Index n = q_.rows();
    Vec w = Vec::Zero(n);
    for (Index i = 0; i < n; ++i) {
      const double dist = (q_.row(i).transpose() - q).norm();
      if (dist <= 1e-12) {
        Vec e = Vec::Zero(n);
        e[i] = 1.0;
        return e;
      }
      w[i] = std::pow(std::max(0.0, radius_ - dist) / (radius_ * dist), sampler_.exponent);
    }
    const double s = w.sum();
    if (!(s > 0)) return Vec();
    return w / s;
  }

  ModelBundle midw_query(const Vec & q) const
  {
    require(q.size() == q_.cols(), "midw: grid coordinate dimension");
    for (Index i = 0; i < q_.rows(); ++i)
      if ((q_.row(i).transpose() - q).norm() <= 1e-12) return nodes_[static_cast<std::size_t>(i)].bundle;
    const Vec a = midw_weights(q);
    if (a.size() == 0) {
      Index best = 0;
      (q_.rowwise() - q.transpose()).rowwise().squaredNorm().minCoeff(&best);
      ModelBundle b = nodes_[static_cast<std::size_t>(best)].bundle;
      b.extrapolated = true;
      return b;
    }
    return detail::unflatten(z_ * a, layout_);
  }

  ModelBundle qpr_query(const Vec & q) const
  {
    require(q.size() == q_.cols(), "qpr: grid coordinate dimension");
    ModelBundle b = detail::unflatten(qpr_coef_ * qb_.evaluate(q), layout_);
    const double tol = 1e-9 * std::max(1.0, (hi_ - lo_).norm());
    b.extrapolated = ((q - lo_).array() < -tol).any() || ((q - hi_).array() > tol).any();
    return b;
  }

  /// Grid coordinate of the zero-input steady state.
  Vec origin_coordinate() const { return cm_.grid(cm_.forward(Vec::Zero(layout_.n_u))); }
  ModelBundle origin() const { return query(origin_coordinate()); }

private:
  double median_spacing() const
  {
    const Index n = q_.rows();
    if (n < 2) return 1.0;
    std::vector<double> nn;
    for (Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Index j = 0; j < n; ++j)
        if (j != i) best = std::min(best, (q_.row(i) - q_.row(j)).norm());
      nn.push_back(best);
    }
    std::sort(nn.begin(), nn.end());
    const std::size_t m = nn.size() / 2;
    return nn.size() % 2 ? nn[m] : 0.5 * (nn[m - 1] + nn[m]);
  }

  std::vector<DictionaryNode> nodes_;
  CriticalManifoldMap cm_;
  SamplerConfig sampler_;
  detail::BundleLayout layout_;
  Mat q_;
  Mat z_;
  Vec lo_, hi_;
  double radius_{1.0};
  int qpr_order_{0};
  MonomialBasis qb_;
  Mat qpr_coef_;
  double qpr_residual_{0};
};

// ---------------------------------------------------------------------------------------------
// Model hierarchy

enum class ModelOrder { full, first, zeroth };

inline const char * to_string(ModelOrder o)
{
  switch (o) {
    case ModelOrder::full: return "assm";
    case ModelOrder::first: return "first-order";
    case ModelOrder::zeroth: return "zeroth-order";
  }
  return "assm";
}

/**
 * @brief A view of a dictionary that samples the full aSSM family or one of its degenerate
 * approximations.
 *
 * The zeroth-order view always returns the origin model with the origin-chart control matrix.
 * The first-order view keeps the origin V, W, R and takes the anchor, static input and
 * origin-chart control matrix from the position q.
 */
class ModelFamily
{
public:
  ModelFamily(std::shared_ptr<const ASSMDictionary> dict, ModelOrder order)
    : dict_(std::move(dict)), order_(order)
  {
    require(dict_ != nullptr, "model family: null dictionary");
    origin_ = dict_->origin();
  }

  ModelOrder order() const { return order_; }
  const ASSMDictionary & dictionary() const { return *dict_; }
  const ModelBundle & origin_bundle() const { return origin_; }

  ModelBundle at(const Vec & q) const
  {
    switch (order_) {
      case ModelOrder::full: return dict_->query(q);
      case ModelOrder::zeroth: {
        ModelBundle b = origin_;
        b.model.B = origin_.b_first;
        return b;
      }
      case ModelOrder::first: {
        const ModelBundle local = dict_->query(q);
        ModelBundle b = origin_;
        b.model.B = local.b_first;
        b.b_first = local.b_first;
        b.model.anchor = local.model.anchor;
        b.model.static_input = local.model.static_input;
        b.extrapolated = local.extrapolated;
        return b;
      }
    }
    return dict_->query(q);
  }

private:
  std::shared_ptr<const ASSMDictionary> dict_;
  ModelOrder order_;
  ModelBundle origin_;
};

inline ModelFamily first_order_model(std::shared_ptr<const ASSMDictionary> dict)
{
  return ModelFamily(std::move(dict), ModelOrder::first);
}

inline ModelFamily zeroth_order_model(std::shared_ptr<const ASSMDictionary> dict)
{
  return ModelFamily(std::move(dict), ModelOrder::zeroth);
}

/// How the reduced coordinates of an anchored model are centered.
enum class AnchorMode {
  observed,      ///< anchor at the current observation; r0 = 0
  steady_state,  ///< anchor at the sampled steady state; r0 = V^T (y_now - y_s)
};

struct AnchoredModel
{
  ModelBundle bundle;  ///< bundle.model.anchor holds the anchor actually used
  Vec q;
  Vec u_s0;            ///< static input the deviation is measured from
  Vec r0;
  bool extrapolated{false};
};

/**
 * @brief Samples the family at q(y_now): u_s0 = I(q) clipped to `input_box` (zero for the
 * zeroth-order view) and the anchor chosen per `mode`.
 */
inline AnchoredModel assm_model_at(const ModelFamily & family, const Vec & y_now, const Box & input_box,
                                   AnchorMode mode = AnchorMode::steady_state)
{
  const auto & cm = family.dictionary().critical_manifold();
  AnchoredModel out;
  out.q = cm.grid(y_now);
  out.bundle = family.at(out.q);
  out.extrapolated = out.bundle.extrapolated;
  out.u_s0 = family.order() == ModelOrder::zeroth ? Vec::Zero(cm.input_dim()) : input_box.clamp(cm.inverse(out.q));
  if (mode == AnchorMode::observed) {
    out.bundle.model.anchor = y_now;
    out.r0 = Vec::Zero(out.bundle.model.d());
  } else {
    out.r0 = out.bundle.model.reduce(y_now);
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Building

struct DictionaryFitSpec
{
  StaticFitSpec static_fit;
  AssembleOptions assemble;
  SamplerConfig sampler;
  int n_s{2};
  int n_i{2};
  Mat grid_selector;        ///< g x p; empty selects the first g = n_u observable coordinates
  double max_failure_fraction{0.1};
  unsigned workers{0};
};

struct NodeFailure
{
  std::string group;
  Vec static_input;
  ErrorKind kind{ErrorKind::precondition};
  std::string message;
};

struct DictionaryBuild
{
  std::shared_ptr<const ASSMDictionary> dictionary;
  std::vector<NodeFailure> failures;
  std::vector<AlignmentWarning> alignment_warnings;
  std::size_t reference{0};
};

/**
 * @brief Fits one static model per group, the critical-manifold maps, aligns every model to the
 * zero-input model and calibrates the origin-chart control matrices.
 */
inline DictionaryBuild fit_dictionary(const TrainingSet & ts, const DictionaryFitSpec & spec)
{
  require(!ts.groups.empty(), "dictionary: empty training set");
  const std::size_t n = ts.groups.size();
  std::vector<std::optional<StaticFit>> fits(n);
  std::vector<std::optional<NodeFailure>> fails(n);
  parallel_for(
    n,
    [&](std::size_t i) {
      try {
        fits[i] = fit_static_model(ts.groups[i], spec.static_fit);
      } catch (const Error & e) {
        fails[i] = NodeFailure{ts.groups[i].name, ts.groups[i].static_input, e.kind(), e.what()};
      }
    },
    spec.workers);

  DictionaryBuild out;
  std::vector<std::size_t> ok;
  for (std::size_t i = 0; i < n; ++i) {
    if (fits[i]) ok.push_back(i);
    if (fails[i]) out.failures.push_back(*fails[i]);
  }
  if (ok.empty() || static_cast<double>(out.failures.size()) > spec.max_failure_fraction * static_cast<double>(n)) {
    std::string msg = "dictionary: " + std::to_string(out.failures.size()) + " of " + std::to_string(n) +
                      " static models failed";
    for (const auto & f : out.failures) msg += "; " + f.message;
    throw Error(out.failures.empty() ? ErrorKind::precondition : out.failures.front().kind, msg);
  }

  const Index p = ts.groups.front().anchor.size();
  const Index n_u = ts.groups.front().static_input.size();
  Mat selector = spec.grid_selector;
  if (selector.size() == 0) {
    selector = Mat::Zero(n_u, p);
    selector.leftCols(n_u).setIdentity();
  }

  std::vector<Vec> us, ys;
  std::vector<StaticSSMModel> models;
  for (std::size_t i : ok) {
    us.push_back(ts.groups[i].static_input);
    ys.push_back(ts.groups[i].anchor);
    models.push_back(fits[i]->model);
  }
  CriticalManifoldMap cm = CriticalManifoldMap::fit(us, ys, spec.n_s, spec.n_i, selector);

  std::size_t ref = 0;
  for (std::size_t k = 1; k < us.size(); ++k)
    if (us[k].norm() < us[ref].norm()) ref = k;
  out.reference = ok[ref];
  AlignmentResult aligned = align_orientations(std::move(models), ref);
  out.alignment_warnings = aligned.warnings;
  for (auto & w : out.alignment_warnings) w.model = ok[w.model];

  const bool has_b = aligned.models.front().B.size() > 0;
  std::vector<DictionaryNode> nodes;
  for (std::size_t k = 0; k < ok.size(); ++k) {
    DictionaryNode nd;
    nd.name = ts.groups[ok[k]].name;
    nd.q = cm.grid(ys[k]);
    nd.bundle.model = aligned.models[k];
    require(has_b == (nd.bundle.model.B.size() > 0), "dictionary: controlled data must be present in all or no groups");
    if (!has_b) {
      nd.bundle.model.B = Mat::Zero(nd.bundle.model.d(), n_u);
      nd.bundle.model.static_input = us[k];
    }
    nd.bundle.b_first = nd.bundle.model.B;
    nd.report = fits[ok[k]]->report;
    nodes.push_back(std::move(nd));
  }

  if (has_b) {
    // origin chart: V and R of the dictionary sampled at the zero-input steady state
    const ASSMDictionary provisional(nodes, cm, spec.sampler);
    const ModelBundle origin = provisional.origin();
    std::vector<std::optional<Mat>> bf(nodes.size());
    parallel_for(
      nodes.size(),
      [&](std::size_t k) {
        const auto & g = ts.groups[ok[k]];
        bf[k] = calibrate_control_matrix(origin.model.V, origin.model.R, origin.model.n_r(), g.static_input,
                                         g.controlled, InputMode::deviation)
                  .B;
      },
      spec.workers);
    for (std::size_t k = 0; k < nodes.size(); ++k) nodes[k].bundle.b_first = *bf[k];
  }
  out.dictionary = std::make_shared<const ASSMDictionary>(std::move(nodes), std::move(cm), spec.sampler);
  return out;
}

/// Rebuilds a dictionary with identical members and a different sampler.
inline std::shared_ptr<const ASSMDictionary> with_sampler(const ASSMDictionary & dict, SamplerConfig sampler)
{
  return std::make_shared<const ASSMDictionary>(dict.nodes(), dict.critical_manifold(), sampler);
}

struct StaticDictionaryResult
{
  Dataset dataset;
  TrainingSet training;
  DictionaryBuild build;
};

/// Collect, assemble and fit in one go.
inline StaticDictionaryResult build_static_dictionary(const DynamicsModel & model, const std::vector<Vec> & static_inputs,
                                                      const CollectionSpec & collection, const EmbeddingSpec & embedding,
                                                      const DictionaryFitSpec & fit, const std::vector<Vec> & guesses = {})
{
  StaticDictionaryResult out;
  out.dataset = collect_dataset(model, static_inputs, collection, guesses);
  out.training = assemble_training_set(raw_groups(out.dataset), embedding, fit.assemble);
  out.build = fit_dictionary(out.training, fit);
  return out;
}

}  // namespace assm
