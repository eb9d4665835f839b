#pragma once

/**
 * @file
 * @brief Controlled ODE models x' = f(x) + g(x, u), fixed-step RK4 integration, steady states and
 * linearization.
 *
 * The rod-chain equations come from Euler-Lagrange for N uniform rigid rods in absolute angles
 * phi_i measured from the downward vertical. With
 *
 *   c_ij = L_i L_j (sum_{k > max(i,j)} m_k + m_max(i,j) / 2),  i != j
 *   c_ii = L_i^2   (sum_{k > i} m_k + m_i / 3)
 *
 * the mass matrix is M_ij = c_ij cos(phi_i - phi_j), the velocity-product term is
 * sum_j c_ij sin(phi_i - phi_j) phi_j'^2 and gravity contributes g L_i (sum_{k>i} m_k + m_i / 2)
 * sin(phi_i). Viscous damping and joint springs enter as -D phi' and -K phi, and inputs as a
 * constant generalized-force map P u. For two equal rods (L = 1 m, m = 1 kg) this gives
 * M = [[4/3, cos(d)/2], [cos(d)/2, 1/3]], d = phi_1 - phi_2.
 */

#include "core.hpp"
#include "trajectory.hpp"

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace assm {

/// Abstract controlled ODE with observation and workspace maps.
class DynamicsModel
{
public:
  virtual ~DynamicsModel() = default;

  virtual std::string name() const = 0;
  virtual Index state_dim() const = 0;
  virtual Index input_dim() const = 0;

  /// Drift f(x).
  virtual Vec drift(const Vec & x) const = 0;
  /// Control coupling g(x, u); g(x, 0) = 0.
  virtual Vec coupling(const Vec & x, const Vec & u) const = 0;
  virtual Box input_box() const = 0;

  virtual Vec rest_state() const { return Vec::Zero(state_dim()); }

  /// Observable map h(x); identity unless overridden.
  virtual Vec observe(const Vec & x) const { return x; }
  virtual Index observable_dim() const { return state_dim(); }
  /// Linear map from observables to workspace coordinates.
  virtual Mat workspace_map() const { return Mat::Identity(observable_dim(), observable_dim()); }

  /// Mechanical energy when the model defines one.
  virtual std::optional<double> energy(const Vec &) const { return std::nullopt; }

  /// Named scalar parameters for manifests.
  virtual std::vector<std::pair<std::string, double>> parameters() const { return {}; }

  Vec rhs(const Vec & x, const Vec & u) const { return drift(x) + coupling(x, u); }
  Index workspace_dim() const { return workspace_map().rows(); }
};

/// x' = M x + N u.
class LinearModel : public DynamicsModel
{
public:
  LinearModel(Mat m, Mat n, std::optional<Box> box = std::nullopt, std::string name = "linear")
      : m_(std::move(m)), n_(std::move(n)), name_(std::move(name))
  {
    require(m_.rows() == m_.cols() && n_.rows() == m_.rows(), "linear model: dimension mismatch");
    box_ = box ? *box : Box::uniform(n_.cols(), -1e6, 1e6);
  }

  std::string name() const override { return name_; }
  Index state_dim() const override { return m_.rows(); }
  Index input_dim() const override { return n_.cols(); }
  Vec drift(const Vec & x) const override { return m_ * x; }
  Vec coupling(const Vec &, const Vec & u) const override { return n_ * u; }
  Box input_box() const override { return box_; }

  const Mat & system_matrix() const { return m_; }
  const Mat & input_matrix() const { return n_; }

private:
  Mat m_;
  Mat n_;
  Box box_;
  std::string name_;
};

/// Undamped unit-frequency oscillator x'' = -x + u.
inline LinearModel harmonic_oscillator()
{
  Mat m(2, 2);
  m << 0, 1, -1, 0;
  Mat n(2, 1);
  n << 0, 1;
  return LinearModel(m, n, Box::uniform(1, -10, 10), "harmonic-oscillator");
}

/**
 * @brief Planar chain of uniform rods hanging under gravity (absolute-angle coordinates).
 *
 * State x = (phi_1..phi_N, phi_1'..phi_N').
 */
class RodChain : public DynamicsModel
{
public:
  struct Params
  {
    std::vector<double> lengths;
    std::vector<double> masses;
    double gravity{9.8};
    Mat damping;    ///< N x N, symmetric PSD; generalized force -D phi'
    Mat stiffness;  ///< N x N, symmetric PSD; generalized force -K phi
    Mat actuation;  ///< N x n_u generalized-force map
    Box input_box;
  };

  explicit RodChain(Params p) : p_(std::move(p))
  {
    const auto n = static_cast<Index>(p_.lengths.size());
    require(n >= 1 && p_.masses.size() == p_.lengths.size(), "rod chain: lengths/masses mismatch");
    require(p_.damping.rows() == n && p_.damping.cols() == n, "rod chain: damping shape");
    require(p_.stiffness.rows() == n && p_.stiffness.cols() == n, "rod chain: stiffness shape");
    require(p_.actuation.rows() == n, "rod chain: actuation shape");
    require(p_.input_box.valid() && p_.input_box.dim() == p_.actuation.cols() &&
              p_.input_box.contains(Vec::Zero(p_.actuation.cols())),
            "rod chain: input box must be nonempty and contain 0");
    n_ = n;
    coef_.resize(n, n);
    grav_.resize(n);
    for (Index i = 0; i < n; ++i) {
      double below = 0;
      for (Index k = i + 1; k < n; ++k) below += p_.masses[static_cast<std::size_t>(k)];
      const double li = p_.lengths[static_cast<std::size_t>(i)];
      const double mi = p_.masses[static_cast<std::size_t>(i)];
      grav_[i] = p_.gravity * li * (below + 0.5 * mi);
      for (Index j = 0; j < n; ++j) {
        const Index hi = std::max(i, j);
        double tail = 0;
        for (Index k = hi + 1; k < n; ++k) tail += p_.masses[static_cast<std::size_t>(k)];
        const double lj = p_.lengths[static_cast<std::size_t>(j)];
        const double mh = p_.masses[static_cast<std::size_t>(hi)];
        coef_(i, j) = (i == j) ? li * li * (tail + mh / 3.0) : li * lj * (tail + 0.5 * mh);
      }
    }
  }

  Index links() const { return n_; }
  Index state_dim() const override { return 2 * n_; }
  Index input_dim() const override { return p_.actuation.cols(); }
  Box input_box() const override { return p_.input_box; }
  const Params & params() const { return p_; }

  Mat mass_matrix(const Vec & phi) const
  {
    Mat m(n_, n_);
    for (Index i = 0; i < n_; ++i)
      for (Index j = 0; j < n_; ++j) m(i, j) = coef_(i, j) * std::cos(phi[i] - phi[j]);
    return m;
  }

  /// Generalized forces excluding inputs: -(velocity products) - gravity - K phi - D phi'.
  Vec passive_forces(const Vec & phi, const Vec & dphi) const
  {
    Vec q(n_);
    for (Index i = 0; i < n_; ++i) {
      double s = 0;
      for (Index j = 0; j < n_; ++j) s += coef_(i, j) * std::sin(phi[i] - phi[j]) * dphi[j] * dphi[j];
      q[i] = -s - grav_[i] * std::sin(phi[i]);
    }
    q -= p_.stiffness * phi + p_.damping * dphi;
    return q;
  }

  Vec drift(const Vec & x) const override
  {
    const Vec phi = x.head(n_);
    const Vec dphi = x.tail(n_);
    Vec out(2 * n_);
    out.head(n_) = dphi;
    out.tail(n_) = mass_matrix(phi).ldlt().solve(passive_forces(phi, dphi));
    return out;
  }

  Vec coupling(const Vec & x, const Vec & u) const override
  {
    Vec out = Vec::Zero(2 * n_);
    out.tail(n_) = mass_matrix(x.head(n_)).ldlt().solve(p_.actuation * u);
    return out;
  }

  std::optional<double> energy(const Vec & x) const override
  {
    const Vec phi = x.head(n_);
    const Vec dphi = x.tail(n_);
    double e = 0.5 * dphi.dot(mass_matrix(phi) * dphi) + 0.5 * phi.dot(p_.stiffness * phi);
    for (Index i = 0; i < n_; ++i) e += grav_[i] * (1.0 - std::cos(phi[i]));
    return e;
  }

  /// Static generalized force needed to hold configuration phi at rest.
  Vec holding_force(const Vec & phi) const
  {
    return -passive_forces(phi, Vec::Zero(n_));
  }

protected:
  Params p_;
  Index n_{0};
  Mat coef_;
  Vec grav_;
};

/**
 * @brief Double pendulum of two equal uniform rods with per-rod viscous damping and a torque on
 * each angle. The top rod is damped twice as much as the lower one.
 *
 * Observable is the full state; workspace is (theta_1, theta_2).
 */
class DoublePendulumModel : public RodChain
{
public:
  struct Config
  {
    double length{1.0};
    double mass{1.0};
    double gravity{9.8};
    double lower_damping{1.0};  ///< c2; c1 = 2 c2
    Vec torque_limit{Vec::Constant(2, 10.0)};
  };

  DoublePendulumModel() : DoublePendulumModel(Config{}) {}
  explicit DoublePendulumModel(const Config & c) : RodChain(make_params(c)), cfg_(c) {}

  std::string name() const override { return "double-pendulum"; }
  Mat workspace_map() const override
  {
    Mat c = Mat::Zero(2, 4);
    c(0, 0) = 1;
    c(1, 1) = 1;
    return c;
  }
  std::vector<std::pair<std::string, double>> parameters() const override
  {
    return {{"length", cfg_.length},
            {"mass", cfg_.mass},
            {"gravity", cfg_.gravity},
            {"c1", 2.0 * cfg_.lower_damping},
            {"c2", cfg_.lower_damping},
            {"torque_limit_1", cfg_.torque_limit[0]},
            {"torque_limit_2", cfg_.torque_limit[1]}};
  }
  const Config & config() const { return cfg_; }

private:
  static Params make_params(const Config & c)
  {
    Params p;
    p.lengths = {c.length, c.length};
    p.masses = {c.mass, c.mass};
    p.gravity = c.gravity;
    p.damping = Vec2(2.0 * c.lower_damping, c.lower_damping).asDiagonal();
    p.stiffness = Mat::Zero(2, 2);
    p.actuation = Mat::Identity(2, 2);
    p.input_box = Box::symmetric(c.torque_limit);
    return p;
  }
  using Vec2 = Eigen::Vector2d;
  Config cfg_;
};

/**
 * @brief Planar N-link chain with joint springs and dampers on relative angles and torque motors
 * at selected joints; the observable is the tip position relative to rest.
 */
class ChainProxyModel : public RodChain
{
public:
  struct Config
  {
    int links{4};
    double link_length{0.25};
    double link_mass{0.1};
    double gravity{9.8};
    double joint_stiffness{2.0};
    double joint_damping{0.15};
    std::vector<int> actuated_joints{1, 3};
    double torque_limit{0.5};
  };

  ChainProxyModel() : ChainProxyModel(Config{}) {}
  explicit ChainProxyModel(const Config & c) : RodChain(make_params(c)), cfg_(c) {}

  std::string name() const override { return "chain-proxy"; }
  Index observable_dim() const override { return 2; }
  Vec observe(const Vec & x) const override
  {
    Vec tip = Vec::Zero(2);
    double total = 0;
    for (Index i = 0; i < n_; ++i) {
      const double l = p_.lengths[static_cast<std::size_t>(i)];
      tip[0] += l * std::sin(x[i]);
      tip[1] -= l * std::cos(x[i]);
      total += l;
    }
    tip[1] += total;
    return tip;
  }
  Mat workspace_map() const override { return Mat::Identity(2, 2); }
  std::vector<std::pair<std::string, double>> parameters() const override
  {
    return {{"links", cfg_.links},
            {"link_length", cfg_.link_length},
            {"link_mass", cfg_.link_mass},
            {"gravity", cfg_.gravity},
            {"joint_stiffness", cfg_.joint_stiffness},
            {"joint_damping", cfg_.joint_damping},
            {"torque_limit", cfg_.torque_limit}};
  }

private:
  static Params make_params(const Config & c)
  {
    require(c.links >= 1, "chain proxy: need at least one link");
    const Index n = c.links;
    Params p;
    p.lengths.assign(static_cast<std::size_t>(n), c.link_length);
    p.masses.assign(static_cast<std::size_t>(n), c.link_mass);
    p.gravity = c.gravity;
    // relative angle psi = T phi, T lower bidiagonal
    Mat t = Mat::Identity(n, n);
    for (Index j = 1; j < n; ++j) t(j, j - 1) = -1;
    p.damping = c.joint_damping * t.transpose() * t;
    p.stiffness = c.joint_stiffness * t.transpose() * t;
    p.actuation = Mat::Zero(n, static_cast<Index>(c.actuated_joints.size()));
    for (std::size_t a = 0; a < c.actuated_joints.size(); ++a) {
      const int j = c.actuated_joints[a];
      require(j >= 0 && j < c.links, "chain proxy: actuated joint out of range");
      p.actuation.col(static_cast<Index>(a)) = t.transpose().col(j);
    }
    p.input_box = Box::uniform(p.actuation.cols(), -c.torque_limit, c.torque_limit);
    return p;
  }
  Config cfg_;
};

// ---------------------------------------------------------------------------------------------
// Integration

struct IntegrateOptions
{
  double dt{1e-3};
  int stride{1};  ///< record every stride-th step
};

/// One classical RK4 step with the input evaluated at t, t + h/2, t + h.
inline Vec rk4_step(const DynamicsModel & model, const Vec & x, const InputSignal & u, double t, double h)
{
  const Vec u0 = u(t);
  const Vec uh = u(t + 0.5 * h);
  const Vec u1 = u(t + h);
  const Vec k1 = model.rhs(x, u0);
  const Vec k2 = model.rhs(x + 0.5 * h * k1, uh);
  const Vec k3 = model.rhs(x + 0.5 * h * k2, uh);
  const Vec k4 = model.rhs(x + h * k3, u1);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/**
 * @brief Fixed-step RK4 solution of x' = f(x) + g(x, u(t)) on [t0, t1].
 *
 * Samples every `stride` steps (always including t0). Throws IntegrationDiverged on a non-finite
 * state.
 */
inline Trajectory integrate_ode(const DynamicsModel & model, const Vec & x0, const InputSignal & input,
                                double t0, double t1, const IntegrateOptions & opt = {})
{
  require(opt.dt > 0, "integrate_ode: dt must be positive");
  require(opt.stride >= 1, "integrate_ode: stride must be >= 1");
  require(t1 >= t0, "integrate_ode: empty time span");
  require(x0.size() == model.state_dim() && x0.allFinite(), "integrate_ode: x0 must be finite");
  const auto steps = static_cast<Index>(std::llround((t1 - t0) / opt.dt));
  require(std::abs(static_cast<double>(steps) * opt.dt - (t1 - t0)) <= 1e-9 * std::max(1.0, t1 - t0),
          "integrate_ode: span is not a multiple of dt");
  const Index samples = steps / opt.stride + 1;

  Trajectory out;
  out.times.resize(samples);
  out.values.resize(model.state_dim(), samples);
  out.inputs.resize(model.input_dim(), samples);
  out.label = TrajectoryLabel::derived;

  Vec x = x0;
  Index col = 0;
  for (Index k = 0; k <= steps; ++k) {
    const double t = t0 + static_cast<double>(k) * opt.dt;
    if (k % opt.stride == 0 && col < samples) {
      out.times[col] = t;
      out.values.col(col) = x;
      out.inputs.col(col) = input(t);
      ++col;
    }
    if (k == steps) break;
    Vec next = rk4_step(model, x, input, t, opt.dt);
    if (!next.allFinite()) throw IntegrationDiverged(t);
    x = std::move(next);
  }
  return out;
}

inline InputSignal constant_input(const Vec & u)
{
  return [u](double) { return u; };
}

/// Applies the model's observable map column-wise.
inline Trajectory observe(const DynamicsModel & model, const Trajectory & states)
{
  Trajectory out = states;
  out.values.resize(model.observable_dim(), states.size());
  for (Index k = 0; k < states.size(); ++k) out.values.col(k) = model.observe(states.values.col(k));
  return out;
}

// ---------------------------------------------------------------------------------------------
// Linearization

struct Linearization
{
  Mat a;                     ///< D_x [f + g]
  Mat b;                     ///< D_u g
  Eigen::VectorXcd eigen;    ///< sorted by descending real part
};

/// Central differences with step 1e-6 (1 + |component|).
inline Mat fd_jacobian(const std::function<Vec(const Vec &)> & fn, const Vec & at)
{
  const Vec f0 = fn(at);
  Mat jac(f0.size(), at.size());
  Vec xp = at;
  for (Index i = 0; i < at.size(); ++i) {
    const double h = 1e-6 * (1.0 + std::abs(at[i]));
    xp[i] = at[i] + h;
    const Vec fp = fn(xp);
    xp[i] = at[i] - h;
    const Vec fm = fn(xp);
    xp[i] = at[i];
    jac.col(i) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

inline Linearization linearize_at(const DynamicsModel & model, const Vec & x, const Vec & u)
{
  require(x.allFinite() && u.allFinite(), "linearize_at: non-finite point");
  Linearization lin;
  lin.a = fd_jacobian([&](const Vec & s) { return model.rhs(s, u); }, x);
  lin.b = fd_jacobian([&](const Vec & v) { return model.rhs(x, v); }, u);
  if (!lin.a.allFinite() || !lin.b.allFinite())
    throw Error(ErrorKind::integration_diverged, "linearize_at: non-finite evaluation");
  lin.eigen = sorted_eigenvalues(lin.a);
  return lin;
}

/// Re(lambda_{d+1}) / Re(lambda_d) for eigenvalues sorted by descending real part.
inline double spectral_gap_ratio(const Eigen::VectorXcd & eig, Index d)
{
  require(d >= 1 && d < eig.size(), "spectral gap: need 1 <= d < n");
  return eig[d].real() / eig[d - 1].real();
}

/// Integer-part normal attraction rate min_u floor(Re lambda_{d+1} / Re lambda_d).
inline int normal_attraction_rate(const std::vector<Eigen::VectorXcd> & spectra, Index d)
{
  int rho = std::numeric_limits<int>::max();
  for (const auto & s : spectra) rho = std::min(rho, static_cast<int>(std::floor(spectral_gap_ratio(s, d))));
  return rho;
}

// ---------------------------------------------------------------------------------------------
// Steady states

struct EquilibriumOptions
{
  double tol{1e-10};
  int newton_iterations{50};
  double settle_tol{1e-9};
  double settle_horizon{2000.0};
  double settle_dt{1e-2};
};

namespace detail {

inline std::optional<Vec> newton_equilibrium(const DynamicsModel & model, const Vec & u, Vec x,
                                             const EquilibriumOptions & opt)
{
  for (int it = 0; it < opt.newton_iterations; ++it) {
    const Vec r = model.rhs(x, u);
    if (!r.allFinite()) return std::nullopt;
    const double rn = r.norm();
    if (rn <= opt.tol) return x;
    const Mat jac = fd_jacobian([&](const Vec & s) { return model.rhs(s, u); }, x);
    const Vec step = jac.colPivHouseholderQr().solve(-r);
    if (!step.allFinite()) return std::nullopt;
    double a = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 30; ++ls, a *= 0.5) {
      const Vec trial = x + a * step;
      const Vec rt = model.rhs(trial, u);
      if (rt.allFinite() && rt.norm() < rn) {
        x = trial;
        improved = true;
        break;
      }
    }
    if (!improved) return model.rhs(x, u).norm() <= opt.tol ? std::optional<Vec>(x) : std::nullopt;
  }
  return model.rhs(x, u).norm() <= opt.tol ? std::optional<Vec>(x) : std::nullopt;
}

}  // namespace detail

/**
 * @brief Steady state of the frozen system x' = f(x) + g(x, u_const).
 *
 * Newton with a finite-difference Jacobian; if that stalls, integrates with the constant input
 * until |x'| <= settle_tol and polishes with Newton.
 */
inline Vec find_equilibrium(const DynamicsModel & model, const Vec & u_const, const Vec & x_guess,
                            const EquilibriumOptions & opt = {})
{
  require(u_const.size() == model.input_dim(), "find_equilibrium: input dimension");
  require(model.input_box().contains(u_const, 1e-12), "find_equilibrium: input outside input box");
  require(x_guess.size() == model.state_dim(), "find_equilibrium: guess dimension");
  if (auto x = detail::newton_equilibrium(model, u_const, x_guess, opt)) return *x;

  const InputSignal hold = constant_input(u_const);
  Vec x = x_guess;
  double t = 0;
  while (t < opt.settle_horizon) {
    x = rk4_step(model, x, hold, t, opt.settle_dt);
    t += opt.settle_dt;
    if (!x.allFinite()) break;
    if (model.rhs(x, u_const).norm() <= opt.settle_tol) {
      if (auto xp = detail::newton_equilibrium(model, u_const, x, opt)) return *xp;
      break;
    }
  }
  throw Error(ErrorKind::no_steady_state, "no steady state found for the requested input");
}

/**
 * @brief Input that holds state x stationary: least-squares solution of f(x) + g(x, u) = 0 in u
 * (Gauss-Newton with finite-difference input Jacobian).
 */
inline Vec find_static_input(const DynamicsModel & model, const Vec & x, double tol = 1e-11)
{
  Vec u = Vec::Zero(model.input_dim());
  for (int it = 0; it < 30; ++it) {
    const Vec r = model.rhs(x, u);
    const Mat ju = fd_jacobian([&](const Vec & v) { return model.rhs(x, v); }, u);
    const Vec step = ju.colPivHouseholderQr().solve(-r);
    u += step;
    if (step.norm() <= tol * (1.0 + u.norm())) break;
  }
  return u;
}

}  // namespace assm
