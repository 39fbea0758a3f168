#include "suq/channel_solver.hpp"

#include "suq/csv.hpp"
#include "suq/errors.hpp"
#include "suq/features.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>

namespace suq {

namespace {

constexpr double kTiny = 1e-30;

/// Thomas algorithm; lower/upper are indexed by row (lower[0], upper[n-1] unused).
Eigen::VectorXd solve_tridiagonal(const Eigen::VectorXd& lower, Eigen::VectorXd diag,
                                  const Eigen::VectorXd& upper, Eigen::VectorXd rhs) {
  const Eigen::Index n = diag.size();
  for (Eigen::Index i = 1; i < n; ++i) {
    const double m = lower(i) / diag(i - 1);
    diag(i) -= m * upper(i - 1);
    rhs(i) -= m * rhs(i - 1);
  }
  Eigen::VectorXd x(n);
  x(n - 1) = rhs(n - 1) / diag(n - 1);
  for (Eigen::Index i = n - 2; i >= 0; --i) x(i) = (rhs(i) - upper(i) * x(i + 1)) / diag(i);
  return x;
}

/// Node-based finite volumes on the half channel. Node 0 is a Dirichlet wall
/// node, the last node owns a half volume closed by the symmetry plane.
class HalfChannel {
 public:
  explicit HalfChannel(Eigen::VectorXd y) : y_(std::move(y)) {
    const Eigen::Index n = y_.size();
    h_ = y_.tail(n - 1) - y_.head(n - 1);
    vol_.resize(n);
    vol_(0) = 0.5 * h_(0);
    for (Eigen::Index i = 1; i < n - 1; ++i) vol_(i) = 0.5 * (h_(i - 1) + h_(i));
    vol_(n - 1) = 0.5 * h_(n - 2);
  }

  Eigen::Index size() const { return y_.size(); }
  const Eigen::VectorXd& y() const { return y_; }
  const Eigen::VectorXd& spacing() const { return h_; }

  /// Second-order nodal derivative; one-sided at the wall, zero at the centerline.
  Eigen::VectorXd gradient(const Eigen::VectorXd& f) const {
    const Eigen::Index n = size();
    Eigen::VectorXd g(n);
    const double h0 = h_(0), h1 = h_(1);
    g(0) = -(2.0 * h0 + h1) / (h0 * (h0 + h1)) * f(0) + (h0 + h1) / (h0 * h1) * f(1) -
           h0 / (h1 * (h0 + h1)) * f(2);
    for (Eigen::Index i = 1; i < n - 1; ++i) {
      const double hm = h_(i - 1), hp = h_(i);
      g(i) = (hm * hm * (f(i + 1) - f(i)) + hp * hp * (f(i) - f(i - 1))) / (hm * hp * (hm + hp));
    }
    g(n - 1) = 0.0;
    return g;
  }

  /// (f[i+1] - f[i]) / h[i] at every face.
  Eigen::VectorXd face_slope(const Eigen::VectorXd& f) const {
    const Eigen::Index n = size();
    return (f.tail(n - 1) - f.head(n - 1)).cwiseQuotient(h_);
  }

  Eigen::VectorXd face_average(const Eigen::VectorXd& f) const {
    const Eigen::Index n = size();
    return 0.5 * (f.head(n - 1) + f.tail(n - 1));
  }

  /// Solves d/dy(gamma dphi/dy) + su + sp*phi + d(flux)/dy = 0 for nodes 1..n-1 with
  /// phi(0) = wall. gamma and flux live on faces; sp <= 0. Implicit
  /// under-relaxation toward `old` with factor `relax`.
  Eigen::VectorXd solve(const Eigen::VectorXd& gamma, const Eigen::VectorXd& su, const Eigen::VectorXd& sp,
                        const Eigen::VectorXd* flux, double wall, const Eigen::VectorXd& old,
                        double relax) const {
    const Eigen::Index n = size();
    Eigen::VectorXd lo = Eigen::VectorXd::Zero(n), di = Eigen::VectorXd::Zero(n),
                    up = Eigen::VectorXd::Zero(n), rhs = Eigen::VectorXd::Zero(n);
    di(0) = 1.0;
    rhs(0) = wall;
    for (Eigen::Index i = 1; i < n; ++i) {
      const double aw = gamma(i - 1) / h_(i - 1);
      const double ae = i < n - 1 ? gamma(i) / h_(i) : 0.0;
      double ap = aw + ae - sp(i) * vol_(i);
      double b = su(i) * vol_(i);
      if (flux) b += (i < n - 1 ? (*flux)(i) : 0.0) - (*flux)(i - 1);
      ap /= relax;
      b += (1.0 - relax) * ap * old(i);
      lo(i) = -aw;
      up(i) = -ae;
      di(i) = ap;
      rhs(i) = b;
    }
    return solve_tridiagonal(lo, di, up, rhs);
  }

 private:
  Eigen::VectorXd y_;
  Eigen::VectorXd h_;
  Eigen::VectorXd vol_;
};

double relative_change(const Eigen::VectorXd& next, const Eigen::VectorXd& prev) {
  const double scale = std::max(next.cwiseAbs().maxCoeff(), kTiny);
  return (next - prev).cwiseAbs().maxCoeff() / scale;
}

/// Anderson acceleration of a fixed-point map x -> g(x).
class AndersonMixer {
 public:
  explicit AndersonMixer(int depth) : depth_(depth) {}

  Eigen::VectorXd next(const Eigen::VectorXd& x, const Eigen::VectorXd& gx, const Eigen::VectorXd& weight) {
    const Eigen::VectorXd f = weight.cwiseProduct(gx - x);
    if (prev_f_.size() == f.size()) {
      df_.push_back(f - prev_f_);
      dg_.push_back(gx - prev_g_);
      if (static_cast<int>(df_.size()) > depth_) {
        df_.erase(df_.begin());
        dg_.erase(dg_.begin());
      }
    }
    prev_f_ = f;
    prev_g_ = gx;
    if (df_.empty()) return gx;
    const auto m = static_cast<Eigen::Index>(df_.size());
    Eigen::MatrixXd a(f.size(), m);
    for (Eigen::Index j = 0; j < m; ++j) a.col(j) = df_[static_cast<std::size_t>(j)];
    const Eigen::VectorXd gamma = a.colPivHouseholderQr().solve(f);
    if (!gamma.allFinite()) {
      reset();
      return gx;
    }
    Eigen::VectorXd out = gx;
    for (Eigen::Index j = 0; j < m; ++j) out -= gamma(j) * dg_[static_cast<std::size_t>(j)];
    return out;
  }

  void reset() {
    df_.clear();
    dg_.clear();
    prev_f_.resize(0);
  }

 private:
  int depth_;
  std::vector<Eigen::VectorXd> df_, dg_;
  Eigen::VectorXd prev_f_, prev_g_;
};

class SstChannelSolver {
 public:
  SstChannelSolver(const ChannelConfig& cfg, const StressSource* source)
      : cfg_(cfg), mesh_(make_grid(cfg)), source_(source) {
    relax_ = cfg.under_relaxation.value_or(source ? 0.7 : 0.8);
    initialize();
  }

  ChannelState run() {
    // Anderson mixing over the Picard map. With injection only k and omega
    // are mixed, guarded, and mixing is dropped once it stops making progress.
    AndersonMixer mixer(kAndersonDepth);
    bool mixing = true;
    double best = std::numeric_limits<double>::infinity();
    int best_it = 0;
    double dropped_at = 0.0;
    const Eigen::Index n = mesh_.size();
    for (int it = 1; it <= cfg_.max_iters; ++it) {
      const Eigen::VectorXd before = pack();
      const double res = step();
      state_.residual_history.push_back(res);
      state_.iterations = it;
      if (!std::isfinite(res) || !state_.u_plus.allFinite() || !state_.k_plus.allFinite() ||
          !state_.omega_plus.allFinite()) {
        throw NumericalError("channel solver produced NaN at iteration " + std::to_string(it));
      }
      if (res < cfg_.residual_tol) {
        state_.converged = true;
        return finish();
      }
      if (!source_) {
        unpack(mixer.next(before, pack(), weights()));
        continue;
      }
      if (res < best) {
        best = res;
        best_it = it;
      } else if (mixing && it - best_it > kStallIters) {
        mixing = false;
        dropped_at = best;
      }
      if (!mixing) {
        if (res > kRemixGain * dropped_at) continue;
        mixing = true;
        mixer.reset();
        best = res;
        best_it = it;
      }
      const Eigen::VectorXd g = pack();
      Eigen::VectorXd w = weights();
      w.head(n).setZero();
      Eigen::VectorXd z = mixer.next(before, g, w);
      z.head(n) = g.head(n);
      const auto k_mix = z.segment(n, n).array();
      const auto w_mix = z.segment(2 * n, n).array();
      const auto w_pic = g.segment(2 * n, n).array();
      if ((k_mix < 0.0).any() || (w_mix < 0.2 * w_pic).any() || (w_mix > 5.0 * w_pic).any()) {
        mixer.reset();
      } else {
        unpack(z);
      }
    }
    std::ostringstream msg;
    msg << "channel solver did not converge in " << cfg_.max_iters
        << " iterations (last residual " << state_.residual_history.back() << ")";
    throw ConvergenceError(msg.str(), state_.residual_history);
  }

 private:
  static constexpr int kAndersonDepth = 6;
  static constexpr int kStallIters = 300;
  // Plain Picard must cut the residual by this factor before mixing resumes.
  static constexpr double kRemixGain = 1e-1;
  // k scale floor of the residual, so a decaying k can converge.
  static constexpr double kMinTke = 1e-6;
  // Smallest face slope kept where the injected shear exceeds the total shear.
  static constexpr double kMinSlope = 1e-10;

  Eigen::VectorXd pack() const {
    const Eigen::Index n = mesh_.size();
    Eigen::VectorXd z(3 * n);
    z << state_.u_plus, state_.k_plus, state_.omega_plus;
    return z;
  }

  void unpack(const Eigen::VectorXd& z) {
    const Eigen::Index n = mesh_.size();
    state_.u_plus = z.segment(0, n);
    state_.k_plus = z.segment(n, n).cwiseMax(0.0);
    state_.omega_plus = z.segment(2 * n, n).cwiseMax(1e-12);
    state_.u_plus(0) = 0.0;
    state_.k_plus(0) = 0.0;
    state_.omega_plus(0) = wall_omega();
    update_closure();
  }

  /// Per-entry scaling so the three fields weigh alike in the mixing.
  Eigen::VectorXd weights() const {
    const Eigen::Index n = mesh_.size();
    Eigen::VectorXd w(3 * n);
    w.segment(0, n).setConstant(1.0 / std::max(state_.u_plus.cwiseAbs().maxCoeff(), 1.0));
    w.segment(n, n).setConstant(1.0 / std::max(state_.k_plus.cwiseAbs().maxCoeff(), 1e-6));
    w.segment(2 * n, n) = state_.omega_plus.cwiseMax(kTiny).cwiseInverse();
    return w;
  }

  void initialize() {
    const Eigen::Index n = mesh_.size();
    const auto& y = mesh_.y();
    state_.re_tau = cfg_.re_tau;
    state_.y_plus = y;
    state_.u_plus.resize(n);
    state_.k_plus.resize(n);
    state_.omega_plus.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double yp = y(i);
      const double eta = yp / cfg_.re_tau;
      // Reichardt-type start profile.
      state_.u_plus(i) = std::log(1.0 + c_.kappa * yp) / c_.kappa +
                         7.8 * (1.0 - std::exp(-yp / 11.0) - yp / 11.0 * std::exp(-yp / 3.0));
      state_.k_plus(i) = cfg_.laminar ? 0.0 : (0.5 + 3.0 * (1.0 - eta)) * yp * yp / (100.0 + yp * yp);
      state_.omega_plus(i) = i == 0 ? wall_omega()
                                    : std::max(6.0 / (c_.beta1 * yp * yp),
                                               std::sqrt(std::max(state_.k_plus(i), 1e-12)) /
                                                   (std::sqrt(c_.beta_star) * c_.kappa * yp));
    }
    if (cfg_.laminar) state_.u_plus = y.array() - y.array().square() / (2.0 * cfg_.re_tau) + 1.0;
    state_.u_plus(0) = 0.0;
    state_.nu_t_plus = Eigen::VectorXd::Zero(n);
    state_.tau.assign(static_cast<std::size_t>(n), Stress{});
    update_closure();
  }

  double wall_omega() const {
    const double h0 = mesh_.spacing()(0);
    return 60.0 / (c_.beta1 * h0 * h0);
  }

  /// Gradients, blending functions and eddy viscosity of the current iterate.
  void update_closure() {
    const Eigen::Index n = mesh_.size();
    const auto& y = mesh_.y();
    const auto& k = state_.k_plus;
    const auto& w = state_.omega_plus;
    state_.dudy = mesh_.gradient(state_.u_plus);
    dkdy_ = mesh_.gradient(k);
    dwdy_ = mesh_.gradient(w);
    f1_.resize(n);
    state_.nu_t_plus.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double ki = std::max(k(i), 0.0);
      const double wi = w(i);
      double f1 = 1.0, f2 = 1.0;
      if (i > 0) {
        const double yi = y(i);
        const double cd = std::max(2.0 * c_.sigma_w2 / wi * dkdy_(i) * dwdy_(i), 1e-10);
        const double arg1 =
            std::min(std::max(std::sqrt(ki) / (c_.beta_star * wi * yi), 500.0 / (yi * yi * wi)),
                     4.0 * c_.sigma_w2 * ki / (cd * yi * yi));
        const double arg2 = std::max(2.0 * std::sqrt(ki) / (c_.beta_star * wi * yi), 500.0 / (yi * yi * wi));
        f1 = std::tanh(std::pow(arg1, 4));
        f2 = std::tanh(arg2 * arg2);
      }
      f1_(i) = f1;
      const double shear = std::abs(state_.dudy(i));
      state_.nu_t_plus(i) = cfg_.laminar || i == 0 ? 0.0 : c_.a1 * ki / std::max(c_.a1 * wi, shear * f2);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& t = state_.tau[static_cast<std::size_t>(i)];
      t = Stress::isotropic(std::max(k(i), 0.0));
      t.uv = -state_.nu_t_plus(i) * state_.dudy(i);
    }
  }

  double blend(double inner, double outer, Eigen::Index i) const {
    return f1_(i) * inner + (1.0 - f1_(i)) * outer;
  }

  /// Face shear balance dU/dy + T(dU/dy) = 1 - y/Re, with T linearized
  /// around the previous slope by a probe evaluation of the source. Faces
  /// whose injected shear exceeds the total shear slide: the slope decays
  /// toward zero and only the total shear is transmitted.
  void momentum_with_injection(const std::vector<Stress>& fresh, const Eigen::VectorXd& turb_shear,
                               const Eigen::VectorXd& u_old) {
    const Eigen::Index n = mesh_.size();
    const auto& y = mesh_.y();
    constexpr double eps = 1e-4;
    ChannelState probe = state_;
    probe.u_plus *= 1.0 + eps;
    probe.dudy *= 1.0 + eps;
    for (auto& t : probe.tau) t.uv *= 1.0 + eps;
    const std::vector<Stress> shifted = (*source_)(probe);
    Eigen::VectorXd gain = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 1; i < n; ++i) {
      const double ds = eps * state_.dudy(i);
      const auto ui = static_cast<std::size_t>(i);
      if (std::abs(ds) > 0.0) gain(i) = std::max(-(shifted[ui].uv - fresh[ui].uv) / ds, 0.0);
    }
    const Eigen::VectorXd nu = mesh_.face_average(gain);
    const Eigen::VectorXd shear = mesh_.face_average(turb_shear);
    const Eigen::VectorXd s_old = mesh_.face_slope(u_old);
    Eigen::VectorXd u(n);
    u(0) = 0.0;
    sliding_.resize(n - 1);
    for (Eigen::Index f = 0; f < n - 1; ++f) {
      const double total = 1.0 - 0.5 * (y(f) + y(f + 1)) / cfg_.re_tau;
      const double slope = (total - shear(f) + nu(f) * s_old(f)) / (1.0 + nu(f));
      const double floor = std::max(0.5 * s_old(f), kMinSlope);
      sliding_(f) = slope < floor;
      u(f + 1) = u(f) + std::max(slope, floor) * (y(f + 1) - y(f));
    }
    state_.u_plus = u_old + relax_ * (u - u_old);
    const Eigen::VectorXd s_new = mesh_.face_slope(state_.u_plus);
    state_.face_turb_shear = shear + nu.cwiseProduct(s_new - s_old);
    for (Eigen::Index f = 0; f < n - 1; ++f) {
      if (sliding_(f)) state_.face_turb_shear(f) = 1.0 - 0.5 * (y(f) + y(f + 1)) / cfg_.re_tau - s_new(f);
    }
  }

  /// One outer Picard iteration; returns the normalized update norm.
  double step() {
    const Eigen::Index n = mesh_.size();
    const Eigen::VectorXd u_old = state_.u_plus;
    const Eigen::VectorXd k_old = state_.k_plus;
    const Eigen::VectorXd w_old = state_.omega_plus;
    double stress_change = 0.0;

    // Momentum.
    Eigen::VectorXd turb_shear(n);  // -uv at nodes seen by the momentum equation
    const Eigen::VectorXd source_term = Eigen::VectorXd::Constant(n, 1.0 / cfg_.re_tau);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
    if (source_) {
      std::vector<Stress> fresh = (*source_)(state_);
      if (static_cast<Eigen::Index>(fresh.size()) != n) {
        throw ConfigError("stress source returned " + std::to_string(fresh.size()) + " nodes, grid has " +
                          std::to_string(n));
      }
      if (injected_.empty()) injected_ = fresh;
      double scale = 2.0 * kMinTke;
      for (Eigen::Index i = 0; i < n; ++i) {
        auto& cur = injected_[static_cast<std::size_t>(i)];
        const auto& next = fresh[static_cast<std::size_t>(i)];
        const Stress prev = cur;
        cur = Stress::from_matrix(prev.matrix() + relax_ * (next.matrix() - prev.matrix()));
        stress_change = std::max(stress_change, (cur.matrix() - prev.matrix()).cwiseAbs().maxCoeff());
        scale = std::max(scale, std::abs(cur.trace()));
        if (!is_realizable(next) || !is_realizable(cur)) ++state_.realizability_violations;
        turb_shear(i) = -cur.uv;
      }
      turb_shear(0) = 0.0;
      stress_change /= scale;
      momentum_with_injection(fresh, turb_shear, u_old);
    } else {
      // Face shear is the average of the nodal nu_t dU/dy, as for injected
      // stresses; the face-slope form is implicit, the difference deferred.
      const Eigen::VectorXd nu = mesh_.face_average(state_.nu_t_plus);
      const Eigen::VectorXd gamma = Eigen::VectorXd::Ones(n - 1) + nu;
      const Eigen::VectorXd deferred =
          mesh_.face_average(state_.nu_t_plus.cwiseProduct(mesh_.gradient(u_old))) -
          nu.cwiseProduct(mesh_.face_slope(u_old));
      state_.u_plus = mesh_.solve(gamma, source_term, zero, &deferred, 0.0, u_old, relax_);
      state_.face_turb_shear = nu.cwiseProduct(mesh_.face_slope(state_.u_plus)) + deferred;
    }

    const Eigen::VectorXd dudy = mesh_.gradient(state_.u_plus);
    if (!source_) {
      turb_shear = state_.nu_t_plus.cwiseProduct(dudy);
    }

    // k and omega.
    Eigen::VectorXd prod(n), gam_k(n), gam_w(n), su_k(n), sp_k(n), su_w(n), sp_w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double ki = std::max(k_old(i), 0.0);
      const double wi = w_old(i);
      const double nut = state_.nu_t_plus(i);
      double pk = turb_shear(i) * dudy(i);
      pk = std::min(pk, 10.0 * c_.beta_star * ki * wi);
      prod(i) = pk;
      gam_k(i) = blend(c_.sigma_k1, c_.sigma_k2, i) * nut;
      gam_w(i) = blend(c_.sigma_w1, c_.sigma_w2, i) * nut;

      su_k(i) = std::max(pk, 0.0);
      sp_k(i) = -c_.beta_star * wi + (pk < 0.0 && ki > 0.0 ? pk / ki : 0.0);

      const double beta = blend(c_.beta1, c_.beta2, i);
      const double gamma_w = blend(c_.beta1 / c_.beta_star - c_.sigma_w1 * c_.kappa * c_.kappa / std::sqrt(c_.beta_star),
                                   c_.beta2 / c_.beta_star - c_.sigma_w2 * c_.kappa * c_.kappa / std::sqrt(c_.beta_star),
                                   i);
      const double pw = nut > 1e-12 ? gamma_w * pk / nut : gamma_w * dudy(i) * dudy(i);
      const double cross = 2.0 * (1.0 - f1_(i)) * c_.sigma_w2 / wi * dkdy_(i) * dwdy_(i);
      // Newton linearization of the destruction term beta*omega^2.
      su_w(i) = std::max(pw, 0.0) + std::max(cross, 0.0) + beta * wi * wi;
      sp_w(i) = -2.0 * beta * wi - std::max(-cross, 0.0) / wi - std::max(-pw, 0.0) / wi;
    }
    const Eigen::VectorXd face_gam_k = Eigen::VectorXd::Ones(n - 1) + mesh_.face_average(gam_k);
    const Eigen::VectorXd face_gam_w = Eigen::VectorXd::Ones(n - 1) + mesh_.face_average(gam_w);
    if (cfg_.laminar) {
      state_.k_plus.setZero();
    } else {
      state_.k_plus = mesh_.solve(face_gam_k, su_k, sp_k, nullptr, 0.0, k_old, relax_).cwiseMax(0.0);
    }
    state_.omega_plus =
        mesh_.solve(face_gam_w, su_w, sp_w, nullptr, wall_omega(), w_old, relax_).cwiseMax(1e-12);

    update_closure();

    double w_change = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      w_change = std::max(w_change, std::abs(state_.omega_plus(i) - w_old(i)) / state_.omega_plus(i));
    }
    const double k_change = (state_.k_plus - k_old).cwiseAbs().maxCoeff() /
                            std::max(state_.k_plus.cwiseAbs().maxCoeff(), kMinTke);
    return std::max({relative_change(state_.u_plus, u_old), k_change,
                     w_change, stress_change});
  }

  ChannelState finish() {
    if (source_) {
      state_.tau = injected_;
      const auto& y = mesh_.y();
      const Eigen::Index n = mesh_.size();
      for (Eigen::Index i = 1; i < n; ++i) {
        const bool slides = sliding_(i - 1) || (i < n - 1 && sliding_(i));
        const double total = 1.0 - y(i) / cfg_.re_tau;
        auto& t = state_.tau[static_cast<std::size_t>(i)];
        // Shrinking |uv| keeps the tensor realizable.
        if (slides && -t.uv > total) t.uv = -total;
      }
    }
    return std::move(state_);
  }

  ChannelConfig cfg_;
  SstConstants c_;
  HalfChannel mesh_;
  const StressSource* source_;
  double relax_{0.8};
  ChannelState state_;
  std::vector<Stress> injected_;
  Eigen::Array<bool, Eigen::Dynamic, 1> sliding_;
  Eigen::VectorXd dkdy_, dwdy_, f1_;
};

void require_converged_input(const ChannelState& s) {
  if (s.size() < 3) throw ConfigError("channel state has fewer than 3 nodes");
}

/// Geometric grid from the wall (y+ = 0) to the centerline (y+ = Re_tau).
Eigen::VectorXd build_grid(const ChannelConfig& cfg) {
  const int n = cfg.n_cells;
  double r = cfg.stretch;
  if (r <= 0.0) {
    auto first = [&](double q) { return cfg.re_tau * (q - 1.0) / (std::pow(q, n - 1) - 1.0); };
    if (cfg.re_tau / (n - 1) <= cfg.first_spacing) {
      r = 1.0;
    } else {
      double lo = 1.0, hi = 2.0;
      while (first(hi) > cfg.first_spacing && hi < 64.0) hi *= 2.0;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (first(mid) > cfg.first_spacing ? lo : hi) = mid;
      }
      r = 0.5 * (lo + hi);
    }
  }
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    y(i) = std::abs(r - 1.0) < 1e-14 ? cfg.re_tau * i / (n - 1)
                                     : cfg.re_tau * (std::pow(r, i) - 1.0) / (std::pow(r, n - 1) - 1.0);
  }
  y(n - 1) = cfg.re_tau;
  return y;
}

}  // namespace

void ChannelConfig::validate() const {
  if (!(re_tau > 0.0) || !std::isfinite(re_tau)) throw ConfigError("re_tau must be positive");
  if (n_cells < 8) throw ConfigError("n_cells must be at least 8");
  if (max_iters <= 0) throw ConfigError("max_iters must be positive");
  if (!(residual_tol > 0.0)) throw ConfigError("residual_tol must be positive");
  if (under_relaxation && !(*under_relaxation > 0.0 && *under_relaxation <= 1.0)) {
    throw ConfigError("under_relaxation must lie in (0, 1]");
  }
  if (stretch <= 0.0 && !(first_spacing > 0.0)) throw ConfigError("first_spacing must be positive");
  const Eigen::VectorXd y = build_grid(*this);
  if (!(y(1) < 1.0)) {
    throw ConfigError("first off-wall node at y+ = " + std::to_string(y(1)) +
                      " (must be < 1); raise n_cells or lower stretch");
  }
}

Eigen::VectorXd make_grid(const ChannelConfig& cfg) {
  cfg.validate();
  return build_grid(cfg);
}

ChannelState solve_baseline(const ChannelConfig& cfg) {
  cfg.validate();
  return SstChannelSolver(cfg, nullptr).run();
}

ChannelState solve_with_injection(const ChannelConfig& cfg, const StressSource& source) {
  cfg.validate();
  if (!source) throw ConfigError("solve_with_injection: empty stress source");
  return SstChannelSolver(cfg, &source).run();
}

Eigen::VectorXd momentum_balance_error(const ChannelState& state) {
  require_converged_input(state);
  const Eigen::Index n = state.size();
  const auto& y = state.y_plus;
  Eigen::VectorXd err(n - 1);
  for (Eigen::Index i = 0; i < n - 1; ++i) {
    const double h = y(i + 1) - y(i);
    const double total = (state.u_plus(i + 1) - state.u_plus(i)) / h + state.face_turb_shear(i);
    const double y_face = 0.5 * (y(i) + y(i + 1));
    err(i) = total - (1.0 - y_face / state.re_tau);
  }
  return err;
}

// ---- stress sources ----

StressSource corner_source(Corner corner, double delta_b) {
  if (!(delta_b >= 0.0 && delta_b <= 1.0)) throw ConfigError("delta_b must lie in [0, 1]");
  const auto spec = PerturbationSpec<double>::data_free(corner, delta_b);
  return [spec](const ChannelState& s) {
    std::vector<Stress> out(s.tau.size());
    for (std::size_t i = 0; i < s.tau.size(); ++i) out[i] = build_perturbed_stress(decompose(s.tau[i]), spec);
    return out;
  };
}

std::string to_string(TargetKind kind) {
  switch (kind) {
    case TargetKind::P:
      return "p";
    case TargetKind::PCorr:
      return "pcorr";
    case TargetKind::PCorrAngles:
    default:
      return "pcorr_angles";
  }
}

TargetKind parse_target_kind(const std::string& s) {
  if (s == "p") return TargetKind::P;
  if (s == "pcorr") return TargetKind::PCorr;
  if (s == "pcorr_angles") return TargetKind::PCorrAngles;
  throw ConfigError("unknown target kind '" + s + "' (expected p, pcorr or pcorr_angles)");
}

std::vector<std::string> target_names(TargetKind kind) {
  switch (kind) {
    case TargetKind::P:
      return {"p"};
    case TargetKind::PCorr:
      return {"p_corr_x", "p_corr_y"};
    case TargetKind::PCorrAngles:
    default:
      return {"p_corr_x", "p_corr_y", "alpha", "beta", "gamma"};
  }
}

StressSource forest_source(std::shared_ptr<const RegressionForest> forest, ForestSourceOptions options) {
  if (!forest) throw ConfigError("forest_source: no forest");
  if (options.feature_names.empty()) options.feature_names = forest->feature_names;
  validate_feature_names(options.feature_names);
  if (static_cast<Eigen::Index>(options.feature_names.size()) != forest->n_features()) {
    throw ConfigError("forest expects " + std::to_string(forest->n_features()) + " features, configured " +
                      std::to_string(options.feature_names.size()));
  }
  if (forest->n_targets() != static_cast<Eigen::Index>(target_names(options.kind).size())) {
    throw ConfigError("forest has " + std::to_string(forest->n_targets()) + " targets, mode '" +
                      to_string(options.kind) + "' needs " +
                      std::to_string(target_names(options.kind).size()));
  }
  if (options.feature_iters < 0) throw ConfigError("feature_iters must be >= 0");
  struct FeatureCache {
    std::mutex lock;
    Eigen::MatrixXd x;
    int computed_at{-1};
    int last_seen{-1};
  };
  auto cache = std::make_shared<FeatureCache>();
  if (options.feature_state) {
    cache->x = feature_matrix(*options.feature_state, options.feature_names);
    cache->computed_at = 0;
  }
  return [forest, options, cache](const ChannelState& s) {
    Eigen::MatrixXd x;
    {
      std::lock_guard<std::mutex> guard(cache->lock);
      if (!options.feature_state) {
        // A smaller iteration count than last time means a new run.
        if (s.iterations < cache->last_seen) cache->computed_at = -1;
        cache->last_seen = s.iterations;
        const bool stale = cache->computed_at < 0 ||
                           (s.iterations < options.feature_iters && s.iterations != cache->computed_at);
        if (stale) {
          cache->x = feature_matrix(s, options.feature_names);
          cache->computed_at = s.iterations;
        }
      }
      x = cache->x;
    }
    if (x.rows() != static_cast<Eigen::Index>(s.tau.size())) {
      throw ConfigError("feature state has " + std::to_string(x.rows()) + " nodes, grid has " +
                        std::to_string(s.tau.size()));
    }
    std::vector<Stress> out(s.tau.size());
    for (std::size_t i = 0; i < s.tau.size(); ++i) {
      const Eigen::VectorXd pred = predict(*forest, Eigen::VectorXd(x.row(static_cast<Eigen::Index>(i)).transpose()));
      PerturbationSpec<double> spec;
      switch (options.kind) {
        case TargetKind::P:
          spec = PerturbationSpec<double>::magnitude(options.corner, std::max(pred(0), 0.0));
          break;
        case TargetKind::PCorr:
          spec = PerturbationSpec<double>::componentwise(pred.head<2>());
          break;
        case TargetKind::PCorrAngles:
          spec = PerturbationSpec<double>::full(pred.head<2>(), {pred(2), pred(3), pred(4)});
          break;
      }
      out[i] = build_perturbed_stress(decompose(s.tau[i]), spec);
    }
    return out;
  };
}

StressSource frozen_source(std::vector<Stress> profile) {
  auto shared = std::make_shared<const std::vector<Stress>>(std::move(profile));
  return [shared](const ChannelState&) { return *shared; };
}

// ---- envelope ----

std::string corner_name(Corner c) {
  switch (c) {
    case Corner::OneComponent:
      return "1C";
    case Corner::TwoComponent:
      return "2C";
    case Corner::ThreeComponent:
    default:
      return "3C";
  }
}

Corner parse_corner(const std::string& s) {
  if (s == "1C" || s == "1c") return Corner::OneComponent;
  if (s == "2C" || s == "2c") return Corner::TwoComponent;
  if (s == "3C" || s == "3c") return Corner::ThreeComponent;
  throw ConfigError("unknown corner '" + s + "' (expected 1C, 2C or 3C)");
}

double UqEnvelope::integrated_width() const {
  const auto& y = baseline.y_plus;
  const Eigen::VectorXd w = width();
  double sum = 0.0;
  for (Eigen::Index i = 0; i + 1 < y.size(); ++i) sum += 0.5 * (w(i) + w(i + 1)) * (y(i + 1) - y(i));
  return sum / baseline.re_tau;
}

UqEnvelope uq_envelope(const ChannelConfig& cfg, const std::function<StressSource(Corner)>& make_source) {
  cfg.validate();
  const Corner corners[3] = {Corner::OneComponent, Corner::TwoComponent, Corner::ThreeComponent};
  std::vector<StressSource> sources;
  for (Corner c : corners) sources.push_back(make_source(c));

  std::vector<std::future<ChannelState>> runs;
  for (std::size_t m = 0; m < 3; ++m) {
    runs.push_back(std::async(std::launch::async, [&cfg, &sources, m] {
      return solve_with_injection(cfg, sources[m]);
    }));
  }
  UqEnvelope env;
  env.baseline = solve_baseline(cfg);
  for (std::size_t m = 0; m < 3; ++m) {
    try {
      env.members.push_back(runs[m].get());
    } catch (const ConvergenceError& e) {
      // Drain the remaining futures before rethrowing.
      for (std::size_t r = m + 1; r < 3; ++r) runs[r].wait();
      throw ConvergenceError("corner " + corner_name(corners[m]) + ": " + e.what(), e.history());
    } catch (const NumericalError& e) {
      for (std::size_t r = m + 1; r < 3; ++r) runs[r].wait();
      throw NumericalError("corner " + corner_name(corners[m]) + ": " + e.what());
    }
  }
  env.u_min = env.baseline.u_plus;
  env.u_max = env.baseline.u_plus;
  for (const auto& s : env.members) {
    env.u_min = env.u_min.cwiseMin(s.u_plus);
    env.u_max = env.u_max.cwiseMax(s.u_plus);
  }
  return env;
}

std::vector<TracePoint> barycentric_trace(const ChannelState& state) {
  std::vector<TracePoint> out;
  out.reserve(state.tau.size());
  for (const auto& t : state.tau) {
    const auto eig = decompose(t);
    TracePoint tp;
    tp.degenerate = eig.degenerate;
    if (!eig.degenerate) {
      tp.point = to_barycentric(eig);
      tp.lambda2 = eig.lambda(1);
    } else {
      tp.point.position.setConstant(std::nan(""));
      tp.point.weights.setConstant(std::nan(""));
      tp.lambda2 = std::nan("");
    }
    out.push_back(tp);
  }
  return out;
}

void write_solution_csv(std::ostream& out, const ChannelState& state) {
  csv::header(out, {"y_plus", "U_plus", "k_plus", "omega_plus", "nu_t_plus", "uu", "vv", "ww", "uv", "C1",
                    "C2", "C3"});
  const auto trace = barycentric_trace(state);
  for (Eigen::Index i = 0; i < state.size(); ++i) {
    const auto& t = state.tau[static_cast<std::size_t>(i)];
    const auto& w = trace[static_cast<std::size_t>(i)].point.weights;
    csv::row(out, {state.y_plus(i), state.u_plus(i), state.k_plus(i), state.omega_plus(i), state.nu_t_plus(i),
                   t.uu, t.vv, t.ww, t.uv, w(0), w(1), w(2)});
  }
}

}  // namespace suq
