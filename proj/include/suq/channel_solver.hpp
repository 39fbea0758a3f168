#pragma once

// Fully developed turbulent channel flow in wall units with the Menter SST
// k-omega closure, solved on the half channel (wall to centerline).

#include "suq/channel_state.hpp"
#include "suq/forest.hpp"
#include "suq/perturb.hpp"

#include <Eigen/Dense>

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace suq {

struct SstConstants {
  double beta_star = 0.09;
  double sigma_k1 = 0.85, sigma_w1 = 0.5, beta1 = 0.075;
  double sigma_k2 = 1.0, sigma_w2 = 0.856, beta2 = 0.0828;
  double a1 = 0.31;
  double kappa = 0.41;
};

struct ChannelConfig {
  double re_tau{1000.0};
  int n_cells{192};  // grid nodes, wall and centerline included
  // Geometric growth ratio of the spacing; <= 0 picks the ratio that puts the
  // first node at first_spacing.
  double stretch{0.0};
  double first_spacing{0.5};
  int max_iters{100000};
  double residual_tol{1e-8};
  // Unset: 0.8 for the baseline, 0.7 when a stress is injected.
  std::optional<double> under_relaxation;
  // nu_t forced to zero.
  bool laminar{false};

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Node coordinates for cfg (validated).
Eigen::VectorXd make_grid(const ChannelConfig& cfg);

/// Called with the current iterate (profiles updated, tau holding the
/// Boussinesq stress); returns the stress to use at every node. The solver
/// also calls it on a copy with the strain scaled by 1 + 1e-4 to linearize
/// the shear stress, so it runs twice per iteration.
using StressSource = std::function<std::vector<Stress>(const ChannelState& current)>;

/// Pure baseline run. Throws NumericalError (non-convergence, NaN).
ChannelState solve_baseline(const ChannelConfig& cfg);

/// Runs with -uv* from `source` in the momentum equation and P_k = -uv* dU/dy
/// in the turbulence model. The injected stress is under-relaxed between
/// iterations. Where -uv* exceeds the total shear 1 - y/Re_tau the velocity
/// gradient is driven to ~0 and the returned tau carries the total shear
/// instead.
ChannelState solve_with_injection(const ChannelConfig& cfg, const StressSource& source);

/// Momentum residual reported at every grid face: (total shear at face) -
/// (1 - y_face / Re_tau). Total shear is dU/dy + (-uv) using the stress the
/// state carries.
Eigen::VectorXd momentum_balance_error(const ChannelState& state);

// ---- stress sources ----

/// Fixed delta_b toward `corner`, re-evaluated from the current iterate.
StressSource corner_source(Corner corner, double delta_b);

enum class TargetKind { P, PCorr, PCorrAngles };

std::string to_string(TargetKind kind);
/// Throws ConfigError.
TargetKind parse_target_kind(const std::string& s);
/// Output names of a forest trained for `kind`.
std::vector<std::string> target_names(TargetKind kind);

struct ForestSourceOptions {
  TargetKind kind{TargetKind::P};
  Corner corner{Corner::OneComponent};  // P only
  std::vector<std::string> feature_names;  // empty: forest.feature_names
  // Features are re-evaluated on the iterate once per solver iteration for
  // the first feature_iters iterations and then held fixed: a piecewise
  // constant predictor fed by the iterate has no exact fixed point.
  int feature_iters{1000};
  // Set: features come from this state (the converged baseline) and never change.
  std::optional<ChannelState> feature_state;
};

/// Forest-predicted perturbation. Throws ConfigError when the forest's
/// feature or target layout does not fit `options`. The returned source keeps
/// per-run feature state; use one source per concurrent solve.
StressSource forest_source(std::shared_ptr<const RegressionForest> forest, ForestSourceOptions options);

/// Prescribed stress profile on the solver grid.
StressSource frozen_source(std::vector<Stress> profile);

// ---- envelope ----

struct UqEnvelope {
  ChannelState baseline;
  std::vector<ChannelState> members;  // 1C, 2C, 3C
  Eigen::VectorXd u_min, u_max;

  Eigen::VectorXd width() const { return u_max - u_min; }
  /// Trapezoidal mean width over [0, Re_tau].
  double integrated_width() const;
};

/// Runs the three corner members concurrently. `make_source` builds the
/// source for a corner. Failures name the corner.
UqEnvelope uq_envelope(const ChannelConfig& cfg, const std::function<StressSource(Corner)>& make_source);

std::string corner_name(Corner c);
/// Throws ConfigError.
Corner parse_corner(const std::string& s);

struct TracePoint {
  BarycentricPoint<double> point;
  double lambda2{0};
  bool degenerate{false};
};

/// Barycentric point of every node's stress; degenerate-k nodes flagged.
std::vector<TracePoint> barycentric_trace(const ChannelState& state);

/// CSV with columns y_plus,U_plus,k_plus,omega_plus,nu_t_plus,uu,vv,ww,uv,C1,C2,C3.
void write_solution_csv(std::ostream& out, const ChannelState& state);

}  // namespace suq
