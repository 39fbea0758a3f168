#pragma once

// Channel DNS statistics: parsing, interpolation onto solver grids and
// training-target construction.

#include "suq/channel_solver.hpp"
#include "suq/channel_state.hpp"
#include "suq/tensor_ops.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace suq {

struct DnsProfile {
  double re_tau{0};
  Eigen::VectorXd y_delta, y_plus, u_plus;
  Eigen::VectorXd uu, vv, ww, uv, uw, vw;  // wall units

  Eigen::Index size() const { return y_plus.size(); }
  Eigen::VectorXd k_plus() const { return 0.5 * (uu + vv + ww); }
  Stress stress(Eigen::Index i) const { return {uu(i), vv(i), ww(i), uv(i), uw(i), vw(i)}; }
  std::vector<Stress> stresses() const;

  /// Throws DataError: sizes, finiteness, strictly increasing y+ >= 0,
  /// non-negative normal stresses, uv^2 <= uu*vv + 1e-8.
  void validate() const;
};

/// Zero-based column indices; -1 means absent. Mean-flow columns are read
/// from the mean stream, stress columns (and stress_y_plus) from the stress
/// stream, which may be the same stream.
struct ColumnMap {
  int y_delta{0};
  int y_plus{1};
  int u_plus{2};
  int stress_y_plus{1};
  int uu{2}, vv{3}, ww{4}, uv{5};
  int uw{-1}, vw{-1};

  /// Mean file: y/delta y+ U+ ...; fluctuation file: y/delta y+ uu vv ww uv uw vw k.
  static ColumnMap lee_moser() { return {}; }
};

/// One table holding every mapped column. Comment lines start with '%' or
/// '#'. Rows are sorted by y+. Throws ParseError (with line) / DataError.
DnsProfile parse_profile(std::istream& in, const ColumnMap& map);
/// Separate mean and stress tables; stresses are brought onto the mean y+
/// grid by monotone cubic interpolation.
DnsProfile parse_profile(std::istream& mean, std::istream& stresses, const ColumnMap& map);

DnsProfile load_profile(const std::filesystem::path& file, const ColumnMap& map);
DnsProfile load_profile(const std::filesystem::path& mean, const std::filesystem::path& stresses,
                        const ColumnMap& map);

/// Monotone piecewise-cubic (linear below four points) resampling of every
/// column. Throws DataError for targets outside [y+_min, y+_max].
DnsProfile interpolate(const DnsProfile& profile, const Eigen::VectorXd& y_plus_targets);

/// Relative zero-mean uniform noise on uv: uv_i *= 1 + a * U(-1, 1).
DnsProfile with_shear_noise(const DnsProfile& profile, double amplitude, std::uint64_t seed);

/// Relative L2 distance ||a - b|| / ||b||.
double relative_l2(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// ---- analytic reference ----

/// DNS-like channel statistics built from the Cess eddy-viscosity mean flow
/// (exact total-shear balance) and smooth fits of the normal stresses.
DnsProfile reference_profile(double re_tau, Eigen::Index n_points = 257);

/// Writes the two-table layout that ColumnMap::lee_moser() reads.
void write_lee_moser(const DnsProfile& profile, std::ostream& mean, std::ostream& fluct);
/// Writes <dir>/LM_Channel_<Re>_mean_prof.dat and ..._vel_fluc_prof.dat.
void write_lee_moser(const DnsProfile& profile, const std::filesystem::path& dir);
std::filesystem::path lee_moser_mean_path(const std::filesystem::path& dir, double re_tau);
std::filesystem::path lee_moser_fluct_path(const std::filesystem::path& dir, double re_tau);

// ---- training targets ----

struct TrainingSet {
  Eigen::MatrixXd x;  // features of the baseline RANS state
  Eigen::MatrixXd y;  // targets
  std::vector<std::string> feature_names;
  std::vector<std::string> target_names;
  std::vector<double> re_tau;        // provenance, per row
  std::vector<Eigen::Index> node;    // provenance, per row
  std::size_t excluded{0};           // degenerate nodes left out

  Eigen::Index rows() const { return x.rows(); }
  /// Throws DataError on inconsistent sizes, non-finite entries or negative p.
  void validate() const;
  /// Stacks rows; names must match. Throws DataError.
  void append(const TrainingSet& other);
};

/// Per node: decompose RANS and DNS stresses; p = |x_dns - x_rans|,
/// p_corr = x_dns - x_rans, angles = extract_angles(frame_rans, frame_dns).
/// Nodes with degenerate k (either tensor) are excluded; for angle targets
/// nodes whose eigenvalues are not separated by frame_gap are excluded too.
/// `dns` must already live on the RANS grid. Throws DataError.
TrainingSet build_targets(const ChannelState& rans, const DnsProfile& dns, TargetKind kind,
                          const std::vector<std::string>& feature_names, double frame_gap = 1e-6);

/// Header: <features>,<targets>,re_tau,node
void write_training_csv(std::ostream& out, const TrainingSet& set);

}  // namespace suq
