#pragma once

// Normalized flow features for the perturbation-strength regressors.

#include "suq/channel_state.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <vector>

namespace suq {

inline constexpr double kBetaStar = 0.09;

struct FeatureVector {
  std::vector<double> q;
  std::vector<std::string> names;
};

/// Feature identifiers in default order:
///   re_d              min(sqrt(k) d / (50 nu), 2)
///   turb_intensity    k / (k + U^2 / 2)
///   strain_timescale  S k / eps, eps = beta* k omega, normalized
///   prod_dissipation  P_k / eps, normalized
///   visc_ratio        nu_t / (100 nu), normalized
///   y_plus            raw, capped at Re_tau
const std::vector<std::string>& default_feature_names();

/// Throws ConfigError for an unknown name.
void validate_feature_names(const std::vector<std::string>& names);

/// Features bounded by a cap or by normalization (everything except raw y+).
bool is_normalized_feature(const std::string& name);

/// alpha / (|alpha| + |alpha_star|), zero when both vanish, NaN if either is NaN.
double normalize_feature(double raw, double normalizer);

/// Throws DataError naming the feature when a value is not finite.
FeatureVector extract_features(const ChannelState& state, Eigen::Index index,
                               const std::vector<std::string>& names = default_feature_names());

Eigen::MatrixXd feature_matrix(const ChannelState& state,
                               const std::vector<std::string>& names = default_feature_names());

void write_feature_csv(std::ostream& out, const Eigen::MatrixXd& features,
                       const std::vector<std::string>& names);

}  // namespace suq
