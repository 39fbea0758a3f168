#include "suq/features.hpp"

#include "suq/csv.hpp"
#include "suq/errors.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace suq {

namespace {

constexpr double kReDCap = 2.0;

double raw_feature(const ChannelState& s, Eigen::Index i, const std::string& name) {
  const double k = std::max(s.k_plus(i), 0.0);
  const double d = s.y_plus(i);
  const double shear = std::abs(s.dudy(i));
  const double omega = s.omega_plus(i);
  if (name == "re_d") return std::min(std::sqrt(k) * d / 50.0, kReDCap);
  if (name == "turb_intensity") {
    const double u = s.u_plus(i);
    return normalize_feature(k, 0.5 * u * u);
  }
  if (name == "strain_timescale") return normalize_feature(shear, kBetaStar * omega);
  if (name == "prod_dissipation") {
    const double production = -s.tau[static_cast<std::size_t>(i)].uv * s.dudy(i);
    return normalize_feature(production, kBetaStar * k * omega);
  }
  if (name == "visc_ratio") return normalize_feature(s.nu_t_plus(i), 100.0);
  if (name == "y_plus") return std::min(d, s.re_tau);
  throw ConfigError("unknown feature '" + name + "'");
}

}  // namespace

const std::vector<std::string>& default_feature_names() {
  static const std::vector<std::string> names = {
      "re_d", "turb_intensity", "strain_timescale", "prod_dissipation", "visc_ratio", "y_plus"};
  return names;
}

void validate_feature_names(const std::vector<std::string>& names) {
  if (names.empty()) throw ConfigError("feature list is empty");
  const auto& known = default_feature_names();
  for (const auto& n : names) {
    if (std::find(known.begin(), known.end(), n) == known.end()) {
      throw ConfigError("unknown feature '" + n + "'");
    }
  }
}

bool is_normalized_feature(const std::string& name) { return name != "y_plus"; }

double normalize_feature(double raw, double normalizer) {
  const double denom = std::abs(raw) + std::abs(normalizer);
  if (std::isnan(denom)) return denom;
  return denom > 0.0 ? raw / denom : 0.0;
}

FeatureVector extract_features(const ChannelState& state, Eigen::Index index,
                               const std::vector<std::string>& names) {
  FeatureVector fv;
  fv.names = names;
  fv.q.reserve(names.size());
  for (const auto& name : names) {
    const double v = raw_feature(state, index, name);
    if (!std::isfinite(v)) {
      throw DataError("feature '" + name + "' is not finite at node " + std::to_string(index));
    }
    fv.q.push_back(v);
  }
  return fv;
}

Eigen::MatrixXd feature_matrix(const ChannelState& state, const std::vector<std::string>& names) {
  validate_feature_names(names);
  Eigen::MatrixXd x(state.size(), static_cast<Eigen::Index>(names.size()));
  for (Eigen::Index i = 0; i < state.size(); ++i) {
    const auto fv = extract_features(state, i, names);
    for (std::size_t j = 0; j < fv.q.size(); ++j) x(i, static_cast<Eigen::Index>(j)) = fv.q[j];
  }
  return x;
}

void write_feature_csv(std::ostream& out, const Eigen::MatrixXd& features,
                       const std::vector<std::string>& names) {
  csv::header(out, names);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    csv::row(out, std::vector<double>(features.row(i).begin(), features.row(i).end()));
  }
}

}  // namespace suq
