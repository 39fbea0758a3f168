#pragma once

// Bagged CART regression forest with vector-valued leaves.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace suq {

struct ForestHyperparams {
  int max_depth{6};
  int min_samples_split{6};
  int max_features{3};
  int n_trees{30};
  std::uint64_t seed{0};
  // Off only for deterministic single-tree checks.
  bool bootstrap{true};

  /// Throws std::invalid_argument on a non-positive field or max_features > n_features.
  void validate(Eigen::Index n_features) const;
};

/// Flattened binary tree. Node i is a leaf iff feature[i] < 0; leaves keep
/// their mean target in row i of `value`. Internal nodes keep the mean too.
struct RegressionTree {
  std::vector<int> feature;
  std::vector<double> threshold;
  std::vector<int> left;
  std::vector<int> right;
  Eigen::MatrixXd value;  // n_nodes x n_targets

  /// Row index of the leaf reached by x (goes left when x[f] <= threshold).
  int leaf_for(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  int depth() const;
  int node_count() const { return static_cast<int>(feature.size()); }
};

struct RegressionForest {
  std::vector<RegressionTree> trees;
  ForestHyperparams hyperparams;
  std::vector<std::string> feature_names;
  std::vector<std::string> target_names;

  Eigen::Index n_features() const { return static_cast<Eigen::Index>(feature_names.size()); }
  Eigen::Index n_targets() const { return static_cast<Eigen::Index>(target_names.size()); }
};

/// Deterministic in (x, y, hp). Names default to f0.. / t0.. when empty.
RegressionForest fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const ForestHyperparams& hp,
                     std::vector<std::string> feature_names = {},
                     std::vector<std::string> target_names = {});

Eigen::VectorXd predict(const RegressionForest& forest, const Eigen::Ref<const Eigen::VectorXd>& x);
/// One prediction row per input row.
Eigen::MatrixXd predict_rows(const RegressionForest& forest, const Eigen::MatrixXd& x);

/// Mean squared error over samples and target dimensions.
double mse(const RegressionForest& forest, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

inline constexpr int kForestFormatVersion = 1;

void save(const RegressionForest& forest, std::ostream& out);
void save(const RegressionForest& forest, const std::filesystem::path& path);
/// Throws ParseError / DataError with field context.
RegressionForest load(std::istream& in);
RegressionForest load(const std::filesystem::path& path);

}  // namespace suq
