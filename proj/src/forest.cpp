#include "suq/forest.hpp"

#include "suq/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace suq {

namespace {

using json = nlohmann::json;

struct Split {
  int feature{-1};
  double threshold{0};
  double cost{std::numeric_limits<double>::infinity()};
};

class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const ForestHyperparams& hp,
              std::mt19937_64& rng)
      : x_(x), y_(y), hp_(hp), rng_(rng) {}

  RegressionTree build(std::vector<int> rows) {
    values_.clear();
    grow(std::move(rows), 0);
    tree_.value.resize(static_cast<Eigen::Index>(values_.size()), y_.cols());
    for (std::size_t i = 0; i < values_.size(); ++i) {
      tree_.value.row(static_cast<Eigen::Index>(i)) = values_[i].transpose();
    }
    return std::move(tree_);
  }

 private:
  int add_node(const Eigen::VectorXd& mean) {
    tree_.feature.push_back(-1);
    tree_.threshold.push_back(0.0);
    tree_.left.push_back(-1);
    tree_.right.push_back(-1);
    values_.push_back(mean);
    return static_cast<int>(tree_.feature.size()) - 1;
  }

  bool constant_targets(const std::vector<int>& rows) const {
    for (Eigen::Index t = 0; t < y_.cols(); ++t) {
      const double first = y_(rows.front(), t);
      for (int r : rows) {
        if (y_(r, t) != first) return false;
      }
    }
    return true;
  }

  std::vector<int> draw_features() {
    std::vector<int> all(static_cast<std::size_t>(x_.cols()));
    std::iota(all.begin(), all.end(), 0);
    const auto m = static_cast<std::size_t>(hp_.max_features);
    for (std::size_t i = 0; i < m; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, all.size() - 1);
      std::swap(all[i], all[pick(rng_)]);
    }
    all.resize(m);
    std::sort(all.begin(), all.end());
    return all;
  }

  Split best_split(const std::vector<int>& rows, const std::vector<int>& features) const {
    Split best;
    const auto n = rows.size();
    const Eigen::Index nt = y_.cols();
    std::vector<int> order(rows);
    Eigen::VectorXd total_sum = Eigen::VectorXd::Zero(nt);
    Eigen::VectorXd total_sq = Eigen::VectorXd::Zero(nt);
    for (int r : rows) {
      total_sum += y_.row(r).transpose();
      total_sq += y_.row(r).transpose().cwiseAbs2();
    }
    for (int f : features) {
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return x_(a, f) < x_(b, f) || (x_(a, f) == x_(b, f) && a < b);
      });
      Eigen::VectorXd left_sum = Eigen::VectorXd::Zero(nt);
      Eigen::VectorXd left_sq = Eigen::VectorXd::Zero(nt);
      for (std::size_t i = 0; i + 1 < n; ++i) {
        left_sum += y_.row(order[i]).transpose();
        left_sq += y_.row(order[i]).transpose().cwiseAbs2();
        const double lo = x_(order[i], f);
        const double hi = x_(order[i + 1], f);
        if (!(lo < hi)) continue;
        const double nl = static_cast<double>(i + 1);
        const double nr = static_cast<double>(n - i - 1);
        const Eigen::VectorXd right_sum = total_sum - left_sum;
        const double cost =
            std::max((left_sq - left_sum.cwiseAbs2() / nl).sum(), 0.0) +
            std::max(((total_sq - left_sq) - right_sum.cwiseAbs2() / nr).sum(), 0.0);
        if (cost < best.cost) {
          double mid = 0.5 * (lo + hi);
          if (!(mid < hi)) mid = lo;
          best = {f, mid, cost};
        }
      }
    }
    return best;
  }

  int grow(std::vector<int> rows, int depth) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(y_.cols());
    for (int r : rows) mean += y_.row(r).transpose();
    mean /= static_cast<double>(rows.size());
    const int node = add_node(mean);

    if (static_cast<int>(rows.size()) < hp_.min_samples_split || depth >= hp_.max_depth ||
        constant_targets(rows)) {
      return node;
    }
    const Split split = best_split(rows, draw_features());
    if (split.feature < 0) return node;

    std::vector<int> left_rows;
    std::vector<int> right_rows;
    for (int r : rows) {
      (x_(r, split.feature) <= split.threshold ? left_rows : right_rows).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    tree_.feature[static_cast<std::size_t>(node)] = split.feature;
    tree_.threshold[static_cast<std::size_t>(node)] = split.threshold;
    const int l = grow(std::move(left_rows), depth + 1);
    const int r = grow(std::move(right_rows), depth + 1);
    tree_.left[static_cast<std::size_t>(node)] = l;
    tree_.right[static_cast<std::size_t>(node)] = r;
    return node;
  }

  const Eigen::MatrixXd& x_;
  const Eigen::MatrixXd& y_;
  const ForestHyperparams& hp_;
  std::mt19937_64& rng_;
  RegressionTree tree_;
  std::vector<Eigen::VectorXd> values_;
};

RegressionTree fit_tree(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                        const ForestHyperparams& hp, int tree_index) {
  std::seed_seq seq{static_cast<std::uint32_t>(hp.seed), static_cast<std::uint32_t>(hp.seed >> 32),
                    static_cast<std::uint32_t>(tree_index)};
  std::mt19937_64 rng(seq);
  const auto n = static_cast<int>(x.rows());
  std::vector<int> rows(static_cast<std::size_t>(n));
  if (hp.bootstrap) {
    std::uniform_int_distribution<int> draw(0, n - 1);
    for (auto& r : rows) r = draw(rng);
  } else {
    std::iota(rows.begin(), rows.end(), 0);
  }
  return TreeBuilder(x, y, hp, rng).build(std::move(rows));
}

std::vector<std::string> default_names(std::vector<std::string> names, Eigen::Index count,
                                       const char* prefix, const char* what) {
  if (names.empty()) {
    for (Eigen::Index i = 0; i < count; ++i) names.push_back(prefix + std::to_string(i));
  }
  if (static_cast<Eigen::Index>(names.size()) != count) {
    throw std::invalid_argument(std::string("fit: ") + what + " name count does not match data");
  }
  return names;
}

// ---- serialization helpers ----

const json& field(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw DataError("forest file: missing field '" + path + key + "'");
  }
  return obj.at(key);
}

template <typename T>
T as(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw DataError("forest file: field '" + path + "' has wrong type (" + e.what() + ")");
  }
}

}  // namespace

void ForestHyperparams::validate(Eigen::Index n_features) const {
  if (max_depth <= 0) throw std::invalid_argument("max_depth must be positive");
  if (min_samples_split <= 0) throw std::invalid_argument("min_samples_split must be positive");
  if (max_features <= 0) throw std::invalid_argument("max_features must be positive");
  if (n_trees <= 0) throw std::invalid_argument("n_trees must be positive");
  if (max_features > n_features) {
    throw std::invalid_argument("max_features (" + std::to_string(max_features) +
                                ") exceeds feature count (" + std::to_string(n_features) + ")");
  }
}

int RegressionTree::leaf_for(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  int node = 0;
  while (feature[static_cast<std::size_t>(node)] >= 0) {
    const auto i = static_cast<std::size_t>(node);
    node = x(feature[i]) <= threshold[i] ? left[i] : right[i];
  }
  return node;
}

int RegressionTree::depth() const {
  std::vector<int> d(feature.size(), 0);
  int deepest = 0;
  for (std::size_t i = 0; i < feature.size(); ++i) {
    if (feature[i] < 0) continue;
    d[static_cast<std::size_t>(left[i])] = d[i] + 1;
    d[static_cast<std::size_t>(right[i])] = d[i] + 1;
    deepest = std::max(deepest, d[i] + 1);
  }
  return deepest;
}

RegressionForest fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const ForestHyperparams& hp,
                     std::vector<std::string> feature_names, std::vector<std::string> target_names) {
  if (x.rows() == 0 || x.cols() == 0 || y.cols() == 0) throw std::invalid_argument("fit: empty data");
  if (x.rows() != y.rows()) throw std::invalid_argument("fit: X and Y row counts differ");
  if (!x.allFinite() || !y.allFinite()) throw std::invalid_argument("fit: non-finite values in data");
  hp.validate(x.cols());

  RegressionForest forest;
  forest.hyperparams = hp;
  forest.feature_names = default_names(std::move(feature_names), x.cols(), "f", "feature");
  forest.target_names = default_names(std::move(target_names), y.cols(), "t", "target");
  forest.trees.resize(static_cast<std::size_t>(hp.n_trees));

  // Each tree owns its random stream, so scheduling does not affect the result.
  const unsigned workers =
      std::max(1u, std::min(std::thread::hardware_concurrency(), static_cast<unsigned>(hp.n_trees)));
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int t = static_cast<int>(w); t < hp.n_trees; t += static_cast<int>(workers)) {
        forest.trees[static_cast<std::size_t>(t)] = fit_tree(x, y, hp, t);
      }
    });
  }
  for (auto& th : pool) th.join();
  return forest;
}

Eigen::VectorXd predict(const RegressionForest& forest, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != forest.n_features()) {
    throw std::invalid_argument("predict: expected " + std::to_string(forest.n_features()) +
                                " features, got " + std::to_string(x.size()));
  }
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(forest.n_targets());
  for (const auto& tree : forest.trees) sum += tree.value.row(tree.leaf_for(x)).transpose();
  return sum / static_cast<double>(forest.trees.size());
}

Eigen::MatrixXd predict_rows(const RegressionForest& forest, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out(x.rows(), forest.n_targets());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out.row(i) = predict(forest, Eigen::VectorXd(x.row(i).transpose())).transpose();
  }
  return out;
}

double mse(const RegressionForest& forest, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows() || y.cols() != forest.n_targets()) {
    throw std::invalid_argument("mse: dimension mismatch");
  }
  if (x.rows() == 0) throw std::invalid_argument("mse: empty data");
  return (predict_rows(forest, x) - y).squaredNorm() / static_cast<double>(y.size());
}

void save(const RegressionForest& forest, std::ostream& out) {
  const auto& hp = forest.hyperparams;
  json doc;
  doc["format"] = "suq-forest";
  doc["version"] = kForestFormatVersion;
  doc["hyperparams"] = {{"max_depth", hp.max_depth},
                        {"min_samples_split", hp.min_samples_split},
                        {"max_features", hp.max_features},
                        {"n_trees", hp.n_trees},
                        {"seed", hp.seed},
                        {"bootstrap", hp.bootstrap}};
  doc["feature_names"] = forest.feature_names;
  doc["target_names"] = forest.target_names;
  json trees = json::array();
  for (const auto& t : forest.trees) {
    json values = json::array();
    for (Eigen::Index i = 0; i < t.value.rows(); ++i) {
      values.push_back(std::vector<double>(t.value.row(i).begin(), t.value.row(i).end()));
    }
    trees.push_back({{"feature", t.feature},
                     {"threshold", t.threshold},
                     {"left", t.left},
                     {"right", t.right},
                     {"value", std::move(values)}});
  }
  doc["trees"] = std::move(trees);
  out << doc.dump(1) << '\n';
}

void save(const RegressionForest& forest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write forest file " + path.string());
  save(forest, out);
}

RegressionForest load(std::istream& in) {
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + static_cast<std::size_t>(
                              std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n'));
    throw ParseError(std::string("forest file is not valid JSON: ") + e.what(), line);
  }

  if (as<std::string>(field(doc, "format", ""), "format") != "suq-forest") {
    throw DataError("forest file: field 'format' is not 'suq-forest'");
  }
  const int version = as<int>(field(doc, "version", ""), "version");
  if (version != kForestFormatVersion) {
    throw DataError("forest file: unsupported version " + std::to_string(version) + " (expected " +
                    std::to_string(kForestFormatVersion) + ")");
  }

  RegressionForest forest;
  const json& hp = field(doc, "hyperparams", "");
  forest.hyperparams.max_depth = as<int>(field(hp, "max_depth", "hyperparams."), "hyperparams.max_depth");
  forest.hyperparams.min_samples_split =
      as<int>(field(hp, "min_samples_split", "hyperparams."), "hyperparams.min_samples_split");
  forest.hyperparams.max_features =
      as<int>(field(hp, "max_features", "hyperparams."), "hyperparams.max_features");
  forest.hyperparams.n_trees = as<int>(field(hp, "n_trees", "hyperparams."), "hyperparams.n_trees");
  forest.hyperparams.seed = as<std::uint64_t>(field(hp, "seed", "hyperparams."), "hyperparams.seed");
  forest.hyperparams.bootstrap = as<bool>(field(hp, "bootstrap", "hyperparams."), "hyperparams.bootstrap");
  forest.feature_names = as<std::vector<std::string>>(field(doc, "feature_names", ""), "feature_names");
  forest.target_names = as<std::vector<std::string>>(field(doc, "target_names", ""), "target_names");
  try {
    forest.hyperparams.validate(forest.n_features());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("forest file: hyperparams: ") + e.what());
  }

  const json& trees = field(doc, "trees", "");
  if (!trees.is_array() || static_cast<int>(trees.size()) != forest.hyperparams.n_trees) {
    throw DataError("forest file: 'trees' must be an array of n_trees entries");
  }
  for (std::size_t ti = 0; ti < trees.size(); ++ti) {
    const std::string path = "trees[" + std::to_string(ti) + "].";
    const json& tj = trees[ti];
    RegressionTree t;
    t.feature = as<std::vector<int>>(field(tj, "feature", path), path + "feature");
    t.threshold = as<std::vector<double>>(field(tj, "threshold", path), path + "threshold");
    t.left = as<std::vector<int>>(field(tj, "left", path), path + "left");
    t.right = as<std::vector<int>>(field(tj, "right", path), path + "right");
    const auto values = as<std::vector<std::vector<double>>>(field(tj, "value", path), path + "value");
    const auto n = t.feature.size();
    if (n == 0 || t.threshold.size() != n || t.left.size() != n || t.right.size() != n ||
        values.size() != n) {
      throw DataError("forest file: " + path + " node arrays have inconsistent lengths");
    }
    t.value.resize(static_cast<Eigen::Index>(n), forest.n_targets());
    for (std::size_t i = 0; i < n; ++i) {
      if (static_cast<Eigen::Index>(values[i].size()) != forest.n_targets()) {
        throw DataError("forest file: " + path + "value[" + std::to_string(i) + "] has wrong length");
      }
      for (std::size_t j = 0; j < values[i].size(); ++j) {
        t.value(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = values[i][j];
      }
      const bool leaf = t.feature[i] < 0;
      const auto in_range = [&](int c) { return c > static_cast<int>(i) && c < static_cast<int>(n); };
      if (!leaf && (t.feature[i] >= forest.n_features() || !in_range(t.left[i]) || !in_range(t.right[i]))) {
        throw DataError("forest file: " + path + "node " + std::to_string(i) + " has invalid links");
      }
    }
    forest.trees.push_back(std::move(t));
  }
  return forest;
}

RegressionForest load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open forest file " + path.string());
  return load(in);
}

}  // namespace suq
