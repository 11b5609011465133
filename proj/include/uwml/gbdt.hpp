#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "uwml/sparse.hpp"

namespace uwml {

enum class Objective { mse, mae };
std::string_view to_string(Objective o);
Objective parse_objective(std::string_view s);

struct TrainConfig {
  int num_trees = 500;
  double learning_rate = 0.05;
  int max_leaves = 31;
  int min_data_in_leaf = 20;
  int max_bins = 255;
  int early_stopping_rounds = 50;
  double l2_reg = 1.0;
  std::uint64_t seed = 0;
  Objective objective = Objective::mse;
  /// 0 leaves depth unbounded.
  int max_depth = 0;

  /// Throws std::invalid_argument on non-positive values or max_bins > 256.
  void validate() const;
};

/// Split nodes send a row left when its value is non-zero and <= threshold;
/// zero (absent) values follow default_left.
struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0;
  bool default_left = false;
  int left = -1;
  int right = -1;
  double value = 0;  // leaf output before the learning rate
  double cover = 0;  // training rows reaching the node
  double gain = 0;

  bool is_leaf() const { return feature < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;  // root at index 0

  template <class Row>
  int leaf_index(const Row& row) const {
    int n = 0;
    while (!nodes[static_cast<std::size_t>(n)].is_leaf()) {
      const auto& node = nodes[static_cast<std::size_t>(n)];
      const double v = row.get(static_cast<std::uint32_t>(node.feature));
      const bool left = v == 0.0 ? node.default_left : v <= node.threshold;
      n = left ? node.left : node.right;
    }
    return n;
  }
  template <class Row>
  double predict(const Row& row) const {
    return nodes[static_cast<std::size_t>(leaf_index(row))].value;
  }
  int depth() const;
  /// Cover-weighted mean leaf value.
  double expected_value() const;
};

struct GbdtModel {
  static constexpr int kFormatVersion = 1;

  double base_score = 0;
  double learning_rate = 0.1;
  Objective objective = Objective::mse;
  std::vector<std::string> feature_names;
  std::vector<Tree> trees;   // already truncated to best_iteration
  int best_iteration = 0;    // number of trees kept
  std::vector<double> valid_curve;  // loss after k trees, k = 0..rounds trained
  std::vector<double> train_curve;
  bool constant_target = false;

  template <class Row>
    requires requires(const Row& r) { r.get(0u); }
  double predict(const Row& row) const {
    double sum = 0;
    for (const auto& t : trees) sum += t.predict(row);
    return base_score + learning_rate * sum;
  }
  double predict(std::span<const double> dense) const { return predict(DenseRow{dense}); }

  /// Batch prediction; parallel over rows, identical to per-row predict.
  std::vector<double> predict(const SparseMatrix& m) const;
  std::vector<double> predict_serial(const SparseMatrix& m) const;

  nlohmann::json to_json() const;
  static GbdtModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static GbdtModel load(const std::filesystem::path& path);
};

struct Dataset {
  const SparseMatrix* x = nullptr;
  std::span<const double> y;
};

/// Fits boosted trees. `valid` may have no rows, in which case every round is
/// kept. Throws std::invalid_argument on an empty training set, a non-finite
/// target or mismatched widths.
GbdtModel fit(const Dataset& train, const Dataset& valid, const TrainConfig& cfg,
              std::vector<std::string> feature_names = {});

struct FeatureUse {
  int split_count = 0;
  double total_gain = 0;
};

/// Split counts and summed gains per used feature.
std::map<std::string, FeatureUse> feature_importance(const GbdtModel& model);

// Explanations ----------------------------------------------------------------

struct ShapExplanation {
  double base_value = 0;
  std::vector<double> phi;  // one per feature, already scaled by the learning rate

  double total() const;
};

/// Exact path-dependent TreeSHAP. Throws std::invalid_argument when a tree
/// lacks cover counts.
ShapExplanation shap(const GbdtModel& model, const SparseRow& row);
ShapExplanation shap(const GbdtModel& model, std::span<const double> dense);

/// Mean model output over the training distribution implied by node covers.
double expected_value(const GbdtModel& model);

}  // namespace uwml
