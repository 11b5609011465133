#pragma once

// Independent reference computations used to freeze expected values.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "uwml/gbdt.hpp"

namespace oracle {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("uwml_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// E[tree(x) | features in `known` fixed to x], with unknown splits averaged by cover.
inline double conditional_expectation(const uwml::Tree& t, int node, std::span<const double> x,
                                      std::uint32_t known) {
  const auto& n = t.nodes[static_cast<std::size_t>(node)];
  if (n.is_leaf()) return n.value;
  if (known & (1u << n.feature)) {
    const double v = x[static_cast<std::size_t>(n.feature)];
    const bool left = v == 0.0 ? n.default_left : v <= n.threshold;
    return conditional_expectation(t, left ? n.left : n.right, x, known);
  }
  const auto& l = t.nodes[static_cast<std::size_t>(n.left)];
  const auto& r = t.nodes[static_cast<std::size_t>(n.right)];
  return (l.cover * conditional_expectation(t, n.left, x, known) +
          r.cover * conditional_expectation(t, n.right, x, known)) /
         n.cover;
}

/// Shapley values by enumerating every coalition of the first `m` features.
inline std::vector<double> brute_force_shapley(const uwml::GbdtModel& model, std::span<const double> x,
                                               int m) {
  auto value = [&](std::uint32_t known) {
    double s = 0;
    for (const auto& t : model.trees) s += conditional_expectation(t, 0, x, known);
    return model.learning_rate * s;
  };
  std::vector<double> fact(static_cast<std::size_t>(m) + 1, 1.0);
  for (int i = 1; i <= m; ++i) fact[static_cast<std::size_t>(i)] = fact[static_cast<std::size_t>(i) - 1] * i;
  std::vector<double> phi(static_cast<std::size_t>(m), 0.0);
  for (int i = 0; i < m; ++i) {
    for (std::uint32_t s = 0; s < (1u << m); ++s) {
      if (s & (1u << i)) continue;
      const int size = __builtin_popcount(s);
      const double w = fact[static_cast<std::size_t>(size)] * fact[static_cast<std::size_t>(m - size - 1)] /
                       fact[static_cast<std::size_t>(m)];
      phi[static_cast<std::size_t>(i)] += w * (value(s | (1u << i)) - value(s));
    }
  }
  return phi;
}

/// Random tree over `n_features` with depth <= max_depth and consistent covers.
inline uwml::Tree random_tree(std::mt19937_64& rng, int n_features, int max_depth) {
  uwml::Tree t;
  std::uniform_int_distribution<int> feature(0, n_features - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> leaf_cover(1, 50);
  // Build top-down, then fill covers bottom-up.
  struct Pending {
    int node;
    int depth;
  };
  t.nodes.emplace_back();
  std::vector<Pending> stack{{0, 0}};
  while (!stack.empty()) {
    auto [node, depth] = stack.back();
    stack.pop_back();
    const bool split = depth < max_depth && (depth == 0 || unit(rng) < 0.7);
    if (!split) {
      t.nodes[static_cast<std::size_t>(node)].value = unit(rng) * 20 - 10;
      t.nodes[static_cast<std::size_t>(node)].cover = leaf_cover(rng);
      continue;
    }
    const int left = static_cast<int>(t.nodes.size());
    t.nodes.emplace_back();
    t.nodes.emplace_back();
    auto& n = t.nodes[static_cast<std::size_t>(node)];
    n.feature = feature(rng);
    n.threshold = unit(rng) * 2 - 1;
    n.default_left = unit(rng) < 0.5;
    n.left = left;
    n.right = left + 1;
    stack.push_back({left, depth + 1});
    stack.push_back({left + 1, depth + 1});
  }
  for (std::size_t i = t.nodes.size(); i-- > 0;) {
    auto& n = t.nodes[i];
    if (!n.is_leaf()) {
      n.cover = t.nodes[static_cast<std::size_t>(n.left)].cover + t.nodes[static_cast<std::size_t>(n.right)].cover;
    }
  }
  return t;
}

inline uwml::GbdtModel random_model(std::mt19937_64& rng, int n_features, int max_depth, int n_trees) {
  uwml::GbdtModel m;
  m.base_score = 3.5;
  m.learning_rate = 0.3;
  for (int i = 0; i < n_features; ++i) m.feature_names.push_back("f" + std::to_string(i));
  for (int i = 0; i < n_trees; ++i) m.trees.push_back(random_tree(rng, n_features, max_depth));
  m.best_iteration = n_trees;
  return m;
}

/// Random row in [-1, 1] with some exact zeros so default directions are exercised.
inline std::vector<double> random_row(std::mt19937_64& rng, int n_features) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> x(static_cast<std::size_t>(n_features));
  for (auto& v : x) v = unit(rng) < 0.25 ? 0.0 : unit(rng) * 2 - 1;
  return x;
}

/// Gini by pairwise comparison: (1 / (W T)) * sum_{i != j} w_i w_j t_j sign(rank_j - rank_i),
/// where rank is the position after a stable ascending sort on prediction.
inline double pairwise_gini(std::span<const double> pred, std::span<const double> truth,
                            std::span<const double> weight) {
  const std::size_t n = pred.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pred[a] < pred[b]; });
  std::vector<std::size_t> rank(n);
  for (std::size_t k = 0; k < n; ++k) rank[order[k]] = k;
  double W = 0, T = 0;
  for (std::size_t i = 0; i < n; ++i) {
    W += weight[i];
    T += weight[i] * truth[i];
  }
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double sign = rank[j] > rank[i] ? 1.0 : -1.0;
      s += weight[i] * weight[j] * truth[j] * sign;
    }
  }
  return s / (W * T);
}

}  // namespace oracle
