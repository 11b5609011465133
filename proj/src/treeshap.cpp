#include <algorithm>
#include <stdexcept>

#include "uwml/gbdt.hpp"

namespace uwml {

namespace {

// One entry of the unique feature path from the root to the current node.
struct PathElement {
  int feature = -1;
  double zero_fraction = 0;  // share of cover flowing this way when the feature is unknown
  double one_fraction = 0;   // 1 when the explained row flows this way
  double weight = 0;
};

void extend_path(PathElement* path, int depth, double zero_fraction, double one_fraction, int feature) {
  path[depth] = PathElement{feature, zero_fraction, one_fraction, depth == 0 ? 1.0 : 0.0};
  for (int i = depth - 1; i >= 0; --i) {
    path[i + 1].weight += one_fraction * path[i].weight * (i + 1) / (depth + 1);
    path[i].weight = zero_fraction * path[i].weight * (depth - i) / (depth + 1);
  }
}

void unwind_path(PathElement* path, int depth, int index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next = path[depth].weight;
  for (int i = depth - 1; i >= 0; --i) {
    if (one != 0) {
      const double tmp = path[i].weight;
      path[i].weight = next * (depth + 1) / ((i + 1) * one);
      next = tmp - path[i].weight * zero * (depth - i) / (depth + 1);
    } else {
      path[i].weight = path[i].weight * (depth + 1) / (zero * (depth - i));
    }
  }
  for (int i = index; i < depth; ++i) {
    path[i].feature = path[i + 1].feature;
    path[i].zero_fraction = path[i + 1].zero_fraction;
    path[i].one_fraction = path[i + 1].one_fraction;
  }
}

double unwound_sum(const PathElement* path, int depth, int index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  double next = path[depth].weight;
  double total = 0;
  for (int i = depth - 1; i >= 0; --i) {
    if (one != 0) {
      const double tmp = next * (depth + 1) / ((i + 1) * one);
      total += tmp;
      next = path[i].weight - tmp * zero * (depth - i) / (depth + 1);
    } else {
      total += path[i].weight / zero * (depth + 1) / (depth - i);
    }
  }
  return total;
}

template <class Row>
void recurse(const Tree& tree, const Row& row, std::vector<double>& phi, int node, int depth,
             PathElement* parent_path, double zero_fraction, double one_fraction, int feature) {
  PathElement* path = parent_path + depth + 1;
  std::copy(parent_path, parent_path + depth + 1, path);
  extend_path(path, depth, zero_fraction, one_fraction, feature);

  const auto& n = tree.nodes[static_cast<std::size_t>(node)];
  if (n.is_leaf()) {
    for (int i = 1; i <= depth; ++i) {
      const double w = unwound_sum(path, depth, i);
      const auto& e = path[i];
      phi[static_cast<std::size_t>(e.feature)] += w * (e.one_fraction - e.zero_fraction) * n.value;
    }
    return;
  }
  const double v = row.get(static_cast<std::uint32_t>(n.feature));
  const bool go_left = v == 0.0 ? n.default_left : v <= n.threshold;
  const int hot = go_left ? n.left : n.right;
  const int cold = go_left ? n.right : n.left;
  const double hot_zero = tree.nodes[static_cast<std::size_t>(hot)].cover / n.cover;
  const double cold_zero = tree.nodes[static_cast<std::size_t>(cold)].cover / n.cover;

  double incoming_zero = 1, incoming_one = 1;
  int k = 0;
  for (; k <= depth; ++k) {
    if (path[k].feature == n.feature) break;
  }
  if (k != depth + 1) {
    incoming_zero = path[k].zero_fraction;
    incoming_one = path[k].one_fraction;
    unwind_path(path, depth, k);
    --depth;
  }
  recurse(tree, row, phi, hot, depth + 1, path, hot_zero * incoming_zero, incoming_one, n.feature);
  recurse(tree, row, phi, cold, depth + 1, path, cold_zero * incoming_zero, 0.0, n.feature);
}

std::size_t feature_count(const GbdtModel& model) {
  std::size_t n = model.feature_names.size();
  for (const auto& t : model.trees) {
    for (const auto& node : t.nodes) {
      if (!node.is_leaf()) n = std::max(n, static_cast<std::size_t>(node.feature) + 1);
    }
  }
  return n;
}

template <class Row>
ShapExplanation explain(const GbdtModel& model, const Row& row) {
  ShapExplanation out;
  out.phi.assign(feature_count(model), 0.0);
  out.base_value = expected_value(model);
  std::vector<double> tree_phi(out.phi.size());
  std::vector<PathElement> buffer;
  for (const auto& t : model.trees) {
    for (const auto& node : t.nodes) {
      if (node.cover <= 0) throw std::invalid_argument("tree has no cover counts; cannot explain");
    }
    const auto d = static_cast<std::size_t>(t.depth()) + 2;
    buffer.assign(d * (d + 1) / 2 + d + 1, PathElement{});
    std::fill(tree_phi.begin(), tree_phi.end(), 0.0);
    recurse(t, row, tree_phi, 0, 0, buffer.data(), 1.0, 1.0, -1);
    for (std::size_t f = 0; f < out.phi.size(); ++f) out.phi[f] += model.learning_rate * tree_phi[f];
  }
  return out;
}

}  // namespace

double ShapExplanation::total() const {
  double s = base_value;
  for (double p : phi) s += p;
  return s;
}

double expected_value(const GbdtModel& model) {
  double s = 0;
  for (const auto& t : model.trees) s += t.expected_value();
  return model.base_score + model.learning_rate * s;
}

ShapExplanation shap(const GbdtModel& model, const SparseRow& row) { return explain(model, row); }

ShapExplanation shap(const GbdtModel& model, std::span<const double> dense) {
  return explain(model, DenseRow{dense});
}

}  // namespace uwml
