#include "uwml/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <omp.h>

#include "uwml/kernels.hpp"

namespace uwml {

std::string_view to_string(Objective o) { return o == Objective::mse ? "mse" : "mae"; }

Objective parse_objective(std::string_view s) {
  if (s == "mse") return Objective::mse;
  if (s == "mae") return Objective::mae;
  throw std::invalid_argument("unknown objective '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (num_trees <= 0 || learning_rate <= 0 || max_leaves < 2 || min_data_in_leaf <= 0 ||
      early_stopping_rounds <= 0 || l2_reg < 0 || max_depth < 0) {
    throw std::invalid_argument("train config values must be positive");
  }
  if (max_bins < 2 || max_bins > 256) throw std::invalid_argument("max_bins must lie in [2, 256]");
}

int Tree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int deepest = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].is_leaf()) continue;
    d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
    d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
    deepest = std::max(deepest, d[i] + 1);
  }
  return deepest;
}

double Tree::expected_value() const {
  double sum = 0;
  for (const auto& n : nodes) {
    if (n.is_leaf()) sum += n.cover * n.value;
  }
  return nodes.empty() || nodes[0].cover <= 0 ? 0.0 : sum / nodes[0].cover;
}

namespace {

double median_of(std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return lower / 2 + upper / 2;
}

double loss(Objective o, std::span<const double> pred, std::span<const double> y) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = pred[i] - y[i];
    s += o == Objective::mse ? e * e : std::abs(e);
  }
  return y.empty() ? 0.0 : s / static_cast<double>(y.size());
}

struct Sums {
  double g = 0, h = 0, count = 0;
  Sums operator-(const Sums& o) const { return {g - o.g, h - o.h, count - o.count}; }
  Sums operator+(const Sums& o) const { return {g + o.g, h + o.h, count + o.count}; }
};

struct SplitCandidate {
  double gain = 0;
  int feature = -1;
  std::uint32_t bin = 0;  // non-zero bins <= bin go left
  bool default_left = false;
  Sums left;

  bool valid() const { return feature >= 0; }
};

struct Leaf {
  int node = 0;
  std::size_t begin = 0, end = 0;
  int depth = 0;
  Sums total;
  std::vector<HistEntry> hist;
  SplitCandidate best;
};

class TreeGrower {
 public:
  TreeGrower(const BinnedMatrix& data, const TrainConfig& cfg, std::span<const double> grad,
             std::span<const double> hess)
      : data_(data), cfg_(cfg), grad_(grad), hess_(hess) {}

  /// Grows one tree over `rows` (reordered in place). Leaves keep their row ranges.
  Tree grow(std::vector<std::uint32_t>& rows, std::vector<Leaf>& leaves) {
    rows_ = &rows;
    leaves.clear();
    Tree tree;
    tree.nodes.emplace_back();
    Leaf root;
    root.end = rows.size();
    for (auto r : rows) root.total = root.total + Sums{grad_[r], hess_[r], 1.0};
    root.hist.resize(data_.total_bins);
    build_histogram(data_, std::span(rows).subspan(0, rows.size()), grad_, hess_, root.hist);
    evaluate(root);
    leaves.push_back(std::move(root));

    while (static_cast<int>(leaves.size()) < cfg_.max_leaves) {
      int pick = -1;
      for (std::size_t i = 0; i < leaves.size(); ++i) {
        if (leaves[i].best.valid() && (pick < 0 || leaves[i].best.gain > leaves[static_cast<std::size_t>(pick)].best.gain)) {
          pick = static_cast<int>(i);
        }
      }
      if (pick < 0) break;
      split(tree, leaves, static_cast<std::size_t>(pick));
    }
    for (auto& leaf : leaves) {
      auto& node = tree.nodes[static_cast<std::size_t>(leaf.node)];
      node.cover = leaf.total.count;
      std::vector<HistEntry>().swap(leaf.hist);
    }
    return tree;
  }

 private:
  void split(Tree& tree, std::vector<Leaf>& leaves, std::size_t index) {
    Leaf parent = std::move(leaves[index]);
    const SplitCandidate s = parent.best;
    const auto& fb = data_.features[static_cast<std::size_t>(s.feature)];

    auto& rows = *rows_;
    auto first = rows.begin() + static_cast<std::ptrdiff_t>(parent.begin);
    auto last = rows.begin() + static_cast<std::ptrdiff_t>(parent.end);
    const auto mid = std::stable_partition(first, last, [&](std::uint32_t r) {
      const auto b = data_.bin(r, static_cast<std::size_t>(s.feature));
      return b == 0 ? s.default_left : b <= s.bin;
    });
    const auto split_at = static_cast<std::size_t>(mid - rows.begin());

    const int left_id = static_cast<int>(tree.nodes.size());
    const int right_id = left_id + 1;
    {
      auto& node = tree.nodes[static_cast<std::size_t>(parent.node)];
      node.feature = s.feature;
      node.threshold = fb.upper[s.bin - 1];
      node.default_left = s.default_left;
      node.left = left_id;
      node.right = right_id;
      node.gain = s.gain;
      node.cover = parent.total.count;
    }
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();

    Leaf left, right;
    left.node = left_id;
    right.node = right_id;
    left.begin = parent.begin;
    left.end = right.begin = split_at;
    right.end = parent.end;
    left.depth = right.depth = parent.depth + 1;
    left.total = s.left;
    right.total = parent.total - s.left;

    Leaf& small = (left.end - left.begin) <= (right.end - right.begin) ? left : right;
    Leaf& large = &small == &left ? right : left;
    small.hist.resize(data_.total_bins);
    build_histogram(data_, std::span(rows).subspan(small.begin, small.end - small.begin), grad_, hess_,
                    small.hist);
    large.hist = std::move(parent.hist);
    for (std::size_t b = 0; b < large.hist.size(); ++b) {
      large.hist[b].g -= small.hist[b].g;
      large.hist[b].h -= small.hist[b].h;
      large.hist[b].count -= small.hist[b].count;
    }
    // Totals are recounted from rows so leaf values do not inherit subtraction error.
    for (Leaf* leaf : {&left, &right}) {
      Sums t;
      for (std::size_t i = leaf->begin; i < leaf->end; ++i) {
        const auto r = rows[i];
        t = t + Sums{grad_[r], hess_[r], 1.0};
      }
      leaf->total = t;
      evaluate(*leaf);
    }
    leaves[index] = std::move(left);
    leaves.push_back(std::move(right));
  }

  void evaluate(Leaf& leaf) const {
    leaf.best = {};
    if (cfg_.max_depth > 0 && leaf.depth >= cfg_.max_depth) return;
    if (leaf.total.count < 2.0 * cfg_.min_data_in_leaf) return;
    const std::size_t n_features = data_.features.size();
    const int threads = std::max(1, std::min<int>(omp_get_max_threads(), static_cast<int>(n_features / 256) + 1));
    std::vector<SplitCandidate> best(static_cast<std::size_t>(threads));
#pragma omp parallel num_threads(threads)
    {
      const auto t = static_cast<std::size_t>(omp_get_thread_num());
      const auto nt = static_cast<std::size_t>(omp_get_num_threads());
      const std::size_t lo = n_features * t / nt, hi = n_features * (t + 1) / nt;
      for (std::size_t f = lo; f < hi; ++f) scan_feature(leaf, f, best[t]);
    }
    // Chunks are in feature order, so keeping the first strict maximum matches a serial scan.
    for (const auto& b : best) {
      if (b.valid() && (!leaf.best.valid() || b.gain > leaf.best.gain)) leaf.best = b;
    }
  }

  void scan_feature(const Leaf& leaf, std::size_t f, SplitCandidate& best) const {
    const auto& fb = data_.features[f];
    if (fb.size() == 0) return;
    const double lambda = cfg_.l2_reg;
    const double min_count = cfg_.min_data_in_leaf;
    const Sums total = leaf.total;
    Sums nonzero;
    for (std::size_t b = 0; b < fb.size(); ++b) {
      const auto& e = leaf.hist[fb.offset + b];
      nonzero = nonzero + Sums{e.g, e.h, e.count};
    }
    if (nonzero.count == 0) return;
    const Sums zero = total - nonzero;
    const double parent_score = total.g * total.g / (total.h + lambda);
    auto consider = [&](const Sums& l, std::uint32_t bin, bool default_left) {
      const Sums r = total - l;
      if (l.count < min_count || r.count < min_count) return;
      const double gain = l.g * l.g / (l.h + lambda) + r.g * r.g / (r.h + lambda) - parent_score;
      if (gain > 1e-12 && (!best.valid() || gain > best.gain)) {
        best = SplitCandidate{gain, static_cast<int>(f), bin, default_left, l};
      }
    };
    Sums cum;
    for (std::size_t b = 0; b < fb.size(); ++b) {
      const auto& e = leaf.hist[fb.offset + b];
      cum = cum + Sums{e.g, e.h, e.count};
      const auto bin = static_cast<std::uint32_t>(b + 1);
      const bool last = b + 1 == fb.size();
      if (!last || zero.count > 0) consider(cum, bin, false);
      if (!last && zero.count > 0) consider(cum + zero, bin, true);
    }
  }

  const BinnedMatrix& data_;
  const TrainConfig& cfg_;
  std::span<const double> grad_, hess_;
  std::vector<std::uint32_t>* rows_ = nullptr;
};

}  // namespace

GbdtModel fit(const Dataset& train, const Dataset& valid, const TrainConfig& cfg,
              std::vector<std::string> feature_names) {
  cfg.validate();
  if (!train.x || train.x->rows() == 0 || train.y.empty()) throw std::invalid_argument("empty training set");
  if (train.x->rows() != train.y.size()) throw std::invalid_argument("training rows and targets differ");
  const bool has_valid = valid.x && valid.x->rows() > 0;
  if (has_valid && (valid.x->rows() != valid.y.size() || valid.x->n_cols != train.x->n_cols)) {
    throw std::invalid_argument("validation set does not match the training layout");
  }
  for (double v : train.y) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite training target");
  }
  for (double v : valid.y) {
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite validation target");
  }
  if (!feature_names.empty() && feature_names.size() != train.x->n_cols) {
    throw std::invalid_argument("feature names do not match the matrix width");
  }

  GbdtModel model;
  model.learning_rate = cfg.learning_rate;
  model.objective = cfg.objective;
  model.feature_names = std::move(feature_names);
  const std::size_t n = train.y.size();
  {
    std::vector<double> y(train.y.begin(), train.y.end());
    model.base_score = cfg.objective == Objective::mse
                           ? std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n)
                           : median_of(y);
    model.constant_target =
        std::all_of(train.y.begin(), train.y.end(), [&](double v) { return v == train.y.front(); });
  }

  const BinnedMatrix data = bin_matrix(*train.x, cfg.max_bins);
  std::vector<double> pred(n, model.base_score), grad(n), hess(n, 1.0);
  std::vector<double> valid_pred(has_valid ? valid.y.size() : 0, model.base_score);
  std::vector<std::uint32_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0u);
  std::vector<Leaf> leaves;
  TreeGrower grower(data, cfg, grad, hess);

  model.train_curve.push_back(loss(cfg.objective, pred, train.y));
  if (has_valid) model.valid_curve.push_back(loss(cfg.objective, valid_pred, valid.y));
  std::size_t best_k = 0;
  std::vector<Tree> trees;

  for (int round = 0; round < cfg.num_trees; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const double e = pred[i] - train.y[i];
      grad[i] = cfg.objective == Objective::mse ? e : static_cast<double>((e > 0) - (e < 0));
    }
    Tree tree = grower.grow(rows, leaves);
    if (tree.nodes.size() == 1) break;

    std::vector<double> residuals;
    for (const auto& leaf : leaves) {
      double value;
      if (cfg.objective == Objective::mse) {
        value = -leaf.total.g / (leaf.total.h + cfg.l2_reg);
      } else {
        residuals.clear();
        for (std::size_t i = leaf.begin; i < leaf.end; ++i) residuals.push_back(train.y[rows[i]] - pred[rows[i]]);
        value = median_of(residuals);
      }
      tree.nodes[static_cast<std::size_t>(leaf.node)].value = value;
      for (std::size_t i = leaf.begin; i < leaf.end; ++i) pred[rows[i]] += cfg.learning_rate * value;
    }
    model.train_curve.push_back(loss(cfg.objective, pred, train.y));
    trees.push_back(std::move(tree));

    if (has_valid) {
      const Tree& t = trees.back();
      const auto nv = static_cast<std::ptrdiff_t>(valid_pred.size());
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t i = 0; i < nv; ++i) {
        valid_pred[static_cast<std::size_t>(i)] +=
            cfg.learning_rate * t.predict(valid.x->row(static_cast<std::size_t>(i)));
      }
      model.valid_curve.push_back(loss(cfg.objective, valid_pred, valid.y));
      const std::size_t k = trees.size();
      if (model.valid_curve[k] < model.valid_curve[best_k]) best_k = k;
      if (k - best_k >= static_cast<std::size_t>(cfg.early_stopping_rounds)) break;
    } else {
      best_k = trees.size();
    }
  }
  trees.resize(best_k);
  model.trees = std::move(trees);
  model.best_iteration = static_cast<int>(best_k);
  return model;
}

std::vector<double> GbdtModel::predict(const SparseMatrix& m) const {
  std::vector<double> out(m.rows());
  const auto n = static_cast<std::ptrdiff_t>(m.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = predict(m.row(static_cast<std::size_t>(i)));
  }
  return out;
}

std::vector<double> GbdtModel::predict_serial(const SparseMatrix& m) const {
  std::vector<double> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = predict(m.row(i));
  return out;
}

// Persistence -----------------------------------------------------------------------

nlohmann::json GbdtModel::to_json() const {
  nlohmann::json j;
  j["format"] = "uwml-gbdt";
  j["version"] = kFormatVersion;
  j["objective"] = std::string(to_string(objective));
  j["base_score"] = base_score;
  j["learning_rate"] = learning_rate;
  j["best_iteration"] = best_iteration;
  j["constant_target"] = constant_target;
  j["feature_names"] = feature_names;
  j["valid_curve"] = valid_curve;
  j["train_curve"] = train_curve;
  auto& jt = j["trees"] = nlohmann::json::array();
  for (const auto& t : trees) {
    nlohmann::json nodes;
    for (const auto& n : t.nodes) {
      nodes["feature"].push_back(n.feature);
      nodes["threshold"].push_back(n.threshold);
      nodes["default_left"].push_back(n.default_left);
      nodes["left"].push_back(n.left);
      nodes["right"].push_back(n.right);
      nodes["value"].push_back(n.value);
      nodes["cover"].push_back(n.cover);
      nodes["gain"].push_back(n.gain);
    }
    jt.push_back(std::move(nodes));
  }
  return j;
}

GbdtModel GbdtModel::from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "uwml-gbdt") throw std::runtime_error("not a uwml-gbdt model document");
  if (j.at("version").get<int>() != kFormatVersion) throw std::runtime_error("unsupported model version");
  GbdtModel m;
  m.objective = parse_objective(j.at("objective").get<std::string>());
  m.base_score = j.at("base_score");
  m.learning_rate = j.at("learning_rate");
  m.best_iteration = j.at("best_iteration");
  m.constant_target = j.value("constant_target", false);
  m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  m.valid_curve = j.value("valid_curve", std::vector<double>{});
  m.train_curve = j.value("train_curve", std::vector<double>{});
  for (const auto& jt : j.at("trees")) {
    Tree t;
    const auto& feature = jt.at("feature");
    t.nodes.resize(feature.size());
    for (std::size_t i = 0; i < t.nodes.size(); ++i) {
      auto& n = t.nodes[i];
      n.feature = feature[i];
      n.threshold = jt.at("threshold")[i];
      n.default_left = jt.at("default_left")[i];
      n.left = jt.at("left")[i];
      n.right = jt.at("right")[i];
      n.value = jt.at("value")[i];
      n.cover = jt.at("cover")[i];
      n.gain = jt.at("gain")[i];
      const int limit = static_cast<int>(t.nodes.size());
      if (!n.is_leaf() && (n.left <= 0 || n.right <= 0 || n.left >= limit || n.right >= limit)) {
        throw std::runtime_error("model tree has an invalid child index");
      }
    }
    m.trees.push_back(std::move(t));
  }
  if (static_cast<int>(m.trees.size()) != m.best_iteration) {
    throw std::runtime_error("model tree count does not match best_iteration");
  }
  return m;
}

void GbdtModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json().dump(1) << '\n';
}

GbdtModel GbdtModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return from_json(nlohmann::json::parse(in));
}

std::map<std::string, FeatureUse> feature_importance(const GbdtModel& model) {
  std::map<std::string, FeatureUse> out;
  for (const auto& t : model.trees) {
    for (const auto& n : t.nodes) {
      if (n.is_leaf()) continue;
      const auto f = static_cast<std::size_t>(n.feature);
      auto& use = out[f < model.feature_names.size() ? model.feature_names[f] : "f" + std::to_string(f)];
      ++use.split_count;
      use.total_gain += n.gain;
    }
  }
  return out;
}

}  // namespace uwml
