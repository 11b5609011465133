#include "uwml/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "uwml/csv.hpp"

namespace uwml {

namespace {

void require_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": inputs are not aligned");
}

}  // namespace

double normalized_mae(std::span<const double> pred, std::span<const double> truth,
                      std::span<const double> member_months) {
  require_aligned(pred.size(), truth.size(), "normalized_mae");
  require_aligned(pred.size(), member_months.size(), "normalized_mae");
  double mm = 0, cost = 0, abs_err = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mm += member_months[i];
    cost += truth[i] * member_months[i];
    abs_err += std::abs(pred[i] - truth[i]);
  }
  if (mm <= 0) throw std::invalid_argument("normalized_mae: zero total member months");
  return (abs_err / static_cast<double>(pred.size())) / (cost / mm);
}

double r_squared(std::span<const double> pred, std::span<const double> truth) {
  require_aligned(pred.size(), truth.size(), "r_squared");
  if (truth.empty()) throw std::invalid_argument("r_squared: no groups");
  const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / static_cast<double>(truth.size());
  double res = 0, tot = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    tot += (truth[i] - mean) * (truth[i] - mean);
  }
  if (tot == 0) return res == 0 ? 1.0 : 0.0;
  return 1.0 - res / tot;
}

namespace {

double lorenz_gini(std::span<const double> key, std::span<const double> truth, std::span<const double> w) {
  std::vector<std::size_t> order(key.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });
  double W = 0, T = 0;
  for (std::size_t i = 0; i < key.size(); ++i) {
    W += w[i];
    T += w[i] * truth[i];
  }
  if (W == 0 || T == 0) return 0.0;
  double auc = 0, cum = 0;
  for (const auto i : order) {
    const double next = cum + w[i] * truth[i];
    auc += (w[i] / W) * (cum + next) / (2 * T);
    cum = next;
  }
  return 1.0 - 2.0 * auc;
}

}  // namespace

GiniResult gini(std::span<const double> pred, std::span<const double> truth, std::span<const double> weights) {
  require_aligned(pred.size(), truth.size(), "gini");
  require_aligned(pred.size(), weights.size(), "gini");
  if (pred.size() < 2) throw std::invalid_argument("gini needs at least two rows");
  GiniResult r;
  r.degenerate = std::all_of(pred.begin(), pred.end(), [&](double p) { return p == pred.front(); });
  if (r.degenerate) return r;
  r.gini = lorenz_gini(pred, truth, weights);
  const double best = lorenz_gini(truth, truth, weights);
  r.normalized = best == 0 ? 0.0 : r.gini / best;
  return r;
}

namespace {

std::vector<LiftDecile> bucketize(const std::vector<LiftGroup>& groups, const std::vector<double>& key,
                                  int buckets, double global_ae) {
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });
  std::vector<LiftDecile> out(static_cast<std::size_t>(buckets));
  const std::size_t n = groups.size();
  for (int k = 0; k < buckets; ++k) {
    auto& d = out[static_cast<std::size_t>(k)];
    d.index = k + 1;
    const std::size_t lo = n * static_cast<std::size_t>(k) / static_cast<std::size_t>(buckets);
    const std::size_t hi = n * static_cast<std::size_t>(k + 1) / static_cast<std::size_t>(buckets);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& g = groups[order[i]];
      d.group_ids.push_back(g.group_id);
      d.actual += g.actual;
      d.expected += g.expected;
    }
    d.ae_normalized = d.expected > 0 && global_ae > 0 ? (d.actual / d.expected) / global_ae : 0.0;
  }
  return out;
}

}  // namespace

LiftPlot lift_plot(const std::vector<LiftGroup>& groups, int buckets) {
  if (buckets < 1) throw std::invalid_argument("lift plot needs at least one bucket");
  if (groups.size() < static_cast<std::size_t>(buckets)) {
    throw std::invalid_argument("lift plot needs at least " + std::to_string(buckets) +
                                " groups; use quintiles for smaller holdouts");
  }
  double A = 0, E = 0;
  std::vector<double> model_key, oracle_key;
  for (const auto& g : groups) {
    if (g.baseline_trend <= 0 || g.expected <= 0) {
      throw std::invalid_argument("lift plot: group " + g.group_id + " has no positive baseline");
    }
    A += g.actual;
    E += g.expected;
    model_key.push_back(g.model_trend / g.baseline_trend);
    oracle_key.push_back(g.actual / g.expected);
  }
  LiftPlot plot;
  plot.global_ae = A / E;
  plot.model = bucketize(groups, model_key, buckets, plot.global_ae);
  plot.oracle = bucketize(groups, oracle_key, buckets, plot.global_ae);
  return plot;
}

void write_lift_csv(const LiftPlot& plot, const std::filesystem::path& path) {
  CsvWriter out(path, {"decile_index", "ae_model", "ae_oracle"});
  for (std::size_t k = 0; k < plot.model.size(); ++k) {
    out.row({std::to_string(plot.model[k].index), format_double(plot.model[k].ae_normalized),
             format_double(plot.oracle[k].ae_normalized)});
  }
}

nlohmann::json ConcessionReport::to_json() const {
  nlohmann::json j;
  j["level"] = level;
  j["rule_threshold"] = rule_threshold;
  j["true_positive"] = true_positive;
  j["false_positive"] = false_positive;
  j["false_negative"] = false_negative;
  j["true_negative"] = true_negative;
  j["precision"] = precision ? nlohmann::json(*precision) : nlohmann::json("undefined");
  j["recall"] = recall ? nlohmann::json(*recall) : nlohmann::json("undefined");
  return j;
}

namespace {

ConcessionReport tally(std::span<const double> predicted_ratio, const std::vector<bool>& actual,
                       double level, double rule_threshold) {
  ConcessionReport r;
  r.level = level;
  r.rule_threshold = rule_threshold;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const bool predicted = predicted_ratio[i] < rule_threshold;
    if (predicted && actual[i]) ++r.true_positive;
    if (predicted && !actual[i]) ++r.false_positive;
    if (!predicted && actual[i]) ++r.false_negative;
    if (!predicted && !actual[i]) ++r.true_negative;
  }
  if (r.true_positive + r.false_positive > 0) {
    r.precision = static_cast<double>(r.true_positive) / (r.true_positive + r.false_positive);
  }
  if (r.true_positive + r.false_negative > 0) {
    r.recall = static_cast<double>(r.true_positive) / (r.true_positive + r.false_negative);
  }
  return r;
}

}  // namespace

ConcessionReport concession_report(std::span<const double> predicted_ratio, std::span<const double> true_ratio,
                                   double level, double rule_threshold) {
  require_aligned(predicted_ratio.size(), true_ratio.size(), "concession_report");
  std::vector<bool> actual;
  for (double t : true_ratio) actual.push_back(t < 1.0 - level);
  return tally(predicted_ratio, actual, level, rule_threshold);
}

ConcessionReport concession_report_labels(std::span<const double> predicted_ratio, const std::vector<bool>& labels,
                                          double level, double rule_threshold) {
  require_aligned(predicted_ratio.size(), labels.size(), "concession_report_labels");
  return tally(predicted_ratio, labels, level, rule_threshold);
}

namespace {

nlohmann::json metrics_json(const ModelMetrics& m) {
  return {{"normalized_mae", m.normalized_mae},
          {"r2", m.r2},
          {"gini", m.gini.gini},
          {"normalized_gini", m.gini.normalized},
          {"gini_degenerate", m.gini.degenerate}};
}

nlohmann::json deciles_json(const std::vector<LiftDecile>& deciles) {
  auto j = nlohmann::json::array();
  for (const auto& d : deciles) {
    j.push_back({{"decile_index", d.index},
                 {"n_groups", d.group_ids.size()},
                 {"actual", d.actual},
                 {"expected", d.expected},
                 {"ae_normalized", d.ae_normalized}});
  }
  return j;
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["n_groups"] = n_groups;
  j["model"] = metrics_json(model);
  j["baseline"] = metrics_json(baseline);
  j["mae_improvement"] = mae_improvement;
  j["lift"] = {{"buckets", lift_buckets},
               {"global_ae", lift.global_ae},
               {"model", deciles_json(lift.model)},
               {"oracle", deciles_json(lift.oracle)}};
  j["concessions"] = nlohmann::json::array();
  for (const auto& c : concessions) j["concessions"].push_back(c.to_json());
  j["label_concessions"] = nlohmann::json::array();
  for (const auto& c : label_concessions) j["label_concessions"].push_back(c.to_json());
  j["skipped_groups"] = skipped;
  return j;
}

EvalReport evaluate(const std::vector<EvalGroup>& groups, bool quintiles) {
  EvalReport report;
  report.lift_buckets = quintiles ? 5 : 10;
  std::vector<const EvalGroup*> usable;
  for (const auto& g : groups) {
    if (g.experience_pmpm > 0 && g.baseline_pmpm > 0 && g.members_end_experience > 0 &&
        g.projection_member_months > 0) {
      usable.push_back(&g);
    } else {
      report.skipped.push_back(g.group_id);
    }
  }
  report.n_groups = usable.size();
  if (usable.size() < static_cast<std::size_t>(report.lift_buckets)) {
    throw std::invalid_argument("evaluation needs at least " + std::to_string(report.lift_buckets) +
                                " usable groups" + (quintiles ? "" : "; pass the quintiles flag for small holdouts"));
  }

  std::vector<double> truth, model, baseline, mm, model_ratio, true_ratio;
  std::vector<LiftGroup> lift_groups;
  std::vector<bool> labels;
  bool all_labeled = true;
  for (const auto* g : usable) {
    truth.push_back(g->true_pmpm);
    model.push_back(g->model_pmpm);
    baseline.push_back(g->baseline_pmpm);
    mm.push_back(g->projection_member_months);
    model_ratio.push_back(g->model_pmpm / g->baseline_pmpm);
    true_ratio.push_back(g->true_pmpm / g->baseline_pmpm);
    const double exposure = 12.0 * g->members_end_experience;
    lift_groups.push_back(LiftGroup{g->group_id, g->model_pmpm / g->experience_pmpm,
                                    g->baseline_pmpm / g->experience_pmpm, g->true_pmpm * exposure,
                                    g->baseline_pmpm * exposure});
    all_labeled = all_labeled && g->concession_label.has_value();
    labels.push_back(g->concession_label.value_or(false));
  }
  report.model = {normalized_mae(model, truth, mm), r_squared(model, truth), gini(model, truth, mm)};
  report.baseline = {normalized_mae(baseline, truth, mm), r_squared(baseline, truth), gini(baseline, truth, mm)};
  report.mae_improvement =
      report.baseline.normalized_mae > 0 ? 1.0 - report.model.normalized_mae / report.baseline.normalized_mae : 0.0;
  report.lift = lift_plot(lift_groups, report.lift_buckets);
  for (double level : {0.05, 0.10}) report.concessions.push_back(concession_report(model_ratio, true_ratio, level));
  if (all_labeled) report.label_concessions.push_back(concession_report_labels(model_ratio, labels, 0.05));
  return report;
}

}  // namespace uwml
