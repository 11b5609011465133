#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace uwml {

/// mean |pred - truth| over groups divided by the global pmpm
/// sum(truth * member_months) / sum(member_months).
double normalized_mae(std::span<const double> pred, std::span<const double> truth,
                      std::span<const double> member_months);

/// 1 - SS_res / SS_tot, unweighted.
double r_squared(std::span<const double> pred, std::span<const double> truth);

struct GiniResult {
  double gini = 0;
  /// gini / gini of the truth ranked by itself; 0 when that is 0.
  double normalized = 0;
  bool degenerate = false;  // all predictions equal
};

/// Prediction-ranked Lorenz Gini: rows sorted ascending by prediction (stable),
/// weighted truth accumulated, gini = 1 - 2 * trapezoid AUC. Needs n >= 2.
GiniResult gini(std::span<const double> pred, std::span<const double> truth,
                std::span<const double> weights);

struct LiftGroup {
  std::string group_id;
  double model_trend = 0;
  double baseline_trend = 0;
  double actual = 0;    // realized projection cost on the same exposure as `expected`
  double expected = 0;  // baseline projection cost
};

struct LiftDecile {
  int index = 0;  // 1-based
  std::vector<std::string> group_ids;
  double actual = 0;
  double expected = 0;
  double ae_normalized = 0;
};

struct LiftPlot {
  std::vector<LiftDecile> model;   // ranked by model / baseline trend
  std::vector<LiftDecile> oracle;  // ranked by realized / baseline
  double global_ae = 0;
};

/// Buckets are contiguous slices [floor(k n / b), floor((k+1) n / b)) of the
/// ascending ranking. Fewer groups than buckets throws std::invalid_argument.
LiftPlot lift_plot(const std::vector<LiftGroup>& groups, int buckets = 10);

void write_lift_csv(const LiftPlot& plot, const std::filesystem::path& path);

struct ConcessionReport {
  double level = 0.05;
  double rule_threshold = 1.0;
  int true_positive = 0, false_positive = 0, false_negative = 0, true_negative = 0;
  std::optional<double> precision;  // undefined with no predicted positives
  std::optional<double> recall;     // undefined with no actual positives

  nlohmann::json to_json() const;
};

/// Predicted positive iff predicted_ratio < rule_threshold; actual positive iff
/// true_ratio < 1 - level.
ConcessionReport concession_report(std::span<const double> predicted_ratio,
                                   std::span<const double> true_ratio, double level,
                                   double rule_threshold = 1.0);

/// As above with externally known labels as the actual class.
ConcessionReport concession_report_labels(std::span<const double> predicted_ratio,
                                          const std::vector<bool>& labels, double level,
                                          double rule_threshold = 1.0);

/// One evaluated group. Costs are pmpm dollars.
struct EvalGroup {
  std::string group_id;
  double true_pmpm = 0;
  double model_pmpm = 0;
  double baseline_pmpm = 0;
  double experience_pmpm = 0;
  double projection_member_months = 0;
  double members_end_experience = 0;
  std::optional<bool> concession_label;
};

struct ModelMetrics {
  double normalized_mae = 0;
  double r2 = 0;
  GiniResult gini;
};

struct EvalReport {
  std::size_t n_groups = 0;
  ModelMetrics model;
  ModelMetrics baseline;
  double mae_improvement = 0;  // 1 - model / baseline normalized MAE
  LiftPlot lift;
  int lift_buckets = 10;
  std::vector<ConcessionReport> concessions;        // levels 0.05 and 0.10, rule 1.0
  std::vector<ConcessionReport> label_concessions;  // against labels when every group has one
  std::vector<std::string> skipped;                 // groups without a positive experience pmpm

  nlohmann::json to_json() const;
};

/// Computes every metric. `quintiles` switches the lift plot to 5 buckets;
/// fewer than 10 (or 5) usable groups throws std::invalid_argument.
EvalReport evaluate(const std::vector<EvalGroup>& groups, bool quintiles = false);

}  // namespace uwml
