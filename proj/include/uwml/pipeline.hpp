#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "uwml/actuarial.hpp"
#include "uwml/features.hpp"
#include "uwml/gbdt.hpp"
#include "uwml/group_stats.hpp"
#include "uwml/slicing.hpp"

namespace uwml {

struct PipelineConfig {
  SliceSpec slicing;
  FeatureOptions features;
  std::vector<double> thresholds = {0.01, 0.005, 0.001};
  std::size_t feature_cap = 100000;
  std::array<double, 3> split_ratios = {0.70, 0.20, 0.10};
  std::uint64_t seed = 0;
  TrainConfig member_model = default_member_config();
  TrainConfig group_model = default_group_config();
  CalibrationOptions actuarial;
  int late_months = 4;
  double high_cost_quantile = 0.90;
  std::size_t min_training_groups = 30;

  static TrainConfig default_member_config();
  static TrainConfig default_group_config();
};

// Member stage ----------------------------------------------------------------------

struct SweepRow {
  double threshold = 0;
  std::size_t n_features = 0;
  double test_mse = 0;
  int best_iteration = 0;
  bool chosen = false;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // one per threshold, input order
  std::size_t chosen = 0;
  FeatureCatalog catalog;      // catalog of the chosen threshold
  GbdtModel model;             // member model of the chosen threshold
};

/// Index of the largest threshold whose test MSE is within `tolerance` (relative)
/// of the best test MSE.
std::size_t choose_threshold(const std::vector<SweepRow>& rows, double tolerance = 0.01);

/// Fits one member model per threshold on `train_rows` and scores member-level
/// MSE on `test_rows`. Requires at least two thresholds.
SweepResult prevalence_sweep(const FeatureTable& table, std::span<const std::size_t> train_rows,
                             std::span<const double> train_y, std::span<const std::size_t> test_rows,
                             std::span<const double> test_y, const std::vector<double>& thresholds,
                             const TrainConfig& cfg, std::size_t feature_cap = 100000);

/// Per-month cost prediction for each (group, member).
using MemberPredictions = std::map<MemberKey, double>;

/// Mean of the roster members' predictions per group. Groups with an empty
/// roster are left out with a warning; a roster member without a prediction throws.
std::map<std::string, double> aggregate_members(const MemberPredictions& predictions,
                                                const std::vector<GroupSlice>& slices);

// Group stage -----------------------------------------------------------------------

struct GroupFeatureRow {
  std::string group_id;
  double mean_member_prediction = 0;
  double mean_age = 0;
  double member_months_exp = 0;
  double growth = 0;
  double avg_coverage_len = 0;  // days
  double late_cost_fraction = 0;
  double high_cost_fraction = 0;

  static const std::vector<std::string>& names();
  std::vector<double> values() const;
};

/// Experience-period allowed per roster member, keyed like member predictions.
std::map<MemberKey, double> member_experience_costs(const Book& book, const std::vector<GroupSlice>& slices,
                                                    DateField field = DateField::encounter);

/// Nearest-rank quantile; 0 for an empty sample.
double cost_quantile(std::vector<double> costs, double q);

/// Seven features per group with a roster, positive experience member months
/// and a member-level mean. `stats` must be aligned with `slices`.
std::vector<GroupFeatureRow> build_group_features(const Book& book, const std::vector<GroupSlice>& slices,
                                                  const std::vector<GroupStats>& stats,
                                                  const std::map<std::string, double>& member_means,
                                                  double high_cost_cutoff,
                                                  DateField field = DateField::encounter);

struct GroupModelReport {
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double test_mae_adjusted = 0;
  double test_mae_unadjusted = 0;
  bool constant_target = false;

  nlohmann::json to_json() const;
};

struct GroupModelFit {
  GbdtModel model;  // predicts true pmpm - mean_member_prediction
  GroupModelReport report;
};

/// MAE-objective adjustment model. Rows must carry true projection pmpm in
/// `train_y` / `test_y`. Throws std::invalid_argument below `min_groups` rows.
GroupModelFit fit_group_model(const std::vector<GroupFeatureRow>& train, std::span<const double> train_y,
                              const std::vector<GroupFeatureRow>& test, std::span<const double> test_y,
                              const TrainConfig& cfg, std::size_t min_groups = 30);

/// Adjusted pmpm, floored at 0.
double adjusted_pmpm(const GbdtModel& group_model, const GroupFeatureRow& row);

enum class Recommendation { green, yellow_red };
std::string_view to_string(Recommendation r);

struct RecommendationResult {
  Recommendation value = Recommendation::yellow_red;
  std::string reason;
};

/// Green iff model_trend / baseline_trend < 1. A missing or non-positive
/// baseline gives yellow_red with a reason.
RecommendationResult recommend(double model_trend, std::optional<double> baseline_trend);

// End to end ------------------------------------------------------------------------

struct PipelineArtifacts {
  SliceSpec slicing;
  DateField date_field = DateField::encounter;
  GrouperConfig grouper;
  double threshold = 0;
  double high_cost_cutoff = 0;
  int late_months = 4;
  FeatureCatalog catalog;
  GbdtModel member_model;
  GbdtModel group_model;
  ActuarialCalibration calibration;

  FeatureOptions feature_options() const { return FeatureOptions{date_field, grouper}; }

  /// Writes pipeline.json, catalog.csv, member_model.json, group_model.json and calibration.json.
  void save(const std::filesystem::path& dir) const;
  /// Throws std::invalid_argument when the catalog and member model disagree.
  static PipelineArtifacts load(const std::filesystem::path& dir);
};

struct TrainReport {
  SplitAssignment split;
  std::vector<SweepRow> sweep;
  GroupModelReport group;
  std::size_t n_train_members = 0;
  std::size_t n_test_members = 0;
  std::vector<std::pair<MemberKey, std::string>> dropped_members;

  nlohmann::json to_json() const;
};

struct TrainResult {
  PipelineArtifacts artifacts;
  TrainReport report;
};

TrainResult train_pipeline(const Book& book, const std::vector<GroupSlice>& slices, const PipelineConfig& cfg);

struct GroupPrediction {
  std::string group_id;
  int n_members_end_experience = 0;
  int member_months_experience = 0;
  double true_allowed_experience = 0;
  double mean_member_prediction = 0;
  double predicted_pmpm = 0;
  double predicted_allowed_projection = 0;  // predicted_pmpm * 12 * n_members_end_experience
  double predicted_trend = 0;
  Recommendation recommendation = Recommendation::yellow_red;
  std::string reason;
};

struct SkippedGroup {
  std::string group_id;
  std::string reason;
};

struct PredictionResult {
  std::vector<GroupPrediction> groups;
  std::vector<BaselinePrediction> baseline;
  std::vector<SkippedGroup> skipped;
  MemberPredictions members;
  std::vector<GroupFeatureRow> features;
};

/// Trend per group from an external (group_id, baseline_trend) CSV.
std::map<std::string, double> read_baseline_trends(const std::filesystem::path& path);

/// Predictions for every slice. `expected_groups` (for example a renewal
/// table's keys) adds skip entries for groups absent from the book.
/// `external_trends` replaces the in-repo actuarial trend for recommendations.
PredictionResult predict_pipeline(const Book& book, const std::vector<GroupSlice>& slices,
                                  const PipelineArtifacts& artifacts, const FactorTables& tables = {},
                                  const std::map<std::string, double>* external_trends = nullptr,
                                  const std::vector<std::string>& expected_groups = {});

void write_predictions(const std::vector<GroupPrediction>& predictions, const std::filesystem::path& path);
void write_baseline(const std::vector<BaselinePrediction>& baseline, const std::filesystem::path& path);
void write_skipped(const std::vector<SkippedGroup>& skipped, const std::filesystem::path& path);

/// Rows of a predictions CSV as written by write_predictions.
std::vector<GroupPrediction> read_predictions(const std::filesystem::path& path);
std::vector<BaselinePrediction> read_baseline(const std::filesystem::path& path);

// Explanations ----------------------------------------------------------------------

struct Driver {
  std::string group_id;
  std::string feature_name;  // "member|<feature>" or "group|<feature>"
  double pmpm_dollars = 0;
};

struct GroupExplanation {
  std::string group_id;
  double base_value = 0;       // member base value + group base value
  double predicted_pmpm = 0;   // before the floor at 0
  std::map<std::string, double> contributions;
  /// base_value + sum(contributions).
  double total() const;
};

/// SHAP decomposition of each group prediction: roster-mean member SHAP values
/// plus the group model's SHAP values.
std::vector<GroupExplanation> explain_groups(const Book& book, const std::vector<GroupSlice>& slices,
                                             const PipelineArtifacts& artifacts);

/// Top `n` contributions per group by absolute value (ties by name).
std::vector<Driver> top_drivers(const std::vector<GroupExplanation>& explanations, std::size_t n);
void write_drivers(const std::vector<Driver>& drivers, const std::filesystem::path& path);

}  // namespace uwml
