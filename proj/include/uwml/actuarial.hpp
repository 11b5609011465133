#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "uwml/group_stats.hpp"
#include "uwml/records.hpp"
#include "uwml/slicing.hpp"

namespace uwml {

/// Rating variables. Trends are annual fractions, base costs are pmpm dollars,
/// x_* are multiplicative factors and x_p is the pooling level in dollars.
struct RatingFactors {
  double AT = 0, AT_L = 0, AT_med = 0, AT_ph = 0;
  double BC_cap = 0, BC_med = 0, BC_p = 0, BC_ph = 0;
  double x_b = 1, x_d = 1, x_dm = 1, x_dp = 1, x_dph = 1;
  double x_gm = 1, x_gp = 1, x_gph = 1;
  double x_im = 1, x_ip = 1, x_iph = 1;
  double x_m = 1, x_ph = 1;
  double x_p = 100000;

  /// Throws std::invalid_argument unless every factor and x_p is > 0.
  void validate() const;
};

struct GroupExperience {
  double TC = 0;   // total claims
  double TSC = 0;  // claims above the pooling level
  double n_s = 0;  // members above the pooling level
  double mm = 0;   // member months
  double m = 12;   // months from experience midpoint to projection midpoint
  double S = 0;    // medical cost share

  void validate() const;
};

/// Exposure inputs of the manual rate.
struct Census {
  double mm = 0;
  double m = 12;
  double S = 0;
};

/// Limited-fluctuation credibility: min(1, sqrt(mm / K)).
struct CredibilityCurve {
  double full_credibility_mm = 12000;
  double operator()(double mm) const;
};

/// Left-closed steps over S; the last step also covers S = 1.
struct StepTable {
  std::vector<std::pair<double, double>> steps;  // (lower bound, factor), ascending

  double lookup(double S) const;
  static StepTable pharmacy_utilization_default();
};

/// Experience rate over the projection period.
double experience_rate(const GroupExperience& exp, const RatingFactors& f);

/// 1.2 * exp(-0.8 * S).
double medical_utilization_factor(double S);

/// Manual rate over `census.mm` member months. The utilization factors are
/// taken from the cost share S, not from `f.x_udm` style overrides.
double manual_rate(const Census& census, const RatingFactors& f,
                   const StepTable& pharmacy_utilization = StepTable::pharmacy_utilization_default());

/// c * er + (1 - c) * mr; c outside [0, 1] throws std::invalid_argument.
double blend(double er, double mr, double c);

/// Throws std::invalid_argument for mm < 0.
double credibility(double mm, const CredibilityCurve& curve = {});

struct ShockSplit {
  double TC = 0;
  double TSC = 0;
  double n_s = 0;
};

/// Pooling applied to per-member period totals.
ShockSplit shock_split(std::span<const double> member_totals, double pooling_level);

// Factor tables -----------------------------------------------------------------

/// (table_name, key, factor) rows; lookups missing from the file return 1.
class FactorTables {
 public:
  void set(const std::string& table, const std::string& key, double factor);
  double get(const std::string& table, const std::string& key) const;

  static FactorTables read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::map<std::string, double>> tables_;
};

// Book-level calibration and the baseline -----------------------------------------

/// Age band label such as "45-54".
std::string age_band(int age);

/// Population parameters estimated on training groups.
struct ActuarialCalibration {
  RatingFactors factors;  // trends and base costs; group factors stay 1
  CredibilityCurve curve;
  StepTable pharmacy_utilization = StepTable::pharmacy_utilization_default();
  double midpoint_months = 16;
  /// Keyed "<sex>:<band>" -> (medical factor, pharmacy factor).
  std::map<std::string, std::pair<double, double>> demographic;

  nlohmann::json to_json() const;
  static ActuarialCalibration from_json(const nlohmann::json& j);
};

struct CalibrationOptions {
  double pooling_level = 100000;
  double full_credibility_mm = 12000;
  /// Cells with fewer member months keep factor 1.
  double min_cell_member_months = 120;
};

/// Estimates trends, base costs and demographic factors from the groups in
/// `slices` (normally the training split).
ActuarialCalibration calibrate_actuarial(const Book& book, const std::vector<GroupSlice>& slices,
                                         const std::vector<GroupStats>& stats,
                                         const CalibrationOptions& options = {},
                                         DateField field = DateField::encounter);

struct BaselinePrediction {
  std::string group_id;
  double experience_pmpm = 0;
  double er_pmpm = 0;
  double mr_pmpm = 0;
  double credibility = 0;
  double pmpm = 0;  // blended projection pmpm
  /// pmpm / experience_pmpm, 0 when the experience pmpm is not positive.
  double trend = 0;
};

/// Blended prediction per slice; groups without experience member months are skipped.
std::vector<BaselinePrediction> actuarial_baseline(const Book& book,
                                                   const std::vector<GroupSlice>& slices,
                                                   const std::vector<GroupStats>& stats,
                                                   const ActuarialCalibration& calibration,
                                                   const FactorTables& tables = {});

}  // namespace uwml
