#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "uwml/records.hpp"
#include "uwml/slicing.hpp"

namespace uwml {

/// Code-generating chronic or episodic condition.
struct ConditionProfile {
  std::string name;
  double prevalence = 0;        // at coverage start, before the age multiplier
  double onset_per_year = 0;    // new cases per member-year
  double age_sensitivity = 0;   // multiplier exp(s * (age - 40) / 10), capped at 4
  int duration_months = 0;      // 0 = chronic
  std::vector<std::string> icd10;
  std::vector<std::string> cpt;
  std::vector<std::string> ndc;
  double visit_probability = 0.5;  // specialist visit per month
  double visit_shape = 2, visit_scale = 100;
  double pharmacy_monthly = 0;  // mean drug cost per month, billed as 90-day fills
  std::string loinc;            // empty = no lab series
  double lab_mean = 0, lab_sd = 0, lab_high = 0;
  double lab_drift_mean = 0, lab_drift_sd = 0;  // per year
};

std::vector<ConditionProfile> default_conditions();

struct SynthConfig {
  std::uint64_t seed = 42;
  int n_groups = 200;
  double group_size_mu = 4.61;  // lognormal; mean about 120 members
  double group_size_sigma = 0.6;
  int min_group_size = 8;
  /// Lognormal sigmas of the group-level cost and chronic-prevalence multipliers.
  double group_frailty_sigma = 0.35;
  double group_burden_sigma = 0.4;
  Date horizon_start{2015, 1, 1};
  int months_horizon = 40;
  std::vector<ConditionProfile> conditions = default_conditions();
  double monthly_drop = 0.012;
  double monthly_add = 0.012;
  double shock_rate = 0.04;      // acute inpatient episodes per member-year
  double maternity_rate = 0.08;  // pregnancies per year for women aged 20 to 40
  double reversal_rate = 0.02;
  double annual_trend = 0.05;
  bool deterministic_costs = false;
  /// Fixed renewal date, or a uniform draw over `renewal_months` months starting at `first_renewal`.
  bool dynamic_renewals = false;
  Date fixed_renewal{2017, 1, 1};
  Date first_renewal{2016, 5, 1};
  int renewal_months = 12;
  int blackout_months = 4;
  double concession_fraction = 0.0;
  double care_management_share = 0.85;
  double concession_scale_min = 0.45, concession_scale_max = 0.70;

  /// Throws std::invalid_argument for probabilities outside [0, 1] or non-positive gamma parameters.
  void validate() const;
};

struct ConditionOnset {
  int profile = 0;
  Date onset;
  double lab_drift = 0;
};

struct MemberTruth {
  std::string member_id;
  std::string group_id;
  Date birthday;
  Sex sex = Sex::F;
  Date start, end;
  double frailty = 1;
  bool joiner = false;
  bool care_managed = false;
  std::vector<ConditionOnset> conditions;
  std::vector<Date> pregnancies;  // conception months
  std::vector<Date> shocks;
};

struct GroupTruth {
  std::string group_id;
  Date renewal_date;
  std::string plan_type;
  bool concession = false;
  double concession_scale = 1;
  Date care_start;  // first care-management month for labeled groups
  // Filled by realize():
  int members_at_slice = 0;
  Money experience_allowed;
  int experience_member_months = 0;
  Money projection_allowed;
  int projection_member_months = 0;
  Money counterfactual_projection_allowed;  // same claims without the concession scaling

  double projection_pmpm() const;
  /// Realized / counterfactual projection cost; 1 without a counterfactual.
  double concession_ratio() const;
};

struct SynthManifest {
  std::uint64_t seed = 0;
  std::vector<GroupTruth> groups;
  std::vector<MemberTruth> members;  // ordered by member_id

  nlohmann::json to_json() const;
  static SynthManifest from_json(const nlohmann::json& j);
};

/// Latent population: groups, enrollment spans and health events.
SynthManifest build_population(const SynthConfig& config);

/// Labels round(fraction * groups) groups chosen under `seed`; each labeled
/// group gets a scale in [scale_min, scale_max] and a care-management start
/// 1 to 5 months before its slice date; members enrolled on the slice date are
/// care managed with probability `care_share`.
SynthManifest inject_concessions(SynthManifest manifest, double fraction, std::uint64_t seed,
                                 double care_share = 0.85, double scale_min = 0.45,
                                 double scale_max = 0.70, int blackout_months = 4);

struct SynthOutput {
  Book book;
  SynthManifest manifest;
  RenewalTable renewals;
};

/// Claims, labs and eligibility for a manifest, with group truths filled in.
SynthOutput realize(const SynthConfig& config, SynthManifest manifest);

/// build_population, inject_concessions (config.concession_fraction) and realize.
SynthOutput generate(const SynthConfig& config);

/// Writes claims.csv, eligibility.csv, labs.csv and manifest.json, plus
/// renewals.csv when `renewal_table` is set. Creates `dir` if needed.
void write_synth(const SynthOutput& out, const std::filesystem::path& dir, bool renewal_table = false);

}  // namespace uwml
