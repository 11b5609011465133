#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "uwml/records.hpp"
#include "uwml/slicing.hpp"

namespace uwml {

/// Non-prediction fields used to reconcile two independent pipelines before
/// any metric is trusted.
struct QaFields {
  std::string group_id;
  double n_members_end_experience = 0;
  double member_months_experience = 0;
  double true_allowed_experience = 0;
  double predicted_allowed_projection = 0;
  bool empty_roster = false;  // warning flag

  static constexpr std::array<const char*, 4> kFieldNames = {
      "n_members_end_experience", "member_months_experience", "true_allowed_experience",
      "predicted_allowed_projection"};
  std::array<double, 4> values() const {
    return {n_members_end_experience, member_months_experience, true_allowed_experience,
            predicted_allowed_projection};
  }
};

/// One QaFields per slice. `predicted_totals` maps group_id to the predicted
/// projection-period allowed total; absent groups report 0.
std::vector<QaFields> compute_qa_fields(const Book& book, const std::vector<GroupSlice>& slices,
                                        const std::map<std::string, double>* predicted_totals = nullptr,
                                        DateField field = DateField::encounter);

/// Independent aggregation straight over the raw eligibility and claims files,
/// bypassing ingest and the record model. Used to reconcile compute_qa_fields.
std::vector<QaFields> aggregate_qa_from_files(const std::filesystem::path& claims_file,
                                              const std::filesystem::path& eligibility_file,
                                              const std::vector<GroupSlice>& slices,
                                              DateField field = DateField::encounter);

struct ReconciliationRow {
  std::string group_id;
  std::string field;
  double a = 0;
  double b = 0;
  double rel_diff = 0;
  bool pass = true;
};

struct ReconciliationReport {
  std::vector<ReconciliationRow> rows;
  double max_rel_diff = 0;
  bool pass = true;

  std::vector<ReconciliationRow> failures() const;
};

/// |a-b| / max(|a|,|b|), 0 when both are 0.
double relative_difference(double a, double b);

/// Field-by-field comparison; a pass requires every relative difference <= tolerance
/// (inclusive). A group present on one side only yields a failing row with field "missing".
ReconciliationReport reconcile(const std::vector<QaFields>& qa_a, const std::vector<QaFields>& qa_b,
                               double tolerance = 0.05);

void write_qa_fields(const std::vector<QaFields>& qa, const std::filesystem::path& path);
void write_reconciliation(const ReconciliationReport& report, const std::filesystem::path& path);

}  // namespace uwml
