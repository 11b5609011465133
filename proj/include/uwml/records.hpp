#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "uwml/date.hpp"
#include "uwml/money.hpp"

namespace uwml {

enum class Sex { F, M };
enum class CareSetting { inpatient, outpatient, ancillary, emergency, primary, specialty };
enum class CodeSystem { ICD9, ICD10, CPT, NDC, LOINC, REV };
enum class LabInterpretation { high, low, abnormal, normal };
/// Which claim date drives window membership and censoring.
enum class DateField { encounter, paid };

inline constexpr std::array kCareSettings = {CareSetting::inpatient, CareSetting::outpatient,
                                             CareSetting::ancillary, CareSetting::emergency,
                                             CareSetting::primary,   CareSetting::specialty};
inline constexpr std::array kCodeSystems = {CodeSystem::ICD9,  CodeSystem::ICD10, CodeSystem::CPT,
                                            CodeSystem::NDC,   CodeSystem::LOINC, CodeSystem::REV};
inline constexpr std::array kLabInterpretations = {
    LabInterpretation::high, LabInterpretation::low, LabInterpretation::abnormal,
    LabInterpretation::normal};

std::string_view to_string(Sex s);
std::string_view to_string(CareSetting s);
std::string_view to_string(CodeSystem s);
std::string_view to_string(LabInterpretation s);
std::string_view to_string(DateField f);
std::optional<Sex> parse_sex(std::string_view s);
std::optional<CareSetting> parse_care_setting(std::string_view s);
std::optional<CodeSystem> parse_code_system(std::string_view s);
std::optional<LabInterpretation> parse_lab_interpretation(std::string_view s);
std::optional<DateField> parse_date_field(std::string_view s);

struct CoverageSpan {
  std::string group_id;
  Date start_date;
  Date end_date;  // inclusive
  std::string plan_type;

  bool contains(Date d) const { return start_date <= d && d <= end_date; }
  bool operator==(const CoverageSpan&) const = default;
};

struct TermEvent {
  Date date;
  CodeSystem system = CodeSystem::ICD10;
  std::string code;
  // Only set for LOINC events.
  std::optional<double> lab_value;
  std::optional<LabInterpretation> lab_interpretation;

  bool operator==(const TermEvent&) const = default;
};

struct Claim {
  std::string claim_id;
  Date encounter_date;
  Date paid_date;
  Money allowed_amount;  // negative for reversals
  Money paid_amount;
  CareSetting care_setting = CareSetting::outpatient;
  bool is_pharmacy = false;
  bool is_capitation = false;
  std::vector<std::string> revenue_codes;
  std::vector<std::uint32_t> term_refs;  // indices into PatientRecord::terms

  Date date(DateField field) const {
    return field == DateField::encounter ? encounter_date : paid_date;
  }
  bool operator==(const Claim&) const = default;
};

struct PatientRecord {
  std::string member_id;
  Date birthday;
  Sex sex = Sex::F;
  std::vector<CoverageSpan> coverages;  // sorted by (group_id, start_date), non-overlapping per group
  std::vector<Claim> claims;            // sorted by (encounter_date, paid_date, claim_id)
  std::vector<TermEvent> terms;         // claim-linked terms first, then standalone lab events

  bool covered_by(std::string_view group_id, Date d) const;
  bool covered(Date d) const;
  /// Whole years at `d`.
  int age_at(Date d) const;
  bool operator==(const PatientRecord&) const = default;
};

/// A book of business: one record per member, ordered by member_id.
struct Book {
  std::vector<PatientRecord> records;

  const PatientRecord* find(std::string_view member_id) const;
  bool operator==(const Book&) const = default;
};

struct Reject {
  std::string source;  // "claims", "eligibility" or "labs"
  std::size_t line_no = 0;
  std::string reason;
};

struct IngestOptions {
  char separator = ',';
  char list_separator = '|';
};

struct IngestResult {
  Book book;
  std::vector<Reject> rejects;
};

/// Reshapes claims, eligibility and lab rows into longitudinal records. Bad
/// rows are rejected with a reason; the ingest itself never aborts on row data.
IngestResult ingest_book(const std::filesystem::path& claims_file,
                         const std::filesystem::path& eligibility_file,
                         const std::filesystem::path& labs_file, const IngestOptions& options = {});

/// Inverse of ingest_book for canonical books: re-ingesting yields an identical book.
void write_book(const Book& book, const std::filesystem::path& claims_file,
                const std::filesystem::path& eligibility_file,
                const std::filesystem::path& labs_file, const IngestOptions& options = {});

void write_rejects(const std::vector<Reject>& rejects, const std::filesystem::path& path);

inline const std::vector<std::string>& claims_columns() {
  static const std::vector<std::string> cols = {
      "member_id",    "claim_id",   "encounter_date", "paid_date",     "allowed_amount",
      "paid_amount",  "care_setting", "is_pharmacy",  "is_capitation", "revenue_codes",
      "codes",        "lab_value",  "lab_interpretation"};
  return cols;
}
inline const std::vector<std::string>& eligibility_columns() {
  static const std::vector<std::string> cols = {"member_id",  "group_id", "birthday", "sex",
                                                "start_date", "end_date", "plan_type"};
  return cols;
}
inline const std::vector<std::string>& labs_columns() {
  static const std::vector<std::string> cols = {"member_id", "date", "loinc_code", "lab_value",
                                                "lab_interpretation"};
  return cols;
}

/// Sorts and merges coverages, orders claims and rebuilds term references.
void normalize(PatientRecord& record);

/// Copy of `record` holding only claims whose selected date is < cutoff, the
/// terms those claims reference, and standalone terms dated before cutoff.
PatientRecord filter_claims_by_date(const PatientRecord& record, Date cutoff, DateField field);

Money allowed_sum(const PatientRecord& record);

/// Member months with `group_id` inside `range`: one per calendar month whose
/// first day falls in the range and is covered.
int enrolled_months(const PatientRecord& record, std::string_view group_id, const DateRange& range);

/// Allowed amount of claims dated inside `range` while the member was covered by `group_id`.
Money group_allowed(const PatientRecord& record, std::string_view group_id, const DateRange& range,
                    DateField field);

}  // namespace uwml
