#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "uwml/records.hpp"
#include "uwml/slicing.hpp"
#include "uwml/sparse.hpp"

namespace uwml {

enum class Window { m3, m6, y1, anytime };
inline constexpr std::array kWindows = {Window::m3, Window::m6, Window::y1, Window::anytime};
std::string_view to_string(Window w);

/// Inclusive date range of a look-back window ending on the slice date.
DateRange window_range(Window w, Date slice_date);

/// Prefix-truncation grouper standing in for licensed code hierarchies:
/// ICD10 "E11.9" -> "E11". Grouped codes land in a parallel "GROUPED" system
/// as "<SYSTEM>:<prefix>". Systems without an entry are not grouped.
struct GrouperConfig {
  std::map<CodeSystem, std::size_t> prefix_length = {
      {CodeSystem::ICD9, 3}, {CodeSystem::ICD10, 3}, {CodeSystem::CPT, 3}, {CodeSystem::NDC, 5}};

  std::optional<std::string> group(CodeSystem system, std::string_view code) const;
};

struct FeatureOptions {
  DateField date_field = DateField::encounter;
  GrouperConfig grouper;
};

/// Sparse named features of one member; absent entries are 0.
/// Names follow "<family>|<window>|<system>|<code-or-stat>" except the
/// demographic "age" and "sex_F", and "cost|<window>|<setting>" / "coverage|<window>|days".
struct FeatureVector {
  std::string row_id;
  std::map<std::string, double, std::less<>> entries;

  double get(std::string_view name) const {
    auto it = entries.find(name);
    return it == entries.end() ? 0.0 : it->second;
  }
};

/// Features of `record` as seen on the slice date. Claims are censored at the
/// slice cutoff first, so anything dated after the slice date is invisible.
FeatureVector extract_member_features(const PatientRecord& record, const GroupSlice& slice,
                                      const FeatureOptions& options = {});

// Lab statistics ----------------------------------------------------------

struct SlopeTest {
  double slope = 0.0;
  double p_value = 1.0;
};

/// Simple linear regression of y on x with a two-sided t-test on the slope.
/// A zero-residual fit with a non-zero slope reports p = 0; a degenerate x
/// or fewer than 3 points reports slope 0, p = 1.
SlopeTest slope_t_test(std::span<const double> x, std::span<const double> y);

enum class Trend { increasing, decreasing, flat };
std::string_view to_string(Trend t);

/// Trend from the slope test at the given significance level.
Trend classify_trend(std::span<const double> x, std::span<const double> y, double alpha = 0.05);

/// Number of consecutive interpretation changes in the sequence.
int interpretation_changes(std::span<const LabInterpretation> sequence);

/// Lab features of one member: interpretation log counts, value trend one-hot
/// and fluctuation flag, per window and LOINC code. `events` must be LOINC
/// term events sorted by date.
std::map<std::string, double, std::less<>> lab_features(std::span<const TermEvent> events,
                                                        const GroupSlice& slice);

// Feature selection --------------------------------------------------------

struct CatalogEntry {
  std::string name;
  double prevalence = 0.0;
  bool selected = false;
};

/// Feature names with training-set prevalence; entries sorted by name, which
/// is also the column order of projected rows.
struct FeatureCatalog {
  std::vector<CatalogEntry> entries;

  std::vector<std::string> selected_names() const;
  std::size_t selected_count() const;

  void write(const std::filesystem::path& path) const;
  static FeatureCatalog read(const std::filesystem::path& path);
};

/// Interned sparse feature rows for many members.
class FeatureTable {
 public:
  std::uint32_t intern(std::string_view name);
  void append(const FeatureVector& v);

  std::size_t rows() const { return row_ids_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& row_id(std::size_t r) const { return row_ids_[r]; }
  std::span<const std::uint32_t> cols(std::size_t r) const {
    return {col_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
  }
  std::span<const double> vals(std::size_t r) const {
    return {val_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
  }
  FeatureVector row(std::size_t r) const;
  std::size_t nnz() const { return val_.size(); }

  /// Triplet file: row_id, feature_name, value.
  void write_triplets(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
  std::vector<std::string> row_ids_;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::uint32_t> col_;
  std::vector<double> val_;
};

/// Extracts every roster member of every slice into one table. Rows are in
/// slice order, then roster order; `keys` receives the matching MemberKey.
/// Extraction runs in parallel; the resulting table is identical to the
/// serial order regardless of thread count.
FeatureTable build_feature_table(const Book& book, const std::vector<GroupSlice>& slices,
                                 const FeatureOptions& options, std::vector<MemberKey>& keys);

/// Prevalence = fraction of training rows with a non-zero value. Selected iff
/// prevalence >= threshold, capped to the `cap` most prevalent (ties by name).
FeatureCatalog fit_catalog(const std::vector<FeatureVector>& train, double threshold = 0.001,
                           std::size_t cap = 100000);
FeatureCatalog fit_catalog(const FeatureTable& table, std::span<const std::size_t> train_rows,
                           double threshold = 0.001, std::size_t cap = 100000);

/// Maps feature rows into the catalog's selected columns (lexicographic
/// order). Unknown features are dropped and each distinct name is logged once.
class FeatureProjector {
 public:
  explicit FeatureProjector(const FeatureCatalog& catalog);

  std::size_t width() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  std::vector<double> project(const FeatureVector& v);
  SparseMatrix project(const FeatureTable& table, std::span<const std::size_t> rows);

  /// Distinct feature names seen that are not in the catalog at all.
  std::size_t unseen_count() const { return unseen_.size(); }

 private:
  void note_unseen(std::string_view name);

  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> column_;
  std::set<std::string, std::less<>> known_;
  std::set<std::string, std::less<>> unseen_;
};

}  // namespace uwml
