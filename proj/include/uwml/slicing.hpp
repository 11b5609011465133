#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "uwml/date.hpp"
#include "uwml/records.hpp"

namespace uwml {

enum class SliceMode { fixed, dynamic };

struct SliceSpec {
  SliceMode mode = SliceMode::fixed;
  Date renewal_date{2017, 1, 1};  // used in fixed mode
  int blackout_months = 4;
  int experience_months = 12;
  int projection_months = 12;

  /// Throws std::invalid_argument on negative blackout or empty windows.
  void validate() const;
};

/// Per-group windows. The experience period ends on the slice date, the last
/// day before the blackout; every window is inclusive at both ends.
struct GroupSlice {
  std::string group_id;
  Date renewal_date;
  Date slice_date;
  Date experience_start;
  Date projection_end;
  std::vector<std::string> roster;  // member_ids covered on slice_date, sorted

  DateRange experience() const { return {experience_start, slice_date}; }
  DateRange projection() const { return {renewal_date, projection_end}; }
  /// First censored day; only claims dated strictly before it are visible.
  Date censor_cutoff() const { return slice_date.add_days(1); }
};

using RenewalTable = std::map<std::string, Date, std::less<>>;

/// Reads a (group_id, renewal_date) CSV.
RenewalTable read_renewal_table(const std::filesystem::path& path);
void write_renewal_table(const RenewalTable& table, const std::filesystem::path& path);

/// Windows for one group without a roster.
GroupSlice make_slice(std::string group_id, Date renewal_date, const SliceSpec& spec);

/// One slice per group found in the book's coverages, ordered by group_id.
/// Dynamic mode throws std::invalid_argument naming every group missing from
/// the renewal table.
std::vector<GroupSlice> resolve_slices(const Book& book, const SliceSpec& spec,
                                       const RenewalTable* renewal_table = nullptr);

enum class Split { train, test, evaluate };
std::string_view to_string(Split s);

using SplitAssignment = std::map<std::string, Split, std::less<>>;

/// Largest-remainder apportionment of n items over the ratios (ties go to the
/// earlier slot).
std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& ratios);

/// Group-level split, deterministic under the seed. Requires >= 3 groups and
/// ratios summing to 1.
SplitAssignment split_groups(const std::vector<GroupSlice>& slices,
                             const std::array<double, 3>& ratios = {0.70, 0.20, 0.10},
                             std::uint64_t seed = 0);

/// Members appearing in rosters of groups assigned to different splits.
std::size_t split_overlap_count(const std::vector<GroupSlice>& slices, const SplitAssignment& split);

struct MemberKey {
  std::string group_id;
  std::string member_id;
  auto operator<=>(const MemberKey&) const = default;
};

struct MemberTarget {
  double per_month = 0.0;  // dollars per enrolled projection month, floored at 0
  int months = 0;
};

struct TargetSet {
  std::map<MemberKey, MemberTarget> targets;
  std::vector<std::pair<MemberKey, std::string>> dropped;
};

/// Projection-period allowed cost per enrolled month for each roster member.
/// Members not covered on the renewal date, or with no enrolled projection
/// month, are dropped with a reason.
TargetSet training_targets(const Book& book, const std::vector<GroupSlice>& slices,
                           DateField field = DateField::encounter);

}  // namespace uwml
