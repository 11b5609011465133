#pragma once

#include <string>
#include <vector>

#include "uwml/records.hpp"
#include "uwml/slicing.hpp"

namespace uwml {

/// Dollar totals of one group over one period. Claims count while the member
/// is covered by the group on the claim's date.
struct PeriodTotals {
  double allowed = 0;
  double paid = 0;
  double medical_allowed = 0;  // neither pharmacy nor capitation
  double medical_paid = 0;
  double pharmacy_allowed = 0;
  double pharmacy_paid = 0;
  double capitation_allowed = 0;
  int member_months = 0;
  std::vector<double> member_totals;  // allowed per member with any enrollment, member_id order

  double pmpm() const { return member_months > 0 ? allowed / member_months : 0.0; }
};

struct GroupStats {
  std::string group_id;
  PeriodTotals experience;
  PeriodTotals projection;
  int members_at_experience_start = 0;
  int members_at_slice = 0;
  /// Allowed in the last `late_months` months of the experience period.
  double late_allowed = 0;
  /// Most common plan type on the slice date (ties by name); empty for an empty roster.
  std::string plan_type;

  /// Projection exposure used for totals: 12 months per member on the slice date.
  double projected_member_months() const { return 12.0 * members_at_slice; }
};

/// One GroupStats per slice, in slice order.
std::vector<GroupStats> compute_group_stats(const Book& book, const std::vector<GroupSlice>& slices,
                                            DateField field = DateField::encounter,
                                            int late_months = 4);

}  // namespace uwml
