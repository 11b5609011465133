#include "uwml/group_stats.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>

namespace uwml {

namespace {

void accumulate(const PatientRecord& rec, const std::string& group, const DateRange& range,
                DateField field, PeriodTotals& out) {
  const int months = enrolled_months(rec, group, range);
  out.member_months += months;
  double member_total = 0;
  bool touched = months > 0;
  for (const auto& c : rec.claims) {
    const Date d = c.date(field);
    if (!range.contains(d) || !rec.covered_by(group, d)) continue;
    touched = true;
    const double allowed = c.allowed_amount.dollars();
    const double paid = c.paid_amount.dollars();
    member_total += allowed;
    out.allowed += allowed;
    out.paid += paid;
    if (c.is_pharmacy) {
      out.pharmacy_allowed += allowed;
      out.pharmacy_paid += paid;
    } else if (c.is_capitation) {
      out.capitation_allowed += allowed;
    } else {
      out.medical_allowed += allowed;
      out.medical_paid += paid;
    }
  }
  if (touched) out.member_totals.push_back(member_total);
}

}  // namespace

std::vector<GroupStats> compute_group_stats(const Book& book, const std::vector<GroupSlice>& slices,
                                            DateField field, int late_months) {
  std::unordered_map<std::string_view, std::vector<const PatientRecord*>> members_of;
  for (const auto& rec : book.records) {
    std::string_view last;
    for (const auto& c : rec.coverages) {
      if (c.group_id == last) continue;
      members_of[c.group_id].push_back(&rec);
      last = c.group_id;
    }
  }
  std::vector<GroupStats> out(slices.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(slices.size()); ++i) {
    const GroupSlice& s = slices[static_cast<std::size_t>(i)];
    GroupStats& g = out[static_cast<std::size_t>(i)];
    g.group_id = s.group_id;
    const DateRange late{s.censor_cutoff().add_months(-late_months), s.slice_date};
    std::map<std::string, int> plan_count;
    auto it = members_of.find(s.group_id);
    if (it == members_of.end()) continue;
    for (const PatientRecord* rec : it->second) {
      accumulate(*rec, s.group_id, s.experience(), field, g.experience);
      accumulate(*rec, s.group_id, s.projection(), field, g.projection);
      if (rec->covered_by(s.group_id, s.experience_start)) ++g.members_at_experience_start;
      g.late_allowed += group_allowed(*rec, s.group_id, late, field).dollars();
      for (const auto& c : rec->coverages) {
        if (c.group_id == s.group_id && c.contains(s.slice_date)) {
          ++g.members_at_slice;
          ++plan_count[c.plan_type];
          break;
        }
      }
    }
    int best = 0;
    for (const auto& [plan, n] : plan_count) {
      if (n > best) {
        best = n;
        g.plan_type = plan;
      }
    }
  }
  return out;
}

}  // namespace uwml
