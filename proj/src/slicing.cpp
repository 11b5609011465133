#include "uwml/slicing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include "uwml/csv.hpp"

namespace uwml {

void SliceSpec::validate() const {
  if (blackout_months < 0) throw std::invalid_argument("blackout_months must be >= 0");
  if (experience_months < 1 || projection_months < 1) {
    throw std::invalid_argument("experience and projection periods need at least one month");
  }
}

RenewalTable read_renewal_table(const std::filesystem::path& path) {
  CsvReader in(path, {"group_id", "renewal_date"});
  RenewalTable table;
  while (in.next()) {
    const auto date = Date::try_parse(in["renewal_date"]);
    if (!in.well_formed() || !date) {
      throw std::runtime_error(path.string() + ": bad row at line " + std::to_string(in.line_no()));
    }
    table[std::string(in["group_id"])] = *date;
  }
  return table;
}

void write_renewal_table(const RenewalTable& table, const std::filesystem::path& path) {
  CsvWriter out(path, {"group_id", "renewal_date"});
  for (const auto& [g, d] : table) out.row({g, d.iso()});
}

GroupSlice make_slice(std::string group_id, Date renewal_date, const SliceSpec& spec) {
  GroupSlice s;
  s.group_id = std::move(group_id);
  s.renewal_date = renewal_date;
  const Date blackout_start = renewal_date.add_months(-spec.blackout_months);
  s.slice_date = blackout_start.add_days(-1);
  s.experience_start = blackout_start.add_months(-spec.experience_months);
  s.projection_end = renewal_date.add_months(spec.projection_months).add_days(-1);
  return s;
}

std::vector<GroupSlice> resolve_slices(const Book& book, const SliceSpec& spec,
                                       const RenewalTable* renewal_table) {
  spec.validate();
  std::set<std::string, std::less<>> groups;
  for (const auto& rec : book.records) {
    for (const auto& c : rec.coverages) groups.insert(c.group_id);
  }
  std::map<std::string, GroupSlice, std::less<>> slices;
  std::vector<std::string> missing;
  for (const auto& g : groups) {
    Date renewal = spec.renewal_date;
    if (spec.mode == SliceMode::dynamic) {
      auto it = renewal_table ? renewal_table->find(g) : RenewalTable::const_iterator{};
      if (!renewal_table || it == renewal_table->end()) {
        missing.push_back(g);
        continue;
      }
      renewal = it->second;
    }
    slices.emplace(g, make_slice(g, renewal, spec));
  }
  if (!missing.empty()) {
    std::string msg = "renewal table has no date for group(s):";
    for (const auto& g : missing) msg += " " + g;
    throw std::invalid_argument(msg);
  }
  for (const auto& rec : book.records) {
    for (const auto& c : rec.coverages) {
      auto& s = slices.at(c.group_id);
      if (c.contains(s.slice_date) &&
          (s.roster.empty() || s.roster.back() != rec.member_id)) {
        s.roster.push_back(rec.member_id);
      }
    }
  }
  std::vector<GroupSlice> out;
  out.reserve(slices.size());
  for (auto& [g, s] : slices) out.push_back(std::move(s));
  return out;
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::evaluate: return "evaluate";
  }
  return "";
}

std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& ratios) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainders{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double quota = static_cast<double>(n) * ratios[i];
    counts[i] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    // Rounded so that float noise (648 * 0.7 = 453.5999...) does not break ties.
    remainders[i] = std::round((quota - static_cast<double>(counts[i])) * 1e9) / 1e9;
    assigned += counts[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % 3]];
  return counts;
}

SplitAssignment split_groups(const std::vector<GroupSlice>& slices,
                             const std::array<double, 3>& ratios, std::uint64_t seed) {
  if (slices.size() < 3) throw std::invalid_argument("split_groups needs at least 3 groups");
  const double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9 || *std::min_element(ratios.begin(), ratios.end()) < 0.0) {
    throw std::invalid_argument("split ratios must be non-negative and sum to 1");
  }
  std::vector<std::string> ids;
  for (const auto& s : slices) ids.push_back(s.group_id);
  std::sort(ids.begin(), ids.end());
  // Fisher-Yates with rejection sampling: portable across standard libraries.
  std::mt19937_64 rng(seed);
  for (std::size_t i = ids.size() - 1; i > 0; --i) {
    const std::uint64_t bound = i + 1;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t draw;
    do draw = rng();
    while (draw >= limit);
    std::swap(ids[i], ids[draw % bound]);
  }
  const auto counts = apportion(ids.size(), ratios);
  SplitAssignment out;
  std::size_t k = 0;
  for (std::size_t part = 0; part < 3; ++part) {
    for (std::size_t j = 0; j < counts[part]; ++j) out[ids[k++]] = static_cast<Split>(part);
  }
  return out;
}

std::size_t split_overlap_count(const std::vector<GroupSlice>& slices, const SplitAssignment& split) {
  std::map<std::string_view, std::set<Split>> seen;
  for (const auto& s : slices) {
    auto it = split.find(s.group_id);
    if (it == split.end()) continue;
    for (const auto& m : s.roster) seen[m].insert(it->second);
  }
  return static_cast<std::size_t>(
      std::count_if(seen.begin(), seen.end(), [](const auto& kv) { return kv.second.size() > 1; }));
}

TargetSet training_targets(const Book& book, const std::vector<GroupSlice>& slices, DateField field) {
  TargetSet out;
  for (const auto& s : slices) {
    for (const auto& m : s.roster) {
      const PatientRecord* rec = book.find(m);
      MemberKey key{s.group_id, m};
      if (!rec || !rec->covered_by(s.group_id, s.renewal_date)) {
        out.dropped.emplace_back(std::move(key), "not enrolled at renewal");
        continue;
      }
      const int months = enrolled_months(*rec, s.group_id, s.projection());
      if (months == 0) {
        out.dropped.emplace_back(std::move(key), "no enrolled projection months");
        continue;
      }
      const double total = group_allowed(*rec, s.group_id, s.projection(), field).dollars();
      out.targets[key] = MemberTarget{std::max(0.0, total / months), months};
    }
  }
  return out;
}

}  // namespace uwml
