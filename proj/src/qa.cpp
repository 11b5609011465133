#include "uwml/qa.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "uwml/csv.hpp"

namespace uwml {

std::vector<QaFields> compute_qa_fields(const Book& book, const std::vector<GroupSlice>& slices,
                                        const std::map<std::string, double>* predicted_totals,
                                        DateField field) {
  std::unordered_map<std::string_view, std::vector<const PatientRecord*>> members_of;
  for (const auto& rec : book.records) {
    std::string_view last;
    for (const auto& c : rec.coverages) {
      if (c.group_id == last) continue;
      members_of[c.group_id].push_back(&rec);
      last = c.group_id;
    }
  }
  std::vector<QaFields> out;
  out.reserve(slices.size());
  for (const auto& s : slices) {
    QaFields q;
    q.group_id = s.group_id;
    q.n_members_end_experience = static_cast<double>(s.roster.size());
    q.empty_roster = s.roster.empty();
    Money allowed;
    if (auto it = members_of.find(s.group_id); it != members_of.end()) {
      for (const PatientRecord* rec : it->second) {
        q.member_months_experience += enrolled_months(*rec, s.group_id, s.experience());
        allowed += group_allowed(*rec, s.group_id, s.experience(), field);
      }
    }
    q.true_allowed_experience = allowed.dollars();
    if (predicted_totals) {
      if (auto it = predicted_totals->find(s.group_id); it != predicted_totals->end()) {
        q.predicted_allowed_projection = it->second;
      }
    }
    if (q.empty_roster) {
      q.member_months_experience = 0;
      q.true_allowed_experience = 0;
      q.predicted_allowed_projection = 0;
    }
    out.push_back(std::move(q));
  }
  return out;
}

namespace {

// ISO dates compare correctly as strings; the raw aggregation relies on that
// rather than on the Date type.
struct RawSpan {
  std::string group_id;
  std::string start;
  std::string end;
};

std::vector<std::string> read_header(std::ifstream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");
  std::vector<std::string> cols;
  for (auto f : split(trim(line), ',')) cols.emplace_back(trim(f));
  return cols;
}

std::size_t column(const std::vector<std::string>& header, const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw std::runtime_error("raw QA: missing column " + name);
  return static_cast<std::size_t>(it - header.begin());
}

std::vector<std::string> month_starts(const std::string& first, const std::string& last) {
  int y = std::stoi(first.substr(0, 4));
  int m = std::stoi(first.substr(5, 2));
  if (first.substr(8, 2) != "01") {
    if (++m == 13) {
      m = 1;
      ++y;
    }
  }
  std::vector<std::string> out;
  while (true) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d-01", y, m);
    if (std::string(buf) > last) break;
    out.emplace_back(buf);
    if (++m == 13) {
      m = 1;
      ++y;
    }
  }
  return out;
}

}  // namespace

std::vector<QaFields> aggregate_qa_from_files(const std::filesystem::path& claims_file,
                                              const std::filesystem::path& eligibility_file,
                                              const std::vector<GroupSlice>& slices,
                                              DateField field) {
  std::unordered_map<std::string, std::vector<RawSpan>> spans_of_member;
  {
    std::ifstream in(eligibility_file);
    if (!in) throw std::runtime_error("cannot open " + eligibility_file.string());
    const auto header = read_header(in, eligibility_file);
    const auto c_member = column(header, "member_id"), c_group = column(header, "group_id"),
               c_start = column(header, "start_date"), c_end = column(header, "end_date");
    std::string line;
    while (std::getline(in, line)) {
      const auto f = split(trim(line), ',');
      if (f.size() != header.size()) continue;
      spans_of_member[std::string(f[c_member])].push_back(
          RawSpan{std::string(f[c_group]), std::string(f[c_start]), std::string(f[c_end])});
    }
  }
  auto covered = [&](const std::vector<RawSpan>& spans, const std::string& group,
                     const std::string& day) {
    for (const auto& sp : spans) {
      if (sp.group_id == group && sp.start <= day && day <= sp.end) return true;
    }
    return false;
  };

  std::map<std::string, const GroupSlice*> slice_of;
  std::map<std::string, QaFields> acc;
  for (const auto& s : slices) {
    slice_of[s.group_id] = &s;
    acc[s.group_id].group_id = s.group_id;
  }
  for (const auto& [member, spans] : spans_of_member) {
    std::set<std::string> groups;
    for (const auto& sp : spans) groups.insert(sp.group_id);
    for (const auto& g : groups) {
      auto it = slice_of.find(g);
      if (it == slice_of.end()) continue;
      const GroupSlice& s = *it->second;
      const auto slice_day = s.slice_date.iso();
      auto& q = acc[g];
      if (covered(spans, g, slice_day)) q.n_members_end_experience += 1;
      for (const auto& day : month_starts(s.experience_start.iso(), slice_day)) {
        if (covered(spans, g, day)) q.member_months_experience += 1;
      }
    }
  }
  {
    std::ifstream in(claims_file);
    if (!in) throw std::runtime_error("cannot open " + claims_file.string());
    const auto header = read_header(in, claims_file);
    const auto c_member = column(header, "member_id");
    const auto c_date = column(header, field == DateField::encounter ? "encounter_date" : "paid_date");
    const auto c_allowed = column(header, "allowed_amount");
    std::string line;
    while (std::getline(in, line)) {
      const auto f = split(trim(line), ',');
      if (f.size() != header.size()) continue;
      auto it = spans_of_member.find(std::string(f[c_member]));
      if (it == spans_of_member.end()) continue;
      const std::string day(f[c_date]);
      const double amount = std::stod(std::string(f[c_allowed]));
      std::set<std::string> credited;
      for (const auto& sp : it->second) {
        if (credited.contains(sp.group_id)) continue;
        auto sit = slice_of.find(sp.group_id);
        if (sit == slice_of.end()) continue;
        const GroupSlice& s = *sit->second;
        if (day < s.experience_start.iso() || day > s.slice_date.iso()) continue;
        if (covered(it->second, sp.group_id, day)) {
          acc[sp.group_id].true_allowed_experience += amount;
          credited.insert(sp.group_id);
        }
      }
    }
  }
  std::vector<QaFields> out;
  for (const auto& s : slices) {
    auto q = acc[s.group_id];
    q.empty_roster = q.n_members_end_experience == 0;
    if (q.empty_roster) {
      q.member_months_experience = 0;
      q.true_allowed_experience = 0;
    }
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<ReconciliationRow> ReconciliationReport::failures() const {
  std::vector<ReconciliationRow> out;
  std::copy_if(rows.begin(), rows.end(), std::back_inserter(out),
               [](const ReconciliationRow& r) { return !r.pass; });
  return out;
}

double relative_difference(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

ReconciliationReport reconcile(const std::vector<QaFields>& qa_a, const std::vector<QaFields>& qa_b,
                               double tolerance) {
  std::map<std::string, const QaFields*> a, b;
  for (const auto& q : qa_a) a[q.group_id] = &q;
  for (const auto& q : qa_b) b[q.group_id] = &q;
  std::set<std::string> ids;
  for (const auto& [g, _] : a) ids.insert(g);
  for (const auto& [g, _] : b) ids.insert(g);

  ReconciliationReport report;
  for (const auto& g : ids) {
    auto ia = a.find(g);
    auto ib = b.find(g);
    if (ia == a.end() || ib == b.end()) {
      report.rows.push_back(ReconciliationRow{g, "missing", 0, 0, 1.0, false});
      report.pass = false;
      continue;
    }
    const auto va = ia->second->values();
    const auto vb = ib->second->values();
    for (std::size_t i = 0; i < va.size(); ++i) {
      ReconciliationRow row{g, QaFields::kFieldNames[i], va[i], vb[i], relative_difference(va[i], vb[i])};
      // Tolerance boundary is inclusive; the epsilon absorbs representation error at exactly 5%.
      row.pass = row.rel_diff <= tolerance + 1e-12;
      report.max_rel_diff = std::max(report.max_rel_diff, row.rel_diff);
      report.pass = report.pass && row.pass;
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

void write_qa_fields(const std::vector<QaFields>& qa, const std::filesystem::path& path) {
  CsvWriter out(path, {"group_id", "n_members_end_experience", "member_months_experience",
                       "true_allowed_experience", "predicted_allowed_projection", "empty_roster"});
  for (const auto& q : qa) {
    out.row({q.group_id, format_double(q.n_members_end_experience),
             format_double(q.member_months_experience), format_double(q.true_allowed_experience),
             format_double(q.predicted_allowed_projection), q.empty_roster ? "1" : "0"});
  }
}

void write_reconciliation(const ReconciliationReport& report, const std::filesystem::path& path) {
  CsvWriter out(path, {"group_id", "field", "a", "b", "rel_diff", "pass"});
  for (const auto& r : report.rows) {
    out.row({r.group_id, r.field, format_double(r.a), format_double(r.b), format_double(r.rel_diff),
             r.pass ? "1" : "0"});
  }
}

}  // namespace uwml
