#include "uwml/records.hpp"

#include <algorithm>
#include <map>
#include <tuple>

#include "uwml/csv.hpp"

namespace uwml {

namespace {

template <typename Enum, std::size_t N>
std::optional<Enum> parse_enum(std::string_view s, const std::array<Enum, N>& values) {
  for (Enum v : values) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

std::optional<bool> parse_flag(std::string_view s) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  return std::nullopt;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.push_back(sep);
    out += parts[i];
  }
  return out;
}

struct ClaimDraft {
  std::string member_id;
  Claim claim;
  std::vector<TermEvent> terms;
  std::size_t line_no = 0;

  bool same_payload(const ClaimDraft& o) const {
    return member_id == o.member_id && claim == o.claim && terms == o.terms;
  }
};

struct PendingMember {
  PatientRecord record;
  std::vector<std::pair<Claim, std::vector<TermEvent>>> claims;
  std::vector<TermEvent> labs;
};

bool lab_less(const TermEvent& a, const TermEvent& b) {
  auto key = [](const TermEvent& t) {
    return std::tuple(t.date, t.code, t.lab_value.has_value(), t.lab_value.value_or(0.0),
                      t.lab_interpretation.has_value(),
                      t.lab_interpretation.value_or(LabInterpretation::normal));
  };
  return key(a) < key(b);
}

// Rebuilds `record.terms` from per-claim term lists plus standalone labs.
void assemble(PatientRecord& record, std::vector<std::pair<Claim, std::vector<TermEvent>>> claims,
              std::vector<TermEvent> labs) {
  std::stable_sort(claims.begin(), claims.end(), [](const auto& a, const auto& b) {
    return std::tie(a.first.encounter_date, a.first.paid_date, a.first.claim_id) <
           std::tie(b.first.encounter_date, b.first.paid_date, b.first.claim_id);
  });
  std::stable_sort(labs.begin(), labs.end(), lab_less);
  record.claims.clear();
  record.terms.clear();
  for (auto& [claim, terms] : claims) {
    claim.term_refs.clear();
    for (auto& t : terms) {
      claim.term_refs.push_back(static_cast<std::uint32_t>(record.terms.size()));
      record.terms.push_back(std::move(t));
    }
    record.claims.push_back(std::move(claim));
  }
  for (auto& t : labs) record.terms.push_back(std::move(t));
}

}  // namespace

std::string_view to_string(Sex s) { return s == Sex::F ? "F" : "M"; }

std::string_view to_string(CareSetting s) {
  switch (s) {
    case CareSetting::inpatient: return "inpatient";
    case CareSetting::outpatient: return "outpatient";
    case CareSetting::ancillary: return "ancillary";
    case CareSetting::emergency: return "emergency";
    case CareSetting::primary: return "primary";
    case CareSetting::specialty: return "specialty";
  }
  return "";
}

std::string_view to_string(CodeSystem s) {
  switch (s) {
    case CodeSystem::ICD9: return "ICD9";
    case CodeSystem::ICD10: return "ICD10";
    case CodeSystem::CPT: return "CPT";
    case CodeSystem::NDC: return "NDC";
    case CodeSystem::LOINC: return "LOINC";
    case CodeSystem::REV: return "REV";
  }
  return "";
}

std::string_view to_string(LabInterpretation s) {
  switch (s) {
    case LabInterpretation::high: return "high";
    case LabInterpretation::low: return "low";
    case LabInterpretation::abnormal: return "abnormal";
    case LabInterpretation::normal: return "normal";
  }
  return "";
}

std::string_view to_string(DateField f) { return f == DateField::encounter ? "encounter" : "paid"; }

std::optional<Sex> parse_sex(std::string_view s) {
  return parse_enum(s, std::array{Sex::F, Sex::M});
}
std::optional<CareSetting> parse_care_setting(std::string_view s) {
  return parse_enum(s, kCareSettings);
}
std::optional<CodeSystem> parse_code_system(std::string_view s) {
  return parse_enum(s, kCodeSystems);
}
std::optional<LabInterpretation> parse_lab_interpretation(std::string_view s) {
  return parse_enum(s, kLabInterpretations);
}
std::optional<DateField> parse_date_field(std::string_view s) {
  return parse_enum(s, std::array{DateField::encounter, DateField::paid});
}

bool PatientRecord::covered_by(std::string_view group_id, Date d) const {
  return std::any_of(coverages.begin(), coverages.end(), [&](const CoverageSpan& c) {
    return c.group_id == group_id && c.contains(d);
  });
}

bool PatientRecord::covered(Date d) const {
  return std::any_of(coverages.begin(), coverages.end(),
                     [&](const CoverageSpan& c) { return c.contains(d); });
}

int PatientRecord::age_at(Date d) const {
  int age = d.year() - birthday.year();
  if (std::pair(d.month(), d.day()) < std::pair(birthday.month(), birthday.day())) --age;
  return std::max(age, 0);
}

const PatientRecord* Book::find(std::string_view member_id) const {
  auto it = std::lower_bound(records.begin(), records.end(), member_id,
                             [](const PatientRecord& r, std::string_view id) { return r.member_id < id; });
  if (it == records.end() || it->member_id != member_id) return nullptr;
  return &*it;
}

void normalize(PatientRecord& record) {
  auto& cov = record.coverages;
  std::stable_sort(cov.begin(), cov.end(), [](const CoverageSpan& a, const CoverageSpan& b) {
    return std::tie(a.group_id, a.start_date) < std::tie(b.group_id, b.start_date);
  });
  std::vector<CoverageSpan> merged;
  for (auto& c : cov) {
    if (!merged.empty() && merged.back().group_id == c.group_id &&
        c.start_date <= merged.back().end_date.add_days(1)) {
      merged.back().end_date = std::max(merged.back().end_date, c.end_date);
    } else {
      merged.push_back(std::move(c));
    }
  }
  cov = std::move(merged);

  std::vector<std::pair<Claim, std::vector<TermEvent>>> claims;
  std::vector<bool> linked(record.terms.size(), false);
  for (auto& claim : record.claims) {
    std::vector<TermEvent> terms;
    for (auto ref : claim.term_refs) {
      terms.push_back(record.terms.at(ref));
      linked[ref] = true;
    }
    claims.emplace_back(std::move(claim), std::move(terms));
  }
  std::vector<TermEvent> labs;
  for (std::size_t i = 0; i < record.terms.size(); ++i) {
    if (!linked[i]) labs.push_back(record.terms[i]);
  }
  assemble(record, std::move(claims), std::move(labs));
}

IngestResult ingest_book(const std::filesystem::path& claims_file,
                         const std::filesystem::path& eligibility_file,
                         const std::filesystem::path& labs_file, const IngestOptions& options) {
  IngestResult result;
  std::map<std::string, PendingMember, std::less<>> members;
  auto reject = [&](std::string_view source, std::size_t line, std::string reason) {
    result.rejects.push_back(Reject{std::string(source), line, std::move(reason)});
  };

  {
    CsvReader in(eligibility_file, eligibility_columns(), options.separator);
    while (in.next()) {
      const auto line = in.line_no();
      if (!in.well_formed()) {
        reject("eligibility", line, "malformed row");
        continue;
      }
      const auto member_id = in["member_id"];
      const auto group_id = in["group_id"];
      const auto birthday = Date::try_parse(in["birthday"]);
      const auto sex = parse_sex(in["sex"]);
      const auto start = Date::try_parse(in["start_date"]);
      const auto end = Date::try_parse(in["end_date"]);
      if (member_id.empty() || group_id.empty()) {
        reject("eligibility", line, "missing identifier");
      } else if (!birthday) {
        reject("eligibility", line, "bad birthday");
      } else if (!sex) {
        reject("eligibility", line, "bad sex");
      } else if (!start || !end) {
        reject("eligibility", line, "bad coverage date");
      } else if (*end < *start) {
        reject("eligibility", line, "coverage end before start");
      } else {
        auto [it, inserted] = members.try_emplace(std::string(member_id));
        auto& rec = it->second.record;
        if (inserted) {
          rec.member_id = std::string(member_id);
          rec.birthday = *birthday;
          rec.sex = *sex;
        } else if (rec.birthday != *birthday || rec.sex != *sex) {
          reject("eligibility", line, "conflicting demographics");
          continue;
        }
        rec.coverages.push_back(
            CoverageSpan{std::string(group_id), *start, *end, std::string(in["plan_type"])});
      }
    }
  }

  {
    CsvReader in(claims_file, claims_columns(), options.separator);
    std::vector<ClaimDraft> drafts;
    while (in.next()) {
      const auto line = in.line_no();
      if (!in.well_formed()) {
        reject("claims", line, "malformed row");
        continue;
      }
      ClaimDraft d;
      d.line_no = line;
      d.member_id = std::string(in["member_id"]);
      d.claim.claim_id = std::string(in["claim_id"]);
      const auto encounter = Date::try_parse(in["encounter_date"]);
      const auto paid_date = Date::try_parse(in["paid_date"]);
      const auto allowed = Money::parse(in["allowed_amount"]);
      const auto paid = Money::parse(in["paid_amount"]);
      const auto setting = parse_care_setting(in["care_setting"]);
      const auto pharmacy = parse_flag(in["is_pharmacy"]);
      const auto capitation = parse_flag(in["is_capitation"]);
      if (d.member_id.empty() || d.claim.claim_id.empty()) {
        reject("claims", line, "missing identifier");
        continue;
      }
      if (!encounter || !paid_date) {
        reject("claims", line, "bad date");
        continue;
      }
      if (!allowed || !paid) {
        reject("claims", line, "bad amount");
        continue;
      }
      if (!setting) {
        reject("claims", line, "bad care_setting");
        continue;
      }
      if (!pharmacy || !capitation) {
        reject("claims", line, "bad flag");
        continue;
      }
      d.claim.encounter_date = *encounter;
      d.claim.paid_date = *paid_date;
      d.claim.allowed_amount = *allowed;
      d.claim.paid_amount = *paid;
      d.claim.care_setting = *setting;
      d.claim.is_pharmacy = *pharmacy;
      d.claim.is_capitation = *capitation;
      if (auto rev = in["revenue_codes"]; !rev.empty()) {
        for (auto code : split(rev, options.list_separator)) {
          d.claim.revenue_codes.emplace_back(trim(code));
        }
      }
      bool bad_token = false;
      int loinc_tokens = 0;
      if (auto codes = in["codes"]; !codes.empty()) {
        for (auto token : split(codes, options.list_separator)) {
          token = trim(token);
          const auto colon = token.find(':');
          const auto system = colon == std::string_view::npos
                                  ? std::nullopt
                                  : parse_code_system(token.substr(0, colon));
          if (!system || colon + 1 >= token.size()) {
            bad_token = true;
            break;
          }
          if (*system == CodeSystem::LOINC) ++loinc_tokens;
          d.terms.push_back(TermEvent{*encounter, *system, std::string(token.substr(colon + 1)),
                                      std::nullopt, std::nullopt});
        }
      }
      if (bad_token) {
        reject("claims", line, "bad code token");
        continue;
      }
      const auto lab_text = in["lab_value"];
      const auto interp_text = in["lab_interpretation"];
      std::optional<double> lab_value;
      std::optional<LabInterpretation> interp;
      if (!lab_text.empty() && !(lab_value = parse_double(lab_text))) {
        reject("claims", line, "bad lab_value");
        continue;
      }
      if (!interp_text.empty() && !(interp = parse_lab_interpretation(interp_text))) {
        reject("claims", line, "bad lab_interpretation");
        continue;
      }
      if ((lab_value || interp) && loinc_tokens != 1) {
        reject("claims", line, "lab result without a single LOINC code");
        continue;
      }
      for (auto& t : d.terms) {
        if (t.system == CodeSystem::LOINC) {
          t.lab_value = lab_value;
          t.lab_interpretation = interp;
        }
      }
      if (d.claim.paid_date < d.claim.encounter_date) {
        reject("claims", line, "date order");
        continue;
      }
      if (d.claim.allowed_amount.cents >= 0 && d.claim.paid_amount.cents >= 0 &&
          d.claim.allowed_amount < d.claim.paid_amount) {
        reject("claims", line, "allowed below paid");
        continue;
      }
      auto it = members.find(d.member_id);
      if (it == members.end()) {
        reject("claims", line, "unknown member");
        continue;
      }
      if (d.claim.encounter_date < it->second.record.birthday) {
        reject("claims", line, "before birthday");
        continue;
      }
      drafts.push_back(std::move(d));
    }

    std::map<std::string_view, std::vector<std::size_t>> by_id;
    for (std::size_t i = 0; i < drafts.size(); ++i) by_id[drafts[i].claim.claim_id].push_back(i);
    for (const auto& [id, idx] : by_id) {
      const bool consistent = std::all_of(idx.begin(), idx.end(), [&](std::size_t i) {
        return drafts[i].same_payload(drafts[idx.front()]);
      });
      if (!consistent) {
        for (auto i : idx) reject("claims", drafts[i].line_no, "conflicting duplicate claim_id");
        continue;
      }
      auto& d = drafts[idx.front()];
      members.find(d.member_id)->second.claims.emplace_back(std::move(d.claim), std::move(d.terms));
    }
  }

  {
    CsvReader in(labs_file, labs_columns(), options.separator);
    while (in.next()) {
      const auto line = in.line_no();
      if (!in.well_formed()) {
        reject("labs", line, "malformed row");
        continue;
      }
      const auto date = Date::try_parse(in["date"]);
      const auto code = in["loinc_code"];
      const auto value_text = in["lab_value"];
      const auto interp_text = in["lab_interpretation"];
      TermEvent t;
      t.system = CodeSystem::LOINC;
      if (!date) {
        reject("labs", line, "bad date");
        continue;
      }
      if (code.empty()) {
        reject("labs", line, "missing loinc_code");
        continue;
      }
      if (!value_text.empty() && !(t.lab_value = parse_double(value_text))) {
        reject("labs", line, "bad lab_value");
        continue;
      }
      if (!interp_text.empty() && !(t.lab_interpretation = parse_lab_interpretation(interp_text))) {
        reject("labs", line, "bad lab_interpretation");
        continue;
      }
      auto it = members.find(in["member_id"]);
      if (it == members.end()) {
        reject("labs", line, "unknown member");
        continue;
      }
      if (*date < it->second.record.birthday) {
        reject("labs", line, "before birthday");
        continue;
      }
      t.date = *date;
      t.code = std::string(code);
      it->second.labs.push_back(std::move(t));
    }
  }

  result.book.records.reserve(members.size());
  for (auto& [id, pending] : members) {
    auto& rec = pending.record;
    assemble(rec, std::move(pending.claims), std::move(pending.labs));
    normalize(rec);
    result.book.records.push_back(std::move(rec));
  }
  std::stable_sort(result.rejects.begin(), result.rejects.end(), [](const Reject& a, const Reject& b) {
    return std::tie(a.source, a.line_no) < std::tie(b.source, b.line_no);
  });
  return result;
}

void write_book(const Book& book, const std::filesystem::path& claims_file,
                const std::filesystem::path& eligibility_file,
                const std::filesystem::path& labs_file, const IngestOptions& options) {
  const char sep = options.separator;
  CsvWriter claims(claims_file, claims_columns(), sep);
  CsvWriter elig(eligibility_file, eligibility_columns(), sep);
  CsvWriter labs(labs_file, labs_columns(), sep);
  for (const auto& rec : book.records) {
    for (const auto& c : rec.coverages) {
      elig.row({rec.member_id, c.group_id, rec.birthday.iso(), std::string(to_string(rec.sex)),
                c.start_date.iso(), c.end_date.iso(), c.plan_type});
    }
    std::vector<bool> linked(rec.terms.size(), false);
    for (const auto& claim : rec.claims) {
      std::vector<std::string> codes;
      std::string lab_value, lab_interp;
      for (auto ref : claim.term_refs) {
        const auto& t = rec.terms.at(ref);
        linked[ref] = true;
        codes.push_back(std::string(to_string(t.system)) + ":" + t.code);
        if (t.system == CodeSystem::LOINC) {
          if (t.lab_value) lab_value = format_double(*t.lab_value);
          if (t.lab_interpretation) lab_interp = std::string(to_string(*t.lab_interpretation));
        }
      }
      claims.row({rec.member_id, claim.claim_id, claim.encounter_date.iso(), claim.paid_date.iso(),
                  claim.allowed_amount.str(), claim.paid_amount.str(),
                  std::string(to_string(claim.care_setting)), claim.is_pharmacy ? "1" : "0",
                  claim.is_capitation ? "1" : "0",
                  join(claim.revenue_codes, options.list_separator),
                  join(codes, options.list_separator), lab_value, lab_interp});
    }
    for (std::size_t i = 0; i < rec.terms.size(); ++i) {
      if (linked[i]) continue;
      const auto& t = rec.terms[i];
      labs.row({rec.member_id, t.date.iso(), t.code, t.lab_value ? format_double(*t.lab_value) : "",
                t.lab_interpretation ? std::string(to_string(*t.lab_interpretation)) : ""});
    }
  }
}

void write_rejects(const std::vector<Reject>& rejects, const std::filesystem::path& path) {
  CsvWriter out(path, {"source", "line_no", "reason"});
  for (const auto& r : rejects) out.row({r.source, std::to_string(r.line_no), r.reason});
}

PatientRecord filter_claims_by_date(const PatientRecord& record, Date cutoff, DateField field) {
  PatientRecord view;
  view.member_id = record.member_id;
  view.birthday = record.birthday;
  view.sex = record.sex;
  view.coverages = record.coverages;
  std::vector<bool> linked(record.terms.size(), false);
  for (const auto& claim : record.claims) {
    for (auto ref : claim.term_refs) linked[ref] = true;
    if (!(claim.date(field) < cutoff)) continue;
    Claim kept = claim;
    kept.term_refs.clear();
    for (auto ref : claim.term_refs) {
      kept.term_refs.push_back(static_cast<std::uint32_t>(view.terms.size()));
      view.terms.push_back(record.terms[ref]);
    }
    view.claims.push_back(std::move(kept));
  }
  for (std::size_t i = 0; i < record.terms.size(); ++i) {
    if (!linked[i] && record.terms[i].date < cutoff) view.terms.push_back(record.terms[i]);
  }
  return view;
}

Money allowed_sum(const PatientRecord& record) {
  Money total;
  for (const auto& c : record.claims) total += c.allowed_amount;
  return total;
}

int enrolled_months(const PatientRecord& record, std::string_view group_id, const DateRange& range) {
  if (range.last < range.first) return 0;
  Date m = range.first.first_of_month();
  if (m < range.first) m = m.add_months(1);
  int n = 0;
  for (; m <= range.last; m = m.add_months(1)) {
    if (record.covered_by(group_id, m)) ++n;
  }
  return n;
}

Money group_allowed(const PatientRecord& record, std::string_view group_id, const DateRange& range,
                    DateField field) {
  Money total;
  for (const auto& c : record.claims) {
    const Date d = c.date(field);
    if (range.contains(d) && record.covered_by(group_id, d)) total += c.allowed_amount;
  }
  return total;
}

}  // namespace uwml
