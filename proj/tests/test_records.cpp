#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "uwml/qa.hpp"
#include "uwml/records.hpp"
#include "uwml/slicing.hpp"

using namespace uwml;

namespace {

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

const char* kClaimsHeader =
    "member_id,claim_id,encounter_date,paid_date,allowed_amount,paid_amount,care_setting,is_pharmacy,"
    "is_capitation,revenue_codes,codes,lab_value,lab_interpretation\n";
const char* kEligibilityHeader = "member_id,group_id,birthday,sex,start_date,end_date,plan_type\n";
const char* kLabsHeader = "member_id,date,loinc_code,lab_value,lab_interpretation\n";

IngestResult ingest_text(const oracle::TempDir& dir, const std::string& claims, const std::string& eligibility,
                         const std::string& labs = "") {
  write_file(dir / "claims.csv", kClaimsHeader + claims);
  write_file(dir / "eligibility.csv", kEligibilityHeader + eligibility);
  write_file(dir / "labs.csv", kLabsHeader + labs);
  return ingest_book(dir / "claims.csv", dir / "eligibility.csv", dir / "labs.csv");
}

bool has_reject(const IngestResult& r, std::string_view source, std::string_view reason) {
  return std::any_of(r.rejects.begin(), r.rejects.end(),
                     [&](const Reject& x) { return x.source == source && x.reason == reason; });
}

Claim claim(std::string id, Date enc, Date paid, double allowed) {
  Claim c;
  c.claim_id = std::move(id);
  c.encounter_date = enc;
  c.paid_date = paid;
  c.allowed_amount = c.paid_amount = Money::from_dollars(allowed);
  return c;
}

PatientRecord reversal_record() {
  PatientRecord r;
  r.member_id = "A";
  r.birthday = Date(1980, 1, 1);
  r.coverages.push_back({"G1", Date(2015, 1, 1), Date(2017, 12, 31), "PPO"});
  r.claims = {claim("1", Date(2016, 3, 1), Date(2016, 3, 20), 3000), claim("1R", Date(2016, 3, 1), Date(2016, 10, 15), -3000)};
  normalize(r);
  return r;
}

}  // namespace

TEST_CASE("ingest reshapes rows into one record per member") {
  oracle::TempDir dir("ingest_basic");
  const auto r = ingest_text(dir,
                             "A,c1,2016-01-05,2016-01-20,100.00,80.00,primary,0,0,,ICD10:E11.9|CPT:99213,,\n"
                             "A,c2,2016-02-05,2016-02-20,50.00,40.00,outpatient,0,0,0450,ICD10:I10,,\n"
                             "A,c3,2016-03-05,2016-03-20,30.00,30.00,ancillary,1,0,,NDC:00002143380,,\n",
                             "A,G1,1970-05-01,F,2015-01-01,2017-12-31,PPO\n");
  CHECK(r.rejects.empty());
  REQUIRE(r.book.records.size() == 1);
  const auto& rec = r.book.records.front();
  CHECK(rec.claims.size() == 3);
  CHECK(rec.coverages.size() == 1);
  CHECK(rec.terms.size() == 4);
  CHECK(rec.claims[1].revenue_codes == std::vector<std::string>{"0450"});
  CHECK(allowed_sum(rec).cents == 18000);
}

TEST_CASE("bad rows are rejected with a reason and never abort the ingest") {
  oracle::TempDir dir("ingest_rejects");
  const auto r = ingest_text(dir,
                             "A,c1,2016-01-05,2016-01-01,100.00,80.00,primary,0,0,,,,\n"   // date order
                             "A,c2,2016-01-05,2016-01-20,abc,80.00,primary,0,0,,,,\n"        // bad amount
                             "A,c3,2016-01-05,2016-01-20,50.00,80.00,primary,0,0,,,,\n"      // allowed below paid
                             "A,c4,2016-01-05,2016-01-20,50.00,40.00,spa,0,0,,,,\n"          // bad care setting
                             "Q,c5,2016-01-05,2016-01-20,50.00,40.00,primary,0,0,,,,\n"      // unknown member
                             "A,c6,2016-01-05,2016-01-20,50.00,40.00,primary,0,0,,XYZ:1,,\n" // bad code token
                             "A,c7,2016-01-05,2016-01-20,50.00,40.00,primary,0,0,,,,\n"
                             "A,c7,2016-01-05,2016-01-20,60.00,40.00,primary,0,0,,,,\n"      // conflicting duplicate
                             "A,c8,2016-01-05,2016-01-20,50.00,40.00,primary,0,0,,,,\n"
                             "A,c8,2016-01-05,2016-01-20,50.00,40.00,primary,0,0,,,,\n"      // identical duplicate
                             "A,c9,2016-01-05\n",                                            // malformed
                             "A,G1,1970-05-01,F,2015-01-01,2017-12-31,PPO\n"
                             "B,G1,1970-05-01,X,2015-01-01,2017-12-31,PPO\n"
                             "C,G1,1970-05-01,M,2016-01-01,2015-12-31,PPO\n",
                             "A,2016-02-01,4548-4,7.1,high\n"
                             "A,2016-02-01,4548-4,7.1,sky\n");
  CHECK(has_reject(r, "claims", "date order"));
  CHECK(has_reject(r, "claims", "bad amount"));
  CHECK(has_reject(r, "claims", "allowed below paid"));
  CHECK(has_reject(r, "claims", "bad care_setting"));
  CHECK(has_reject(r, "claims", "unknown member"));
  CHECK(has_reject(r, "claims", "bad code token"));
  CHECK(has_reject(r, "claims", "malformed row"));
  CHECK(has_reject(r, "eligibility", "bad sex"));
  CHECK(has_reject(r, "eligibility", "coverage end before start"));
  CHECK(has_reject(r, "labs", "bad lab_interpretation"));
  CHECK(std::count_if(r.rejects.begin(), r.rejects.end(),
                      [](const Reject& x) { return x.reason == "conflicting duplicate claim_id"; }) == 2);
  const auto date_order = std::find_if(r.rejects.begin(), r.rejects.end(),
                                       [](const Reject& x) { return x.reason == "date order"; });
  CHECK(date_order->line_no == 2);

  REQUIRE(r.book.records.size() == 1);
  const auto& rec = r.book.records.front();
  REQUIRE(rec.claims.size() == 1);
  CHECK(rec.claims.front().claim_id == "c8");
  CHECK(rec.terms.size() == 1);
  CHECK(rec.terms.front().lab_interpretation == LabInterpretation::high);
}

TEST_CASE("a reversal pair lands on one record and nets to zero") {
  oracle::TempDir dir("ingest_reversal");
  const auto r = ingest_text(dir,
                             "A,1,2016-03-01,2016-03-20,3000.00,3000.00,inpatient,0,0,,,,\n"
                             "A,1R,2016-03-01,2016-10-15,-3000.00,-3000.00,inpatient,0,0,,,,\n",
                             "A,G1,1980-01-01,M,2015-01-01,2017-12-31,PPO\n");
  CHECK(r.rejects.empty());
  REQUIRE(r.book.records.size() == 1);
  CHECK(r.book.records.front().claims.size() == 2);
  CHECK(allowed_sum(r.book.records.front()).cents == 0);
}

TEST_CASE("date filter views of a reversal") {
  const auto rec = reversal_record();
  CHECK(allowed_sum(filter_claims_by_date(rec, Date(2016, 9, 1), DateField::paid)).cents == 300000);
  CHECK(allowed_sum(filter_claims_by_date(rec, Date(2017, 1, 1), DateField::paid)).cents == 0);
  CHECK(filter_claims_by_date(rec, Date(2016, 1, 1), DateField::paid).claims.empty());
  // Both share an encounter date, so the encounter view never separates them.
  CHECK(allowed_sum(filter_claims_by_date(rec, Date(2016, 9, 1), DateField::encounter)).cents == 0);
  CHECK(rec.claims.size() == 2);  // original untouched
}

TEST_CASE("filtered sum equals the algebraic sum once the cutoff passes every claim") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> day(0, 700), amount(-50000, 500000);
  for (int trial = 0; trial < 20; ++trial) {
    PatientRecord r;
    r.member_id = "P";
    r.birthday = Date(1960, 1, 1);
    std::int64_t total = 0;
    for (int k = 0; k < 30; ++k) {
      const Date enc = Date(2015, 1, 1).add_days(day(rng));
      auto c = claim("k" + std::to_string(k), enc, enc.add_days(day(rng) / 10), 0);
      c.allowed_amount = c.paid_amount = Money{amount(rng)};
      total += c.allowed_amount.cents;
      r.claims.push_back(c);
    }
    normalize(r);
    CHECK(allowed_sum(filter_claims_by_date(r, Date(2030, 1, 1), DateField::paid)).cents == total);
  }
}

TEST_CASE("write_book and ingest_book round-trip") {
  Book book;
  auto a = reversal_record();
  a.terms.push_back({Date(2016, 3, 1), CodeSystem::ICD10, "E11.9", std::nullopt, std::nullopt});
  a.terms.push_back({Date(2016, 4, 1), CodeSystem::LOINC, "4548-4", 7.25, LabInterpretation::high});
  a.claims[0].term_refs = {0};
  a.claims[0].revenue_codes = {"0450", "0360"};
  a.claims[1].is_pharmacy = true;
  normalize(a);
  PatientRecord b;
  b.member_id = "B";
  b.birthday = Date(1990, 2, 28);
  b.sex = Sex::M;
  b.coverages = {{"G1", Date(2015, 1, 1), Date(2015, 6, 30), "HMO"}, {"G2", Date(2015, 7, 1), Date(2017, 12, 31), "EPO"}};
  auto cap = claim("cap1", Date(2016, 1, 1), Date(2016, 1, 1), 30);
  cap.is_capitation = true;
  b.claims = {cap};
  normalize(b);
  book.records = {a, b};

  oracle::TempDir dir("roundtrip");
  write_book(book, dir / "claims.csv", dir / "eligibility.csv", dir / "labs.csv");
  const auto back = ingest_book(dir / "claims.csv", dir / "eligibility.csv", dir / "labs.csv");
  CHECK(back.rejects.empty());
  CHECK(back.book == book);
}

TEST_CASE("member months count the first of each covered month") {
  PatientRecord r;
  r.member_id = "A";
  r.birthday = Date(1980, 1, 1);
  r.coverages = {{"G", Date(2016, 7, 1), Date(2016, 8, 31), "PPO"}};
  normalize(r);
  CHECK(enrolled_months(r, "G", {Date(2016, 1, 1), Date(2016, 12, 31)}) == 2);
  r.coverages = {{"G", Date(2016, 7, 2), Date(2016, 8, 31), "PPO"}};
  CHECK(enrolled_months(r, "G", {Date(2016, 1, 1), Date(2016, 12, 31)}) == 1);
  CHECK(enrolled_months(r, "other", {Date(2016, 1, 1), Date(2016, 12, 31)}) == 0);
}

TEST_CASE("QA fields count members, member months and allowed") {
  Book book;
  for (int i = 0; i < 100; ++i) {
    PatientRecord r;
    r.member_id = "M" + std::to_string(1000 + i);
    r.birthday = Date(1980, 1, 1);
    r.coverages = {{"G", Date(2015, 1, 1), Date(2017, 12, 31), "PPO"}};
    r.claims = {claim("c" + std::to_string(i), Date(2016, 2, 1), Date(2016, 2, 10), 10)};
    normalize(r);
    book.records.push_back(r);
  }
  const auto slices = resolve_slices(book, SliceSpec{});
  const std::map<std::string, double> predicted{{"G", 123456.0}};
  const auto qa = compute_qa_fields(book, slices, &predicted);
  REQUIRE(qa.size() == 1);
  CHECK(qa[0].n_members_end_experience == 100);
  CHECK(qa[0].member_months_experience == 1200);
  CHECK(qa[0].true_allowed_experience == doctest::Approx(1000.0));
  CHECK(qa[0].predicted_allowed_projection == 123456.0);
  CHECK_FALSE(qa[0].empty_roster);

  // Claim order inside a record does not matter.
  auto shuffled = book;
  for (auto& r : shuffled.records) {
    r.claims.push_back(claim("z" + r.member_id, Date(2016, 1, 1), Date(2016, 1, 2), 5));
    std::reverse(r.claims.begin(), r.claims.end());
  }
  auto sorted = shuffled;
  for (auto& r : sorted.records) normalize(r);
  const auto a = compute_qa_fields(shuffled, slices);
  const auto b = compute_qa_fields(sorted, slices);
  CHECK(a[0].true_allowed_experience == b[0].true_allowed_experience);
}

TEST_CASE("a group with nobody enrolled on the slice date is flagged") {
  Book book;
  PatientRecord r;
  r.member_id = "A";
  r.birthday = Date(1980, 1, 1);
  r.coverages = {{"G", Date(2015, 1, 1), Date(2016, 3, 31), "PPO"}};
  book.records.push_back(r);
  const auto qa = compute_qa_fields(book, resolve_slices(book, SliceSpec{}));
  REQUIRE(qa.size() == 1);
  CHECK(qa[0].empty_roster);
  CHECK(qa[0].n_members_end_experience == 0);
}

TEST_CASE("reconciliation tolerance is inclusive and names failing fields") {
  QaFields a;
  a.group_id = "G";
  a.n_members_end_experience = 100;
  a.member_months_experience = 1200;
  a.true_allowed_experience = 1000;
  a.predicted_allowed_projection = 5000;
  auto same = reconcile({a}, {a});
  CHECK(same.pass);
  CHECK(same.max_rel_diff == 0);

  CHECK(relative_difference(100, 105) == doctest::Approx(0.05 / 1.05));
  QaFields c = a, d = a;
  c.true_allowed_experience = 100;
  d.true_allowed_experience = 105;
  // |100 - 105| / 105 < 0.05, so this is inside the gate; 100 vs 110 is not.
  CHECK(reconcile({c}, {d}, 0.05).pass);
  d.true_allowed_experience = 110;
  const auto fail = reconcile({c}, {d}, 0.05);
  CHECK_FALSE(fail.pass);
  REQUIRE(fail.failures().size() == 1);
  CHECK(fail.failures()[0].group_id == "G");
  CHECK(fail.failures()[0].field == "true_allowed_experience");

  // Exactly on the boundary passes.
  QaFields e = a, f = a;
  e.member_months_experience = 95;
  f.member_months_experience = 100;
  CHECK(relative_difference(95, 100) == 0.05);
  CHECK(reconcile({e}, {f}, 0.05).pass);

  QaFields other = a;
  other.group_id = "H";
  const auto missing = reconcile({a}, {other});
  CHECK_FALSE(missing.pass);
  CHECK(std::any_of(missing.rows.begin(), missing.rows.end(), [](const auto& r) { return r.field == "missing"; }));
}
