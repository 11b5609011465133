#include <doctest.h>

#include <cmath>
#include <random>

#include "uwml/features.hpp"
#include "uwml/synth.hpp"

using namespace uwml;

namespace {

const GroupSlice kSlice = make_slice("G", Date(2017, 1, 1), SliceSpec{});  // slice date 2016-08-31

PatientRecord person(Date birthday = Date(1986, 8, 1), Sex sex = Sex::F) {
  PatientRecord r;
  r.member_id = "A";
  r.birthday = birthday;
  r.sex = sex;
  return r;
}

void add_claim(PatientRecord& r, const std::string& id, Date d, double allowed, CareSetting setting,
               std::vector<std::pair<CodeSystem, std::string>> codes = {}) {
  Claim c;
  c.claim_id = id;
  c.encounter_date = c.paid_date = d;
  c.allowed_amount = c.paid_amount = Money::from_dollars(allowed);
  c.care_setting = setting;
  for (auto& [system, code] : codes) {
    c.term_refs.push_back(static_cast<std::uint32_t>(r.terms.size()));
    r.terms.push_back({d, system, code, std::nullopt, std::nullopt});
  }
  r.claims.push_back(c);
}

void add_lab(PatientRecord& r, Date d, double value, LabInterpretation interp, const std::string& code = "4548-4") {
  r.terms.push_back({d, CodeSystem::LOINC, code, value, interp});
}

}  // namespace

TEST_CASE("window ranges nest and end on the slice date") {
  const Date s = kSlice.slice_date;
  CHECK(window_range(Window::m3, s).first == Date(2016, 6, 1));
  CHECK(window_range(Window::m6, s).first == Date(2016, 3, 1));
  CHECK(window_range(Window::y1, s).first == Date(2015, 9, 1));
  for (Window w : kWindows) CHECK(window_range(w, s).last == s);
  CHECK(window_range(Window::anytime, s).first < window_range(Window::y1, s).first);
}

TEST_CASE("an empty history yields demographics only") {
  auto r = person(Date(1986, 8, 1), Sex::F);
  normalize(r);
  const auto f = extract_member_features(r, kSlice);
  CHECK(f.entries.size() == 2);
  CHECK(f.get("age") == 30);
  CHECK(f.get("sex_F") == 1);
  CHECK(f.get("coverage|y1|days") == 0);
}

TEST_CASE("code log counts nest across windows") {
  auto r = person();
  r.coverages = {{"G", Date(2016, 1, 1), Date(2017, 12, 31), "PPO"}};
  for (int i = 0; i < 3; ++i) {
    add_claim(r, "c" + std::to_string(i), Date(2016, 7, 1 + static_cast<unsigned>(i)), 50, CareSetting::primary,
              {{CodeSystem::ICD10, "E11.9"}});
  }
  normalize(r);
  const auto f = extract_member_features(r, kSlice);
  for (const char* w : {"m3", "m6", "y1", "anytime"}) {
    CHECK(f.get(std::string("logcount|") + w + "|ICD10|E11.9") == doctest::Approx(std::log(4.0)));
    CHECK(f.get(std::string("logcount|") + w + "|GROUPED|ICD10:E11") == doctest::Approx(std::log(4.0)));
  }
  CHECK(f.get("summary|anytime|ICD10|total_count") == 3);
  CHECK(f.get("summary|anytime|ICD10|unique_count") == 1);
  CHECK(f.get("coverage|y1|days") == 244);  // 2016-01-01 .. 2016-08-31
}

TEST_CASE("cost features add up across care settings") {
  auto r = person();
  add_claim(r, "o", Date(2016, 2, 1), 100, CareSetting::outpatient);
  add_claim(r, "i", Date(2016, 5, 1), 200, CareSetting::inpatient);
  normalize(r);
  const auto f = extract_member_features(r, kSlice);
  CHECK(f.get("cost|y1|total") == 300);
  CHECK(f.get("cost|y1|inpatient") == 200);
  CHECK(f.get("cost|y1|outpatient") == 100);
  CHECK(f.get("cost|m3|total") == 0);
}

TEST_CASE("window nesting and cost additivity hold on a synthetic book") {
  SynthConfig cfg;
  cfg.seed = 21;
  cfg.n_groups = 6;
  cfg.group_size_mu = std::log(30.0);
  const auto out = generate(cfg);
  const auto slices = resolve_slices(out.book, SliceSpec{});
  const std::array<std::string, 4> windows = {"m3", "m6", "y1", "anytime"};
  std::size_t members = 0;
  for (const auto& s : slices) {
    for (const auto& id : s.roster) {
      const auto f = extract_member_features(*out.book.find(id), s);
      ++members;
      for (const auto& [name, v] : f.entries) {
        if (name.rfind("logcount|", 0) == 0) {
          CHECK(v >= 0);
          const auto rest = name.substr(name.find('|', 9));
          for (std::size_t w = 0; w + 1 < windows.size(); ++w) {
            CHECK(f.get("logcount|" + windows[w] + rest) <= f.get("logcount|" + windows[w + 1] + rest));
          }
        }
      }
      for (const auto& w : windows) {
        double parts = 0;
        for (CareSetting cs : kCareSettings) parts += f.get("cost|" + w + "|" + std::string(to_string(cs)));
        CHECK(parts == doctest::Approx(f.get("cost|" + w + "|total")).epsilon(1e-9));
      }
    }
  }
  CHECK(members > 100);
}

TEST_CASE("slope test and lab trend") {
  const std::vector<double> x{0, 1, 2, 3, 4};
  const std::vector<double> up{1, 2, 3, 4, 5};
  const auto t = slope_t_test(x, up);
  CHECK(t.slope == doctest::Approx(1.0));
  CHECK(t.p_value == 0.0);
  CHECK(classify_trend(x, up) == Trend::increasing);
  const std::vector<double> down{5, 4.1, 2.9, 2.2, 0.8};
  CHECK(classify_trend(x, down) == Trend::decreasing);
  const std::vector<double> flat{1, 1, 1, 1};
  CHECK(classify_trend(std::span(x).first(4), flat) == Trend::flat);
  const std::vector<double> two{1, 9};
  CHECK(classify_trend(std::span(x).first(2), two) == Trend::flat);
  // Noisy series: the t statistic for 8 points with slope 0.1 and these residuals is not significant.
  const std::vector<double> xs{0, 1, 2, 3, 4, 5, 6, 7};
  const std::vector<double> noisy{5, 3, 6, 2, 7, 3, 6, 4};
  CHECK(classify_trend(xs, noisy) == Trend::flat);
}

TEST_CASE("slope p-value matches a closed-form t-test") {
  // OLS: slope 1.9, intercept 0.2, SSE 0.9, Sxx 10, so t = 1.9 / sqrt(0.3 / 10) with 3 df.
  const std::vector<double> x{0, 1, 2, 3, 4};
  const std::vector<double> y{0.5, 1.5, 4, 6.5, 7.5};
  const auto t = slope_t_test(x, y);
  CHECK(t.slope == doctest::Approx(1.9));
  // Two-sided p frozen from an independent Student-t CDF.
  CHECK(t.p_value == doctest::Approx(0.0016219944524).epsilon(1e-8));
}

TEST_CASE("lab interpretation counts, trend one-hot and fluctuation flag") {
  auto r = person();
  add_lab(r, Date(2016, 5, 1), 6.0, LabInterpretation::normal);
  add_lab(r, Date(2016, 6, 1), 7.0, LabInterpretation::high);
  add_lab(r, Date(2016, 7, 1), 8.0, LabInterpretation::normal);
  add_lab(r, Date(2016, 8, 1), 9.0, LabInterpretation::high);
  add_lab(r, Date(2016, 10, 1), 1.0, LabInterpretation::low);  // censored
  normalize(r);
  const auto f = extract_member_features(r, kSlice);
  CHECK(f.get("labinterp|y1|LOINC|4548-4:high") == doctest::Approx(std::log(3.0)));
  CHECK(f.get("labinterp|y1|LOINC|4548-4:normal") == doctest::Approx(std::log(3.0)));
  CHECK(f.get("labinterp|y1|LOINC|4548-4:low") == 0);
  CHECK(f.get("labtrend|y1|LOINC|4548-4:increasing") == 1);
  CHECK(f.get("labtrend|y1|LOINC|4548-4:flat") == 0);
  CHECK(f.get("labfluct|y1|LOINC|4548-4") == 1);
  CHECK(f.get("logcount|y1|LOINC|4548-4") == doctest::Approx(std::log(5.0)));

  const std::vector<LabInterpretation> seq{LabInterpretation::normal, LabInterpretation::high, LabInterpretation::normal,
                                           LabInterpretation::high};
  CHECK(interpretation_changes(seq) == 3);
  CHECK(interpretation_changes(std::span(seq).first(2)) == 1);
}

TEST_CASE("claims after the slice date never reach the features") {
  auto r = person();
  r.coverages = {{"G", Date(2015, 1, 1), Date(2017, 12, 31), "PPO"}};
  add_claim(r, "a", Date(2016, 8, 31), 80, CareSetting::primary, {{CodeSystem::CPT, "99213"}});
  normalize(r);
  const auto before = extract_member_features(r, kSlice);
  CHECK(before.get("cost|m3|total") == 80);  // the slice date itself is visible
  for (DateField field : {DateField::encounter, DateField::paid}) {
    auto marked = r;
    add_claim(marked, "z", Date(2016, 9, 1), 90000, CareSetting::inpatient, {{CodeSystem::ICD10, "Z99.9"}});
    marked.claims.back().revenue_codes = {"0999"};
    add_lab(marked, Date(2016, 9, 2), 15, LabInterpretation::high);
    normalize(marked);
    const FeatureOptions opt{field, {}};
    CHECK(extract_member_features(marked, kSlice, opt).entries == extract_member_features(r, kSlice, opt).entries);
  }
}

TEST_CASE("catalog prevalence, threshold and cap") {
  std::vector<FeatureVector> rows(2000);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].entries["age"] = 40;
    if (i == 0) rows[i].entries["rare"] = 1;
    if (i % 10 == 0) rows[i].entries["common"] = 1;
    if (i % 100 == 0) rows[i].entries["uncommon"] = 1;
  }
  const auto cat = fit_catalog(rows, 0.001);
  CHECK(cat.selected_names() == std::vector<std::string>{"age", "common", "uncommon"});
  CHECK(cat.entries.size() == 4);
  for (const auto& e : cat.entries) {
    if (e.name == "rare") CHECK(e.prevalence == 0.0005);
    CHECK(e.selected == (e.prevalence >= 0.001));
  }
  const auto capped = fit_catalog(rows, 0.0, 2);
  CHECK(capped.selected_names() == std::vector<std::string>{"age", "common"});

  std::size_t last = SIZE_MAX;
  for (double threshold : {0.3, 0.05, 0.005, 0.0001}) {
    const auto n = fit_catalog(rows, threshold).selected_count();
    CHECK(n >= (last == SIZE_MAX ? 0 : last));
    last = n;
  }
}

TEST_CASE("projection keeps catalog order and drops unseen features") {
  std::vector<FeatureVector> train(4);
  for (auto& v : train) {
    v.entries["b"] = 1;
    v.entries["a"] = 2;
  }
  train[0].entries["c"] = 3;
  const auto cat = fit_catalog(train, 0.5);
  FeatureProjector p(cat);
  CHECK(p.names() == std::vector<std::string>{"a", "b"});
  FeatureVector holdout;
  holdout.entries = {{"b", 5}, {"new", 7}, {"c", 9}};
  const auto row = p.project(holdout);
  CHECK(row == std::vector<double>{0, 5});
  CHECK(p.project(holdout) == row);
  CHECK(p.unseen_count() == 1);

  const auto path = std::filesystem::temp_directory_path() / "uwml_catalog_roundtrip.csv";
  cat.write(path);
  const auto back = FeatureCatalog::read(path);
  CHECK(back.selected_names() == cat.selected_names());
  CHECK(back.entries.size() == cat.entries.size());
  std::filesystem::remove(path);
}

TEST_CASE("feature table extraction is independent of thread scheduling") {
  SynthConfig cfg;
  cfg.seed = 5;
  cfg.n_groups = 5;
  cfg.group_size_mu = std::log(25.0);
  const auto out = generate(cfg);
  const auto slices = resolve_slices(out.book, SliceSpec{});
  std::vector<MemberKey> keys;
  const auto table = build_feature_table(out.book, slices, {}, keys);
  std::size_t r = 0;
  for (const auto& s : slices) {
    for (const auto& id : s.roster) {
      REQUIRE(r < table.rows());
      CHECK(keys[r].member_id == id);
      CHECK(table.row(r).entries == extract_member_features(*out.book.find(id), s).entries);
      ++r;
    }
  }
  CHECK(r == table.rows());
}
