#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "uwml/actuarial.hpp"
#include "uwml/synth.hpp"

using namespace uwml;

TEST_CASE("experience rate") {
  RatingFactors f;
  f.BC_p = 0;
  GroupExperience e{120000, 0, 0, 1200, 12, 0.2};
  CHECK(experience_rate(e, f) == 120000.0);

  e = {500000, 150000, 1, 1200, 12, 0.2};
  f.AT = 0.08;
  CHECK(experience_rate(e, f) == doctest::Approx(478000.0).epsilon(1e-12));

  // Linear in x_d through the first term only.
  f.BC_p = 10;
  const double base = experience_rate(e, f);
  f.x_d = 2;
  CHECK(experience_rate(e, f) - base == doctest::Approx(350000.0 * 1.08).epsilon(1e-12));

  e.mm = 0;
  CHECK_THROWS_AS(experience_rate(e, f), std::invalid_argument);
  e = {100, 200, 0, 10, 12, 0.2};
  CHECK_THROWS_AS(experience_rate(e, f), std::invalid_argument);  // TSC > TC
}

TEST_CASE("medical utilization factor") {
  CHECK(medical_utilization_factor(0.0) == 1.2);
  CHECK(medical_utilization_factor(1.0) == doctest::Approx(0.53919475694).epsilon(1e-10));
  for (double s = 0; s < 1.0; s += 0.05) CHECK(medical_utilization_factor(s + 0.05) < medical_utilization_factor(s));
}

TEST_CASE("manual rate") {
  RatingFactors f;
  f.BC_med = 300;
  const double s_unit = std::log(1.2) / 0.8;  // x_udm = 1
  CHECK(manual_rate({1200, 12, s_unit}, f) == doctest::Approx(360000.0).epsilon(1e-12));

  // Pharmacy utilization steps are left-closed.
  const auto table = StepTable::pharmacy_utilization_default();
  CHECK(table.lookup(0.0) == 1.10);
  CHECK(table.lookup(0.2) == 1.00);
  CHECK(table.lookup(0.59) == 0.90);
  CHECK(table.lookup(0.8) == 0.75);
  CHECK(table.lookup(1.0) == 0.75);
  RatingFactors ph;
  ph.BC_ph = 50;
  ph.AT_ph = 0.1;
  CHECK(manual_rate({100, 24, 0.5}, ph) == doctest::Approx(50 * 1.21 * 0.90 * 100).epsilon(1e-12));
}

TEST_CASE("blend and credibility") {
  CHECK(blend(100, 200, 1) == 100);
  CHECK(blend(100, 200, 0) == 200);
  CHECK(blend(100, 200, 0.25) == 175);
  CHECK_THROWS_AS(blend(100, 200, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(blend(100, 200, -0.1), std::invalid_argument);
  // Monotone toward ER when ER > MR.
  double last = blend(300, 100, 0);
  for (double c = 0.1; c <= 1.0; c += 0.1) {
    CHECK(blend(300, 100, c) > last);
    last = blend(300, 100, c);
  }

  CHECK(credibility(0) == 0);
  CHECK(credibility(12000) == 1);
  CHECK(credibility(50000) == 1);
  CHECK(credibility(3000) == doctest::Approx(0.5));
  CHECK(credibility(1000 * 6) == credibility(200 * 30));
  CHECK_THROWS_AS(credibility(-1), std::invalid_argument);
  double prev = 0;
  for (double mm = 0; mm < 15000; mm += 250) {
    CHECK(credibility(mm) >= prev);
    prev = credibility(mm);
  }
}

TEST_CASE("shock split") {
  const std::vector<double> totals{50000, 120000};
  const auto s = shock_split(totals, 100000);
  CHECK(s.TC == 170000);
  CHECK(s.TSC == 20000);
  CHECK(s.n_s == 1);
  const auto none = shock_split(std::vector<double>{10, 20}, 100000);
  CHECK(none.TSC == 0);
  CHECK(none.n_s == 0);
  const auto limit = shock_split(std::vector<double>{10, 20, 0}, 1e-9);
  CHECK(limit.TSC == doctest::Approx(30));
  CHECK(limit.n_s == 2);
}

TEST_CASE("rating factors are validated") {
  RatingFactors f;
  CHECK_NOTHROW(f.validate());
  f.x_gm = 0;
  CHECK_THROWS_AS(f.validate(), std::invalid_argument);
  f = {};
  f.x_p = -1;
  CHECK_THROWS_AS(f.validate(), std::invalid_argument);
  GroupExperience e{100, 0, 0, 10, 12, 1.5};
  CHECK_THROWS_AS(e.validate(), std::invalid_argument);
}

TEST_CASE("factor tables default to 1 and round-trip") {
  FactorTables t;
  t.set("geography", "CA", 1.15);
  t.set("industry", "retail", 0.95);
  CHECK(t.get("geography", "CA") == 1.15);
  CHECK(t.get("geography", "TX") == 1.0);
  CHECK(t.get("nothing", "x") == 1.0);
  oracle::TempDir dir("factors");
  t.write(dir / "factors.csv");
  const auto back = FactorTables::read(dir / "factors.csv");
  CHECK(back.get("geography", "CA") == 1.15);
  CHECK(back.get("industry", "retail") == 0.95);
}

TEST_CASE("age bands") {
  CHECK(age_band(0) == "0-17");
  CHECK(age_band(17) == "0-17");
  CHECK(age_band(45) == "45-54");
  CHECK(age_band(70) == "65+");
}

TEST_CASE("calibrated baseline on a synthetic book") {
  SynthConfig cfg;
  cfg.seed = 17;
  cfg.n_groups = 20;
  cfg.group_size_mu = std::log(40.0);
  const auto out = generate(cfg);
  const auto slices = resolve_slices(out.book, SliceSpec{});
  const auto stats = compute_group_stats(out.book, slices);
  const auto cal = calibrate_actuarial(out.book, slices, stats);
  CHECK(cal.factors.BC_med > 0);
  CHECK(ActuarialCalibration::from_json(cal.to_json()).to_json() == cal.to_json());

  const auto baseline = actuarial_baseline(out.book, slices, stats, cal);
  CHECK(baseline.size() == slices.size());
  for (const auto& b : baseline) {
    CHECK(b.credibility >= 0);
    CHECK(b.credibility <= 1);
    CHECK(b.pmpm == doctest::Approx(b.credibility * b.er_pmpm + (1 - b.credibility) * b.mr_pmpm));
    if (b.experience_pmpm > 0) CHECK(b.trend == doctest::Approx(b.pmpm / b.experience_pmpm));
  }

  // A medical geography factor (keyed by plan type) touches only the manual rate's medical term.
  FactorTables tables;
  for (const char* plan : {"HMO", "EPO", "PPO"}) tables.set("x_gm", plan, 2.0);
  const auto scaled = actuarial_baseline(out.book, slices, stats, cal, tables);
  for (std::size_t i = 0; i < baseline.size(); ++i) {
    CHECK(scaled[i].er_pmpm == baseline[i].er_pmpm);
    CHECK(scaled[i].mr_pmpm > baseline[i].mr_pmpm);
  }
}
