#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "oracles.hpp"
#include "uwml/synth.hpp"

using namespace uwml;

namespace {

SynthConfig small_config(std::uint64_t seed = 7) {
  SynthConfig c;
  c.seed = seed;
  c.n_groups = 12;
  c.group_size_mu = std::log(40.0);
  return c;
}

// Projection-window allowed per group from the raw claims, independent of group_allowed.
std::map<std::string, std::int64_t> projection_cents(const SynthOutput& out) {
  std::map<std::string, std::int64_t> totals;
  for (const auto& rec : out.book.records) {
    const auto& cov = rec.coverages.front();
    const Date renewal = out.renewals.at(cov.group_id);
    const Date last = renewal.add_months(12).add_days(-1);
    for (const auto& c : rec.claims) {
      if (renewal <= c.encounter_date && c.encounter_date <= last) totals[cov.group_id] += c.allowed_amount.cents;
    }
  }
  return totals;
}

}  // namespace

TEST_CASE("fixed seed gives identical books and files") {
  const auto a = generate(small_config());
  const auto b = generate(small_config());
  CHECK(a.book == b.book);
  oracle::TempDir d1("synth_a"), d2("synth_b");
  write_synth(a, d1.path(), true);
  write_synth(b, d2.path(), true);
  for (const char* f : {"claims.csv", "eligibility.csv", "labs.csv", "manifest.json", "renewals.csv"}) {
    CHECK(oracle::slurp(d1 / f) == oracle::slurp(d2 / f));
  }
  const auto c = generate(small_config(8));
  CHECK_FALSE(a.book == c.book);
}

TEST_CASE("generated files ingest without rejects and round-trip") {
  auto cfg = small_config();
  cfg.concession_fraction = 0.5;
  const auto out = generate(cfg);
  oracle::TempDir dir("synth_ingest");
  write_synth(out, dir.path());
  const auto ingested = ingest_book(dir / "claims.csv", dir / "eligibility.csv", dir / "labs.csv");
  CHECK(ingested.rejects.empty());
  CHECK(ingested.book == out.book);

  std::size_t reversals = 0, labs = 0;
  for (const auto& rec : out.book.records) {
    for (const auto& c : rec.claims) reversals += c.allowed_amount.cents < 0;
    for (const auto& t : rec.terms) labs += t.system == CodeSystem::LOINC;
  }
  CHECK(reversals > 0);
  CHECK(labs > 0);
}

TEST_CASE("manifest group cost equals the generated projection claims") {
  const auto out = generate(small_config(3));
  const auto totals = projection_cents(out);
  for (const auto& g : out.manifest.groups) {
    CHECK(g.projection_allowed.cents == (totals.contains(g.group_id) ? totals.at(g.group_id) : 0));
  }
  const auto json = out.manifest.to_json();
  const auto back = SynthManifest::from_json(json);
  CHECK(back.to_json() == json);
}

TEST_CASE("without churn or reversals the manifest pmpm is total cost over member months") {
  auto cfg = small_config(5);
  cfg.monthly_add = 0;
  cfg.monthly_drop = 0;
  cfg.reversal_rate = 0;
  cfg.deterministic_costs = true;
  const auto out = generate(cfg);
  const auto totals = projection_cents(out);
  std::map<std::string, int> members;
  for (const auto& rec : out.book.records) {
    ++members[rec.coverages.front().group_id];
    CHECK(rec.coverages.front().start_date == cfg.horizon_start);
    for (const auto& c : rec.claims) CHECK(c.allowed_amount.cents > 0);
  }
  for (const auto& g : out.manifest.groups) {
    CHECK(g.projection_member_months == 12 * members.at(g.group_id));
    CHECK(g.members_at_slice == members.at(g.group_id));
    CHECK(g.projection_pmpm() == doctest::Approx(totals.at(g.group_id) / 100.0 / (12.0 * members.at(g.group_id)))
                                     .epsilon(1e-12));
  }
}

TEST_CASE("member annual costs are right skewed") {
  auto cfg = small_config(11);
  cfg.n_groups = 40;
  cfg.group_size_mu = std::log(250.0);
  cfg.monthly_add = cfg.monthly_drop = 0;
  const auto out = generate(cfg);
  REQUIRE(out.book.records.size() >= 8000);
  const DateRange year{Date{2016, 1, 1}, Date{2016, 12, 31}};
  std::vector<double> cost;
  for (const auto& rec : out.book.records) {
    double total = 0;
    for (const auto& c : rec.claims) {
      if (year.contains(c.encounter_date)) total += c.allowed_amount.dollars();
    }
    cost.push_back(total);
  }
  const double n = static_cast<double>(cost.size());
  const double mean = std::accumulate(cost.begin(), cost.end(), 0.0) / n;
  double m2 = 0, m3 = 0;
  for (double x : cost) {
    m2 += (x - mean) * (x - mean) / n;
    m3 += (x - mean) * (x - mean) * (x - mean) / n;
  }
  std::nth_element(cost.begin(), cost.begin() + static_cast<long>(cost.size() / 2), cost.end());
  const double median = cost[cost.size() / 2];
  CHECK(m3 / std::pow(m2, 1.5) > 0);
  CHECK(mean > median);
}

TEST_CASE("concession injection labels the requested fraction") {
  const auto population = build_population(small_config());
  const auto none = inject_concessions(population, 0.0, 1);
  CHECK(std::none_of(none.groups.begin(), none.groups.end(), [](const GroupTruth& g) { return g.concession; }));
  const auto all = inject_concessions(population, 1.0, 1);
  CHECK(std::all_of(all.groups.begin(), all.groups.end(), [](const GroupTruth& g) { return g.concession; }));
  const auto half = inject_concessions(population, 0.5, 1);
  CHECK(std::count_if(half.groups.begin(), half.groups.end(), [](const GroupTruth& g) { return g.concession; }) == 6);
  CHECK_THROWS_AS(inject_concessions(population, 1.5, 1), std::invalid_argument);
}

TEST_CASE("labeled groups realize a concession ratio below 0.95") {
  auto cfg = small_config(21);
  cfg.n_groups = 40;
  cfg.concession_fraction = 1.0;
  const auto out = generate(cfg);
  int below = 0;
  for (const auto& g : out.manifest.groups) below += g.concession_ratio() < 0.95;
  CHECK(below >= static_cast<int>(std::ceil(0.95 * cfg.n_groups)));
  // Care management shows up before the slice date, where features can see it.
  bool visible = false;
  for (const auto& rec : out.book.records) {
    for (std::size_t i = 0; i < rec.claims.size() && !visible; ++i) {
      for (auto ref : rec.claims[i].term_refs) visible = visible || rec.terms[ref].code == "99490";
    }
  }
  CHECK(visible);
}

TEST_CASE("invalid synth configs are rejected") {
  auto cfg = small_config();
  cfg.reversal_rate = 1.5;
  CHECK_THROWS_AS(generate(cfg), std::invalid_argument);
  cfg = small_config();
  cfg.conditions.front().visit_scale = 0;
  CHECK_THROWS_AS(generate(cfg), std::invalid_argument);
  cfg = small_config();
  cfg.n_groups = 0;
  CHECK_THROWS_AS(build_population(cfg), std::invalid_argument);
}
