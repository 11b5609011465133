#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "uwml/pipeline.hpp"
#include "uwml/synth.hpp"

using namespace uwml;

namespace {

PatientRecord enrolled(std::string id, Date start, Date end, double monthly_cost) {
  PatientRecord r;
  r.member_id = std::move(id);
  r.birthday = Date(1976, 3, 1);
  r.coverages = {{"G", start, end, "PPO"}};
  if (monthly_cost > 0) {
    for (int m = 0; m < 12; ++m) {
      Claim c;
      c.claim_id = r.member_id + "-" + std::to_string(m);
      c.encounter_date = c.paid_date = Date(2015, 9, 15).add_months(m);
      c.allowed_amount = c.paid_amount = Money::from_dollars(monthly_cost);
      r.claims.push_back(c);
    }
  }
  normalize(r);
  return r;
}

struct SmallRun {
  SynthOutput book;
  std::vector<GroupSlice> slices;
  TrainResult trained;
};

const SmallRun& small_run() {
  static const SmallRun run = [] {
    SmallRun r;
    SynthConfig cfg;
    cfg.seed = 13;
    cfg.n_groups = 60;
    cfg.group_size_mu = std::log(50.0);
    cfg.concession_fraction = 0.3;
    r.book = generate(cfg);
    r.slices = resolve_slices(r.book.book, SliceSpec{});
    PipelineConfig pc;
    pc.min_training_groups = 20;
    r.trained = train_pipeline(r.book.book, r.slices, pc);
    return r;
  }();
  return run;
}

}  // namespace

TEST_CASE("sweep keeps the largest threshold on the plateau") {
  std::vector<SweepRow> rows(2);
  rows[0].threshold = 0.01;
  rows[1].threshold = 0.001;
  rows[0].test_mse = rows[1].test_mse = 50;
  CHECK(choose_threshold(rows) == 0);
  rows[0].test_mse = 50.4;  // within 1%
  CHECK(choose_threshold(rows) == 0);
  rows[0].test_mse = 51;
  CHECK(choose_threshold(rows) == 1);
  rows.resize(1);
  CHECK(choose_threshold(rows) == 0);
  CHECK_THROWS_AS(choose_threshold({}), std::invalid_argument);
}

TEST_CASE("member means per roster") {
  GroupSlice s;
  s.group_id = "G";
  s.roster = {"A", "B"};
  MemberPredictions p{{{"G", "A"}, 100}, {{"G", "B"}, 300}};
  CHECK(aggregate_members(p, {s}).at("G") == 200);
  std::reverse(s.roster.begin(), s.roster.end());
  CHECK(aggregate_members(p, {s}).at("G") == 200);
  s.roster = {"A"};
  CHECK(aggregate_members(p, {s}).at("G") == 100);
  s.roster.clear();
  CHECK(aggregate_members(p, {s}).empty());
  s.roster = {"A", "C"};
  CHECK_THROWS_AS(aggregate_members(p, {s}), std::invalid_argument);
}

TEST_CASE("nearest-rank cost quantile") {
  std::vector<double> v(10);
  std::iota(v.begin(), v.end(), 1.0);
  CHECK(cost_quantile(v, 0.9) == 9);
  CHECK(cost_quantile(v, 1.0) == 10);
  CHECK(cost_quantile(v, 0.05) == 1);
  CHECK(cost_quantile({}, 0.9) == 0);
  CHECK_THROWS_AS(cost_quantile(v, 0), std::invalid_argument);
}

TEST_CASE("group features: growth, late cost fraction and high-cost fraction") {
  Book book;
  for (int i = 0; i < 100; ++i) {
    book.records.push_back(enrolled("M" + std::to_string(100 + i), Date(2015, 1, 1), Date(2017, 12, 31), 100));
  }
  for (int i = 0; i < 10; ++i) {
    book.records.push_back(enrolled("N" + std::to_string(100 + i), Date(2016, 8, 31), Date(2017, 12, 31), 0));
  }
  const auto slices = resolve_slices(book, SliceSpec{});
  const auto stats = compute_group_stats(book, slices);
  const std::map<std::string, double> means{{"G", 250}};
  auto rows = build_group_features(book, slices, stats, means, 1e9);
  REQUIRE(rows.size() == 1);
  const auto& r = rows.front();
  CHECK(r.member_months_exp == 1200);
  CHECK(r.growth == doctest::Approx(10.0 / 1200));
  CHECK(r.late_cost_fraction == doctest::Approx(4.0 / 12));
  CHECK(r.high_cost_fraction == 0);
  CHECK(r.mean_member_prediction == 250);
  CHECK(r.values().size() == GroupFeatureRow::names().size());

  rows = build_group_features(book, slices, stats, means, 1000);  // every 1200-dollar member is high cost
  CHECK(rows.front().high_cost_fraction == doctest::Approx(100.0 / 110));
}

TEST_CASE("group adjustment model") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  auto make = [&](std::size_t n, bool shifted) {
    std::vector<GroupFeatureRow> rows(n);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& r = rows[i];
      r.group_id = "G" + std::to_string(i);
      r.mean_member_prediction = 200 + 300 * u(rng);
      r.mean_age = 30 + 20 * u(rng);
      r.member_months_exp = 100 + 2000 * u(rng);
      r.growth = 0.02 * u(rng) - 0.01;
      r.avg_coverage_len = 300 + 500 * u(rng);
      r.late_cost_fraction = u(rng);
      r.high_cost_fraction = 0.2 * u(rng);
      // Shrinking groups cost more than their members suggest.
      y[i] = shifted ? r.mean_member_prediction * (1 - 30 * r.growth) : r.mean_member_prediction;
    }
    return std::pair{rows, y};
  };

  auto [train, ty] = make(160, true);
  auto [test, vy] = make(40, true);
  const auto fit = fit_group_model(train, ty, test, vy, PipelineConfig::default_group_config());
  CHECK(fit.report.n_train == 160);
  CHECK(fit.report.test_mae_adjusted < 0.8 * fit.report.test_mae_unadjusted);

  auto [same_train, same_ty] = make(60, false);
  auto [same_test, same_vy] = make(20, false);
  const auto same = fit_group_model(same_train, same_ty, same_test, same_vy, PipelineConfig::default_group_config());
  CHECK(same.report.constant_target);
  CHECK(same.report.test_mae_adjusted == doctest::Approx(same.report.test_mae_unadjusted));
  for (const auto& r : same_test) CHECK(adjusted_pmpm(same.model, r) == doctest::Approx(r.mean_member_prediction));

  same_train.resize(29);
  same_ty.resize(29);
  CHECK_THROWS_AS(fit_group_model(same_train, same_ty, same_test, same_vy, PipelineConfig::default_group_config()),
                  std::invalid_argument);
}

TEST_CASE("stop-light rule") {
  CHECK(recommend(0.93, 1.0).value == Recommendation::green);
  CHECK(recommend(1.00, 1.0).value == Recommendation::yellow_red);
  CHECK(recommend(0.999, 1.0).value == Recommendation::green);
  CHECK(recommend(1.1, 1.2).value == Recommendation::green);
  const auto missing = recommend(0.9, std::nullopt);
  CHECK(missing.value == Recommendation::yellow_red);
  CHECK_FALSE(missing.reason.empty());
  CHECK(recommend(0.9, 0.0).value == Recommendation::yellow_red);
}

TEST_CASE("train and predict on a small synthetic book") {
  const auto& run = small_run();
  const auto& art = run.trained.artifacts;
  CHECK(run.trained.report.sweep.size() == 3);
  CHECK(std::count_if(run.trained.report.sweep.begin(), run.trained.report.sweep.end(),
                      [](const SweepRow& r) { return r.chosen; }) == 1);
  CHECK(art.catalog.selected_count() == art.member_model.feature_names.size());

  const auto pred = predict_pipeline(run.book.book, run.slices, art);
  CHECK(pred.groups.size() + pred.skipped.size() == run.slices.size());
  for (const auto& g : pred.groups) {
    CHECK(g.predicted_pmpm >= 0);
    CHECK(g.predicted_allowed_projection == g.predicted_pmpm * 12.0 * g.n_members_end_experience);
  }

  // Artifacts round-trip through disk and predict identically.
  oracle::TempDir dir("pipeline_artifacts");
  art.save(dir.path());
  const auto loaded = PipelineArtifacts::load(dir.path());
  const auto again = predict_pipeline(run.book.book, run.slices, loaded);
  REQUIRE(again.groups.size() == pred.groups.size());
  for (std::size_t i = 0; i < pred.groups.size(); ++i) CHECK(again.groups[i].predicted_pmpm == pred.groups[i].predicted_pmpm);

  write_predictions(pred.groups, dir / "predictions.csv");
  const auto read = read_predictions(dir / "predictions.csv");
  REQUIRE(read.size() == pred.groups.size());
  CHECK(read.front().group_id == pred.groups.front().group_id);
  CHECK(read.front().recommendation == pred.groups.front().recommendation);
  write_baseline(pred.baseline, dir / "baseline.csv");
  CHECK(read_baseline(dir / "baseline.csv").size() == pred.baseline.size());
}

TEST_CASE("group explanations add up to the group prediction") {
  const auto& run = small_run();
  const auto pred = predict_pipeline(run.book.book, run.slices, run.trained.artifacts);
  const auto explanations = explain_groups(run.book.book, run.slices, run.trained.artifacts);
  std::map<std::string, double> predicted;
  for (const auto& g : pred.groups) predicted[g.group_id] = g.predicted_pmpm;
  REQUIRE(!explanations.empty());
  for (const auto& e : explanations) {
    CHECK(std::abs(e.total() - e.predicted_pmpm) <= 1e-6);
    if (predicted.contains(e.group_id)) CHECK(predicted[e.group_id] == doctest::Approx(std::max(0.0, e.predicted_pmpm)));
  }
  const auto top = top_drivers(explanations, 3);
  CHECK(top.size() <= 3 * explanations.size());
  for (std::size_t i = 1; i < top.size(); ++i) {
    if (top[i].group_id == top[i - 1].group_id) CHECK(std::abs(top[i].pmpm_dollars) <= std::abs(top[i - 1].pmpm_dollars));
  }
}

TEST_CASE("too few training groups is an error") {
  SynthConfig cfg;
  cfg.seed = 2;
  cfg.n_groups = 12;
  cfg.group_size_mu = std::log(30.0);
  const auto out = generate(cfg);
  const auto slices = resolve_slices(out.book, SliceSpec{});
  CHECK_THROWS_AS(train_pipeline(out.book, slices, PipelineConfig{}), std::invalid_argument);
}
