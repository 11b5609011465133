#include "uwml/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "uwml/csv.hpp"

namespace uwml {

TrainConfig PipelineConfig::default_member_config() {
  TrainConfig c;
  c.num_trees = 400;
  c.learning_rate = 0.05;
  c.max_leaves = 31;
  c.min_data_in_leaf = 50;
  c.early_stopping_rounds = 30;
  c.objective = Objective::mse;
  return c;
}

TrainConfig PipelineConfig::default_group_config() {
  TrainConfig c;
  c.num_trees = 300;
  c.learning_rate = 0.05;
  c.max_leaves = 8;
  c.min_data_in_leaf = 10;
  c.early_stopping_rounds = 50;
  c.objective = Objective::mae;
  return c;
}

// Member stage ----------------------------------------------------------------------

std::size_t choose_threshold(const std::vector<SweepRow>& rows, double tolerance) {
  if (rows.empty()) throw std::invalid_argument("choose_threshold: no sweep rows");
  double best = rows.front().test_mse;
  for (const auto& r : rows) best = std::min(best, r.test_mse);
  std::size_t chosen = rows.size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].test_mse > best * (1.0 + tolerance)) continue;
    if (chosen == rows.size() || rows[i].threshold > rows[chosen].threshold) chosen = i;
  }
  return chosen;
}

namespace {

double mse(std::span<const double> pred, std::span<const double> y) {
  if (y.empty()) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (pred[i] - y[i]) * (pred[i] - y[i]);
  return s / static_cast<double>(y.size());
}

}  // namespace

SweepResult prevalence_sweep(const FeatureTable& table, std::span<const std::size_t> train_rows,
                             std::span<const double> train_y, std::span<const std::size_t> test_rows,
                             std::span<const double> test_y, const std::vector<double>& thresholds,
                             const TrainConfig& cfg, std::size_t feature_cap) {
  if (thresholds.size() < 2) throw std::invalid_argument("prevalence sweep needs at least two thresholds");
  if (train_rows.size() != train_y.size() || test_rows.size() != test_y.size()) {
    throw std::invalid_argument("prevalence sweep: rows and targets differ");
  }
  SweepResult result;
  std::vector<FeatureCatalog> catalogs;
  std::vector<GbdtModel> models;
  for (double threshold : thresholds) {
    auto catalog = fit_catalog(table, train_rows, threshold, feature_cap);
    FeatureProjector projector(catalog);
    const auto x_train = projector.project(table, train_rows);
    const auto x_test = projector.project(table, test_rows);
    auto model = fit(Dataset{&x_train, train_y}, Dataset{&x_test, test_y}, cfg, projector.names());
    SweepRow row;
    row.threshold = threshold;
    row.n_features = projector.width();
    row.test_mse = test_rows.empty() ? model.train_curve.back() : mse(model.predict(x_test), test_y);
    row.best_iteration = model.best_iteration;
    spdlog::info("sweep: threshold {} -> {} features, test mse {:.2f}, {} trees", threshold, row.n_features,
                 row.test_mse, row.best_iteration);
    result.rows.push_back(row);
    catalogs.push_back(std::move(catalog));
    models.push_back(std::move(model));
  }
  result.chosen = choose_threshold(result.rows);
  result.rows[result.chosen].chosen = true;
  result.catalog = std::move(catalogs[result.chosen]);
  result.model = std::move(models[result.chosen]);
  return result;
}

std::map<std::string, double> aggregate_members(const MemberPredictions& predictions,
                                                const std::vector<GroupSlice>& slices) {
  std::map<std::string, double> out;
  for (const auto& s : slices) {
    if (s.roster.empty()) {
      spdlog::warn("group {} has an empty roster on {}; excluded", s.group_id, s.slice_date.iso());
      continue;
    }
    double sum = 0;
    for (const auto& m : s.roster) {
      auto it = predictions.find(MemberKey{s.group_id, m});
      if (it == predictions.end()) {
        throw std::invalid_argument("no prediction for member " + m + " of group " + s.group_id);
      }
      sum += it->second;
    }
    out[s.group_id] = sum / static_cast<double>(s.roster.size());
  }
  return out;
}

// Group stage -----------------------------------------------------------------------

const std::vector<std::string>& GroupFeatureRow::names() {
  static const std::vector<std::string> n = {"mean_member_prediction", "mean_age",           "member_months_exp",
                                             "growth",                 "avg_coverage_len",   "late_cost_fraction",
                                             "high_cost_fraction"};
  return n;
}

std::vector<double> GroupFeatureRow::values() const {
  return {mean_member_prediction, mean_age,           member_months_exp, growth,
          avg_coverage_len,       late_cost_fraction, high_cost_fraction};
}

std::map<MemberKey, double> member_experience_costs(const Book& book, const std::vector<GroupSlice>& slices,
                                                    DateField field) {
  std::map<MemberKey, double> out;
  for (const auto& s : slices) {
    for (const auto& m : s.roster) {
      const auto* rec = book.find(m);
      if (!rec) continue;
      out[MemberKey{s.group_id, m}] = group_allowed(*rec, s.group_id, s.experience(), field).dollars();
    }
  }
  return out;
}

double cost_quantile(std::vector<double> costs, double q) {
  if (costs.empty()) return 0.0;
  if (!(q > 0 && q <= 1)) throw std::invalid_argument("cost_quantile: q must lie in (0, 1]");
  std::sort(costs.begin(), costs.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(costs.size())));
  return costs[std::max<std::size_t>(rank, 1) - 1];
}

namespace {

// Days the member has been continuously covered by the group up to and including the slice date.
double coverage_length(const PatientRecord& rec, const GroupSlice& s) {
  for (const auto& c : rec.coverages) {
    if (c.group_id == s.group_id && c.contains(s.slice_date)) {
      return static_cast<double>(days_between(c.start_date, s.slice_date) + 1);
    }
  }
  return 0.0;
}

}  // namespace

std::vector<GroupFeatureRow> build_group_features(const Book& book, const std::vector<GroupSlice>& slices,
                                                  const std::vector<GroupStats>& stats,
                                                  const std::map<std::string, double>& member_means,
                                                  double high_cost_cutoff, DateField field) {
  if (stats.size() != slices.size()) throw std::invalid_argument("build_group_features: stats not aligned");
  std::vector<GroupFeatureRow> out;
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const auto& s = slices[i];
    const auto& st = stats[i];
    auto mean = member_means.find(s.group_id);
    if (s.roster.empty() || mean == member_means.end() || st.experience.member_months <= 0) continue;
    GroupFeatureRow row;
    row.group_id = s.group_id;
    row.mean_member_prediction = mean->second;
    row.member_months_exp = st.experience.member_months;
    row.growth = (st.members_at_slice - st.members_at_experience_start) / row.member_months_exp;
    const double allowed = st.experience.allowed;
    row.late_cost_fraction = allowed > 0 ? std::clamp(st.late_allowed / allowed, 0.0, 1.0) : 0.0;
    double age = 0, coverage = 0;
    int high = 0;
    for (const auto& m : s.roster) {
      const auto* rec = book.find(m);
      if (!rec) throw std::invalid_argument("roster member " + m + " is not in the book");
      age += rec->age_at(s.slice_date);
      coverage += coverage_length(*rec, s);
      high += group_allowed(*rec, s.group_id, s.experience(), field).dollars() > high_cost_cutoff;
    }
    const double n = static_cast<double>(s.roster.size());
    row.mean_age = age / n;
    row.avg_coverage_len = coverage / n;
    row.high_cost_fraction = high / n;
    out.push_back(std::move(row));
  }
  return out;
}

nlohmann::json GroupModelReport::to_json() const {
  return {{"n_train", n_train},
          {"n_test", n_test},
          {"test_mae_adjusted", test_mae_adjusted},
          {"test_mae_unadjusted", test_mae_unadjusted},
          {"constant_target", constant_target}};
}

namespace {

SparseMatrix group_matrix(const std::vector<GroupFeatureRow>& rows) {
  SparseMatrix m;
  m.n_cols = GroupFeatureRow::names().size();
  for (const auto& r : rows) m.add_dense_row(r.values());
  return m;
}

}  // namespace

GroupModelFit fit_group_model(const std::vector<GroupFeatureRow>& train, std::span<const double> train_y,
                              const std::vector<GroupFeatureRow>& test, std::span<const double> test_y,
                              const TrainConfig& cfg, std::size_t min_groups) {
  if (train.size() != train_y.size() || test.size() != test_y.size()) {
    throw std::invalid_argument("fit_group_model: rows and targets differ");
  }
  if (train.size() < min_groups) {
    throw std::invalid_argument("group model needs at least " + std::to_string(min_groups) + " training groups, got " +
                                std::to_string(train.size()));
  }
  std::vector<double> train_r, test_r;
  for (std::size_t i = 0; i < train.size(); ++i) train_r.push_back(train_y[i] - train[i].mean_member_prediction);
  for (std::size_t i = 0; i < test.size(); ++i) test_r.push_back(test_y[i] - test[i].mean_member_prediction);
  const auto x_train = group_matrix(train);
  const auto x_test = group_matrix(test);
  GroupModelFit out;
  out.model = fit(Dataset{&x_train, train_r}, Dataset{&x_test, test_r}, cfg, GroupFeatureRow::names());
  out.report.n_train = train.size();
  out.report.n_test = test.size();
  out.report.constant_target = out.model.constant_target;
  if (out.report.constant_target) spdlog::warn("group model targets are constant; the adjustment is a constant");
  for (std::size_t i = 0; i < test.size(); ++i) {
    out.report.test_mae_adjusted += std::abs(adjusted_pmpm(out.model, test[i]) - test_y[i]);
    out.report.test_mae_unadjusted += std::abs(test[i].mean_member_prediction - test_y[i]);
  }
  if (!test.empty()) {
    out.report.test_mae_adjusted /= static_cast<double>(test.size());
    out.report.test_mae_unadjusted /= static_cast<double>(test.size());
  }
  return out;
}

double adjusted_pmpm(const GbdtModel& group_model, const GroupFeatureRow& row) {
  const auto v = row.values();
  return std::max(0.0, row.mean_member_prediction + group_model.predict(std::span<const double>(v)));
}

std::string_view to_string(Recommendation r) { return r == Recommendation::green ? "green" : "yellow_red"; }

RecommendationResult recommend(double model_trend, std::optional<double> baseline_trend) {
  if (!baseline_trend) return {Recommendation::yellow_red, "missing baseline trend"};
  if (!(*baseline_trend > 0)) return {Recommendation::yellow_red, "non-positive baseline trend"};
  if (model_trend / *baseline_trend < 1.0) return {Recommendation::green, ""};
  return {Recommendation::yellow_red, ""};
}

// Artifacts -------------------------------------------------------------------------

namespace {

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read " + path.string());
  return nlohmann::json::parse(in);
}

}  // namespace

void PipelineArtifacts::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["format"] = "uwml-pipeline";
  meta["version"] = 1;
  meta["slicing"] = {{"mode", slicing.mode == SliceMode::fixed ? "fixed" : "dynamic"},
                     {"renewal_date", slicing.renewal_date.iso()},
                     {"blackout_months", slicing.blackout_months},
                     {"experience_months", slicing.experience_months},
                     {"projection_months", slicing.projection_months}};
  meta["date_field"] = to_string(date_field);
  nlohmann::json grouper_json = nlohmann::json::object();
  for (const auto& [system, len] : grouper.prefix_length) grouper_json[std::string(to_string(system))] = len;
  meta["grouper"] = grouper_json;
  meta["threshold"] = threshold;
  meta["high_cost_cutoff"] = high_cost_cutoff;
  meta["late_months"] = late_months;
  write_json(meta, dir / "pipeline.json");
  catalog.write(dir / "catalog.csv");
  member_model.save(dir / "member_model.json");
  group_model.save(dir / "group_model.json");
  write_json(calibration.to_json(), dir / "calibration.json");
}

PipelineArtifacts PipelineArtifacts::load(const std::filesystem::path& dir) {
  const auto meta = read_json(dir / "pipeline.json");
  if (meta.value("format", "") != "uwml-pipeline") throw std::invalid_argument("not a pipeline directory: " + dir.string());
  PipelineArtifacts a;
  const auto& sl = meta.at("slicing");
  a.slicing.mode = sl.at("mode").get<std::string>() == "fixed" ? SliceMode::fixed : SliceMode::dynamic;
  a.slicing.renewal_date = Date::parse(sl.at("renewal_date").get<std::string>());
  a.slicing.blackout_months = sl.at("blackout_months").get<int>();
  a.slicing.experience_months = sl.at("experience_months").get<int>();
  a.slicing.projection_months = sl.at("projection_months").get<int>();
  a.date_field = parse_date_field(meta.at("date_field").get<std::string>()).value_or(DateField::encounter);
  a.grouper.prefix_length.clear();
  for (const auto& [name, len] : meta.at("grouper").items()) {
    auto system = parse_code_system(name);
    if (!system) throw std::invalid_argument("pipeline.json: unknown code system " + name);
    a.grouper.prefix_length[*system] = len.get<std::size_t>();
  }
  a.threshold = meta.at("threshold").get<double>();
  a.high_cost_cutoff = meta.at("high_cost_cutoff").get<double>();
  a.late_months = meta.at("late_months").get<int>();
  a.catalog = FeatureCatalog::read(dir / "catalog.csv");
  a.member_model = GbdtModel::load(dir / "member_model.json");
  a.group_model = GbdtModel::load(dir / "group_model.json");
  a.calibration = ActuarialCalibration::from_json(read_json(dir / "calibration.json"));
  if (a.catalog.selected_names() != a.member_model.feature_names) {
    throw std::invalid_argument("catalog and member model feature lists do not match");
  }
  if (a.group_model.feature_names != GroupFeatureRow::names()) {
    throw std::invalid_argument("group model features do not match the group feature layout");
  }
  return a;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json j;
  auto sweep_json = nlohmann::json::array();
  for (const auto& r : sweep) {
    sweep_json.push_back({{"threshold", r.threshold},
                          {"n_features", r.n_features},
                          {"test_mse", r.test_mse},
                          {"best_iteration", r.best_iteration},
                          {"chosen", r.chosen}});
  }
  j["sweep"] = std::move(sweep_json);
  j["group_model"] = group.to_json();
  j["n_train_members"] = n_train_members;
  j["n_test_members"] = n_test_members;
  j["n_dropped_members"] = dropped_members.size();
  std::map<std::string, int> counts;
  for (const auto& [_, s] : split) ++counts[std::string(to_string(s))];
  j["split_counts"] = counts;
  return j;
}

// End to end ------------------------------------------------------------------------

namespace {

struct MemberStage {
  FeatureTable table;
  std::vector<MemberKey> keys;
};

MemberStage extract(const Book& book, const std::vector<GroupSlice>& slices, const FeatureOptions& options) {
  MemberStage m;
  m.table = build_feature_table(book, slices, options, m.keys);
  return m;
}

MemberPredictions predict_members(const MemberStage& stage, const FeatureCatalog& catalog, const GbdtModel& model) {
  FeatureProjector projector(catalog);
  std::vector<std::size_t> rows(stage.table.rows());
  std::iota(rows.begin(), rows.end(), 0);
  const auto x = projector.project(stage.table, rows);
  const auto pred = model.predict(x);
  MemberPredictions out;
  for (std::size_t r = 0; r < rows.size(); ++r) out[stage.keys[r]] = pred[r];
  return out;
}

double true_pmpm(const GroupStats& st) { return st.projection.pmpm(); }

}  // namespace

TrainResult train_pipeline(const Book& book, const std::vector<GroupSlice>& slices, const PipelineConfig& cfg) {
  TrainResult out;
  auto& art = out.artifacts;
  auto& report = out.report;
  art.slicing = cfg.slicing;
  art.date_field = cfg.features.date_field;
  art.grouper = cfg.features.grouper;
  art.late_months = cfg.late_months;

  report.split = split_groups(slices, cfg.split_ratios, cfg.seed);
  const auto stats = compute_group_stats(book, slices, cfg.features.date_field, cfg.late_months);
  const auto stage = extract(book, slices, cfg.features);
  const auto targets = training_targets(book, slices, cfg.features.date_field);
  report.dropped_members = targets.dropped;

  std::vector<std::size_t> train_rows, test_rows;
  std::vector<double> train_y, test_y;
  for (std::size_t r = 0; r < stage.keys.size(); ++r) {
    auto t = targets.targets.find(stage.keys[r]);
    if (t == targets.targets.end()) continue;
    const Split s = report.split.at(stage.keys[r].group_id);
    if (s == Split::train) {
      train_rows.push_back(r);
      train_y.push_back(t->second.per_month);
    } else if (s == Split::test) {
      test_rows.push_back(r);
      test_y.push_back(t->second.per_month);
    }
  }
  report.n_train_members = train_rows.size();
  report.n_test_members = test_rows.size();
  if (train_rows.empty()) throw std::invalid_argument("no training members with projection targets");

  auto sweep = prevalence_sweep(stage.table, train_rows, train_y, test_rows, test_y, cfg.thresholds,
                                cfg.member_model, cfg.feature_cap);
  report.sweep = sweep.rows;
  art.threshold = sweep.rows[sweep.chosen].threshold;
  art.catalog = std::move(sweep.catalog);
  art.member_model = std::move(sweep.model);

  const auto member_pred = predict_members(stage, art.catalog, art.member_model);
  const auto means = aggregate_members(member_pred, slices);

  std::vector<double> train_costs;
  const auto costs = member_experience_costs(book, slices, cfg.features.date_field);
  for (const auto& [key, cost] : costs) {
    if (report.split.at(key.group_id) == Split::train) train_costs.push_back(cost);
  }
  art.high_cost_cutoff = cost_quantile(train_costs, cfg.high_cost_quantile);

  const auto features = build_group_features(book, slices, stats, means, art.high_cost_cutoff, cfg.features.date_field);
  std::map<std::string, std::size_t> slice_index;
  for (std::size_t i = 0; i < slices.size(); ++i) slice_index[slices[i].group_id] = i;
  std::vector<GroupFeatureRow> g_train, g_test;
  std::vector<double> y_train, y_test;
  for (const auto& row : features) {
    const auto& st = stats[slice_index.at(row.group_id)];
    if (st.projection.member_months <= 0) continue;  // no longer active
    const Split s = report.split.at(row.group_id);
    if (s == Split::train) {
      g_train.push_back(row);
      y_train.push_back(true_pmpm(st));
    } else if (s == Split::test) {
      g_test.push_back(row);
      y_test.push_back(true_pmpm(st));
    }
  }
  auto group_fit = fit_group_model(g_train, y_train, g_test, y_test, cfg.group_model, cfg.min_training_groups);
  art.group_model = std::move(group_fit.model);
  report.group = group_fit.report;

  std::vector<GroupSlice> train_slices;
  std::vector<GroupStats> train_stats;
  for (std::size_t i = 0; i < slices.size(); ++i) {
    if (report.split.at(slices[i].group_id) != Split::train) continue;
    train_slices.push_back(slices[i]);
    train_stats.push_back(stats[i]);
  }
  art.calibration = calibrate_actuarial(book, train_slices, train_stats, cfg.actuarial, cfg.features.date_field);
  return out;
}

std::map<std::string, double> read_baseline_trends(const std::filesystem::path& path) {
  CsvReader in(path, {"group_id", "baseline_trend"});
  std::map<std::string, double> out;
  while (in.next()) {
    auto v = parse_double(in["baseline_trend"]);
    if (!in.well_formed() || !v) throw std::runtime_error(path.string() + ": bad row at line " + std::to_string(in.line_no()));
    out[std::string(in["group_id"])] = *v;
  }
  return out;
}

PredictionResult predict_pipeline(const Book& book, const std::vector<GroupSlice>& slices,
                                  const PipelineArtifacts& artifacts, const FactorTables& tables,
                                  const std::map<std::string, double>* external_trends,
                                  const std::vector<std::string>& expected_groups) {
  PredictionResult out;
  const auto field = artifacts.date_field;
  const auto stats = compute_group_stats(book, slices, field, artifacts.late_months);
  const auto stage = extract(book, slices, artifacts.feature_options());
  out.members = predict_members(stage, artifacts.catalog, artifacts.member_model);
  const auto means = aggregate_members(out.members, slices);
  out.features = build_group_features(book, slices, stats, means, artifacts.high_cost_cutoff, field);
  out.baseline = actuarial_baseline(book, slices, stats, artifacts.calibration, tables);

  std::map<std::string, const GroupFeatureRow*> feature_of;
  for (const auto& f : out.features) feature_of[f.group_id] = &f;
  std::map<std::string, const BaselinePrediction*> baseline_of;
  for (const auto& b : out.baseline) baseline_of[b.group_id] = &b;

  std::set<std::string> present;
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const auto& s = slices[i];
    const auto& st = stats[i];
    present.insert(s.group_id);
    if (s.roster.empty()) {
      out.skipped.push_back({s.group_id, "empty roster on the slice date"});
      continue;
    }
    auto f = feature_of.find(s.group_id);
    if (f == feature_of.end() || st.experience.allowed <= 0) {
      out.skipped.push_back({s.group_id, "no positive experience pmpm"});
      continue;
    }
    GroupPrediction p;
    p.group_id = s.group_id;
    p.n_members_end_experience = static_cast<int>(s.roster.size());
    p.member_months_experience = st.experience.member_months;
    p.true_allowed_experience = st.experience.allowed;
    p.mean_member_prediction = f->second->mean_member_prediction;
    p.predicted_pmpm = adjusted_pmpm(artifacts.group_model, *f->second);
    p.predicted_allowed_projection = p.predicted_pmpm * 12.0 * p.n_members_end_experience;
    p.predicted_trend = p.predicted_pmpm / st.experience.pmpm();
    std::optional<double> baseline_trend;
    if (external_trends) {
      if (auto t = external_trends->find(s.group_id); t != external_trends->end()) baseline_trend = t->second;
    } else if (auto b = baseline_of.find(s.group_id); b != baseline_of.end()) {
      baseline_trend = b->second->trend;
    }
    const auto rec = recommend(p.predicted_trend, baseline_trend);
    p.recommendation = rec.value;
    p.reason = rec.reason;
    out.groups.push_back(std::move(p));
  }
  for (const auto& g : expected_groups) {
    if (!present.contains(g)) out.skipped.push_back({g, "absent from eligibility"});
  }
  return out;
}

void write_predictions(const std::vector<GroupPrediction>& predictions, const std::filesystem::path& path) {
  CsvWriter out(path, {"group_id", "n_members_end_experience", "member_months_experience", "true_allowed_experience",
                       "predicted_allowed_projection", "predicted_pmpm", "predicted_trend", "recommendation"});
  for (const auto& p : predictions) {
    out.row({p.group_id, std::to_string(p.n_members_end_experience), std::to_string(p.member_months_experience),
             Money::from_dollars(p.true_allowed_experience).str(), format_double(p.predicted_allowed_projection),
             format_double(p.predicted_pmpm), format_double(p.predicted_trend), std::string(to_string(p.recommendation))});
  }
}

void write_baseline(const std::vector<BaselinePrediction>& baseline, const std::filesystem::path& path) {
  CsvWriter out(path, {"group_id", "experience_pmpm", "er_pmpm", "mr_pmpm", "credibility", "baseline_pmpm",
                       "baseline_trend"});
  for (const auto& b : baseline) {
    out.row({b.group_id, format_double(b.experience_pmpm), format_double(b.er_pmpm), format_double(b.mr_pmpm),
             format_double(b.credibility), format_double(b.pmpm), format_double(b.trend)});
  }
}

void write_skipped(const std::vector<SkippedGroup>& skipped, const std::filesystem::path& path) {
  CsvWriter out(path, {"group_id", "reason"});
  for (const auto& s : skipped) out.row({s.group_id, s.reason});
}

namespace {

double field_double(const CsvReader& in, std::string_view column, const std::filesystem::path& path) {
  auto v = parse_double(in[column]);
  if (!v) {
    throw std::runtime_error(path.string() + ": bad " + std::string(column) + " at line " + std::to_string(in.line_no()));
  }
  return *v;
}

}  // namespace

std::vector<GroupPrediction> read_predictions(const std::filesystem::path& path) {
  CsvReader in(path, {"group_id", "n_members_end_experience", "member_months_experience", "true_allowed_experience",
                      "predicted_allowed_projection", "predicted_pmpm", "predicted_trend", "recommendation"});
  std::vector<GroupPrediction> out;
  while (in.next()) {
    if (!in.well_formed()) throw std::runtime_error(path.string() + ": malformed line " + std::to_string(in.line_no()));
    GroupPrediction p;
    p.group_id = std::string(in["group_id"]);
    p.n_members_end_experience = static_cast<int>(field_double(in, "n_members_end_experience", path));
    p.member_months_experience = static_cast<int>(field_double(in, "member_months_experience", path));
    p.true_allowed_experience = field_double(in, "true_allowed_experience", path);
    p.predicted_allowed_projection = field_double(in, "predicted_allowed_projection", path);
    p.predicted_pmpm = field_double(in, "predicted_pmpm", path);
    p.predicted_trend = field_double(in, "predicted_trend", path);
    p.recommendation = in["recommendation"] == "green" ? Recommendation::green : Recommendation::yellow_red;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<BaselinePrediction> read_baseline(const std::filesystem::path& path) {
  CsvReader in(path, {"group_id", "baseline_pmpm", "baseline_trend"});
  const bool full = std::count(in.header().begin(), in.header().end(), "experience_pmpm") > 0;
  std::vector<BaselinePrediction> out;
  while (in.next()) {
    if (!in.well_formed()) throw std::runtime_error(path.string() + ": malformed line " + std::to_string(in.line_no()));
    BaselinePrediction b;
    b.group_id = std::string(in["group_id"]);
    b.pmpm = field_double(in, "baseline_pmpm", path);
    b.trend = field_double(in, "baseline_trend", path);
    if (full) {
      b.experience_pmpm = field_double(in, "experience_pmpm", path);
      b.er_pmpm = field_double(in, "er_pmpm", path);
      b.mr_pmpm = field_double(in, "mr_pmpm", path);
      b.credibility = field_double(in, "credibility", path);
    }
    out.push_back(std::move(b));
  }
  return out;
}

// Explanations ----------------------------------------------------------------------

double GroupExplanation::total() const {
  double t = base_value;
  for (const auto& [_, v] : contributions) t += v;
  return t;
}

std::vector<GroupExplanation> explain_groups(const Book& book, const std::vector<GroupSlice>& slices,
                                             const PipelineArtifacts& artifacts) {
  const auto field = artifacts.date_field;
  const auto stats = compute_group_stats(book, slices, field, artifacts.late_months);
  const auto stage = extract(book, slices, artifacts.feature_options());
  FeatureProjector projector(artifacts.catalog);
  std::vector<std::size_t> rows(stage.table.rows());
  std::iota(rows.begin(), rows.end(), 0);
  const auto x = projector.project(stage.table, rows);
  const auto& names = projector.names();

  std::vector<ShapExplanation> member_shap(rows.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::size_t r = 0; r < rows.size(); ++r) member_shap[r] = shap(artifacts.member_model, x.row(r));

  MemberPredictions preds;
  for (std::size_t r = 0; r < rows.size(); ++r) preds[stage.keys[r]] = artifacts.member_model.predict(x.row(r));
  const auto means = aggregate_members(preds, slices);
  const auto features = build_group_features(book, slices, stats, means, artifacts.high_cost_cutoff, field);
  std::map<std::string, const GroupFeatureRow*> feature_of;
  for (const auto& f : features) feature_of[f.group_id] = &f;

  std::map<std::string, std::vector<std::size_t>> rows_of;
  for (std::size_t r = 0; r < rows.size(); ++r) rows_of[stage.keys[r].group_id].push_back(r);

  std::vector<GroupExplanation> out;
  for (const auto& s : slices) {
    auto f = feature_of.find(s.group_id);
    if (f == feature_of.end()) continue;
    GroupExplanation e;
    e.group_id = s.group_id;
    const auto& member_rows = rows_of.at(s.group_id);
    const double n = static_cast<double>(member_rows.size());
    std::vector<double> mean_phi(names.size(), 0.0);
    double member_base = 0;
    for (auto r : member_rows) {
      member_base += member_shap[r].base_value / n;
      for (std::size_t k = 0; k < names.size(); ++k) mean_phi[k] += member_shap[r].phi[k] / n;
    }
    for (std::size_t k = 0; k < names.size(); ++k) {
      if (mean_phi[k] != 0.0) e.contributions["member|" + names[k]] = mean_phi[k];
    }
    const auto v = f->second->values();
    const auto g = shap(artifacts.group_model, std::span<const double>(v));
    for (std::size_t k = 0; k < g.phi.size(); ++k) {
      if (g.phi[k] != 0.0) e.contributions["group|" + GroupFeatureRow::names()[k]] = g.phi[k];
    }
    e.base_value = member_base + g.base_value;
    e.predicted_pmpm = f->second->mean_member_prediction + artifacts.group_model.predict(std::span<const double>(v));
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Driver> top_drivers(const std::vector<GroupExplanation>& explanations, std::size_t n) {
  std::vector<Driver> out;
  for (const auto& e : explanations) {
    std::vector<std::pair<std::string, double>> items(e.contributions.begin(), e.contributions.end());
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return std::abs(a.second) > std::abs(b.second); });
    if (items.size() > n) items.resize(n);
    for (auto& [name, value] : items) out.push_back(Driver{e.group_id, name, value});
  }
  return out;
}

void write_drivers(const std::vector<Driver>& drivers, const std::filesystem::path& path) {
  CsvWriter out(path, {"group_id", "feature_name", "pmpm_dollars"});
  for (const auto& d : drivers) out.row({d.group_id, d.feature_name, format_double(d.pmpm_dollars)});
}

}  // namespace uwml
