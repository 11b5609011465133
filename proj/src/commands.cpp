#include "uwml/commands.hpp"

#include <cmath>
#include <fstream>

#include <spdlog/spdlog.h>

#include "uwml/csv.hpp"
#include "uwml/eval.hpp"
#include "uwml/qa.hpp"

namespace uwml {

BookPaths BookPaths::in(const std::filesystem::path& dir) {
  return {dir / "claims.csv", dir / "eligibility.csv", dir / "labs.csv"};
}

namespace {

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw UsageError("cannot create output directory " + dir.string());
  const auto probe = dir / ".uwml_write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw UsageError("output directory is not writable: " + dir.string());
  }
  std::filesystem::remove(probe, ec);
}

void require_file(const std::filesystem::path& p, const std::string& what) {
  if (!std::filesystem::is_regular_file(p)) throw UsageError(what + " not found: " + p.string());
}

std::filesystem::path required_path(const KeyValueConfig& cfg, const std::string& key) {
  auto p = cfg.get_path(key);
  if (!p) throw UsageError("missing required setting " + key);
  return *p;
}

BookPaths book_paths(const KeyValueConfig& cfg) {
  const auto dir = cfg.get_path("paths.data");
  BookPaths b = dir ? BookPaths::in(*dir) : BookPaths{};
  if (auto p = cfg.get_path("paths.claims")) b.claims = *p;
  if (auto p = cfg.get_path("paths.eligibility")) b.eligibility = *p;
  if (auto p = cfg.get_path("paths.labs")) b.labs = *p;
  if (b.claims.empty() || b.eligibility.empty() || b.labs.empty()) {
    throw UsageError("book files not set; use paths.data or paths.claims/eligibility/labs");
  }
  return b;
}

SliceMode parse_mode(const std::string& s) {
  if (s == "fixed") return SliceMode::fixed;
  if (s == "dynamic") return SliceMode::dynamic;
  throw UsageError("slicing.mode must be fixed or dynamic, got '" + s + "'");
}

bool has_slicing_keys(const KeyValueConfig& cfg) {
  for (const char* k : {"slicing.mode", "slicing.renewal_date", "slicing.blackout_months"}) {
    if (cfg.has(k)) return true;
  }
  return false;
}

SliceSpec slicing(const KeyValueConfig& cfg, SliceSpec spec) {
  if (auto m = cfg.get("slicing.mode")) spec.mode = parse_mode(*m);
  spec.renewal_date = cfg.get_date("slicing.renewal_date", spec.renewal_date);
  spec.blackout_months = cfg.get_int("slicing.blackout_months", spec.blackout_months);
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return spec;
}

TrainConfig model_config(const KeyValueConfig& cfg, const std::string& prefix, TrainConfig c) {
  c.num_trees = cfg.get_int(prefix + ".num_trees", c.num_trees);
  c.learning_rate = cfg.get_double(prefix + ".learning_rate", c.learning_rate);
  c.max_leaves = cfg.get_int(prefix + ".max_leaves", c.max_leaves);
  c.min_data_in_leaf = cfg.get_int(prefix + ".min_data_in_leaf", c.min_data_in_leaf);
  c.max_bins = cfg.get_int(prefix + ".max_bins", c.max_bins);
  c.early_stopping_rounds = cfg.get_int(prefix + ".early_stopping_rounds", c.early_stopping_rounds);
  c.l2_reg = cfg.get_double(prefix + ".l2_reg", c.l2_reg);
  c.max_depth = cfg.get_int(prefix + ".max_depth", c.max_depth);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(prefix + ": " + e.what());
  }
  return c;
}

IngestResult load_book(const BookPaths& paths) {
  require_file(paths.claims, "claims file");
  require_file(paths.eligibility, "eligibility file");
  require_file(paths.labs, "labs file");
  auto result = ingest_book(paths.claims, paths.eligibility, paths.labs);
  if (!result.rejects.empty()) spdlog::warn("ingest rejected {} row(s)", result.rejects.size());
  spdlog::info("ingested {} members", result.book.records.size());
  return result;
}

std::vector<GroupSlice> slices_for(const Book& book, const SliceSpec& spec,
                                   const std::optional<std::filesystem::path>& renewal_path, RenewalTable& table) {
  if (renewal_path) {
    require_file(*renewal_path, "renewal table");
    table = read_renewal_table(*renewal_path);
  }
  if (spec.mode == SliceMode::dynamic && !renewal_path) throw UsageError("dynamic slicing needs a renewal table");
  return resolve_slices(book, spec, renewal_path ? &table : nullptr);
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

}  // namespace

// Builders --------------------------------------------------------------------------

SynthCommand synth_command(const KeyValueConfig& cfg) {
  SynthCommand cmd;
  cmd.out = required_path(cfg, "paths.out");
  auto& c = cmd.config;
  c.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<int>(c.seed)));
  c.n_groups = cfg.get_int("synth.n_groups", c.n_groups);
  const double mean = cfg.get_double("synth.group_size_mean", 0);
  if (mean > 0) c.group_size_mu = std::log(mean) - c.group_size_sigma * c.group_size_sigma / 2;
  c.horizon_start = cfg.get_date("synth.start", c.horizon_start);
  c.months_horizon = cfg.get_int("synth.months", c.months_horizon);
  c.monthly_drop = cfg.get_double("synth.monthly_drop", c.monthly_drop);
  c.monthly_add = cfg.get_double("synth.monthly_add", c.monthly_add);
  c.shock_rate = cfg.get_double("synth.shock_rate", c.shock_rate);
  c.reversal_rate = cfg.get_double("synth.reversal_rate", c.reversal_rate);
  c.annual_trend = cfg.get_double("synth.annual_trend", c.annual_trend);
  c.deterministic_costs = cfg.get_bool("synth.deterministic_costs", c.deterministic_costs);
  c.dynamic_renewals = cfg.get_bool("synth.dynamic_renewals", c.dynamic_renewals);
  c.fixed_renewal = cfg.get_date("synth.renewal_date", c.fixed_renewal);
  c.first_renewal = cfg.get_date("synth.first_renewal", c.first_renewal);
  c.renewal_months = cfg.get_int("synth.renewal_months", c.renewal_months);
  c.blackout_months = cfg.get_int("synth.blackout_months", c.blackout_months);
  c.concession_fraction = cfg.get_double("synth.concessions", c.concession_fraction);
  cfg.reject_unused();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return cmd;
}

TrainCommand train_command(const KeyValueConfig& cfg) {
  TrainCommand cmd;
  cmd.book = book_paths(cfg);
  cmd.out = required_path(cfg, "paths.out");
  cmd.renewal_table = cfg.get_path("paths.renewal_table");
  auto& p = cmd.pipeline;
  p.slicing = slicing(cfg, p.slicing);
  if (auto f = cfg.get("features.date_field")) {
    auto field = parse_date_field(*f);
    if (!field) throw UsageError("features.date_field must be encounter or paid");
    p.features.date_field = *field;
  }
  p.thresholds = cfg.get_list("features.thresholds", p.thresholds);
  if (p.thresholds.size() < 2) throw UsageError("features.thresholds needs at least two values");
  p.feature_cap = static_cast<std::size_t>(cfg.get_int("features.cap", static_cast<int>(p.feature_cap)));
  const auto ratios = cfg.get_list("split.ratios", {p.split_ratios.begin(), p.split_ratios.end()});
  if (ratios.size() != 3) throw UsageError("split.ratios needs three values");
  p.split_ratios = {ratios[0], ratios[1], ratios[2]};
  p.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<int>(p.seed)));
  p.member_model = model_config(cfg, "member", p.member_model);
  p.group_model = model_config(cfg, "group", p.group_model);
  p.member_model.seed = p.group_model.seed = p.seed;
  p.actuarial.pooling_level = cfg.get_double("actuarial.pooling_level", p.actuarial.pooling_level);
  p.actuarial.full_credibility_mm = cfg.get_double("actuarial.full_credibility_mm", p.actuarial.full_credibility_mm);
  p.min_training_groups =
      static_cast<std::size_t>(cfg.get_int("group.min_training_groups", static_cast<int>(p.min_training_groups)));
  cmd.qa_tolerance = cfg.get_double("qa.tolerance", cmd.qa_tolerance);
  cfg.reject_unused();
  return cmd;
}

PredictCommand predict_command(const KeyValueConfig& cfg) {
  PredictCommand cmd;
  cmd.book = book_paths(cfg);
  cmd.model_dir = required_path(cfg, "paths.model");
  cmd.out = required_path(cfg, "paths.out");
  cmd.renewal_table = cfg.get_path("paths.renewal_table");
  cmd.factor_tables = cfg.get_path("paths.factor_tables");
  cmd.baseline_trends = cfg.get_path("paths.baseline_trends");
  if (has_slicing_keys(cfg)) cmd.slicing = slicing(cfg, SliceSpec{});
  cfg.reject_unused();
  return cmd;
}

EvaluateCommand evaluate_command(const KeyValueConfig& cfg) {
  EvaluateCommand cmd;
  cmd.predictions = required_path(cfg, "paths.predictions");
  cmd.baseline = required_path(cfg, "paths.baseline");
  cmd.out = required_path(cfg, "paths.out");
  cmd.manifest = cfg.get_path("paths.manifest");
  cmd.truth = cfg.get_path("paths.truth");
  cmd.quintiles = cfg.get_bool("evaluate.quintiles", false);
  if (!cmd.manifest && !cmd.truth) throw UsageError("evaluate needs paths.manifest or paths.truth");
  cfg.reject_unused();
  return cmd;
}

ExplainCommand explain_command(const KeyValueConfig& cfg) {
  ExplainCommand cmd;
  cmd.book = book_paths(cfg);
  cmd.model_dir = required_path(cfg, "paths.model");
  cmd.out = required_path(cfg, "paths.out");
  cmd.renewal_table = cfg.get_path("paths.renewal_table");
  if (has_slicing_keys(cfg)) cmd.slicing = slicing(cfg, SliceSpec{});
  const int top = cfg.get_int("explain.top", static_cast<int>(cmd.top));
  if (top < 1) throw UsageError("explain.top must be positive");
  cmd.top = static_cast<std::size_t>(top);
  cfg.reject_unused();
  return cmd;
}

// Runners ---------------------------------------------------------------------------

int run_synth(const SynthCommand& cmd) {
  ensure_dir(cmd.out);
  const auto out = generate(cmd.config);
  write_synth(out, cmd.out, cmd.config.dynamic_renewals);
  spdlog::info("wrote {} members in {} groups to {}", out.book.records.size(), out.manifest.groups.size(),
               cmd.out.string());
  return kExitOk;
}

int run_train(const TrainCommand& cmd) {
  ensure_dir(cmd.out);
  const auto ingested = load_book(cmd.book);
  write_rejects(ingested.rejects, cmd.out / "rejects.csv");
  RenewalTable table;
  const auto slices = slices_for(ingested.book, cmd.pipeline.slicing, cmd.renewal_table, table);

  const auto trained = train_pipeline(ingested.book, slices, cmd.pipeline);
  trained.artifacts.save(cmd.out);
  write_json(trained.report.to_json(), cmd.out / "train_report.json");
  {
    CsvWriter sweep(cmd.out / "sweep_report.csv", {"threshold", "n_features", "test_mse", "best_iteration", "chosen"});
    for (const auto& r : trained.report.sweep) {
      sweep.row({format_double(r.threshold), std::to_string(r.n_features), format_double(r.test_mse),
                 std::to_string(r.best_iteration), r.chosen ? "1" : "0"});
    }
    CsvWriter split(cmd.out / "split.csv", {"group_id", "split"});
    for (const auto& [g, s] : trained.report.split) split.row({g, std::string(to_string(s))});
  }

  // QA gate: engine fields against an aggregation straight over the raw files.
  const auto predicted = predict_pipeline(ingested.book, slices, trained.artifacts);
  std::map<std::string, double> totals, pmpm;
  for (const auto& g : predicted.groups) {
    totals[g.group_id] = g.predicted_allowed_projection;
    pmpm[g.group_id] = g.predicted_pmpm;
  }
  const auto field = cmd.pipeline.features.date_field;
  const auto engine = compute_qa_fields(ingested.book, slices, &totals, field);
  auto oracle = aggregate_qa_from_files(cmd.book.claims, cmd.book.eligibility, slices, field);
  for (auto& q : oracle) {
    if (auto it = pmpm.find(q.group_id); it != pmpm.end()) {
      q.predicted_allowed_projection = it->second * 12.0 * q.n_members_end_experience;
    }
  }
  write_qa_fields(engine, cmd.out / "qa_fields.csv");
  const auto report = reconcile(engine, oracle, cmd.qa_tolerance);
  write_reconciliation(report, cmd.out / "reconciliation.csv");
  if (!report.pass) {
    spdlog::error("QA reconciliation failed for {} field(s); max relative difference {}", report.failures().size(),
                  report.max_rel_diff);
    return kExitGateFailure;
  }
  spdlog::info("QA reconciliation passed; max relative difference {}", report.max_rel_diff);
  return kExitOk;
}

int run_predict(const PredictCommand& cmd) {
  ensure_dir(cmd.out);
  const auto artifacts = PipelineArtifacts::load(cmd.model_dir);
  const auto ingested = load_book(cmd.book);
  SliceSpec spec = cmd.slicing.value_or(artifacts.slicing);
  if (cmd.renewal_table && !cmd.slicing) spec.mode = SliceMode::dynamic;
  RenewalTable table;
  const auto slices = slices_for(ingested.book, spec, cmd.renewal_table, table);
  FactorTables tables;
  if (cmd.factor_tables) {
    require_file(*cmd.factor_tables, "factor tables");
    tables = FactorTables::read(*cmd.factor_tables);
  }
  std::map<std::string, double> trends;
  if (cmd.baseline_trends) {
    require_file(*cmd.baseline_trends, "baseline trends");
    trends = read_baseline_trends(*cmd.baseline_trends);
  }
  std::vector<std::string> expected;
  for (const auto& [g, _] : table) expected.push_back(g);
  const auto result = predict_pipeline(ingested.book, slices, artifacts, tables,
                                       cmd.baseline_trends ? &trends : nullptr, expected);
  write_predictions(result.groups, cmd.out / "predictions.csv");
  write_baseline(result.baseline, cmd.out / "baseline.csv");
  write_skipped(result.skipped, cmd.out / "skipped.csv");
  spdlog::info("predicted {} groups, skipped {}", result.groups.size(), result.skipped.size());
  return kExitOk;
}

namespace {

struct Truth {
  double pmpm = 0;
  double projection_member_months = 0;
  std::optional<bool> concession;
};

std::map<std::string, Truth> read_truths(const EvaluateCommand& cmd) {
  std::map<std::string, Truth> out;
  if (cmd.manifest) {
    require_file(*cmd.manifest, "manifest");
    std::ifstream in(*cmd.manifest);
    const auto manifest = SynthManifest::from_json(nlohmann::json::parse(in));
    for (const auto& g : manifest.groups) {
      out[g.group_id] = Truth{g.projection_pmpm(), static_cast<double>(g.projection_member_months), g.concession};
    }
    return out;
  }
  require_file(*cmd.truth, "truth file");
  CsvReader in(*cmd.truth, {"group_id", "true_pmpm", "projection_member_months"});
  const bool labeled = std::count(in.header().begin(), in.header().end(), "concession") > 0;
  while (in.next()) {
    auto pmpm = parse_double(in["true_pmpm"]);
    auto mm = parse_double(in["projection_member_months"]);
    if (!in.well_formed() || !pmpm || !mm) {
      throw UsageError(cmd.truth->string() + ": bad row at line " + std::to_string(in.line_no()));
    }
    Truth t{*pmpm, *mm, std::nullopt};
    if (labeled) t.concession = in["concession"] == "1" || in["concession"] == "true";
    out[std::string(in["group_id"])] = t;
  }
  return out;
}

}  // namespace

int run_evaluate(const EvaluateCommand& cmd) {
  ensure_dir(cmd.out);
  require_file(cmd.predictions, "predictions");
  require_file(cmd.baseline, "baseline");
  const auto predictions = read_predictions(cmd.predictions);
  std::map<std::string, BaselinePrediction> baseline;
  for (auto& b : read_baseline(cmd.baseline)) baseline[b.group_id] = b;
  const auto truths = read_truths(cmd);

  std::vector<EvalGroup> groups;
  for (const auto& p : predictions) {
    auto t = truths.find(p.group_id);
    if (t == truths.end()) throw UsageError("no truth for predicted group " + p.group_id);
    EvalGroup g;
    g.group_id = p.group_id;
    g.true_pmpm = t->second.pmpm;
    g.model_pmpm = p.predicted_pmpm;
    if (auto b = baseline.find(p.group_id); b != baseline.end()) g.baseline_pmpm = b->second.pmpm;
    g.experience_pmpm = p.member_months_experience > 0 ? p.true_allowed_experience / p.member_months_experience : 0;
    g.projection_member_months = t->second.projection_member_months;
    g.members_end_experience = p.n_members_end_experience;
    g.concession_label = t->second.concession;
    groups.push_back(g);
  }
  const std::size_t usable = static_cast<std::size_t>(std::count_if(groups.begin(), groups.end(), [](const EvalGroup& g) {
    return g.experience_pmpm > 0 && g.baseline_pmpm > 0 && g.members_end_experience > 0 && g.projection_member_months > 0;
  }));
  if (usable < 10 && !cmd.quintiles) {
    spdlog::warn("only {} usable groups; a decile lift plot needs 10", usable);
    throw UsageError("fewer than 10 groups for the lift plot; rerun with the quintiles flag");
  }
  EvalReport report;
  try {
    report = evaluate(groups, cmd.quintiles);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  write_json(report.to_json(), cmd.out / "eval_report.json");
  write_lift_csv(report.lift, cmd.out / "lift.csv");
  spdlog::info("normalized MAE model {:.4f} baseline {:.4f}", report.model.normalized_mae,
               report.baseline.normalized_mae);
  return kExitOk;
}

int run_explain(const ExplainCommand& cmd) {
  const auto artifacts = PipelineArtifacts::load(cmd.model_dir);
  const auto ingested = load_book(cmd.book);
  SliceSpec spec = cmd.slicing.value_or(artifacts.slicing);
  if (cmd.renewal_table && !cmd.slicing) spec.mode = SliceMode::dynamic;
  RenewalTable table;
  const auto slices = slices_for(ingested.book, spec, cmd.renewal_table, table);
  if (cmd.out.has_parent_path()) ensure_dir(cmd.out.parent_path());
  const auto explanations = explain_groups(ingested.book, slices, artifacts);
  write_drivers(top_drivers(explanations, cmd.top), cmd.out);
  return kExitOk;
}

}  // namespace uwml
