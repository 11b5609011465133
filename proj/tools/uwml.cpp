// Command-line entry point: synth, train, predict, evaluate, explain.

#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <omp.h>
#include <spdlog/spdlog.h>

#include "uwml/commands.hpp"

namespace {

struct Flag {
  CLI::Option* option;
  std::string key;
  bool is_switch;
};

// Flags that write dotted config keys; explicit flags override the config file.
class FlagSet {
 public:
  explicit FlagSet(CLI::App* app) : app_(app) {}

  FlagSet& opt(const std::string& names, const std::string& key, const std::string& help) {
    auto* o = app_->add_option(names, storage_[key], help);
    flags_.push_back({o, key, false});
    return *this;
  }
  FlagSet& sw(const std::string& names, const std::string& key, const std::string& help) {
    auto* o = app_->add_flag(names, help);
    flags_.push_back({o, key, true});
    return *this;
  }
  void apply(uwml::KeyValueConfig& cfg) const {
    for (const auto& f : flags_) {
      if (f.option->count() == 0) continue;
      cfg.set(f.key, f.is_switch ? "true" : storage_.at(f.key));
    }
  }

 private:
  CLI::App* app_;
  std::map<std::string, std::string> storage_;
  std::vector<Flag> flags_;
};

void book_flags(FlagSet& f) {
  f.opt("--data", "paths.data", "directory holding claims.csv, eligibility.csv and labs.csv")
      .opt("--claims", "paths.claims", "claims CSV")
      .opt("--eligibility", "paths.eligibility", "eligibility CSV")
      .opt("--labs", "paths.labs", "labs CSV");
}

void slicing_flags(FlagSet& f) {
  f.opt("--mode", "slicing.mode", "fixed or dynamic")
      .opt("--renewal-date", "slicing.renewal_date", "renewal date for fixed slicing (YYYY-MM-DD)")
      .opt("--blackout", "slicing.blackout_months", "blackout months")
      .opt("--renewal-table", "paths.renewal_table", "CSV of group_id, renewal_date");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Group health cost projection: synthetic books, two-stage models, actuarial baseline"};
  app.require_subcommand(1);
  std::string config_path, log_level = "info";
  int threads = 0;
  app.add_option("--config", config_path, "key = value settings file");
  app.add_option("--threads", threads, "worker thread cap (0 = runtime default)")->check(CLI::NonNegativeNumber);
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  auto* synth = app.add_subcommand("synth", "generate a synthetic book of business");
  FlagSet synth_flags(synth);
  synth_flags.opt("--out", "paths.out", "output directory")
      .opt("--seed", "seed", "random seed")
      .opt("--groups", "synth.n_groups", "number of groups")
      .opt("--group-size", "synth.group_size_mean", "mean group size")
      .opt("--months", "synth.months", "horizon length in months")
      .opt("--concessions", "synth.concessions", "fraction of groups with an injected concession")
      .opt("--renewal-date", "synth.renewal_date", "fixed renewal date")
      .sw("--dynamic-renewals", "synth.dynamic_renewals", "spread renewals over a year and write renewals.csv")
      .opt("--reversal-rate", "synth.reversal_rate", "probability a claim is later reversed")
      .sw("--deterministic-costs", "synth.deterministic_costs", "use mean claim amounts");

  auto* train = app.add_subcommand("train", "fit the member and group models and calibrate the baseline");
  FlagSet train_flags(train);
  book_flags(train_flags);
  slicing_flags(train_flags);
  train_flags.opt("--out", "paths.out", "artifact directory")
      .opt("--seed", "seed", "split and model seed")
      .opt("--thresholds", "features.thresholds", "comma-separated prevalence thresholds")
      .opt("--date-field", "features.date_field", "encounter or paid");

  auto* predict = app.add_subcommand("predict", "score groups up for renewal");
  FlagSet predict_flags(predict);
  book_flags(predict_flags);
  slicing_flags(predict_flags);
  predict_flags.opt("--model", "paths.model", "artifact directory from train")
      .opt("--out", "paths.out", "output directory")
      .opt("--factor-tables", "paths.factor_tables", "CSV of table_name, key, factor")
      .opt("--baseline-trends", "paths.baseline_trends", "CSV of group_id, baseline_trend");

  auto* evaluate = app.add_subcommand("evaluate", "score predictions against realized costs");
  FlagSet evaluate_flags(evaluate);
  evaluate_flags.opt("--predictions", "paths.predictions", "predictions.csv from predict")
      .opt("--baseline", "paths.baseline", "baseline.csv from predict")
      .opt("--manifest", "paths.manifest", "synth manifest.json with group truths")
      .opt("--truth", "paths.truth", "CSV of group_id, true_pmpm, projection_member_months[, concession]")
      .opt("--out", "paths.out", "output directory")
      .sw("--quintiles", "evaluate.quintiles", "five lift buckets for small holdouts");

  auto* explain = app.add_subcommand("explain", "per-group pmpm drivers from SHAP values");
  FlagSet explain_flags(explain);
  book_flags(explain_flags);
  slicing_flags(explain_flags);
  explain_flags.opt("--model", "paths.model", "artifact directory from train")
      .opt("--out", "paths.out", "output CSV")
      .opt("--top", "explain.top", "drivers per group");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? uwml::kExitOk : uwml::kExitUsage;
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    if (threads > 0) omp_set_num_threads(threads);
    uwml::KeyValueConfig cfg = config_path.empty() ? uwml::KeyValueConfig{} : uwml::KeyValueConfig::read(config_path);
    if (synth->parsed()) {
      synth_flags.apply(cfg);
      return uwml::run_synth(uwml::synth_command(cfg));
    }
    if (train->parsed()) {
      train_flags.apply(cfg);
      return uwml::run_train(uwml::train_command(cfg));
    }
    if (predict->parsed()) {
      predict_flags.apply(cfg);
      return uwml::run_predict(uwml::predict_command(cfg));
    }
    if (evaluate->parsed()) {
      evaluate_flags.apply(cfg);
      return uwml::run_evaluate(uwml::evaluate_command(cfg));
    }
    explain_flags.apply(cfg);
    return uwml::run_explain(uwml::explain_command(cfg));
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return uwml::kExitUsage;
  }
}
