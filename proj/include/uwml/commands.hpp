#pragma once

#include <filesystem>
#include <optional>

#include "uwml/config.hpp"
#include "uwml/pipeline.hpp"
#include "uwml/synth.hpp"

namespace uwml {

/// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitGateFailure = 1;
inline constexpr int kExitUsage = 2;

struct BookPaths {
  std::filesystem::path claims, eligibility, labs;

  /// claims.csv, eligibility.csv and labs.csv inside `dir`.
  static BookPaths in(const std::filesystem::path& dir);
};

struct SynthCommand {
  SynthConfig config;
  std::filesystem::path out;
};

struct TrainCommand {
  BookPaths book;
  std::filesystem::path out;
  PipelineConfig pipeline;
  std::optional<std::filesystem::path> renewal_table;
  double qa_tolerance = 0.05;
};

struct PredictCommand {
  BookPaths book;
  std::filesystem::path model_dir;
  std::filesystem::path out;
  std::optional<std::filesystem::path> renewal_table, factor_tables, baseline_trends;
  std::optional<SliceSpec> slicing;  // defaults to the trained slicing
};

struct EvaluateCommand {
  std::filesystem::path predictions, baseline, out;
  std::optional<std::filesystem::path> manifest;  // synth manifest with group truths and labels
  std::optional<std::filesystem::path> truth;     // CSV: group_id, true_pmpm, projection_member_months[, concession]
  bool quintiles = false;
};

struct ExplainCommand {
  BookPaths book;
  std::filesystem::path model_dir;
  std::filesystem::path out;  // CSV file
  std::optional<std::filesystem::path> renewal_table;
  std::optional<SliceSpec> slicing;
  std::size_t top = 5;
};

// Builders read dotted keys and throw UsageError on unknown or malformed ones.
SynthCommand synth_command(const KeyValueConfig& cfg);
TrainCommand train_command(const KeyValueConfig& cfg);
PredictCommand predict_command(const KeyValueConfig& cfg);
EvaluateCommand evaluate_command(const KeyValueConfig& cfg);
ExplainCommand explain_command(const KeyValueConfig& cfg);

// Runners return an exit code; bad inputs throw UsageError, std::invalid_argument
// or std::runtime_error, all of which callers map to kExitUsage.
int run_synth(const SynthCommand& cmd);
int run_train(const TrainCommand& cmd);
int run_predict(const PredictCommand& cmd);
int run_evaluate(const EvaluateCommand& cmd);
int run_explain(const ExplainCommand& cmd);

}  // namespace uwml
