#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "serprank/config.hpp"
#include "serprank/corpus.hpp"
#include "serprank/ensemble.hpp"
#include "serprank/features.hpp"
#include "serprank/metrics.hpp"

namespace serprank {

/// Options shared by every subcommand.
struct RunContext {
  RunConfig config;
  std::string checksum;
  std::size_t threads = 1;
  /// Progress lines; nullptr silences them.
  std::ostream* log = nullptr;

  explicit RunContext(RunConfig cfg, std::size_t threads = 1, std::ostream* log = nullptr);
};

/// Loaded corpus, split and fitted features.
struct Workspace {
  Dataset dataset;
  Dataset train;
  Dataset validation;
  Timestamp cutoff = 0;
  FeatureExtractor features;
};

Workspace prepare_workspace(const RunContext& ctx);

/// Writes the synthetic corpus (defaults when the config has no generator
/// section) into `out`, or config.data_dir.
void run_gen(const RunContext& ctx, const std::optional<std::filesystem::path>& out = {});

StatsReport run_stats(const RunContext& ctx, const Dataset& ds);
std::string stats_to_json(const StatsReport& s);

/// feature_space.json and, per config, features.txt ("qid:item idx:val ...").
void run_features(const RunContext& ctx, const Workspace& ws);

/// Trains the ensemble bundle and the extra baseline model into output_dir/model.
void run_train(const RunContext& ctx, const Workspace& ws);

/// Ranks validation queries: run.txt (ensemble), runs/<model>.txt for the
/// report rows, and qrels.csv.
void run_predict(const RunContext& ctx, const Workspace& ws);

/// Mean over seeded uniform shuffles of every qrels query.
struct RandomBaseline {
  int shuffles = 0;
  double combined = 0.0;
  double full = 0.0;
  double less = 0.0;
};

RandomBaseline random_baseline(const QrelSet& qrels, std::size_t k, int shuffles,
                               std::uint64_t seed, double less_weight = kLessWeight);

std::string metric_report_json(const MetricReport& r, const std::string& config_checksum = "",
                               std::optional<std::uint64_t> seed = std::nullopt);

struct PipelineResult {
  MetricReport ensemble;
  std::vector<TableRow> rows;
  RandomBaseline baseline;
};

/// Evaluates the runs written by run_predict and writes report.json.
PipelineResult run_report(const RunContext& ctx);

/// gen (when configured), stats, features, train, predict, evaluate.
PipelineResult run_pipeline(const RunContext& ctx);

/// Model names of the report rows, in report order.
std::vector<std::string> report_models();

}  // namespace serprank
