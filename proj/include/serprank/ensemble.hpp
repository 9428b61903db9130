#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "serprank/corpus.hpp"
#include "serprank/features.hpp"
#include "serprank/rankers.hpp"

namespace serprank {

struct EnsembleConfig {
  /// Unset: 10 x the range of the scenario's train scores.
  std::optional<double> session_bias;
  int folds = 5;
  int min_queries_per_category = 30;
  double less_weight = 0.8;
  /// Share of the train period (latest queries) held out to fit the selector.
  double holdout_fraction = 0.2;

  bool operator==(const EnsembleConfig&) const = default;
};

/// Hyperparameters of every learner the ensemble trains.
struct RankerSettings {
  SgdHyperparams lr;
  SgdHyperparams ranksvm{0.01, 5, 0.0, 1e-4, 0.0, 1};
  GbdtHyperparams gbdt;
  DmmHyperparams dmm;
  GbdtHyperparams meta{50, 3, 0.1, 20, 0, 1};
  /// Preference pairs kept per query (0 = all).
  std::size_t pair_cap = 100;
  std::size_t ndcg_k = 10;

  bool operator==(const RankerSettings&) const = default;
};

/// Trains one base model on a selection of instances (grouped by query).
/// Must be deterministic in its input.
struct BaseLearner {
  std::string name;
  std::string hyperparams_json;
  std::function<Model(std::span<const LabeledInstance* const>)> train;
};

/// Named learner sets. Query-full: RankSVM on dense+position, DMM on tokens,
/// LR on all slots. Query-less: four LR slot subsets, RankSVM and GBDT.
std::vector<BaseLearner> full_scenario_learners(const FeatureSpace& space,
                                                const RankerSettings& settings);
std::vector<BaseLearner> less_scenario_learners(const FeatureSpace& space,
                                                const RankerSettings& settings);
/// GBDT over dense+position+session with token slots as sparse candidates.
BaseLearner gbdt_learner(const FeatureSpace& space, const RankerSettings& settings,
                         std::span<const SlotKind> sparse_slots);

// --- Stacking ----------------------------------------------------------------------

struct StackedMatrix {
  std::vector<std::string> models;
  std::vector<QueryId> query_ids;
  std::vector<ItemId> item_ids;
  std::vector<int> grades;
  /// Fold of each row's query.
  std::vector<int> folds;
  /// Row-major, rows() x cols().
  std::vector<double> scores;

  std::size_t rows() const noexcept { return grades.size(); }
  std::size_t cols() const noexcept { return models.size(); }
  double at(std::size_t row, std::size_t col) const { return scores[row * cols() + col]; }
};

/// Fold per distinct query in first-appearance order: a seeded shuffle of the
/// queries dealt round-robin into k folds.
std::vector<int> assign_query_folds(std::span<const LabeledInstance* const> instances, int k,
                                    std::uint64_t seed);

/// Each cell comes from the column's learner trained on the instances of the
/// other k-1 folds (original order kept). Throws InsufficientData when a fold
/// is empty, UsageError for k < 2.
StackedMatrix build_oof_matrix(std::span<const LabeledInstance* const> instances,
                               std::span<const BaseLearner> learners, int k, std::uint64_t seed,
                               std::size_t threads = 1);

/// Meta-learner input: one dense column per base model.
FeatureVector meta_features(std::span<const double> base_scores);

/// GBDT regression on grade over the base-score columns.
TreeEnsembleModel train_meta(const StackedMatrix& matrix, const GbdtHyperparams& hp,
                             TrainTrace* trace = nullptr);

// --- Per-category selection --------------------------------------------------------------

struct SelectorQuery {
  QueryId query_id = 0;
  CategoryId category = 0;
  /// NDCG of each model on this query.
  std::vector<double> ndcg;
};

struct CategorySelector {
  std::vector<std::string> models;
  std::map<CategoryId, std::size_t> choice;
  std::size_t fallback = 0;
  /// Mean validation NDCG per model and the query count, for every category seen.
  std::map<CategoryId, std::vector<double>> category_ndcg;
  std::map<CategoryId, std::size_t> category_queries;
  std::vector<double> overall_ndcg;

  std::size_t pick(std::optional<CategoryId> category) const;
};

/// Categories with >= min_queries queries get their max-mean-NDCG model (ties
/// to the lowest id); the rest use the overall best. Throws NoValidationData.
CategorySelector select_by_category(std::span<const SelectorQuery> queries,
                                    std::vector<std::string> models, int min_queries);

/// Scores query-less validation instances with every model and selects.
CategorySelector train_category_selector(std::span<const Model> models,
                                         std::vector<std::string> names,
                                         std::span<const LabeledInstance* const> validation,
                                         const Dataset& queries, int min_queries,
                                         std::size_t k);

// --- Session bias and ordering ---------------------------------------------------------

/// scores[i] += b for every items[i] with prior interaction in the session.
void apply_session_bias(std::span<const ItemId> items, std::span<double> scores,
                        const SessionContext& ctx, double b);

/// Shown items by descending score, ties by SERP position.
std::vector<ItemId> order_by_score(std::span<const ItemId> shown, std::span<const double> scores);

/// Auto bias: 10 x (max - min) of the given scores, 0 when empty.
double default_session_bias(std::span<const double> scores);

// --- Trained ensemble ------------------------------------------------------------------

struct Member {
  std::string name;
  Model model;
  std::string hyperparams_json = "{}";
};

struct TrainedEnsemble {
  std::vector<Member> full_members;
  TreeEnsembleModel meta;
  double full_bias = 0.0;
  std::vector<Member> less_members;
  CategorySelector selector;
  double less_bias = 0.0;
  bool trained = false;

  /// Pre-bias score of one instance of the given scenario.
  double score(const LabeledInstance& instance, Scenario scenario,
               std::optional<CategoryId> category) const;
};

/// Instances of one query with zero grades, carrying tokens for query-full.
std::vector<LabeledInstance> query_instances(const QueryRecord& query, const SessionContext& ctx,
                                             const FeatureExtractor& features);

struct EnsembleTrainInfo {
  std::size_t full_instances = 0;
  std::size_t less_instances = 0;
  std::size_t holdout_queries = 0;
  TrainTrace meta_trace;
};

/// Query-full: OOF stacking with a GBDT meta-learner over members refit on
/// all query-full train instances. Query-less: selector fitted on models
/// trained up to an internal holdout of the train period (with their own
/// feature tables), applied to members refit on all query-less train data.
/// `log` supplies labels and session history.
TrainedEnsemble train_ensemble(const Dataset& train, const Dataset& log,
                               const FeatureExtractor& features, const FeatureOptions& options,
                               const RankerSettings& settings, const EnsembleConfig& config,
                               std::uint64_t seed, std::size_t threads = 1,
                               EnsembleTrainInfo* info = nullptr);

/// Permutation of query.shown_items. Throws UntrainedEnsemble.
std::vector<ItemId> rank_serp(const QueryRecord& query, const Dataset& context,
                              const TrainedEnsemble& ensemble, const FeatureExtractor& features);
/// Same, with the bias switched off.
std::vector<ItemId> rank_serp_unbiased(const QueryRecord& query, const Dataset& context,
                                       const TrainedEnsemble& ensemble,
                                       const FeatureExtractor& features);

struct Provenance {
  std::string feature_space_checksum;
  std::string config_checksum;
  std::uint64_t seed = 0;
};

/// Writes ensemble.json plus one model file per member and the meta model.
void save_ensemble(const std::filesystem::path& dir, const TrainedEnsemble& ensemble,
                   const Provenance& provenance);
/// Throws ChecksumMismatch when a file disagrees with expected_feature_checksum.
TrainedEnsemble load_ensemble(const std::filesystem::path& dir,
                              std::optional<std::string_view> expected_feature_checksum,
                              Provenance* provenance = nullptr);

}  // namespace serprank
