#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "serprank/corpus.hpp"
#include "serprank/features.hpp"

namespace serprank {

// --- Training data -----------------------------------------------------------------

struct LabeledInstance {
  QueryId query_id = 0;
  ItemId item_id = 0;
  FeatureVector features;
  /// 0 shown, 1 clicked, 2 purchased.
  int grade = 0;
  /// Query-full instances only; inputs of the embedding scorer.
  std::vector<TokenId> query_tokens;
  std::vector<TokenId> item_tokens;
};

/// Non-owning selection of instances; the trainers work on these so that
/// folds and scenario subsets never copy feature vectors.
using InstanceRefs = std::vector<const LabeledInstance*>;

InstanceRefs refs_of(std::span<const LabeledInstance> instances);

/// Grades aligned with query.shown_items: 2 if purchased in the query's
/// session at or after the query, else 1 if clicked from this query, else 0.
std::vector<int> grade_query(const Dataset& log, const QueryRecord& query);

/// One instance per (query, shown item) of `queries_from`, grouped by query in
/// query order. `log` supplies labels and the session prefix; `scenario`
/// filters when set.
std::vector<LabeledInstance> grade_instances(const Dataset& queries_from, const Dataset& log,
                                             const FeatureExtractor& features,
                                             std::optional<Scenario> scenario = std::nullopt);

/// Preferred/non-preferred pair inside one query; indexes into the instance
/// selection the pairs were built from.
struct PairInstance {
  QueryId query_id = 0;
  std::size_t winner = 0;
  std::size_t loser = 0;

  bool operator==(const PairInstance&) const = default;
};

/// All unequal-grade pairs per query (instances grouped contiguously by
/// query), down-sampled per query to cap_per_query with a seed derived from
/// (seed, query_id). cap_per_query = 0 means no cap.
std::vector<PairInstance> build_pairwise_examples(std::span<const LabeledInstance* const> instances,
                                                  std::size_t cap_per_query, std::uint64_t seed);
std::vector<PairInstance> build_pairwise_examples(std::span<const LabeledInstance> instances,
                                                  std::size_t cap_per_query, std::uint64_t seed);

// --- Hyperparameters ---------------------------------------------------------------------

/// Step size at global step t is learning_rate / (1 + t / decay_steps);
/// decay_steps = 0 means one epoch's worth of steps.
struct SgdHyperparams {
  double learning_rate = 0.01;
  int epochs = 5;
  double l1 = 0.0;
  double l2 = 1e-5;
  double decay_steps = 0.0;
  std::uint64_t seed = 1;

  bool operator==(const SgdHyperparams&) const = default;
};

struct GbdtHyperparams {
  int n_trees = 50;
  int max_depth = 4;
  double shrinkage = 0.1;
  int min_leaf = 10;
  /// Sparse split candidates sampled per tree.
  int sparse_columns = 256;
  std::uint64_t seed = 1;

  bool operator==(const GbdtHyperparams&) const = default;
};

struct DmmHyperparams {
  int dim = 16;
  double learning_rate = 0.05;
  int epochs = 10;
  double init_range = 0.01;
  double decay_steps = 0.0;
  std::uint64_t seed = 1;

  bool operator==(const DmmHyperparams&) const = default;
};

/// Objective value after each epoch (SGD learners) or each stage (GBDT,
/// where entry 0 is the base score alone).
struct TrainTrace {
  std::vector<double> objective;
};

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  bool contains(std::size_t i) const noexcept { return i >= begin && i < end; }
  bool operator==(const IndexRange&) const = default;
};

/// Index ranges of the given slots, merged where adjacent.
std::vector<IndexRange> slot_ranges(const FeatureSpace& space, std::span<const SlotKind> kinds);

// --- Linear models -----------------------------------------------------------------------

enum class LinearObjective { Logistic, RankSvm };

struct LinearModel {
  LinearObjective objective = LinearObjective::Logistic;
  std::size_t dim = 0;
  /// Dense storage; serialised sparsely.
  std::vector<double> weights;
  double bias = 0.0;
  /// Feature ranges the model was trained on; empty means all.
  std::vector<IndexRange> active;

  static LinearModel zeros(LinearObjective objective, std::size_t dim);
  bool operator==(const LinearModel&) const = default;
};

/// Pointwise logistic regression on target grade >= 1 by seeded SGD.
LinearModel train_logistic(std::span<const LabeledInstance* const> instances,
                           const SgdHyperparams& hp, std::size_t dim,
                           std::span<const IndexRange> active = {}, TrainTrace* trace = nullptr);

/// Mean log loss + l2/2 |w|^2 + l1 |w|_1 (bias unregularised).
double logistic_objective(const LinearModel& m, std::span<const LabeledInstance* const> instances,
                          const SgdHyperparams& hp);
/// Gradient of logistic_objective; weights first, bias last (size dim + 1).
/// The l1 term contributes l1*sign(w), so it is exact away from w = 0.
std::vector<double> logistic_gradient(const LinearModel& m,
                                      std::span<const LabeledInstance* const> instances,
                                      const SgdHyperparams& hp);

/// Pairwise hinge max(0, 1 - w.(x_winner - x_loser)) + l2/2 |w|^2 by seeded SGD.
LinearModel train_ranksvm(std::span<const LabeledInstance* const> instances,
                          std::span<const PairInstance> pairs, const SgdHyperparams& hp,
                          std::size_t dim, std::span<const IndexRange> active = {},
                          TrainTrace* trace = nullptr);

double ranksvm_objective(const LinearModel& m, std::span<const LabeledInstance* const> instances,
                         std::span<const PairInstance> pairs, const SgdHyperparams& hp);
/// Subgradient of ranksvm_objective (hinge terms at exactly margin 1 are
/// treated as inactive); size dim + 1 with a zero bias entry.
std::vector<double> ranksvm_gradient(const LinearModel& m,
                                     std::span<const LabeledInstance* const> instances,
                                     std::span<const PairInstance> pairs,
                                     const SgdHyperparams& hp);

// --- Gradient-boosted trees ------------------------------------------------------------------

struct TreeNode {
  /// -1 for leaves.
  std::int64_t feature = -1;
  double threshold = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;

  bool is_leaf() const noexcept { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

/// Node 0 is the root; x[feature] <= threshold goes left.
struct RegressionTree {
  std::vector<TreeNode> nodes;

  double predict(const FeatureVector& x) const;
  int depth() const;
  bool operator==(const RegressionTree&) const = default;
};

struct TreeEnsembleModel {
  std::size_t dim = 0;
  double base_score = 0.0;
  double shrinkage = 1.0;
  int max_depth = 0;
  std::vector<RegressionTree> trees;

  bool operator==(const TreeEnsembleModel&) const = default;
};

/// Split candidates: every column of `dense`, plus per tree a uniform sample
/// of at most sparse_columns of the columns inside `sparse` that are nonzero
/// somewhere in the training rows.
struct GbdtColumns {
  IndexRange dense;
  std::vector<IndexRange> sparse;
};

/// Least-squares boosting: base = mean target, each stage fits a regression
/// tree to residuals by exact greedy variance reduction.
TreeEnsembleModel train_gbdt(std::span<const FeatureVector* const> rows,
                             std::span<const double> targets, const GbdtHyperparams& hp,
                             std::size_t dim, const GbdtColumns& columns,
                             TrainTrace* trace = nullptr);

/// Target = grade.
TreeEnsembleModel train_gbdt(std::span<const LabeledInstance* const> instances,
                             const GbdtHyperparams& hp, std::size_t dim,
                             const GbdtColumns& columns, TrainTrace* trace = nullptr);

// --- Embedding match model -----------------------------------------------------------------------

/// Dual embedding tables indexed by token id; score is the cosine of the mean
/// query-token vector and the mean product-token vector.
struct EmbeddingModel {
  std::size_t dim = 0;
  std::size_t query_vocab = 0;
  std::size_t product_vocab = 0;
  std::vector<double> query_table;
  std::vector<double> product_table;

  /// Zero vector for tokens outside the table.
  std::span<const double> query_vector(TokenId t) const;
  std::span<const double> product_vector(TokenId t) const;
  bool operator==(const EmbeddingModel&) const = default;
};

struct MatchPair {
  std::vector<TokenId> query;
  std::vector<TokenId> winner;
  std::vector<TokenId> loser;
};

std::vector<MatchPair> build_match_pairs(std::span<const LabeledInstance* const> instances,
                                         std::span<const PairInstance> pairs);

/// Pairwise logistic loss log(1 + exp(-(s_winner - s_loser))) by seeded SGD.
/// Only tokens seen in training get random initial vectors.
EmbeddingModel train_dmm(std::span<const MatchPair> pairs, const DmmHyperparams& hp,
                         TrainTrace* trace = nullptr);

/// Initial model of train_dmm (no epochs).
EmbeddingModel init_dmm(std::span<const MatchPair> pairs, const DmmHyperparams& hp);

double dmm_pair_loss(const EmbeddingModel& m, const MatchPair& pair);
double dmm_loss(const EmbeddingModel& m, std::span<const MatchPair> pairs);
/// Gradient of dmm_loss, shaped like the model tables.
EmbeddingModel dmm_gradient(const EmbeddingModel& m, std::span<const MatchPair> pairs);

// --- Scoring -------------------------------------------------------------------------

using Model = std::variant<LinearModel, TreeEnsembleModel, EmbeddingModel>;

/// w.x + bias. Throws DimensionMismatch for indexes >= dim.
double score(const LinearModel& m, const FeatureVector& x);
/// Sigmoid of score.
double probability(const LinearModel& m, const FeatureVector& x);
double score(const TreeEnsembleModel& m, const FeatureVector& x);
/// 0 when either mean vector is exactly zero.
double score(const EmbeddingModel& m, std::span<const TokenId> query,
             std::span<const TokenId> product);
/// Dispatches on the model kind: features for linear/tree, tokens for embedding.
double score(const Model& m, const LabeledInstance& instance);

const char* model_kind(const Model& m) noexcept;

// --- Model files -------------------------------------------------------------------------

struct ModelFile {
  std::string name;
  Model model;
  /// JSON object text of the training hyperparameters.
  std::string hyperparams_json = "{}";
  std::uint64_t seed = 0;
  std::string feature_space_checksum;
  std::string config_checksum;
};

std::string model_to_json(const ModelFile& file);
/// Throws ChecksumMismatch when expected_checksum is set and differs.
ModelFile model_from_json(std::string_view text,
                          std::optional<std::string_view> expected_checksum = std::nullopt);

}  // namespace serprank
