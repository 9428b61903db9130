#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "serprank/corpus.hpp"

namespace serprank {

inline constexpr double kLessWeight = 0.8;

/// DCG@k with gain 2^g - 1 and discount log2(i + 1), normalised by the ideal
/// ordering. A list without positive grades scores 1. Throws EmptyList, and
/// OutOfRange for grades outside {0, 1, 2}; k must be >= 1.
double ndcg_at_k(std::span<const int> ranked_grades, std::size_t k);

/// w_less * ndcg_less + (1 - w_less) * ndcg_full.
double combined_ndcg(double ndcg_less, double ndcg_full, double less_weight = kLessWeight);

/// Order-independent sum: Neumaier compensated accumulation.
class CompensatedSum {
 public:
  void add(double x) noexcept;
  double value() const noexcept { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

struct QueryQrels {
  Scenario scenario = Scenario::Less;
  /// SERP order.
  std::vector<ItemId> items;
  std::vector<int> grades;
};

struct QrelSet {
  std::unordered_map<QueryId, QueryQrels> queries;

  /// Grade of (query, item); throws UnknownQuery / UnknownItem.
  int grade(QueryId query, ItemId item) const;
};

/// One ranked list per query, in file order.
using Run = std::vector<std::pair<QueryId, std::vector<ItemId>>>;

struct QueryScore {
  QueryId query_id = 0;
  Scenario scenario = Scenario::Less;
  double ndcg = 0.0;
};

struct MetricReport {
  double ndcg_combined = 0.0;
  double ndcg_full = 0.0;
  double ndcg_less = 0.0;
  std::size_t queries_full = 0;
  std::size_t queries_less = 0;
  std::size_t k = 0;
  /// Sorted by query id.
  std::vector<QueryScore> per_query;
};

/// Macro-averages per scenario (a scenario without queries averages to 0).
/// Throws UnknownQuery and NotAPermutation.
MetricReport evaluate_run(const Run& run, const QrelSet& qrels, std::size_t k,
                          double less_weight = kLessWeight);

void write_run(const std::filesystem::path& path, const Run& run);
Run read_run(const std::filesystem::path& path);

inline constexpr const char* kQrelsHeader = "query_id,scenario,item_id,grade";

void write_qrels(const std::filesystem::path& path, const QrelSet& qrels);
QrelSet read_qrels(const std::filesystem::path& path);

struct TableRow {
  std::string name;
  double combined = 0.0;
  double full = 0.0;
  double less = 0.0;
  /// False for models scored on one scenario only; only `full` is shown.
  bool has_less = true;
};

/// Fixed-width table with columns Model, NDCG, NDCG full, NDCG less.
std::string format_table(std::span<const TableRow> rows);

}  // namespace serprank
