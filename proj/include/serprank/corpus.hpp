#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

namespace serprank {

using QueryId = std::int64_t;
using SessionId = std::int64_t;
using UserId = std::int64_t;
using ItemId = std::int64_t;
using CategoryId = std::int64_t;
using TokenId = std::int64_t;
/// Epoch milliseconds, UTC.
using Timestamp = std::int64_t;

inline constexpr Timestamp kMillisPerDay = 86'400'000;

enum class Scenario { Full, Less };

/// Declaration order is the within-session tie-break order.
enum class BehaviorKind { Click = 0, View = 1, Purchase = 2 };

inline constexpr std::size_t kBehaviorKinds = 3;

const char* to_string(Scenario s) noexcept;
const char* to_string(BehaviorKind k) noexcept;

struct QueryRecord {
  QueryId query_id = 0;
  SessionId session_id = 0;
  std::optional<UserId> user_id;
  Timestamp event_ts = 0;
  Scenario scenario = Scenario::Less;
  std::vector<TokenId> query_tokens;
  std::optional<CategoryId> category_id;
  std::vector<ItemId> shown_items;
  bool is_test = false;

  bool operator==(const QueryRecord&) const = default;
};

struct BehaviorEvent {
  BehaviorKind kind = BehaviorKind::Click;
  SessionId session_id = 0;
  std::optional<QueryId> query_id;
  std::optional<UserId> user_id;
  ItemId item_id = 0;
  Timestamp event_ts = 0;
  /// Purchases only.
  std::optional<std::int64_t> order_id;

  bool operator==(const BehaviorEvent&) const = default;
};

struct ProductRecord {
  ItemId item_id = 0;
  CategoryId category_id = 0;
  double price = 0.0;
  std::vector<TokenId> name_tokens;

  bool operator==(const ProductRecord&) const = default;
};

/// Within-session ordering: (event_ts, kind, item_id).
bool session_order_less(const BehaviorEvent& a, const BehaviorEvent& b) noexcept;

/// Throws IntegrityError naming the first violated per-record invariant.
void validate_query(const QueryRecord& q);

/// Frozen, indexed view over one log corpus. Immutable after construction,
/// so concurrent readers need no synchronisation.
class Dataset {
 public:
  Dataset() = default;

  std::span<const QueryRecord> queries() const noexcept { return queries_; }
  /// Sorted by (session_id, event_ts, kind, item_id).
  std::span<const BehaviorEvent> events() const noexcept { return events_; }
  std::span<const ProductRecord> products() const noexcept { return products_; }

  const QueryRecord* find_query(QueryId id) const;
  const ProductRecord* find_product(ItemId id) const;

  /// Time-ordered events of one session; empty for unknown sessions.
  std::span<const BehaviorEvent> session_events(SessionId id) const;
  /// Queries of one session ordered by (event_ts, query_id).
  std::vector<const QueryRecord*> session_queries(SessionId id) const;

  Timestamp t_min() const noexcept { return t_min_; }
  Timestamp t_max() const noexcept { return t_max_; }
  bool empty() const noexcept { return queries_.empty() && events_.empty(); }

  /// Events dropped by a lenient build.
  std::size_t dropped_events() const noexcept { return dropped_events_; }

 private:
  friend Dataset build_dataset(std::vector<QueryRecord>, std::vector<BehaviorEvent>,
                               std::vector<ProductRecord>, bool);
  friend std::pair<Dataset, Dataset> split_by_time(const Dataset&, Timestamp);

  enum class ClickQueries { MustResolve, MayBeForeign };

  static Dataset assemble(std::vector<QueryRecord> queries, std::vector<BehaviorEvent> events,
                          std::vector<ProductRecord> products, bool strict,
                          ClickQueries click_queries);

  std::vector<QueryRecord> queries_;
  std::vector<BehaviorEvent> events_;
  std::vector<ProductRecord> products_;
  std::unordered_map<QueryId, std::size_t> query_index_;
  std::unordered_map<ItemId, std::size_t> product_index_;
  std::unordered_map<SessionId, std::pair<std::size_t, std::size_t>> session_event_range_;
  std::unordered_map<SessionId, std::vector<std::size_t>> session_query_index_;
  Timestamp t_min_ = 0;
  Timestamp t_max_ = 0;
  std::size_t dropped_events_ = 0;
};

/// Builds indexes and checks referential integrity: clicks must name a query
/// of the same session that showed the item, and every item id must resolve
/// to a product. strict=true throws IntegrityError on the first bad event;
/// strict=false drops bad events and counts them. Query- and product-level
/// violations (duplicate ids, broken record invariants, unresolvable shown
/// items) throw in both modes.
Dataset build_dataset(std::vector<QueryRecord> queries, std::vector<BehaviorEvent> events,
                      std::vector<ProductRecord> products, bool strict);

/// Queries with event_ts < cutoff go to train, the rest to validation. Events
/// are partitioned by their own timestamps and both sides keep the full
/// product table. A click whose query fell on the other side is retained.
std::pair<Dataset, Dataset> split_by_time(const Dataset& ds, Timestamp cutoff_ts);

/// Cutoff timestamp placing roughly `fraction` of queries (by time) in train.
Timestamp cutoff_for_fraction(const Dataset& ds, double fraction);

// --- CSV tables --------------------------------------------------------------

enum class TableKind { Queries, Clicks, Views, Purchases, Products };

const char* table_file_name(TableKind kind) noexcept;
const char* table_header(TableKind kind) noexcept;

std::vector<QueryRecord> load_queries(const std::filesystem::path& path);
std::vector<BehaviorEvent> load_events(const std::filesystem::path& path, BehaviorKind kind);
std::vector<ProductRecord> load_products(const std::filesystem::path& path);

using TableRows =
    std::variant<std::vector<QueryRecord>, std::vector<BehaviorEvent>, std::vector<ProductRecord>>;

TableRows load_table(const std::filesystem::path& path, TableKind kind);

/// Loads the five tables from `dir` and builds the dataset.
Dataset load_dataset(const std::filesystem::path& dir, bool strict);

/// Writes the five tables into `dir` (created if needed). Output is a pure
/// function of the dataset contents.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);

/// Shortest decimal text that parses back to the same double.
std::string format_decimal(double value);

// --- Statistics ---------------------------------------------------------------

struct StatsReport {
  std::size_t query_full_queries = 0;
  std::size_t query_less_queries = 0;
  std::size_t sessions = 0;
  std::size_t presented_products = 0;
  std::size_t click_events = 0;
  std::size_t view_events = 0;
  std::size_t purchase_events = 0;

  std::size_t real_users = 0;
  /// Anonymous users have no id; each session without a user id counts as one.
  std::size_t anonymous_users = 0;
  std::size_t train_real_users = 0;
  std::size_t test_real_users = 0;
  std::size_t overlap_real_users = 0;

  bool operator==(const StatsReport&) const = default;
};

/// Train/test membership comes from QueryRecord::is_test.
StatsReport dataset_stats(const Dataset& ds);

}  // namespace serprank
