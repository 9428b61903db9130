#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "serprank/corpus.hpp"

namespace serprank {

// --- Product statistics --------------------------------------------------------

/// Index order of the four counted statistics.
enum class Statistic { Show = 0, Click = 1, View = 2, Purchase = 3 };
inline constexpr std::size_t kStatistics = 4;

struct ProductStats {
  std::array<std::int64_t, kStatistics> counts{};
  /// Distinct identified users per statistic; anonymous events are not counted.
  std::array<std::int64_t, kStatistics> distinct_users{};
  double ctr = 0.0;
  double view_rate = 0.0;
  double cvr = 0.0;
  std::int64_t word_length = 0;
  /// Indexed by BehaviorKind.
  std::array<double, kBehaviorKinds> price_feat{};

  std::int64_t count(Statistic s) const { return counts[static_cast<std::size_t>(s)]; }
  /// True when the item appears anywhere in the logs it was computed from.
  bool logged() const;
};

/// Covers every product of the dataset, logged or not.
using ProductStatsTable = std::unordered_map<ItemId, ProductStats>;

ProductStatsTable compute_global_stats(const Dataset& train);

/// Behavior count discounted by price: count / (price + 1).
double price_feature(std::int64_t behavior_count, double price);

/// Normalised position in [0, 1]; 0 for a singleton list. Throws OutOfRange.
double percent_rank(std::size_t position, std::size_t list_len);

// --- Time-local statistics -------------------------------------------------------

enum class TimeInterval { Week, HalfMonth, Month, TwoMonth };
inline constexpr std::array<TimeInterval, 4> kAllIntervals = {
    TimeInterval::Week, TimeInterval::HalfMonth, TimeInterval::Month, TimeInterval::TwoMonth};

Timestamp interval_length(TimeInterval interval) noexcept;
const char* to_string(TimeInterval interval) noexcept;

/// Midnight UTC at or before ts.
Timestamp utc_midnight(Timestamp ts) noexcept;

struct TimeBucketedStats {
  TimeInterval interval = TimeInterval::Week;
  Timestamp origin = 0;
  std::size_t buckets = 1;
  /// Per item: buckets values for each statistic, statistic-major.
  std::unordered_map<ItemId, std::vector<std::int64_t>> counts;

  std::size_t bucket_of(Timestamp ts) const;
  std::int64_t count(ItemId item, Statistic s, std::size_t bucket) const;
};

TimeBucketedStats compute_time_local_stats(const Dataset& train, TimeInterval interval);

// --- Hashed token features -------------------------------------------------------------

inline constexpr std::uint8_t kCategoryTokenSeparator = 0x1F;
inline constexpr std::uint8_t kCrossTokenSeparator = 0x1E;

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept;

/// FNV-1a-64 over le64(category) ‖ 0x1F ‖ le64(token), reduced mod width.
std::size_t category_token_index(CategoryId category, TokenId token, std::size_t width);

/// One hashed index per (query token, product token) pair, keyed with 0x1E;
/// sorted and deduplicated. Indexes are slot-relative.
std::vector<std::size_t> cross_token_indices(std::span<const TokenId> query_tokens,
                                             std::span<const TokenId> product_tokens,
                                             std::size_t width);

// --- Feature space -----------------------------------------------------------------------

enum class SlotKind { Dense = 0, Position = 1, Session = 2, CategoryToken = 3, CrossToken = 4 };
inline constexpr std::size_t kSlotKinds = 5;

const char* to_string(SlotKind kind) noexcept;

struct Slot {
  SlotKind kind = SlotKind::Dense;
  std::size_t offset = 0;
  std::size_t width = 0;

  std::size_t end() const noexcept { return offset + width; }
  bool contains(std::size_t index) const noexcept { return index >= offset && index < end(); }
  bool operator==(const Slot&) const = default;
};

struct DenseColumn {
  std::string name;
  bool log_transform = true;
  double mean = 0.0;
  double stddev = 1.0;

  bool operator==(const DenseColumn&) const = default;
};

/// Slot layout plus the dense normalisation constants. The layout is
/// dense | position | session | category-token | cross-token.
class FeatureSpace {
 public:
  FeatureSpace() = default;
  FeatureSpace(std::vector<DenseColumn> dense, std::size_t category_width,
               std::size_t cross_width);

  std::span<const Slot> slots() const noexcept { return slots_; }
  const Slot& slot(SlotKind kind) const { return slots_[static_cast<std::size_t>(kind)]; }
  std::size_t total_dim() const noexcept { return slots_.empty() ? 0 : slots_.back().end(); }

  std::span<const DenseColumn> dense_columns() const noexcept { return dense_; }
  std::vector<DenseColumn>& mutable_dense_columns() noexcept { return dense_; }

  /// The slot holding `index`, or nullptr when out of range.
  const Slot* slot_of(std::size_t index) const noexcept;

  std::string to_json() const;
  static FeatureSpace from_json(std::string_view text);

  /// FNV-1a-64 of the canonical JSON, as 16 hex digits.
  std::string checksum() const;

  bool operator==(const FeatureSpace&) const = default;

 private:
  std::vector<DenseColumn> dense_;
  std::vector<Slot> slots_;
};

struct FeatureEntry {
  std::uint32_t index = 0;
  float value = 0.0f;

  bool operator==(const FeatureEntry&) const = default;
};

/// Sparse vector with strictly increasing indexes.
class FeatureVector {
 public:
  FeatureVector() = default;

  /// Sorts and merges duplicate indexes (the first value wins, which keeps
  /// hashed binary features at 1.0).
  static FeatureVector from_entries(std::vector<FeatureEntry> entries);

  std::span<const FeatureEntry> entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  double value(std::size_t index) const noexcept;
  /// One past the largest index, 0 when empty.
  std::size_t min_dim() const noexcept;

  bool operator==(const FeatureVector&) const = default;

 private:
  std::vector<FeatureEntry> entries_;
};

/// Keeps only entries inside the given slots.
FeatureVector project(const FeatureVector& v, const FeatureSpace& space,
                      std::span<const SlotKind> kinds);

// --- Session context ----------------------------------------------------------------------

struct SessionContext {
  struct History {
    ItemId item = 0;
    /// Earliest prior timestamp per BehaviorKind.
    std::array<std::optional<Timestamp>, kBehaviorKinds> first{};
  };

  SessionId session_id = 0;
  /// Every recorded timestamp is strictly before this.
  Timestamp before = 0;
  /// Sorted by item.
  std::vector<History> items;

  const History* find(ItemId item) const;
  bool has_history(ItemId item) const { return find(item) != nullptr; }
};

/// History of the query's session strictly before the query, taken from
/// `context` (any dataset holding the session's events).
SessionContext build_session_context(const Dataset& context, const QueryRecord& query);

struct SessionFlags {
  bool clicked_before = false;
  bool viewed_before = false;
  bool purchased_before = false;

  bool operator==(const SessionFlags&) const = default;
};

SessionFlags session_flags(const SessionContext& ctx, ItemId item);

// --- Assembly -------------------------------------------------------------------------------

/// Statistic tables fitted on the training split.
struct FeatureTables {
  ProductStatsTable stats;
  std::vector<TimeBucketedStats> time_stats;
  std::unordered_map<ItemId, ProductRecord> products;
};

FeatureTables compute_feature_tables(const Dataset& train);

/// Dense column names and log flags for the given tables, values unset.
std::vector<DenseColumn> dense_layout(const FeatureTables& tables);

/// Raw (untransformed) dense statistics of one item in dense_layout order.
std::vector<double> raw_dense_values(const FeatureTables& tables, ItemId item);

/// Assembles one (query, item) vector. The dense slot is empty for items
/// absent from the training logs. Throws UnknownItem.
FeatureVector assemble_features(const QueryRecord& query, ItemId item, const FeatureTables& tables,
                                const SessionContext& ctx, const FeatureSpace& space);

struct FeatureOptions {
  std::size_t category_width = std::size_t{1} << 18;
  std::size_t cross_width = std::size_t{1} << 18;
};

/// Frozen tables plus a fitted space, with the per-item dense block cached.
/// Safe to share between threads.
class FeatureExtractor {
 public:
  /// Fits tables on `train` and z-score constants over its (query, item) pairs.
  static FeatureExtractor fit(const Dataset& train, const FeatureOptions& options);

  const FeatureSpace& space() const noexcept { return space_; }
  const FeatureTables& tables() const noexcept { return tables_; }

  FeatureVector extract(const QueryRecord& query, ItemId item, const SessionContext& ctx) const;

 private:
  FeatureTables tables_;
  FeatureSpace space_;
  std::unordered_map<ItemId, std::vector<FeatureEntry>> dense_cache_;
};

/// "index:value" pairs separated by spaces.
std::string format_sparse(const FeatureVector& v);

}  // namespace serprank
