#include "serprank/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <unordered_set>

#include "json.hpp"
#include "serprank/error.hpp"

namespace serprank {

// --- Product statistics --------------------------------------------------------

bool ProductStats::logged() const {
  return std::any_of(counts.begin(), counts.end(), [](std::int64_t c) { return c > 0; });
}

double price_feature(std::int64_t behavior_count, double price) {
  return static_cast<double>(behavior_count) / (price + 1.0);
}

double percent_rank(std::size_t position, std::size_t list_len) {
  if (list_len == 0 || position >= list_len) {
    throw OutOfRange("position " + std::to_string(position) + " outside list of length " +
                     std::to_string(list_len));
  }
  if (list_len == 1) return 0.0;
  return static_cast<double>(position) / static_cast<double>(list_len - 1);
}

namespace {

double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::size_t stat_of(BehaviorKind k) { return static_cast<std::size_t>(k) + 1; }

}  // namespace

ProductStatsTable compute_global_stats(const Dataset& train) {
  ProductStatsTable table;
  table.reserve(train.products().size());
  for (const auto& p : train.products()) {
    table[p.item_id].word_length = static_cast<std::int64_t>(p.name_tokens.size());
  }
  std::unordered_map<ItemId, std::array<std::unordered_set<UserId>, kStatistics>> users;
  for (const auto& q : train.queries()) {
    for (ItemId item : q.shown_items) {
      ++table[item].counts[0];
      if (q.user_id) users[item][0].insert(*q.user_id);
    }
  }
  for (const auto& e : train.events()) {
    const std::size_t s = stat_of(e.kind);
    ++table[e.item_id].counts[s];
    if (e.user_id) users[e.item_id][s].insert(*e.user_id);
  }
  for (auto& [item, st] : table) {
    if (const auto it = users.find(item); it != users.end()) {
      for (std::size_t s = 0; s < kStatistics; ++s) {
        st.distinct_users[s] = static_cast<std::int64_t>(it->second[s].size());
      }
    }
    st.ctr = ratio(st.count(Statistic::Click), st.count(Statistic::Show));
    st.view_rate = ratio(st.count(Statistic::View), st.count(Statistic::Show));
    st.cvr = ratio(st.count(Statistic::Purchase), st.count(Statistic::Click));
    const ProductRecord* p = train.find_product(item);
    const double price = p ? p->price : 0.0;
    for (std::size_t k = 0; k < kBehaviorKinds; ++k) {
      st.price_feat[k] = price_feature(st.counts[k + 1], price);
    }
  }
  return table;
}

// --- Time-local statistics -------------------------------------------------------

Timestamp interval_length(TimeInterval interval) noexcept {
  switch (interval) {
    case TimeInterval::Week: return 7 * kMillisPerDay;
    case TimeInterval::HalfMonth: return 15 * kMillisPerDay;
    case TimeInterval::Month: return 30 * kMillisPerDay;
    case TimeInterval::TwoMonth: return 60 * kMillisPerDay;
  }
  return kMillisPerDay;
}

const char* to_string(TimeInterval interval) noexcept {
  switch (interval) {
    case TimeInterval::Week: return "week";
    case TimeInterval::HalfMonth: return "halfmonth";
    case TimeInterval::Month: return "month";
    case TimeInterval::TwoMonth: return "twomonth";
  }
  return "?";
}

Timestamp utc_midnight(Timestamp ts) noexcept {
  Timestamp day = ts / kMillisPerDay;
  if (ts % kMillisPerDay < 0) --day;
  return day * kMillisPerDay;
}

std::size_t TimeBucketedStats::bucket_of(Timestamp ts) const {
  if (ts < origin) throw OutOfRange("timestamp before bucket origin");
  return static_cast<std::size_t>((ts - origin) / interval_length(interval));
}

std::int64_t TimeBucketedStats::count(ItemId item, Statistic s, std::size_t bucket) const {
  const auto it = counts.find(item);
  if (it == counts.end() || bucket >= buckets) return 0;
  return it->second[static_cast<std::size_t>(s) * buckets + bucket];
}

TimeBucketedStats compute_time_local_stats(const Dataset& train, TimeInterval interval) {
  TimeBucketedStats out;
  out.interval = interval;
  out.origin = utc_midnight(train.t_min());
  out.buckets =
      static_cast<std::size_t>((train.t_max() - out.origin) / interval_length(interval)) + 1;
  auto add = [&](ItemId item, std::size_t stat, Timestamp ts) {
    auto& series = out.counts[item];
    if (series.empty()) series.assign(kStatistics * out.buckets, 0);
    ++series[stat * out.buckets + out.bucket_of(ts)];
  };
  for (const auto& q : train.queries()) {
    for (ItemId item : q.shown_items) add(item, 0, q.event_ts);
  }
  for (const auto& e : train.events()) add(e.item_id, stat_of(e.kind), e.event_ts);
  return out;
}

// --- Hashed token features -------------------------------------------------------------

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

std::uint64_t hash_pair(std::int64_t a, std::uint8_t separator, std::int64_t b) {
  std::array<std::uint8_t, 17> buf{};
  const auto ua = static_cast<std::uint64_t>(a);
  const auto ub = static_cast<std::uint64_t>(b);
  for (std::size_t i = 0; i < 8; ++i) {
    buf[i] = static_cast<std::uint8_t>(ua >> (8 * i));
    buf[9 + i] = static_cast<std::uint8_t>(ub >> (8 * i));
  }
  buf[8] = separator;
  return fnv1a64(buf);
}

}  // namespace

std::size_t category_token_index(CategoryId category, TokenId token, std::size_t width) {
  if (width == 0) throw OutOfRange("hash width must be >= 1");
  return static_cast<std::size_t>(hash_pair(category, kCategoryTokenSeparator, token) % width);
}

std::vector<std::size_t> cross_token_indices(std::span<const TokenId> query_tokens,
                                             std::span<const TokenId> product_tokens,
                                             std::size_t width) {
  if (width == 0) throw OutOfRange("hash width must be >= 1");
  std::vector<std::size_t> out;
  out.reserve(query_tokens.size() * product_tokens.size());
  for (TokenId q : query_tokens) {
    for (TokenId p : product_tokens) {
      out.push_back(static_cast<std::size_t>(hash_pair(q, kCrossTokenSeparator, p) % width));
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// --- Feature space -----------------------------------------------------------------------

const char* to_string(SlotKind kind) noexcept {
  switch (kind) {
    case SlotKind::Dense: return "dense";
    case SlotKind::Position: return "position";
    case SlotKind::Session: return "session";
    case SlotKind::CategoryToken: return "category_token";
    case SlotKind::CrossToken: return "cross_token";
  }
  return "?";
}

FeatureSpace::FeatureSpace(std::vector<DenseColumn> dense, std::size_t category_width,
                           std::size_t cross_width)
    : dense_(std::move(dense)) {
  if (category_width == 0 || cross_width == 0) throw OutOfRange("slot widths must be >= 1");
  const std::array<std::size_t, kSlotKinds> widths = {dense_.size(), 1, 3, category_width,
                                                      cross_width};
  std::size_t offset = 0;
  for (std::size_t k = 0; k < kSlotKinds; ++k) {
    slots_.push_back(Slot{static_cast<SlotKind>(k), offset, widths[k]});
    offset += widths[k];
  }
  if (offset > std::numeric_limits<std::uint32_t>::max()) {
    throw OutOfRange("feature space exceeds 32-bit indexing");
  }
}

const Slot* FeatureSpace::slot_of(std::size_t index) const noexcept {
  for (const auto& s : slots_) {
    if (s.contains(index)) return &s;
  }
  return nullptr;
}

namespace {

constexpr const char* kSpaceFormat = "serprank.feature_space/1";

nlohmann::ordered_json space_json(const FeatureSpace& space) {
  nlohmann::ordered_json j;
  j["format"] = kSpaceFormat;
  j["total_dim"] = space.total_dim();
  auto& slots = j["slots"] = nlohmann::ordered_json::array();
  for (const auto& s : space.slots()) {
    slots.push_back({{"name", to_string(s.kind)}, {"offset", s.offset}, {"width", s.width}});
  }
  auto& dense = j["dense"] = nlohmann::ordered_json::array();
  for (const auto& c : space.dense_columns()) {
    dense.push_back(
        {{"name", c.name}, {"log", c.log_transform}, {"mean", c.mean}, {"stddev", c.stddev}});
  }
  return j;
}

}  // namespace

std::string FeatureSpace::to_json() const { return space_json(*this).dump(2) + "\n"; }

FeatureSpace FeatureSpace::from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != kSpaceFormat) throw DataError("unsupported feature space format");
    std::vector<DenseColumn> dense;
    for (const auto& c : j.at("dense")) {
      dense.push_back(DenseColumn{c.at("name").get<std::string>(), c.at("log").get<bool>(),
                                  c.at("mean").get<double>(), c.at("stddev").get<double>()});
    }
    const auto& slots = j.at("slots");
    if (slots.size() != kSlotKinds) throw DataError("feature space must have 5 slots");
    FeatureSpace space(std::move(dense),
                       slots.at(static_cast<std::size_t>(SlotKind::CategoryToken)).at("width"),
                       slots.at(static_cast<std::size_t>(SlotKind::CrossToken)).at("width"));
    for (std::size_t k = 0; k < kSlotKinds; ++k) {
      const auto& s = space.slots_[k];
      if (slots[k].at("name") != to_string(s.kind) || slots[k].at("offset") != s.offset ||
          slots[k].at("width") != s.width) {
        throw DataError("feature space slot layout is inconsistent");
      }
    }
    return space;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("feature space json: ") + e.what());
  }
}

std::string FeatureSpace::checksum() const {
  const std::string canonical = space_json(*this).dump();
  const auto h = fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(canonical.data()),
                                   canonical.size()));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// --- FeatureVector ------------------------------------------------------------------------

FeatureVector FeatureVector::from_entries(std::vector<FeatureEntry> entries) {
  std::stable_sort(entries.begin(), entries.end(),
                   [](const FeatureEntry& a, const FeatureEntry& b) { return a.index < b.index; });
  entries.erase(std::unique(entries.begin(), entries.end(),
                            [](const FeatureEntry& a, const FeatureEntry& b) {
                              return a.index == b.index;
                            }),
                entries.end());
  FeatureVector v;
  v.entries_ = std::move(entries);
  return v;
}

double FeatureVector::value(std::size_t index) const noexcept {
  const auto it = std::lower_bound(
      entries_.begin(), entries_.end(), index,
      [](const FeatureEntry& e, std::size_t i) { return e.index < i; });
  return it != entries_.end() && it->index == index ? it->value : 0.0;
}

std::size_t FeatureVector::min_dim() const noexcept {
  return entries_.empty() ? 0 : std::size_t{entries_.back().index} + 1;
}

FeatureVector project(const FeatureVector& v, const FeatureSpace& space,
                      std::span<const SlotKind> kinds) {
  std::vector<FeatureEntry> kept;
  for (const auto& e : v.entries()) {
    for (SlotKind k : kinds) {
      if (space.slot(k).contains(e.index)) {
        kept.push_back(e);
        break;
      }
    }
  }
  return FeatureVector::from_entries(std::move(kept));
}

// --- Session context ----------------------------------------------------------------------

const SessionContext::History* SessionContext::find(ItemId item) const {
  const auto it = std::lower_bound(items.begin(), items.end(), item,
                                   [](const History& h, ItemId i) { return h.item < i; });
  return it != items.end() && it->item == item ? &*it : nullptr;
}

SessionContext build_session_context(const Dataset& context, const QueryRecord& query) {
  SessionContext ctx;
  ctx.session_id = query.session_id;
  ctx.before = query.event_ts;
  for (const auto& e : context.session_events(query.session_id)) {
    if (e.event_ts >= query.event_ts) break;
    auto it = std::lower_bound(
        ctx.items.begin(), ctx.items.end(), e.item_id,
        [](const SessionContext::History& h, ItemId i) { return h.item < i; });
    if (it == ctx.items.end() || it->item != e.item_id) {
      it = ctx.items.insert(it, SessionContext::History{e.item_id, {}});
    }
    auto& first = it->first[static_cast<std::size_t>(e.kind)];
    if (!first) first = e.event_ts;
  }
  return ctx;
}

SessionFlags session_flags(const SessionContext& ctx, ItemId item) {
  const auto* h = ctx.find(item);
  if (!h) return {};
  return SessionFlags{h->first[0].has_value(), h->first[1].has_value(), h->first[2].has_value()};
}

// --- Assembly -------------------------------------------------------------------------------

FeatureTables compute_feature_tables(const Dataset& train) {
  if (train.queries().empty()) throw EmptyTrainingSet("feature tables need training queries");
  FeatureTables t;
  t.stats = compute_global_stats(train);
  for (TimeInterval interval : kAllIntervals) {
    t.time_stats.push_back(compute_time_local_stats(train, interval));
  }
  for (const auto& p : train.products()) t.products.emplace(p.item_id, p);
  return t;
}

namespace {

constexpr std::array<const char*, kStatistics> kStatNames = {"show", "click", "view", "purchase"};

}  // namespace

std::vector<DenseColumn> dense_layout(const FeatureTables& tables) {
  std::vector<DenseColumn> cols;
  for (const char* s : kStatNames) cols.push_back({std::string(s) + "_count", true});
  for (const char* s : kStatNames) cols.push_back({std::string(s) + "_users", true});
  cols.push_back({"ctr", false});
  cols.push_back({"view_rate", false});
  cols.push_back({"cvr", false});
  cols.push_back({"word_length", false});
  for (std::size_t k = 0; k < kBehaviorKinds; ++k) {
    cols.push_back({std::string("price_") + to_string(static_cast<BehaviorKind>(k)), true});
  }
  for (const auto& ts : tables.time_stats) {
    for (const char* s : kStatNames) {
      for (std::size_t l = 0; l < ts.buckets; ++l) {
        cols.push_back(
            {std::string(to_string(ts.interval)) + "_" + s + "_" + std::to_string(l), true});
      }
    }
  }
  return cols;
}

std::vector<double> raw_dense_values(const FeatureTables& tables, ItemId item) {
  std::vector<double> v;
  const auto it = tables.stats.find(item);
  const ProductStats st = it == tables.stats.end() ? ProductStats{} : it->second;
  for (auto c : st.counts) v.push_back(static_cast<double>(c));
  for (auto c : st.distinct_users) v.push_back(static_cast<double>(c));
  v.push_back(st.ctr);
  v.push_back(st.view_rate);
  v.push_back(st.cvr);
  v.push_back(static_cast<double>(st.word_length));
  for (double p : st.price_feat) v.push_back(p);
  for (const auto& ts : tables.time_stats) {
    for (std::size_t s = 0; s < kStatistics; ++s) {
      for (std::size_t l = 0; l < ts.buckets; ++l) {
        v.push_back(static_cast<double>(ts.count(item, static_cast<Statistic>(s), l)));
      }
    }
  }
  return v;
}

namespace {

void append_dense(const FeatureTables& tables, const FeatureSpace& space, ItemId item,
                  std::vector<FeatureEntry>& out) {
  const auto it = tables.stats.find(item);
  if (it == tables.stats.end() || !it->second.logged()) return;
  const auto raw = raw_dense_values(tables, item);
  const auto cols = space.dense_columns();
  if (raw.size() != cols.size()) throw DimensionMismatch("dense layout does not match tables");
  const std::size_t offset = space.slot(SlotKind::Dense).offset;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double x = cols[i].log_transform ? std::log1p(raw[i]) : raw[i];
    const double z = (x - cols[i].mean) / cols[i].stddev;
    if (z != 0.0) {
      out.push_back({static_cast<std::uint32_t>(offset + i), static_cast<float>(z)});
    }
  }
}

void append_non_dense(const QueryRecord& query, ItemId item, const ProductRecord& product,
                      const SessionContext& ctx, const FeatureSpace& space,
                      std::vector<FeatureEntry>& out) {
  const auto pos = std::find(query.shown_items.begin(), query.shown_items.end(), item);
  if (pos == query.shown_items.end()) {
    throw UnknownItem("item " + std::to_string(item) + " not shown by query " +
                      std::to_string(query.query_id));
  }
  const double rank = percent_rank(static_cast<std::size_t>(pos - query.shown_items.begin()),
                                   query.shown_items.size());
  if (rank != 0.0) {
    out.push_back({static_cast<std::uint32_t>(space.slot(SlotKind::Position).offset),
                   static_cast<float>(rank)});
  }

  const auto flags = session_flags(ctx, item);
  const std::size_t session = space.slot(SlotKind::Session).offset;
  if (flags.clicked_before) out.push_back({static_cast<std::uint32_t>(session), 1.0f});
  if (flags.viewed_before) out.push_back({static_cast<std::uint32_t>(session + 1), 1.0f});
  if (flags.purchased_before) out.push_back({static_cast<std::uint32_t>(session + 2), 1.0f});

  const Slot& cat = space.slot(SlotKind::CategoryToken);
  for (TokenId t : product.name_tokens) {
    out.push_back({static_cast<std::uint32_t>(
                       cat.offset + category_token_index(product.category_id, t, cat.width)),
                   1.0f});
  }
  if (query.scenario == Scenario::Full) {
    const Slot& cross = space.slot(SlotKind::CrossToken);
    for (std::size_t i : cross_token_indices(query.query_tokens, product.name_tokens, cross.width)) {
      out.push_back({static_cast<std::uint32_t>(cross.offset + i), 1.0f});
    }
  }
}

const ProductRecord& lookup_product(const FeatureTables& tables, ItemId item) {
  const auto it = tables.products.find(item);
  if (it == tables.products.end()) {
    throw UnknownItem("item " + std::to_string(item) + " has no product record");
  }
  return it->second;
}

}  // namespace

FeatureVector assemble_features(const QueryRecord& query, ItemId item, const FeatureTables& tables,
                                const SessionContext& ctx, const FeatureSpace& space) {
  const ProductRecord& product = lookup_product(tables, item);
  std::vector<FeatureEntry> entries;
  append_dense(tables, space, item, entries);
  append_non_dense(query, item, product, ctx, space, entries);
  return FeatureVector::from_entries(std::move(entries));
}

FeatureExtractor FeatureExtractor::fit(const Dataset& train, const FeatureOptions& options) {
  FeatureExtractor fx;
  fx.tables_ = compute_feature_tables(train);
  auto cols = dense_layout(fx.tables_);

  // Every train (query, item) pair counts once, i.e. each item with weight
  // equal to its train show count. Accumulate in item-id order.
  std::vector<ItemId> items;
  for (const auto& [item, st] : fx.tables_.stats) {
    if (st.count(Statistic::Show) > 0) items.push_back(item);
  }
  std::sort(items.begin(), items.end());
  std::vector<std::vector<double>> transformed;
  std::vector<double> weights;
  double total = 0.0;
  for (ItemId item : items) {
    auto raw = raw_dense_values(fx.tables_, item);
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (cols[i].log_transform) raw[i] = std::log1p(raw[i]);
    }
    transformed.push_back(std::move(raw));
    weights.push_back(static_cast<double>(fx.tables_.stats.at(item).count(Statistic::Show)));
    total += weights.back();
  }
  for (std::size_t c = 0; c < cols.size(); ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < transformed.size(); ++r) mean += weights[r] * transformed[r][c];
    mean = total > 0 ? mean / total : 0.0;
    double var = 0.0;
    for (std::size_t r = 0; r < transformed.size(); ++r) {
      const double d = transformed[r][c] - mean;
      var += weights[r] * d * d;
    }
    var = total > 0 ? var / total : 0.0;
    cols[c].mean = mean;
    cols[c].stddev = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  fx.space_ = FeatureSpace(std::move(cols), options.category_width, options.cross_width);

  for (const auto& [item, st] : fx.tables_.stats) {
    std::vector<FeatureEntry> dense;
    append_dense(fx.tables_, fx.space_, item, dense);
    if (!dense.empty()) fx.dense_cache_.emplace(item, std::move(dense));
  }
  return fx;
}

FeatureVector FeatureExtractor::extract(const QueryRecord& query, ItemId item,
                                        const SessionContext& ctx) const {
  const ProductRecord& product = lookup_product(tables_, item);
  std::vector<FeatureEntry> entries;
  if (const auto it = dense_cache_.find(item); it != dense_cache_.end()) {
    entries.reserve(it->second.size() + 32);
    entries = it->second;
  }
  append_non_dense(query, item, product, ctx, space_, entries);
  return FeatureVector::from_entries(std::move(entries));
}

std::string format_sparse(const FeatureVector& v) {
  std::string out;
  for (const auto& e : v.entries()) {
    if (!out.empty()) out.push_back(' ');
    out += std::to_string(e.index);
    out.push_back(':');
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, e.value);
    out.append(buf, r.ptr);
  }
  return out;
}

}  // namespace serprank
