#include "serprank/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "csv.hpp"
#include "serprank/error.hpp"

namespace serprank {

const char* to_string(Scenario s) noexcept { return s == Scenario::Full ? "full" : "less"; }

const char* to_string(BehaviorKind k) noexcept {
  switch (k) {
    case BehaviorKind::Click: return "click";
    case BehaviorKind::View: return "view";
    case BehaviorKind::Purchase: return "purchase";
  }
  return "?";
}

bool session_order_less(const BehaviorEvent& a, const BehaviorEvent& b) noexcept {
  if (a.event_ts != b.event_ts) return a.event_ts < b.event_ts;
  if (a.kind != b.kind) return static_cast<int>(a.kind) < static_cast<int>(b.kind);
  return a.item_id < b.item_id;
}

void validate_query(const QueryRecord& q) {
  const std::string who = "query " + std::to_string(q.query_id) + ": ";
  if (q.scenario == Scenario::Full) {
    if (q.query_tokens.empty()) throw IntegrityError(who + "query-full without tokens");
    if (q.category_id) throw IntegrityError(who + "query-full with a category");
  } else {
    if (!q.category_id) throw IntegrityError(who + "query-less without a category");
    if (!q.query_tokens.empty()) throw IntegrityError(who + "query-less with tokens");
  }
  if (q.shown_items.empty()) throw IntegrityError(who + "no shown items");
  std::vector<ItemId> sorted = q.shown_items;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw IntegrityError(who + "duplicate shown items");
  }
}

// --- Dataset -----------------------------------------------------------------

const QueryRecord* Dataset::find_query(QueryId id) const {
  const auto it = query_index_.find(id);
  return it == query_index_.end() ? nullptr : &queries_[it->second];
}

const ProductRecord* Dataset::find_product(ItemId id) const {
  const auto it = product_index_.find(id);
  return it == product_index_.end() ? nullptr : &products_[it->second];
}

std::span<const BehaviorEvent> Dataset::session_events(SessionId id) const {
  const auto it = session_event_range_.find(id);
  if (it == session_event_range_.end()) return {};
  return std::span<const BehaviorEvent>(events_).subspan(it->second.first,
                                                         it->second.second - it->second.first);
}

std::vector<const QueryRecord*> Dataset::session_queries(SessionId id) const {
  std::vector<const QueryRecord*> out;
  const auto it = session_query_index_.find(id);
  if (it == session_query_index_.end()) return out;
  out.reserve(it->second.size());
  for (std::size_t i : it->second) out.push_back(&queries_[i]);
  return out;
}

namespace {

bool event_storage_less(const BehaviorEvent& a, const BehaviorEvent& b) noexcept {
  if (a.session_id != b.session_id) return a.session_id < b.session_id;
  if (session_order_less(a, b)) return true;
  if (session_order_less(b, a)) return false;
  // Full tie: fall back to the remaining fields so the order is total.
  if (a.query_id != b.query_id) return a.query_id < b.query_id;
  if (a.user_id != b.user_id) return a.user_id < b.user_id;
  return a.order_id < b.order_id;
}

}  // namespace

Dataset Dataset::assemble(std::vector<QueryRecord> queries, std::vector<BehaviorEvent> events,
                          std::vector<ProductRecord> products, bool strict,
                          ClickQueries click_queries) {
  Dataset ds;
  ds.products_ = std::move(products);
  ds.product_index_.reserve(ds.products_.size());
  for (std::size_t i = 0; i < ds.products_.size(); ++i) {
    const auto& p = ds.products_[i];
    if (!(p.price >= 0.0) || !std::isfinite(p.price)) {
      throw IntegrityError("product " + std::to_string(p.item_id) + ": negative price");
    }
    if (!ds.product_index_.emplace(p.item_id, i).second) {
      throw IntegrityError("duplicate product id " + std::to_string(p.item_id));
    }
  }

  ds.queries_ = std::move(queries);
  ds.query_index_.reserve(ds.queries_.size());
  for (std::size_t i = 0; i < ds.queries_.size(); ++i) {
    const auto& q = ds.queries_[i];
    validate_query(q);
    if (!ds.query_index_.emplace(q.query_id, i).second) {
      throw IntegrityError("duplicate query id " + std::to_string(q.query_id));
    }
    for (ItemId item : q.shown_items) {
      if (!ds.product_index_.contains(item)) {
        throw IntegrityError("query " + std::to_string(q.query_id) + " shows unknown item " +
                             std::to_string(item));
      }
    }
    ds.session_query_index_[q.session_id].push_back(i);
  }
  for (auto& [session, idx] : ds.session_query_index_) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const auto& qa = ds.queries_[a];
      const auto& qb = ds.queries_[b];
      return std::pair(qa.event_ts, qa.query_id) < std::pair(qb.event_ts, qb.query_id);
    });
  }

  auto violation = [&](const BehaviorEvent& e) -> std::optional<std::string> {
    const std::string who = std::string(to_string(e.kind)) + " on item " +
                            std::to_string(e.item_id) + " in session " +
                            std::to_string(e.session_id);
    if (!ds.product_index_.contains(e.item_id)) return who + ": unknown item";
    if (e.kind != BehaviorKind::Click) return std::nullopt;
    if (!e.query_id) return who + ": click without query id";
    const QueryRecord* q = ds.find_query(*e.query_id);
    if (!q) {
      if (click_queries == ClickQueries::MayBeForeign) return std::nullopt;
      return who + ": unknown query " + std::to_string(*e.query_id);
    }
    if (q->session_id != e.session_id) return who + ": query belongs to another session";
    if (std::find(q->shown_items.begin(), q->shown_items.end(), e.item_id) ==
        q->shown_items.end()) {
      return who + ": item not shown by query " + std::to_string(*e.query_id);
    }
    return std::nullopt;
  };

  ds.events_.reserve(events.size());
  for (auto& e : events) {
    if (auto why = violation(e)) {
      if (strict) throw IntegrityError(*why);
      ++ds.dropped_events_;
      continue;
    }
    ds.events_.push_back(std::move(e));
  }
  std::sort(ds.events_.begin(), ds.events_.end(), event_storage_less);
  for (std::size_t i = 0; i < ds.events_.size();) {
    std::size_t j = i;
    while (j < ds.events_.size() && ds.events_[j].session_id == ds.events_[i].session_id) ++j;
    ds.session_event_range_.emplace(ds.events_[i].session_id, std::pair(i, j));
    i = j;
  }

  bool any = false;
  auto extend = [&](Timestamp ts) {
    if (!any) {
      ds.t_min_ = ds.t_max_ = ts;
      any = true;
    } else {
      ds.t_min_ = std::min(ds.t_min_, ts);
      ds.t_max_ = std::max(ds.t_max_, ts);
    }
  };
  for (const auto& q : ds.queries_) extend(q.event_ts);
  for (const auto& e : ds.events_) extend(e.event_ts);
  return ds;
}

Dataset build_dataset(std::vector<QueryRecord> queries, std::vector<BehaviorEvent> events,
                      std::vector<ProductRecord> products, bool strict) {
  return Dataset::assemble(std::move(queries), std::move(events), std::move(products), strict,
                           Dataset::ClickQueries::MustResolve);
}

std::pair<Dataset, Dataset> split_by_time(const Dataset& ds, Timestamp cutoff_ts) {
  std::vector<QueryRecord> train_q, valid_q;
  for (const auto& q : ds.queries()) (q.event_ts < cutoff_ts ? train_q : valid_q).push_back(q);
  if (train_q.empty() || valid_q.empty()) {
    throw EmptySplit("cutoff " + std::to_string(cutoff_ts) + " leaves " +
                     std::to_string(train_q.size()) + " train and " +
                     std::to_string(valid_q.size()) + " validation queries");
  }
  std::vector<BehaviorEvent> train_e, valid_e;
  for (const auto& e : ds.events()) (e.event_ts < cutoff_ts ? train_e : valid_e).push_back(e);
  const std::vector<ProductRecord> products(ds.products().begin(), ds.products().end());
  auto train = Dataset::assemble(std::move(train_q), std::move(train_e), products, true,
                                 Dataset::ClickQueries::MayBeForeign);
  auto valid = Dataset::assemble(std::move(valid_q), std::move(valid_e), products, true,
                                 Dataset::ClickQueries::MayBeForeign);
  return {std::move(train), std::move(valid)};
}

Timestamp cutoff_for_fraction(const Dataset& ds, double fraction) {
  std::vector<Timestamp> ts;
  ts.reserve(ds.queries().size());
  for (const auto& q : ds.queries()) ts.push_back(q.event_ts);
  if (ts.size() < 2) throw EmptySplit("need at least two queries to split");
  std::sort(ts.begin(), ts.end());
  auto pos = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(ts.size())));
  pos = std::clamp<std::size_t>(pos, 1, ts.size() - 1);
  return ts[pos];
}

// --- CSV tables --------------------------------------------------------------

const char* table_file_name(TableKind kind) noexcept {
  switch (kind) {
    case TableKind::Queries: return "queries.csv";
    case TableKind::Clicks: return "clicks.csv";
    case TableKind::Views: return "views.csv";
    case TableKind::Purchases: return "purchases.csv";
    case TableKind::Products: return "products.csv";
  }
  return "";
}

const char* table_header(TableKind kind) noexcept {
  switch (kind) {
    case TableKind::Queries:
      return "query_id,session_id,user_id,event_ts,scenario,tokens,category_id,items,is_test";
    case TableKind::Clicks: return "query_id,session_id,user_id,item_id,event_ts";
    case TableKind::Views: return "session_id,user_id,item_id,event_ts";
    case TableKind::Purchases: return "session_id,user_id,item_id,event_ts,order_id";
    case TableKind::Products: return "item_id,category_id,price,name_tokens";
  }
  return "";
}

namespace {

std::vector<std::string> split_header(std::string_view header) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t end = header.find(',', pos);
    out.emplace_back(header.substr(pos, end - pos));
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  return out;
}

/// Streams the data rows of one table, checking header and arity.
class TableReader {
 public:
  TableReader(const std::filesystem::path& path, TableKind kind)
      : in_(path, std::ios::binary), reader_(in_), expected_(split_header(table_header(kind))) {
    if (!in_) throw UsageError("cannot open " + path.string());
    std::vector<std::string> header;
    if (!reader_.next(header)) throw MissingHeader(path.string() + ": empty file");
    if (!header.empty() && header[0].starts_with("\xEF\xBB\xBF")) header[0].erase(0, 3);
    if (header != expected_) {
      throw MissingHeader(path.string() + ": expected header '" + table_header(kind) + "'");
    }
  }

  bool next(std::vector<std::string>& row) {
    while (reader_.next(row)) {
      if (row.size() == 1 && row[0].empty()) continue;  // blank line
      if (row.size() != expected_.size()) {
        fail("expected " + std::to_string(expected_.size()) + " fields, got " +
             std::to_string(row.size()));
      }
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& reason) const {
    throw MalformedRow(reader_.line_no(), reason);
  }

  std::int64_t int_field(const std::vector<std::string>& row, std::size_t i) const {
    const auto v = csv::parse_int(row[i]);
    if (!v) fail("field '" + expected_[i] + "' is not an integer: '" + row[i] + "'");
    return *v;
  }

  std::optional<std::int64_t> optional_int(const std::vector<std::string>& row,
                                           std::size_t i) const {
    if (row[i].empty()) return std::nullopt;
    return int_field(row, i);
  }

  std::vector<std::int64_t> list_field(const std::vector<std::string>& row, std::size_t i) const {
    const auto v = csv::parse_int_list(row[i]);
    if (!v) fail("field '" + expected_[i] + "' is not an integer list");
    return *v;
  }

 private:
  std::ifstream in_;
  csv::Reader reader_;
  std::vector<std::string> expected_;
};

}  // namespace

std::vector<QueryRecord> load_queries(const std::filesystem::path& path) {
  TableReader t(path, TableKind::Queries);
  std::vector<QueryRecord> out;
  std::vector<std::string> row;
  while (t.next(row)) {
    QueryRecord q;
    q.query_id = t.int_field(row, 0);
    q.session_id = t.int_field(row, 1);
    q.user_id = t.optional_int(row, 2);
    q.event_ts = t.int_field(row, 3);
    if (row[4] == "full") {
      q.scenario = Scenario::Full;
    } else if (row[4] == "less") {
      q.scenario = Scenario::Less;
    } else {
      t.fail("scenario must be 'full' or 'less', got '" + row[4] + "'");
    }
    q.query_tokens = t.list_field(row, 5);
    q.category_id = t.optional_int(row, 6);
    q.shown_items = t.list_field(row, 7);
    if (row[8] == "true" || row[8] == "1") {
      q.is_test = true;
    } else if (row[8] == "false" || row[8] == "0") {
      q.is_test = false;
    } else {
      t.fail("is_test must be true/false, got '" + row[8] + "'");
    }
    try {
      validate_query(q);
    } catch (const IntegrityError& e) {
      t.fail(e.what());
    }
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<BehaviorEvent> load_events(const std::filesystem::path& path, BehaviorKind kind) {
  const TableKind table = kind == BehaviorKind::Click  ? TableKind::Clicks
                          : kind == BehaviorKind::View ? TableKind::Views
                                                       : TableKind::Purchases;
  TableReader t(path, table);
  std::vector<BehaviorEvent> out;
  std::vector<std::string> row;
  while (t.next(row)) {
    BehaviorEvent e;
    e.kind = kind;
    std::size_t col = 0;
    if (kind == BehaviorKind::Click) {
      e.query_id = t.int_field(row, col++);
    }
    e.session_id = t.int_field(row, col++);
    e.user_id = t.optional_int(row, col++);
    e.item_id = t.int_field(row, col++);
    e.event_ts = t.int_field(row, col++);
    if (kind == BehaviorKind::Purchase) e.order_id = t.optional_int(row, col++);
    out.push_back(e);
  }
  return out;
}

std::vector<ProductRecord> load_products(const std::filesystem::path& path) {
  TableReader t(path, TableKind::Products);
  std::vector<ProductRecord> out;
  std::vector<std::string> row;
  while (t.next(row)) {
    ProductRecord p;
    p.item_id = t.int_field(row, 0);
    p.category_id = t.int_field(row, 1);
    const auto price = csv::parse_double(row[2]);
    if (!price || *price < 0.0) t.fail("price must be a non-negative number: '" + row[2] + "'");
    p.price = *price;
    p.name_tokens = t.list_field(row, 3);
    out.push_back(std::move(p));
  }
  return out;
}

TableRows load_table(const std::filesystem::path& path, TableKind kind) {
  switch (kind) {
    case TableKind::Queries: return load_queries(path);
    case TableKind::Clicks: return load_events(path, BehaviorKind::Click);
    case TableKind::Views: return load_events(path, BehaviorKind::View);
    case TableKind::Purchases: return load_events(path, BehaviorKind::Purchase);
    case TableKind::Products: return load_products(path);
  }
  return {};
}

Dataset load_dataset(const std::filesystem::path& dir, bool strict) {
  auto queries = load_queries(dir / table_file_name(TableKind::Queries));
  std::vector<BehaviorEvent> events;
  for (auto [table, kind] : {std::pair{TableKind::Clicks, BehaviorKind::Click},
                             std::pair{TableKind::Views, BehaviorKind::View},
                             std::pair{TableKind::Purchases, BehaviorKind::Purchase}}) {
    auto part = load_events(dir / table_file_name(table), kind);
    events.insert(events.end(), std::make_move_iterator(part.begin()),
                  std::make_move_iterator(part.end()));
  }
  auto products = load_products(dir / table_file_name(TableKind::Products));
  return build_dataset(std::move(queries), std::move(events), std::move(products), strict);
}

std::string format_decimal(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

namespace {

std::string opt(const std::optional<std::int64_t>& v) {
  return v ? std::to_string(*v) : std::string();
}

std::ofstream open_table(const std::filesystem::path& dir, TableKind kind) {
  std::ofstream out(dir / table_file_name(kind), std::ios::binary);
  if (!out) throw UsageError("cannot write " + (dir / table_file_name(kind)).string());
  out << table_header(kind) << '\n';
  return out;
}

}  // namespace

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_table(dir, TableKind::Queries);
    for (const auto& q : ds.queries()) {
      out << q.query_id << ',' << q.session_id << ',' << opt(q.user_id) << ',' << q.event_ts
          << ',' << to_string(q.scenario) << ',' << csv::quote_always(csv::join_ints(q.query_tokens))
          << ',' << opt(q.category_id) << ',' << csv::quote_always(csv::join_ints(q.shown_items))
          << ',' << (q.is_test ? "true" : "false") << '\n';
    }
  }
  auto clicks = open_table(dir, TableKind::Clicks);
  auto views = open_table(dir, TableKind::Views);
  auto purchases = open_table(dir, TableKind::Purchases);
  for (const auto& e : ds.events()) {
    switch (e.kind) {
      case BehaviorKind::Click:
        clicks << opt(e.query_id) << ',' << e.session_id << ',' << opt(e.user_id) << ','
               << e.item_id << ',' << e.event_ts << '\n';
        break;
      case BehaviorKind::View:
        views << e.session_id << ',' << opt(e.user_id) << ',' << e.item_id << ',' << e.event_ts
              << '\n';
        break;
      case BehaviorKind::Purchase:
        purchases << e.session_id << ',' << opt(e.user_id) << ',' << e.item_id << ','
                  << e.event_ts << ',' << opt(e.order_id) << '\n';
        break;
    }
  }
  auto products = open_table(dir, TableKind::Products);
  for (const auto& p : ds.products()) {
    products << p.item_id << ',' << p.category_id << ',' << format_decimal(p.price) << ','
             << csv::quote_always(csv::join_ints(p.name_tokens)) << '\n';
  }
}

// --- Statistics ---------------------------------------------------------------

StatsReport dataset_stats(const Dataset& ds) {
  StatsReport r;
  std::unordered_set<SessionId> sessions, anonymous_sessions;
  std::unordered_set<ItemId> presented;
  std::unordered_set<UserId> real, train_real, test_real;
  for (const auto& q : ds.queries()) {
    (q.scenario == Scenario::Full ? r.query_full_queries : r.query_less_queries)++;
    sessions.insert(q.session_id);
    presented.insert(q.shown_items.begin(), q.shown_items.end());
    if (q.user_id) {
      real.insert(*q.user_id);
      (q.is_test ? test_real : train_real).insert(*q.user_id);
    } else {
      anonymous_sessions.insert(q.session_id);
    }
  }
  for (const auto& e : ds.events()) {
    switch (e.kind) {
      case BehaviorKind::Click: ++r.click_events; break;
      case BehaviorKind::View: ++r.view_events; break;
      case BehaviorKind::Purchase: ++r.purchase_events; break;
    }
  }
  r.sessions = sessions.size();
  r.presented_products = presented.size();
  r.real_users = real.size();
  r.anonymous_users = anonymous_sessions.size();
  r.train_real_users = train_real.size();
  r.test_real_users = test_real.size();
  for (UserId u : train_real) r.overlap_real_users += test_real.contains(u) ? 1 : 0;
  return r;
}

}  // namespace serprank
