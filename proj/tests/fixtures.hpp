#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "serprank/corpus.hpp"

namespace fixtures {

using namespace serprank;

inline QueryRecord full_query(QueryId id, SessionId session, std::optional<UserId> user,
                              Timestamp ts, std::vector<TokenId> tokens,
                              std::vector<ItemId> items) {
  QueryRecord q;
  q.query_id = id;
  q.session_id = session;
  q.user_id = user;
  q.event_ts = ts;
  q.scenario = Scenario::Full;
  q.query_tokens = std::move(tokens);
  q.shown_items = std::move(items);
  return q;
}

inline QueryRecord less_query(QueryId id, SessionId session, std::optional<UserId> user,
                              Timestamp ts, CategoryId category, std::vector<ItemId> items) {
  QueryRecord q;
  q.query_id = id;
  q.session_id = session;
  q.user_id = user;
  q.event_ts = ts;
  q.scenario = Scenario::Less;
  q.category_id = category;
  q.shown_items = std::move(items);
  return q;
}

inline BehaviorEvent click(QueryId q, SessionId s, std::optional<UserId> u, ItemId item,
                           Timestamp ts) {
  return {BehaviorKind::Click, s, q, u, item, ts, std::nullopt};
}

inline BehaviorEvent view(SessionId s, std::optional<UserId> u, ItemId item, Timestamp ts) {
  return {BehaviorKind::View, s, std::nullopt, u, item, ts, std::nullopt};
}

inline BehaviorEvent purchase(SessionId s, std::optional<UserId> u, ItemId item, Timestamp ts,
                              std::int64_t order = 1) {
  return {BehaviorKind::Purchase, s, std::nullopt, u, item, ts, order};
}

inline ProductRecord product(ItemId id, CategoryId c, double price, std::vector<TokenId> name) {
  return {id, c, price, std::move(name)};
}

/// Products 1..n, category (id % 3) + 1, price id, name tokens {id, id + 100}.
inline std::vector<ProductRecord> products(ItemId n) {
  std::vector<ProductRecord> out;
  for (ItemId i = 1; i <= n; ++i) out.push_back(product(i, i % 3 + 1, double(i), {i, i + 100}));
  return out;
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("serprank_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
