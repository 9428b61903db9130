#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "serprank/corpus.hpp"
#include "serprank/error.hpp"
#include "serprank/synthgen.hpp"

using namespace serprank;
using namespace fixtures;

namespace {

const std::string kQueriesHeader =
    "query_id,session_id,user_id,event_ts,scenario,tokens,category_id,items,is_test\n";

Dataset small_dataset(bool strict, bool bad_click) {
  std::vector<QueryRecord> qs = {
      full_query(1, 10, 7, 1000, {3, 4}, {1, 2, 3}),
      less_query(2, 10, 7, 2000, 2, {4, 5, 6}),
      less_query(3, 11, std::nullopt, 1500, 1, {1, 4}),
  };
  std::vector<BehaviorEvent> es = {
      click(1, 10, 7, 2, 1100),
      view(10, 7, 2, 1200),
      purchase(10, 7, 2, 1300),
      click(2, 10, 7, 5, 2100),
  };
  if (bad_click) es.push_back(click(1, 10, 7, 5, 1150));
  return build_dataset(std::move(qs), std::move(es), products(6), strict);
}

}  // namespace

TEST_CASE("load_table parses a clicks file") {
  const auto dir = scratch("clicks");
  write_file(dir / "clicks.csv",
             "query_id,session_id,user_id,item_id,event_ts\n1,10,5,3,100\n1,10,5,4,101\n2,11,,7,"
             "102\n");
  const auto rows = std::get<std::vector<BehaviorEvent>>(load_table(dir / "clicks.csv",
                                                                    TableKind::Clicks));
  REQUIRE(rows.size() == 3);
  for (const auto& e : rows) CHECK(e.kind == BehaviorKind::Click);
  CHECK(rows[0].query_id == 1);
  CHECK(rows[1].item_id == 4);
  CHECK_FALSE(rows[2].user_id.has_value());
}

TEST_CASE("header-only file gives an empty list") {
  const auto dir = scratch("header_only");
  write_file(dir / "views.csv", "session_id,user_id,item_id,event_ts\n");
  CHECK(load_events(dir / "views.csv", BehaviorKind::View).empty());
}

TEST_CASE("query-full row without tokens is malformed") {
  const auto dir = scratch("malformed");
  write_file(dir / "queries.csv", kQueriesHeader + "1,10,5,100,full,\"\",,\"1 2\",false\n");
  CHECK_THROWS_AS(load_queries(dir / "queries.csv"), MalformedRow);
  try {
    load_queries(dir / "queries.csv");
  } catch (const MalformedRow& e) {
    CHECK(e.line_no() == 2);
  }
}

TEST_CASE("wrong header is rejected") {
  const auto dir = scratch("bad_header");
  write_file(dir / "views.csv", "session,user,item,ts\n1,2,3,4\n");
  CHECK_THROWS_AS(load_events(dir / "views.csv", BehaviorKind::View), MissingHeader);
}

TEST_CASE("queries round-trip through CSV with quoted lists") {
  const auto dir = scratch("queries_rt");
  write_file(dir / "queries.csv", kQueriesHeader + "1,10,5,100,full,\"3 4\",,\"1 2\",false\n" +
                                      "2,11,,200,less,\"\",4,\"5\",true\n");
  const auto qs = load_queries(dir / "queries.csv");
  REQUIRE(qs.size() == 2);
  CHECK(qs[0].query_tokens == std::vector<TokenId>{3, 4});
  CHECK(qs[0].shown_items == std::vector<ItemId>{1, 2});
  CHECK(qs[1].category_id == 4);
  CHECK(qs[1].is_test);
  CHECK_FALSE(qs[1].user_id.has_value());
}

TEST_CASE("build_dataset indexes a consistent fixture") {
  const auto ds = small_dataset(true, false);
  CHECK(ds.queries().size() == 3);
  REQUIRE(ds.find_query(2) != nullptr);
  CHECK(ds.find_query(2)->category_id == 2);
  CHECK(ds.find_query(99) == nullptr);
  REQUIRE(ds.find_product(4) != nullptr);
  CHECK(ds.find_product(4)->price == 4.0);
  const auto ev = ds.session_events(10);
  REQUIRE(ev.size() == 4);
  CHECK(std::is_sorted(ev.begin(), ev.end(), session_order_less));
  const auto sq = ds.session_queries(10);
  REQUIRE(sq.size() == 2);
  CHECK(sq[0]->query_id == 1);
  CHECK(ds.session_events(12).empty());
  CHECK(ds.t_min() == 1000);
  CHECK(ds.t_max() == 2100);
}

TEST_CASE("click outside the query's SERP") {
  CHECK_THROWS_AS(small_dataset(true, true), IntegrityError);
  const auto ds = small_dataset(false, true);
  CHECK(ds.dropped_events() == 1);
  CHECK(ds.events().size() == 4);
}

TEST_CASE("same-timestamp events order by kind then item") {
  std::vector<BehaviorEvent> es = {purchase(10, 7, 1, 500), view(10, 7, 2, 500),
                                   click(1, 10, 7, 2, 500), click(1, 10, 7, 1, 500)};
  const auto ds = build_dataset({full_query(1, 10, 7, 400, {1}, {1, 2})}, es, products(2), true);
  const auto ev = ds.session_events(10);
  CHECK(ev[0].kind == BehaviorKind::Click);
  CHECK(ev[0].item_id == 1);
  CHECK(ev[1].item_id == 2);
  CHECK(ev[2].kind == BehaviorKind::View);
  CHECK(ev[3].kind == BehaviorKind::Purchase);
}

TEST_CASE("split_by_time") {
  std::vector<QueryRecord> qs;
  for (int i = 0; i < 10; ++i) qs.push_back(less_query(i + 1, i + 1, i, 1000 * (i + 1), 1, {1}));
  const auto ds = build_dataset(qs, {}, products(1), true);

  SUBCASE("cutoff after the 7th timestamp") {
    const auto [train, valid] = split_by_time(ds, 7500);
    CHECK(train.queries().size() == 7);
    CHECK(valid.queries().size() == 3);
    std::set<QueryId> seen;
    for (const auto& q : train.queries()) seen.insert(q.query_id);
    for (const auto& q : valid.queries()) CHECK(seen.insert(q.query_id).second);
    CHECK(seen.size() == ds.queries().size());
  }
  SUBCASE("cutoff at or before t_min") {
    CHECK_THROWS_AS(split_by_time(ds, 1000), EmptySplit);
    CHECK_THROWS_AS(split_by_time(ds, 0), EmptySplit);
  }
  SUBCASE("fraction cutoff") {
    const auto [train, valid] = split_by_time(ds, cutoff_for_fraction(ds, 0.8));
    CHECK(train.queries().size() == 8);
  }
}

TEST_CASE("split keeps a click whose query fell on the other side") {
  const auto ds = build_dataset({full_query(1, 10, 7, 1000, {1}, {1, 2}),
                                 less_query(2, 10, 7, 3000, 1, {1})},
                                {click(1, 10, 7, 2, 2500)}, products(2), true);
  const auto [train, valid] = split_by_time(ds, 2000);
  CHECK(train.events().empty());
  REQUIRE(valid.events().size() == 1);
  CHECK(valid.events()[0].query_id == 1);
}

TEST_CASE("dataset_stats user counts") {
  SUBCASE("overlap of train and test users") {
    std::vector<QueryRecord> qs;
    QueryId id = 1;
    for (UserId u : {1, 2, 3}) qs.push_back(less_query(id++, id, u, id * 10, 1, {1}));
    for (UserId u : {2, 3, 4}) {
      auto q = less_query(id++, id, u, id * 10, 1, {1});
      q.is_test = true;
      qs.push_back(q);
    }
    const auto s = dataset_stats(build_dataset(qs, {}, products(1), true));
    CHECK(s.train_real_users == 3);
    CHECK(s.test_real_users == 3);
    CHECK(s.overlap_real_users == 2);
    CHECK(s.real_users == 4);
  }
  SUBCASE("all anonymous") {
    const auto s = dataset_stats(build_dataset(
        {less_query(1, 1, std::nullopt, 10, 1, {1}), less_query(2, 2, std::nullopt, 20, 1, {1}),
         less_query(3, 2, std::nullopt, 30, 1, {1})},
        {}, products(1), true));
    CHECK(s.real_users == 0);
    CHECK(s.anonymous_users == 2);
  }
}

TEST_CASE("dataset_stats matches a linear recount on a synthetic corpus") {
  GenConfig cfg;
  cfg.n_sessions = 300;
  cfg.n_users = 100;
  cfg.n_anonymous = 100;
  cfg.n_products = 200;
  cfg.seed = 3;
  const auto ds = generate_dataset(cfg).dataset;
  const auto s = dataset_stats(ds);

  std::size_t full = 0, less = 0, clicks = 0, views = 0, purchases = 0;
  std::vector<SessionId> sessions, anon;
  std::vector<ItemId> shown;
  std::vector<UserId> users, train_users, test_users;
  for (const auto& q : ds.queries()) {
    q.scenario == Scenario::Full ? ++full : ++less;
    sessions.push_back(q.session_id);
    for (ItemId i : q.shown_items) shown.push_back(i);
    if (q.user_id) {
      users.push_back(*q.user_id);
      (q.is_test ? test_users : train_users).push_back(*q.user_id);
    } else {
      anon.push_back(q.session_id);
    }
  }
  for (const auto& e : ds.events()) {
    if (e.kind == BehaviorKind::Click) ++clicks;
    if (e.kind == BehaviorKind::View) ++views;
    if (e.kind == BehaviorKind::Purchase) ++purchases;
  }
  auto distinct = [](auto v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
  };
  const auto tr = distinct(train_users), te = distinct(test_users);
  std::vector<UserId> both;
  std::set_intersection(tr.begin(), tr.end(), te.begin(), te.end(), std::back_inserter(both));

  CHECK(s.query_full_queries == full);
  CHECK(s.query_less_queries == less);
  CHECK(s.sessions == distinct(sessions).size());
  CHECK(s.presented_products == distinct(shown).size());
  CHECK(s.click_events == clicks);
  CHECK(s.view_events == views);
  CHECK(s.purchase_events == purchases);
  CHECK(s.real_users == distinct(users).size());
  CHECK(s.anonymous_users == distinct(anon).size());
  CHECK(s.train_real_users == tr.size());
  CHECK(s.test_real_users == te.size());
  CHECK(s.overlap_real_users == both.size());
  CHECK(s.overlap_real_users > 0);
}

TEST_CASE("write_dataset then load_dataset round-trips") {
  const auto ds = small_dataset(true, false);
  const auto dir = scratch("dataset_rt");
  write_dataset(ds, dir);
  const auto back = load_dataset(dir, true);
  CHECK(std::equal(ds.queries().begin(), ds.queries().end(), back.queries().begin(),
                   back.queries().end()));
  CHECK(std::equal(ds.events().begin(), ds.events().end(), back.events().begin(),
                   back.events().end()));
  CHECK(std::equal(ds.products().begin(), ds.products().end(), back.products().begin(),
                   back.products().end()));
}

TEST_CASE("format_decimal is shortest round-trip") {
  CHECK(format_decimal(0.1) == "0.1");
  CHECK(format_decimal(2.0) == "2");
  CHECK(std::stod(format_decimal(1.0 / 3.0)) == 1.0 / 3.0);
}
