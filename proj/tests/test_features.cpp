#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "serprank/error.hpp"
#include "serprank/features.hpp"
#include "serprank/synthgen.hpp"

using namespace serprank;
using namespace fixtures;

namespace {

// Independent FNV-1a-64 over the little-endian key layout.
std::uint64_t ref_fnv(std::int64_t a, std::uint8_t sep, std::int64_t b) {
  std::uint64_t h = 14695981039346656037ULL;
  auto feed = [&](std::uint8_t byte) {
    h ^= byte;
    h *= 1099511628211ULL;
  };
  std::uint64_t ua = static_cast<std::uint64_t>(a), ub = static_cast<std::uint64_t>(b);
  for (int i = 0; i < 8; ++i) feed(static_cast<std::uint8_t>((ua >> (8 * i)) & 0xff));
  feed(sep);
  for (int i = 0; i < 8; ++i) feed(static_cast<std::uint8_t>((ub >> (8 * i)) & 0xff));
  return h;
}

constexpr Timestamp kDay = kMillisPerDay;
constexpr Timestamp kT0 = 100 * kDay;

// q1 (full) session 1 user 1 shows [1, 2, 3]; item 2 clicked, viewed,
// purchased. q2 (less) session 1 at day 10 shows [2, 4]; item 4 clicked.
// q3 (less) session 2 anonymous shows [1].
Dataset feature_fixture() {
  return build_dataset(
      {full_query(1, 1, 1, kT0 + 1000, {7, 8}, {1, 2, 3}),
       less_query(2, 1, 1, kT0 + 10 * kDay, 2, {2, 4}),
       less_query(3, 2, std::nullopt, kT0 + 2 * kDay, 1, {1})},
      {click(1, 1, 1, 2, kT0 + 2000), view(1, 1, 2, kT0 + 3000), purchase(1, 1, 2, kT0 + 4000),
       click(2, 1, 1, 4, kT0 + 10 * kDay + 500), view(2, std::nullopt, 1, kT0 + 2 * kDay + 10)},
      products(6), true);
}

}  // namespace

TEST_CASE("product statistics") {
  const auto ds = feature_fixture();
  const auto t = compute_global_stats(ds);
  const auto& s2 = t.at(2);
  CHECK(s2.count(Statistic::Show) == 2);
  CHECK(s2.count(Statistic::Click) == 1);
  CHECK(s2.count(Statistic::View) == 1);
  CHECK(s2.count(Statistic::Purchase) == 1);
  CHECK(s2.ctr == 0.5);
  CHECK(s2.view_rate == 0.5);
  CHECK(s2.cvr == 1.0);
  CHECK(s2.distinct_users[0] == 1);
  CHECK(s2.price_feat[static_cast<std::size_t>(BehaviorKind::Click)] == 1.0 / 3.0);
  const auto& s1 = t.at(1);
  CHECK(s1.count(Statistic::Show) == 2);
  CHECK(s1.count(Statistic::View) == 1);
  CHECK(s1.distinct_users[0] == 1);  // q3 is anonymous
  CHECK(s1.distinct_users[2] == 0);
  CHECK(s1.cvr == 0.0);
  const auto& s6 = t.at(6);
  CHECK(s6.ctr == 0.0);
  CHECK(s6.view_rate == 0.0);
  CHECK_FALSE(s6.logged());
  CHECK(s6.word_length == 2);
}

TEST_CASE("ctr of an item shown 20 times and clicked 5 times") {
  std::vector<QueryRecord> qs;
  std::vector<BehaviorEvent> es;
  for (int i = 0; i < 20; ++i) {
    qs.push_back(less_query(i + 1, i + 1, 1, 1000 * (i + 1), 1, {1}));
    if (i % 4 == 0) es.push_back(click(i + 1, i + 1, 1, 1, 1000 * (i + 1) + 1));
  }
  const auto t = compute_global_stats(build_dataset(qs, es, products(1), true));
  CHECK(t.at(1).ctr == 0.25);
}

TEST_CASE("product stats match a naive recount on a synthetic corpus") {
  GenConfig cfg;
  cfg.seed = 9;
  cfg.n_sessions = 200;
  cfg.n_users = 60;
  cfg.n_anonymous = 60;
  cfg.n_products = 120;
  const auto ds = generate_dataset(cfg).dataset;
  const auto t = compute_global_stats(ds);
  std::map<ItemId, std::array<std::int64_t, 4>> counts;
  std::map<ItemId, std::array<std::set<UserId>, 4>> users;
  for (const auto& q : ds.queries()) {
    for (ItemId i : q.shown_items) {
      counts[i][0]++;
      if (q.user_id) users[i][0].insert(*q.user_id);
    }
  }
  for (const auto& e : ds.events()) {
    const int s = e.kind == BehaviorKind::Click ? 1 : e.kind == BehaviorKind::View ? 2 : 3;
    counts[e.item_id][s]++;
    if (e.user_id) users[e.item_id][s].insert(*e.user_id);
  }
  CHECK(t.size() == ds.products().size());
  for (const auto& p : ds.products()) {
    const auto& st = t.at(p.item_id);
    const auto c = counts[p.item_id];
    for (int s = 0; s < 4; ++s) {
      CHECK(st.counts[s] == c[s]);
      CHECK(st.distinct_users[s] == static_cast<std::int64_t>(users[p.item_id][s].size()));
      CHECK(st.distinct_users[s] <= st.counts[s]);
    }
    CHECK(st.ctr == (c[0] ? double(c[1]) / double(c[0]) : 0.0));
    CHECK(st.cvr == (c[1] ? double(c[3]) / double(c[1]) : 0.0));
    CHECK(st.price_feat[2] == double(c[3]) / (p.price + 1.0));
  }
}

TEST_CASE("price feature") {
  CHECK(price_feature(10, 4.0) == 2.0);
  CHECK(price_feature(10, 0.0) == 10.0);
  CHECK(price_feature(0, 17.5) == 0.0);
}

TEST_CASE("percent rank") {
  CHECK(percent_rank(0, 10) == 0.0);
  CHECK(percent_rank(9, 10) == 1.0);
  CHECK(percent_rank(0, 1) == 0.0);
  CHECK(percent_rank(3, 7) == 0.5);
  CHECK_THROWS_AS(percent_rank(10, 10), OutOfRange);
}

TEST_CASE("time buckets") {
  SUBCASE("ten days after t0 in a weekly bucket") {
    const auto ds = feature_fixture();
    const auto ts = compute_time_local_stats(ds, TimeInterval::Week);
    CHECK(ts.origin == kT0);
    CHECK(ts.bucket_of(kT0 + 10 * kDay) == 1);
    CHECK(ts.buckets == 2);
    CHECK(ts.count(4, Statistic::Click, 1) == 1);
    CHECK(ts.count(4, Statistic::Click, 0) == 0);
  }
  SUBCASE("everything on one day") {
    const auto ds = build_dataset({less_query(1, 1, 1, kT0 + 5, 1, {1, 2})},
                                  {click(1, 1, 1, 2, kT0 + 6)}, products(2), true);
    for (auto iv : kAllIntervals) {
      const auto ts = compute_time_local_stats(ds, iv);
      CHECK(ts.buckets >= 1);
      CHECK(ts.count(1, Statistic::Show, 0) == 1);
      CHECK(ts.count(2, Statistic::Click, 0) == 1);
    }
  }
  SUBCASE("bucket sums reconcile with global counts") {
    GenConfig cfg;
    cfg.seed = 4;
    cfg.n_sessions = 200;
    cfg.n_users = 60;
    cfg.n_anonymous = 60;
    cfg.n_products = 120;
    const auto ds = generate_dataset(cfg).dataset;
    const auto global = compute_global_stats(ds);
    for (auto iv : kAllIntervals) {
      const auto ts = compute_time_local_stats(ds, iv);
      CHECK(ts.origin == utc_midnight(ds.t_min()));
      for (const auto& [item, st] : global) {
        for (std::size_t s = 0; s < kStatistics; ++s) {
          std::int64_t sum = 0;
          for (std::size_t l = 0; l < ts.buckets; ++l) {
            sum += ts.count(item, static_cast<Statistic>(s), l);
          }
          CHECK(sum == st.counts[s]);
        }
      }
    }
  }
}

TEST_CASE("category-token hashing") {
  const std::size_t w = std::size_t{1} << 18;
  CHECK(category_token_index(3, 17, w) == category_token_index(3, 17, w));
  CHECK(category_token_index(3, 17, w) == ref_fnv(3, 0x1F, 17) % w);
  for (CategoryId c = -2; c < 20; ++c) {
    for (TokenId t = 0; t < 30; ++t) {
      CHECK(category_token_index(c, t, w) < w);
      CHECK(category_token_index(c, t, 1000) == ref_fnv(c, 0x1F, t) % 1000);
    }
  }
  const std::uint8_t abc[] = {'a', 'b', 'c'};
  CHECK(fnv1a64(abc) == 0xe71fa2190541574bULL);
}

TEST_CASE("cross-token hashing") {
  const std::size_t w = std::size_t{1} << 18;
  const std::vector<TokenId> q = {1, 2}, p = {10, 11, 12};
  CHECK(cross_token_indices(q, p, w).size() == 6);
  CHECK(cross_token_indices(q, {}, w).empty());

  const std::vector<TokenId> q2 = {5, 9, 5, 40}, p2 = {3, 9, 77};
  std::set<std::size_t> naive;
  for (TokenId a : q2) {
    for (TokenId b : p2) naive.insert(ref_fnv(a, 0x1E, b) % 64);
  }
  const auto got = cross_token_indices(q2, p2, 64);
  CHECK(got == std::vector<std::size_t>(naive.begin(), naive.end()));
}

TEST_CASE("session flags") {
  const auto ds = feature_fixture();
  const auto ctx = build_session_context(ds, *ds.find_query(2));
  CHECK(session_flags(ctx, 2) == SessionFlags{true, true, true});
  CHECK(session_flags(ctx, 4) == SessionFlags{});
  CHECK(session_flags(ctx, 5) == SessionFlags{});

  const auto ds2 = build_dataset({less_query(1, 1, 1, 100, 1, {1, 2}), less_query(2, 1, 1, 500, 1, {1})},
                                 {click(1, 1, 1, 2, 110), view(1, 1, 1, 120), purchase(1, 1, 1, 130)},
                                 products(2), true);
  const auto c2 = build_session_context(ds2, *ds2.find_query(2));
  CHECK(session_flags(c2, 2) == SessionFlags{true, false, false});
  CHECK(session_flags(c2, 1) == SessionFlags{false, true, true});

  // Context is strictly before the query.
  const auto c1 = build_session_context(ds2, *ds2.find_query(1));
  CHECK(c1.items.empty());
}

TEST_CASE("feature space layout") {
  const auto ds = feature_fixture();
  const auto fx = FeatureExtractor::fit(ds, {64, 32});
  const auto& sp = fx.space();
  const std::size_t dense = sp.dense_columns().size();
  CHECK(sp.slot(SlotKind::Dense).offset == 0);
  CHECK(sp.slot(SlotKind::Position).offset == dense);
  CHECK(sp.slot(SlotKind::Session).width == 3);
  CHECK(sp.slot(SlotKind::CategoryToken).width == 64);
  CHECK(sp.total_dim() == dense + 1 + 3 + 64 + 32);
  for (std::size_t i = 1; i < sp.slots().size(); ++i) {
    CHECK(sp.slots()[i].offset == sp.slots()[i - 1].end());
  }
  CHECK(sp.slot_of(dense)->kind == SlotKind::Position);
  CHECK(sp.slot_of(sp.total_dim()) == nullptr);

  const auto back = FeatureSpace::from_json(sp.to_json());
  CHECK(back == sp);
  CHECK(back.checksum() == sp.checksum());
  CHECK(FeatureExtractor::fit(ds, {64, 16}).space().checksum() != sp.checksum());
  CHECK_THROWS_AS(FeatureSpace::from_json("{\"format\": 3}"), DataError);
}

TEST_CASE("assembled vector equals hand-assembled slots") {
  const auto ds = feature_fixture();
  const auto fx = FeatureExtractor::fit(ds, {64, 32});
  const auto& sp = fx.space();
  const QueryRecord& q = *ds.find_query(1);
  const auto ctx = build_session_context(ds, q);
  const auto v = fx.extract(q, 2, ctx);

  // Item 2: position 1 of 3, no prior session history, category 3, name {2, 102}.
  std::map<std::size_t, double> expected;
  const auto raw = raw_dense_values(fx.tables(), 2);
  const std::vector<double> head = {2, 1, 1, 1, 1, 1, 1, 1, 0.5, 0.5, 1.0, 2, 1.0 / 3, 1.0 / 3,
                                    1.0 / 3};
  for (std::size_t i = 0; i < head.size(); ++i) CHECK(raw[i] == doctest::Approx(head[i]));
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& col = sp.dense_columns()[i];
    const double x = col.log_transform ? std::log1p(raw[i]) : raw[i];
    const double z = static_cast<float>((x - col.mean) / col.stddev);
    if (z != 0.0) expected[i] = z;
  }
  expected[sp.slot(SlotKind::Position).offset] = 0.5;
  const auto& cat = sp.slot(SlotKind::CategoryToken);
  for (TokenId t : {2, 102}) expected[cat.offset + ref_fnv(3, 0x1F, t) % 64] = 1.0;
  const auto& cross = sp.slot(SlotKind::CrossToken);
  for (TokenId a : {7, 8}) {
    for (TokenId b : {2, 102}) expected[cross.offset + ref_fnv(a, 0x1E, b) % 32] = 1.0;
  }

  REQUIRE(v.size() == expected.size());
  std::size_t i = 0;
  for (const auto& [idx, val] : expected) {
    CHECK(v.entries()[i].index == idx);
    CHECK(v.entries()[i].value == static_cast<float>(val));
    ++i;
  }
  CHECK(assemble_features(q, 2, fx.tables(), ctx, sp) == v);
}

TEST_CASE("assembly edge cases") {
  const auto ds = feature_fixture();
  const auto fx = FeatureExtractor::fit(ds, {64, 32});
  const auto& sp = fx.space();

  SUBCASE("item absent from the logs has no dense or session entries") {
    const auto q = less_query(9, 9, 1, kT0 + 20 * kDay, 1, {6, 5});
    const auto v = fx.extract(q, 6, build_session_context(ds, q));
    for (const auto& e : v.entries()) {
      CHECK_FALSE(sp.slot(SlotKind::Dense).contains(e.index));
      CHECK_FALSE(sp.slot(SlotKind::Session).contains(e.index));
    }
  }
  SUBCASE("query-less has an empty cross-token slot") {
    const QueryRecord& q = *ds.find_query(2);
    const auto v = fx.extract(q, 4, build_session_context(ds, q));
    bool any_cat = false;
    for (const auto& e : v.entries()) {
      CHECK_FALSE(sp.slot(SlotKind::CrossToken).contains(e.index));
      any_cat |= sp.slot(SlotKind::CategoryToken).contains(e.index);
    }
    CHECK(any_cat);
  }
  SUBCASE("session slot set from prior interactions") {
    const QueryRecord& q = *ds.find_query(2);
    const auto v = fx.extract(q, 2, build_session_context(ds, q));
    const std::size_t s = sp.slot(SlotKind::Session).offset;
    CHECK(v.value(s) == 1.0);
    CHECK(v.value(s + 1) == 1.0);
    CHECK(v.value(s + 2) == 1.0);
  }
  SUBCASE("errors") {
    const QueryRecord& q = *ds.find_query(1);
    CHECK_THROWS_AS(fx.extract(q, 4, {}), UnknownItem);
    auto bogus = q;
    bogus.shown_items.push_back(99);
    CHECK_THROWS_AS(fx.extract(bogus, 99, {}), UnknownItem);
  }
  SUBCASE("project keeps whole slots") {
    const QueryRecord& q = *ds.find_query(1);
    const auto v = fx.extract(q, 2, build_session_context(ds, q));
    const SlotKind kinds[] = {SlotKind::CategoryToken};
    const auto p = project(v, sp, kinds);
    CHECK(p.size() == 2);
    for (const auto& e : p.entries()) CHECK(sp.slot(SlotKind::CategoryToken).contains(e.index));
  }
}

TEST_CASE("FeatureVector basics") {
  const auto v = FeatureVector::from_entries({{5, 2.0f}, {1, 1.0f}, {5, 3.0f}});
  REQUIRE(v.size() == 2);
  CHECK(v.value(5) == 2.0);
  CHECK(v.value(2) == 0.0);
  CHECK(v.min_dim() == 6);
  CHECK(format_sparse(v) == "1:1 5:2");
  CHECK(format_sparse(FeatureVector::from_entries({{3, 0.1f}})) == "3:0.1");
}

TEST_CASE("features never see validation behaviour") {
  GenConfig cfg;
  cfg.seed = 21;
  cfg.n_sessions = 300;
  cfg.n_users = 80;
  cfg.n_anonymous = 80;
  cfg.n_products = 150;
  const auto ds = generate_dataset(cfg).dataset;
  const Timestamp cut = cutoff_for_fraction(ds, 0.7);
  const auto [train, valid] = split_by_time(ds, cut);
  const auto a = FeatureExtractor::fit(train, {256, 256});
  // Dropping every post-cutoff event and shuffling post-cutoff SERPs cannot
  // change anything fitted on train.
  std::vector<QueryRecord> qs(ds.queries().begin(), ds.queries().end());
  for (auto& q : qs) {
    if (q.event_ts >= cut) std::reverse(q.shown_items.begin(), q.shown_items.end());
  }
  std::vector<BehaviorEvent> es;
  for (const auto& e : ds.events()) {
    if (e.event_ts < cut) es.push_back(e);
  }
  std::vector<ProductRecord> ps(ds.products().begin(), ds.products().end());
  const auto altered = build_dataset(qs, es, ps, false);
  const auto [train2, valid2] = split_by_time(altered, cut);
  const auto b = FeatureExtractor::fit(train2, {256, 256});
  CHECK(a.space().checksum() == b.space().checksum());
  CHECK(a.space() == b.space());
  for (const auto& [item, st] : a.tables().stats) {
    CHECK(st.counts == compute_global_stats(train).at(item).counts);
  }
  for (const auto& ts : a.tables().time_stats) {
    CHECK(ts.origin + static_cast<Timestamp>(ts.buckets) * interval_length(ts.interval) >
          train.t_max());
  }
}
