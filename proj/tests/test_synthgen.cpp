#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "serprank/error.hpp"
#include "serprank/synthgen.hpp"

using namespace serprank;
using namespace fixtures;

namespace {

GenConfig small_config(std::uint64_t seed) {
  GenConfig cfg;
  cfg.seed = seed;
  cfg.n_sessions = 100;
  cfg.n_users = 40;
  cfg.n_anonymous = 40;
  cfg.n_products = 150;
  cfg.serp_len = 10;
  return cfg;
}

std::string serialized(const GenConfig& cfg, const std::string& name) {
  const auto dir = scratch(name);
  write_generated(generate_dataset(cfg), cfg, dir);
  std::string all;
  for (const char* f : {"queries.csv", "clicks.csv", "views.csv", "purchases.csv",
                        "products.csv", "genconfig.json", "latent.csv"}) {
    all += f;
    all += '\n';
    all += read_file(dir / f);
  }
  return all;
}

}  // namespace

TEST_CASE("same config gives identical bytes") {
  const auto cfg = small_config(5);
  const auto a = serialized(cfg, "gen_a");
  const auto b = serialized(cfg, "gen_b");
  CHECK(a.size() > 1000);
  CHECK(a == b);
  CHECK(serialized(small_config(6), "gen_c") != a);
}

TEST_CASE("every query shows serp_len items") {
  const auto ds = generate_dataset(small_config(1)).dataset;
  CHECK_FALSE(ds.queries().empty());
  bool full = false, less = false;
  for (const auto& q : ds.queries()) {
    CHECK(q.shown_items.size() == 10);
    (q.scenario == Scenario::Full ? full : less) = true;
  }
  CHECK(full);
  CHECK(less);
}

TEST_CASE("generated corpus reloads strictly") {
  const auto cfg = small_config(2);
  const auto dir = scratch("gen_reload");
  const auto corpus = generate_dataset(cfg);
  write_generated(corpus, cfg, dir);
  const auto back = load_dataset(dir, true);
  CHECK(back.queries().size() == corpus.dataset.queries().size());
  CHECK(back.events().size() == corpus.dataset.events().size());
  CHECK(back.dropped_events() == 0);
}

TEST_CASE("infeasible configs are rejected") {
  auto cfg = small_config(1);
  cfg.n_products = 5;
  CHECK_THROWS_AS(generate_dataset(cfg), InfeasibleConfig);
  cfg = small_config(1);
  cfg.frac_query_full = 1.5;
  CHECK_THROWS_AS(validate(cfg), InfeasibleConfig);
  cfg = small_config(1);
  cfg.n_sessions = 0;
  CHECK_THROWS_AS(validate(cfg), InfeasibleConfig);
}

TEST_CASE("repeat-click rate on generated data is near target") {
  GenConfig cfg;
  cfg.seed = 11;
  cfg.n_sessions = 2000;
  const auto p = measure_properties(generate_dataset(cfg).dataset);
  CHECK(std::abs(p.repeat_click_rate - cfg.target_repeat_click_rate) <= 0.05);
  CHECK(std::abs(p.token_overlap_rate - cfg.target_token_overlap_rate) <= 0.005);
  CHECK(p.clicks > 0);
  CHECK(p.views > 0);
  CHECK(p.purchases > 0);
}

TEST_CASE("measure_properties on hand-built fixtures") {
  SUBCASE("clicks on [5, 5]") {
    const auto ds = build_dataset({less_query(1, 1, 1, 100, 1, {5, 6})},
                                  {click(1, 1, 1, 5, 110), click(1, 1, 1, 5, 120)}, products(6),
                                  true);
    const auto p = measure_properties(ds);
    CHECK(p.repeat_click_rate == 0.5);
    CHECK(p.last_query_repeat_click_rate == 0.5);
  }
  SUBCASE("disjoint vocabularies") {
    const auto ds = build_dataset({full_query(1, 1, 1, 100, {900, 901}, {1, 2, 3})}, {},
                                  products(3), true);
    CHECK(measure_properties(ds).token_overlap_rate == 0.0);
  }
  SUBCASE("three queries") {
    // Names: item i -> {i, i + 100}.
    // q1 {1, 2}: item1 1/2, item2 1/2.  q2 {3, 103, 7}: item3 2/3, item4 0, item1 0.
    // q3 is query-less and ignored for overlap.
    const auto ds = build_dataset(
        {full_query(1, 1, 1, 100, {1, 2}, {1, 2}), full_query(2, 1, 1, 200, {3, 103, 7, 7}, {3, 4, 1}),
         less_query(3, 2, 2, 300, 1, {1, 3})},
        {click(1, 1, 1, 1, 110), click(2, 1, 1, 1, 210), click(2, 1, 1, 3, 220),
         click(3, 2, 2, 1, 310), click(3, 2, 2, 1, 320), click(3, 2, 2, 3, 330)},
        products(4), true);
    const auto p = measure_properties(ds);
    CHECK(p.token_overlap_rate == doctest::Approx((0.5 + 0.5 + 2.0 / 3.0) / 5.0).epsilon(1e-12));
    // Repeats: session 1 item 1 at 210; session 2 item 1 at 320.
    CHECK(p.repeat_click_rate == doctest::Approx(2.0 / 6.0));
    // Last queries: q2 (items 1 repeat, 3 new) and q3 (1 new, 1 repeat, 3 new).
    CHECK(p.last_query_repeat_click_rate == doctest::Approx(2.0 / 5.0));
    CHECK(p.clicks == 6);
  }
}

TEST_CASE("latent model covers every query") {
  const auto corpus = generate_dataset(small_config(4));
  for (const auto& q : corpus.dataset.queries()) {
    CHECK(corpus.latent.query_intent.contains(q.query_id));
    const auto* item = corpus.dataset.find_product(q.shown_items.front());
    REQUIRE(item != nullptr);
    const double r = corpus.latent.relevance(q, *item);
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
  }
}
