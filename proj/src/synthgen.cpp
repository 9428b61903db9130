#include "serprank/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <unordered_set>

#include "json.hpp"
#include "serprank/error.hpp"
#include "serprank/random.hpp"

namespace serprank {

namespace {

constexpr Timestamp kOrigin = 1'451'606'400'000;  // 2016-01-01T00:00:00Z
constexpr Timestamp kSecond = 1000;
constexpr Timestamp kMinute = 60 * kSecond;

// Relevance model weights.
constexpr double kFactorWeight = 1.2;
constexpr double kIntentWeight = 1.5;
constexpr double kFavoriteWeight = 0.8;
constexpr double kPriceWeight = 0.25;
constexpr double kRelevanceBias = -1.0;

constexpr double kFactorScale = 0.45;
constexpr double kPopularityScale = 0.6;
constexpr double kInCategoryWordShare = 0.85;
constexpr double kRecallClickProb = 0.85;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void require(bool ok, const std::string& what) {
  if (!ok) throw InfeasibleConfig(what);
}

/// Word blocks: one per category plus a trailing general block.
struct Vocabulary {
  std::int64_t first = 1;
  std::int64_t block = 1;
  std::int64_t categories = 1;
  std::int64_t size = 1;

  std::int64_t sample(Rng& rng, std::int64_t category_index, bool in_category) const {
    if (in_category) return first + category_index * block + rng.between(0, block - 1);
    const std::int64_t general_first = first + categories * block;
    return rng.between(general_first, first + size - 1);
  }
};

LatentVector random_factor(Rng& rng) {
  LatentVector f{};
  for (auto& x : f) x = rng.normal(0.0, kFactorScale);
  return f;
}

class Generator {
 public:
  explicit Generator(const GenConfig& cfg) : cfg_(cfg), rng_(derive_seed(cfg.seed, 0x5e55)) {
    product_words_ = Vocabulary{1, cfg.vocab_product / (cfg.n_categories + 1), cfg.n_categories,
                                cfg.vocab_product};
    query_words_ = Vocabulary{cfg.vocab_product + 1, cfg.vocab_query / (cfg.n_categories + 1),
                              cfg.n_categories, cfg.vocab_query};
  }

  GeneratedCorpus run() {
    make_products();
    make_users();
    for (SessionId s = 1; s <= cfg_.n_sessions; ++s) make_session(s);
    GeneratedCorpus out;
    out.dataset = build_dataset(std::move(queries_), std::move(events_), std::move(products_), true);
    out.latent = std::move(latent_);
    return out;
  }

 private:
  void make_products() {
    Rng rng(derive_seed(cfg_.seed, 0x9d));
    by_category_.assign(static_cast<std::size_t>(cfg_.n_categories), {});
    for (ItemId id = 1; id <= cfg_.n_products; ++id) {
      ProductRecord p;
      p.item_id = id;
      // Round-robin keeps every category populated; the shuffle comes from names/prices.
      const std::int64_t c = (id - 1) % cfg_.n_categories;
      p.category_id = c + 1;
      p.price = std::round(std::exp(rng.normal(3.0, 0.8)) * 100.0) / 100.0;
      const std::int64_t len = rng.bernoulli(0.05) ? 0 : rng.between(2, 7);
      std::set<TokenId> seen;
      for (std::int64_t k = 0; k < len; ++k) {
        for (int attempt = 0; attempt < 8; ++attempt) {
          const TokenId t = product_words_.sample(rng, c, rng.bernoulli(kInCategoryWordShare));
          if (seen.insert(t).second) {
            p.name_tokens.push_back(t);
            break;
          }
        }
      }
      LatentModel::Item item{random_factor(rng), rng.normal(0.0, kPopularityScale)};
      latent_.items.emplace(id, item);
      by_category_[static_cast<std::size_t>(c)].push_back(id);
      products_.push_back(std::move(p));
    }
  }

  LatentModel::Actor random_actor(Rng& rng) const {
    LatentModel::Actor a;
    a.factor = random_factor(rng);
    a.favorites[0] = rng.between(1, cfg_.n_categories);
    a.favorites[1] = rng.between(1, cfg_.n_categories);
    return a;
  }

  void make_users() {
    Rng rng(derive_seed(cfg_.seed, 0x05e7));
    for (UserId u = 1; u <= cfg_.n_users; ++u) latent_.users.emplace(u, random_actor(rng));
  }

  const ProductRecord& product(ItemId id) const {
    return products_[static_cast<std::size_t>(id - 1)];
  }

  /// Picks `n` distinct items from `pool` not already in `taken`.
  void sample_into(const std::vector<ItemId>& pool, std::size_t n, std::vector<ItemId>& out,
                   std::unordered_set<ItemId>& taken) {
    std::vector<ItemId> free;
    for (ItemId id : pool) {
      if (!taken.contains(id)) free.push_back(id);
    }
    for (std::size_t k = 0; k < n && !free.empty(); ++k) {
      const std::size_t j = static_cast<std::size_t>(rng_.below(free.size()));
      out.push_back(free[j]);
      taken.insert(free[j]);
      free[j] = free.back();
      free.pop_back();
    }
  }

  void fill_random(std::size_t n, std::vector<ItemId>& out, std::unordered_set<ItemId>& taken) {
    while (out.size() < n) {
      const ItemId id = rng_.between(1, cfg_.n_products);
      if (taken.insert(id).second) out.push_back(id);
    }
  }

  double running_repeat_rate() const {
    return clicks_total_ == 0 ? 0.0
                              : static_cast<double>(repeats_total_) /
                                    static_cast<double>(clicks_total_);
  }

  double token_overlap(const std::vector<TokenId>& query, const ProductRecord& p) const {
    std::size_t hit = 0;
    for (TokenId t : query) {
      hit += std::find(p.name_tokens.begin(), p.name_tokens.end(), t) != p.name_tokens.end();
    }
    return static_cast<double>(hit) / static_cast<double>(query.size());
  }

  std::vector<TokenId> make_query_tokens(const ProductRecord& target, std::int64_t intent_index) {
    // Integral controller on the running pair-level overlap, so the measured
    // rate tracks the target regardless of SERP length or name lengths.
    const double serp = static_cast<double>(cfg_.serp_len);
    const double deficit =
        cfg_.target_token_overlap_rate * static_cast<double>(overlap_pairs_) - overlap_sum_;
    const double p_copy =
        std::clamp(cfg_.target_token_overlap_rate * serp + deficit / 2.0, 0.0, 1.0);

    const std::int64_t n = rng_.between(1, 3);
    std::vector<TokenId> tokens;
    std::vector<TokenId> unused = target.name_tokens;
    for (std::int64_t k = 0; k < n; ++k) {
      if (!unused.empty() && rng_.bernoulli(p_copy)) {
        const std::size_t j = static_cast<std::size_t>(rng_.below(unused.size()));
        tokens.push_back(unused[j]);
        unused.erase(unused.begin() + static_cast<std::ptrdiff_t>(j));
        continue;
      }
      for (int attempt = 0; attempt < 8; ++attempt) {
        const TokenId t =
            query_words_.sample(rng_, intent_index, rng_.bernoulli(kInCategoryWordShare));
        if (std::find(tokens.begin(), tokens.end(), t) == tokens.end()) {
          tokens.push_back(t);
          break;
        }
      }
    }
    return tokens;
  }

  void make_session(SessionId session) {
    const double p_anonymous = static_cast<double>(cfg_.n_anonymous) /
                               static_cast<double>(cfg_.n_users + cfg_.n_anonymous);
    std::optional<UserId> user;
    LatentModel::Actor actor;
    if (rng_.bernoulli(p_anonymous)) {
      actor = random_actor(rng_);
      latent_.anonymous_sessions.emplace(session, actor);
    } else {
      user = rng_.between(1, cfg_.n_users);
      actor = latent_.users.at(*user);
    }

    const Timestamp span = cfg_.time_span_days * kMillisPerDay;
    Timestamp now = kOrigin + rng_.between(0, span - 6 * 60 * kMinute);
    const Timestamp test_from =
        kOrigin + static_cast<Timestamp>(std::llround(static_cast<double>(span) *
                                                      (1.0 - cfg_.test_fraction)));

    std::size_t n_queries = 1;
    const double p_more = 1.0 - 1.0 / cfg_.mean_queries_per_session;
    while (n_queries < 8 && rng_.bernoulli(p_more)) ++n_queries;

    auto draw_intent = [&] {
      return rng_.bernoulli(0.6) ? actor.favorites[rng_.below(2)]
                                 : rng_.between(1, cfg_.n_categories);
    };
    CategoryId intent = draw_intent();

    std::vector<ItemId> clicked;  // in first-click order
    std::vector<ItemId> viewed;
    std::vector<std::pair<ItemId, double>> to_purchase;

    for (std::size_t j = 0; j < n_queries; ++j) {
      if (j > 0 && !rng_.bernoulli(0.7)) intent = draw_intent();
      const std::int64_t intent_index = intent - 1;
      const auto& pool = by_category_[static_cast<std::size_t>(intent_index)];
      const std::size_t serp_len = static_cast<std::size_t>(cfg_.serp_len);

      QueryRecord q;
      q.query_id = next_query_id_++;
      q.session_id = session;
      q.user_id = user;
      q.event_ts = now;
      q.is_test = now >= test_from;
      q.scenario = rng_.bernoulli(cfg_.frac_query_full) ? Scenario::Full : Scenario::Less;
      latent_.query_intent.emplace(q.query_id, intent);

      std::vector<ItemId> items;
      std::unordered_set<ItemId> taken;
      std::optional<ItemId> target;
      if (q.scenario == Scenario::Full) {
        sample_into(pool, 1, items, taken);
        target = items.front();
        sample_into(pool, (serp_len + 1) / 2 - items.size(), items, taken);
      } else {
        q.category_id = intent;
        sample_into(pool, serp_len, items, taken);
      }
      fill_random(serp_len, items, taken);

      // Re-show earlier interactions of this session.
      if (j > 0) {
        const double p_reshow =
            std::clamp(0.4 + 25.0 * (cfg_.target_repeat_click_rate - running_repeat_rate()), 0.0,
                       1.0);
        std::vector<ItemId> reshow;
        for (ItemId id : clicked) {
          if (rng_.bernoulli(p_reshow)) reshow.push_back(id);
        }
        for (ItemId id : viewed) {
          if (std::find(clicked.begin(), clicked.end(), id) == clicked.end() &&
              rng_.bernoulli(0.3)) {
            reshow.push_back(id);
          }
        }
        if (reshow.size() > serp_len / 2) reshow.resize(serp_len / 2);
        std::size_t slot = items.size();
        for (ItemId id : reshow) {
          if (taken.contains(id)) continue;
          --slot;
          if (target && items[slot] == *target) --slot;
          taken.erase(items[slot]);
          items[slot] = id;
          taken.insert(id);
        }
      }

      // Presented order: noisy popularity.
      std::vector<std::pair<double, ItemId>> keyed;
      for (ItemId id : items) {
        keyed.emplace_back(latent_.items.at(id).popularity + rng_.normal(), id);
      }
      std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
      });
      for (std::size_t k = 0; k < keyed.size(); ++k) items[k] = keyed[k].second;
      q.shown_items = items;

      if (target) {
        q.query_tokens = make_query_tokens(product(*target), intent_index);
        for (ItemId id : items) overlap_sum_ += token_overlap(q.query_tokens, product(id));
        overlap_pairs_ += items.size();
      }

      // Clicks in presentation order, each followed by an optional view.
      Timestamp t = now;
      const double p_double =
          std::clamp(2.0 * (cfg_.target_repeat_click_rate - running_repeat_rate()), 0.0, 0.5);
      for (std::size_t pos = 0; pos < items.size(); ++pos) {
        const ItemId id = items[pos];
        const bool was_clicked = std::find(clicked.begin(), clicked.end(), id) != clicked.end();
        const bool was_viewed = std::find(viewed.begin(), viewed.end(), id) != viewed.end();
        double rel = latent_.relevance(q, product(id));
        if (was_viewed) rel = std::max(rel, 0.6);
        const double examine = 1.0 / (1.0 + 0.15 * static_cast<double>(pos));
        const double p_click =
            was_clicked ? kRecallClickProb : std::min(0.95, 2.0 * cfg_.click_rate * examine * rel);
        if (!rng_.bernoulli(p_click)) continue;

        auto emit_click = [&] {
          t += rng_.between(3 * kSecond, 40 * kSecond);
          BehaviorEvent e;
          e.kind = BehaviorKind::Click;
          e.session_id = session;
          e.query_id = q.query_id;
          e.user_id = user;
          e.item_id = id;
          e.event_ts = t;
          events_.push_back(e);
          ++clicks_total_;
          if (std::find(clicked.begin(), clicked.end(), id) != clicked.end()) {
            ++repeats_total_;
          } else {
            clicked.push_back(id);
          }
        };
        emit_click();
        if (!was_clicked && rng_.bernoulli(p_double)) emit_click();

        if (rng_.bernoulli(cfg_.view_rate)) {
          t += rng_.between(1 * kSecond, 20 * kSecond);
          events_.push_back(view_event(session, user, id, t));
          if (std::find(viewed.begin(), viewed.end(), id) == viewed.end()) viewed.push_back(id);
        }
        if (!was_clicked && rng_.bernoulli(std::min(1.0, 2.0 * cfg_.purchase_rate * rel))) {
          to_purchase.emplace_back(id, rel);
        }
      }

      // Browsing outside the SERP.
      if (rng_.bernoulli(0.5)) {
        t += rng_.between(10 * kSecond, 60 * kSecond);
        const ItemId id = pool[static_cast<std::size_t>(rng_.below(pool.size()))];
        events_.push_back(view_event(session, user, id, t));
        if (std::find(viewed.begin(), viewed.end(), id) == viewed.end()) viewed.push_back(id);
      }
      now = t + rng_.between(30 * kSecond, 5 * kMinute);
      queries_.push_back(std::move(q));
    }

    if (!to_purchase.empty()) {
      const std::int64_t order = next_order_id_++;
      Timestamp t = now + rng_.between(1 * kMinute, 10 * kMinute);
      for (const auto& [id, rel] : to_purchase) {
        BehaviorEvent e;
        e.kind = BehaviorKind::Purchase;
        e.session_id = session;
        e.user_id = user;
        e.item_id = id;
        e.event_ts = t;
        e.order_id = order;
        events_.push_back(e);
        t += kSecond;
      }
    }
  }

  static BehaviorEvent view_event(SessionId session, std::optional<UserId> user, ItemId id,
                                  Timestamp t) {
    BehaviorEvent e;
    e.kind = BehaviorKind::View;
    e.session_id = session;
    e.user_id = user;
    e.item_id = id;
    e.event_ts = t;
    return e;
  }

  const GenConfig& cfg_;
  Rng rng_;
  Vocabulary product_words_;
  Vocabulary query_words_;
  std::vector<ProductRecord> products_;
  std::vector<std::vector<ItemId>> by_category_;
  std::vector<QueryRecord> queries_;
  std::vector<BehaviorEvent> events_;
  LatentModel latent_;
  QueryId next_query_id_ = 1;
  std::int64_t next_order_id_ = 1;
  std::size_t clicks_total_ = 0;
  std::size_t repeats_total_ = 0;
  double overlap_sum_ = 0.0;
  std::size_t overlap_pairs_ = 0;
};

}  // namespace

void validate(const GenConfig& cfg) {
  auto positive = [](std::int64_t v, const char* name) {
    require(v >= 1, std::string(name) + " must be >= 1");
  };
  positive(cfg.n_users, "n_users");
  positive(cfg.n_anonymous, "n_anonymous");
  positive(cfg.n_sessions, "n_sessions");
  positive(cfg.n_products, "n_products");
  positive(cfg.n_categories, "n_categories");
  positive(cfg.vocab_query, "vocab_query");
  positive(cfg.vocab_product, "vocab_product");
  positive(cfg.serp_len, "serp_len");
  positive(cfg.time_span_days, "time_span_days");
  auto fraction = [](double v, const char* name) {
    require(v >= 0.0 && v <= 1.0, std::string(name) + " must be in [0, 1]");
  };
  fraction(cfg.frac_query_full, "frac_query_full");
  fraction(cfg.target_repeat_click_rate, "target_repeat_click_rate");
  fraction(cfg.target_token_overlap_rate, "target_token_overlap_rate");
  fraction(cfg.click_rate, "click_rate");
  fraction(cfg.view_rate, "view_rate");
  fraction(cfg.purchase_rate, "purchase_rate");
  fraction(cfg.test_fraction, "test_fraction");
  require(cfg.mean_queries_per_session >= 1.0, "mean_queries_per_session must be >= 1");
  require(cfg.serp_len <= cfg.n_products, "serp_len exceeds n_products");
  require(cfg.vocab_product >= 2 * (cfg.n_categories + 1),
          "vocab_product too small for per-category word blocks");
  require(cfg.vocab_query >= 2 * (cfg.n_categories + 1),
          "vocab_query too small for per-category word blocks");
}

double LatentModel::relevance(const QueryRecord& query, const ProductRecord& item) const {
  const Actor& actor =
      query.user_id ? users.at(*query.user_id) : anonymous_sessions.at(query.session_id);
  const Item& latent = items.at(item.item_id);
  double dot = 0.0;
  for (std::size_t d = 0; d < kLatentDim; ++d) dot += actor.factor[d] * latent.factor[d];
  const CategoryId intent = query_intent.at(query.query_id);
  const bool favorite =
      item.category_id == actor.favorites[0] || item.category_id == actor.favorites[1];
  const double z = kFactorWeight * dot + kIntentWeight * (item.category_id == intent) +
                   kFavoriteWeight * favorite + latent.popularity -
                   kPriceWeight * std::log1p(item.price) + kRelevanceBias;
  return sigmoid(z);
}

GeneratedCorpus generate_dataset(const GenConfig& cfg) {
  validate(cfg);
  return Generator(cfg).run();
}

std::string gen_config_json(const GenConfig& cfg) {
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["n_users"] = cfg.n_users;
  j["n_anonymous"] = cfg.n_anonymous;
  j["n_sessions"] = cfg.n_sessions;
  j["n_products"] = cfg.n_products;
  j["n_categories"] = cfg.n_categories;
  j["vocab_query"] = cfg.vocab_query;
  j["vocab_product"] = cfg.vocab_product;
  j["frac_query_full"] = cfg.frac_query_full;
  j["target_repeat_click_rate"] = cfg.target_repeat_click_rate;
  j["target_token_overlap_rate"] = cfg.target_token_overlap_rate;
  j["serp_len"] = cfg.serp_len;
  j["time_span_days"] = cfg.time_span_days;
  j["click_rate"] = cfg.click_rate;
  j["view_rate"] = cfg.view_rate;
  j["purchase_rate"] = cfg.purchase_rate;
  j["test_fraction"] = cfg.test_fraction;
  j["mean_queries_per_session"] = cfg.mean_queries_per_session;
  return j.dump(2) + "\n";
}

namespace {

std::string join_decimals(std::span<const double> values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out.push_back(' ');
    out += format_decimal(values[i]);
  }
  return out;
}

template <typename Map>
std::vector<typename Map::key_type> sorted_keys(const Map& m) {
  std::vector<typename Map::key_type> keys;
  keys.reserve(m.size());
  for (const auto& kv : m) keys.push_back(kv.first);
  std::sort(keys.begin(), keys.end());
  return keys;
}

}  // namespace

void write_generated(const GeneratedCorpus& corpus, const GenConfig& cfg,
                     const std::filesystem::path& dir) {
  write_dataset(corpus.dataset, dir);
  {
    std::ofstream out(dir / "genconfig.json", std::ios::binary);
    out << gen_config_json(cfg);
  }
  std::ofstream out(dir / "latent.csv", std::ios::binary);
  if (!out) throw UsageError("cannot write " + (dir / "latent.csv").string());
  out << "entity,id,values\n";
  const auto& lat = corpus.latent;
  auto actor_row = [&](const char* kind, std::int64_t id, const LatentModel::Actor& a) {
    std::vector<double> v(a.factor.begin(), a.factor.end());
    v.push_back(static_cast<double>(a.favorites[0]));
    v.push_back(static_cast<double>(a.favorites[1]));
    out << kind << ',' << id << ",\"" << join_decimals(v) << "\"\n";
  };
  for (UserId u : sorted_keys(lat.users)) actor_row("user", u, lat.users.at(u));
  for (SessionId s : sorted_keys(lat.anonymous_sessions)) {
    actor_row("session", s, lat.anonymous_sessions.at(s));
  }
  for (ItemId i : sorted_keys(lat.items)) {
    const auto& item = lat.items.at(i);
    std::vector<double> v(item.factor.begin(), item.factor.end());
    v.push_back(item.popularity);
    out << "item," << i << ",\"" << join_decimals(v) << "\"\n";
  }
  for (QueryId q : sorted_keys(lat.query_intent)) {
    out << "query," << q << ",\"" << lat.query_intent.at(q) << "\"\n";
  }
}

PropertyReport measure_properties(const Dataset& ds) {
  PropertyReport r;
  std::size_t repeats = 0;
  std::size_t last_clicks = 0, last_repeats = 0;
  std::unordered_map<SessionId, QueryId> last_query;
  for (const auto& q : ds.queries()) {
    const auto qs = ds.session_queries(q.session_id);
    last_query[q.session_id] = qs.back()->query_id;
  }

  std::unordered_set<ItemId> clicked;
  std::optional<SessionId> current;
  for (const auto& e : ds.events()) {
    if (e.session_id != current) {
      clicked.clear();
      current = e.session_id;
    }
    switch (e.kind) {
      case BehaviorKind::View: ++r.views; continue;
      case BehaviorKind::Purchase: ++r.purchases; continue;
      case BehaviorKind::Click: break;
    }
    ++r.clicks;
    const bool repeat = !clicked.insert(e.item_id).second;
    repeats += repeat;
    const auto lq = last_query.find(e.session_id);
    if (e.query_id && lq != last_query.end() && lq->second == *e.query_id) {
      ++last_clicks;
      last_repeats += repeat;
    }
  }
  if (r.clicks) r.repeat_click_rate = static_cast<double>(repeats) / static_cast<double>(r.clicks);
  if (last_clicks) {
    r.last_query_repeat_click_rate =
        static_cast<double>(last_repeats) / static_cast<double>(last_clicks);
  }

  double overlap_sum = 0.0;
  std::size_t pairs = 0;
  for (const auto& q : ds.queries()) {
    if (q.scenario != Scenario::Full) continue;
    const std::set<TokenId> qtok(q.query_tokens.begin(), q.query_tokens.end());
    for (ItemId id : q.shown_items) {
      ++pairs;
      const ProductRecord* p = ds.find_product(id);
      if (!p || qtok.empty()) continue;
      const std::set<TokenId> ptok(p->name_tokens.begin(), p->name_tokens.end());
      std::size_t hit = 0;
      for (TokenId t : qtok) hit += ptok.contains(t);
      overlap_sum += static_cast<double>(hit) / static_cast<double>(qtok.size());
    }
  }
  if (pairs) r.token_overlap_rate = overlap_sum / static_cast<double>(pairs);
  return r;
}

}  // namespace serprank
