#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "serprank/corpus.hpp"

namespace serprank {

/// Knobs of the synthetic log generator. Token ids for product names live in
/// [1, vocab_product]; background query tokens live in
/// [vocab_product + 1, vocab_product + vocab_query], so the two vocabularies
/// only meet through tokens copied from product names.
struct GenConfig {
  std::uint64_t seed = 42;
  std::int64_t n_users = 1500;
  /// Relative weight of anonymous sessions: a session is anonymous with
  /// probability n_anonymous / (n_users + n_anonymous).
  std::int64_t n_anonymous = 1800;
  std::int64_t n_sessions = 5000;
  std::int64_t n_products = 2000;
  std::int64_t n_categories = 40;
  std::int64_t vocab_query = 160;
  std::int64_t vocab_product = 320;
  double frac_query_full = 0.3;
  double target_repeat_click_rate = 0.20;
  double target_token_overlap_rate = 0.018;
  std::int64_t serp_len = 10;
  std::int64_t time_span_days = 150;
  double click_rate = 0.5;
  double view_rate = 0.6;
  double purchase_rate = 0.15;
  /// Queries in the final test_fraction of the time span get is_test=true.
  double test_fraction = 0.2;
  double mean_queries_per_session = 2.2;

  bool operator==(const GenConfig&) const = default;
};

void validate(const GenConfig& cfg);

inline constexpr std::size_t kLatentDim = 8;
using LatentVector = std::array<double, kLatentDim>;

/// Ground-truth relevance model behind a generated corpus. Test oracles only;
/// the ranking pipeline never reads it.
struct LatentModel {
  struct Actor {
    LatentVector factor{};
    std::array<CategoryId, 2> favorites{};
  };
  struct Item {
    LatentVector factor{};
    double popularity = 0.0;
  };

  std::unordered_map<UserId, Actor> users;
  /// Anonymous sessions carry their own actor.
  std::unordered_map<SessionId, Actor> anonymous_sessions;
  std::unordered_map<ItemId, Item> items;
  std::unordered_map<QueryId, CategoryId> query_intent;

  /// Probability-scale relevance of `item` for the actor and intent of `query`.
  double relevance(const QueryRecord& query, const ProductRecord& item) const;
};

struct GeneratedCorpus {
  Dataset dataset;
  LatentModel latent;
};

/// Pure function of cfg. Throws InfeasibleConfig for unreachable settings.
GeneratedCorpus generate_dataset(const GenConfig& cfg);

/// Writes the five tables plus genconfig.json and latent.csv.
void write_generated(const GeneratedCorpus& corpus, const GenConfig& cfg,
                     const std::filesystem::path& dir);

std::string gen_config_json(const GenConfig& cfg);

struct PropertyReport {
  /// Clicks whose (session, item) was clicked earlier in the same session.
  double repeat_click_rate = 0.0;
  /// Same, restricted to clicks issued from the last query of their session.
  double last_query_repeat_click_rate = 0.0;
  /// Mean over query-full (query, shown item) pairs of
  /// |tokens(query) ∩ tokens(name)| / |tokens(query)| on distinct tokens.
  double token_overlap_rate = 0.0;
  std::size_t clicks = 0;
  std::size_t views = 0;
  std::size_t purchases = 0;
};

PropertyReport measure_properties(const Dataset& ds);

}  // namespace serprank
