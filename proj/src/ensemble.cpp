#include "serprank/ensemble.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "parallel.hpp"
#include "serprank/error.hpp"
#include "serprank/metrics.hpp"
#include "serprank/random.hpp"

namespace serprank {

using nlohmann::ordered_json;

namespace {

std::string sgd_json(const SgdHyperparams& hp) {
  ordered_json j;
  j["learning_rate"] = hp.learning_rate;
  j["epochs"] = hp.epochs;
  j["l1"] = hp.l1;
  j["l2"] = hp.l2;
  j["decay_steps"] = hp.decay_steps;
  j["seed"] = hp.seed;
  return j.dump();
}

std::string gbdt_json(const GbdtHyperparams& hp) {
  ordered_json j;
  j["n_trees"] = hp.n_trees;
  j["max_depth"] = hp.max_depth;
  j["shrinkage"] = hp.shrinkage;
  j["min_leaf"] = hp.min_leaf;
  j["sparse_columns"] = hp.sparse_columns;
  j["seed"] = hp.seed;
  return j.dump();
}

std::string dmm_json(const DmmHyperparams& hp, std::size_t pair_cap) {
  ordered_json j;
  j["dim"] = hp.dim;
  j["learning_rate"] = hp.learning_rate;
  j["epochs"] = hp.epochs;
  j["init_range"] = hp.init_range;
  j["decay_steps"] = hp.decay_steps;
  j["seed"] = hp.seed;
  j["pair_cap"] = pair_cap;
  return j.dump();
}

std::string with_pair_cap(const std::string& json, std::size_t pair_cap) {
  auto j = ordered_json::parse(json);
  j["pair_cap"] = pair_cap;
  return j.dump();
}

BaseLearner lr_learner(std::string name, const FeatureSpace& space, const RankerSettings& s,
                       std::vector<SlotKind> kinds) {
  const auto active = slot_ranges(space, kinds);
  const std::size_t dim = space.total_dim();
  const SgdHyperparams hp = s.lr;
  return {std::move(name), sgd_json(hp),
          [active, dim, hp](std::span<const LabeledInstance* const> xs) -> Model {
            return train_logistic(xs, hp, dim, active);
          }};
}

BaseLearner ranksvm_learner(const FeatureSpace& space, const RankerSettings& s) {
  const SlotKind kinds[] = {SlotKind::Dense, SlotKind::Position};
  const auto active = slot_ranges(space, kinds);
  const std::size_t dim = space.total_dim();
  const SgdHyperparams hp = s.ranksvm;
  const std::size_t cap = s.pair_cap;
  return {"ranksvm", with_pair_cap(sgd_json(hp), cap),
          [active, dim, hp, cap](std::span<const LabeledInstance* const> xs) -> Model {
            const auto pairs = build_pairwise_examples(xs, cap, hp.seed);
            return train_ranksvm(xs, pairs, hp, dim, active);
          }};
}

BaseLearner dmm_learner(const RankerSettings& s) {
  const DmmHyperparams hp = s.dmm;
  const std::size_t cap = s.pair_cap;
  return {"dmm", dmm_json(hp, cap), [hp, cap](std::span<const LabeledInstance* const> xs) -> Model {
            const auto pairs = build_pairwise_examples(xs, cap, hp.seed);
            return train_dmm(build_match_pairs(xs, pairs), hp);
          }};
}

/// Splits instances (grouped by query) into per-query [begin, end) ranges.
std::vector<std::pair<std::size_t, std::size_t>> query_groups(
    std::span<const LabeledInstance* const> xs) {
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  for (std::size_t b = 0; b < xs.size();) {
    std::size_t e = b;
    while (e < xs.size() && xs[e]->query_id == xs[b]->query_id) ++e;
    groups.emplace_back(b, e);
    b = e;
  }
  return groups;
}

std::vector<Model> train_all(std::span<const BaseLearner> learners,
                             std::span<const LabeledInstance* const> xs, std::size_t threads) {
  std::vector<Model> models(learners.size());
  detail::parallel_for(learners.size(), threads,
                       [&](std::size_t m) { models[m] = learners[m].train(xs); });
  return models;
}

std::optional<CategoryId> category_of(const Dataset& ds, QueryId q) {
  const auto* rec = ds.find_query(q);
  return rec ? rec->category_id : std::nullopt;
}

}  // namespace

std::vector<BaseLearner> full_scenario_learners(const FeatureSpace& space,
                                                const RankerSettings& settings) {
  std::vector<BaseLearner> out;
  out.push_back(ranksvm_learner(space, settings));
  out.push_back(dmm_learner(settings));
  out.push_back(lr_learner("lr_all", space, settings,
                           {SlotKind::Dense, SlotKind::Position, SlotKind::Session,
                            SlotKind::CategoryToken, SlotKind::CrossToken}));
  return out;
}

std::vector<BaseLearner> less_scenario_learners(const FeatureSpace& space,
                                                const RankerSettings& settings) {
  std::vector<BaseLearner> out;
  out.push_back(lr_learner("lr_dense", space, settings, {SlotKind::Dense, SlotKind::Position}));
  out.push_back(lr_learner("lr_dense_cat", space, settings,
                           {SlotKind::Dense, SlotKind::Position, SlotKind::CategoryToken}));
  out.push_back(lr_learner("lr_dense_session", space, settings,
                           {SlotKind::Dense, SlotKind::Position, SlotKind::Session}));
  out.push_back(lr_learner("lr_all", space, settings,
                           {SlotKind::Dense, SlotKind::Position, SlotKind::Session,
                            SlotKind::CategoryToken, SlotKind::CrossToken}));
  out.push_back(ranksvm_learner(space, settings));
  const SlotKind sparse[] = {SlotKind::CategoryToken};
  out.push_back(gbdt_learner(space, settings, sparse));
  return out;
}

BaseLearner gbdt_learner(const FeatureSpace& space, const RankerSettings& settings,
                         std::span<const SlotKind> sparse_slots) {
  GbdtColumns columns;
  columns.dense = {space.slot(SlotKind::Dense).offset, space.slot(SlotKind::Session).end()};
  columns.sparse = slot_ranges(space, sparse_slots);
  const std::size_t dim = space.total_dim();
  const GbdtHyperparams hp = settings.gbdt;
  return {"gbdt", gbdt_json(hp),
          [columns, dim, hp](std::span<const LabeledInstance* const> xs) -> Model {
            return train_gbdt(xs, hp, dim, columns);
          }};
}

// --- Stacking ----------------------------------------------------------------------

std::vector<int> assign_query_folds(std::span<const LabeledInstance* const> instances, int k,
                                    std::uint64_t seed) {
  if (k < 2) throw UsageError("stacking needs at least 2 folds");
  const auto groups = query_groups(instances);
  if (groups.size() < static_cast<std::size_t>(k)) {
    throw InsufficientData(std::to_string(groups.size()) + " queries cannot fill " +
                           std::to_string(k) + " folds");
  }
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0xf01d));
  rng.shuffle(std::span(order));
  std::vector<int> fold(groups.size());
  for (std::size_t p = 0; p < order.size(); ++p) {
    fold[order[p]] = static_cast<int>(p % static_cast<std::size_t>(k));
  }
  return fold;
}

StackedMatrix build_oof_matrix(std::span<const LabeledInstance* const> instances,
                               std::span<const BaseLearner> learners, int k, std::uint64_t seed,
                               std::size_t threads) {
  const auto query_fold = assign_query_folds(instances, k, seed);
  const auto groups = query_groups(instances);
  StackedMatrix mx;
  for (const auto& l : learners) mx.models.push_back(l.name);
  mx.folds.resize(instances.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t i = groups[g].first; i < groups[g].second; ++i) mx.folds[i] = query_fold[g];
  }
  for (const auto* inst : instances) {
    mx.query_ids.push_back(inst->query_id);
    mx.item_ids.push_back(inst->item_id);
    mx.grades.push_back(inst->grade);
  }
  mx.scores.assign(instances.size() * learners.size(), 0.0);

  const std::size_t n_models = learners.size();
  const std::size_t tasks = static_cast<std::size_t>(k) * n_models;
  detail::parallel_for(tasks, threads, [&](std::size_t task) {
    const int f = static_cast<int>(task / n_models);
    const std::size_t m = task % n_models;
    InstanceRefs rest;
    for (std::size_t i = 0; i < instances.size(); ++i) {
      if (mx.folds[i] != f) rest.push_back(instances[i]);
    }
    const Model model = learners[m].train(rest);
    for (std::size_t i = 0; i < instances.size(); ++i) {
      if (mx.folds[i] == f) mx.scores[i * n_models + m] = score(model, *instances[i]);
    }
  });
  return mx;
}

FeatureVector meta_features(std::span<const double> base_scores) {
  std::vector<FeatureEntry> entries;
  for (std::size_t i = 0; i < base_scores.size(); ++i) {
    entries.push_back({static_cast<std::uint32_t>(i), static_cast<float>(base_scores[i])});
  }
  return FeatureVector::from_entries(std::move(entries));
}

TreeEnsembleModel train_meta(const StackedMatrix& matrix, const GbdtHyperparams& hp,
                             TrainTrace* trace) {
  std::vector<FeatureVector> rows;
  rows.reserve(matrix.rows());
  std::vector<double> targets;
  for (std::size_t r = 0; r < matrix.rows(); ++r) {
    rows.push_back(meta_features(
        std::span<const double>(matrix.scores).subspan(r * matrix.cols(), matrix.cols())));
    targets.push_back(static_cast<double>(matrix.grades[r]));
  }
  std::vector<const FeatureVector*> ptrs;
  for (const auto& r : rows) ptrs.push_back(&r);
  GbdtColumns columns;
  columns.dense = {0, matrix.cols()};
  return train_gbdt(ptrs, targets, hp, matrix.cols(), columns, trace);
}

// --- Selection ---------------------------------------------------------------------

std::size_t CategorySelector::pick(std::optional<CategoryId> category) const {
  if (category) {
    if (const auto it = choice.find(*category); it != choice.end()) return it->second;
  }
  return fallback;
}

namespace {

std::size_t argmax_lowest(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace

CategorySelector select_by_category(std::span<const SelectorQuery> queries,
                                    std::vector<std::string> models, int min_queries) {
  if (queries.empty()) throw NoValidationData("no query-less validation queries");
  if (models.empty()) throw UsageError("selector needs at least one model");
  std::vector<const SelectorQuery*> sorted;
  for (const auto& q : queries) {
    if (q.ndcg.size() != models.size()) throw DimensionMismatch("NDCG row size != model count");
    sorted.push_back(&q);
  }
  std::sort(sorted.begin(), sorted.end(), [](const SelectorQuery* a, const SelectorQuery* b) {
    return a->query_id < b->query_id;
  });
  const std::size_t m = models.size();
  std::vector<CompensatedSum> overall(m);
  std::map<CategoryId, std::vector<CompensatedSum>> per_cat;
  CategorySelector sel;
  for (const auto* q : sorted) {
    auto& sums = per_cat[q->category];
    if (sums.empty()) sums.resize(m);
    ++sel.category_queries[q->category];
    for (std::size_t i = 0; i < m; ++i) {
      overall[i].add(q->ndcg[i]);
      sums[i].add(q->ndcg[i]);
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    sel.overall_ndcg.push_back(overall[i].value() / static_cast<double>(sorted.size()));
  }
  sel.fallback = argmax_lowest(sel.overall_ndcg);
  for (const auto& [cat, sums] : per_cat) {
    const auto n = static_cast<double>(sel.category_queries[cat]);
    std::vector<double> means;
    for (const auto& s : sums) means.push_back(s.value() / n);
    if (sel.category_queries[cat] >= static_cast<std::size_t>(std::max(min_queries, 0))) {
      sel.choice[cat] = argmax_lowest(means);
    }
    sel.category_ndcg[cat] = std::move(means);
  }
  sel.models = std::move(models);
  return sel;
}

CategorySelector train_category_selector(std::span<const Model> models,
                                         std::vector<std::string> names,
                                         std::span<const LabeledInstance* const> validation,
                                         const Dataset& queries, int min_queries,
                                         std::size_t k) {
  if (names.size() != models.size()) throw DimensionMismatch("model names != models");
  std::vector<SelectorQuery> rows;
  for (const auto& [b, e] : query_groups(validation)) {
    SelectorQuery row;
    row.query_id = validation[b]->query_id;
    row.category = category_of(queries, row.query_id).value_or(-1);
    std::vector<ItemId> items;
    std::vector<int> grades;
    for (std::size_t i = b; i < e; ++i) {
      items.push_back(validation[i]->item_id);
      grades.push_back(validation[i]->grade);
    }
    for (const auto& model : models) {
      std::vector<double> s;
      for (std::size_t i = b; i < e; ++i) s.push_back(score(model, *validation[i]));
      const auto order = order_by_score(items, s);
      std::vector<int> ranked;
      for (ItemId it : order) {
        ranked.push_back(grades[static_cast<std::size_t>(
            std::find(items.begin(), items.end(), it) - items.begin())]);
      }
      row.ndcg.push_back(ndcg_at_k(ranked, k));
    }
    rows.push_back(std::move(row));
  }
  return select_by_category(rows, std::move(names), min_queries);
}

// --- Session bias ----------------------------------------------------------------------

void apply_session_bias(std::span<const ItemId> items, std::span<double> scores,
                        const SessionContext& ctx, double b) {
  if (items.size() != scores.size()) throw DimensionMismatch("items and scores differ in length");
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (ctx.has_history(items[i])) scores[i] += b;
  }
}

std::vector<ItemId> order_by_score(std::span<const ItemId> shown, std::span<const double> scores) {
  if (shown.size() != scores.size()) throw DimensionMismatch("items and scores differ in length");
  std::vector<std::size_t> idx(shown.size());
  std::iota(idx.begin(), idx.end(), 0);
  // Stable on position; position ties cannot occur, so item id never decides.
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<ItemId> out;
  for (std::size_t i : idx) out.push_back(shown[i]);
  return out;
}

double default_session_bias(std::span<const double> scores) {
  if (scores.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  return 10.0 * (*hi - *lo);
}

// --- Trained ensemble ------------------------------------------------------------------

double TrainedEnsemble::score(const LabeledInstance& instance, Scenario scenario,
                              std::optional<CategoryId> category) const {
  if (!trained) throw UntrainedEnsemble("ensemble has not been trained");
  if (scenario == Scenario::Full) {
    std::vector<double> base;
    for (const auto& m : full_members) base.push_back(serprank::score(m.model, instance));
    return serprank::score(meta, meta_features(base));
  }
  return serprank::score(less_members[selector.pick(category)].model, instance);
}

std::vector<LabeledInstance> query_instances(const QueryRecord& query, const SessionContext& ctx,
                                             const FeatureExtractor& features) {
  std::vector<LabeledInstance> out;
  const auto& products = features.tables().products;
  for (ItemId item : query.shown_items) {
    LabeledInstance inst;
    inst.query_id = query.query_id;
    inst.item_id = item;
    inst.features = features.extract(query, item, ctx);
    if (query.scenario == Scenario::Full) {
      inst.query_tokens = query.query_tokens;
      if (const auto it = products.find(item); it != products.end()) {
        inst.item_tokens = it->second.name_tokens;
      }
    }
    out.push_back(std::move(inst));
  }
  return out;
}

namespace {

std::vector<ItemId> rank_impl(const QueryRecord& query, const Dataset& context,
                              const TrainedEnsemble& ens, const FeatureExtractor& features,
                              bool biased) {
  if (!ens.trained) throw UntrainedEnsemble("ensemble has not been trained");
  const SessionContext ctx = build_session_context(context, query);
  const auto instances = query_instances(query, ctx, features);
  std::vector<double> scores;
  for (const auto& inst : instances) {
    scores.push_back(ens.score(inst, query.scenario, query.category_id));
  }
  if (biased) {
    apply_session_bias(query.shown_items, scores, ctx,
                       query.scenario == Scenario::Full ? ens.full_bias : ens.less_bias);
  }
  return order_by_score(query.shown_items, scores);
}

}  // namespace

std::vector<ItemId> rank_serp(const QueryRecord& query, const Dataset& context,
                              const TrainedEnsemble& ensemble, const FeatureExtractor& features) {
  return rank_impl(query, context, ensemble, features, true);
}

std::vector<ItemId> rank_serp_unbiased(const QueryRecord& query, const Dataset& context,
                                       const TrainedEnsemble& ensemble,
                                       const FeatureExtractor& features) {
  return rank_impl(query, context, ensemble, features, false);
}

TrainedEnsemble train_ensemble(const Dataset& train, const Dataset& log,
                               const FeatureExtractor& features, const FeatureOptions& options,
                               const RankerSettings& settings, const EnsembleConfig& config,
                               std::uint64_t seed, std::size_t threads,
                               EnsembleTrainInfo* info) {
  if (config.session_bias && *config.session_bias < 0) {
    throw UsageError("session bias must be >= 0");
  }
  TrainedEnsemble ens;
  EnsembleTrainInfo local;
  EnsembleTrainInfo& inf = info ? *info : local;

  // Query-full: stacking.
  {
    const auto full = grade_instances(train, log, features, Scenario::Full);
    const auto refs = refs_of(full);
    inf.full_instances = full.size();
    if (full.empty()) throw EmptyTrainingSet("no query-full training instances");
    const auto learners = full_scenario_learners(features.space(), settings);
    const auto matrix = build_oof_matrix(refs, learners, config.folds, seed, threads);
    ens.meta = train_meta(matrix, settings.meta, &inf.meta_trace);
    const auto models = train_all(learners, refs, threads);
    for (std::size_t m = 0; m < learners.size(); ++m) {
      ens.full_members.push_back({learners[m].name, models[m], learners[m].hyperparams_json});
    }
    if (config.session_bias) {
      ens.full_bias = *config.session_bias;
    } else {
      std::vector<double> s;
      for (std::size_t r = 0; r < matrix.rows(); ++r) {
        s.push_back(score(ens.meta, meta_features(std::span<const double>(matrix.scores)
                                                      .subspan(r * matrix.cols(), matrix.cols()))));
      }
      ens.full_bias = default_session_bias(s);
    }
  }

  // Query-less: selection over a pool fitted before an internal holdout.
  {
    const Timestamp cut = cutoff_for_fraction(train, 1.0 - config.holdout_fraction);
    Dataset inner, holdout;
    try {
      std::tie(inner, holdout) = split_by_time(train, cut);
    } catch (const EmptySplit& e) {
      throw NoValidationData(std::string("selector holdout: ") + e.what());
    }
    const auto inner_fx = FeatureExtractor::fit(inner, options);
    const auto inner_less = grade_instances(inner, log, inner_fx, Scenario::Less);
    const auto hold_less = grade_instances(holdout, log, inner_fx, Scenario::Less);
    if (inner_less.empty()) throw EmptyTrainingSet("no query-less instances before the holdout");
    if (hold_less.empty()) throw NoValidationData("no query-less queries in the holdout");
    const auto inner_learners = less_scenario_learners(inner_fx.space(), settings);
    const auto inner_models = train_all(inner_learners, refs_of(inner_less), threads);
    std::vector<std::string> names;
    for (const auto& l : inner_learners) names.push_back(l.name);
    const auto hold_refs = refs_of(hold_less);
    ens.selector = train_category_selector(inner_models, names, hold_refs, holdout,
                                           config.min_queries_per_category, settings.ndcg_k);
    inf.holdout_queries = query_groups(hold_refs).size();

    const auto less = grade_instances(train, log, features, Scenario::Less);
    inf.less_instances = less.size();
    const auto refs = refs_of(less);
    const auto learners = less_scenario_learners(features.space(), settings);
    const auto models = train_all(learners, refs, threads);
    for (std::size_t m = 0; m < learners.size(); ++m) {
      ens.less_members.push_back({learners[m].name, models[m], learners[m].hyperparams_json});
    }
    if (config.session_bias) {
      ens.less_bias = *config.session_bias;
    } else {
      std::vector<double> s;
      for (const auto& m : ens.less_members) {
        for (const auto* inst : refs) s.push_back(score(m.model, *inst));
      }
      ens.less_bias = default_session_bias(s);
    }
  }
  ens.trained = true;
  return ens;
}

// --- Bundle ------------------------------------------------------------------------

namespace {

constexpr const char* kEnsembleFormat = "serprank.ensemble/1";

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << text;
  if (!out) throw UsageError("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ordered_json save_members(const std::filesystem::path& dir, const std::string& prefix,
                          const std::vector<Member>& members, const Provenance& p) {
  ordered_json arr = ordered_json::array();
  for (const auto& m : members) {
    const std::string file = prefix + "_" + m.name + ".json";
    ModelFile mf{prefix + "_" + m.name, m.model, m.hyperparams_json, p.seed,
                 p.feature_space_checksum, p.config_checksum};
    write_text(dir / file, model_to_json(mf));
    arr.push_back({{"name", m.name}, {"file", file}});
  }
  return arr;
}

std::vector<Member> load_members(const std::filesystem::path& dir, const ordered_json& arr,
                                 std::optional<std::string_view> checksum) {
  std::vector<Member> out;
  for (const auto& m : arr) {
    auto mf = model_from_json(read_text(dir / m.at("file").get<std::string>()), checksum);
    out.push_back({m.at("name").get<std::string>(), std::move(mf.model), mf.hyperparams_json});
  }
  return out;
}

}  // namespace

void save_ensemble(const std::filesystem::path& dir, const TrainedEnsemble& ens,
                   const Provenance& p) {
  if (!ens.trained) throw UntrainedEnsemble("refusing to save an untrained ensemble");
  std::filesystem::create_directories(dir);
  ordered_json j;
  j["format"] = kEnsembleFormat;
  j["seed"] = p.seed;
  j["config_checksum"] = p.config_checksum;
  j["feature_space_checksum"] = p.feature_space_checksum;

  ordered_json full;
  full["members"] = save_members(dir, "full", ens.full_members, p);
  ModelFile meta{"full_meta", ens.meta, "{}", p.seed, p.feature_space_checksum,
                 p.config_checksum};
  write_text(dir / "full_meta.json", model_to_json(meta));
  full["meta"] = "full_meta.json";
  full["session_bias"] = ens.full_bias;
  j["full"] = std::move(full);

  ordered_json less;
  less["members"] = save_members(dir, "less", ens.less_members, p);
  less["session_bias"] = ens.less_bias;
  const auto& sel = ens.selector;
  ordered_json s;
  s["models"] = sel.models;
  s["fallback"] = sel.models.at(sel.fallback);
  s["overall_ndcg"] = sel.overall_ndcg;
  ordered_json cats = ordered_json::array();
  for (const auto& [cat, ndcg] : sel.category_ndcg) {
    ordered_json c;
    c["category"] = cat;
    c["queries"] = sel.category_queries.at(cat);
    const auto it = sel.choice.find(cat);
    c["model"] = it == sel.choice.end() ? ordered_json(nullptr) : ordered_json(sel.models[it->second]);
    c["ndcg"] = ndcg;
    cats.push_back(std::move(c));
  }
  s["categories"] = std::move(cats);
  less["selector"] = std::move(s);
  j["less"] = std::move(less);
  write_text(dir / "ensemble.json", j.dump(2) + "\n");
}

TrainedEnsemble load_ensemble(const std::filesystem::path& dir,
                              std::optional<std::string_view> checksum, Provenance* provenance) {
  try {
    const auto j = ordered_json::parse(read_text(dir / "ensemble.json"));
    if (j.at("format").get<std::string>() != kEnsembleFormat) {
      throw DataError("not a " + std::string(kEnsembleFormat) + " bundle");
    }
    if (checksum && j.at("feature_space_checksum").get<std::string>() != *checksum) {
      throw ChecksumMismatch("ensemble was trained on feature space " +
                             j.at("feature_space_checksum").get<std::string>() + ", expected " +
                             std::string(*checksum));
    }
    if (provenance) {
      provenance->seed = j.at("seed").get<std::uint64_t>();
      provenance->config_checksum = j.at("config_checksum").get<std::string>();
      provenance->feature_space_checksum = j.at("feature_space_checksum").get<std::string>();
    }
    TrainedEnsemble ens;
    const auto& full = j.at("full");
    ens.full_members = load_members(dir, full.at("members"), checksum);
    auto meta = model_from_json(read_text(dir / full.at("meta").get<std::string>()), checksum);
    const auto* tree = std::get_if<TreeEnsembleModel>(&meta.model);
    if (!tree) throw DataError("meta model is not a tree ensemble");
    ens.meta = *tree;
    ens.full_bias = full.at("session_bias").get<double>();

    const auto& less = j.at("less");
    ens.less_members = load_members(dir, less.at("members"), checksum);
    ens.less_bias = less.at("session_bias").get<double>();
    const auto& s = less.at("selector");
    auto& sel = ens.selector;
    sel.models = s.at("models").get<std::vector<std::string>>();
    auto index_of = [&](const std::string& name) {
      const auto it = std::find(sel.models.begin(), sel.models.end(), name);
      if (it == sel.models.end()) throw DataError("selector names unknown model '" + name + "'");
      return static_cast<std::size_t>(it - sel.models.begin());
    };
    sel.fallback = index_of(s.at("fallback").get<std::string>());
    sel.overall_ndcg = s.at("overall_ndcg").get<std::vector<double>>();
    for (const auto& c : s.at("categories")) {
      const auto cat = c.at("category").get<CategoryId>();
      sel.category_queries[cat] = c.at("queries").get<std::size_t>();
      sel.category_ndcg[cat] = c.at("ndcg").get<std::vector<double>>();
      if (!c.at("model").is_null()) sel.choice[cat] = index_of(c.at("model").get<std::string>());
    }
    if (sel.models.size() != ens.less_members.size()) {
      throw DataError("selector model count differs from query-less members");
    }
    for (std::size_t i = 0; i < sel.models.size(); ++i) {
      if (sel.models[i] != ens.less_members[i].name) {
        throw DataError("selector model order differs from query-less members");
      }
    }
    ens.trained = true;
    return ens;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed ensemble bundle: ") + e.what());
  }
}

}  // namespace serprank
