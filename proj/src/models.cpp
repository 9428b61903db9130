#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "serprank/error.hpp"
#include "serprank/random.hpp"
#include "serprank/rankers.hpp"

namespace serprank {

using nlohmann::ordered_json;

InstanceRefs refs_of(std::span<const LabeledInstance> instances) {
  InstanceRefs refs;
  refs.reserve(instances.size());
  for (const auto& inst : instances) refs.push_back(&inst);
  return refs;
}

std::vector<int> grade_query(const Dataset& log, const QueryRecord& query) {
  std::vector<int> grades(query.shown_items.size(), 0);
  for (const auto& e : log.session_events(query.session_id)) {
    for (std::size_t i = 0; i < grades.size(); ++i) {
      if (query.shown_items[i] != e.item_id) continue;
      if (e.kind == BehaviorKind::Purchase && e.event_ts >= query.event_ts) {
        grades[i] = 2;
      } else if (e.kind == BehaviorKind::Click && e.query_id == query.query_id) {
        grades[i] = std::max(grades[i], 1);
      }
    }
  }
  return grades;
}

std::vector<LabeledInstance> grade_instances(const Dataset& queries_from, const Dataset& log,
                                             const FeatureExtractor& features,
                                             std::optional<Scenario> scenario) {
  std::vector<LabeledInstance> out;
  const auto& products = features.tables().products;
  for (const auto& q : queries_from.queries()) {
    if (scenario && q.scenario != *scenario) continue;
    const SessionContext ctx = build_session_context(log, q);
    const auto grades = grade_query(log, q);
    for (std::size_t i = 0; i < q.shown_items.size(); ++i) {
      LabeledInstance inst;
      inst.query_id = q.query_id;
      inst.item_id = q.shown_items[i];
      inst.features = features.extract(q, inst.item_id, ctx);
      inst.grade = grades[i];
      if (q.scenario == Scenario::Full) {
        inst.query_tokens = q.query_tokens;
        if (const auto it = products.find(inst.item_id); it != products.end()) {
          inst.item_tokens = it->second.name_tokens;
        }
      }
      out.push_back(std::move(inst));
    }
  }
  return out;
}

std::vector<PairInstance> build_pairwise_examples(std::span<const LabeledInstance* const> instances,
                                                  std::size_t cap_per_query, std::uint64_t seed) {
  std::vector<PairInstance> out;
  std::vector<PairInstance> group;
  for (std::size_t begin = 0; begin < instances.size();) {
    const QueryId q = instances[begin]->query_id;
    std::size_t end = begin;
    while (end < instances.size() && instances[end]->query_id == q) ++end;
    group.clear();
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t j = begin; j < end; ++j) {
        if (instances[i]->grade > instances[j]->grade) group.push_back({q, i, j});
      }
    }
    if (cap_per_query > 0 && group.size() > cap_per_query) {
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(q)));
      rng.shuffle(std::span(group));
      group.resize(cap_per_query);
      std::sort(group.begin(), group.end(), [](const PairInstance& a, const PairInstance& b) {
        return std::tie(a.winner, a.loser) < std::tie(b.winner, b.loser);
      });
    }
    out.insert(out.end(), group.begin(), group.end());
    begin = end;
  }
  return out;
}

std::vector<PairInstance> build_pairwise_examples(std::span<const LabeledInstance> instances,
                                                  std::size_t cap_per_query, std::uint64_t seed) {
  const auto refs = refs_of(instances);
  return build_pairwise_examples(std::span<const LabeledInstance* const>(refs), cap_per_query,
                                 seed);
}

std::vector<IndexRange> slot_ranges(const FeatureSpace& space, std::span<const SlotKind> kinds) {
  std::vector<IndexRange> ranges;
  for (SlotKind k : kinds) {
    const Slot& s = space.slot(k);
    ranges.push_back({s.offset, s.end()});
  }
  std::sort(ranges.begin(), ranges.end(),
            [](const IndexRange& a, const IndexRange& b) { return a.begin < b.begin; });
  std::vector<IndexRange> merged;
  for (const auto& r : ranges) {
    if (!merged.empty() && merged.back().end >= r.begin) {
      merged.back().end = std::max(merged.back().end, r.end);
    } else {
      merged.push_back(r);
    }
  }
  return merged;
}

// --- Scoring -----------------------------------------------------------------------

double score(const LinearModel& m, const FeatureVector& x) {
  if (x.min_dim() > m.dim) {
    throw DimensionMismatch("feature index " + std::to_string(x.min_dim() - 1) +
                            " outside model dimension " + std::to_string(m.dim));
  }
  double s = m.bias;
  for (const auto& e : x.entries()) s += m.weights[e.index] * static_cast<double>(e.value);
  return s;
}

double probability(const LinearModel& m, const FeatureVector& x) {
  const double z = score(m, x);
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double score(const TreeEnsembleModel& m, const FeatureVector& x) {
  double s = m.base_score;
  for (const auto& t : m.trees) s += m.shrinkage * t.predict(x);
  return s;
}

double score(const Model& m, const LabeledInstance& instance) {
  return std::visit(
      [&](const auto& model) -> double {
        using T = std::decay_t<decltype(model)>;
        if constexpr (std::is_same_v<T, EmbeddingModel>) {
          return score(model, instance.query_tokens, instance.item_tokens);
        } else {
          return score(model, instance.features);
        }
      },
      m);
}

const char* model_kind(const Model& m) noexcept {
  switch (m.index()) {
    case 0:
      return std::get<LinearModel>(m).objective == LinearObjective::Logistic ? "logistic"
                                                                             : "ranksvm";
    case 1:
      return "gbdt";
    default:
      return "dmm";
  }
}

// --- Model files ---------------------------------------------------------------------

namespace {

constexpr const char* kModelFormat = "serprank.model/1";

ordered_json ranges_json(const std::vector<IndexRange>& ranges) {
  ordered_json a = ordered_json::array();
  for (const auto& r : ranges) a.push_back({r.begin, r.end});
  return a;
}

std::vector<IndexRange> ranges_from(const ordered_json& a) {
  std::vector<IndexRange> out;
  for (const auto& r : a) out.push_back({r.at(0).get<std::size_t>(), r.at(1).get<std::size_t>()});
  return out;
}

ordered_json body_json(const LinearModel& m) {
  ordered_json j;
  j["dim"] = m.dim;
  j["bias"] = m.bias;
  j["active"] = ranges_json(m.active);
  ordered_json w = ordered_json::array();
  for (std::size_t i = 0; i < m.weights.size(); ++i) {
    if (m.weights[i] != 0.0) w.push_back({i, m.weights[i]});
  }
  j["weights"] = std::move(w);
  return j;
}

ordered_json body_json(const TreeEnsembleModel& m) {
  ordered_json j;
  j["dim"] = m.dim;
  j["base_score"] = m.base_score;
  j["shrinkage"] = m.shrinkage;
  j["max_depth"] = m.max_depth;
  ordered_json trees = ordered_json::array();
  for (const auto& t : m.trees) {
    ordered_json nodes = ordered_json::array();
    for (const auto& n : t.nodes) {
      nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
    }
    trees.push_back(std::move(nodes));
  }
  j["trees"] = std::move(trees);
  return j;
}

ordered_json body_json(const EmbeddingModel& m) {
  ordered_json j;
  j["dim"] = m.dim;
  j["query_vocab"] = m.query_vocab;
  j["product_vocab"] = m.product_vocab;
  j["query_table"] = m.query_table;
  j["product_table"] = m.product_table;
  return j;
}

Model model_from(const std::string& kind, const ordered_json& j) {
  if (kind == "logistic" || kind == "ranksvm") {
    LinearModel m = LinearModel::zeros(
        kind == "logistic" ? LinearObjective::Logistic : LinearObjective::RankSvm,
        j.at("dim").get<std::size_t>());
    m.bias = j.at("bias").get<double>();
    m.active = ranges_from(j.at("active"));
    for (const auto& w : j.at("weights")) {
      const auto i = w.at(0).get<std::size_t>();
      if (i >= m.dim) throw DimensionMismatch("weight index outside model dimension");
      m.weights[i] = w.at(1).get<double>();
    }
    return m;
  }
  if (kind == "gbdt") {
    TreeEnsembleModel m;
    m.dim = j.at("dim").get<std::size_t>();
    m.base_score = j.at("base_score").get<double>();
    m.shrinkage = j.at("shrinkage").get<double>();
    m.max_depth = j.at("max_depth").get<int>();
    for (const auto& t : j.at("trees")) {
      RegressionTree tree;
      for (const auto& n : t) {
        tree.nodes.push_back({n.at(0).get<std::int64_t>(), n.at(1).get<double>(),
                              n.at(2).get<std::int32_t>(), n.at(3).get<std::int32_t>(),
                              n.at(4).get<double>()});
      }
      const auto size = static_cast<std::int32_t>(tree.nodes.size());
      for (const auto& n : tree.nodes) {
        if (!n.is_leaf() && (n.left <= 0 || n.right <= 0 || n.left >= size || n.right >= size)) {
          throw DataError("tree node child out of range");
        }
      }
      m.trees.push_back(std::move(tree));
    }
    return m;
  }
  if (kind == "dmm") {
    EmbeddingModel m;
    m.dim = j.at("dim").get<std::size_t>();
    m.query_vocab = j.at("query_vocab").get<std::size_t>();
    m.product_vocab = j.at("product_vocab").get<std::size_t>();
    m.query_table = j.at("query_table").get<std::vector<double>>();
    m.product_table = j.at("product_table").get<std::vector<double>>();
    if (m.query_table.size() != m.query_vocab * m.dim ||
        m.product_table.size() != m.product_vocab * m.dim) {
      throw DataError("embedding table size does not match vocabulary");
    }
    return m;
  }
  throw DataError("unknown model kind '" + kind + "'");
}

}  // namespace

std::string model_to_json(const ModelFile& file) {
  ordered_json j;
  j["format"] = kModelFormat;
  j["name"] = file.name;
  j["kind"] = model_kind(file.model);
  j["seed"] = file.seed;
  j["feature_space_checksum"] = file.feature_space_checksum;
  j["config_checksum"] = file.config_checksum;
  j["hyperparams"] = ordered_json::parse(file.hyperparams_json);
  j["model"] = std::visit([](const auto& m) { return body_json(m); }, file.model);
  return j.dump() + "\n";
}

ModelFile model_from_json(std::string_view text, std::optional<std::string_view> expected_checksum) {
  try {
    const auto j = ordered_json::parse(text);
    if (j.at("format").get<std::string>() != kModelFormat) {
      throw DataError("not a " + std::string(kModelFormat) + " file");
    }
    ModelFile f;
    f.name = j.at("name").get<std::string>();
    f.seed = j.at("seed").get<std::uint64_t>();
    f.feature_space_checksum = j.at("feature_space_checksum").get<std::string>();
    f.config_checksum = j.at("config_checksum").get<std::string>();
    if (expected_checksum && f.feature_space_checksum != *expected_checksum) {
      throw ChecksumMismatch("model '" + f.name + "' was trained on feature space " +
                             f.feature_space_checksum + ", expected " +
                             std::string(*expected_checksum));
    }
    f.hyperparams_json = j.at("hyperparams").dump();
    f.model = model_from(j.at("kind").get<std::string>(), j.at("model"));
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model file: ") + e.what());
  }
}

}  // namespace serprank
