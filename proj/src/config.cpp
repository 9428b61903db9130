#include "serprank/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "serprank/error.hpp"
#include "serprank/random.hpp"

namespace serprank {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

/// Reads the keys of one JSON object and rejects the ones nobody asked for.
class Section {
 public:
  Section(const json* j, std::string path) : j_(j), path_(std::move(path)) {
    if (j_ && !j_->is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0 || !j_) return;
    for (const auto& [k, v] : j_->items()) {
      if (!used_.contains(k)) throw ConfigError(key(k), "unknown key");
    }
  }

  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  const json* find(const std::string& k) {
    used_.insert(k);
    if (!j_) return nullptr;
    const auto it = j_->find(k);
    return it == j_->end() ? nullptr : &*it;
  }

  Section sub(const std::string& k) { return Section(find(k), key(k)); }
  bool has(const std::string& k) const { return j_ && j_->contains(k); }

  void number(const std::string& k, double& out, double lo, double hi, bool lo_open = false) {
    const json* v = find(k);
    if (!v) return;
    if (!v->is_number()) throw ConfigError(key(k), "expected a number");
    const double x = v->get<double>();
    if (!(lo_open ? x > lo : x >= lo) || !(x <= hi)) {
      throw ConfigError(key(k), "value " + v->dump() + " out of range");
    }
    out = x;
  }

  template <typename Int>
  void integer(const std::string& k, Int& out, std::int64_t lo, std::int64_t hi) {
    const json* v = find(k);
    if (!v) return;
    if (!v->is_number_integer()) throw ConfigError(key(k), "expected an integer");
    if (v->is_number_unsigned() && v->get<std::uint64_t>() > static_cast<std::uint64_t>(hi)) {
      throw ConfigError(key(k), "value " + v->dump() + " out of range");
    }
    const auto x = v->get<std::int64_t>();
    if (x < lo || x > hi) throw ConfigError(key(k), "value " + v->dump() + " out of range");
    out = static_cast<Int>(x);
  }

  void boolean(const std::string& k, bool& out) {
    const json* v = find(k);
    if (!v) return;
    if (!v->is_boolean()) throw ConfigError(key(k), "expected true or false");
    out = v->get<bool>();
  }

  void string(const std::string& k, std::string& out) {
    const json* v = find(k);
    if (!v) return;
    if (!v->is_string()) throw ConfigError(key(k), "expected a string");
    out = v->get<std::string>();
  }

 private:
  const json* j_;
  std::string path_;
  std::set<std::string> used_;
};

constexpr std::int64_t kBig = std::int64_t{1} << 40;
constexpr double kHuge = 1e300;

void read_sgd(Section s, SgdHyperparams& hp) {
  s.number("learning_rate", hp.learning_rate, 0.0, kHuge, true);
  s.integer("epochs", hp.epochs, 0, 1'000'000);
  s.number("l1", hp.l1, 0.0, kHuge);
  s.number("l2", hp.l2, 0.0, kHuge);
  s.number("decay_steps", hp.decay_steps, 0.0, kHuge);
  if (hp.learning_rate * hp.l2 >= 1.0) {
    throw ConfigError(s.key("l2"), "learning_rate * l2 must be < 1");
  }
}

void read_gbdt(Section s, GbdtHyperparams& hp) {
  s.integer("n_trees", hp.n_trees, 0, 100'000);
  s.integer("max_depth", hp.max_depth, 1, 30);
  s.number("shrinkage", hp.shrinkage, 0.0, 1.0, true);
  s.integer("min_leaf", hp.min_leaf, 1, kBig);
  s.integer("sparse_columns", hp.sparse_columns, 0, kBig);
}

void read_dmm(Section s, DmmHyperparams& hp) {
  s.integer("dim", hp.dim, 1, 1024);
  s.number("learning_rate", hp.learning_rate, 0.0, kHuge, true);
  s.integer("epochs", hp.epochs, 0, 1'000'000);
  s.number("init_range", hp.init_range, 0.0, kHuge);
  s.number("decay_steps", hp.decay_steps, 0.0, kHuge);
}

void read_generator(Section s, GenConfig& g) {
  s.integer("n_users", g.n_users, 1, kBig);
  s.integer("n_anonymous", g.n_anonymous, 0, kBig);
  s.integer("n_sessions", g.n_sessions, 1, kBig);
  s.integer("n_products", g.n_products, 1, kBig);
  s.integer("n_categories", g.n_categories, 1, kBig);
  s.integer("vocab_query", g.vocab_query, 1, kBig);
  s.integer("vocab_product", g.vocab_product, 1, kBig);
  s.number("frac_query_full", g.frac_query_full, 0.0, 1.0);
  s.number("target_repeat_click_rate", g.target_repeat_click_rate, 0.0, 1.0);
  s.number("target_token_overlap_rate", g.target_token_overlap_rate, 0.0, 1.0);
  s.integer("serp_len", g.serp_len, 1, kBig);
  s.integer("time_span_days", g.time_span_days, 1, 100'000);
  s.number("click_rate", g.click_rate, 0.0, 1.0);
  s.number("view_rate", g.view_rate, 0.0, 1.0);
  s.number("purchase_rate", g.purchase_rate, 0.0, 1.0);
  s.number("test_fraction", g.test_fraction, 0.0, 1.0);
  s.number("mean_queries_per_session", g.mean_queries_per_session, 1.0, 8.0);
}

void read_path(Section& s, const std::string& k, std::filesystem::path& out) {
  std::string v = out.string();
  s.string(k, v);
  if (v.empty()) throw ConfigError(s.key(k), "path must not be empty");
  out = v;
}

std::uint64_t read_width(Section& s, const std::string& k, std::size_t current) {
  std::uint64_t w = current;
  s.integer(k, w, 1, std::int64_t{1} << 30);
  return w;
}

void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(assignment, "override must look like key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError(path, "empty key segment");
    if (!node->is_object()) throw ConfigError(path, "parent is not an object");
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

}  // namespace

RunConfig parse_config(std::string_view text, std::span<const std::string> overrides) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("<root>", "expected an object");
  for (const auto& o : overrides) apply_override(root, o);

  RunConfig cfg;
  {
    Section s(&root, "");
    if (!s.has("seed")) throw ConfigError("seed", "required");
    s.integer("seed", cfg.seed, 0, std::numeric_limits<std::int64_t>::max());
    read_path(s, "data_dir", cfg.data_dir);
    read_path(s, "output_dir", cfg.output_dir);
    s.boolean("strict", cfg.strict);
    if (s.has("generator")) {
      cfg.generator = GenConfig{};
      read_generator(s.sub("generator"), *cfg.generator);
      cfg.generator->seed = cfg.seed;
      try {
        validate(*cfg.generator);
      } catch (const InfeasibleConfig& e) {
        throw ConfigError("generator", e.what());
      }
    }
    {
      Section sp = s.sub("split");
      sp.number("train_fraction", cfg.train_fraction, 0.0, 1.0, true);
      if (cfg.train_fraction >= 1.0) throw ConfigError("split.train_fraction", "must be < 1");
      if (sp.has("cutoff_ts")) {
        const json* v = sp.find("cutoff_ts");
        if (!v->is_null()) {
          Timestamp ts = 0;
          sp.integer("cutoff_ts", ts, std::numeric_limits<std::int64_t>::min(),
                     std::numeric_limits<std::int64_t>::max());
          cfg.cutoff_ts = ts;
        }
      }
    }
    {
      Section f = s.sub("features");
      cfg.features.category_width = read_width(f, "category_width", cfg.features.category_width);
      cfg.features.cross_width = read_width(f, "cross_width", cfg.features.cross_width);
      std::string mode = "validation";
      f.string("export", mode);
      if (mode == "none") {
        cfg.feature_export = FeatureExport::None;
      } else if (mode == "validation") {
        cfg.feature_export = FeatureExport::Validation;
      } else if (mode == "all") {
        cfg.feature_export = FeatureExport::All;
      } else {
        throw ConfigError("features.export", "expected none, validation or all");
      }
    }
    {
      Section m = s.sub("models");
      read_sgd(m.sub("lr"), cfg.rankers.lr);
      read_sgd(m.sub("ranksvm"), cfg.rankers.ranksvm);
      read_gbdt(m.sub("gbdt"), cfg.rankers.gbdt);
      read_dmm(m.sub("dmm"), cfg.rankers.dmm);
      read_gbdt(m.sub("meta"), cfg.rankers.meta);
      m.integer("pair_cap", cfg.rankers.pair_cap, 0, kBig);
    }
    {
      Section e = s.sub("ensemble");
      if (e.has("session_bias")) {
        const json* v = e.find("session_bias");
        if (!v->is_null()) {
          double b = 0.0;
          e.number("session_bias", b, 0.0, kHuge);
          cfg.ensemble.session_bias = b;
        }
      }
      e.integer("folds", cfg.ensemble.folds, 2, 1000);
      e.integer("min_queries_per_category", cfg.ensemble.min_queries_per_category, 0, kBig);
      e.number("holdout_fraction", cfg.ensemble.holdout_fraction, 0.0, 1.0, true);
      if (cfg.ensemble.holdout_fraction >= 1.0) {
        throw ConfigError("ensemble.holdout_fraction", "must be < 1");
      }
      e.number("less_weight", cfg.ensemble.less_weight, 0.0, 1.0);
    }
    {
      Section mt = s.sub("metric");
      mt.integer("k", cfg.k, 1, kBig);
    }
    s.integer("baseline_shuffles", cfg.baseline_shuffles, 1, 1'000'000);
  }

  cfg.rankers.ndcg_k = cfg.k;
  cfg.rankers.lr.seed = derive_seed(cfg.seed, 11);
  cfg.rankers.ranksvm.seed = derive_seed(cfg.seed, 12);
  cfg.rankers.gbdt.seed = derive_seed(cfg.seed, 13);
  cfg.rankers.dmm.seed = derive_seed(cfg.seed, 14);
  cfg.rankers.meta.seed = derive_seed(cfg.seed, 15);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides);
}

namespace {

ordered_json sgd_json(const SgdHyperparams& hp) {
  return {{"learning_rate", hp.learning_rate}, {"epochs", hp.epochs}, {"l1", hp.l1},
          {"l2", hp.l2}, {"decay_steps", hp.decay_steps}};
}

ordered_json gbdt_json(const GbdtHyperparams& hp) {
  return {{"n_trees", hp.n_trees}, {"max_depth", hp.max_depth}, {"shrinkage", hp.shrinkage},
          {"min_leaf", hp.min_leaf}, {"sparse_columns", hp.sparse_columns}};
}

ordered_json canonical(const RunConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["data_dir"] = c.data_dir.string();
  j["output_dir"] = c.output_dir.string();
  j["strict"] = c.strict;
  if (c.generator) {
    auto g = ordered_json::parse(gen_config_json(*c.generator));
    g.erase("seed");
    j["generator"] = std::move(g);
  }
  j["split"] = {{"train_fraction", c.train_fraction},
                {"cutoff_ts", c.cutoff_ts ? ordered_json(*c.cutoff_ts) : ordered_json(nullptr)}};
  const char* mode = c.feature_export == FeatureExport::None         ? "none"
                     : c.feature_export == FeatureExport::Validation ? "validation"
                                                                      : "all";
  j["features"] = {{"category_width", c.features.category_width},
                   {"cross_width", c.features.cross_width},
                   {"export", mode}};
  const auto& r = c.rankers;
  j["models"] = {{"lr", sgd_json(r.lr)},
                 {"ranksvm", sgd_json(r.ranksvm)},
                 {"gbdt", gbdt_json(r.gbdt)},
                 {"dmm",
                  {{"dim", r.dmm.dim},
                   {"learning_rate", r.dmm.learning_rate},
                   {"epochs", r.dmm.epochs},
                   {"init_range", r.dmm.init_range},
                   {"decay_steps", r.dmm.decay_steps}}},
                 {"meta", gbdt_json(r.meta)},
                 {"pair_cap", r.pair_cap}};
  const auto& e = c.ensemble;
  j["ensemble"] = {
      {"session_bias", e.session_bias ? ordered_json(*e.session_bias) : ordered_json(nullptr)},
      {"folds", e.folds},
      {"min_queries_per_category", e.min_queries_per_category},
      {"holdout_fraction", e.holdout_fraction},
      {"less_weight", e.less_weight}};
  j["metric"] = {{"k", c.k}};
  j["baseline_shuffles"] = c.baseline_shuffles;
  return j;
}

}  // namespace

std::string config_to_json(const RunConfig& cfg) { return canonical(cfg).dump(2) + "\n"; }

std::string config_checksum(const RunConfig& cfg) {
  const std::string text = canonical(cfg).dump();
  const auto h = fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace serprank
