#include "serprank/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "parallel.hpp"
#include "serprank/error.hpp"
#include "serprank/random.hpp"
#include "serprank/synthgen.hpp"

namespace serprank {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

RunContext::RunContext(RunConfig cfg, std::size_t threads_, std::ostream* log_)
    : config(std::move(cfg)),
      checksum(config_checksum(config)),
      threads(std::max<std::size_t>(1, threads_)),
      log(log_) {}

namespace {

void progress(const RunContext& ctx, const std::string& msg) {
  if (ctx.log) *ctx.log << "[serprank] " << msg << std::endl;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << text;
  if (!out) throw UsageError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ordered_json provenance(const RunContext& ctx) {
  return {{"config_checksum", ctx.checksum}, {"seed", ctx.config.seed}};
}

/// Records which command produced each file of `dir`, with the config
/// checksum and seed; text artifacts carry their provenance here.
void record_artifacts(const RunContext& ctx, const fs::path& dir, const std::string& command,
                      const std::vector<std::string>& files) {
  const fs::path path = dir / "manifest.json";
  ordered_json j;
  if (fs::exists(path)) {
    try {
      j = ordered_json::parse(read_text(path));
    } catch (const nlohmann::json::exception&) {
      j = ordered_json::object();
    }
  }
  if (!j.is_object() || !j.contains("artifacts") || !j["artifacts"].is_object()) {
    j = ordered_json::object();
    j["format"] = "serprank.manifest/1";
    j["artifacts"] = ordered_json::object();
  }
  for (const auto& f : files) {
    j["artifacts"][f] = {{"command", command}, {"config_checksum", ctx.checksum},
                         {"seed", ctx.config.seed}};
  }
  // Sorted keys keep the file independent of command order.
  std::vector<std::string> keys;
  for (const auto& [k, v] : j["artifacts"].items()) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  ordered_json sorted = ordered_json::object();
  for (const auto& k : keys) sorted[k] = j["artifacts"][k];
  j["artifacts"] = std::move(sorted);
  write_text(path, j.dump(2) + "\n");
}

fs::path model_dir(const RunContext& ctx) { return ctx.config.output_dir / "model"; }

constexpr const char* kBaselineGbdt = "baseline_full_gbdt.json";

struct ReportModel {
  const char* name;  // run file stem
  const char* label;
};

constexpr ReportModel kReportModels[] = {
    {"lr_all", "LR (all feats)"},
    {"ranksvm", "RankSVM"},
    {"gbdt", "GBDT"},
    {"dmm", "DMM (query-full)"},
    {"ensemble_nobias", "Ensemble (no session bias)"},
};

const Member& member(const std::vector<Member>& ms, const std::string& name) {
  for (const auto& m : ms) {
    if (m.name == name) return m;
  }
  throw DataError("ensemble has no member '" + name + "'");
}

}  // namespace

std::vector<std::string> report_models() {
  std::vector<std::string> out;
  for (const auto& m : kReportModels) out.push_back(m.name);
  out.push_back("ensemble");
  return out;
}

Workspace prepare_workspace(const RunContext& ctx) {
  const auto& cfg = ctx.config;
  if (!fs::is_directory(cfg.data_dir)) {
    throw UsageError("data_dir " + cfg.data_dir.string() + " does not exist");
  }
  Workspace ws;
  ws.dataset = load_dataset(cfg.data_dir, cfg.strict);
  if (ws.dataset.dropped_events() > 0) {
    progress(ctx, "dropped " + std::to_string(ws.dataset.dropped_events()) + " invalid events");
  }
  ws.cutoff = cfg.cutoff_ts ? *cfg.cutoff_ts : cutoff_for_fraction(ws.dataset, cfg.train_fraction);
  std::tie(ws.train, ws.validation) = split_by_time(ws.dataset, ws.cutoff);
  ws.features = FeatureExtractor::fit(ws.train, cfg.features);
  progress(ctx, "loaded " + std::to_string(ws.dataset.queries().size()) + " queries; train " +
                    std::to_string(ws.train.queries().size()) + ", validation " +
                    std::to_string(ws.validation.queries().size()) + "; feature dim " +
                    std::to_string(ws.features.space().total_dim()));
  return ws;
}

void run_gen(const RunContext& ctx, const std::optional<fs::path>& out) {
  const fs::path dir = out ? *out : ctx.config.data_dir;
  GenConfig gc = ctx.config.generator.value_or(GenConfig{});
  gc.seed = ctx.config.seed;
  progress(ctx, "generating " + std::to_string(gc.n_sessions) + " sessions into " + dir.string());
  const auto corpus = generate_dataset(gc);
  write_generated(corpus, gc, dir);
  std::vector<std::string> files;
  for (TableKind k : {TableKind::Queries, TableKind::Clicks, TableKind::Views,
                      TableKind::Purchases, TableKind::Products}) {
    files.push_back(table_file_name(k));
  }
  files.push_back("genconfig.json");
  files.push_back("latent.csv");
  record_artifacts(ctx, dir, "gen", files);
}

std::string stats_to_json(const StatsReport& s) {
  ordered_json j;
  j["query_full_queries"] = s.query_full_queries;
  j["query_less_queries"] = s.query_less_queries;
  j["sessions"] = s.sessions;
  j["presented_products"] = s.presented_products;
  j["click_events"] = s.click_events;
  j["view_events"] = s.view_events;
  j["purchase_events"] = s.purchase_events;
  j["real_users"] = s.real_users;
  j["anonymous_users"] = s.anonymous_users;
  j["train_real_users"] = s.train_real_users;
  j["test_real_users"] = s.test_real_users;
  j["overlap_real_users"] = s.overlap_real_users;
  return j.dump(2);
}

StatsReport run_stats(const RunContext& ctx, const Dataset& ds) {
  const auto s = dataset_stats(ds);
  fs::create_directories(ctx.config.output_dir);
  ordered_json j;
  j["format"] = "serprank.stats/1";
  j["provenance"] = provenance(ctx);
  j["stats"] = ordered_json::parse(stats_to_json(s));
  write_text(ctx.config.output_dir / "stats.json", j.dump(2) + "\n");
  record_artifacts(ctx, ctx.config.output_dir, "stats", {"stats.json"});
  return s;
}

void run_features(const RunContext& ctx, const Workspace& ws) {
  const auto& out = ctx.config.output_dir;
  fs::create_directories(out);
  auto space = ordered_json::parse(ws.features.space().to_json());
  space["provenance"] = provenance(ctx);
  write_text(out / "feature_space.json", space.dump(2) + "\n");
  std::vector<std::string> files = {"feature_space.json"};
  if (ctx.config.feature_export != FeatureExport::None) {
    const Dataset& from =
        ctx.config.feature_export == FeatureExport::All ? ws.dataset : ws.validation;
    std::ofstream f(out / "features.txt", std::ios::binary);
    if (!f) throw UsageError("cannot write " + (out / "features.txt").string());
    std::size_t lines = 0;
    for (const auto& q : from.queries()) {
      const auto sc = build_session_context(ws.dataset, q);
      for (ItemId item : q.shown_items) {
        f << q.query_id << ':' << item;
        const auto v = ws.features.extract(q, item, sc);
        if (!v.empty()) f << ' ' << format_sparse(v);
        f << '\n';
        ++lines;
      }
    }
    if (!f) throw UsageError("write failed: features.txt");
    files.push_back("features.txt");
    progress(ctx, "exported " + std::to_string(lines) + " feature vectors");
  }
  record_artifacts(ctx, out, "features", files);
}

void run_train(const RunContext& ctx, const Workspace& ws) {
  const auto& cfg = ctx.config;
  progress(ctx, "training ensemble (" + std::to_string(ctx.threads) + " threads)");
  EnsembleTrainInfo info;
  const auto ens = train_ensemble(ws.train, ws.dataset, ws.features, cfg.features, cfg.rankers,
                                  cfg.ensemble, derive_seed(cfg.seed, 21), ctx.threads, &info);
  progress(ctx, "ensemble trained on " + std::to_string(info.full_instances) +
                    " query-full and " + std::to_string(info.less_instances) +
                    " query-less instances; selector holdout " +
                    std::to_string(info.holdout_queries) + " queries, fallback " +
                    ens.selector.models[ens.selector.fallback]);
  const Provenance prov{ws.features.space().checksum(), ctx.checksum, cfg.seed};
  const fs::path dir = model_dir(ctx);
  save_ensemble(dir, ens, prov);

  const auto full = grade_instances(ws.train, ws.dataset, ws.features, Scenario::Full);
  const SlotKind sparse[] = {SlotKind::CategoryToken, SlotKind::CrossToken};
  const auto learner = gbdt_learner(ws.features.space(), cfg.rankers, sparse);
  const auto refs = refs_of(full);
  ModelFile mf{"baseline_full_gbdt", learner.train(refs), learner.hyperparams_json, cfg.seed,
               prov.feature_space_checksum, ctx.checksum};
  write_text(dir / kBaselineGbdt, model_to_json(mf));

  std::vector<std::string> files = {"ensemble.json", "full_meta.json", kBaselineGbdt};
  for (const auto& m : ens.full_members) files.push_back("full_" + m.name + ".json");
  for (const auto& m : ens.less_members) files.push_back("less_" + m.name + ".json");
  record_artifacts(ctx, dir, "train", files);
}

void run_predict(const RunContext& ctx, const Workspace& ws) {
  const auto& cfg = ctx.config;
  const std::string checksum = ws.features.space().checksum();
  const fs::path dir = model_dir(ctx);
  const auto ens = load_ensemble(dir, checksum);
  const auto gbdt_full = model_from_json(read_text(dir / kBaselineGbdt), checksum).model;

  const auto queries = ws.validation.queries();
  const std::size_t n_rows = std::size(kReportModels) + 1;
  // rankings[q][r]: row r's ordering of query q (empty when not applicable).
  std::vector<std::vector<std::vector<ItemId>>> rankings(queries.size(),
                                                         std::vector<std::vector<ItemId>>(n_rows));
  detail::parallel_for(queries.size(), ctx.threads, [&](std::size_t i) {
    const QueryRecord& q = queries[i];
    const auto sc = build_session_context(ws.dataset, q);
    const auto inst = query_instances(q, sc, ws.features);
    const bool full = q.scenario == Scenario::Full;
    auto order = [&](const Model& m) {
      std::vector<double> s;
      for (const auto& x : inst) s.push_back(score(m, x));
      return order_by_score(q.shown_items, s);
    };
    const auto& members = full ? ens.full_members : ens.less_members;
    auto& row = rankings[i];
    row[0] = order(member(members, "lr_all").model);
    row[1] = order(member(members, "ranksvm").model);
    row[2] = order(full ? gbdt_full : member(ens.less_members, "gbdt").model);
    if (full) row[3] = order(member(ens.full_members, "dmm").model);
    std::vector<double> s;
    for (const auto& x : inst) s.push_back(ens.score(x, q.scenario, q.category_id));
    row[4] = order_by_score(q.shown_items, s);
    apply_session_bias(q.shown_items, s, sc, full ? ens.full_bias : ens.less_bias);
    row[5] = order_by_score(q.shown_items, s);
  });

  const auto& out = cfg.output_dir;
  fs::create_directories(out / "runs");
  std::vector<std::string> files;
  for (std::size_t r = 0; r < n_rows; ++r) {
    Run run;
    for (std::size_t i = 0; i < queries.size(); ++i) {
      if (!rankings[i][r].empty()) run.emplace_back(queries[i].query_id, rankings[i][r]);
    }
    if (r + 1 == n_rows) {
      write_run(out / "run.txt", run);
      files.push_back("run.txt");
    } else {
      const std::string name = std::string("runs/") + kReportModels[r].name + ".txt";
      write_run(out / name, run);
      files.push_back(name);
    }
  }

  QrelSet qrels;
  for (const auto& q : queries) {
    qrels.queries[q.query_id] = {q.scenario, q.shown_items, grade_query(ws.dataset, q)};
  }
  write_qrels(out / "qrels.csv", qrels);
  files.push_back("qrels.csv");
  record_artifacts(ctx, out, "predict", files);
  progress(ctx, "ranked " + std::to_string(queries.size()) + " validation queries");
}

RandomBaseline random_baseline(const QrelSet& qrels, std::size_t k, int shuffles,
                               std::uint64_t seed, double less_weight) {
  std::vector<QueryId> ids;
  for (const auto& [qid, q] : qrels.queries) ids.push_back(qid);
  std::sort(ids.begin(), ids.end());
  CompensatedSum c, f, l;
  for (int s = 0; s < shuffles; ++s) {
    Rng rng(derive_seed(seed, 0xba5e00 + static_cast<std::uint64_t>(s)));
    Run run;
    for (QueryId qid : ids) {
      auto items = qrels.queries.at(qid).items;
      rng.shuffle(std::span(items));
      run.emplace_back(qid, std::move(items));
    }
    const auto r = evaluate_run(run, qrels, k, less_weight);
    c.add(r.ndcg_combined);
    f.add(r.ndcg_full);
    l.add(r.ndcg_less);
  }
  const double n = static_cast<double>(shuffles);
  return {shuffles, c.value() / n, f.value() / n, l.value() / n};
}

std::string metric_report_json(const MetricReport& r, const std::string& config_checksum,
                               std::optional<std::uint64_t> seed) {
  ordered_json j;
  j["format"] = "serprank.metric_report/1";
  if (!config_checksum.empty() || seed) {
    j["provenance"] = {{"config_checksum", config_checksum},
                       {"seed", seed ? ordered_json(*seed) : ordered_json(nullptr)}};
  }
  j["k"] = r.k;
  j["ndcg_combined"] = r.ndcg_combined;
  j["ndcg_full"] = r.ndcg_full;
  j["ndcg_less"] = r.ndcg_less;
  j["queries_full"] = r.queries_full;
  j["queries_less"] = r.queries_less;
  ordered_json pq = ordered_json::array();
  for (const auto& q : r.per_query) {
    pq.push_back({{"query_id", q.query_id}, {"scenario", to_string(q.scenario)}, {"ndcg", q.ndcg}});
  }
  j["per_query"] = std::move(pq);
  return j.dump(2) + "\n";
}

PipelineResult run_report(const RunContext& ctx) {
  const auto& cfg = ctx.config;
  const auto& out = cfg.output_dir;
  const auto qrels = read_qrels(out / "qrels.csv");
  const double w = cfg.ensemble.less_weight;
  PipelineResult res;
  ordered_json rows = ordered_json::array();
  auto add_row = [&](const std::string& label, const std::string& file, const MetricReport& m,
                     bool has_less) {
    res.rows.push_back({label, m.ndcg_combined, m.ndcg_full, m.ndcg_less, has_less});
    rows.push_back({{"model", label},
                    {"run", file},
                    {"ndcg", has_less ? ordered_json(m.ndcg_combined) : ordered_json(nullptr)},
                    {"ndcg_full", m.ndcg_full},
                    {"ndcg_less", has_less ? ordered_json(m.ndcg_less) : ordered_json(nullptr)},
                    {"queries_full", m.queries_full},
                    {"queries_less", m.queries_less}});
  };
  for (const auto& rm : kReportModels) {
    const std::string file = std::string("runs/") + rm.name + ".txt";
    const auto m = evaluate_run(read_run(out / file), qrels, cfg.k, w);
    add_row(rm.label, file, m, m.queries_less > 0);
  }
  res.ensemble = evaluate_run(read_run(out / "run.txt"), qrels, cfg.k, w);
  add_row("Ensemble", "run.txt", res.ensemble, true);
  res.baseline = random_baseline(qrels, cfg.k, cfg.baseline_shuffles, cfg.seed, w);
  res.rows.push_back({"Random (mean of " + std::to_string(res.baseline.shuffles) + ")",
                      res.baseline.combined, res.baseline.full, res.baseline.less, true});

  ordered_json j;
  j["format"] = "serprank.report/1";
  j["provenance"] = provenance(ctx);
  j["k"] = cfg.k;
  j["rows"] = std::move(rows);
  j["random_baseline"] = {{"shuffles", res.baseline.shuffles},
                          {"ndcg", res.baseline.combined},
                          {"ndcg_full", res.baseline.full},
                          {"ndcg_less", res.baseline.less}};
  j["ensemble"] = ordered_json::parse(metric_report_json(res.ensemble));
  write_text(out / "report.json", j.dump(2) + "\n");
  record_artifacts(ctx, out, "evaluate", {"report.json"});
  return res;
}

PipelineResult run_pipeline(const RunContext& ctx) {
  if (ctx.config.generator) run_gen(ctx);
  const Workspace ws = prepare_workspace(ctx);
  run_stats(ctx, ws.dataset);
  run_features(ctx, ws);
  run_train(ctx, ws);
  run_predict(ctx, ws);
  return run_report(ctx);
}

}  // namespace serprank
