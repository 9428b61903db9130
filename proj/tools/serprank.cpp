#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "serprank/config.hpp"
#include "serprank/error.hpp"
#include "serprank/metrics.hpp"
#include "serprank/pipeline.hpp"

namespace fs = std::filesystem;
using namespace serprank;

namespace {

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::size_t threads = 0;
  std::string out;
  std::string run;
  std::string qrels;
  std::size_t k = 0;
};

RunContext make_context(const Options& opt) {
  if (opt.config.empty()) throw UsageError("--config is required");
  if (!fs::exists(opt.config)) throw UsageError("config file " + opt.config + " not found");
  std::size_t threads = opt.threads;
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  return RunContext(load_config(opt.config, opt.overrides), threads, &std::cerr);
}

void print_table(const PipelineResult& res) { std::cout << format_table(res.rows); }

int evaluate_files(const Options& opt) {
  std::size_t k = opt.k;
  double w = kLessWeight;
  std::string checksum;
  std::optional<std::uint64_t> seed;
  if (!opt.config.empty()) {
    const auto ctx = make_context(opt);
    if (k == 0) k = ctx.config.k;
    w = ctx.config.ensemble.less_weight;
    checksum = ctx.checksum;
    seed = ctx.config.seed;
  }
  if (k == 0) k = 10;
  if (!fs::exists(opt.run)) throw UsageError("run file " + opt.run + " not found");
  if (!fs::exists(opt.qrels)) throw UsageError("qrels file " + opt.qrels + " not found");
  const auto report = evaluate_run(read_run(opt.run), read_qrels(opt.qrels), k, w);
  const auto text = metric_report_json(report, checksum, seed);
  if (opt.out.empty()) {
    std::cout << text;
  } else {
    std::ofstream f(opt.out, std::ios::binary);
    if (!f) throw UsageError("cannot write " + opt.out);
    f << text;
    std::cout << "ndcg " << report.ndcg_combined << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Session-aware learning-to-rank pipeline for e-commerce search logs", "serprank"};
  app.require_subcommand(1);
  Options opt;

  auto common = [&](CLI::App* sub, bool need_config) {
    auto* c = sub->add_option("--config", opt.config, "JSON run config");
    if (need_config) c->required();
    sub->add_option("--set", opt.overrides, "Override a config key (key=value)")
        ->take_all()
        ->allow_extra_args(false);
    sub->add_option("--threads", opt.threads, "Worker threads (default: all cores)")
        ->check(CLI::PositiveNumber);
  };

  auto* gen = app.add_subcommand("gen", "Write a synthetic corpus");
  common(gen, true);
  gen->add_option("--out", opt.out, "Target directory (default: data_dir)");
  auto* stats = app.add_subcommand("stats", "Dataset statistics");
  common(stats, true);
  auto* features = app.add_subcommand("features", "Export the feature space and vectors");
  common(features, true);
  auto* train = app.add_subcommand("train", "Train the ensemble");
  common(train, true);
  auto* predict = app.add_subcommand("predict", "Rank validation queries");
  common(predict, true);
  auto* evaluate = app.add_subcommand("evaluate", "Score run files");
  common(evaluate, false);
  evaluate->add_option("--run", opt.run, "Run file to score");
  evaluate->add_option("--qrels", opt.qrels, "Graded judgements");
  evaluate->add_option("--k", opt.k, "NDCG cutoff")->check(CLI::PositiveNumber);
  evaluate->add_option("--out", opt.out, "Write the metric report here");
  auto* pipeline = app.add_subcommand("pipeline", "Run every stage in order");
  common(pipeline, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (gen->parsed()) {
      const auto ctx = make_context(opt);
      run_gen(ctx, opt.out.empty() ? std::nullopt : std::optional<fs::path>(opt.out));
    } else if (stats->parsed()) {
      const auto ctx = make_context(opt);
      if (!fs::is_directory(ctx.config.data_dir)) {
        throw UsageError("data_dir " + ctx.config.data_dir.string() + " does not exist");
      }
      const auto ds = load_dataset(ctx.config.data_dir, ctx.config.strict);
      std::cout << stats_to_json(run_stats(ctx, ds)) << '\n';
    } else if (features->parsed()) {
      const auto ctx = make_context(opt);
      run_features(ctx, prepare_workspace(ctx));
    } else if (train->parsed()) {
      const auto ctx = make_context(opt);
      run_train(ctx, prepare_workspace(ctx));
    } else if (predict->parsed()) {
      const auto ctx = make_context(opt);
      run_predict(ctx, prepare_workspace(ctx));
    } else if (evaluate->parsed()) {
      if (!opt.run.empty() || !opt.qrels.empty()) {
        if (opt.run.empty() || opt.qrels.empty()) {
          throw UsageError("evaluate needs both --run and --qrels");
        }
        return evaluate_files(opt);
      }
      print_table(run_report(make_context(opt)));
    } else if (pipeline->parsed()) {
      const auto res = run_pipeline(make_context(opt));
      print_table(res);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
