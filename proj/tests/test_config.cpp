#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"
#include "serprank/config.hpp"
#include "serprank/error.hpp"

using namespace serprank;
using namespace fixtures;

namespace {

std::string error_key(const std::string& text, std::vector<std::string> overrides = {}) {
  try {
    parse_config(text, overrides);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("minimal config fills defaults") {
  const auto cfg = parse_config(R"({"seed": 3})");
  CHECK(cfg.seed == 3);
  CHECK(cfg.data_dir == "data");
  CHECK(cfg.k == 10);
  CHECK(cfg.ensemble.folds == 5);
  CHECK(cfg.ensemble.less_weight == 0.8);
  CHECK_FALSE(cfg.generator.has_value());
  // Learner seeds come from the run seed; everything else is the default.
  auto rankers = cfg.rankers;
  CHECK(rankers.lr.seed != rankers.gbdt.seed);
  for (auto* hp : {&rankers.lr, &rankers.ranksvm}) hp->seed = 1;
  rankers.gbdt.seed = rankers.meta.seed = rankers.dmm.seed = 1;
  RankerSettings defaults;
  defaults.meta.seed = 1;
  CHECK(rankers == defaults);
  CHECK(parse_config(R"({"seed": 3})").rankers == cfg.rankers);

  // The echo dump parses back to the same config and carries every section.
  const auto dump = config_to_json(cfg);
  const auto j = nlohmann::json::parse(dump);
  for (const char* key : {"seed", "data_dir", "output_dir", "strict", "split", "features",
                          "models", "ensemble", "metric", "baseline_shuffles"}) {
    CHECK_MESSAGE(j.contains(key), key);
  }
  CHECK(j["models"].contains("dmm"));
  CHECK(config_to_json(parse_config(dump)) == dump);
  CHECK(config_checksum(parse_config(dump)) == config_checksum(cfg));
  CHECK(config_checksum(cfg).size() == 16);
}

TEST_CASE("config validation errors name the key") {
  CHECK(error_key(R"({"seed": 1, "lr_rate": 0.1})") == "lr_rate");
  CHECK(error_key(R"({"seed": 1, "models": {"lr": {"lr_rate": 0.1}}})") == "models.lr.lr_rate");
  CHECK(error_key(R"({"seed": -4})") == "seed");
  CHECK(error_key(R"({"seed": 1.5})") == "seed");
  CHECK(error_key(R"({"data_dir": "x"})") == "seed");
  CHECK(error_key(R"({"seed": 1, "metric": {"k": 0}})") == "metric.k");
  CHECK(error_key(R"({"seed": 1, "ensemble": {"folds": 1}})") == "ensemble.folds");
  CHECK(error_key(R"({"seed": 1, "features": {"export": "some"}})") == "features.export");
  CHECK(error_key(R"({"seed": 1, "split": {"train_fraction": "a"}})") == "split.train_fraction");
  CHECK(error_key(R"({"seed": 1, "generator": {"n_products": 3}})") == "generator");
  CHECK_THROWS_AS(parse_config("{"), ConfigError);
  CHECK_THROWS_AS(parse_config("[1]"), ConfigError);
}

TEST_CASE("overrides") {
  const std::vector<std::string> sets = {"models.lr.epochs=9", "output_dir=/tmp/x",
                                         "ensemble.session_bias=0.5", "generator.n_sessions=50"};
  const auto cfg = parse_config(R"({"seed": 1, "models": {"lr": {"epochs": 2}}})", sets);
  CHECK(cfg.rankers.lr.epochs == 9);
  CHECK(cfg.output_dir == "/tmp/x");
  CHECK(cfg.ensemble.session_bias == 0.5);
  REQUIRE(cfg.generator.has_value());
  CHECK(cfg.generator->n_sessions == 50);
  CHECK(cfg.generator->seed == 1);
  CHECK(error_key(R"({"seed": 1})", {"models.lr.nope=1"}) == "models.lr.nope");
  CHECK(error_key(R"({"seed": 1})", {"noequals"}) != "<no error>");
}

TEST_CASE("checksum tracks every value") {
  const auto a = parse_config(R"({"seed": 1})");
  const auto b = parse_config(R"({"seed": 2})");
  const auto c = parse_config(R"({"seed": 1, "models": {"gbdt": {"n_trees": 7}}})");
  CHECK(config_checksum(a) != config_checksum(b));
  CHECK(config_checksum(a) != config_checksum(c));
  CHECK(config_checksum(a) == config_checksum(parse_config(R"({ "seed" : 1 })")));
}

TEST_CASE("load_config") {
  const auto dir = scratch("config");
  write_file(dir / "c.json", R"({"seed": 12, "metric": {"k": 5}})");
  const auto cfg = load_config(dir / "c.json");
  CHECK(cfg.seed == 12);
  CHECK(cfg.k == 5);
  CHECK_THROWS_AS(load_config(dir / "missing.json"), UsageError);
}
