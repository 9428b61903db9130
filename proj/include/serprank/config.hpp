#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "serprank/ensemble.hpp"
#include "serprank/features.hpp"
#include "serprank/synthgen.hpp"

namespace serprank {

/// Which instances the features command writes out.
enum class FeatureExport { None, Validation, All };

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path data_dir = "data";
  std::filesystem::path output_dir = "out";
  /// Present: `gen` and `pipeline` synthesise data_dir first. Its seed is
  /// always the run seed.
  std::optional<GenConfig> generator;
  bool strict = true;

  double train_fraction = 0.8;
  /// Overrides train_fraction when set.
  std::optional<Timestamp> cutoff_ts;

  FeatureOptions features;
  FeatureExport feature_export = FeatureExport::Validation;

  /// Learner seeds are derived from `seed`; they are not config keys.
  RankerSettings rankers;
  EnsembleConfig ensemble;

  std::size_t k = 10;
  int baseline_shuffles = 100;
};

/// Parses and validates config JSON. Each override is "dotted.key=value",
/// where value is JSON (bare words are taken as strings). Unknown keys,
/// wrong types and out-of-range values throw ConfigError naming the key.
RunConfig parse_config(std::string_view text, std::span<const std::string> overrides = {});
RunConfig load_config(const std::filesystem::path& path,
                      std::span<const std::string> overrides = {});

/// Every key with its effective value.
std::string config_to_json(const RunConfig& cfg);
/// FNV-1a-64 of the compact canonical JSON, as 16 hex digits.
std::string config_checksum(const RunConfig& cfg);

}  // namespace serprank
