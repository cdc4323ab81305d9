#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gtb/dataset.hpp"
#include "gtb/nn.hpp"
#include "gtb/train.hpp"

namespace gtb {

/// Everything a CLI run needs: trainer knobs, model shape, data source and
/// the strategy list for benchmarking.
struct RunConfig {
  TrainConfig train;
  MicroResNetConfig model;
  std::optional<std::filesystem::path> data_dir;  // unset: generate a synthetic corpus
  std::string metadata = "metadata.csv";
  SyntheticOptions synthetic;
  SplitFractions fractions;
  std::size_t preprocess_workers = 4;
  int parallel_workers = 2;
  std::vector<std::string> strategies;  // empty: default matrix

  bool operator==(const RunConfig&) const = default;
};

/// Parses flat `key = value` text. `#` starts a comment; blank lines are
/// skipped. Unknown keys, duplicates and malformed values throw ConfigError
/// naming the line.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Writes every key, so parse_config(format_config(c)) == c.
std::string format_config(const RunConfig& config);

/// "8x1,16x2,32x2" style block list.
std::vector<BlockSpec> parse_blocks(std::string_view text);
std::string format_blocks(const std::vector<BlockSpec>& blocks);

}  // namespace gtb
