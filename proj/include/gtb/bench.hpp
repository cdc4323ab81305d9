#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gtb/config.hpp"
#include "gtb/dataset.hpp"
#include "gtb/tensor.hpp"
#include "gtb/train.hpp"

namespace gtb {

/// Fraction of correct label decisions over all N*14 entries. A prediction is
/// positive only when the probability is strictly above the threshold.
double evaluate_accuracy(const Tensor& probabilities, const Tensor& truth, double threshold = 0.5);

/// Same decision rule applied to sigmoid(logits).
double evaluate_accuracy_logits(const Tensor& logits, const Tensor& truth, double threshold = 0.5);

/// Eval-mode logits for every record of the set, in record order.
Tensor predict_set(ParamSet& params, const ExampleSet& set, std::size_t chunk = 64);

struct Strategy {
  std::string name;
  std::string model_name;
  std::string description;
  TrainConfig train;
  MicroResNetConfig model;
};

/// baseline, parallel, parallel+mixed+sched, bignet+parallel+mixed+sched.
std::vector<std::string> default_strategies();

/// Builds a strategy from the base config. Only the strategy knobs differ;
/// seed, data order, epochs and batch size come from the base.
Strategy resolve_strategy(const std::string& name, const RunConfig& base);

struct StrategyReport {
  std::string strategy;
  std::string model_name;
  std::string description;
  double total_seconds = 0.0;
  double total_minutes = 0.0;
  std::optional<double> test_accuracy;
  std::vector<double> losses;  // one per completed epoch
  std::vector<EpochStats> stats;
  std::optional<std::string> error;
};

struct PreprocessTiming {
  std::size_t workers = 0;
  double seconds = 0.0;
};

struct PreparedData {
  ExampleSet train;
  ExampleSet val;
  ExampleSet test;
  std::vector<PreprocessTiming> timings;
  std::vector<std::string> skipped;  // images that failed preprocessing
};

/// Loads `data_dir` (or generates the synthetic corpus), splits by patient and
/// runs the preprocessing pipeline once per worker count in `timing_workers`.
/// The dataset comes from the last run.
PreparedData prepare_data(const RunConfig& config, const std::vector<std::size_t>& timing_workers = {1, 4});

/// Trains each strategy from the same initial seed and scores it on the test
/// split. A failing strategy records its error and the rest still run.
std::vector<StrategyReport> run_strategy_matrix(const PreparedData& data, const RunConfig& base,
                                                const std::vector<std::string>& strategies);

struct Tables {
  std::string markdown;
  std::string csv;
};

Tables emit_tables(const std::vector<StrategyReport>& reports, const std::vector<PreprocessTiming>& timings = {});

/// "86.92%" for 0.8692.
std::string render_percent(double fraction);

struct CsvRow {
  std::string strategy;
  std::string model;
  std::optional<double> accuracy_percent;
  std::optional<double> minutes;
  std::optional<double> final_loss;
  std::string error;
};

/// Parses the strategy rows of the CSV produced by emit_tables.
std::vector<CsvRow> parse_tables_csv(std::string_view csv);

std::string loss_curve_csv(const std::vector<EpochStats>& stats);
std::string loss_curve_svg(const std::vector<EpochStats>& stats, const std::string& title);

/// Writes `epoch,mean_loss` CSV and, when svg_path is given, a line chart.
void emit_loss_curve(const std::vector<EpochStats>& stats, const std::filesystem::path& csv_path,
                     const std::optional<std::filesystem::path>& svg_path = std::nullopt);

/// prepare_data + run_strategy_matrix, then tables.md, tables.csv and
/// loss_<strategy>.{csv,svg} under out_dir.
std::vector<StrategyReport> run_bench(const RunConfig& config, const std::filesystem::path& out_dir);

}  // namespace gtb
