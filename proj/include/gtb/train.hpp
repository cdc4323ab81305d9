#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gtb/dataset.hpp"
#include "gtb/nn.hpp"
#include "gtb/optim.hpp"
#include "gtb/precision.hpp"

namespace gtb {

enum class Precision { Full, Mixed };
enum class Transport { Thread, Process };

struct TrainConfig {
  std::size_t batch_size = 32;
  double lr0 = 0.001;
  int epochs = 25;
  Precision precision = Precision::Full;
  SchedulerConfig scheduler;
  int workers = 1;
  std::uint64_t seed = 0;

  double loss_scale = 1024.0;
  int growth_interval = 200;
  Transport transport = Transport::Thread;
  double sync_timeout_seconds = 30.0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double wall_seconds = 0.0;
  double lr_used = 0.0;
};

using GradMap = std::map<std::string, Tensor>;

struct LocalGradients {
  GradMap grads;  // unscaled, keyed by parameter name
  double loss = 0.0;  // unscaled batch mean
  std::size_t batch_size = 0;
};

/// Forward + backward on one batch. With a loss scale the loss is multiplied
/// before the backward sweep and the gradients divided afterwards. Mixed
/// precision rounds weights, activations and gradients to binary16 at every
/// layer boundary; master values stay in double.
LocalGradients compute_gradients(ParamSet& params, const Batch& batch, Precision precision, double loss_scale = 1.0);

std::vector<double> flatten(const GradMap& grads);
GradMap unflatten(const std::map<std::string, Tensor>& like, std::span<const double> flat);

/// Test hook: may rewrite gradients before the update (e.g. inject an Inf).
using GradHook = std::function<void(std::uint64_t step, GradMap& grads)>;

struct StepResult {
  double loss = 0.0;
  bool skipped = false;
  double scale_used = 1.0;
};

/// One mixed-precision update: scaled loss, unscaled gradients, overflow check,
/// then Adam on the double-precision master weights. An overflow skips the
/// update and halves the scale.
StepResult mixed_precision_step(ParamSet& params, const Batch& batch, AdamState& adam, LossScaler& scaler, double lr,
                                const GradHook& hook = {}, std::uint64_t step = 0);

/// Full-precision update.
StepResult full_precision_step(ParamSet& params, const Batch& batch, AdamState& adam, double lr);

struct TrainResult {
  std::vector<EpochStats> stats;
  std::optional<std::string> error;  // set when training aborted; stats are partial
};

/// Trains on every record of `train_set` for config.epochs epochs. Params are
/// updated in place. Workers > 1 runs data-parallel replicas.
TrainResult train_run(const TrainConfig& config, ParamSet& params, const ExampleSet& train_set);

std::string training_log_csv(const std::vector<EpochStats>& stats);

using TimeMark = std::chrono::steady_clock::time_point;
inline TimeMark mark_time() { return std::chrono::steady_clock::now(); }

/// Elapsed seconds between two monotonic marks, clamped at zero.
double timed_execution(TimeMark start, TimeMark end);

/// Fixed two-decimal rendering, halves rounded away from zero.
std::string format_fixed2(double value);

/// "10.19 minutes" for 611.4 seconds.
std::string render_minutes(double seconds);

}  // namespace gtb
