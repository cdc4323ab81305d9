#include "gtb/train.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "gtb/error.hpp"
#include "gtb/loss.hpp"
#include "gtb/parallel.hpp"

namespace gtb {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (workers < 1) throw ConfigError("workers must be at least 1");
  if (scheduler.kind == SchedulerConfig::Kind::Step && (scheduler.step_size < 1 || !(scheduler.gamma > 0.0)))
    throw ConfigError("step scheduler needs step_size >= 1 and gamma > 0");
  if (!(loss_scale > 0.0)) throw ConfigError("loss_scale must be positive");
  if (growth_interval < 1) throw ConfigError("growth_interval must be at least 1");
  if (!(sync_timeout_seconds > 0.0)) throw ConfigError("sync_timeout must be positive");
}

LocalGradients compute_gradients(ParamSet& params, const Batch& batch, Precision precision, double loss_scale) {
  Tape tape;
  BoundaryFn boundary;
  if (precision == Precision::Mixed) boundary = [](Var v) { return quantize(v); };
  const BoundParams bound = bind_params(tape, params, boundary);
  Var logits = model_forward(bound, params, tape.constant(batch.images), boundary);
  Var loss = bce_with_logits(logits, tape.constant(batch.labels));
  Var objective = loss_scale == 1.0 ? loss : scale(loss, loss_scale);
  if (precision == Precision::Mixed) objective = quantize(objective);
  const Gradients grads = tape.backward(objective);

  LocalGradients out;
  out.loss = loss.value().item();
  out.batch_size = batch.ids.size();
  for (const auto& [name, leaf] : bound.leaves) {
    Tensor g = grads[leaf];
    if (loss_scale != 1.0)
      for (auto& v : g.values()) v /= loss_scale;
    out.grads.emplace(name, std::move(g));
  }
  return out;
}

std::vector<double> flatten(const GradMap& grads) {
  std::vector<double> flat;
  for (const auto& [_, t] : grads) flat.insert(flat.end(), t.values().begin(), t.values().end());
  return flat;
}

GradMap unflatten(const std::map<std::string, Tensor>& like, std::span<const double> flat) {
  GradMap out;
  std::size_t offset = 0;
  for (const auto& [name, t] : like) {
    if (offset + t.size() > flat.size()) throw DimensionError("unflatten: flat gradient too short");
    out.emplace(name, Tensor(t.shape(), std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                                                            flat.begin() + static_cast<std::ptrdiff_t>(offset + t.size()))));
    offset += t.size();
  }
  if (offset != flat.size()) throw DimensionError("unflatten: flat gradient too long");
  return out;
}

StepResult mixed_precision_step(ParamSet& params, const Batch& batch, AdamState& adam, LossScaler& scaler, double lr,
                                const GradHook& hook, std::uint64_t step) {
  StepResult r;
  r.scale_used = scaler.scale();
  LocalGradients local = compute_gradients(params, batch, Precision::Mixed, scaler.scale());
  if (hook) hook(step, local.grads);
  r.loss = local.loss;
  if (!all_finite(local.grads)) {
    r.skipped = true;
    scaler.on_overflow();
    return r;
  }
  adam_step(params.params, local.grads, adam, lr);
  scaler.on_clean_step();
  return r;
}

StepResult full_precision_step(ParamSet& params, const Batch& batch, AdamState& adam, double lr) {
  LocalGradients local = compute_gradients(params, batch, Precision::Full);
  adam_step(params.params, local.grads, adam, lr);
  return StepResult{local.loss, false, 1.0};
}

TrainResult train_run(const TrainConfig& config, ParamSet& params, const ExampleSet& train_set) {
  config.validate();
  if (config.workers > 1) return train_data_parallel(config, params, train_set);

  TrainResult result;
  AdamState adam;
  LossScaler scaler(config.loss_scale, config.growth_interval);
  params.mode = Mode::Train;
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const TimeMark start = mark_time();
    const double lr = scheduler_lr(config.lr0, config.scheduler, epoch);
    const auto batches = make_batches(train_set.records(), config.batch_size, config.seed, static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    try {
      for (const auto& ids : batches) {
        const Batch batch = assemble_batch(train_set, ids);
        const StepResult r = config.precision == Precision::Mixed
                                 ? mixed_precision_step(params, batch, adam, scaler, lr, {}, step)
                                 : full_precision_step(params, batch, adam, lr);
        loss_sum += r.loss;
        ++step;
      }
    } catch (const std::exception& e) {
      result.error = "epoch " + std::to_string(epoch) + ": " + e.what();
      return result;
    }
    const double mean_loss = batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size());
    result.stats.push_back({epoch, mean_loss, timed_execution(start, mark_time()), lr});
  }
  return result;
}

std::string training_log_csv(const std::vector<EpochStats>& stats) {
  std::ostringstream os;
  os << "epoch,mean_loss,lr,wall_seconds\n";
  char buf[128];
  for (const auto& s : stats) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.6f\n", s.epoch, s.mean_loss, s.lr_used, s.wall_seconds);
    os << buf;
  }
  return os.str();
}

double timed_execution(TimeMark start, TimeMark end) {
  const double s = std::chrono::duration<double>(end - start).count();
  return s > 0.0 ? s : 0.0;
}

std::string format_fixed2(double value) {
  const long long cents = std::llround(value * 100.0);  // llround: halves away from zero
  const long long mag = cents < 0 ? -cents : cents;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%lld.%02lld", cents < 0 ? "-" : "", mag / 100, mag % 100);
  return buf;
}

std::string render_minutes(double seconds) { return format_fixed2(seconds / 60.0) + " minutes"; }

}  // namespace gtb
