#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "gtb/train.hpp"

namespace gtb {

inline constexpr std::uint16_t kGradProtocolVersion = 1;

/// One worker's contribution to a synchronous step.
struct GradMessage {
  std::uint32_t worker_id = 0;
  std::uint64_t step = 0;
  std::uint32_t local_batch_size = 0;
  std::vector<std::uint32_t> manifest;  // shape of the flattened payload
  std::vector<double> payload;

  /// Bitwise comparison, so NaN payloads compare equal to themselves.
  bool operator==(const GradMessage& o) const;
};

// Little-endian: "GTBG", version u16, worker_id u32, step u64,
// local_batch_size u32, dim count u32, dims u32..., payload f64...
std::vector<std::uint8_t> encode(const GradMessage& msg);
GradMessage decode(std::span<const std::uint8_t> bytes);

/// Batch-size-weighted mean of the payloads, summed in ascending worker_id
/// order whatever order the messages arrive in. Messages must agree on step
/// and manifest and cover workers 0..num_workers-1 exactly once.
std::vector<double> allreduce_mean(std::span<const GradMessage> messages, std::size_t num_workers);

/// Reduces encoded messages into an encoded result message carrying the total
/// batch size and the averaged payload.
std::vector<std::uint8_t> reduce_encoded(std::span<const std::vector<std::uint8_t>> messages, std::size_t num_workers);

/// Transport for the per-step gradient exchange. Every rank hands in its
/// encoded message and gets back the encoded average.
class Communicator {
 public:
  virtual ~Communicator() = default;
  virtual int rank() const = 0;
  virtual int size() const = 0;
  virtual std::vector<std::uint8_t> exchange(std::vector<std::uint8_t> local) = 0;
};

/// Rendezvous point for ranks running as threads of one process.
class LocalHub {
 public:
  LocalHub(int size, std::chrono::milliseconds timeout);

  std::vector<std::uint8_t> exchange(int rank, std::vector<std::uint8_t> bytes);
  int size() const noexcept { return size_; }

 private:
  int size_;
  std::chrono::milliseconds timeout_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::uint64_t generation_ = 0;
  std::vector<std::optional<std::vector<std::uint8_t>>> slots_;
  int arrived_ = 0;
  std::vector<std::uint8_t> result_;
  std::exception_ptr error_;
};

class HubCommunicator final : public Communicator {
 public:
  HubCommunicator(LocalHub& hub, int rank) : hub_(hub), rank_(rank) {}
  int rank() const override { return rank_; }
  int size() const override { return hub_.size(); }
  std::vector<std::uint8_t> exchange(std::vector<std::uint8_t> local) override { return hub_.exchange(rank_, std::move(local)); }

 private:
  LocalHub& hub_;
  int rank_;
};

struct ReplicaOptions {
  Precision precision = Precision::Full;
  double loss_scale = 1024.0;
  int growth_interval = 200;
  /// Run batch norm on running statistics instead of batch statistics, which
  /// makes the loss separable across examples (used by equivalence checks).
  bool freeze_norm = false;
  /// Test hook applied to this rank's local gradients before encoding.
  std::function<void(int rank, std::uint64_t step, std::vector<double>& flat)> grad_hook;
  /// Test hook called before the exchange; throwing simulates a failed worker.
  std::function<void(int rank, std::uint64_t step)> fault_hook;
};

struct ReplicaStepResult {
  double loss = 0.0;  // global batch mean
  bool skipped = false;
  double scale_used = 1.0;
  std::vector<double> averaged;  // averaged flat gradient the update used
};

/// One data-parallel worker: its own copy of the parameters, optimizer state
/// and loss scaler. Replicas stay bit-identical because each applies the same
/// averaged gradient.
class WorkerReplica {
 public:
  WorkerReplica(ParamSet params, int rank, const ReplicaOptions& options);

  ReplicaStepResult step(const ExampleSet& set, std::span<const std::string> global_batch, double lr,
                         Communicator& comm, std::uint64_t step_index);

  const ParamSet& params() const noexcept { return params_; }
  ParamSet& params() noexcept { return params_; }
  const AdamState& adam() const noexcept { return adam_; }
  const LossScaler& scaler() const noexcept { return scaler_; }

 private:
  ParamSet params_;
  int rank_;
  ReplicaOptions options_;
  AdamState adam_;
  LossScaler scaler_;
};

/// In-process group of K replicas, one thread each per step.
class WorkerGroup {
 public:
  WorkerGroup(const ParamSet& initial, int num_workers, ReplicaOptions options,
              std::chrono::milliseconds timeout = std::chrono::seconds(30));

  /// Shards the global batch round-robin, exchanges gradients, applies the
  /// identical update on every replica. On failure nothing is applied and
  /// running statistics are restored, then the first error is rethrown.
  ReplicaStepResult step(const ExampleSet& set, std::span<const std::string> global_batch, double lr);

  int size() const noexcept { return static_cast<int>(replicas_.size()); }
  const WorkerReplica& replica(int k) const { return *replicas_.at(static_cast<std::size_t>(k)); }
  std::uint64_t steps() const noexcept { return step_; }

 private:
  std::vector<std::unique_ptr<WorkerReplica>> replicas_;
  LocalHub hub_;
  std::uint64_t step_ = 0;
};

/// Data-parallel train_run; uses threads or forked processes per config.transport.
TrainResult train_data_parallel(const TrainConfig& config, ParamSet& params, const ExampleSet& train_set);

}  // namespace gtb
