#include "gtb/parallel.hpp"

#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <limits>
#include <thread>

#include "gtb/bytes.hpp"
#include "gtb/error.hpp"

namespace gtb {

namespace {

constexpr std::string_view kGradMagic = "GTBG";
constexpr std::uint32_t kReducerId = std::numeric_limits<std::uint32_t>::max();
constexpr std::uint32_t kMaxDims = 16;

std::size_t manifest_size(const std::vector<std::uint32_t>& manifest) {
  if (manifest.empty()) return 0;
  std::size_t n = 1;
  for (auto d : manifest) n *= d;
  return n;
}

}  // namespace

bool GradMessage::operator==(const GradMessage& o) const {
  if (worker_id != o.worker_id || step != o.step || local_batch_size != o.local_batch_size || manifest != o.manifest ||
      payload.size() != o.payload.size())
    return false;
  for (std::size_t i = 0; i < payload.size(); ++i)
    if (std::bit_cast<std::uint64_t>(payload[i]) != std::bit_cast<std::uint64_t>(o.payload[i])) return false;
  return true;
}

std::vector<std::uint8_t> encode(const GradMessage& msg) {
  if (msg.manifest.size() > kMaxDims) throw ProtocolError("encode: too many manifest dimensions");
  if (manifest_size(msg.manifest) != msg.payload.size())
    throw ProtocolError("encode: manifest describes " + std::to_string(manifest_size(msg.manifest)) +
                        " values but payload has " + std::to_string(msg.payload.size()));
  ByteWriter w;
  w.raw(kGradMagic);
  w.u16(kGradProtocolVersion);
  w.u32(msg.worker_id);
  w.u64(msg.step);
  w.u32(msg.local_batch_size);
  w.u32(static_cast<std::uint32_t>(msg.manifest.size()));
  for (auto d : msg.manifest) w.u32(d);
  w.bytes().reserve(w.bytes().size() + 8 * msg.payload.size());
  for (double v : msg.payload) w.f64(v);
  return w.take();
}

GradMessage decode(std::span<const std::uint8_t> bytes) {
  ByteReader<ProtocolError> r(bytes);
  if (r.raw(kGradMagic.size()) != kGradMagic) throw ProtocolError("bad message magic", 0);
  const std::size_t version_at = r.offset();
  if (r.u16() != kGradProtocolVersion) throw ProtocolError("unsupported protocol version", version_at);
  GradMessage m;
  m.worker_id = r.u32();
  m.step = r.u64();
  m.local_batch_size = r.u32();
  const std::size_t dims_at = r.offset();
  const std::uint32_t ndims = r.u32();
  if (ndims > kMaxDims) throw ProtocolError("too many manifest dimensions", dims_at);
  for (std::uint32_t i = 0; i < ndims; ++i) m.manifest.push_back(r.u32());
  const std::size_t n = manifest_size(m.manifest);
  if (r.remaining() != 8 * n)
    throw ProtocolError("payload holds " + std::to_string(r.remaining()) + " bytes, manifest needs " +
                            std::to_string(8 * n),
                        r.offset());
  m.payload.resize(n);
  for (auto& v : m.payload) v = r.f64();
  return m;
}

std::vector<double> allreduce_mean(std::span<const GradMessage> messages, std::size_t num_workers) {
  if (num_workers == 0) throw ContractError("allreduce_mean: no workers");
  std::vector<const GradMessage*> by_worker(num_workers, nullptr);
  for (const auto& m : messages) {
    if (m.worker_id >= num_workers)
      throw ProtocolError("message from unknown worker " + std::to_string(m.worker_id));
    if (by_worker[m.worker_id]) throw ProtocolError("duplicate message from worker " + std::to_string(m.worker_id));
    by_worker[m.worker_id] = &m;
  }
  std::vector<int> missing;
  for (std::size_t w = 0; w < num_workers; ++w)
    if (!by_worker[w]) missing.push_back(static_cast<int>(w));
  if (!missing.empty()) {
    std::string ids;
    for (int w : missing) ids += (ids.empty() ? "" : ",") + std::to_string(w);
    throw SyncTimeoutError("synchronization failed: no message from worker(s) " + ids, missing);
  }

  const GradMessage& first = *by_worker[0];
  std::uint64_t total = 0;
  for (const auto* m : by_worker) {
    if (m->step != first.step)
      throw ProtocolError("step mismatch: worker " + std::to_string(m->worker_id) + " sent step " +
                          std::to_string(m->step) + ", worker 0 sent " + std::to_string(first.step));
    if (m->manifest != first.manifest || m->payload.size() != first.payload.size())
      throw ProtocolError("shape manifest mismatch from worker " + std::to_string(m->worker_id));
    total += m->local_batch_size;
  }
  if (total == 0) throw ContractError("allreduce_mean: total batch size is zero");

  std::vector<double> out(first.payload.size(), 0.0);
  for (const auto* m : by_worker) {
    if (m->local_batch_size == 0) continue;
    const double w = static_cast<double>(m->local_batch_size) / static_cast<double>(total);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * m->payload[i];
  }
  return out;
}

std::vector<std::uint8_t> reduce_encoded(std::span<const std::vector<std::uint8_t>> messages, std::size_t num_workers) {
  std::vector<GradMessage> decoded;
  decoded.reserve(messages.size());
  for (const auto& b : messages) decoded.push_back(decode(b));
  GradMessage result;
  result.worker_id = kReducerId;
  result.payload = allreduce_mean(decoded, num_workers);
  result.step = decoded.front().step;
  result.manifest = decoded.front().manifest;
  std::uint64_t total = 0;
  for (const auto& m : decoded) total += m.local_batch_size;
  result.local_batch_size = static_cast<std::uint32_t>(total);
  return encode(result);
}

LocalHub::LocalHub(int size, std::chrono::milliseconds timeout)
    : size_(size), timeout_(timeout), slots_(static_cast<std::size_t>(size)) {
  if (size < 1) throw ContractError("LocalHub: size must be at least 1");
}

std::vector<std::uint8_t> LocalHub::exchange(int rank, std::vector<std::uint8_t> bytes) {
  std::unique_lock lock(mu_);
  if (rank < 0 || rank >= size_) throw ContractError("LocalHub: rank out of range");
  const std::uint64_t gen = generation_;
  auto& slot = slots_[static_cast<std::size_t>(rank)];
  if (slot) throw ProtocolError("rank " + std::to_string(rank) + " already posted for this step");
  slot = std::move(bytes);

  auto finish = [&](std::exception_ptr err) {
    error_ = err;
    for (auto& s : slots_) s.reset();
    arrived_ = 0;
    ++generation_;
    cv_.notify_all();
  };

  if (++arrived_ == size_) {
    std::vector<std::vector<std::uint8_t>> all;
    for (auto& s : slots_) all.push_back(std::move(*s));
    try {
      result_ = reduce_encoded(all, static_cast<std::size_t>(size_));
      finish(nullptr);
    } catch (...) {
      finish(std::current_exception());
    }
  } else if (!cv_.wait_for(lock, timeout_, [&] { return generation_ != gen; })) {
    std::vector<int> missing;
    std::string ids;
    for (int r = 0; r < size_; ++r)
      if (!slots_[static_cast<std::size_t>(r)]) {
        missing.push_back(r);
        ids += (ids.empty() ? "" : ",") + std::to_string(r);
      }
    finish(std::make_exception_ptr(SyncTimeoutError(
        "synchronization timeout after " + std::to_string(timeout_.count()) + " ms waiting for worker(s) " + ids,
        missing)));
  }
  if (error_) std::rethrow_exception(error_);
  return result_;
}

WorkerReplica::WorkerReplica(ParamSet params, int rank, const ReplicaOptions& options)
    : params_(std::move(params)), rank_(rank), options_(options), scaler_(options.loss_scale, options.growth_interval) {}

ReplicaStepResult WorkerReplica::step(const ExampleSet& set, std::span<const std::string> global_batch, double lr,
                                      Communicator& comm, std::uint64_t step_index) {
  const auto local = shard(global_batch, static_cast<std::size_t>(rank_), static_cast<std::size_t>(comm.size()));
  const bool mixed = options_.precision == Precision::Mixed;
  params_.mode = options_.freeze_norm ? Mode::Eval : Mode::Train;

  ReplicaStepResult result;
  result.scale_used = mixed ? scaler_.scale() : 1.0;
  std::vector<double> flat;
  double local_loss = 0.0;
  if (!local.empty()) {
    const Batch batch = assemble_batch(set, local);
    LocalGradients g = compute_gradients(params_, batch, options_.precision, result.scale_used);
    flat = flatten(g.grads);
    local_loss = g.loss;
  } else {
    flat.assign(params_.parameter_count(), 0.0);
  }
  if (options_.grad_hook) options_.grad_hook(rank_, step_index, flat);
  flat.push_back(local_loss);

  GradMessage msg;
  msg.worker_id = static_cast<std::uint32_t>(rank_);
  msg.step = step_index;
  msg.local_batch_size = static_cast<std::uint32_t>(local.size());
  msg.manifest = {static_cast<std::uint32_t>(flat.size())};
  msg.payload = std::move(flat);
  if (options_.fault_hook) options_.fault_hook(rank_, step_index);

  GradMessage reduced = decode(comm.exchange(encode(msg)));
  if (reduced.step != step_index || reduced.payload.size() != msg.payload.size())
    throw ProtocolError("reduced message does not match step " + std::to_string(step_index));
  result.loss = reduced.payload.back();
  reduced.payload.pop_back();
  result.averaged = std::move(reduced.payload);

  const GradMap grads = unflatten(params_.params, result.averaged);
  if (!all_finite(grads)) {
    if (!mixed) throw OverflowError("non-finite averaged gradient at step " + std::to_string(step_index));
    result.skipped = true;
    scaler_.on_overflow();
    return result;
  }
  adam_step(params_.params, grads, adam_, lr);
  if (mixed) scaler_.on_clean_step();
  return result;
}

WorkerGroup::WorkerGroup(const ParamSet& initial, int num_workers, ReplicaOptions options,
                         std::chrono::milliseconds timeout)
    : hub_(num_workers, timeout) {
  for (int k = 0; k < num_workers; ++k) replicas_.push_back(std::make_unique<WorkerReplica>(initial, k, options));
}

ReplicaStepResult WorkerGroup::step(const ExampleSet& set, std::span<const std::string> global_batch, double lr) {
  const auto K = replicas_.size();
  std::vector<std::map<std::string, NormStats>> saved;
  for (const auto& r : replicas_) saved.push_back(r->params().norms);

  std::vector<ReplicaStepResult> results(K);
  std::vector<std::exception_ptr> errors(K);
  {
    std::vector<std::jthread> threads;
    for (std::size_t k = 0; k < K; ++k)
      threads.emplace_back([&, k] {
        try {
          HubCommunicator comm(hub_, static_cast<int>(k));
          results[k] = replicas_[k]->step(set, global_batch, lr, comm, step_);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
  }

  std::exception_ptr first, timeout;
  for (auto& e : errors) {
    if (!e) continue;
    if (!first) first = e;
    if (!timeout) {
      try {
        std::rethrow_exception(e);
      } catch (const SyncTimeoutError&) {
        timeout = e;
      } catch (...) {
      }
    }
  }
  if (first) {
    for (std::size_t k = 0; k < K; ++k) replicas_[k]->params().norms = saved[k];
    std::rethrow_exception(timeout ? timeout : first);
  }
  ++step_;
  return std::move(results[0]);
}

namespace {

void write_all(int fd, const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::write(fd, data, n);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw IoError(std::string("pipe write failed: ") + std::strerror(errno));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

void write_frame(int fd, std::span<const std::uint8_t> bytes) {
  ByteWriter w;
  w.u64(bytes.size());
  write_all(fd, w.bytes().data(), w.bytes().size());
  write_all(fd, bytes.data(), bytes.size());
}

// False on timeout or EOF.
bool read_exact(int fd, std::uint8_t* out, std::size_t n, std::chrono::steady_clock::time_point deadline) {
  while (n > 0) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return false;
    pollfd p{fd, POLLIN, 0};
    const int rc = ::poll(&p, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
    if (rc < 0 && errno == EINTR) continue;
    if (rc <= 0) return false;
    const ssize_t got = ::read(fd, out, n);
    if (got < 0 && errno == EINTR) continue;
    if (got <= 0) return false;
    out += got;
    n -= static_cast<std::size_t>(got);
  }
  return true;
}

std::optional<std::vector<std::uint8_t>> read_frame(int fd, std::chrono::steady_clock::time_point deadline) {
  std::uint8_t len_bytes[8];
  if (!read_exact(fd, len_bytes, 8, deadline)) return std::nullopt;
  ByteReader<ProtocolError> r(len_bytes);
  const std::uint64_t len = r.u64();
  if (len > (std::uint64_t{1} << 34)) throw ProtocolError("frame too large", 0);
  std::vector<std::uint8_t> buf(len);
  if (!read_exact(fd, buf.data(), buf.size(), deadline)) return std::nullopt;
  return buf;
}

class PipeRootCommunicator final : public Communicator {
 public:
  PipeRootCommunicator(int size, std::vector<int> from_children, std::vector<int> to_children,
                       std::chrono::milliseconds timeout)
      : size_(size), from_(std::move(from_children)), to_(std::move(to_children)), timeout_(timeout) {}

  int rank() const override { return 0; }
  int size() const override { return size_; }

  std::vector<std::uint8_t> exchange(std::vector<std::uint8_t> local) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    std::vector<std::vector<std::uint8_t>> all{std::move(local)};
    std::vector<int> missing;
    for (std::size_t c = 0; c < from_.size(); ++c) {
      auto frame = read_frame(from_[c], deadline);
      if (!frame) {
        missing.push_back(static_cast<int>(c + 1));
        continue;
      }
      all.push_back(std::move(*frame));
    }
    if (!missing.empty()) {
      std::string ids;
      for (int m : missing) ids += (ids.empty() ? "" : ",") + std::to_string(m);
      throw SyncTimeoutError("synchronization timeout waiting for worker process(es) " + ids, missing);
    }
    auto result = reduce_encoded(all, static_cast<std::size_t>(size_));
    for (int fd : to_) write_frame(fd, result);
    return result;
  }

 private:
  int size_;
  std::vector<int> from_;
  std::vector<int> to_;
  std::chrono::milliseconds timeout_;
};

class PipeChildCommunicator final : public Communicator {
 public:
  PipeChildCommunicator(int rank, int size, int to_root, int from_root, std::chrono::milliseconds timeout)
      : rank_(rank), size_(size), to_root_(to_root), from_root_(from_root), timeout_(timeout) {}

  int rank() const override { return rank_; }
  int size() const override { return size_; }

  std::vector<std::uint8_t> exchange(std::vector<std::uint8_t> local) override {
    write_frame(to_root_, local);
    auto frame = read_frame(from_root_, std::chrono::steady_clock::now() + timeout_);
    if (!frame) throw SyncTimeoutError("synchronization timeout waiting for the reducer (worker 0)", {0});
    return std::move(*frame);
  }

 private:
  int rank_, size_, to_root_, from_root_;
  std::chrono::milliseconds timeout_;
};

TrainResult replica_loop(const TrainConfig& config, WorkerReplica& replica, const ExampleSet& set,
                         Communicator& comm) {
  TrainResult result;
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const TimeMark start = mark_time();
    const double lr = scheduler_lr(config.lr0, config.scheduler, epoch);
    const auto batches = make_batches(set.records(), config.batch_size, config.seed, static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    try {
      for (const auto& ids : batches) loss_sum += replica.step(set, ids, lr, comm, step++).loss;
    } catch (const std::exception& e) {
      result.error = "epoch " + std::to_string(epoch) + ": " + e.what();
      return result;
    }
    const double mean_loss = batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size());
    result.stats.push_back({epoch, mean_loss, timed_execution(start, mark_time()), lr});
  }
  return result;
}

ReplicaOptions replica_options(const TrainConfig& config) {
  ReplicaOptions o;
  o.precision = config.precision;
  o.loss_scale = config.loss_scale;
  o.growth_interval = config.growth_interval;
  return o;
}

std::chrono::milliseconds timeout_of(const TrainConfig& config) {
  return std::chrono::milliseconds(static_cast<long long>(config.sync_timeout_seconds * 1000.0));
}

TrainResult train_threads(const TrainConfig& config, ParamSet& params, const ExampleSet& set) {
  const int K = config.workers;
  LocalHub hub(K, timeout_of(config));
  std::vector<std::unique_ptr<WorkerReplica>> replicas;
  for (int k = 0; k < K; ++k) replicas.push_back(std::make_unique<WorkerReplica>(params, k, replica_options(config)));
  std::vector<TrainResult> results(static_cast<std::size_t>(K));
  {
    std::vector<std::jthread> threads;
    for (int k = 0; k < K; ++k)
      threads.emplace_back([&, k] {
        HubCommunicator comm(hub, k);
        results[static_cast<std::size_t>(k)] = replica_loop(config, *replicas[static_cast<std::size_t>(k)], set, comm);
      });
  }
  params = replicas[0]->params();
  TrainResult out = std::move(results[0]);
  for (std::size_t k = 1; k < results.size() && !out.error; ++k)
    if (results[k].error) out.error = "worker " + std::to_string(k) + ": " + *results[k].error;
  return out;
}

TrainResult train_processes(const TrainConfig& config, ParamSet& params, const ExampleSet& set) {
  const int K = config.workers;
  const auto timeout = timeout_of(config);
  struct sigaction ignore{}, previous{};
  ignore.sa_handler = SIG_IGN;
  ::sigaction(SIGPIPE, &ignore, &previous);

  std::vector<int> from_children, to_children;
  std::vector<pid_t> pids;
  auto close_all = [&] {
    for (int fd : from_children) ::close(fd);
    for (int fd : to_children) ::close(fd);
    from_children.clear();
    to_children.clear();
  };
  for (int r = 1; r < K; ++r) {
    int up[2], down[2];
    if (::pipe(up) != 0 || ::pipe(down) != 0) {
      close_all();
      throw IoError("pipe() failed");
    }
    const pid_t pid = ::fork();
    if (pid < 0) {
      close_all();
      throw IoError("fork() failed");
    }
    if (pid == 0) {
      ::close(up[0]);
      ::close(down[1]);
      for (int fd : from_children) ::close(fd);
      for (int fd : to_children) ::close(fd);
      int code = 0;
      try {
        WorkerReplica replica(params, r, replica_options(config));
        PipeChildCommunicator comm(r, K, up[1], down[0], timeout);
        code = replica_loop(config, replica, set, comm).error ? 2 : 0;
      } catch (...) {
        code = 3;
      }
      ::_exit(code);
    }
    ::close(up[1]);
    ::close(down[0]);
    from_children.push_back(up[0]);
    to_children.push_back(down[1]);
    pids.push_back(pid);
  }

  TrainResult result;
  {
    WorkerReplica replica(params, 0, replica_options(config));
    PipeRootCommunicator comm(K, from_children, to_children, timeout);
    result = replica_loop(config, replica, set, comm);
    params = replica.params();
  }
  close_all();
  for (std::size_t i = 0; i < pids.size(); ++i) {
    int status = 0;
    ::waitpid(pids[i], &status, 0);
    if (!result.error && !(WIFEXITED(status) && WEXITSTATUS(status) == 0))
      result.error = "worker process " + std::to_string(i + 1) + " exited abnormally";
  }
  ::sigaction(SIGPIPE, &previous, nullptr);
  return result;
}

}  // namespace

TrainResult train_data_parallel(const TrainConfig& config, ParamSet& params, const ExampleSet& train_set) {
  config.validate();
  params.mode = Mode::Train;
  return config.transport == Transport::Process ? train_processes(config, params, train_set)
                                                : train_threads(config, params, train_set);
}

}  // namespace gtb
