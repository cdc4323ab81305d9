#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gtb/autograd.hpp"

namespace gtb {

struct BlockSpec {
  int filters = 8;
  int stride = 1;
  bool operator==(const BlockSpec&) const = default;
};

/// Shape of the micro residual network: conv stem, residual blocks,
/// global average pool, optional hidden linear layer, linear head.
struct MicroResNetConfig {
  int in_channels = 1;
  int stem_filters = 8;
  std::vector<BlockSpec> blocks{{8, 1}, {16, 2}, {32, 2}};
  int num_classes = 14;
  int input_side = 32;
  int head_hidden = 0;  // 0: single linear head

  void validate() const;
  bool operator==(const MicroResNetConfig&) const = default;

  /// Deeper variant with an extra hidden head layer, the stand-in for the
  /// larger backbone row of the strategy matrix.
  static MicroResNetConfig deeper();
};

enum class Mode { Train, Eval };

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

struct NormStats {
  std::vector<double> mean;
  std::vector<double> var;
  bool operator==(const NormStats&) const = default;
};

/// Trainable tensors keyed by name (std::map keeps iteration sorted), plus
/// batch-norm running statistics and the train/eval switch.
struct ParamSet {
  MicroResNetConfig config;
  std::map<std::string, Tensor> params;
  std::map<std::string, NormStats> norms;
  Mode mode = Mode::Train;

  std::size_t parameter_count() const;
  bool operator==(const ParamSet&) const = default;
};

/// Closed-form trainable parameter count for a configuration.
std::size_t param_count(const MicroResNetConfig& config);

Tensor kaiming_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

ParamSet init_params(const MicroResNetConfig& config, std::uint64_t seed);

/// Identity by default. Mixed precision installs a binary16 rounding op here.
using BoundaryFn = std::function<Var(Var)>;

struct BatchNormState {
  Var gamma;
  Var beta;
  NormStats* running = nullptr;
  double momentum = kBatchNormMomentum;
  double eps = kBatchNormEps;
};

/// Per-channel normalization of [B,C,H,W]. Train mode normalizes with the
/// batch's population variance and folds the unbiased variance into the
/// running estimate; eval mode reads running statistics only.
Var batchnorm_forward(Var x, BatchNormState& state, Mode mode);

struct ResidualBlock {
  Var conv1;
  BatchNormState bn1;
  Var conv2;
  BatchNormState bn2;
  std::optional<Var> projection;  // 1x1 strided conv on the skip path
  std::optional<BatchNormState> projection_bn;
  int stride = 1;
};

/// relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x))
Var residual_forward(Var x, ResidualBlock& block, Mode mode, const BoundaryFn& boundary = {});

/// Tape leaves for every parameter, and the values the forward pass reads
/// (the leaf passed through the boundary hook, when one is given).
struct BoundParams {
  std::map<std::string, Var> leaves;
  std::map<std::string, Var> used;
};

BoundParams bind_params(Tape& tape, const ParamSet& params, const BoundaryFn& boundary = {});

/// Logits [B, num_classes]. Updates running statistics when params.mode is Train.
Var model_forward(const BoundParams& bound, ParamSet& params, Var images, const BoundaryFn& boundary = {});

/// Convenience: eval-style forward on a fresh tape, returning logits by value.
Tensor predict_logits(ParamSet& params, const Tensor& images);

// Checkpoint container: "GTB1", config as little-endian int32, then each
// sorted entry (parameters and running statistics) as name length, name,
// dim count, dims, little-endian float64 data.
std::vector<std::uint8_t> encode_checkpoint(const ParamSet& params);
ParamSet decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const ParamSet& params);
ParamSet load_checkpoint(const std::filesystem::path& path);

}  // namespace gtb
