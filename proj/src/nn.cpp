#include "gtb/nn.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "gtb/bytes.hpp"
#include "gtb/error.hpp"

namespace gtb {

void MicroResNetConfig::validate() const {
  if (in_channels < 1 || stem_filters < 1 || num_classes < 1 || input_side < 1 || head_hidden < 0)
    throw ConfigError("network config: channel, class and side counts must be positive");
  for (const auto& b : blocks) {
    if (b.filters < 1) throw ConfigError("network config: block filters must be positive");
    if (b.stride != 1 && b.stride != 2) throw ConfigError("network config: block stride must be 1 or 2");
  }
}

MicroResNetConfig MicroResNetConfig::deeper() {
  MicroResNetConfig c;
  c.blocks = {{8, 1}, {8, 1}, {16, 2}, {16, 1}, {32, 2}, {32, 1}};
  c.head_hidden = 32;
  return c;
}

namespace {

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in;  // 0: constant init
  double fill;
};

std::string block_prefix(std::size_t i) { return "block" + std::to_string(i); }

bool needs_projection(int in_channels, const BlockSpec& b) { return b.stride != 1 || in_channels != b.filters; }

void add_norm(std::vector<ParamSpec>& specs, const std::string& prefix, int channels) {
  const auto c = static_cast<std::size_t>(channels);
  specs.push_back({prefix + ".gamma", {c}, 0, 1.0});
  specs.push_back({prefix + ".beta", {c}, 0, 0.0});
}

void add_conv(std::vector<ParamSpec>& specs, const std::string& name, int out, int in, int k) {
  const auto o = static_cast<std::size_t>(out), i = static_cast<std::size_t>(in), kk = static_cast<std::size_t>(k);
  specs.push_back({name, {o, i, kk, kk}, i * kk * kk, 0.0});
}

std::vector<std::string> norm_names(const MicroResNetConfig& cfg) {
  std::vector<std::string> names{"stem.bn"};
  int in = cfg.stem_filters;
  for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
    names.push_back(block_prefix(i) + ".bn1");
    names.push_back(block_prefix(i) + ".bn2");
    if (needs_projection(in, cfg.blocks[i])) names.push_back(block_prefix(i) + ".proj_bn");
    in = cfg.blocks[i].filters;
  }
  return names;
}

std::vector<ParamSpec> param_specs(const MicroResNetConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> specs;
  add_conv(specs, "stem.conv.weight", cfg.stem_filters, cfg.in_channels, 3);
  add_norm(specs, "stem.bn", cfg.stem_filters);
  int in = cfg.stem_filters;
  for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
    const auto& b = cfg.blocks[i];
    const std::string p = block_prefix(i);
    add_conv(specs, p + ".conv1.weight", b.filters, in, 3);
    add_norm(specs, p + ".bn1", b.filters);
    add_conv(specs, p + ".conv2.weight", b.filters, b.filters, 3);
    add_norm(specs, p + ".bn2", b.filters);
    if (needs_projection(in, b)) {
      add_conv(specs, p + ".proj.weight", b.filters, in, 1);
      add_norm(specs, p + ".proj_bn", b.filters);
    }
    in = b.filters;
  }
  auto features = static_cast<std::size_t>(in);
  if (cfg.head_hidden > 0) {
    const auto h = static_cast<std::size_t>(cfg.head_hidden);
    specs.push_back({"head.hidden.weight", {features, h}, features, 0.0});
    specs.push_back({"head.hidden.bias", {h}, 0, 0.0});
    features = h;
  }
  const auto k = static_cast<std::size_t>(cfg.num_classes);
  specs.push_back({"head.fc.weight", {features, k}, features, 0.0});
  specs.push_back({"head.fc.bias", {k}, 0, 0.0});
  std::sort(specs.begin(), specs.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  return specs;
}

}  // namespace

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params) n += t.size();
  return n;
}

std::size_t param_count(const MicroResNetConfig& cfg) {
  cfg.validate();
  auto conv = [](std::size_t out, std::size_t in, std::size_t k) { return out * in * k * k; };
  const auto stem = static_cast<std::size_t>(cfg.stem_filters);
  std::size_t n = conv(stem, static_cast<std::size_t>(cfg.in_channels), 3) + 2 * stem;
  std::size_t in = stem;
  for (const auto& b : cfg.blocks) {
    const auto f = static_cast<std::size_t>(b.filters);
    n += conv(f, in, 3) + conv(f, f, 3) + 4 * f;
    if (b.stride != 1 || in != f) n += conv(f, in, 1) + 2 * f;
    in = f;
  }
  if (cfg.head_hidden > 0) {
    const auto h = static_cast<std::size_t>(cfg.head_hidden);
    n += in * h + h;
    in = h;
  }
  const auto k = static_cast<std::size_t>(cfg.num_classes);
  return n + in * k + k;
}

Tensor kaiming_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

ParamSet init_params(const MicroResNetConfig& config, std::uint64_t seed) {
  ParamSet ps;
  ps.config = config;
  std::mt19937_64 rng(seed);
  for (auto& spec : param_specs(config)) {
    ps.params.emplace(spec.name, spec.fan_in ? kaiming_normal(spec.shape, spec.fan_in, rng) : Tensor(spec.shape, spec.fill));
  }
  for (const auto& name : norm_names(config)) {
    const std::size_t c = ps.params.at(name + ".gamma").size();
    ps.norms.emplace(name, NormStats{std::vector<double>(c, 0.0), std::vector<double>(c, 1.0)});
  }
  return ps;
}

Var batchnorm_forward(Var x, BatchNormState& state, Mode mode) {
  const Tensor& in = x.value();
  const Tensor& gamma = state.gamma.value();
  const Tensor& beta = state.beta.value();
  if (in.rank() != 4) throw DimensionError("batch_norm: expected [B,C,H,W], got " + shape_str(in.shape()));
  const std::size_t B = in.dim(0), C = in.dim(1), HW = in.dim(2) * in.dim(3);
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
    throw DimensionError("batch_norm: input " + shape_str(in.shape()) + " with gamma " + shape_str(gamma.shape()) +
                         " and beta " + shape_str(beta.shape()));
  if (state.running == nullptr || state.running->mean.size() != C || state.running->var.size() != C)
    throw DimensionError("batch_norm: running statistics do not have " + std::to_string(C) + " channels");

  const std::size_t n = B * HW;
  std::vector<double> mu(C), invstd(C);
  if (mode == Mode::Train) {
    if (n < 2)
      throw ContractError("batch_norm: train mode needs at least 2 values per channel, got " + std::to_string(n));
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < HW; ++k) acc += in[(b * C + c) * HW + k];
      mu[c] = acc / static_cast<double>(n);
      double sq = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < HW; ++k) {
          const double d = in[(b * C + c) * HW + k] - mu[c];
          sq += d * d;
        }
      const double var = sq / static_cast<double>(n);
      invstd[c] = 1.0 / std::sqrt(var + state.eps);
      const double unbiased = sq / static_cast<double>(n - 1);
      state.running->mean[c] = (1.0 - state.momentum) * state.running->mean[c] + state.momentum * mu[c];
      state.running->var[c] = (1.0 - state.momentum) * state.running->var[c] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = state.running->mean[c];
      invstd[c] = 1.0 / std::sqrt(state.running->var[c] + state.eps);
    }
  }

  Tensor xhat(in.shape());
  Tensor out(in.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < HW; ++k) {
        const std::size_t i = (b * C + c) * HW + k;
        xhat[i] = (in[i] - mu[c]) * invstd[c];
        out[i] = gamma[c] * xhat[i] + beta[c];
      }

  const std::size_t gamma_id = state.gamma.id();
  const bool train = mode == Mode::Train;
  return x.tape().record(
      OpKind::BatchNorm, {x, state.gamma, state.beta}, std::move(out),
      [xhat = std::move(xhat), invstd = std::move(invstd), gamma_id, train, B, C, HW, n](
          const Tape& t, const Tensor& g, std::span<Tensor* const> pg) {
        const Tensor& gam = t.value(gamma_id);
        for (std::size_t c = 0; c < C; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t k = 0; k < HW; ++k) {
              const std::size_t i = (b * C + c) * HW + k;
              sum_dy += g[i];
              sum_dy_xhat += g[i] * xhat[i];
            }
          if (pg[1]) (*pg[1])[c] += sum_dy_xhat;
          if (pg[2]) (*pg[2])[c] += sum_dy;
          if (!pg[0]) continue;
          Tensor& gx = *pg[0];
          if (train) {
            // dx = invstd/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat)), dxhat = gamma*dy
            const double scale = gam[c] * invstd[c] / static_cast<double>(n);
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t k = 0; k < HW; ++k) {
                const std::size_t i = (b * C + c) * HW + k;
                gx[i] += scale * (static_cast<double>(n) * g[i] - sum_dy - xhat[i] * sum_dy_xhat);
              }
          } else {
            const double scale = gam[c] * invstd[c];
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t k = 0; k < HW; ++k) {
                const std::size_t i = (b * C + c) * HW + k;
                gx[i] += scale * g[i];
              }
          }
        }
      });
}

Var residual_forward(Var x, ResidualBlock& block, Mode mode, const BoundaryFn& boundary) {
  auto q = [&](Var v) { return boundary ? boundary(v) : v; };
  const auto stride = static_cast<std::size_t>(block.stride);
  Var h = q(conv2d(x, block.conv1, stride, 1));
  h = q(relu(q(batchnorm_forward(h, block.bn1, mode))));
  h = q(conv2d(h, block.conv2, 1, 1));
  h = q(batchnorm_forward(h, block.bn2, mode));
  Var shortcut = x;
  if (block.projection) {
    shortcut = q(conv2d(x, *block.projection, stride, 0));
    if (block.projection_bn) shortcut = q(batchnorm_forward(shortcut, *block.projection_bn, mode));
  } else if (x.shape() != h.shape()) {
    throw DimensionError("residual block: identity shortcut " + shape_str(x.shape()) +
                         " does not match branch output " + shape_str(h.shape()));
  }
  return q(relu(q(add(h, shortcut))));
}

BoundParams bind_params(Tape& tape, const ParamSet& params, const BoundaryFn& boundary) {
  BoundParams bound;
  for (const auto& [name, t] : params.params) {
    Var leaf = tape.leaf(t, true);
    bound.leaves.emplace(name, leaf);
    bound.used.emplace(name, boundary ? boundary(leaf) : leaf);
  }
  return bound;
}

namespace {

BatchNormState norm_state(const BoundParams& bound, ParamSet& params, const std::string& name) {
  BatchNormState s;
  s.gamma = bound.used.at(name + ".gamma");
  s.beta = bound.used.at(name + ".beta");
  s.running = &params.norms.at(name);
  return s;
}

}  // namespace

Var model_forward(const BoundParams& bound, ParamSet& params, Var images, const BoundaryFn& boundary) {
  const auto& cfg = params.config;
  const Shape& s = images.shape();
  const auto side = static_cast<std::size_t>(cfg.input_side);
  if (s.size() != 4 || s[1] != static_cast<std::size_t>(cfg.in_channels))
    throw DimensionError("model_forward: expected images [B," + std::to_string(cfg.in_channels) + "," +
                         std::to_string(side) + "," + std::to_string(side) + "], got " + shape_str(s));
  if (s[2] != side || s[3] != side)
    throw DimensionError("model_forward: expected spatial size " + std::to_string(side) + ", got " +
                         std::to_string(s[2]) + "x" + std::to_string(s[3]));

  auto q = [&](Var v) { return boundary ? boundary(v) : v; };
  auto p = [&](const std::string& name) { return bound.used.at(name); };
  const Mode mode = params.mode;

  Var x = q(images);
  x = q(conv2d(x, p("stem.conv.weight"), 1, 1));
  auto stem_bn = norm_state(bound, params, "stem.bn");
  x = q(relu(q(batchnorm_forward(x, stem_bn, mode))));

  int in = cfg.stem_filters;
  for (std::size_t i = 0; i < cfg.blocks.size(); ++i) {
    const std::string pre = block_prefix(i);
    ResidualBlock block{p(pre + ".conv1.weight"), norm_state(bound, params, pre + ".bn1"), p(pre + ".conv2.weight"),
                        norm_state(bound, params, pre + ".bn2"), std::nullopt, std::nullopt, cfg.blocks[i].stride};
    if (needs_projection(in, cfg.blocks[i])) {
      block.projection = p(pre + ".proj.weight");
      block.projection_bn = norm_state(bound, params, pre + ".proj_bn");
    }
    x = residual_forward(x, block, mode, boundary);
    in = cfg.blocks[i].filters;
  }

  x = q(global_avg_pool(x));
  if (cfg.head_hidden > 0) x = q(relu(q(add_bias(q(matmul(x, p("head.hidden.weight"))), p("head.hidden.bias")))));
  return q(add_bias(q(matmul(x, p("head.fc.weight"))), p("head.fc.bias")));
}

Tensor predict_logits(ParamSet& params, const Tensor& images) {
  Tape tape;
  BoundParams bound;
  for (const auto& [name, t] : params.params) {
    Var v = tape.constant(t);
    bound.leaves.emplace(name, v);
    bound.used.emplace(name, v);
  }
  return model_forward(bound, params, tape.constant(images)).value();
}

namespace {

constexpr std::string_view kCheckpointMagic = "GTB1";
constexpr std::string_view kRunningMean = ".running_mean";
constexpr std::string_view kRunningVar = ".running_var";

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamSet& ps) {
  ByteWriter w;
  w.raw(kCheckpointMagic);
  const auto& c = ps.config;
  for (int v : {c.in_channels, c.stem_filters, c.num_classes, c.input_side, c.head_hidden,
                static_cast<int>(c.blocks.size())})
    w.i32(v);
  for (const auto& b : c.blocks) {
    w.i32(b.filters);
    w.i32(b.stride);
  }

  std::map<std::string, Tensor> entries = ps.params;
  for (const auto& [name, st] : ps.norms) {
    entries.emplace(name + std::string(kRunningMean), Tensor({st.mean.size()}, st.mean));
    entries.emplace(name + std::string(kRunningVar), Tensor({st.var.size()}, st.var));
  }
  for (const auto& [name, t] : entries) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.values()) w.f64(v);
  }
  return w.take();
}

ParamSet decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader<FormatError> r(bytes);
  if (r.remaining() < kCheckpointMagic.size() || r.raw(kCheckpointMagic.size()) != kCheckpointMagic)
    throw FormatError("checkpoint: bad magic", 0);
  MicroResNetConfig cfg;
  cfg.in_channels = r.i32();
  cfg.stem_filters = r.i32();
  cfg.num_classes = r.i32();
  cfg.input_side = r.i32();
  cfg.head_hidden = r.i32();
  const std::int32_t nblocks = r.i32();
  if (nblocks < 0 || nblocks > 1024) r.fail("checkpoint: implausible block count");
  cfg.blocks.clear();
  for (std::int32_t i = 0; i < nblocks; ++i) {
    BlockSpec b;
    b.filters = r.i32();
    b.stride = r.i32();
    cfg.blocks.push_back(b);
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    r.fail(std::string("checkpoint: ") + e.what());
  }

  ParamSet ps = init_params(cfg, 0);
  std::size_t seen = 0;
  while (!r.done()) {
    const std::uint32_t len = r.u32();
    const std::string name = r.raw(len);
    const std::uint32_t rank = r.u32();
    if (rank > 8) r.fail("checkpoint: implausible rank for '" + name + "'");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u32());
    std::vector<double> data(shape_size(shape));
    if (r.remaining() / 8 < data.size()) r.fail("checkpoint: truncated data for '" + name + "'");
    for (auto& v : data) v = r.f64();

    std::vector<double>* stat = nullptr;
    if (ends_with(name, kRunningMean) || ends_with(name, kRunningVar)) {
      const bool is_mean = ends_with(name, kRunningMean);
      const std::string base = name.substr(0, name.size() - (is_mean ? kRunningMean : kRunningVar).size());
      auto it = ps.norms.find(base);
      if (it == ps.norms.end()) r.fail("checkpoint: unexpected entry '" + name + "'");
      stat = is_mean ? &it->second.mean : &it->second.var;
      if (shape != Shape{stat->size()}) r.fail("checkpoint: shape mismatch for '" + name + "'");
      *stat = std::move(data);
    } else {
      auto it = ps.params.find(name);
      if (it == ps.params.end()) r.fail("checkpoint: unexpected entry '" + name + "'");
      if (it->second.shape() != shape) r.fail("checkpoint: shape mismatch for '" + name + "'");
      it->second = Tensor(shape, std::move(data));
    }
    ++seen;
  }
  if (seen != ps.params.size() + 2 * ps.norms.size()) r.fail("checkpoint: missing entries");
  ps.mode = Mode::Eval;
  return ps;
}

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params) {
  write_file_atomic(path, encode_checkpoint(params));
}

ParamSet load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace gtb
