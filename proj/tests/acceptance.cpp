// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gtb/bench.hpp"
#include "gtb/bytes.hpp"
#include "gtb/config.hpp"
#include "gtb/gradcheck.hpp"
#include "gtb/imaging.hpp"
#include "gtb/loss.hpp"
#include "gtb/nn.hpp"
#include "gtb/optim.hpp"
#include "gtb/parallel.hpp"
#include "gtb/precision.hpp"
#include "gtb/train.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace gtb;
namespace fs = std::filesystem;

namespace {

// Collects sub-check failures; a criterion passes when none were recorded.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) failures_.push_back(what);
  }
  void note(const std::string& detail) { notes_.push_back(detail); }
  bool ok() const { return failures_.empty(); }
  std::string summary() const {
    std::string s;
    for (const auto& n : notes_) s += (s.empty() ? "" : "; ") + n;
    for (const auto& f : failures_) s += (s.empty() ? "failed: " : "; failed: ") + f;
    return s;
  }

 private:
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double max_relative_error(const std::vector<double>& a, const std::vector<double>& ref) {
  double worst = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i)
    worst = std::max(worst, std::fabs(a[i] - ref[i]) / std::max({std::fabs(a[i]), std::fabs(ref[i]), 1e-12}));
  return worst;
}

// 1. Gradient correctness for every op and a whole network with the loss attached.
void gradient_correctness(Checks& c) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  double worst = 0.0;
  auto run = [&](const std::string& name, const ScalarFn& f, const std::vector<Tensor>& params, double eps) {
    const double err = grad_check(f, params, eps);
    worst = std::max(worst, err);
    c.expect(err < 1e-5, name + " rel error " + fmt("%.3g", err));
  };

  const Tensor a = oracle::random_tensor({3, 4}, rng), b = oracle::random_tensor({3, 4}, rng);
  run("add/mul/sum", [](Tape&, std::span<const Var> p) { return sum(mul(add(p[0], p[1]), p[0])); }, {a, b}, 1e-4);
  run("scale/sigmoid/mean", [](Tape&, std::span<const Var> p) { return mean(scale(sigmoid(p[0]), 1.7)); }, {a}, 1e-4);
  // Values kept clear of the kink at zero.
  const Tensor r({8}, std::vector<double>{-0.9, -0.5, -0.2, 0.3, 0.7, 1.2, -1.4, 2.0});
  run("relu", [](Tape&, std::span<const Var> p) { return sum(mul(relu(p[0]), p[0])); }, {r}, 1e-4);

  const Tensor x = oracle::random_tensor({2, 2, 5, 5}, rng), k = oracle::random_tensor({3, 2, 3, 3}, rng);
  const Tensor w = oracle::random_tensor({3, 4}, rng), bias = oracle::random_tensor({4}, rng);
  const Tensor wx = oracle::random_tensor({2, 3, 3, 3}, rng);
  run("conv2d", [&](Tape& t, std::span<const Var> p) { return sum(mul(conv2d(p[0], p[1], 2, 1), t.constant(wx))); },
      {x, k}, 1e-4);
  run("global_avg_pool/matmul/add_bias",
      [](Tape&, std::span<const Var> p) { return sum(sigmoid(add_bias(matmul(global_avg_pool(p[0]), p[1]), p[2]))); },
      {oracle::random_tensor({2, 3, 4, 4}, rng), w, bias}, 1e-4);

  const Tensor bx = oracle::random_tensor({3, 2, 2, 2}, rng, -3, 3), bw = oracle::random_tensor({3, 2, 2, 2}, rng);
  const Tensor gamma({2}, std::vector<double>{1.2, 0.8}), beta({2}, std::vector<double>{0.1, -0.2});
  for (Mode mode : {Mode::Train, Mode::Eval}) {
    run(mode == Mode::Train ? "batchnorm(train)" : "batchnorm(eval)",
        [&](Tape& t, std::span<const Var> p) {
          NormStats scratch{{0.3, -0.1}, {1.5, 0.7}};
          BatchNormState s{p[1], p[2], &scratch};
          return sum(mul(batchnorm_forward(p[0], s, mode), t.constant(bw)));
        },
        {bx, gamma, beta}, 1e-5);
  }

  // Residual blocks, identity and projection shortcuts.
  const Tensor rx = oracle::random_tensor({2, 2, 4, 4}, rng);
  const Tensor k1 = oracle::random_tensor({3, 2, 3, 3}, rng), k2 = oracle::random_tensor({3, 3, 3, 3}, rng);
  const Tensor kp = oracle::random_tensor({3, 2, 1, 1}, rng), kid = oracle::random_tensor({2, 2, 3, 3}, rng);
  auto bn_state = [](Tape& t, std::size_t ch, NormStats* s) {
    return BatchNormState{t.leaf(Tensor({ch}, 1.0)), t.leaf(Tensor({ch}, 0.0)), s};
  };
  run("residual(identity)",
      [&](Tape& t, std::span<const Var> p) {
        NormStats s1{{0, 0}, {1, 1}}, s2 = s1;
        ResidualBlock blk{p[1], bn_state(t, 2, &s1), p[2], bn_state(t, 2, &s2), std::nullopt, std::nullopt, 1};
        return mean(residual_forward(p[0], blk, Mode::Train));
      },
      {rx, kid, kid}, 1e-5);
  run("residual(projection)",
      [&](Tape& t, std::span<const Var> p) {
        NormStats s1{{0, 0, 0}, {1, 1, 1}}, s2 = s1, s3 = s1;
        ResidualBlock blk{p[1], bn_state(t, 3, &s1), p[2], bn_state(t, 3, &s2), p[3], bn_state(t, 3, &s3), 2};
        return mean(residual_forward(p[0], blk, Mode::Train));
      },
      {rx, k1, k2, kp}, 1e-5);

  const Tensor logits = oracle::random_tensor({3, 14}, rng, -4, 4);
  Tensor targets({3, 14}, 0.0);
  for (std::size_t i = 0; i < targets.size(); i += 3) targets[i] = 1.0;
  run("bce_with_logits", [&](Tape& t, std::span<const Var> p) { return bce_with_logits(p[0], t.constant(targets)); },
      {logits}, 1e-5);

  // Whole network: stem, identity block, projection block, pool, head, loss.
  MicroResNetConfig cfg;
  cfg.stem_filters = 2;
  cfg.blocks = {{2, 1}, {3, 2}};
  cfg.input_side = 6;
  const ParamSet base = init_params(cfg, 3);
  const Tensor images = oracle::random_tensor({3, 1, 6, 6}, rng);
  std::vector<std::string> names;
  std::vector<Tensor> values;
  for (const auto& [n, t] : base.params) {
    names.push_back(n);
    values.push_back(t);
  }
  run("micro-network+bce",
      [&](Tape& tape, std::span<const Var> leaves) {
        ParamSet p = base;
        BoundParams bound;
        for (std::size_t i = 0; i < names.size(); ++i) {
          bound.leaves.emplace(names[i], leaves[i]);
          bound.used.emplace(names[i], leaves[i]);
        }
        return bce_with_logits(model_forward(bound, p, tape.constant(images)), tape.constant(targets));
      },
      values, 1e-5);

  const double secs = seconds_since(t0);
  c.expect(secs < 60.0, "runtime " + fmt("%.1f s", secs));
  c.note("max rel error " + fmt("%.2e", worst) + ", " + fmt("%.1f s", secs));
}

// 2. Loss against the extended-precision sigmoid form, extremes and gradient.
void loss_oracle(Checks& c) {
  double worst = 0.0;
  for (double x = -20.0; x <= 20.0; x += 1.0 / 64)
    for (double y : {0.0, 1.0})
      worst = std::max(worst, std::fabs(bce_with_logits_term(x, y) - static_cast<double>(oracle::bce_sigmoid_form(x, y))));
  c.expect(worst <= 1e-12, "sigmoid form diff " + fmt("%.3g", worst));
  c.note("max diff |x|<=20 " + fmt("%.2e", worst));

  for (double x : {50.0, 75.0, 100.0, 1e3, 1e6, 1e300}) {
    c.expect(bce_with_logits_term(x, 0.0) == x, "y=0 x=" + fmt("%g", x) + " not exactly x");
    c.expect(bce_with_logits_term(-x, 1.0) == x, "y=1 x=" + fmt("%g", -x) + " not exactly |x|");
  }
  // For y=0 and x <= -50 the loss is ln(1+e^x) < 2e-22, zero to within its own magnitude.
  for (double x : {-50.0, -75.0, -100.0, -1e3, -1e6, -1e300}) {
    const double v = bce_with_logits_term(x, 0.0);
    c.expect(v >= 0.0 && v <= 2e-22, "y=0 x=" + fmt("%g", x) + " gives " + fmt("%.3g", v));
  }

  std::mt19937_64 rng(22);
  double gworst = 0.0;
  for (std::size_t B : {1u, 3u, 8u}) {
    const Tensor x = oracle::random_tensor({B, 14}, rng, -30, 30);
    Tensor y({B, 14}, 0.0);
    std::bernoulli_distribution coin(0.4);
    for (double& v : y.values()) v = coin(rng) ? 1.0 : 0.0;
    Tape tape;
    Var xv = tape.leaf(x);
    const Tensor g = tape.backward(bce_with_logits(xv, tape.constant(y)))[xv];
    for (std::size_t i = 0; i < x.size(); ++i)
      gworst = std::max(gworst, std::fabs(g[i] - (oracle::sigmoid(x[i]) - y[i]) / (B * 14.0)));
  }
  c.expect(gworst <= 1e-10, "gradient diff " + fmt("%.3g", gworst));
  c.note("gradient diff " + fmt("%.2e", gworst));
}

// 3. Convergence on a 32-image synthetic set.
void convergence(Checks& c) {
  const auto set = fixture::synthetic_set(32, 32);
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.lr0 = 0.001;
  cfg.epochs = 300;
  ParamSet params = init_params(MicroResNetConfig{}, 0);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train_run(cfg, params, set);
  c.expect(!r.error, "training error: " + r.error.value_or(""));
  c.expect(r.stats.size() == 300, "epoch count " + std::to_string(r.stats.size()));
  if (r.stats.empty()) return;
  const double first = r.stats.front().mean_loss, last = r.stats.back().mean_loss;
  c.expect(last < 0.05, "final loss " + fmt("%.4f", last));
  c.expect(last < first, "final loss not below first");
  int reached = -1;
  for (const auto& s : r.stats)
    if (s.mean_loss < 0.05) {
      reached = s.epoch;
      break;
    }

  const fs::path dir = fs::temp_directory_path() / "gtb_acceptance_curve";
  fs::create_directories(dir);
  emit_loss_curve(r.stats, dir / "loss.csv", dir / "loss.svg");
  const auto bytes = read_file(dir / "loss.csv");
  const auto rows = std::count(bytes.begin(), bytes.end(), '\n') - 1;
  c.expect(rows == static_cast<long>(r.stats.size()), "csv rows " + std::to_string(rows));
  const std::string log = training_log_csv(r.stats);
  c.expect(std::count(log.begin(), log.end(), '\n') - 1 == static_cast<long>(r.stats.size()), "training log rows");
  c.note("loss " + fmt("%.4f", first) + " -> " + fmt("%.4f", last) + ", below 0.05 from epoch " +
         std::to_string(reached) + ", csv rows " + std::to_string(rows) + ", " + fmt("%.0f s", seconds_since(t0)));
}

// 4. Data-parallel gradients equal the full-batch gradient; replicas stay identical.
void data_parallel_equivalence(Checks& c) {
  using namespace std::chrono_literals;
  const auto set = fixture::synthetic_set(8, 8);
  const auto ids = fixture::ids_of(set);
  const ParamSet initial = init_params(fixture::small_model(8), 3);
  ParamSet ref_params = initial;
  ref_params.mode = Mode::Eval;
  const auto ref = flatten(compute_gradients(ref_params, assemble_batch(set, ids), Precision::Full).grads);
  double worst = 0.0;
  for (int K : {1, 2, 4}) {
    ReplicaOptions opt;
    opt.freeze_norm = true;
    WorkerGroup group(initial, K, opt, 30s);
    const auto r = group.step(set, ids, 0.001);
    const double err = max_relative_error(r.averaged, ref);
    worst = std::max(worst, err);
    c.expect(r.averaged.size() == ref.size() && err < 1e-10, "K=" + std::to_string(K) + " rel " + fmt("%.3g", err));
  }
  c.note("max rel error " + fmt("%.2e", worst));

  for (int K : {2, 4}) {
    for (bool frozen : {true, false}) {
      ReplicaOptions opt;
      opt.freeze_norm = frozen;
      WorkerGroup group(initial, K, opt, 30s);
      bool identical = true;
      for (int step = 0; step < 50 && identical; ++step) {
        group.step(set, ids, 0.001);
        for (int k = 1; k < K; ++k) identical = identical && group.replica(k).params().params == group.replica(0).params().params;
      }
      c.expect(identical, "K=" + std::to_string(K) + (frozen ? " frozen" : " train-mode") + " replicas diverged");
    }
  }
  c.note("replicas bit-identical over 50 steps for K=2,4");
}

// 5. Mixed-precision parity, Inf handling, binary16 rounding.
void mixed_precision(Checks& c) {
  const auto set = fixture::synthetic_set(32, 32);
  TrainConfig cfg;
  cfg.epochs = 25;
  cfg.batch_size = 8;
  ParamSet full = init_params(MicroResNetConfig{}, 0), mixed = full;
  const auto rf = train_run(cfg, full, set);
  cfg.precision = Precision::Mixed;
  const auto rm = train_run(cfg, mixed, set);
  c.expect(!rf.error && !rm.error, "training error");
  if (!rf.stats.empty() && !rm.stats.empty()) {
    const double lf = rf.stats.back().mean_loss, lm = rm.stats.back().mean_loss;
    const double rel = std::fabs(lm - lf) / lf;
    c.expect(rel <= 0.10, "final loss rel diff " + fmt("%.3f", rel));
    c.note("full " + fmt("%.6f", lf) + " mixed " + fmt("%.6f", lm) + " rel " + fmt("%.2e", rel));
    c.expect(lf != lm, "mixed run identical to full run");
  }

  const auto small = fixture::synthetic_set(6, 8);
  const Batch batch = assemble_batch(small, fixture::ids_of(small));
  ParamSet p = init_params(fixture::small_model(8), 1);
  AdamState adam;
  LossScaler scaler(1024.0, 200);
  const auto hook = [](std::uint64_t step, GradMap& g) {
    if (step == 2) g.begin()->second[0] = std::numeric_limits<double>::infinity();
  };
  for (std::uint64_t step = 0; step < 4; ++step) {
    const auto before = p.params;
    const double scale_before = scaler.scale();
    const StepResult r = mixed_precision_step(p, batch, adam, scaler, 0.001, hook, step);
    if (step == 2) {
      c.expect(r.skipped, "Inf step not skipped");
      c.expect(p.params == before, "Inf step changed parameters");
      c.expect(scaler.scale() == scale_before / 2, "scale not halved");
    } else {
      c.expect(!r.skipped && p.params != before, "clean step " + std::to_string(step) + " not applied");
    }
  }
  c.expect(adam.t == 3, "optimizer step count");

  c.expect(quantize_binary16(1.0) == 1.0, "q(1)");
  c.expect(quantize_binary16(1.0 + std::ldexp(1.0, -12)) == 1.0, "q(1+2^-12)");
  c.expect(quantize_binary16(std::ldexp(1.0, -25)) == 0.0, "q(2^-25)");
  c.expect(oracle::binary16_round(1.0 + std::ldexp(1.0, -12)) == 1.0 && oracle::binary16_round(std::ldexp(1.0, -25)) == 0.0,
           "oracle disagrees on examples");
}

// 6. Step decay bands over a 25-epoch horizon.
void scheduler_exactness(Checks& c) {
  const SchedulerConfig s{SchedulerConfig::Kind::Step, 10, 0.1};
  for (int e = 0; e < 25; ++e) {
    const double expected = e < 10 ? 0.001 : e < 20 ? 0.0001 : 0.00001;
    c.expect(scheduler_lr(0.001, s, e) == expected, "epoch " + std::to_string(e) + " lr " + fmt("%.17g", scheduler_lr(0.001, s, e)));
  }
}

// 7. Accuracy against a brute-force counter.
void accuracy_formula(Checks& c) {
  std::mt19937_64 rng(77);
  std::bernoulli_distribution coin(0.3);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor probs = oracle::random_tensor({50, 14}, rng, 0.0, 1.0);
    for (std::size_t i = trial % 5; i < probs.size(); i += 11) probs[i] = 0.5;
    Tensor truth({50, 14}, 0.0);
    for (double& t : truth.values()) t = coin(rng) ? 1.0 : 0.0;
    if (evaluate_accuracy(probs, truth) != oracle::brute_accuracy(probs, truth)) ++mismatches;
  }
  c.expect(mismatches == 0, std::to_string(mismatches) + " mismatches");
  // Denominator is images times labels: one wrong entry out of 2*14.
  Tensor probs({2, 14}, 0.9), truth({2, 14}, 1.0);
  truth[3] = 0.0;
  c.expect(evaluate_accuracy(probs, truth) == 27.0 / 28.0, "denominator N*14");
}

// 8. Exposure prototypes classify to their own labels.
void exposure_qc(Checks& c) {
  struct Row {
    double mean, std;
    Exposure label;
  };
  const Row rows[] = {{0.4149, 0.1402, Exposure::Overexposed},
                      {0.6200, 0.1834, Exposure::Underexposed},
                      {0.2428, 0.2885, Exposure::Padded},
                      {0.4948, 0.2406, Exposure::Correct}};
  for (const Row& r : rows)
    c.expect(classify_exposure(r.mean, r.std) == r.label,
             std::string(exposure_name(r.label)) + " misclassified as " +
                 std::string(exposure_name(classify_exposure(r.mean, r.std))));
}

// 9. Strategy matrix tables on toy data, then the full default bench timed.
void benchmark_harness(Checks& c) {
  c.expect(render_percent(0.8692) == "86.92%", "render_percent");
  c.expect(render_minutes(611.4) == "10.19 minutes", "render_minutes");
  c.expect(render_minutes(150.38 * 60.0) == "150.38 minutes", "render_minutes(150.38)");
  {
    const StrategyReport fixed{"baseline", "micro-resnet", "", 611.4, 611.4 / 60.0, 0.8692, {0.5}, {}, std::nullopt};
    const Tables t = emit_tables({fixed});
    c.expect(t.markdown.find("86.92%") != std::string::npos && t.markdown.find("10.19 minutes") != std::string::npos,
             "fixed-input table rendering");
  }

  RunConfig toy;
  toy.train.epochs = 2;
  toy.train.batch_size = 8;
  toy.model.stem_filters = 4;
  toy.model.blocks = {{4, 1}, {8, 2}};
  toy.model.input_side = 8;
  toy.synthetic.samples = 24;
  toy.synthetic.native_side = 16;
  const PreparedData data = prepare_data(toy, {1, 4});
  const auto reports = run_strategy_matrix(data, toy, default_strategies());
  c.expect(reports.size() == default_strategies().size(), "report count");
  for (const auto& r : reports) {
    c.expect(!r.error, r.strategy + ": " + r.error.value_or(""));
    c.expect(r.test_accuracy.has_value(), r.strategy + " has no accuracy");
  }
  const Tables t = emit_tables(reports, data.timings);
  for (const auto& r : reports) {
    if (!r.test_accuracy) continue;
    c.expect(t.markdown.find(render_percent(*r.test_accuracy)) != std::string::npos, r.strategy + " accuracy cell");
    c.expect(t.markdown.find(render_minutes(r.total_seconds)) != std::string::npos, r.strategy + " time cell");
  }
  std::set<std::size_t> timed;
  for (const auto& p : data.timings) timed.insert(p.workers);
  c.expect(timed == std::set<std::size_t>{1, 4}, "preprocessing timings for 1 and 4 workers");
  c.expect(t.markdown.find("| 1 |") != std::string::npos && t.markdown.find("| 4 |") != std::string::npos,
           "preprocessing rows in table");

  const fs::path out = fs::temp_directory_path() / "gtb_acceptance_bench";
  fs::remove_all(out);
  const auto t0 = std::chrono::steady_clock::now();
  const auto full = run_bench(RunConfig{}, out);
  const double secs = seconds_since(t0);
  c.expect(secs < 600.0, "default bench " + fmt("%.0f s", secs));
  for (const auto& r : full) c.expect(!r.error, "bench " + r.strategy + ": " + r.error.value_or(""));
  c.expect(fs::exists(out / "tables.md") && fs::exists(out / "tables.csv"), "bench tables written");
  std::string accs;
  for (const auto& r : full)
    if (r.test_accuracy) accs += (accs.empty() ? "" : " ") + render_percent(*r.test_accuracy);
  c.note("default bench " + fmt("%.0f s", secs) + ", accuracies " + accs);
}

// 10. Wire round trip on random messages, Inf and NaN included.
void protocol_round_trip(Checks& c) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> d(0.0, 1e3);
  const double specials[] = {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                             std::numeric_limits<double>::quiet_NaN(), -0.0, std::numeric_limits<double>::denorm_min()};
  int bad = 0, with_inf = 0;
  for (int i = 0; i < 1000; ++i) {
    GradMessage m;
    m.worker_id = static_cast<std::uint32_t>(rng());
    m.step = rng();
    m.local_batch_size = static_cast<std::uint32_t>(rng() % 4096);
    const std::size_t dims = rng() % 4;
    std::size_t n = dims == 0 ? 0 : 1;
    for (std::size_t k = 0; k < dims; ++k) {
      m.manifest.push_back(static_cast<std::uint32_t>(1 + rng() % 9));
      n *= m.manifest.back();
    }
    for (std::size_t k = 0; k < n; ++k) m.payload.push_back(rng() % 8 == 0 ? specials[rng() % 5] : d(rng));
    if (n > 0 && i % 2 == 0) m.payload[rng() % n] = std::numeric_limits<double>::infinity();
    if (std::any_of(m.payload.begin(), m.payload.end(), [](double v) { return std::isinf(v); })) ++with_inf;
    const auto bytes = encode(m);
    const GradMessage back = decode(bytes);
    if (!(back == m) || encode(back) != bytes) ++bad;
  }
  c.expect(bad == 0, std::to_string(bad) + " messages did not round-trip");
  c.note("1000 messages, " + std::to_string(with_inf) + " with Inf");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<void(Checks&)>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"loss oracle", loss_oracle},
      {"convergence", convergence},
      {"data-parallel equivalence", data_parallel_equivalence},
      {"mixed-precision parity", mixed_precision},
      {"scheduler exactness", scheduler_exactness},
      {"accuracy formula", accuracy_formula},
      {"exposure QC", exposure_qc},
      {"benchmark harness", benchmark_harness},
      {"protocol round trip", protocol_round_trip},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    Checks c;
    try {
      criteria[i].second(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    if (!c.ok()) ++failed;
    std::printf("%s [%d] %s: %s\n", c.ok() ? "PASS" : "FAIL", id, criteria[i].first.c_str(), c.summary().c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
