#include "gtb/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>

#include "gtb/bench.hpp"
#include "gtb/bytes.hpp"
#include "gtb/config.hpp"
#include "gtb/error.hpp"
#include "gtb/imaging.hpp"

namespace gtb {

namespace {

namespace fs = std::filesystem;

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out_dir = "out";
  std::optional<int> workers;
  std::string data_dir;
};

RunConfig resolve_config(const GlobalOptions& g) {
  RunConfig c = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
  if (g.seed) c.train.seed = *g.seed;
  if (g.workers) {
    c.train.workers = *g.workers;
    c.parallel_workers = *g.workers;
  }
  if (!g.data_dir.empty()) c.data_dir = fs::path(g.data_dir);
  c.train.validate();
  return c;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string());
}

void report_timings(std::ostream& out, const std::vector<PreprocessTiming>& timings) {
  for (const auto& t : timings)
    out << "preprocess with " << t.workers << " worker(s): " << fixed(t.seconds, 4) << " s\n";
}

int cmd_synth(const GlobalOptions& g, std::ostream& out) {
  const RunConfig c = resolve_config(g);
  const SyntheticCorpus corpus = make_synthetic_corpus(c.synthetic);
  ensure_dir(g.out_dir);
  write_corpus(g.out_dir, corpus);
  out << "wrote " << corpus.records.size() << " images and metadata.csv to " << g.out_dir << "\n";
  return kExitOk;
}

int cmd_preprocess(const GlobalOptions& g, std::ostream& out, std::ostream& err) {
  const RunConfig c = resolve_config(g);
  if (!c.data_dir) throw ConfigError("preprocess needs --data-dir or data_dir in the config");
  const fs::path out_dir = g.out_dir;
  ensure_dir(out_dir);

  const auto meta = read_file(*c.data_dir / c.metadata);
  auto records = parse_metadata(std::string_view(reinterpret_cast<const char*>(meta.data()), meta.size()));
  records = split_by_patient(std::move(records), c.fractions, c.train.seed);
  std::vector<ManifestEntry> manifest;
  std::string split_csv = "image_id,patient_id,split\n";
  for (const auto& r : records) {
    manifest.push_back({r.image_id, r.split});
    split_csv += r.image_id + "," + r.patient_id + "," + std::string(split_name(r.split)) + "\n";
  }
  const SplitReport report = organize_splits(*c.data_dir, out_dir / "splits", manifest);
  write_file_atomic(out_dir / "split_assignment.csv", split_csv);
  write_file_atomic(out_dir / "split_report.csv", report.to_csv());
  for (Split s : kAllSplits)
    out << split_name(s) << ": " << report.count(s) << " image(s), " << report.failure_count(s) << " failure(s)\n";
  for (const auto& f : report.failures) err << "warning: " << f.image_id << ": " << f.message << "\n";

  const PreparedData data = prepare_data(c, {1, std::max<std::size_t>(1, c.preprocess_workers)});
  report_timings(out, data.timings);
  for (const auto& s : data.skipped) err << "warning: skipped " << s << "\n";
  return kExitOk;
}

int cmd_inspect(const std::string& path, std::size_t bins, std::ostream& out) {
  const GrayImage img = decode_image(read_file(path));
  const PixelStats st = pixel_stats(img.pixels);
  out << "image: " << path << " (" << img.width << "x" << img.height << ")\n";
  out << "mean: " << fixed(st.mean, 6) << "\n";
  out << "std: " << fixed(st.std, 6) << "\n";
  out << "exposure: " << exposure_name(classify_exposure(st.mean, st.std)) << "\n";
  out << "histogram (" << bins << " bins):";
  for (auto count : intensity_histogram(img, bins)) out << " " << count;
  out << "\n";
  return kExitOk;
}

int cmd_train(const GlobalOptions& g, const std::string& strategy_name, std::ostream& out) {
  const RunConfig c = resolve_config(g);
  TrainConfig train = c.train;
  MicroResNetConfig model = c.model;
  if (!strategy_name.empty()) {
    const Strategy s = resolve_strategy(strategy_name, c);
    train = s.train;
    model = s.model;
  }
  const fs::path out_dir = g.out_dir;
  ensure_dir(out_dir);
  PreparedData data = prepare_data(c, {std::max<std::size_t>(1, c.preprocess_workers)});
  out << "train/val/test images: " << data.train.size() << "/" << data.val.size() << "/" << data.test.size() << "\n";

  ParamSet params = init_params(model, train.seed);
  const TimeMark start = mark_time();
  const TrainResult result = train_run(train, params, data.train);
  const double seconds = timed_execution(start, mark_time());
  write_file_atomic(out_dir / "training_log.csv", training_log_csv(result.stats));
  if (!result.stats.empty())
    emit_loss_curve(result.stats, out_dir / "loss_curve.csv", out_dir / "loss_curve.svg");
  for (const auto& s : result.stats)
    out << "epoch " << s.epoch << "  loss " << fixed(s.mean_loss, 6) << "  lr " << s.lr_used << "\n";
  if (result.error) throw Error("training aborted: " + *result.error);
  params.mode = Mode::Eval;
  save_checkpoint(out_dir / "model.gtb", params);
  out << "training time: " << render_minutes(seconds) << "\n";
  if (data.test.size() > 0) {
    Tensor truth({data.test.size(), kNumClasses}, 0.0);
    std::size_t i = 0;
    for (const auto& r : data.test.records())
      for (auto l : r.labels) truth[i++] = l;
    out << "test accuracy: " << render_percent(evaluate_accuracy_logits(predict_set(params, data.test), truth)) << "\n";
  }
  return kExitOk;
}

int cmd_eval(const GlobalOptions& g, const std::string& checkpoint, const std::string& split, std::ostream& out) {
  RunConfig c = resolve_config(g);
  ParamSet params = load_checkpoint(checkpoint);
  c.model = params.config;
  const PreparedData data = prepare_data(c, {std::max<std::size_t>(1, c.preprocess_workers)});
  const auto parsed = parse_split(split);
  if (!parsed) throw ConfigError("unknown split '" + split + "'");
  const Split which = *parsed;
  const ExampleSet& set = which == Split::Train ? data.train : which == Split::Val ? data.val : data.test;
  if (set.size() == 0) throw EmptySetError("the " + split + " split is empty");
  Tensor truth({set.size(), kNumClasses}, 0.0);
  std::size_t i = 0;
  for (const auto& r : set.records())
    for (auto l : r.labels) truth[i++] = l;
  const double acc = evaluate_accuracy_logits(predict_set(params, set), truth);
  out << split_name(which) << " images: " << set.size() << "\n";
  out << "accuracy: " << render_percent(acc) << "\n";
  return kExitOk;
}

int cmd_bench(const GlobalOptions& g, std::ostream& out) {
  const RunConfig c = resolve_config(g);
  const auto reports = run_bench(c, g.out_dir);
  const auto md = read_file(fs::path(g.out_dir) / "tables.md");
  out.write(reinterpret_cast<const char*>(md.data()), static_cast<std::streamsize>(md.size()));
  out << "wrote tables.md, tables.csv and loss curves to " << g.out_dir << "\n";
  for (const auto& r : reports)
    if (r.error) return kExitRuntime;
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Micro residual-network trainer for multi-label chest X-ray classification", "gtb"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  std::uint64_t seed = 0;
  int workers = 1;
  auto* seed_opt = app.add_option("--seed", seed, "Random seed for init, splits and batch order");
  app.add_option("--config", g.config_path, "key=value configuration file")->check(CLI::ExistingFile);
  app.add_option("--out", g.out_dir, "Output directory")->capture_default_str();
  auto* workers_opt =
      app.add_option("--workers", workers, "Data-parallel workers")->check(CLI::Range(1, 1024));
  app.add_option("--data-dir", g.data_dir, "Directory with metadata.csv and images (default: synthetic corpus)");

  auto* preprocess = app.add_subcommand("preprocess", "Split by patient, copy images into split folders, time preprocessing");
  auto* inspect = app.add_subcommand("inspect", "Pixel statistics, histogram and exposure label of one image");
  std::string image_path;
  std::size_t bins = 16;
  inspect->add_option("image", image_path, "PGM/PPM image")->required();
  inspect->add_option("--bins", bins, "Histogram bins")->check(CLI::Range(1, 65536))->capture_default_str();
  auto* train = app.add_subcommand("train", "Train one strategy and save a checkpoint");
  std::string strategy;
  train->add_option("--strategy", strategy, "Strategy name (default: the config as written)");
  auto* bench = app.add_subcommand("bench", "Run the strategy matrix and write tables and loss curves");
  auto* eval = app.add_subcommand("eval", "Accuracy of a checkpoint on one split");
  std::string checkpoint, split = "test";
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--split", split, "train, val or test")->capture_default_str();
  auto* synth = app.add_subcommand("synth", "Write the synthetic corpus (PGM images + metadata.csv)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }
  if (*seed_opt) g.seed = seed;
  if (*workers_opt) g.workers = workers;

  try {
    if (*preprocess) return cmd_preprocess(g, out, err);
    if (*inspect) return cmd_inspect(image_path, bins, out);
    if (*train) return cmd_train(g, strategy, out);
    if (*bench) return cmd_bench(g, out);
    if (*eval) return cmd_eval(g, checkpoint, split, out);
    if (*synth) return cmd_synth(g, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace gtb
