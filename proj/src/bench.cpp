#include "gtb/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "gtb/autograd.hpp"
#include "gtb/bytes.hpp"
#include "gtb/error.hpp"
#include "gtb/imaging.hpp"

namespace gtb {

namespace {

void check_accuracy_inputs(const Tensor& scores, const Tensor& truth) {
  if (scores.rank() != 2 || scores.dim(1) != kNumClasses)
    throw DimensionError("accuracy expects [N,14] predictions, got " + shape_str(scores.shape()));
  require_same_shape(scores, truth, "evaluate_accuracy");
  for (double t : truth.data())
    if (t != 0.0 && t != 1.0) throw ContractError("evaluate_accuracy: truth must be 0 or 1");
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

double evaluate_accuracy(const Tensor& probabilities, const Tensor& truth, double threshold) {
  check_accuracy_inputs(probabilities, truth);
  std::size_t correct = 0;
  const auto p = probabilities.data();
  const auto t = truth.data();
  for (std::size_t i = 0; i < p.size(); ++i) correct += ((p[i] > threshold) == (t[i] == 1.0));
  return static_cast<double>(correct) / static_cast<double>(p.size());
}

double evaluate_accuracy_logits(const Tensor& logits, const Tensor& truth, double threshold) {
  check_accuracy_inputs(logits, truth);
  Tensor probs = logits;
  for (double& v : probs.values()) v = stable_sigmoid(v);
  return evaluate_accuracy(probs, truth, threshold);
}

Tensor predict_set(ParamSet& params, const ExampleSet& set, std::size_t chunk) {
  if (set.size() == 0) throw EmptySetError("cannot predict on an empty set");
  const Mode saved = params.mode;
  params.mode = Mode::Eval;
  std::vector<double> out;
  out.reserve(set.size() * kNumClasses);
  std::vector<std::string> ids;
  for (const auto& r : set.records()) ids.push_back(r.image_id);
  for (std::size_t i = 0; i < ids.size(); i += chunk) {
    const auto n = std::min(chunk, ids.size() - i);
    const Batch b = assemble_batch(set, std::span(ids).subspan(i, n));
    const Tensor logits = predict_logits(params, b.images);
    out.insert(out.end(), logits.data().begin(), logits.data().end());
  }
  params.mode = saved;
  return Tensor({set.size(), kNumClasses}, std::move(out));
}

namespace {

Tensor truth_of(const ExampleSet& set) {
  std::vector<double> t;
  t.reserve(set.size() * kNumClasses);
  for (const auto& r : set.records())
    for (auto l : r.labels) t.push_back(l);
  return Tensor({set.size(), kNumClasses}, std::move(t));
}

}  // namespace

std::vector<std::string> default_strategies() {
  return {"baseline", "parallel", "parallel+mixed+sched", "bignet+parallel+mixed+sched"};
}

Strategy resolve_strategy(const std::string& name, const RunConfig& base) {
  Strategy s;
  s.name = name;
  s.model_name = "micro-resnet";
  s.train = base.train;
  s.model = base.model;
  s.train.workers = 1;
  s.train.precision = Precision::Full;
  s.train.scheduler.kind = SchedulerConfig::Kind::None;

  const int K = std::max(2, base.parallel_workers);
  auto accelerate = [&] {
    s.train.workers = K;
    s.train.precision = Precision::Mixed;
    s.train.scheduler.kind = SchedulerConfig::Kind::Step;
  };
  if (name == "baseline") {
    s.description = "single worker, full precision, constant learning rate";
  } else if (name == "parallel") {
    s.train.workers = K;
    s.description = std::to_string(K) + " data-parallel workers";
  } else if (name == "parallel+mixed+sched") {
    accelerate();
    s.description = std::to_string(K) + " workers, binary16 mixed precision, step learning-rate schedule";
  } else if (name == "bignet+parallel+mixed+sched") {
    accelerate();
    const MicroResNetConfig deep = MicroResNetConfig::deeper();
    s.model.blocks = deep.blocks;
    s.model.head_hidden = deep.head_hidden;
    s.model_name = "micro-resnet-deep";
    s.description = "deeper network, " + std::to_string(K) + " workers, mixed precision, step schedule";
  } else {
    std::string known;
    for (const auto& d : default_strategies()) known += (known.empty() ? "" : ", ") + d;
    throw ConfigError("unknown strategy '" + name + "' (known: " + known + ")");
  }
  s.model.validate();
  return s;
}

PreparedData prepare_data(const RunConfig& config, const std::vector<std::size_t>& timing_workers) {
  std::vector<SampleRecord> records;
  std::vector<std::vector<std::uint8_t>> encoded;
  if (config.data_dir) {
    const auto meta = read_file(*config.data_dir / config.metadata);
    records = parse_metadata(std::string_view(reinterpret_cast<const char*>(meta.data()), meta.size()));
    for (const auto& r : records) {
      try {
        encoded.push_back(read_file(*config.data_dir / r.image_id));
      } catch (const IoError&) {
        encoded.emplace_back();  // fails preprocessing and is reported as skipped
      }
    }
  } else {
    const SyntheticCorpus corpus = make_synthetic_corpus(config.synthetic);
    records = corpus.records;
    for (const auto& img : corpus.images) encoded.push_back(encode_pgm(img));
  }
  records = split_by_patient(std::move(records), config.fractions, config.train.seed);

  const auto side = static_cast<std::size_t>(config.model.input_side);
  PreparedData data{ExampleSet(side), ExampleSet(side), ExampleSet(side), {}, {}};
  std::vector<std::size_t> runs = timing_workers;
  if (runs.empty()) runs.push_back(std::max<std::size_t>(1, config.preprocess_workers));
  PreprocessOutcome outcome;
  for (std::size_t w : runs) {
    const TimeMark start = mark_time();
    outcome = parallel_preprocess(encoded, side, w);
    data.timings.push_back({w, timed_execution(start, mark_time())});
  }
  for (const auto& e : outcome.errors) data.skipped.push_back(records[e.index].image_id + ": " + e.message);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!outcome.images[i]) continue;
    ExampleSet& target = records[i].split == Split::Train ? data.train
                         : records[i].split == Split::Val ? data.val
                                                          : data.test;
    target.add(records[i], *outcome.images[i]);
  }
  return data;
}

std::vector<StrategyReport> run_strategy_matrix(const PreparedData& data, const RunConfig& base,
                                                const std::vector<std::string>& strategies) {
  std::vector<StrategyReport> reports;
  for (const auto& name : strategies) {
    StrategyReport report;
    report.strategy = name;
    try {
      const Strategy s = resolve_strategy(name, base);
      report.model_name = s.model_name;
      report.description = s.description;
      ParamSet params = init_params(s.model, s.train.seed);
      const TimeMark start = mark_time();
      TrainResult run = train_run(s.train, params, data.train);
      report.total_seconds = timed_execution(start, mark_time());
      report.total_minutes = report.total_seconds / 60.0;
      report.stats = run.stats;
      for (const auto& st : run.stats) report.losses.push_back(st.mean_loss);
      if (run.error) throw Error(*run.error);
      report.test_accuracy = evaluate_accuracy_logits(predict_set(params, data.test), truth_of(data.test));
    } catch (const std::exception& e) {
      report.error = e.what();
    }
    reports.push_back(std::move(report));
  }
  return reports;
}

std::string render_percent(double fraction) { return format_fixed2(fraction * 100.0) + "%"; }

Tables emit_tables(const std::vector<StrategyReport>& reports, const std::vector<PreprocessTiming>& timings) {
  Tables t;
  std::string& md = t.markdown;
  md += "## Test accuracy\n\n| Model | Training strategy | Test accuracy |\n|---|---|---|\n";
  for (const auto& r : reports)
    md += "| " + r.model_name + " | " + r.strategy + " | " + (r.test_accuracy ? render_percent(*r.test_accuracy) : "n/a") +
          " |\n";
  md += "\n## Execution time\n\n| Model | Training strategy | Execution time | Epochs | Final loss |\n|---|---|---|---|---|\n";
  for (const auto& r : reports) {
    const bool ran = !r.losses.empty();
    md += "| " + r.model_name + " | " + r.strategy + " | " + (ran ? render_minutes(r.total_seconds) : "n/a") + " | " +
          std::to_string(r.losses.size()) + " | " + (ran ? fmt("%.6f", r.losses.back()) : "n/a") + " |\n";
  }
  if (!timings.empty()) {
    md += "\n## Preprocessing wall time\n\n| Workers | Seconds |\n|---|---|\n";
    for (const auto& p : timings) md += "| " + std::to_string(p.workers) + " | " + fmt("%.4f", p.seconds) + " |\n";
  }
  bool any_error = false;
  for (const auto& r : reports) any_error |= r.error.has_value();
  if (any_error) {
    md += "\n## Errors\n\n";
    for (const auto& r : reports)
      if (r.error) md += "- " + r.strategy + ": " + *r.error + "\n";
  }
  md +=
      "\nRow mapping: `baseline` stands for both the unaccelerated and the GPU-accelerated reference rows, "
      "which differ only in hardware (GPU execution is not modeled here). `parallel` is the message-passing row, "
      "`parallel+mixed+sched` adds binary16 mixed precision and the step schedule, and "
      "`bignet+parallel+mixed+sched` swaps in the deeper network.\n";

  std::string& csv = t.csv;
  csv += "strategy,model,test_accuracy_percent,total_minutes,epochs,final_loss,error\n";
  for (const auto& r : reports) {
    const bool ran = !r.losses.empty();
    std::string err = r.error.value_or("");
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    csv += r.strategy + "," + r.model_name + "," + (r.test_accuracy ? format_fixed2(*r.test_accuracy * 100.0) : "n/a") +
           "," + (ran ? format_fixed2(r.total_minutes) : "n/a") + "," + std::to_string(r.losses.size()) + "," +
           (ran ? fmt("%.6f", r.losses.back()) : "n/a") + "," + err + "\n";
  }
  for (const auto& p : timings)
    csv += "preprocess_workers_" + std::to_string(p.workers) + ",,,,,," + fmt("%.4f", p.seconds) + "\n";
  return t;
}

std::vector<CsvRow> parse_tables_csv(std::string_view csv) {
  std::vector<CsvRow> rows;
  std::istringstream in{std::string(csv)};
  std::string line;
  std::getline(in, line);  // header
  auto num = [](const std::string& s) -> std::optional<double> {
    if (s.empty() || s == "n/a") return std::nullopt;
    return std::stod(s);
  };
  while (std::getline(in, line)) {
    if (line.rfind("preprocess_workers_", 0) == 0 || line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    while (f.size() < 7) f.emplace_back();
    rows.push_back({f[0], f[1], num(f[2]), num(f[3]), num(f[5]), f[6]});
  }
  return rows;
}

std::string loss_curve_csv(const std::vector<EpochStats>& stats) {
  std::string out = "epoch,mean_loss\n";
  for (const auto& s : stats) out += std::to_string(s.epoch) + "," + fmt("%.17g", s.mean_loss) + "\n";
  return out;
}

std::string loss_curve_svg(const std::vector<EpochStats>& stats, const std::string& title) {
  if (stats.empty()) throw ContractError("loss curve needs at least one epoch");
  constexpr double W = 640, H = 400, L = 60, R = 20, T = 40, B = 50;
  double lo = stats.front().mean_loss, hi = lo;
  for (const auto& s : stats) {
    lo = std::min(lo, s.mean_loss);
    hi = std::max(hi, s.mean_loss);
  }
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double first = stats.front().epoch, last = stats.back().epoch;
  const double span = last > first ? last - first : 1.0;
  auto x = [&](double e) { return L + (e - first) / span * (W - L - R); };
  auto y = [&](double v) { return T + (hi - v) / (hi - lo) * (H - T - B); };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
  svg += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  svg += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" + title +
         "</text>\n";
  svg += "<line x1=\"60\" y1=\"350\" x2=\"620\" y2=\"350\" stroke=\"black\"/>\n";
  svg += "<line x1=\"60\" y1=\"40\" x2=\"60\" y2=\"350\" stroke=\"black\"/>\n";
  svg += "<text x=\"340\" y=\"385\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">epoch</text>\n";
  svg += "<text x=\"16\" y=\"195\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
         "transform=\"rotate(-90 16 195)\">mean loss</text>\n";
  svg += "<text x=\"55\" y=\"44\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + fmt("%.4g", hi) +
         "</text>\n";
  svg += "<text x=\"55\" y=\"350\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + fmt("%.4g", lo) +
         "</text>\n";
  svg += "<text x=\"60\" y=\"365\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" +
         std::to_string(stats.front().epoch) + "</text>\n";
  svg += "<text x=\"620\" y=\"365\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" +
         std::to_string(stats.back().epoch) + "</text>\n";
  std::string points;
  for (const auto& s : stats)
    points += (points.empty() ? "" : " ") + fmt("%.2f", x(s.epoch)) + "," + fmt("%.2f", y(s.mean_loss));
  svg += "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"" + points + "\"/>\n";
  for (const auto& s : stats)
    svg += "<circle cx=\"" + fmt("%.2f", x(s.epoch)) + "\" cy=\"" + fmt("%.2f", y(s.mean_loss)) +
           "\" r=\"2.5\" fill=\"#1f77b4\"/>\n";
  svg += "</svg>\n";
  return svg;
}

void emit_loss_curve(const std::vector<EpochStats>& stats, const std::filesystem::path& csv_path,
                     const std::optional<std::filesystem::path>& svg_path) {
  if (stats.empty()) throw ContractError("loss curve needs at least one epoch");
  write_file_atomic(csv_path, loss_curve_csv(stats));
  if (svg_path) write_file_atomic(*svg_path, loss_curve_svg(stats, "Training loss"));
}

std::vector<StrategyReport> run_bench(const RunConfig& config, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string());
  const PreparedData data = prepare_data(config);
  const auto strategies = config.strategies.empty() ? default_strategies() : config.strategies;
  auto reports = run_strategy_matrix(data, config, strategies);
  const Tables tables = emit_tables(reports, data.timings);
  write_file_atomic(out_dir / "tables.md", tables.markdown);
  write_file_atomic(out_dir / "tables.csv", tables.csv);
  for (const auto& r : reports) {
    if (r.stats.empty()) continue;
    write_file_atomic(out_dir / ("loss_" + r.strategy + ".csv"), loss_curve_csv(r.stats));
    write_file_atomic(out_dir / ("loss_" + r.strategy + ".svg"), loss_curve_svg(r.stats, "Training loss: " + r.strategy));
  }
  return reports;
}

}  // namespace gtb
