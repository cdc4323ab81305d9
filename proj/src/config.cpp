#include "gtb/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <set>

#include "gtb/bytes.hpp"
#include "gtb/error.hpp"

namespace gtb {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    throw ConfigError("invalid value '" + std::string(v) + "' for " + std::string(key));
  return out;
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    const auto item = trim(v.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using Setter = std::function<void(RunConfig&, std::string_view key, std::string_view value)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"batch_size", [](RunConfig& c, auto k, auto v) { c.train.batch_size = parse_number<std::size_t>(k, v); }},
      {"lr0", [](RunConfig& c, auto k, auto v) { c.train.lr0 = parse_number<double>(k, v); }},
      {"epochs", [](RunConfig& c, auto k, auto v) { c.train.epochs = parse_number<int>(k, v); }},
      {"precision",
       [](RunConfig& c, auto k, auto v) {
         if (v == "full") c.train.precision = Precision::Full;
         else if (v == "mixed") c.train.precision = Precision::Mixed;
         else throw ConfigError(std::string(k) + " must be full or mixed");
       }},
      {"scheduler",
       [](RunConfig& c, auto k, auto v) {
         if (v == "none") c.train.scheduler.kind = SchedulerConfig::Kind::None;
         else if (v == "step") c.train.scheduler.kind = SchedulerConfig::Kind::Step;
         else throw ConfigError(std::string(k) + " must be none or step");
       }},
      {"step_size", [](RunConfig& c, auto k, auto v) { c.train.scheduler.step_size = parse_number<int>(k, v); }},
      {"gamma", [](RunConfig& c, auto k, auto v) { c.train.scheduler.gamma = parse_number<double>(k, v); }},
      {"workers", [](RunConfig& c, auto k, auto v) { c.train.workers = parse_number<int>(k, v); }},
      {"seed", [](RunConfig& c, auto k, auto v) { c.train.seed = parse_number<std::uint64_t>(k, v); }},
      {"loss_scale", [](RunConfig& c, auto k, auto v) { c.train.loss_scale = parse_number<double>(k, v); }},
      {"growth_interval", [](RunConfig& c, auto k, auto v) { c.train.growth_interval = parse_number<int>(k, v); }},
      {"transport",
       [](RunConfig& c, auto k, auto v) {
         if (v == "thread") c.train.transport = Transport::Thread;
         else if (v == "process") c.train.transport = Transport::Process;
         else throw ConfigError(std::string(k) + " must be thread or process");
       }},
      {"sync_timeout", [](RunConfig& c, auto k, auto v) { c.train.sync_timeout_seconds = parse_number<double>(k, v); }},
      {"in_channels", [](RunConfig& c, auto k, auto v) { c.model.in_channels = parse_number<int>(k, v); }},
      {"input_side", [](RunConfig& c, auto k, auto v) { c.model.input_side = parse_number<int>(k, v); }},
      {"stem_filters", [](RunConfig& c, auto k, auto v) { c.model.stem_filters = parse_number<int>(k, v); }},
      {"blocks", [](RunConfig& c, auto, auto v) { c.model.blocks = parse_blocks(v); }},
      {"head_hidden", [](RunConfig& c, auto k, auto v) { c.model.head_hidden = parse_number<int>(k, v); }},
      {"data_dir",
       [](RunConfig& c, auto, auto v) {
         if (v.empty()) c.data_dir.reset();
         else c.data_dir = std::filesystem::path(std::string(v));
       }},
      {"metadata", [](RunConfig& c, auto, auto v) { c.metadata = std::string(v); }},
      {"synthetic_samples",
       [](RunConfig& c, auto k, auto v) { c.synthetic.samples = parse_number<std::size_t>(k, v); }},
      {"synthetic_patients",
       [](RunConfig& c, auto k, auto v) { c.synthetic.patients = parse_number<std::size_t>(k, v); }},
      {"synthetic_side",
       [](RunConfig& c, auto k, auto v) { c.synthetic.native_side = parse_number<std::size_t>(k, v); }},
      {"synthetic_positive_rate",
       [](RunConfig& c, auto k, auto v) { c.synthetic.positive_rate = parse_number<double>(k, v); }},
      {"synthetic_seed", [](RunConfig& c, auto k, auto v) { c.synthetic.seed = parse_number<std::uint64_t>(k, v); }},
      {"train_fraction", [](RunConfig& c, auto k, auto v) { c.fractions.train = parse_number<double>(k, v); }},
      {"val_fraction", [](RunConfig& c, auto k, auto v) { c.fractions.val = parse_number<double>(k, v); }},
      {"test_fraction", [](RunConfig& c, auto k, auto v) { c.fractions.test = parse_number<double>(k, v); }},
      {"preprocess_workers",
       [](RunConfig& c, auto k, auto v) { c.preprocess_workers = parse_number<std::size_t>(k, v); }},
      {"parallel_workers", [](RunConfig& c, auto k, auto v) { c.parallel_workers = parse_number<int>(k, v); }},
      {"strategies", [](RunConfig& c, auto, auto v) { c.strategies = split_list(v); }},
  };
  return table;
}

}  // namespace

std::vector<BlockSpec> parse_blocks(std::string_view text) {
  std::vector<BlockSpec> out;
  for (const auto& item : split_list(text)) {
    const auto x = item.find('x');
    if (x == std::string::npos) throw ConfigError("block '" + item + "' must look like <filters>x<stride>");
    std::string_view s(item);
    out.push_back({parse_number<int>("blocks", s.substr(0, x)), parse_number<int>("blocks", s.substr(x + 1))});
  }
  if (out.empty()) throw ConfigError("blocks must list at least one block");
  return out;
}

std::string format_blocks(const std::vector<BlockSpec>& blocks) {
  std::string out;
  for (const auto& b : blocks) out += (out.empty() ? "" : ",") + std::to_string(b.filters) + "x" + std::to_string(b.stride);
  return out;
}

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end())
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
    if (!seen.emplace(key).second)
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + std::string(key) + "'");
    try {
      it->second(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  config.train.validate();
  config.model.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string format_config(const RunConfig& c) {
  std::string out;
  auto put = [&](std::string_view k, const std::string& v) { out += std::string(k) + " = " + v + "\n"; };
  put("batch_size", std::to_string(c.train.batch_size));
  put("lr0", fmt_double(c.train.lr0));
  put("epochs", std::to_string(c.train.epochs));
  put("precision", c.train.precision == Precision::Mixed ? "mixed" : "full");
  put("scheduler", c.train.scheduler.kind == SchedulerConfig::Kind::Step ? "step" : "none");
  put("step_size", std::to_string(c.train.scheduler.step_size));
  put("gamma", fmt_double(c.train.scheduler.gamma));
  put("workers", std::to_string(c.train.workers));
  put("seed", std::to_string(c.train.seed));
  put("loss_scale", fmt_double(c.train.loss_scale));
  put("growth_interval", std::to_string(c.train.growth_interval));
  put("transport", c.train.transport == Transport::Process ? "process" : "thread");
  put("sync_timeout", fmt_double(c.train.sync_timeout_seconds));
  put("in_channels", std::to_string(c.model.in_channels));
  put("input_side", std::to_string(c.model.input_side));
  put("stem_filters", std::to_string(c.model.stem_filters));
  put("blocks", format_blocks(c.model.blocks));
  put("head_hidden", std::to_string(c.model.head_hidden));
  put("data_dir", c.data_dir ? c.data_dir->string() : "");
  put("metadata", c.metadata);
  put("synthetic_samples", std::to_string(c.synthetic.samples));
  put("synthetic_patients", std::to_string(c.synthetic.patients));
  put("synthetic_side", std::to_string(c.synthetic.native_side));
  put("synthetic_positive_rate", fmt_double(c.synthetic.positive_rate));
  put("synthetic_seed", std::to_string(c.synthetic.seed));
  put("train_fraction", fmt_double(c.fractions.train));
  put("val_fraction", fmt_double(c.fractions.val));
  put("test_fraction", fmt_double(c.fractions.test));
  put("preprocess_workers", std::to_string(c.preprocess_workers));
  put("parallel_workers", std::to_string(c.parallel_workers));
  std::string strategies;
  for (const auto& s : c.strategies) strategies += (strategies.empty() ? "" : ",") + s;
  put("strategies", strategies);
  return out;
}

}  // namespace gtb
