#include "gtb/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "gtb/bytes.hpp"
#include "gtb/error.hpp"

namespace gtb {

const std::array<std::string_view, kNumClasses>& label_space() {
  static const std::array<std::string_view, kNumClasses> kNames{
      "Atelectasis", "Cardiomegaly", "Consolidation", "Edema",  "Effusion",           "Emphysema", "Fibrosis",
      "Hernia",      "Infiltration", "Mass",          "Nodule", "Pleural Thickening", "Pneumonia", "Pneumothorax"};
  return kNames;
}

std::optional<std::size_t> class_index(std::string_view name) {
  const auto& names = label_space();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  return std::nullopt;
}

namespace {

std::vector<std::string> split_fields(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

}  // namespace

std::vector<SampleRecord> parse_metadata(std::string_view csv) {
  std::vector<SampleRecord> records;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  bool header_done = false;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    std::size_t end = csv.find('\n', pos);
    if (end == std::string_view::npos) end = csv.size();
    const std::string_view line = trim_cr(csv.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (!header_done) {
      if (line != "image_id,patient_id,findings")
        throw ParseError("expected header 'image_id,patient_id,findings'", line_no);
      header_done = true;
      continue;
    }
    if (line.empty()) continue;
    const auto fields = split_fields(line, ',');
    if (fields.size() != 3) throw ParseError("expected 3 fields, got " + std::to_string(fields.size()), line_no);
    if (fields[0].empty() || fields[1].empty()) throw ParseError("image_id and patient_id must be non-empty", line_no);
    if (!seen.insert(fields[0]).second) throw ParseError("duplicate image_id '" + fields[0] + "'", line_no);

    SampleRecord r;
    r.image_id = fields[0];
    r.patient_id = fields[1];
    if (!fields[2].empty()) {
      for (const auto& name : split_fields(fields[2], '|')) {
        const auto idx = class_index(name);
        if (!idx) throw VocabularyError(name);
        r.labels[*idx] = 1;
      }
    }
    records.push_back(std::move(r));
  }
  if (!header_done) throw ParseError("empty metadata", 1);
  return records;
}

std::string format_metadata(std::span<const SampleRecord> records) {
  std::ostringstream os;
  os << "image_id,patient_id,findings\n";
  for (const auto& r : records) {
    os << r.image_id << ',' << r.patient_id << ',';
    bool first = true;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      if (!r.labels[k]) continue;
      os << (first ? "" : "|") << label_space()[k];
      first = false;
    }
    os << '\n';
  }
  return os.str();
}

std::vector<SampleRecord> split_by_patient(std::vector<SampleRecord> records, SplitFractions fractions,
                                           std::uint64_t seed) {
  const std::array<double, 3> f{fractions.train, fractions.val, fractions.test};
  for (double x : f)
    if (!(x >= 0.0)) throw ConfigError("split fractions must be non-negative");
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

  std::set<std::string> unique;
  for (const auto& r : records) unique.insert(r.patient_id);
  std::vector<std::string> patients(unique.begin(), unique.end());
  const std::size_t P = patients.size();
  const auto nonzero = static_cast<std::size_t>(std::count_if(f.begin(), f.end(), [](double x) { return x > 0.0; }));
  if (P < nonzero)
    throw ConfigError(std::to_string(P) + " patients cannot fill " + std::to_string(nonzero) + " non-empty splits");

  // Largest remainder, ties to the earlier split.
  std::array<std::size_t, 3> n{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const double exact = f[s] * static_cast<double>(P);
    n[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[s] = exact - static_cast<double>(n[s]);
    assigned += n[s];
  }
  while (assigned < P) {
    std::size_t best = 0;
    for (std::size_t s = 1; s < 3; ++s)
      if (rem[s] > rem[best]) best = s;
    ++n[best];
    rem[best] = -1.0;
    ++assigned;
  }
  while (assigned > P) {  // only reachable through the epsilon above
    const auto big = static_cast<std::size_t>(std::max_element(n.begin(), n.end()) - n.begin());
    --n[big];
    --assigned;
  }
  for (std::size_t s = 0; s < 3; ++s) {
    if (f[s] > 0.0 && n[s] == 0) {
      const auto big = static_cast<std::size_t>(std::max_element(n.begin(), n.end()) - n.begin());
      --n[big];
      ++n[s];
    }
  }

  std::mt19937_64 rng(seed);
  std::shuffle(patients.begin(), patients.end(), rng);
  std::map<std::string, Split> assignment;
  std::size_t i = 0;
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t k = 0; k < n[s]; ++k) assignment[patients[i++]] = kAllSplits[s];
  for (auto& r : records) r.split = assignment.at(r.patient_id);
  return records;
}

std::vector<SampleRecord> records_in(std::span<const SampleRecord> records, Split split) {
  std::vector<SampleRecord> out;
  for (const auto& r : records)
    if (r.split == split) out.push_back(r);
  return out;
}

std::vector<std::vector<std::string>> make_batches(std::span<const SampleRecord> records, std::size_t batch_size,
                                                   std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size == 0) throw ContractError("make_batches: batch_size must be at least 1");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::string>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    std::vector<std::string> ids;
    for (std::size_t k = i; k < std::min(order.size(), i + batch_size); ++k) ids.push_back(records[order[k]].image_id);
    batches.push_back(std::move(ids));
  }
  return batches;
}

void ExampleSet::add(const SampleRecord& record, const StandardizedImage& image) {
  if (image.width != side_ || image.height != side_)
    throw DimensionError("example '" + record.image_id + "' is " + std::to_string(image.width) + "x" +
                         std::to_string(image.height) + ", expected side " + std::to_string(side_));
  if (!index_.emplace(record.image_id, records_.size()).second)
    throw ContractError("duplicate example id '" + record.image_id + "'");
  records_.push_back(record);
  pixels_.push_back(image.pixels);
}

Batch assemble_batch(const ExampleSet& set, std::span<const std::string> ids) {
  if (ids.empty()) throw ContractError("assemble_batch: empty batch");
  const std::size_t B = ids.size(), S = set.side();
  Batch batch{Tensor({B, 1, S, S}), Tensor({B, kNumClasses}), {ids.begin(), ids.end()}};
  for (std::size_t b = 0; b < B; ++b) {
    const auto px = set.pixels(ids[b]);
    std::copy(px.begin(), px.end(), batch.images.data().begin() + static_cast<std::ptrdiff_t>(b * S * S));
    const auto& labels = set.record(ids[b]).labels;
    for (std::size_t k = 0; k < kNumClasses; ++k) batch.labels[b * kNumClasses + k] = labels[k];
  }
  return batch;
}

SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& opt) {
  if (opt.samples == 0 || opt.native_side < 4) throw ConfigError("synthetic corpus: need samples and side >= 4");
  const std::size_t patients = opt.patients ? opt.patients : std::max<std::size_t>(1, opt.samples / 2);
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.03);

  constexpr double kPi = 3.14159265358979323846;
  const std::size_t S = opt.native_side;
  SyntheticCorpus corpus;
  for (std::size_t i = 0; i < opt.samples; ++i) {
    SampleRecord r;
    r.image_id = "img" + std::to_string(i) + ".pgm";
    r.patient_id = "p" + std::to_string(i % patients);
    for (auto& l : r.labels) l = unit(rng) < opt.positive_rate ? 1 : 0;

    const double brightness = 0.35 + 0.2 * unit(rng);
    std::vector<double> px(S * S);
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x) {
        const double u = static_cast<double>(x) / static_cast<double>(S);
        const double v = static_cast<double>(y) / static_cast<double>(S);
        double val = brightness + 0.1 * (v - 0.5);
        for (std::size_t k = 0; k < kNumClasses; ++k) {
          if (!r.labels[k]) continue;
          const double angle = kPi * static_cast<double>(k % 7) / 7.0;
          const double freq = (k < 7) ? 3.0 : 7.0;
          val += 0.08 * std::sin(2.0 * kPi * freq * (u * std::cos(angle) + v * std::sin(angle)));
        }
        px[y * S + x] = std::clamp(val + noise(rng), 0.0, 1.0);
      }
    corpus.records.push_back(std::move(r));
    corpus.images.push_back(GrayImage::make(S, S, std::move(px)));
  }
  return corpus;
}

void write_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < corpus.records.size(); ++i)
    write_file_atomic(dir / corpus.records[i].image_id, encode_pgm(corpus.images[i]));
  write_file_atomic(dir / "metadata.csv", format_metadata(corpus.records));
}

}  // namespace gtb
