#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gtb/error.hpp"
#include "gtb/imaging.hpp"
#include "gtb/split.hpp"
#include "gtb/tensor.hpp"

namespace gtb {

inline constexpr std::size_t kNumClasses = 14;

/// Class names in label-vector order.
const std::array<std::string_view, kNumClasses>& label_space();
std::optional<std::size_t> class_index(std::string_view name);

using LabelVector = std::array<std::uint8_t, kNumClasses>;

struct SampleRecord {
  std::string image_id;
  std::string patient_id;
  LabelVector labels{};
  Split split = Split::Train;
  bool operator==(const SampleRecord&) const = default;
};

/// CSV with header `image_id,patient_id,findings`; findings are `|`-separated
/// class names, empty for no finding. LF or CRLF line endings.
std::vector<SampleRecord> parse_metadata(std::string_view csv);
std::string format_metadata(std::span<const SampleRecord> records);

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
  bool operator==(const SplitFractions&) const = default;
};

/// Assigns whole patients to splits. Patient counts per split follow the
/// largest-remainder rounding of fractions * patients, with every split of
/// nonzero fraction receiving at least one patient.
std::vector<SampleRecord> split_by_patient(std::vector<SampleRecord> records, SplitFractions fractions,
                                           std::uint64_t seed);

std::vector<SampleRecord> records_in(std::span<const SampleRecord> records, Split split);

/// Seeded shuffle keyed by (seed, epoch), chunked into batches of image ids.
std::vector<std::vector<std::string>> make_batches(std::span<const SampleRecord> records, std::size_t batch_size,
                                                   std::uint64_t seed, std::uint64_t epoch);

/// Round-robin shard: worker w receives items w, w + K, w + 2K, ...
template <typename T>
std::vector<T> shard(std::span<const T> items, std::size_t worker, std::size_t num_workers) {
  if (num_workers == 0 || worker >= num_workers) throw ContractError("shard: worker index out of range");
  std::vector<T> out;
  out.reserve(items.size() / num_workers + 1);
  for (std::size_t i = worker; i < items.size(); i += num_workers) out.push_back(items[i]);
  return out;
}

/// Preprocessed images and labels, addressable by image id.
class ExampleSet {
 public:
  explicit ExampleSet(std::size_t side = 0) : side_(side) {}

  void add(const SampleRecord& record, const StandardizedImage& image);
  std::size_t side() const noexcept { return side_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  const SampleRecord& record(const std::string& id) const { return records_.at(index_.at(id)); }
  const std::vector<SampleRecord>& records() const noexcept { return records_; }
  std::span<const double> pixels(const std::string& id) const { return pixels_.at(index_.at(id)); }

 private:
  std::size_t side_;
  std::vector<SampleRecord> records_;
  std::vector<std::vector<double>> pixels_;
  std::map<std::string, std::size_t> index_;
};

struct Batch {
  Tensor images;  // [B,1,S,S]
  Tensor labels;  // [B,14]
  std::vector<std::string> ids;
};

Batch assemble_batch(const ExampleSet& set, std::span<const std::string> ids);

// Synthetic stand-in corpus: each class contributes its own oriented grating,
// so labels are recoverable from texture.
struct SyntheticOptions {
  std::size_t samples = 96;
  std::size_t patients = 0;  // 0: samples / 2
  std::size_t native_side = 64;
  double positive_rate = 0.2;
  std::uint64_t seed = 7;
  bool operator==(const SyntheticOptions&) const = default;
};

struct SyntheticCorpus {
  std::vector<SampleRecord> records;
  std::vector<GrayImage> images;  // aligned with records
};

SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& options);

/// Writes `<dir>/<image_id>` PGM files and `<dir>/metadata.csv`.
void write_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus);

}  // namespace gtb
