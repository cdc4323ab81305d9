#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gtb/split.hpp"

namespace gtb {

/// Single-channel image, row-major, every pixel in [0,1].
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  /// Validates dimensions and pixel range.
  static GrayImage make(std::size_t width, std::size_t height, std::vector<double> pixels);
  bool operator==(const GrayImage&) const = default;
};

struct StandardizedImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;
  double source_mean = 0.0;
  double source_std = 0.0;
  bool operator==(const StandardizedImage&) const = default;
};

struct PixelStats {
  double mean = 0.0;
  double std = 0.0;  // population (N denominator)
};

PixelStats pixel_stats(std::span<const double> pixels);

/// Rec. 709 luma of interleaved RGB values in [0,1].
GrayImage to_grayscale(std::size_t width, std::size_t height, std::span<const double> rgb);

/// Binary PGM (P5) or PPM (P6); 16-bit samples are big-endian as in the PNM format.
GrayImage decode_image(std::span<const std::uint8_t> bytes);

/// Binary PGM (P5) with the given maxval (255 or 65535).
std::vector<std::uint8_t> encode_pgm(const GrayImage& img, int maxval = 255);

StandardizedImage standardize(const GrayImage& img);

/// Bilinear resample to side x side with half-pixel centers.
GrayImage resize_bilinear(const GrayImage& img, std::size_t side);

/// Bin k covers [k/bins, (k+1)/bins); the last bin also takes 1.0.
std::vector<std::size_t> intensity_histogram(const GrayImage& img, std::size_t bins = 256);

enum class Exposure { Overexposed, Underexposed, Padded, Correct };

struct ExposurePrototype {
  Exposure label;
  double mean;
  double std;
};

const std::array<ExposurePrototype, 4>& exposure_prototypes();
std::string_view exposure_name(Exposure e);

/// Nearest prototype in (mean, std); ties go to the earlier label.
Exposure classify_exposure(double mean, double std);

struct ManifestEntry {
  std::string image_id;
  Split split;
};

struct CopyFailure {
  std::string image_id;
  Split split;
  std::string message;
};

struct SplitReport {
  std::array<std::size_t, 3> counts{};
  std::vector<CopyFailure> failures;

  std::size_t count(Split s) const { return counts[static_cast<std::size_t>(s)]; }
  std::size_t failure_count(Split s) const;
  /// `split,count,failures` with one row per split.
  std::string to_csv() const;
  bool operator==(const SplitReport& o) const;
};

/// Copies each manifest image from source_dir into out_dir/<split>/<image_id>.
/// Missing files are recorded in the report and the remaining entries continue.
SplitReport organize_splits(const std::filesystem::path& source_dir, const std::filesystem::path& out_dir,
                            std::span<const ManifestEntry> manifest);

struct IndexedError {
  std::size_t index;
  std::string message;
};

struct PreprocessOutcome {
  std::vector<std::optional<StandardizedImage>> images;  // aligned with the input
  std::vector<IndexedError> errors;                      // ascending index

  std::size_t succeeded() const;
};

/// decode -> grayscale -> resize -> standardize for every input, spread over
/// `workers` threads. Output order and bits do not depend on the worker count.
PreprocessOutcome parallel_preprocess(std::span<const std::vector<std::uint8_t>> encoded, std::size_t side,
                                      std::size_t workers);

StandardizedImage preprocess_one(std::span<const std::uint8_t> encoded, std::size_t side);

}  // namespace gtb
