#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "gtb/bytes.hpp"
#include "gtb/error.hpp"
#include "gtb/imaging.hpp"
#include "support/oracles.hpp"

using namespace gtb;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& header, std::vector<std::uint8_t> payload) {
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

GrayImage random_image(std::size_t w, std::size_t h, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  std::vector<double> px(w * h);
  for (double& p : px) p = d(rng);
  return GrayImage::make(w, h, std::move(px));
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("gtb_imaging_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Decode, Pgm8Bit) {
  const GrayImage img = decode_image(bytes_of("P5\n2 2\n255\n", {0, 128, 255, 64}));
  ASSERT_EQ(img.width, 2u);
  EXPECT_EQ(img.pixels, (std::vector<double>{0.0, 128.0 / 255, 1.0, 64.0 / 255}));
}

TEST(Decode, Pgm16BitBigEndianAndComments) {
  const GrayImage img = decode_image(bytes_of("P5 # comment\n2 1\n# another\n65535\n", {0xff, 0xff, 0x80, 0x00}));
  EXPECT_EQ(img.pixels, (std::vector<double>{1.0, 32768.0 / 65535}));
}

TEST(Decode, PpmToLuma) {
  EXPECT_EQ(decode_image(bytes_of("P6\n1 1\n255\n", {255, 255, 255})).pixels[0], 1.0);
  EXPECT_NEAR(decode_image(bytes_of("P6\n1 1\n255\n", {255, 0, 0})).pixels[0], 0.2126, 1e-15);
  EXPECT_NEAR(decode_image(bytes_of("P6\n1 1\n255\n", {0, 255, 0})).pixels[0], 0.7152, 1e-15);
}

TEST(Decode, FormatErrorsWithOffsets) {
  try {
    decode_image(bytes_of("P2\n1 1\n255\n", {0}));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  try {
    decode_image(bytes_of("P5\n2 2\n255\n", {1, 2, 3}));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 14u);
  }
  EXPECT_THROW(decode_image(bytes_of("P5\n2 2\n0\n", {0, 0, 0, 0})), FormatError);
  EXPECT_THROW(decode_image(bytes_of("P5\n2 x\n255\n", {0, 0, 0, 0})), FormatError);
  EXPECT_THROW(decode_image(bytes_of("P5\n1 1\n100\n", {200})), FormatError);
}

TEST(Decode, EncodeRoundTripIsBitExact) {
  std::mt19937_64 rng(4);
  for (int maxval : {255, 65535}) {
    const GrayImage img = decode_image(encode_pgm(random_image(7, 5, rng), maxval));
    const auto bytes = encode_pgm(img, maxval);
    EXPECT_EQ(decode_image(bytes).pixels, img.pixels);
    EXPECT_EQ(encode_pgm(decode_image(bytes), maxval), bytes);
  }
}

TEST(GrayImageType, RejectsOutOfRangePixels) {
  EXPECT_THROW(GrayImage::make(1, 1, {1.5}), ContractError);
  EXPECT_THROW(GrayImage::make(2, 1, {0.5}), DimensionError);
}

TEST(Standardize, SymmetricTriple) {
  const auto s = standardize(GrayImage::make(3, 1, {0.0, 0.5, 1.0}));
  EXPECT_NEAR(s.pixels[0], -1.224744871391589, 1e-15);
  EXPECT_EQ(s.pixels[1], 0.0);
  EXPECT_NEAR(s.pixels[2], 1.224744871391589, 1e-15);
  EXPECT_EQ(s.source_mean, 0.5);
}

TEST(Standardize, DegenerateImagesRejected) {
  EXPECT_THROW(standardize(GrayImage::make(4, 4, std::vector<double>(16, 0.3))), DegenerateImageError);
  EXPECT_THROW(standardize(GrayImage::make(1, 1, {0.3})), DegenerateImageError);
}

TEST(Standardize, OutputMomentsAndAffineInvariance) {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 20; ++trial) {
    const GrayImage img = random_image(16, 16, rng);
    const auto s = standardize(img);
    const auto st = pixel_stats(s.pixels);
    EXPECT_LT(std::fabs(st.mean), 1e-12);
    EXPECT_LT(std::fabs(st.std - 1.0), 1e-12);

    std::vector<double> mapped = img.pixels;
    for (double& p : mapped) p = 0.1 + 0.6 * p;
    const auto t = standardize(GrayImage::make(16, 16, mapped));
    for (std::size_t i = 0; i < t.pixels.size(); ++i) EXPECT_NEAR(t.pixels[i], s.pixels[i], 1e-9);
  }
}

TEST(Resize, PinnedCases) {
  std::mt19937_64 rng(2);
  const GrayImage img = random_image(9, 9, rng);
  EXPECT_EQ(resize_bilinear(img, 9).pixels, img.pixels);
  EXPECT_EQ(resize_bilinear(GrayImage::make(2, 2, {0, 1, 1, 0}), 1).pixels, (std::vector<double>{0.5}));
}

TEST(Resize, MatchesReferenceAndStaysInRange) {
  std::mt19937_64 rng(8);
  for (auto [w, h, side] : {std::tuple{13, 7, 5}, std::tuple{4, 4, 11}, std::tuple{64, 48, 32}, std::tuple{1, 3, 4}}) {
    const GrayImage img = random_image(w, h, rng);
    const GrayImage out = resize_bilinear(img, side);
    const auto ref = oracle::resize(img.pixels, w, h, side);
    const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      EXPECT_NEAR(out.pixels[i], ref[i], 1e-12);
      EXPECT_GE(out.pixels[i], *lo);
      EXPECT_LE(out.pixels[i], *hi);
    }
  }
}

TEST(Histogram, BoundaryRules) {
  const auto zero = intensity_histogram(GrayImage::make(4, 4, std::vector<double>(16, 0.0)));
  EXPECT_EQ(zero.size(), 256u);
  EXPECT_EQ(zero[0], 16u);
  EXPECT_EQ(intensity_histogram(GrayImage::make(3, 1, {0.0, 0.5, 1.0}), 2), (std::vector<std::size_t>{1, 2}));
  std::mt19937_64 rng(1);
  const auto counts = intensity_histogram(random_image(31, 17, rng), 10);
  std::size_t total = 0;
  for (auto c : counts) total += c;
  EXPECT_EQ(total, 31u * 17u);
}

TEST(Exposure, PrototypesClassifyToThemselves) {
  EXPECT_EQ(classify_exposure(0.4149, 0.1402), Exposure::Overexposed);
  EXPECT_EQ(classify_exposure(0.6200, 0.1834), Exposure::Underexposed);
  EXPECT_EQ(classify_exposure(0.2428, 0.2885), Exposure::Padded);
  EXPECT_EQ(classify_exposure(0.4948, 0.2406), Exposure::Correct);
  for (const auto& p : exposure_prototypes()) EXPECT_EQ(classify_exposure(p.mean, p.std), p.label);
  EXPECT_EQ(exposure_prototypes().size(), 4u);
}

TEST(Exposure, NamesAndNearestRule) {
  EXPECT_EQ(exposure_name(Exposure::Overexposed), "overexposed");
  EXPECT_EQ(exposure_name(Exposure::Padded), "padded");
  EXPECT_EQ(classify_exposure(0.05, 0.35), Exposure::Padded);
  EXPECT_EQ(classify_exposure(0.9, 0.1), Exposure::Underexposed);
}

TEST(OrganizeSplits, CopiesAndReports) {
  const fs::path src = scratch_dir("src"), out = scratch_dir("out");
  for (const char* name : {"a.pgm", "b.pgm", "c.pgm"}) std::ofstream(src / name) << name;
  const std::vector<ManifestEntry> manifest{{"a.pgm", Split::Train}, {"b.pgm", Split::Val}, {"c.pgm", Split::Test}};
  const SplitReport first = organize_splits(src, out, manifest);
  for (Split s : kAllSplits) EXPECT_EQ(first.count(s), 1u);
  EXPECT_TRUE(fs::exists(src / "a.pgm"));
  EXPECT_TRUE(fs::exists(out / "val" / "b.pgm"));
  const SplitReport second = organize_splits(src, out, manifest);
  EXPECT_EQ(first, second);
  EXPECT_EQ(read_file(out / "test" / "c.pgm"), read_file(src / "c.pgm"));
  EXPECT_EQ(first.to_csv(), "split,count,failures\ntrain,1,0\nval,1,0\ntest,1,0\n");
}

TEST(OrganizeSplits, MissingFilesAndEmptyManifest) {
  const fs::path src = scratch_dir("src2"), out = scratch_dir("out2");
  std::ofstream(src / "a.pgm") << "x";
  const std::vector<ManifestEntry> manifest{{"a.pgm", Split::Train}, {"gone.pgm", Split::Test}};
  const SplitReport r = organize_splits(src, out, manifest);
  EXPECT_EQ(r.count(Split::Train), 1u);
  ASSERT_EQ(r.failures.size(), 1u);
  EXPECT_EQ(r.failures[0].image_id, "gone.pgm");
  EXPECT_EQ(r.failure_count(Split::Test), 1u);

  const fs::path empty_out = scratch_dir("out3");
  const SplitReport e = organize_splits(src, empty_out, {});
  EXPECT_EQ(e.failures.size(), 0u);
  for (Split s : kAllSplits) {
    EXPECT_EQ(e.count(s), 0u);
    EXPECT_TRUE(fs::is_empty(empty_out / std::string(split_name(s))));
  }
}

TEST(ParallelPreprocess, WorkerCountDoesNotChangeBits) {
  std::mt19937_64 rng(50);
  std::vector<std::vector<std::uint8_t>> encoded;
  for (int i = 0; i < 50; ++i) encoded.push_back(encode_pgm(random_image(40, 30, rng)));
  const auto one = parallel_preprocess(encoded, 16, 1);
  const auto four = parallel_preprocess(encoded, 16, 4);
  ASSERT_EQ(one.succeeded(), 50u);
  EXPECT_EQ(one.images, four.images);
  for (std::size_t i = 0; i < encoded.size(); ++i) EXPECT_EQ(*one.images[i], preprocess_one(encoded[i], 16));
}

TEST(ParallelPreprocess, CorruptImageIsIsolated) {
  std::mt19937_64 rng(3);
  std::vector<std::vector<std::uint8_t>> encoded;
  for (int i = 0; i < 10; ++i) encoded.push_back(encode_pgm(random_image(8, 8, rng)));
  encoded[6] = {'n', 'o', 'p', 'e'};
  const auto out = parallel_preprocess(encoded, 8, 4);
  EXPECT_EQ(out.succeeded(), 9u);
  ASSERT_EQ(out.errors.size(), 1u);
  EXPECT_EQ(out.errors[0].index, 6u);
  EXPECT_FALSE(out.images[6].has_value());
  EXPECT_THROW(parallel_preprocess(encoded, 8, 0), ContractError);
}
