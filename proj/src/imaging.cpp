#include "gtb/imaging.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

#include "gtb/bytes.hpp"
#include "gtb/error.hpp"

namespace gtb {

GrayImage GrayImage::make(std::size_t width, std::size_t height, std::vector<double> pixels) {
  if (width == 0 || height == 0) throw ContractError("image dimensions must be positive");
  if (pixels.size() != width * height)
    throw DimensionError("image " + std::to_string(width) + "x" + std::to_string(height) + " needs " +
                         std::to_string(width * height) + " pixels, got " + std::to_string(pixels.size()));
  for (double p : pixels)
    if (!(p >= 0.0 && p <= 1.0)) throw ContractError("pixel value outside [0,1]");
  return GrayImage{width, height, std::move(pixels)};
}

PixelStats pixel_stats(std::span<const double> pixels) {
  PixelStats s;
  if (pixels.empty()) return s;
  double acc = 0.0;
  for (double p : pixels) acc += p;
  s.mean = acc / static_cast<double>(pixels.size());
  double sq = 0.0;
  for (double p : pixels) sq += (p - s.mean) * (p - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(pixels.size()));
  return s;
}

GrayImage to_grayscale(std::size_t width, std::size_t height, std::span<const double> rgb) {
  if (rgb.size() != 3 * width * height) throw DimensionError("to_grayscale: RGB buffer size mismatch");
  std::vector<double> out(width * height);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::clamp(0.2126 * rgb[3 * i] + 0.7152 * rgb[3 * i + 1] + 0.0722 * rgb[3 * i + 2], 0.0, 1.0);
  return GrayImage::make(width, height, std::move(out));
}

namespace {

class PnmHeaderReader {
 public:
  explicit PnmHeaderReader(std::span<const std::uint8_t> b) : b_(b) {}

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < b_.size() && b_[pos_] >= '0' && b_[pos_] <= '9') {
      v = v * 10 + (b_[pos_] - '0');
      if (v > 1'000'000'000) throw FormatError(std::string("PNM: ") + what + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw FormatError(std::string("PNM: expected ") + what, pos_);
    return v;
  }

  void single_whitespace() {
    if (pos_ >= b_.size() || !is_space(b_[pos_])) throw FormatError("PNM: expected whitespace after header", pos_);
    ++pos_;
  }

  std::size_t pos() const { return pos_; }

 private:
  static bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }
  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (is_space(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 2;
};

}  // namespace

GrayImage decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw FormatError("unsupported image: expected binary PGM (P5) or PPM (P6) magic", 0);
  const bool color = bytes[1] == '6';
  PnmHeaderReader hdr(bytes);
  const std::size_t width = hdr.number("width");
  const std::size_t height = hdr.number("height");
  const std::size_t maxval_pos = hdr.pos();
  const std::size_t maxval = hdr.number("maxval");
  if (width == 0 || height == 0) throw FormatError("PNM: zero image dimension", maxval_pos);
  if (maxval == 0 || maxval > 65535) throw FormatError("PNM: maxval must be in 1..65535", maxval_pos);
  hdr.single_whitespace();

  const std::size_t channels = color ? 3 : 1;
  const std::size_t sample_bytes = maxval > 255 ? 2 : 1;
  const std::size_t samples = width * height * channels;
  const std::size_t start = hdr.pos();
  if (bytes.size() - start < samples * sample_bytes)
    throw FormatError("PNM: truncated pixel data, need " + std::to_string(samples * sample_bytes) + " bytes",
                      bytes.size());

  std::vector<double> values(samples);
  const double scale = static_cast<double>(maxval);
  for (std::size_t i = 0; i < samples; ++i) {
    std::size_t raw = bytes[start + i * sample_bytes];
    if (sample_bytes == 2) raw = (raw << 8) | bytes[start + i * 2 + 1];
    if (raw > maxval) throw FormatError("PNM: sample exceeds maxval", start + i * sample_bytes);
    values[i] = static_cast<double>(raw) / scale;
  }
  if (color) return to_grayscale(width, height, values);
  return GrayImage::make(width, height, std::move(values));
}

std::vector<std::uint8_t> encode_pgm(const GrayImage& img, int maxval) {
  if (maxval != 255 && maxval != 65535) throw ContractError("encode_pgm: maxval must be 255 or 65535");
  std::ostringstream header;
  header << "P5\n" << img.width << ' ' << img.height << '\n' << maxval << '\n';
  ByteWriter w;
  w.raw(header.str());
  for (double p : img.pixels) {
    const auto v = static_cast<std::uint32_t>(std::lround(std::clamp(p, 0.0, 1.0) * maxval));
    if (maxval > 255) {
      w.bytes().push_back(static_cast<std::uint8_t>(v >> 8));
      w.bytes().push_back(static_cast<std::uint8_t>(v & 0xff));
    } else {
      w.bytes().push_back(static_cast<std::uint8_t>(v));
    }
  }
  return w.take();
}

StandardizedImage standardize(const GrayImage& img) {
  if (img.pixels.size() < 2) throw DegenerateImageError("standardize: need at least 2 pixels");
  const PixelStats s = pixel_stats(img.pixels);
  if (!(s.std > 1e-8))
    throw DegenerateImageError("standardize: image is (near-)constant, std = " + std::to_string(s.std));
  StandardizedImage out{img.width, img.height, std::vector<double>(img.pixels.size()), s.mean, s.std};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) out.pixels[i] = (img.pixels[i] - s.mean) / s.std;
  return out;
}

namespace {

struct Tap {
  std::size_t lo, hi;
  double t;
};

std::vector<Tap> taps(std::size_t in, std::size_t out) {
  std::vector<Tap> r(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double top = static_cast<double>(in - 1);
  for (std::size_t i = 0; i < out; ++i) {
    const double src = std::clamp((static_cast<double>(i) + 0.5) * scale - 0.5, 0.0, top);
    const auto lo = static_cast<std::size_t>(std::floor(src));
    r[i] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
  }
  return r;
}

double lerp_bounded(double a, double b, double t) {
  return std::clamp(a + t * (b - a), std::min(a, b), std::max(a, b));
}

}  // namespace

GrayImage resize_bilinear(const GrayImage& img, std::size_t side) {
  if (side == 0) throw ContractError("resize_bilinear: side must be at least 1");
  const auto xs = taps(img.width, side);
  const auto ys = taps(img.height, side);
  std::vector<double> out(side * side);
  for (std::size_t y = 0; y < side; ++y) {
    const double* r0 = &img.pixels[ys[y].lo * img.width];
    const double* r1 = &img.pixels[ys[y].hi * img.width];
    for (std::size_t x = 0; x < side; ++x) {
      const double top = lerp_bounded(r0[xs[x].lo], r0[xs[x].hi], xs[x].t);
      const double bottom = lerp_bounded(r1[xs[x].lo], r1[xs[x].hi], xs[x].t);
      out[y * side + x] = lerp_bounded(top, bottom, ys[y].t);
    }
  }
  return GrayImage{side, side, std::move(out)};
}

std::vector<std::size_t> intensity_histogram(const GrayImage& img, std::size_t bins) {
  if (bins == 0) throw ContractError("intensity_histogram: bins must be at least 1");
  std::vector<std::size_t> counts(bins, 0);
  for (double p : img.pixels) {
    auto k = static_cast<std::size_t>(std::clamp(p, 0.0, 1.0) * static_cast<double>(bins));
    ++counts[std::min(k, bins - 1)];
  }
  return counts;
}

const std::array<ExposurePrototype, 4>& exposure_prototypes() {
  static const std::array<ExposurePrototype, 4> kPrototypes{{
      {Exposure::Overexposed, 0.4149, 0.1402},
      {Exposure::Underexposed, 0.6200, 0.1834},
      {Exposure::Padded, 0.2428, 0.2885},
      {Exposure::Correct, 0.4948, 0.2406},
  }};
  return kPrototypes;
}

std::string_view exposure_name(Exposure e) {
  switch (e) {
    case Exposure::Overexposed: return "overexposed";
    case Exposure::Underexposed: return "underexposed";
    case Exposure::Padded: return "padded";
    case Exposure::Correct: return "correct";
  }
  return "?";
}

Exposure classify_exposure(double mean, double std) {
  const auto& protos = exposure_prototypes();
  Exposure best = protos[0].label;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& p : protos) {
    const double dm = mean - p.mean, ds = std - p.std;
    const double d = dm * dm + ds * ds;
    if (d < best_d) {  // strict: earlier label wins ties
      best_d = d;
      best = p.label;
    }
  }
  return best;
}

std::size_t SplitReport::failure_count(Split s) const {
  return static_cast<std::size_t>(
      std::count_if(failures.begin(), failures.end(), [s](const CopyFailure& f) { return f.split == s; }));
}

std::string SplitReport::to_csv() const {
  std::ostringstream os;
  os << "split,count,failures\n";
  for (Split s : kAllSplits) os << split_name(s) << ',' << count(s) << ',' << failure_count(s) << '\n';
  return os.str();
}

bool SplitReport::operator==(const SplitReport& o) const {
  if (counts != o.counts || failures.size() != o.failures.size()) return false;
  for (std::size_t i = 0; i < failures.size(); ++i)
    if (failures[i].image_id != o.failures[i].image_id || failures[i].split != o.failures[i].split) return false;
  return true;
}

SplitReport organize_splits(const std::filesystem::path& source_dir, const std::filesystem::path& out_dir,
                            std::span<const ManifestEntry> manifest) {
  namespace fs = std::filesystem;
  for (Split s : kAllSplits) fs::create_directories(out_dir / split_name(s));
  SplitReport report;
  for (const auto& entry : manifest) {
    const fs::path src = source_dir / entry.image_id;
    const fs::path dst = out_dir / split_name(entry.split) / entry.image_id;
    std::error_code ec;
    if (!fs::is_regular_file(src, ec)) {
      report.failures.push_back({entry.image_id, entry.split, "missing source file " + src.string()});
      continue;
    }
    fs::copy_file(src, dst, fs::copy_options::overwrite_existing, ec);
    if (ec) {
      report.failures.push_back({entry.image_id, entry.split, ec.message()});
      continue;
    }
    ++report.counts[static_cast<std::size_t>(entry.split)];
  }
  return report;
}

std::size_t PreprocessOutcome::succeeded() const {
  return static_cast<std::size_t>(std::count_if(images.begin(), images.end(), [](const auto& i) { return i.has_value(); }));
}

StandardizedImage preprocess_one(std::span<const std::uint8_t> encoded, std::size_t side) {
  return standardize(resize_bilinear(decode_image(encoded), side));
}

PreprocessOutcome parallel_preprocess(std::span<const std::vector<std::uint8_t>> encoded, std::size_t side,
                                      std::size_t workers) {
  if (workers < 1) throw ContractError("parallel_preprocess: workers must be at least 1");
  const std::size_t n = encoded.size();
  PreprocessOutcome out;
  out.images.resize(n);
  std::vector<std::optional<std::string>> failures(n);
  std::atomic<std::size_t> next{0};

  auto work = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        out.images[i] = preprocess_one(encoded[i], side);
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < std::min(workers, std::max<std::size_t>(n, 1)); ++w) pool.emplace_back(work);
    work();
  }
  for (std::size_t i = 0; i < n; ++i)
    if (failures[i]) out.errors.push_back({i, *failures[i]});
  return out;
}

}  // namespace gtb
