#pragma once

// Image sources (CIFAR-10 binary, procedural synthetic corpus), augmentation,
// normalization and epoch-seeded batching.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "droppos/errors.hpp"
#include "droppos/rng.hpp"
#include "droppos/tensor.hpp"

namespace droppos {

struct ImageRecord {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> pixels;  // H x W x C, values in [0, 1]
  int label = -1;

  float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
};

/// Indexed image source. Implementations must be pure in the index.
class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual std::size_t size() const = 0;
  virtual ImageRecord get(std::size_t index) const = 0;
  virtual std::size_t image_size() const = 0;
  virtual std::size_t channels() const = 0;
  virtual std::size_t num_classes() const = 0;
};

// ---------------------------------------------------------------- CIFAR-10

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarPlane = kCifarSide * kCifarSide;
inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * kCifarPlane;
inline constexpr std::size_t kCifarBatchRecords = 10000;

/// One 3073-byte record: label byte, then R, G, B planes of 32 x 32.
inline ImageRecord decode_cifar10_record(std::span<const std::uint8_t> bytes) {
  if (bytes.size() != kCifarRecordBytes) {
    throw FormatError("CIFAR-10 record must be " + std::to_string(kCifarRecordBytes) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  ImageRecord r{kCifarSide, kCifarSide, 3, std::vector<float>(kCifarPlane * 3), bytes[0]};
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < kCifarPlane; ++p) r.pixels[p * 3 + c] = static_cast<float>(bytes[1 + c * kCifarPlane + p]) / 255.0f;
  }
  return r;
}

inline std::vector<std::uint8_t> encode_cifar10_record(const ImageRecord& r) {
  if (r.height != kCifarSide || r.width != kCifarSide || r.channels != 3 || r.label < 0 || r.label > 255) {
    throw FormatError("only 32x32x3 labeled records can be encoded in CIFAR-10 layout");
  }
  std::vector<std::uint8_t> out(kCifarRecordBytes);
  out[0] = static_cast<std::uint8_t>(r.label);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t p = 0; p < kCifarPlane; ++p) {
      out[1 + c * kCifarPlane + p] = static_cast<std::uint8_t>(std::lround(std::clamp(r.pixels[p * 3 + c], 0.0f, 1.0f) * 255.0f));
    }
  }
  return out;
}

/// Reads a CIFAR-10 binary batch. The file must hold exactly
/// `expected_records` records; nothing is returned for a short file.
inline std::vector<ImageRecord> read_cifar10_bin(const std::filesystem::path& path,
                                                 std::size_t expected_records = kCifarBatchRecords) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open CIFAR-10 file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t expected = expected_records * kCifarRecordBytes;
  if (bytes.size() != expected) {
    throw FormatError("CIFAR-10 file " + path.string() + " has " + std::to_string(bytes.size()) +
                      " bytes, expected " + std::to_string(expected));
  }
  std::vector<ImageRecord> out;
  out.reserve(expected_records);
  for (std::size_t i = 0; i < expected_records; ++i) {
    out.push_back(decode_cifar10_record(std::span<const std::uint8_t>(bytes).subspan(i * kCifarRecordBytes, kCifarRecordBytes)));
  }
  return out;
}

class InMemoryDataset final : public Dataset {
 public:
  InMemoryDataset(std::vector<ImageRecord> records, std::size_t num_classes)
      : records_(std::move(records)), classes_(num_classes) {}
  std::size_t size() const override { return records_.size(); }
  ImageRecord get(std::size_t i) const override { return records_.at(i); }
  std::size_t image_size() const override { return records_.empty() ? 0 : records_.front().height; }
  std::size_t channels() const override { return records_.empty() ? 0 : records_.front().channels; }
  std::size_t num_classes() const override { return classes_; }

 private:
  std::vector<ImageRecord> records_;
  std::size_t classes_;
};

// ---------------------------------------------------------------- synthetic

struct SyntheticParams {
  double amplitude_min = 0.5;  // gradient-field amplitude range per image
  double amplitude_max = 0.7;
  double offset_jitter = 0.08;  // per-image, per-channel brightness offset
  double texture = 0.06;        // per-pixel uniform noise half-width
  std::size_t min_shapes = 1;
  std::size_t max_shapes = 3;
};

/// Value of the smooth gradient field at pixel (y, x) of a size x size image,
/// before offsets, texture and shapes. Channel 0 rises left to right, channel
/// 1 top to bottom, channel 2 along the diagonal at half strength.
inline double gradient_field(std::size_t y, std::size_t x, std::size_t c, std::size_t size, double amplitude) {
  const double u = static_cast<double>(x) / static_cast<double>(size - 1);
  const double v = static_cast<double>(y) / static_cast<double>(size - 1);
  switch (c % 3) {
    case 0: return 0.5 + amplitude * (u - 0.5);
    case 1: return 0.5 + amplitude * (v - 0.5);
    default: return 0.5 + 0.5 * amplitude * ((u + v) / 2.0 - 0.5);
  }
}

/// Procedural image: gradient field + jittered offsets + texture noise + 1-3
/// bright discs or boxes. Label = quadrant (0..3, row-major) of the centroid
/// of the largest shape.
inline ImageRecord gen_synthetic_image(std::uint64_t seed, std::size_t index, std::size_t size, std::size_t channels = 3,
                                       const SyntheticParams& p = {}) {
  KeyedRng rng(seed, Stream::kSynthetic, index);
  ImageRecord r{size, size, channels, std::vector<float>(size * size * channels), 0};
  const double amplitude = rng.uniform(p.amplitude_min, p.amplitude_max);
  std::vector<double> offset(channels);
  for (auto& o : offset) o = rng.uniform(-p.offset_jitter, p.offset_jitter);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        const double v = gradient_field(y, x, c, size, amplitude) + offset[c] + rng.uniform(-p.texture, p.texture);
        r.pixels[(y * size + x) * channels + c] = static_cast<float>(v);
      }
    }
  }
  const auto n_shapes = p.min_shapes + static_cast<std::size_t>(rng.below(p.max_shapes - p.min_shapes + 1));
  double best_area = -1;
  const double s = static_cast<double>(size);
  for (std::size_t k = 0; k < n_shapes; ++k) {
    const bool disc = rng.uniform() < 0.5;
    const double cy = rng.uniform(0.1 * s, 0.9 * s), cx = rng.uniform(0.1 * s, 0.9 * s);
    const double ry = rng.uniform(0.06 * s, 0.2 * s), rx = disc ? ry : rng.uniform(0.06 * s, 0.2 * s);
    std::vector<double> color(channels);
    for (auto& c : color) c = rng.uniform(0.75, 1.0);
    color[static_cast<std::size_t>(rng.below(channels))] = rng.uniform(0.1, 0.4);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double dy = (static_cast<double>(y) + 0.5 - cy) / ry, dx = (static_cast<double>(x) + 0.5 - cx) / rx;
        const bool inside = disc ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (!inside) continue;
        for (std::size_t c = 0; c < channels; ++c) r.pixels[(y * size + x) * channels + c] = static_cast<float>(color[c]);
      }
    }
    const double area = disc ? 3.141592653589793 * rx * ry : 4.0 * rx * ry;
    if (area > best_area) {
      best_area = area;
      r.label = (cy >= s / 2 ? 2 : 0) + (cx >= s / 2 ? 1 : 0);
    }
  }
  for (auto& v : r.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return r;
}

class SyntheticDataset final : public Dataset {
 public:
  SyntheticDataset(std::size_t n, std::size_t size, std::uint64_t seed, std::size_t channels = 3,
                   SyntheticParams params = {})
      : n_(n), size_(size), seed_(seed), channels_(channels), params_(params) {}
  std::size_t size() const override { return n_; }
  ImageRecord get(std::size_t i) const override { return gen_synthetic_image(seed_, i, size_, channels_, params_); }
  std::size_t image_size() const override { return size_; }
  std::size_t channels() const override { return channels_; }
  std::size_t num_classes() const override { return 4; }

 private:
  std::size_t n_, size_;
  std::uint64_t seed_;
  std::size_t channels_;
  SyntheticParams params_;
};

/// Convenience stream form: the first n synthetic records for `seed`.
inline std::vector<ImageRecord> gen_synthetic(std::size_t n, std::size_t size, std::uint64_t seed) {
  std::vector<ImageRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(gen_synthetic_image(seed, i, size));
  return out;
}

// ---------------------------------------------------------------- augmentation

/// Bilinear sample with half-pixel centers and edge clamping.
inline ImageRecord crop_resize(const ImageRecord& img, double top, double left, double h, double w, std::size_t out) {
  ImageRecord r{out, out, img.channels, std::vector<float>(out * out * img.channels), img.label};
  const double sy = h / static_cast<double>(out), sx = w / static_cast<double>(out);
  const auto max_y = static_cast<double>(img.height - 1), max_x = static_cast<double>(img.width - 1);
  for (std::size_t y = 0; y < out; ++y) {
    const double fy = std::clamp(top + (static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out; ++x) {
      const double fx = std::clamp(left + (static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double tx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < img.channels; ++c) {
        const double v = (1 - ty) * ((1 - tx) * img.at(y0, x0, c) + tx * img.at(y0, x1, c)) +
                         ty * ((1 - tx) * img.at(y1, x0, c) + tx * img.at(y1, x1, c));
        r.pixels[(y * out + x) * img.channels + c] = static_cast<float>(v);
      }
    }
  }
  return r;
}

/// Random area/aspect crop (10 attempts, then whole-image fallback), bilinear
/// resize to out_size, then horizontal flip with probability 0.5.
inline ImageRecord random_resized_crop(const ImageRecord& img, std::array<double, 2> scale, std::size_t out_size,
                                       KeyedRng& rng) {
  const double area = static_cast<double>(img.height * img.width);
  const double log_lo = std::log(3.0 / 4.0), log_hi = std::log(4.0 / 3.0);
  double top = 0, left = 0, h = static_cast<double>(img.height), w = static_cast<double>(img.width);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(scale[0], scale[1]);
    const double ratio = std::exp(rng.uniform(log_lo, log_hi));
    const double cw = std::round(std::sqrt(target * ratio));
    const double ch = std::round(std::sqrt(target / ratio));
    if (cw > 0 && ch > 0 && cw <= static_cast<double>(img.width) && ch <= static_cast<double>(img.height)) {
      top = static_cast<double>(rng.below(static_cast<std::uint64_t>(static_cast<double>(img.height) - ch) + 1));
      left = static_cast<double>(rng.below(static_cast<std::uint64_t>(static_cast<double>(img.width) - cw) + 1));
      h = ch;
      w = cw;
      break;
    }
  }
  ImageRecord r = crop_resize(img, top, left, h, w, out_size);
  if (rng.uniform() < 0.5) {
    for (std::size_t y = 0; y < out_size; ++y) {
      for (std::size_t x = 0; x < out_size / 2; ++x) {
        for (std::size_t c = 0; c < r.channels; ++c) {
          std::swap(r.pixels[(y * out_size + x) * r.channels + c],
                    r.pixels[(y * out_size + out_size - 1 - x) * r.channels + c]);
        }
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------- batching

struct Normalization {
  std::vector<double> mean{0.5, 0.5, 0.5};
  std::vector<double> std{0.5, 0.5, 0.5};
};

/// Index batches for one epoch: permutation keyed by (seed, epoch), last
/// short batch kept.
inline std::vector<std::vector<std::size_t>> batches(std::size_t dataset_size, std::size_t batch_size,
                                                     std::uint64_t shuffle_seed, std::uint64_t epoch) {
  if (dataset_size == 0) throw ConfigError("dataset is empty", "data");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1", "train.batch_size");
  KeyedRng rng(shuffle_seed, Stream::kShuffle, epoch);
  auto order = rng.permutation(dataset_size);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < dataset_size; i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(dataset_size, i + batch_size)));
  }
  return out;
}

/// Stacks records into [B, H, W, C], applying (x - mean) / std per channel.
template <class T>
Tensor<T> to_batch(std::span<const ImageRecord> records, const Normalization& norm) {
  if (records.empty()) throw ContractError("to_batch: no records");
  const auto& f = records.front();
  const std::size_t img = f.height * f.width * f.channels;
  if (norm.mean.size() != f.channels || norm.std.size() != f.channels) {
    throw ConfigError("normalization needs one mean/std per channel", "data.mean");
  }
  Buffer<T> out(records.size() * img);
  for (std::size_t b = 0; b < records.size(); ++b) {
    const auto& r = records[b];
    if (r.height != f.height || r.width != f.width || r.channels != f.channels) {
      throw ShapeError("to_batch: records differ in size");
    }
    for (std::size_t i = 0; i < img; ++i) {
      const std::size_t c = i % f.channels;
      out[b * img + i] = static_cast<T>((r.pixels[i] - norm.mean[c]) / norm.std[c]);
    }
  }
  return Tensor<T>(Shape{records.size(), f.height, f.width, f.channels}, std::move(out));
}

}  // namespace droppos
