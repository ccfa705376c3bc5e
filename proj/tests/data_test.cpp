#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "droppos/data.hpp"

using namespace droppos;

namespace {

std::vector<std::uint8_t> random_cifar_bytes(std::size_t records, std::uint64_t seed) {
  KeyedRng rng({seed, 31});
  std::vector<std::uint8_t> bytes(records * kCifarRecordBytes);
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<std::uint8_t>(rng.below(256));
  for (std::size_t r = 0; r < records; ++r) bytes[r * kCifarRecordBytes] = static_cast<std::uint8_t>(rng.below(10));
  return bytes;
}

std::filesystem::path write_temp(const std::string& name, const std::vector<std::uint8_t>& bytes) {
  auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  return path;
}

double patch_mean(const ImageRecord& r, std::size_t py, std::size_t px, std::size_t p) {
  double s = 0;
  for (std::size_t y = py * p; y < (py + 1) * p; ++y) {
    for (std::size_t x = px * p; x < (px + 1) * p; ++x) {
      for (std::size_t c = 0; c < r.channels; ++c) s += r.at(y, x, c);
    }
  }
  return s / static_cast<double>(p * p * r.channels);
}

}  // namespace

TEST(Cifar, RecordRoundTripsBytes) {
  const auto bytes = random_cifar_bytes(5, 1);
  for (std::size_t r = 0; r < 5; ++r) {
    std::span<const std::uint8_t> rec(bytes.data() + r * kCifarRecordBytes, kCifarRecordBytes);
    auto img = decode_cifar10_record(rec);
    EXPECT_EQ(img.label, rec[0]);
    auto again = encode_cifar10_record(img);
    EXPECT_TRUE(std::equal(again.begin(), again.end(), rec.begin()));
  }
}

TEST(Cifar, ChannelPlanarLayoutAndScaling) {
  std::vector<std::uint8_t> rec(kCifarRecordBytes, 0);
  rec[0] = 7;
  rec[1 + 0 * 1024 + 33] = 255;  // R at (1, 1)
  rec[1 + 2 * 1024 + 1023] = 51;  // B at (31, 31)
  auto img = decode_cifar10_record(rec);
  EXPECT_EQ(img.label, 7);
  EXPECT_EQ(img.at(1, 1, 0), 1.0f);
  EXPECT_EQ(img.at(1, 1, 1), 0.0f);
  EXPECT_FLOAT_EQ(img.at(31, 31, 2), 0.2f);
}

TEST(Cifar, FullBatchFileLength) {
  EXPECT_EQ(kCifarBatchRecords * kCifarRecordBytes, 30730000u);
  const auto bytes = random_cifar_bytes(kCifarBatchRecords, 2);
  auto path = write_temp("droppos_cifar_full.bin", bytes);
  auto recs = read_cifar10_bin(path);
  ASSERT_EQ(recs.size(), 10000u);
  auto back = encode_cifar10_record(recs[9999]);
  EXPECT_TRUE(std::equal(back.begin(), back.end(), bytes.end() - static_cast<std::ptrdiff_t>(kCifarRecordBytes)));
  std::filesystem::remove(path);
}

TEST(Cifar, TruncatedFileReportsByteCounts) {
  auto bytes = random_cifar_bytes(3, 3);
  bytes.pop_back();
  auto path = write_temp("droppos_cifar_short.bin", bytes);
  try {
    read_cifar10_bin(path, 3);
    FAIL();
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(std::to_string(bytes.size())), std::string::npos) << msg;
    EXPECT_NE(msg.find(std::to_string(3 * kCifarRecordBytes)), std::string::npos) << msg;
  }
  std::filesystem::remove(path);
}

TEST(Synthetic, DeterministicAndInRange) {
  auto a = gen_synthetic_image(5, 17, 32), b = gen_synthetic_image(5, 17, 32), c = gen_synthetic_image(5, 18, 32);
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_EQ(a.label, b.label);
  EXPECT_NE(a.pixels, c.pixels);
  for (const auto& img : gen_synthetic(50, 32, 9)) {
    for (float v : img.pixels) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Synthetic, GradientCornersDifferByMargin) {
  SyntheticParams p;
  for (double amp : {p.amplitude_min, p.amplitude_max}) {
    ImageRecord field{32, 32, 3, std::vector<float>(32 * 32 * 3), 0};
    for (std::size_t y = 0; y < 32; ++y) {
      for (std::size_t x = 0; x < 32; ++x) {
        for (std::size_t c = 0; c < 3; ++c) field.pixels[(y * 32 + x) * 3 + c] = static_cast<float>(gradient_field(y, x, c, 32, amp));
      }
    }
    EXPECT_GE(patch_mean(field, 7, 7, 4) - patch_mean(field, 0, 0, 4), 0.3) << amp;
  }
}

TEST(Synthetic, LabelsRoughlyBalanced) {
  std::array<int, 4> counts{};
  SyntheticDataset ds(10000, 32, 21);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int l = ds.get(i).label;
    ASSERT_GE(l, 0);
    ASSERT_LT(l, 4);
    ++counts[static_cast<std::size_t>(l)];
  }
  for (int c : counts) EXPECT_NEAR(c / 10000.0, 0.25, 0.05);
}

TEST(Augment, FullScaleCropIsResizeOfWholeImage) {
  auto img = gen_synthetic_image(1, 0, 32);
  auto same = crop_resize(img, 0, 0, 32, 32, 32);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(same.pixels[i], img.pixels[i], 1e-6);
}

TEST(Augment, OutputSizeAndDeterminism) {
  auto img = gen_synthetic_image(1, 0, 32);
  for (std::uint64_t s = 0; s < 20; ++s) {
    KeyedRng a(s, Stream::kAugment), b(s, Stream::kAugment);
    auto x = random_resized_crop(img, {0.2, 1.0}, 24, a);
    auto y = random_resized_crop(img, {0.2, 1.0}, 24, b);
    EXPECT_EQ(x.height, 24u);
    EXPECT_EQ(x.width, 24u);
    EXPECT_EQ(x.pixels, y.pixels);
    EXPECT_EQ(x.label, img.label);
  }
}

TEST(Augment, UnitScaleIsIdentityOrMirror) {
  auto img = gen_synthetic_image(3, 4, 16);
  for (std::uint64_t s = 0; s < 10; ++s) {
    KeyedRng rng(s, Stream::kAugment);
    auto out = random_resized_crop(img, {1.0, 1.0}, 16, rng);
    bool same = true, mirror = true;
    for (std::size_t y = 0; y < 16; ++y) {
      for (std::size_t x = 0; x < 16; ++x) {
        for (std::size_t c = 0; c < 3; ++c) {
          same = same && std::abs(out.at(y, x, c) - img.at(y, x, c)) < 1e-6f;
          mirror = mirror && std::abs(out.at(y, x, c) - img.at(y, 15 - x, c)) < 1e-6f;
        }
      }
    }
    EXPECT_TRUE(same || mirror);
  }
}

TEST(Batches, SizesAndOrdering) {
  auto b = batches(10, 4, 1, 0);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].size(), 4u);
  EXPECT_EQ(b[1].size(), 4u);
  EXPECT_EQ(b[2].size(), 2u);
  EXPECT_EQ(batches(10, 4, 1, 0), b);
  EXPECT_NE(batches(10, 4, 1, 1), b);
  std::vector<std::size_t> all;
  for (const auto& x : b) all.insert(all.end(), x.begin(), x.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(all[i], i);
  EXPECT_THROW(batches(0, 4, 1, 0), ConfigError);
  EXPECT_THROW(batches(10, 0, 1, 0), ConfigError);
}

TEST(Batches, NormalizationAppliedOnce) {
  auto img = gen_synthetic_image(1, 0, 8);
  Normalization norm{{0.5, 0.25, 0.0}, {0.5, 0.5, 2.0}};
  auto t = to_batch<double>(std::span<const ImageRecord>(&img, 1), norm);
  EXPECT_EQ(t.shape(), (Shape{1, 8, 8, 3}));
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const std::size_t c = i % 3;
    EXPECT_NEAR(t[i], (img.pixels[i] - norm.mean[c]) / norm.std[c], 1e-12);
  }
}
