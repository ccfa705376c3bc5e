#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "droppos/vit.hpp"

using namespace droppos;

namespace {

Tensor<float> ramp_image(std::size_t h, std::size_t w, std::size_t c) {
  std::vector<float> v(h * w * c);
  std::iota(v.begin(), v.end(), 0.0f);
  return Tensor<float>(Shape{h, w, c}, std::move(v));
}

Tensor<double> random_tokens(Shape shape, std::uint64_t seed) {
  KeyedRng rng({seed, 5});
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor<double>(std::move(shape), std::move(v));
}

}  // namespace

TEST(Patchify, TokenCountsAndLengths) {
  auto a = patchify(ramp_image(32, 32, 3), 4);
  EXPECT_EQ(a.shape(), (Shape{64, 48}));
  auto b = patchify(Tensor<float>(Shape{224, 224, 3}), 16);
  EXPECT_EQ(b.shape(), (Shape{196, 768}));
}

TEST(Patchify, RasterOrderAndRowMajorBlocks) {
  // 4x4 single-channel image, 2x2 patches: patch 1 is the top-right block.
  auto t = patchify(ramp_image(4, 4, 1), 2);
  EXPECT_EQ(std::vector<float>(t.data().begin() + 4, t.data().begin() + 8), (std::vector<float>{2, 3, 6, 7}));
  EXPECT_EQ(std::vector<float>(t.data().begin() + 8, t.data().begin() + 12), (std::vector<float>{8, 9, 12, 13}));
}

TEST(Patchify, UnpatchifyInvertsExactly) {
  auto img = ramp_image(12, 8, 3);
  auto back = unpatchify(patchify(img, 4), 4, 3, 2, 3);
  EXPECT_EQ(back.shape(), img.shape());
  EXPECT_EQ(back.values(), img.values());
}

TEST(Patchify, IndivisibleImageIsConfigError) {
  EXPECT_THROW(patchify(ramp_image(10, 10, 1), 4), ConfigError);
}

TEST(SinCosPE, ClsRowZeroAndOriginPatch) {
  auto pe = build_sincos_pe<double>(4, 4, 16);
  ASSERT_EQ(pe.shape(), (Shape{17, 16}));
  for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(pe[j], 0.0);
  // Patch (0, 0): every sin entry 0, every cos entry 1.
  for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(pe[16 + j], j % 2 == 0 ? 0.0 : 1.0) << j;
}

TEST(SinCosPE, FirstFrequencyIsOneAndValuesBounded) {
  auto pe = build_sincos_pe<double>(8, 8, 32);
  // Patch (3, 5) is row 1 + 29; column 0 is sin(3 * 1), column 16 is sin(5 * 1).
  const double* row = pe.data().data() + 30 * 32;
  EXPECT_NEAR(row[0], std::sin(3.0), 1e-15);
  EXPECT_NEAR(row[1], std::cos(3.0), 1e-15);
  EXPECT_NEAR(row[16], std::sin(5.0), 1e-15);
  // k = 1 frequency: 10000^(-2/16).
  EXPECT_NEAR(row[2], std::sin(3.0 * std::pow(10000.0, -2.0 / 16.0)), 1e-15);
  for (double v : pe.values()) {
    EXPECT_LE(v, 1.0);
    EXPECT_GE(v, -1.0);
  }
}

TEST(SinCosPE, SameGridRowSharesHeightHalf) {
  auto pe = build_sincos_pe<float>(4, 4, 16);
  auto row = [&](std::size_t r, std::size_t c) { return pe.data().data() + (1 + r * 4 + c) * 16; };
  for (std::size_t c = 1; c < 4; ++c) {
    EXPECT_TRUE(std::equal(row(2, 0), row(2, 0) + 8, row(2, c)));
    EXPECT_FALSE(std::equal(row(2, 0) + 8, row(2, 0) + 16, row(2, c) + 8));
  }
  for (std::size_t r = 1; r < 4; ++r) EXPECT_TRUE(std::equal(row(0, 1) + 8, row(0, 1) + 16, row(r, 1) + 8));
}

TEST(SinCosPE, RejectsDimNotMultipleOfFour) { EXPECT_THROW(build_sincos_pe<float>(2, 2, 6), ConfigError); }

TEST(Encoder, OutputShapeMatchesInputForAnyDepth) {
  for (std::size_t depth : {0u, 1u, 3u}) {
    ViTConfig cfg;
    cfg.embed_dim = 16;
    cfg.heads = 2;
    cfg.depth = depth;
    auto w = EncoderWeights<double>::init(cfg, 3);
    EXPECT_EQ(encode(random_tokens(Shape{5, 16}, 1), w, 2).shape(), (Shape{5, 16}));
    EXPECT_EQ(encode(random_tokens(Shape{2, 5, 16}, 1), w, 2).shape(), (Shape{2, 5, 16}));
  }
}

TEST(Encoder, DepthZeroIsFinalLayerNorm) {
  ViTConfig cfg;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.depth = 0;
  auto w = EncoderWeights<double>::init(cfg, 3);
  auto x = random_tokens(Shape{4, 8}, 2);
  auto y = encode(x, w, 2);
  for (std::size_t r = 0; r < 4; ++r) {
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < 8; ++j) mean += x[r * 8 + j] / 8;
    for (std::size_t j = 0; j < 8; ++j) var += (x[r * 8 + j] - mean) * (x[r * 8 + j] - mean) / 8;
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(y[r * 8 + j], (x[r * 8 + j] - mean) / std::sqrt(var + 1e-6), 1e-12);
  }
}

TEST(Encoder, AttentionRowsSumToOne) {
  ViTConfig cfg;
  cfg.embed_dim = 16;
  cfg.heads = 4;
  cfg.depth = 2;
  auto w = EncoderWeights<float>::init(cfg, 9);
  std::vector<Tensor<float>> trace;
  KeyedRng rng({1});
  std::vector<float> v(3 * 7 * 16);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  encode(Tensor<float>(Shape{3, 7, 16}, v), w, 4, &trace);
  ASSERT_EQ(trace.size(), 2u);
  for (const auto& a : trace) {
    ASSERT_EQ(a.shape(), (Shape{12, 7, 7}));
    for (std::size_t r = 0; r < 12 * 7; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) s += a[r * 7 + j];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Encoder, PermutationEquivariantWithoutPositions) {
  ViTConfig cfg;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.depth = 2;
  auto w = EncoderWeights<double>::init(cfg, 4);
  auto x = random_tokens(Shape{5, 8}, 3);
  const std::vector<std::size_t> perm{0, 3, 1, 4, 2};
  auto y = encode(x, w, 2);
  auto yp = encode(gather_rows(x, std::span<const std::size_t>(perm)), w, 2);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(yp[i * 8 + j], y[perm[i] * 8 + j], 1e-12);
  }
}

TEST(Encoder, BatchRowsAreIndependent) {
  ViTConfig cfg;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.depth = 1;
  auto w = EncoderWeights<double>::init(cfg, 4);
  auto a = random_tokens(Shape{1, 4, 8}, 1), b = random_tokens(Shape{1, 4, 8}, 2);
  auto ab = encode(reshape(concat_rows<double>({reshape(a, Shape{4, 8}), reshape(b, Shape{4, 8})}), Shape{2, 4, 8}), w, 2);
  auto ya = encode(a, w, 2), yb = encode(b, w, 2);
  for (std::size_t i = 0; i < 32; ++i) {
    EXPECT_NEAR(ab[i], ya[i], 1e-12);
    EXPECT_NEAR(ab[32 + i], yb[i], 1e-12);
  }
}

TEST(Encoder, WrongWidthIsContractError) {
  ViTConfig cfg;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  auto w = EncoderWeights<double>::init(cfg, 4);
  EXPECT_THROW(encode(random_tokens(Shape{4, 6}, 1), w, 2), ContractError);
  EXPECT_THROW(encode(random_tokens(Shape{1, 8}, 1), w, 2), ContractError);
}

TEST(ViTConfig, ValidationNamesField) {
  ViTConfig cfg;
  cfg.patch_size = 5;
  try {
    cfg.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.path(), "model.patch_size");
  }
  cfg = ViTConfig{};
  cfg.heads = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Params, InitIsSeededAndNamed) {
  ViTConfig cfg;
  auto a = EncoderWeights<float>::init(cfg, 1), b = EncoderWeights<float>::init(cfg, 1), c = EncoderWeights<float>::init(cfg, 2);
  EXPECT_EQ(a.blocks[0].qkv.weight.values(), b.blocks[0].qkv.weight.values());
  EXPECT_NE(a.blocks[0].qkv.weight.values(), c.blocks[0].qkv.weight.values());
  EXPECT_NE(a.blocks[0].qkv.weight.values(), a.blocks[1].qkv.weight.values());
  for (float v : a.blocks[0].fc1.weight.values()) EXPECT_LE(std::abs(v), 0.04f + 1e-7f);
}
