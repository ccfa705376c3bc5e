#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "droppos/droppos.hpp"
#include "droppos/grad_check.hpp"

using namespace droppos;

namespace {

ViTConfig tiny_config() {
  ViTConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.channels = 3;
  c.embed_dim = 16;
  c.depth = 2;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.decoder_dim = 8;
  c.decoder_depth = 1;
  return c;
}

template <class T>
Tensor<T> random_images(std::size_t b, const ViTConfig& c, std::uint64_t seed) {
  KeyedRng rng({seed, 17});
  std::vector<T> v(b * c.image_size * c.image_size * c.channels);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1.0, 1.0));
  return Tensor<T>(Shape{b, c.image_size, c.image_size, c.channels}, std::move(v));
}

Tensor<double> random_logits(std::size_t rows, std::size_t n, std::uint64_t seed) {
  KeyedRng rng({seed, 23});
  std::vector<double> v(rows * n);
  for (auto& x : v) x = rng.uniform(-3.0, 3.0);
  return Tensor<double>(Shape{rows, n}, std::move(v));
}

// One-hot cross-entropy written directly: mean over dropped rows of -log softmax(o_i)[y_i].
double plain_ce(const Tensor<double>& logits, const LossTargets& t) {
  const std::size_t n = logits.dim(1);
  double total = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < t.y.size(); ++i) {
    if (t.anchor[i]) continue;
    const double* o = logits.data().data() + i * n;
    double mx = o[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, o[j]);
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(o[j] - mx);
    total += -(o[t.y[i]] - mx - std::log(z));
    ++count;
  }
  return total / static_cast<double>(count);
}

LossTargets random_targets(std::size_t rows, std::size_t n, std::uint64_t seed) {
  KeyedRng rng({seed, 29});
  LossTargets t;
  for (std::size_t i = 0; i < rows; ++i) {
    t.y.push_back(rng.below(n));
    t.anchor.push_back(rng.uniform() < 0.3 ? 1 : 0);
  }
  t.anchor[0] = 0;
  return t;
}

}  // namespace

// ---------------------------------------------------------------- masks

TEST(Masks, KeptCountExamples) {
  EXPECT_EQ(kept_count(196, 0.75), 49u);
  EXPECT_EQ(kept_count(64, 0.0), 64u);
  EXPECT_EQ(kept_count(49, 0.75), 12u);
  EXPECT_EQ(kept_count(10, 1.0), 0u);
  EXPECT_EQ(kept_count(10, 0.25), 8u);  // 7.5 rounds half up
}

TEST(Masks, PatchMaskCardinalityAndSortedKeepIds) {
  for (std::size_t n : {16u, 64u, 196u}) {
    for (double g : {0.0, 0.25, 0.5, 0.75, 0.9}) {
      for (std::uint64_t s = 0; s < 50; ++s) {
        KeyedRng rng(s, Stream::kPatchMask);
        auto m = sample_patch_mask(n, g, rng);
        ASSERT_EQ(m.bits.size(), n);
        EXPECT_EQ(static_cast<std::size_t>(std::count(m.bits.begin(), m.bits.end(), 1)), kept_count(n, g));
        EXPECT_TRUE(std::is_sorted(m.keep_ids.begin(), m.keep_ids.end()));
        for (auto id : m.keep_ids) EXPECT_EQ(m.bits[id], 1);
      }
    }
  }
}

TEST(Masks, PositionMaskExamples) {
  KeyedRng rng(1, Stream::kPositionMask);
  EXPECT_EQ(sample_position_mask(49, 0.75, rng).anchors(), 12u);
  EXPECT_EQ(sample_position_mask(49, 1.0, rng).anchors(), 0u);
  EXPECT_EQ(sample_position_mask(49, 0.0, rng).anchors(), 49u);
}

TEST(Masks, SeededDeterminism) {
  KeyedRng a(7, Stream::kPatchMask), b(7, Stream::kPatchMask), c(8, Stream::kPatchMask);
  auto ma = sample_patch_mask(196, 0.75, a), mb = sample_patch_mask(196, 0.75, b), mc = sample_patch_mask(196, 0.75, c);
  EXPECT_EQ(ma.bits, mb.bits);
  EXPECT_NE(ma.bits, mc.bits);
}

TEST(Masks, InvalidRatiosAreConfigErrors) {
  KeyedRng rng(1, Stream::kPatchMask);
  EXPECT_THROW(sample_patch_mask(64, 1.0, rng), ConfigError);
  EXPECT_THROW(sample_patch_mask(64, -0.1, rng), ConfigError);
  EXPECT_THROW(sample_patch_mask(4, 0.9, rng), ConfigError);  // rounds to zero visible
  EXPECT_THROW(sample_position_mask(8, 1.5, rng), ConfigError);
}

TEST(Masks, NestedAcrossRatiosForAFixedKey) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto lo = sample_masks(64, 0.25, 0.25, 3, s, 0);
    auto hi = sample_masks(64, 0.75, 0.25, 3, s, 0);
    for (auto id : hi.patch.keep_ids) EXPECT_EQ(lo.patch.bits[id], 1);
  }
}

TEST(Masks, PatchPositionMaskIsUniformOverPatches) {
  // Each patch is visible with probability 1 - gamma.
  std::vector<int> hits(16, 0);
  const int trials = 4000;
  for (int s = 0; s < trials; ++s) {
    auto m = sample_masks(16, 0.75, 0.5, 11, static_cast<std::uint64_t>(s), 0);
    for (auto id : m.patch.keep_ids) ++hits[id];
  }
  for (int h : hits) EXPECT_NEAR(h / static_cast<double>(trials), 0.25, 0.03);
}

// ---------------------------------------------------------------- gather and PE assembly

TEST(Gather, Examples) {
  const std::vector<int> seq{10, 11, 12, 13};
  const std::vector<std::size_t> ids{0, 2};
  EXPECT_EQ(gather<int>(std::span<const int>(seq), ids), (std::vector<int>{10, 12}));
  const std::vector<std::size_t> all{0, 1, 2, 3};
  EXPECT_EQ(gather<int>(std::span<const int>(seq), all), seq);
  const std::vector<std::size_t> bad{4};
  EXPECT_THROW(gather<int>(std::span<const int>(seq), bad), ContractError);

  KeyedRng rng(5, Stream::kPatchMask);
  auto m = sample_patch_mask(64, 0.5, rng);
  std::vector<std::size_t> raster(64);
  std::iota(raster.begin(), raster.end(), 0);
  EXPECT_EQ(gather<std::size_t>(std::span<const std::size_t>(raster), m.keep_ids), target_positions(m));
}

TEST(Gather, TensorRows) {
  Tensor<float> t(Shape{3, 2}, {0, 1, 2, 3, 4, 5});
  const std::vector<std::size_t> ids{0, 2};
  EXPECT_EQ(gather(t, ids).values(), (std::vector<float>{0, 1, 4, 5}));
}

TEST(AssemblePE, MatchesPerRowReference) {
  const std::size_t n = 16, d = 8;
  auto pe = build_sincos_pe<float>(4, 4, d);
  Tensor<float> p_mask(Shape{d}, {9, 8, 7, 6, 5, 4, 3, 2});
  for (std::uint64_t s = 0; s < 200; ++s) {
    KeyedRng rng({s, 1});
    const double g = rng.uniform(0.0, 0.9), gp = rng.uniform(0.0, 1.0);
    auto m = sample_masks(n, g, gp, s, 0, 0);
    auto out = assemble_pe(pe, m.patch, m.position, p_mask);
    ASSERT_EQ(out.shape(), (Shape{m.patch.visible() + 1, d}));
    for (std::size_t i = 0; i <= m.patch.visible(); ++i) {
      const float* expect = i == 0 ? pe.data().data()
                            : m.position.bits[i - 1] ? pe.data().data() + (1 + m.patch.keep_ids[i - 1]) * d
                                                     : p_mask.data().data();
      for (std::size_t j = 0; j < d; ++j) ASSERT_EQ(out[i * d + j], expect[j]);
    }
  }
}

TEST(AssemblePE, AllAnchorsAndNoAnchors) {
  auto pe = build_sincos_pe<double>(4, 4, 8);
  Tensor<double> p_mask(Shape{8}, 0.5);
  auto keep = sample_masks(16, 0.5, 0.0, 1, 0, 0);
  auto a = assemble_pe(pe, keep.patch, keep.position, p_mask);
  auto drop = sample_masks(16, 0.5, 1.0, 1, 0, 0);
  auto b = assemble_pe(pe, drop.patch, drop.position, p_mask);
  for (std::size_t i = 1; i <= 8; ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      EXPECT_EQ(a[i * 8 + j], pe[(1 + keep.patch.keep_ids[i - 1]) * 8 + j]);
      EXPECT_EQ(b[i * 8 + j], 0.5);
    }
  }
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(b[j], 0.0);
}

TEST(AssemblePE, InconsistentMaskIsContractError) {
  auto pe = build_sincos_pe<double>(4, 4, 8);
  Tensor<double> p_mask(Shape{8});
  auto m = sample_masks(16, 0.5, 0.5, 1, 0, 0);
  m.position.bits.push_back(1);
  EXPECT_THROW(assemble_pe(pe, m.patch, m.position, p_mask), ContractError);
}

TEST(AssemblePE, GradientReachesMaskTokenOnlyThroughDroppedRows) {
  auto pe = build_sincos_pe<double>(4, 4, 8);
  Tensor<double> p_mask(Shape{8}, 0.0, true);
  auto m = sample_masks(16, 0.5, 0.75, 2, 0, 0);
  backward(sum(assemble_pe(pe, m.patch, m.position, p_mask)));
  for (double g : p_mask.grad()) EXPECT_EQ(g, static_cast<double>(m.position.dropped()));
  EXPECT_FALSE(pe.has_grad());
}

// ---------------------------------------------------------------- targets

TEST(Smoothing, IdentityAtZero) {
  auto s = smoothing_matrix(4, 4, 0.0);
  for (std::size_t i = 0; i < 16; ++i) {
    for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(s(i, j), i == j ? 1.0 : 0.0);
  }
}

TEST(Smoothing, ClosedFormOnTwoByTwo) {
  auto s = smoothing_matrix(2, 2, 1.0);
  const double z = 1 + 2 * std::exp(-1.0) + std::exp(-std::sqrt(2.0));
  EXPECT_NEAR(s(0, 1), std::exp(-1.0) / z, 1e-15);
  EXPECT_NEAR(s(0, 3), std::exp(-std::sqrt(2.0)) / z, 1e-15);
  EXPECT_NEAR(s(0, 1) / s(0, 3), std::exp(-1.0 + std::sqrt(2.0)), 1e-12);
}

TEST(Smoothing, RowsSumToOneAndBaseKernelSymmetric) {
  for (double sigma : {0.25, 0.5, 1.0, 2.0}) {
    auto s = smoothing_matrix(8, 8, sigma);
    for (std::size_t i = 0; i < 64; ++i) {
      double t = 0;
      for (std::size_t j = 0; j < 64; ++j) t += s(i, j);
      EXPECT_NEAR(t, 1.0, 1e-6);
    }
    // Row sums differ at borders, so symmetry holds after undoing them.
    auto z = [&](std::size_t i) {
      double t = 0;
      for (std::size_t j = 0; j < 64; ++j) t += std::exp(-std::hypot(double(i / 8) - double(j / 8), double(i % 8) - double(j % 8)) / (sigma * sigma));
      return t;
    };
    EXPECT_NEAR(s(3, 42) * z(3), s(42, 3) * z(42), 1e-12);
  }
}

TEST(Smoothing, DiagonalMassShrinksAsSigmaGrows) {
  double prev = 1.0;
  for (double sigma : {0.0, 0.25, 0.5, 1.0, 2.0}) {
    const double d = smoothing_matrix(8, 8, sigma)(27, 27);
    EXPECT_LE(d, prev);
    prev = d;
  }
}

TEST(SigmaSchedule, EndpointsMidpointAndClamp) {
  SigmaSchedule s{1.0, 0.0, 100};
  EXPECT_EQ(sigma_at(0, s), 1.0);
  EXPECT_EQ(sigma_at(100, s), 0.0);
  EXPECT_EQ(sigma_at(50, s), 0.5);
  EXPECT_EQ(sigma_at(250, s), 0.0);
  for (std::uint64_t t = 1; t <= 100; ++t) EXPECT_LE(sigma_at(t, s), sigma_at(t - 1, s));
}

TEST(Affinity, EqualCosinesGiveUniform) {
  const std::vector<double> cls{1, 0, 0};
  // Rows are positive multiples of (1, 2, 0): all cosines 1/sqrt(5).
  std::vector<double> f;
  for (int r = 0; r < 3; ++r) f.insert(f.end(), {1.0 * (r + 1), 2.0 * (r + 1), 0.0});
  auto a = affinity<double>(cls, f, 3, 0.1);
  for (double v : a) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
}

TEST(Affinity, TwoPatchClosedForm) {
  const std::vector<double> cls{1, 0};
  const std::vector<double> f{1, 0, 0, 1};  // cosines 1 and 0
  auto a = affinity<double>(cls, f, 2, 0.1);
  EXPECT_NEAR(a[0], 1.0 / (1.0 + std::exp(-10.0)), 1e-12);
  EXPECT_NEAR(a[1], std::exp(-10.0) / (1.0 + std::exp(-10.0)), 1e-12);
}

TEST(Affinity, SumsToOneAndIgnoresShiftsAndScales) {
  KeyedRng rng({3});
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> cls(8), f(10 * 8);
    for (auto& v : cls) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : f) v = static_cast<float>(rng.uniform(-1, 1));
    auto a = affinity<float>(cls, f, 10, 0.1);
    EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), 1.0, 1e-6);
    std::vector<float> f2(f), cls2(cls);
    for (auto& v : f2) v *= 3.0f;
    for (auto& v : cls2) v *= 0.5f;
    auto b = affinity<float>(cls2, f2, 10, 0.1);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(a[i], b[i], 1e-6);

    std::vector<double> logits(10);
    for (auto& v : logits) v = rng.uniform(-5, 5);
    auto p = softmax_weights(logits);
    for (auto& v : logits) v += 123.0;
    auto q = softmax_weights(logits);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
  }
}

TEST(Affinity, ZeroFeatureIsGuarded) {
  const std::vector<double> cls{0, 0};
  const std::vector<double> f{0, 0, 1, 1};
  auto a = affinity<double>(cls, f, 2, 0.1);
  for (double v : a) EXPECT_TRUE(std::isfinite(v));
  EXPECT_THROW(affinity<double>(cls, f, 2, 0.0), ConfigError);
}

// ---------------------------------------------------------------- loss

TEST(Loss, UniformLogitsGiveLogN) {
  for (std::size_t n : {16u, 64u}) {
    LossTargets t = random_targets(10, n, n);
    auto loss = droppos_loss(Tensor<double>(Shape{10, n}, 0.7), t, smoothing_matrix(n == 16 ? 4 : 8, n == 16 ? 4 : 8, 0.0));
    EXPECT_NEAR(loss.item(), std::log(static_cast<double>(n)), 1e-12);
    // Any smoothing keeps the value: targets are distributions.
    auto smoothed = droppos_loss(Tensor<double>(Shape{10, n}, 0.7), t, smoothing_matrix(n == 16 ? 4 : 8, n == 16 ? 4 : 8, 1.0));
    EXPECT_NEAR(smoothed.item(), std::log(static_cast<double>(n)), 1e-12);
  }
}

TEST(Loss, SigmaZeroEqualsPlainCrossEntropy) {
  const auto w = smoothing_matrix(8, 8, 0.0);
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto logits = random_logits(12, 64, s);
    auto t = random_targets(12, 64, s);
    EXPECT_NEAR(droppos_loss(logits, t, w).item(), plain_ce(logits, t), 1e-9);
  }
}

TEST(Loss, ConstantAffinityEqualsDisabled) {
  const auto w = smoothing_matrix(8, 8, 0.7);
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto logits = random_logits(12, 64, s);
    auto t = random_targets(12, 64, s);
    const double off = droppos_loss(logits, t, w).item();
    t.weight.assign(12, 1.0 / 12.0);
    EXPECT_NEAR(droppos_loss(logits, t, w).item(), off, 1e-12);
  }
}

TEST(Loss, AnchorsContributeNothing) {
  const auto w = smoothing_matrix(4, 4, 0.5);
  auto logits = random_logits(6, 16, 1);
  auto t = random_targets(6, 16, 1);
  const double base = droppos_loss(logits, t, w).item();
  auto changed = random_logits(6, 16, 2);
  auto mixed = logits.values();
  for (std::size_t i = 0; i < 6; ++i) {
    if (t.anchor[i]) std::copy_n(changed.data().begin() + i * 16, 16, mixed.begin() + i * 16);
  }
  EXPECT_EQ(droppos_loss(Tensor<double>(Shape{6, 16}, mixed), t, w).item(), base);
}

TEST(Loss, NoDroppedPositionsIsContractError) {
  LossTargets t{{1, 2}, {1, 1}, {}};
  EXPECT_THROW(droppos_loss(Tensor<double>(Shape{2, 4}), t, smoothing_matrix(2, 2, 0.0)), ContractError);
}

TEST(Loss, ShapeMismatchIsShapeError) {
  LossTargets t{{1, 2}, {0, 0}, {}};
  EXPECT_THROW(droppos_loss(Tensor<double>(Shape{3, 4}), t, smoothing_matrix(2, 2, 0.0)), ShapeError);
  EXPECT_THROW(droppos_loss(Tensor<double>(Shape{2, 4}), t, smoothing_matrix(3, 3, 0.0)), ShapeError);
}

// ---------------------------------------------------------------- model

TEST(Decoder, OutputShapeAndFiniteLogits) {
  auto cfg = tiny_config();
  auto model = DropPosModel<float>::init(cfg, 1);
  KeyedRng rng({4});
  std::vector<float> v(3 * 6 * 16);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  auto logits = decoder_forward(Tensor<float>(Shape{3, 6, 16}, v), model.decoder, cfg.heads);
  ASSERT_EQ(logits.shape(), (Shape{15, 16}));
  for (float x : logits.values()) EXPECT_TRUE(std::isfinite(x));
}

TEST(Decoder, DepthZeroIsHeadOfEmbed) {
  auto cfg = tiny_config();
  cfg.decoder_depth = 0;
  auto model = DropPosModel<double>::init(cfg, 1);
  KeyedRng rng({4});
  std::vector<double> v(4 * 16);
  for (auto& x : v) x = rng.uniform(-1, 1);
  Tensor<double> enc(Shape{4, 16}, v);
  auto logits = decoder_forward(enc, model.decoder, cfg.heads);
  const std::size_t rows[] = {1, 2, 3};
  auto expect = model.decoder.head(model.decoder.embed(gather_rows(enc, std::span<const std::size_t>(rows))));
  for (std::size_t i = 0; i < expect.numel(); ++i) EXPECT_NEAR(logits[i], expect[i], 1e-12);
}

TEST(Model, ParameterNamesUniqueAndDecayFlags) {
  auto model = DropPosModel<float>::init(tiny_config(), 1);
  std::set<std::string> names;
  for (const auto& p : model.parameters()) {
    EXPECT_TRUE(names.insert(p.name).second) << p.name;
    const bool no_decay = p.name.ends_with(".bias") || p.name.ends_with(".gain") || p.name == "cls_token" ||
                          p.name == "mask_token";
    EXPECT_EQ(p.decay, !no_decay) << p.name;
    EXPECT_TRUE(p.tensor.requires_grad());
  }
  EXPECT_FALSE(model.pos_table.requires_grad());
}

TEST(ForwardStep, DegenerateMasksAreContractError) {
  auto cfg = tiny_config();
  auto model = DropPosModel<float>::init(cfg, 1);
  std::vector<SampleMasks> masks{sample_masks(16, 0.0, 0.0, 1, 0, 0), sample_masks(16, 0.0, 0.0, 1, 0, 1)};
  EXPECT_THROW(forward_step(model, random_images<float>(2, cfg, 1), masks, TaskConfig{}, smoothing_matrix(4, 4, 1.0)),
               ContractError);
}

TEST(ForwardStep, DiagnosticsAndFrozenPositions) {
  auto cfg = tiny_config();
  auto model = DropPosModel<float>::init(cfg, 1);
  std::vector<SampleMasks> masks;
  for (std::size_t k = 0; k < 4; ++k) masks.push_back(sample_masks(16, 0.5, 0.75, 1, 0, k));
  auto out = forward_step(model, random_images<float>(4, cfg, 1), masks, TaskConfig{}, smoothing_matrix(4, 4, 1.0));
  EXPECT_GE(out.diag.accuracy, 0.0);
  EXPECT_LE(out.diag.accuracy, 1.0);
  std::size_t dropped = 0;
  for (const auto& m : masks) dropped += m.position.dropped();
  EXPECT_EQ(out.diag.dropped, dropped);
  backward(out.loss);
  EXPECT_FALSE(model.pos_table.has_grad());
  for (const auto& p : model.parameters()) EXPECT_TRUE(p.tensor.has_grad()) << p.name;
}

TEST(ForwardStep, VisibleTokensFollowKeepIds) {
  auto cfg = tiny_config();
  auto images = random_images<double>(2, cfg, 3);
  std::vector<SampleMasks> masks{sample_masks(16, 0.75, 0.5, 1, 0, 0), sample_masks(16, 0.75, 0.5, 1, 0, 1)};
  auto tok = visible_tokens(images, cfg, masks);
  ASSERT_EQ(tok.shape(), (Shape{8, 48}));
  for (std::size_t s = 0; s < 2; ++s) {
    auto img = reshape(gather_rows(reshape(images, Shape{2, 16 * 16 * 3}), std::span<const std::size_t>(&s, 1)),
                       Shape{16, 16, 3});
    auto patches = patchify(img, 4);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 48; ++j) {
        EXPECT_EQ(tok[(s * 4 + i) * 48 + j], patches[masks[s].patch.keep_ids[i] * 48 + j]);
      }
    }
  }
}

// Full DropPos loss through the 16-patch model; attentive weights computed
// once and held fixed (they carry no gradient).
template <class T>
double full_loss_grad_error(std::uint64_t seed, T h) {
  auto cfg = tiny_config();
  auto model = DropPosModel<T>::init(cfg, seed);
  auto images = random_images<T>(2, cfg, seed);
  std::vector<SampleMasks> masks{sample_masks(16, 0.5, 0.75, seed, 0, 0), sample_masks(16, 0.5, 0.75, seed, 0, 1)};
  const auto w = smoothing_matrix(4, 4, 0.8);
  LossTargets targets;
  {
    NoGradGuard ng;
    targets = loss_targets(forward_pass(model, images, masks), masks, true, 0.1);
  }
  std::vector<Tensor<T>> leaves;
  for (const auto& p : model.parameters()) leaves.push_back(p.tensor);
  return grad_check_params(
      [&](const std::vector<Tensor<T>>&) { return droppos_loss(forward_pass(model, images, masks).logits, targets, w); },
      leaves, h);
}

TEST(GradCheckFullLoss, DoublePrecision) {
  for (std::uint64_t s = 0; s < 2; ++s) EXPECT_LT(full_loss_grad_error<double>(s, 1e-5), 1e-5);
}

TEST(GradCheckFullLoss, SinglePrecision) {
  for (std::uint64_t s = 0; s < 2; ++s) EXPECT_LT(full_loss_grad_error<float>(s, 1e-2f), 1e-3);
}
