#pragma once

// Minimal ViT encoder: patchify, linear patch embedding, [CLS] token, fixed
// 2-D sine-cosine positional table and pre-norm transformer blocks.

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "droppos/ops.hpp"
#include "droppos/rng.hpp"
#include "droppos/tensor.hpp"

namespace droppos {

struct ViTConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t channels = 3;
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t decoder_dim = 32;
  std::size_t decoder_depth = 2;

  std::size_t grid() const noexcept { return image_size / patch_size; }
  std::size_t num_patches() const noexcept { return grid() * grid(); }
  std::size_t patch_dim() const noexcept { return patch_size * patch_size * channels; }

  void validate() const {
    if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
      throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
                            std::to_string(patch_size),
                        "model.patch_size");
    }
    if (channels == 0) throw ConfigError("channels must be positive", "model.channels");
    if (heads == 0 || embed_dim % heads != 0) {
      throw ConfigError("embed_dim must be a positive multiple of heads", "model.heads");
    }
    if (embed_dim == 0 || embed_dim % 4 != 0) {
      throw ConfigError("embed_dim must be a positive multiple of 4", "model.embed_dim");
    }
    if (decoder_dim == 0 || decoder_dim % heads != 0) {
      throw ConfigError("decoder_dim must be a positive multiple of heads", "model.decoder_dim");
    }
    if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive", "model.mlp_ratio");
  }
};

// ---------------------------------------------------------------- patches

/// image[H, W, C] -> tokens[N, P*P*C], raster order over the patch grid;
/// each token is the P x P x C block flattened row-major.
template <class T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch) {
  if (image.rank() != 3) throw ShapeError("patchify expects [H, W, C], got " + shape_str(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw ConfigError("image " + shape_str(image.shape()) + " is not divisible into " + std::to_string(patch) +
                          "-pixel patches",
                      "model.patch_size");
  }
  const std::size_t gh = h / patch, gw = w / patch, pd = patch * patch * c;
  Buffer<T> out(gh * gw * pd);
  auto src = image.data();
  for (std::size_t gy = 0; gy < gh; ++gy) {
    for (std::size_t gx = 0; gx < gw; ++gx) {
      T* dst = out.data() + (gy * gw + gx) * pd;
      for (std::size_t py = 0; py < patch; ++py) {
        const T* row = src.data() + ((gy * patch + py) * w + gx * patch) * c;
        std::copy_n(row, patch * c, dst + py * patch * c);
      }
    }
  }
  return make_result<T>(Shape{gh * gw, pd}, std::move(out), {image}, [=](detail::Node<T>& self) {
    auto* gi = detail::grad_of(self.parents[0]);
    if (!gi) return;
    for (std::size_t gy = 0; gy < gh; ++gy) {
      for (std::size_t gx = 0; gx < gw; ++gx) {
        const T* g = self.grad.data() + (gy * gw + gx) * pd;
        for (std::size_t py = 0; py < patch; ++py) {
          T* row = gi->data() + ((gy * patch + py) * w + gx * patch) * c;
          for (std::size_t i = 0; i < patch * c; ++i) row[i] += g[py * patch * c + i];
        }
      }
    }
  });
}

/// Inverse of patchify (no gradient).
template <class T>
Tensor<T> unpatchify(const Tensor<T>& tokens, std::size_t patch, std::size_t grid_h, std::size_t grid_w,
                     std::size_t channels) {
  const std::size_t pd = patch * patch * channels;
  if (tokens.rank() != 2 || tokens.dim(0) != grid_h * grid_w || tokens.dim(1) != pd) {
    throw ShapeError("unpatchify: tokens " + shape_str(tokens.shape()) + " vs grid " + std::to_string(grid_h) + "x" +
                     std::to_string(grid_w) + " of " + std::to_string(pd));
  }
  const std::size_t w = grid_w * patch;
  Buffer<T> img(grid_h * patch * w * channels);
  auto src = tokens.data();
  for (std::size_t gy = 0; gy < grid_h; ++gy) {
    for (std::size_t gx = 0; gx < grid_w; ++gx) {
      const T* tok = src.data() + (gy * grid_w + gx) * pd;
      for (std::size_t py = 0; py < patch; ++py) {
        std::copy_n(tok + py * patch * channels, patch * channels,
                    img.data() + ((gy * patch + py) * w + gx * patch) * channels);
      }
    }
  }
  return Tensor<T>(Shape{grid_h * patch, w, channels}, std::move(img));
}

// ---------------------------------------------------------------- positions

/// Frozen table [(N + 1), D]. Row 0 belongs to [CLS] and is all zeros. For
/// patch (r, c), the first D/2 columns encode r and the last D/2 encode c;
/// within a half of width d, column 2k is sin(pos * w_k) and 2k + 1 is
/// cos(pos * w_k) with w_k = 10000^(-2k / d).
template <class T>
Tensor<T> build_sincos_pe(std::size_t grid_h, std::size_t grid_w, std::size_t dim) {
  if (dim == 0 || dim % 4 != 0) throw ConfigError("positional embedding dim must be a multiple of 4", "model.embed_dim");
  const std::size_t half = dim / 2;
  Buffer<T> table((grid_h * grid_w + 1) * dim, T(0));
  for (std::size_t r = 0; r < grid_h; ++r) {
    for (std::size_t c = 0; c < grid_w; ++c) {
      T* row = table.data() + (1 + r * grid_w + c) * dim;
      for (std::size_t k = 0; k < half / 2; ++k) {
        const double omega = std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(half));
        row[2 * k] = static_cast<T>(std::sin(static_cast<double>(r) * omega));
        row[2 * k + 1] = static_cast<T>(std::cos(static_cast<double>(r) * omega));
        row[half + 2 * k] = static_cast<T>(std::sin(static_cast<double>(c) * omega));
        row[half + 2 * k + 1] = static_cast<T>(std::cos(static_cast<double>(c) * omega));
      }
    }
  }
  return Tensor<T>(Shape{grid_h * grid_w + 1, dim}, std::move(table));
}

// ---------------------------------------------------------------- parameters

template <class T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  bool decay = true;  // AdamW weight decay applies
};

template <class T>
using ParamList = std::vector<NamedParam<T>>;

inline std::uint64_t name_hash(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Truncated-normal(0, std) tensor from a stream keyed by (seed, name).
template <class T>
Tensor<T> trunc_normal_param(Shape shape, double stddev, std::uint64_t seed, std::string_view name) {
  KeyedRng rng(seed, Stream::kInit, name_hash(name));
  Buffer<T> v(numel_of(shape));
  for (auto& x : v) x = static_cast<T>(rng.truncated_normal(stddev));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <class T>
struct LinearParams {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  static LinearParams init(std::size_t in, std::size_t out, std::uint64_t seed, const std::string& name) {
    return {trunc_normal_param<T>(Shape{in, out}, 0.02, seed, name + ".weight"), Tensor<T>(Shape{out}, T(0), true)};
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
  void collect(ParamList<T>& out, const std::string& name) const {
    out.push_back({name + ".weight", weight, true});
    out.push_back({name + ".bias", bias, false});
  }
};

template <class T>
struct NormParams {
  Tensor<T> gain;
  Tensor<T> bias;

  static NormParams init(std::size_t d) { return {Tensor<T>(Shape{d}, T(1), true), Tensor<T>(Shape{d}, T(0), true)}; }
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias, T(1e-6)); }
  void collect(ParamList<T>& out, const std::string& name) const {
    out.push_back({name + ".gain", gain, false});
    out.push_back({name + ".bias", bias, false});
  }
};

/// Pre-norm transformer block: x + MHSA(LN(x)), then x + MLP(LN(x)).
template <class T>
struct BlockParams {
  NormParams<T> norm1;
  LinearParams<T> qkv;
  LinearParams<T> proj;
  NormParams<T> norm2;
  LinearParams<T> fc1;
  LinearParams<T> fc2;

  static BlockParams init(std::size_t dim, std::size_t mlp_ratio, std::uint64_t seed, const std::string& name) {
    return {NormParams<T>::init(dim),
            LinearParams<T>::init(dim, 3 * dim, seed, name + ".attn.qkv"),
            LinearParams<T>::init(dim, dim, seed, name + ".attn.proj"),
            NormParams<T>::init(dim),
            LinearParams<T>::init(dim, mlp_ratio * dim, seed, name + ".mlp.fc1"),
            LinearParams<T>::init(mlp_ratio * dim, dim, seed, name + ".mlp.fc2")};
  }
  void collect(ParamList<T>& out, const std::string& name) const {
    norm1.collect(out, name + ".norm1");
    qkv.collect(out, name + ".attn.qkv");
    proj.collect(out, name + ".attn.proj");
    norm2.collect(out, name + ".norm2");
    fc1.collect(out, name + ".mlp.fc1");
    fc2.collect(out, name + ".mlp.fc2");
  }
};

/// Multi-head self-attention over x[B * L, D] viewed as B sequences of L
/// tokens. Softmaxed score matrices [B * heads, L, L] are appended to
/// `attn_trace` when given.
template <class T>
Tensor<T> self_attention(const Tensor<T>& x, const BlockParams<T>& blk, std::size_t batch, std::size_t len,
                         std::size_t heads, std::vector<Tensor<T>>* attn_trace = nullptr) {
  const std::size_t dim = x.shape().back();
  const std::size_t hd = dim / heads;
  auto qkv = reshape(blk.qkv(x), Shape{batch, len, 3, heads, hd});
  qkv = permute(qkv, {2, 0, 3, 1, 4});  // [3, B, H, L, hd]
  auto pick = [&](std::size_t which) {
    const std::size_t id[1] = {which};
    return reshape(gather_rows(qkv, std::span<const std::size_t>(id)), Shape{batch * heads, len, hd});
  };
  auto q = pick(0), k = pick(1), v = pick(2);
  auto scores = scale(bmm(q, k, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd))));
  auto attn = softmax(scores);
  if (attn_trace) attn_trace->push_back(attn);
  auto ctx = reshape(bmm(attn, v), Shape{batch, heads, len, hd});
  ctx = reshape(permute(ctx, {0, 2, 1, 3}), Shape{batch * len, dim});
  return blk.proj(ctx);
}

template <class T>
Tensor<T> block_forward(const Tensor<T>& x, const BlockParams<T>& blk, std::size_t batch, std::size_t len,
                        std::size_t heads, std::vector<Tensor<T>>* attn_trace = nullptr) {
  auto h = add(x, self_attention(blk.norm1(x), blk, batch, len, heads, attn_trace));
  return add(h, blk.fc2(gelu(blk.fc1(blk.norm2(h)))));
}

template <class T>
struct EncoderWeights {
  LinearParams<T> patch_embed;  // [P*P*C, D]
  Tensor<T> cls_token;          // [D]
  std::vector<BlockParams<T>> blocks;
  NormParams<T> norm;

  static EncoderWeights init(const ViTConfig& cfg, std::uint64_t seed) {
    EncoderWeights w;
    w.patch_embed = LinearParams<T>::init(cfg.patch_dim(), cfg.embed_dim, seed, "patch_embed");
    w.cls_token = trunc_normal_param<T>(Shape{cfg.embed_dim}, 0.02, seed, "cls_token");
    for (std::size_t i = 0; i < cfg.depth; ++i) {
      w.blocks.push_back(BlockParams<T>::init(cfg.embed_dim, cfg.mlp_ratio, seed, "blocks." + std::to_string(i)));
    }
    w.norm = NormParams<T>::init(cfg.embed_dim);
    return w;
  }

  void collect(ParamList<T>& out) const {
    patch_embed.collect(out, "patch_embed");
    out.push_back({"cls_token", cls_token, false});
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, "blocks." + std::to_string(i));
    norm.collect(out, "norm");
  }
};

/// Runs the block stack and final layer norm over z' = [x_cls; x_vis] + p'.
/// Accepts [L, D] (one sequence) or [B, L, D]; returns the same shape, where
/// row 0 of each sequence is the [CLS] feature.
template <class T>
Tensor<T> encode(const Tensor<T>& tokens_with_pe, const EncoderWeights<T>& w, std::size_t heads,
                 std::vector<Tensor<T>>* attn_trace = nullptr) {
  const Shape& s = tokens_with_pe.shape();
  if ((s.size() != 2 && s.size() != 3) || s.back() != w.cls_token.numel() || s[s.size() - 2] < 2) {
    throw ContractError("encode: input " + shape_str(s) + " is not [B?, n + 1, " +
                        std::to_string(w.cls_token.numel()) + "] with n >= 1");
  }
  const std::size_t batch = s.size() == 3 ? s[0] : 1;
  const std::size_t len = s[s.size() - 2];
  const std::size_t dim = s.back();
  auto x = reshape(tokens_with_pe, Shape{batch * len, dim});
  for (const auto& blk : w.blocks) x = block_forward(x, blk, batch, len, heads, attn_trace);
  return reshape(w.norm(x), s);
}

}  // namespace droppos
