#pragma once

// DropPos pretext task: patch masking, positional-embedding dropping,
// position classification with smoothed and attention-weighted targets.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "droppos/ops.hpp"
#include "droppos/rng.hpp"
#include "droppos/vit.hpp"

namespace droppos {

// ---------------------------------------------------------------- masks

/// round-half-up((1 - ratio) * n). The 1e-9 nudge makes products that are
/// exact halves in decimal (e.g. 0.1 * 5) round up despite binary error.
inline std::size_t kept_count(std::size_t n, double ratio) {
  return static_cast<std::size_t>(std::floor((1.0 - ratio) * static_cast<double>(n) + 0.5 + 1e-9));
}

struct PatchMask {
  std::vector<std::uint8_t> bits;     // length N, 1 = visible
  double gamma = 0;
  std::vector<std::size_t> keep_ids;  // ascending indices with bits == 1

  std::size_t num_patches() const noexcept { return bits.size(); }
  std::size_t visible() const noexcept { return keep_ids.size(); }
};

struct PositionMask {
  std::vector<std::uint8_t> bits;  // length n_vis, 1 = keeps its true PE (anchor)
  double gamma_pos = 0;

  std::size_t anchors() const noexcept { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }
  std::size_t dropped() const noexcept { return bits.size() - anchors(); }
};

/// Builds a mask whose first `keep` shuffled indices are set.
inline std::vector<std::uint8_t> shuffle_truncate(std::size_t n, std::size_t keep, KeyedRng& rng) {
  auto perm = rng.permutation(n);
  std::vector<std::uint8_t> bits(n, 0);
  for (std::size_t i = 0; i < keep; ++i) bits[perm[i]] = 1;
  return bits;
}

inline PatchMask sample_patch_mask(std::size_t num_patches, double gamma, KeyedRng& rng) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)", "task.gamma");
  const std::size_t keep = kept_count(num_patches, gamma);
  if (keep == 0) {
    throw ConfigError("gamma " + std::to_string(gamma) + " leaves no visible patch out of " +
                          std::to_string(num_patches),
                      "task.gamma");
  }
  PatchMask m;
  m.gamma = gamma;
  m.bits = shuffle_truncate(num_patches, keep, rng);
  for (std::size_t i = 0; i < num_patches; ++i) {
    if (m.bits[i]) m.keep_ids.push_back(i);
  }
  return m;
}

inline PositionMask sample_position_mask(std::size_t n_vis, double gamma_pos, KeyedRng& rng) {
  if (!(gamma_pos >= 0.0 && gamma_pos <= 1.0)) throw ConfigError("gamma_pos must lie in [0, 1]", "task.gamma_pos");
  return PositionMask{shuffle_truncate(n_vis, kept_count(n_vis, gamma_pos), rng), gamma_pos};
}

struct SampleMasks {
  PatchMask patch;
  PositionMask position;
};

/// Masks for one sample, keyed by (seed, step, sample). The patch and
/// position streams do not depend on the ratios, so for a fixed key a lower
/// ratio always keeps a superset of what a higher ratio keeps.
inline SampleMasks sample_masks(std::size_t num_patches, double gamma, double gamma_pos, std::uint64_t seed,
                                std::uint64_t step, std::uint64_t sample) {
  KeyedRng patch_rng(seed, Stream::kPatchMask, step, sample);
  KeyedRng pos_rng(seed, Stream::kPositionMask, step, sample);
  SampleMasks m;
  m.patch = sample_patch_mask(num_patches, gamma, patch_rng);
  m.position = sample_position_mask(m.patch.visible(), gamma_pos, pos_rng);
  return m;
}

// ---------------------------------------------------------------- gather

inline void check_keep_ids(std::span<const std::size_t> keep_ids, std::size_t n) {
  for (std::size_t i = 0; i < keep_ids.size(); ++i) {
    if (keep_ids[i] >= n) {
      throw ContractError("gather: id " + std::to_string(keep_ids[i]) + " out of range [0, " + std::to_string(n) + ")");
    }
    if (i > 0 && keep_ids[i] <= keep_ids[i - 1]) throw ContractError("gather: keep ids must be strictly increasing");
  }
}

/// Rows of `seq` at `keep_ids`, in index order.
template <class T>
Tensor<T> gather(const Tensor<T>& seq, std::span<const std::size_t> keep_ids) {
  if (seq.rank() == 0) throw ShapeError("gather on a scalar");
  check_keep_ids(keep_ids, seq.dim(0));
  return gather_rows(seq, keep_ids);
}

template <class U>
std::vector<U> gather(std::span<const U> seq, std::span<const std::size_t> keep_ids) {
  check_keep_ids(keep_ids, seq.size());
  std::vector<U> out;
  out.reserve(keep_ids.size());
  for (auto i : keep_ids) out.push_back(seq[i]);
  return out;
}

/// Raster position index of each visible patch: gather([0..N-1], M).
inline std::vector<std::size_t> target_positions(const PatchMask& m) { return m.keep_ids; }

// ---------------------------------------------------------------- PE assembly

/// Row indices into [pe_table; p_mask] (N + 2 rows) that realize p':
/// slot 0 -> row 0 (p_0), anchor slot i -> 1 + keep_ids[i - 1], dropped slot
/// -> N + 1 (the [MASK] row).
inline std::vector<std::size_t> assembled_pe_rows(const PatchMask& m, const PositionMask& mp) {
  if (mp.bits.size() != m.visible()) {
    throw ContractError("assemble_pe: position mask length " + std::to_string(mp.bits.size()) + " != visible count " +
                        std::to_string(m.visible()));
  }
  const std::size_t n = m.num_patches();
  std::vector<std::size_t> rows;
  rows.reserve(m.visible() + 1);
  rows.push_back(0);
  for (std::size_t i = 0; i < m.visible(); ++i) rows.push_back(mp.bits[i] ? 1 + m.keep_ids[i] : n + 1);
  return rows;
}

/// p' for one sample, [(n_vis + 1), D]. Gradients reach `p_mask` only.
template <class T>
Tensor<T> assemble_pe(const Tensor<T>& pe_table, const PatchMask& m, const PositionMask& mp, const Tensor<T>& p_mask) {
  if (pe_table.rank() != 2 || pe_table.dim(0) != m.num_patches() + 1 || p_mask.numel() != pe_table.dim(1)) {
    throw ContractError("assemble_pe: table " + shape_str(pe_table.shape()) + ", mask over " +
                        std::to_string(m.num_patches()) + " patches, p_mask " + shape_str(p_mask.shape()));
  }
  const auto rows = assembled_pe_rows(m, mp);
  auto table = concat_rows<T>({pe_table, reshape(p_mask, Shape{1, p_mask.numel()})});
  return gather_rows(table, std::span<const std::size_t>(rows));
}

// ---------------------------------------------------------------- decoder

template <class T>
struct DecoderWeights {
  LinearParams<T> embed;  // [D, decoder_dim]
  std::vector<BlockParams<T>> blocks;
  LinearParams<T> head;   // [decoder_dim, N]

  static DecoderWeights init(const ViTConfig& cfg, std::uint64_t seed) {
    DecoderWeights w;
    w.embed = LinearParams<T>::init(cfg.embed_dim, cfg.decoder_dim, seed, "decoder.embed");
    for (std::size_t i = 0; i < cfg.decoder_depth; ++i) {
      w.blocks.push_back(
          BlockParams<T>::init(cfg.decoder_dim, cfg.mlp_ratio, seed, "decoder.blocks." + std::to_string(i)));
    }
    w.head = LinearParams<T>::init(cfg.decoder_dim, cfg.num_patches(), seed, "decoder.head");
    return w;
  }
  void collect(ParamList<T>& out) const {
    embed.collect(out, "decoder.embed");
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, "decoder.blocks." + std::to_string(i));
    head.collect(out, "decoder.head");
  }
};

/// Encoder output [B?, n + 1, D] -> position logits [B * n, N] with the
/// [CLS] rows removed.
template <class T>
Tensor<T> decoder_forward(const Tensor<T>& encoded, const DecoderWeights<T>& w, std::size_t heads) {
  const Shape& s = encoded.shape();
  if (s.size() != 2 && s.size() != 3) throw ContractError("decoder_forward: bad input " + shape_str(s));
  const std::size_t batch = s.size() == 3 ? s[0] : 1;
  const std::size_t len = s[s.size() - 2];
  auto x = w.embed(reshape(encoded, Shape{batch * len, s.back()}));
  for (const auto& blk : w.blocks) x = block_forward(x, blk, batch, len, heads);
  std::vector<std::size_t> patch_rows;
  patch_rows.reserve(batch * (len - 1));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 1; i < len; ++i) patch_rows.push_back(b * len + i);
  }
  return w.head(gather_rows(x, std::span<const std::size_t>(patch_rows)));
}

// ---------------------------------------------------------------- model

template <class T>
struct DropPosModel {
  ViTConfig cfg;
  EncoderWeights<T> encoder;
  Tensor<T> mask_token;  // p_mask, [D]
  DecoderWeights<T> decoder;
  Tensor<T> pos_table;   // frozen sin-cos table, [(N + 1), D]

  static DropPosModel init(const ViTConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DropPosModel m;
    m.cfg = cfg;
    m.encoder = EncoderWeights<T>::init(cfg, seed);
    m.mask_token = trunc_normal_param<T>(Shape{cfg.embed_dim}, 0.02, seed, "mask_token");
    m.decoder = DecoderWeights<T>::init(cfg, seed);
    m.pos_table = build_sincos_pe<T>(cfg.grid(), cfg.grid(), cfg.embed_dim);
    return m;
  }

  /// Every learnable tensor in a fixed order; `decay` false for norms,
  /// biases, cls_token and mask_token.
  ParamList<T> parameters() const {
    ParamList<T> out;
    encoder.collect(out);
    out.push_back({"mask_token", mask_token, false});
    decoder.collect(out);
    return out;
  }
};

// ---------------------------------------------------------------- targets

/// Row-normalized Gaussian kernel over patch grid distance:
/// w(i, j) = exp(-dist(i, j) / sigma^2), dist the Euclidean distance of
/// integer (row, col) coordinates. sigma == 0 gives the identity.
struct SmoothingMatrix {
  std::size_t n = 0;
  double sigma = 0;
  std::vector<double> w_star;  // n x n, row-major

  double operator()(std::size_t i, std::size_t j) const { return w_star[i * n + j]; }
};

inline SmoothingMatrix smoothing_matrix(std::size_t grid_h, std::size_t grid_w, double sigma) {
  if (!(sigma >= 0.0)) throw ConfigError("sigma must be nonnegative", "task.sigma_0");
  SmoothingMatrix s;
  s.n = grid_h * grid_w;
  s.sigma = sigma;
  s.w_star.assign(s.n * s.n, 0.0);
  if (sigma == 0.0) {
    for (std::size_t i = 0; i < s.n; ++i) s.w_star[i * s.n + i] = 1.0;
    return s;
  }
  const double s2 = sigma * sigma;
  for (std::size_t i = 0; i < s.n; ++i) {
    const double ri = static_cast<double>(i / grid_w), ci = static_cast<double>(i % grid_w);
    double total = 0;
    for (std::size_t j = 0; j < s.n; ++j) {
      const double dr = ri - static_cast<double>(j / grid_w), dc = ci - static_cast<double>(j % grid_w);
      const double w = std::exp(-std::sqrt(dr * dr + dc * dc) / s2);
      s.w_star[i * s.n + j] = w;
      total += w;
    }
    for (std::size_t j = 0; j < s.n; ++j) s.w_star[i * s.n + j] /= total;
  }
  return s;
}

struct SigmaSchedule {
  double sigma_0 = 1.0;
  double sigma_T = 0.0;
  std::uint64_t total_steps = 0;
};

/// sigma_t = (t / T)(sigma_T - sigma_0) + sigma_0, clamped to sigma_T past T.
inline double sigma_at(std::uint64_t t, const SigmaSchedule& s) {
  if (s.total_steps == 0) return t == 0 ? s.sigma_0 : s.sigma_T;
  if (t >= s.total_steps) return s.sigma_T;
  return (static_cast<double>(t) / static_cast<double>(s.total_steps)) * (s.sigma_T - s.sigma_0) + s.sigma_0;
}

inline std::vector<double> softmax_weights(std::vector<double> logits) {
  if (logits.empty()) return logits;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (auto& v : logits) z += (v = std::exp(v - mx));
  for (auto& v : logits) v /= z;
  return logits;
}

/// Softmax over cos(f_cls, f_i) / tau. Plain values: no gradient flows
/// through the weights.
template <class T>
std::vector<double> affinity(std::span<const T> f_cls, std::span<const T> f, std::size_t n, double tau) {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive", "task.tau");
  const std::size_t d = f_cls.size();
  if (f.size() != n * d) throw ShapeError("affinity: features do not match " + std::to_string(n) + "x" + std::to_string(d));
  constexpr double kEps = 1e-8;
  double nc = 0;
  for (T v : f_cls) nc += static_cast<double>(v) * v;
  nc = std::sqrt(nc);
  std::vector<double> logits(n);
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0, ni = 0;
    for (std::size_t k = 0; k < d; ++k) {
      dot += static_cast<double>(f_cls[k]) * f[i * d + k];
      ni += static_cast<double>(f[i * d + k]) * f[i * d + k];
    }
    logits[i] = dot / std::max(nc * std::sqrt(ni), kEps) / tau;
  }
  return softmax_weights(logits);
}

// ---------------------------------------------------------------- loss

/// Per-row targets for a (possibly batched) logits matrix.
struct LossTargets {
  std::vector<std::size_t> y;        // true raster position per row
  std::vector<std::uint8_t> anchor;  // position mask bit per row (1 = PE kept)
  std::vector<double> weight;        // attentive weight a_i, empty when disabled
};

/// L = -sum_i sum_j (1 - M_pos^i) a_i w*(y_i, j) log softmax(o_i)_j, divided by
/// sum_i (1 - M_pos^i) a_i. Softmax runs over all N classes.
template <class T>
Tensor<T> droppos_loss(const Tensor<T>& logits, const LossTargets& t, const SmoothingMatrix& w_star) {
  if (logits.rank() != 2) throw ShapeError("droppos_loss: logits must be 2-D, got " + shape_str(logits.shape()));
  const std::size_t rows = logits.dim(0), n = logits.dim(1);
  if (t.y.size() != rows || t.anchor.size() != rows || (!t.weight.empty() && t.weight.size() != rows) ||
      w_star.n != n) {
    throw ShapeError("droppos_loss: logits " + shape_str(logits.shape()) + " vs " + std::to_string(t.y.size()) +
                     " targets over " + std::to_string(w_star.n) + " positions");
  }
  Buffer<T> target(rows * n, T(0));
  double mass = 0;
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    if (t.y[i] >= n) throw ContractError("droppos_loss: target " + std::to_string(t.y[i]) + " out of range");
    if (t.anchor[i]) continue;
    ++dropped;
    const double a = t.weight.empty() ? 1.0 : t.weight[i];
    mass += a;
    for (std::size_t j = 0; j < n; ++j) target[i * n + j] = static_cast<T>(a * w_star(t.y[i], j));
  }
  if (dropped == 0) {
    throw ContractError("droppos_loss: no dropped positions in this batch; resample the position mask");
  }
  if (!(mass > 0.0)) throw ContractError("droppos_loss: attentive weights of dropped patches sum to zero");
  Tensor<T> weights(Shape{rows, n}, std::move(target));
  return scale(sum(mul(log_softmax(logits), weights)), static_cast<T>(-1.0 / mass));
}

// ---------------------------------------------------------------- forward

struct TaskConfig {
  double gamma = 0.75;
  double gamma_pos = 0.75;
  double sigma_0 = 1.0;
  double sigma_T = 0.0;
  double tau = 0.1;
  bool attentive = true;
};

template <class T>
struct ForwardPass {
  Tensor<T> encoded;  // [B, n + 1, D]
  Tensor<T> logits;   // [B * n, N]
  std::size_t batch = 0;
  std::size_t visible = 0;
};

/// Visible patch pixels of every sample stacked to [B * n_vis, P*P*C].
template <class T>
Tensor<T> visible_tokens(const Tensor<T>& images, const ViTConfig& cfg, std::span<const SampleMasks> masks) {
  const std::size_t b = images.dim(0);
  const std::size_t img = images.numel() / b;
  const std::size_t pd = cfg.patch_dim();
  const std::size_t nv = masks.front().patch.visible();
  Buffer<T> out;
  out.reserve(b * nv * pd);
  for (std::size_t s = 0; s < b; ++s) {
    Tensor<T> one(Shape{cfg.image_size, cfg.image_size, cfg.channels},
                  Buffer<T>(images.data().begin() + static_cast<std::ptrdiff_t>(s * img),
                                 images.data().begin() + static_cast<std::ptrdiff_t>((s + 1) * img)));
    auto tokens = patchify(one, cfg.patch_size);
    for (auto id : masks[s].patch.keep_ids) {
      out.insert(out.end(), tokens.data().begin() + static_cast<std::ptrdiff_t>(id * pd),
                 tokens.data().begin() + static_cast<std::ptrdiff_t>((id + 1) * pd));
    }
  }
  return Tensor<T>(Shape{b * nv, pd}, std::move(out));
}

/// patchify -> embed -> keep visible -> add assembled PEs -> encode -> decode.
/// `images` is [B, H, W, C]; every sample must keep the same visible count.
/// Encoder half of the forward pass: [B, 1 + nv, D] with the [CLS] row first.
template <class T>
Tensor<T> encode_masked(const DropPosModel<T>& model, const Tensor<T>& images, std::span<const SampleMasks> masks) {
  const ViTConfig& cfg = model.cfg;
  if (images.rank() != 4 || images.dim(1) != cfg.image_size || images.dim(2) != cfg.image_size ||
      images.dim(3) != cfg.channels || images.dim(0) != masks.size() || masks.empty()) {
    throw ShapeError("forward_pass: images " + shape_str(images.shape()) + " with " + std::to_string(masks.size()) +
                     " mask sets");
  }
  const std::size_t b = masks.size();
  const std::size_t nv = masks.front().patch.visible();
  const std::size_t d = cfg.embed_dim;
  for (const auto& m : masks) {
    if (m.patch.num_patches() != cfg.num_patches() || m.patch.visible() != nv) {
      throw ContractError("forward_pass: inconsistent mask sizes in batch");
    }
  }
  auto x_vis = model.encoder.patch_embed(visible_tokens(images, cfg, masks));  // [B * nv, D]

  // z' rows: per sample [cls, x_vis...]; cls lives at row B * nv of the stack.
  std::vector<std::size_t> token_rows, pe_rows;
  token_rows.reserve(b * (nv + 1));
  pe_rows.reserve(b * (nv + 1));
  for (std::size_t s = 0; s < b; ++s) {
    token_rows.push_back(b * nv);
    for (std::size_t i = 0; i < nv; ++i) token_rows.push_back(s * nv + i);
    const auto rows = assembled_pe_rows(masks[s].patch, masks[s].position);
    pe_rows.insert(pe_rows.end(), rows.begin(), rows.end());
  }
  auto tokens = gather_rows(concat_rows<T>({x_vis, reshape(model.encoder.cls_token, Shape{1, d})}),
                            std::span<const std::size_t>(token_rows));
  auto pe_candidates = concat_rows<T>({model.pos_table, reshape(model.mask_token, Shape{1, d})});
  auto pe = gather_rows(pe_candidates, std::span<const std::size_t>(pe_rows));
  auto z = reshape(add(tokens, pe), Shape{b, nv + 1, d});
  return encode(z, model.encoder, cfg.heads);
}

template <class T>
ForwardPass<T> forward_pass(const DropPosModel<T>& model, const Tensor<T>& images, std::span<const SampleMasks> masks) {
  ForwardPass<T> out;
  out.encoded = encode_masked(model, images, masks);
  out.batch = masks.size();
  out.visible = masks.front().patch.visible();
  out.logits = decoder_forward(out.encoded, model.decoder, model.cfg.heads);
  return out;
}

/// Targets for a batch, with attentive weights from the (detached) encoder
/// output when enabled.
template <class T>
LossTargets loss_targets(const ForwardPass<T>& fp, std::span<const SampleMasks> masks, bool attentive, double tau) {
  LossTargets t;
  const std::size_t nv = fp.visible;
  const std::size_t d = fp.encoded.shape().back();
  auto enc = fp.encoded.data();
  for (std::size_t s = 0; s < fp.batch; ++s) {
    t.y.insert(t.y.end(), masks[s].patch.keep_ids.begin(), masks[s].patch.keep_ids.end());
    t.anchor.insert(t.anchor.end(), masks[s].position.bits.begin(), masks[s].position.bits.end());
    if (attentive) {
      const T* base = enc.data() + s * (nv + 1) * d;
      auto a = affinity<T>(std::span<const T>(base, d), std::span<const T>(base + d, nv * d), nv, tau);
      t.weight.insert(t.weight.end(), a.begin(), a.end());
    }
  }
  return t;
}

struct StepDiagnostics {
  double loss = 0;
  double accuracy = 0;  // top-1 over dropped positions
  std::size_t dropped = 0;
  std::size_t correct = 0;
};

/// Top-1 hits of logits rows against targets, counting only dropped rows.
template <class T>
StepDiagnostics dropped_accuracy(const Tensor<T>& logits, const LossTargets& t) {
  StepDiagnostics d;
  const std::size_t n = logits.dim(1);
  auto o = logits.data();
  for (std::size_t i = 0; i < t.y.size(); ++i) {
    if (t.anchor[i]) continue;
    const T* row = o.data() + i * n;
    const auto pred = static_cast<std::size_t>(std::max_element(row, row + n) - row);
    ++d.dropped;
    d.correct += pred == t.y[i];
  }
  d.accuracy = d.dropped ? static_cast<double>(d.correct) / static_cast<double>(d.dropped) : 0.0;
  return d;
}

template <class T>
struct StepOutput {
  Tensor<T> loss;
  StepDiagnostics diag;
};

/// Full training forward for one batch: masks are given, loss per config.
template <class T>
StepOutput<T> forward_step(const DropPosModel<T>& model, const Tensor<T>& images, std::span<const SampleMasks> masks,
                           const TaskConfig& task, const SmoothingMatrix& w_star) {
  std::size_t dropped = 0;
  for (const auto& m : masks) dropped += m.position.dropped();
  if (dropped == 0) {
    throw ContractError("forward_step: gamma_pos leaves no dropped positions; nothing to reconstruct");
  }
  auto fp = forward_pass(model, images, masks);
  const auto targets = loss_targets(fp, masks, task.attentive, task.tau);
  StepOutput<T> out;
  out.loss = droppos_loss(fp.logits, targets, w_star);
  out.diag = dropped_accuracy(fp.logits, targets);
  out.diag.loss = out.loss.item();
  return out;
}

}  // namespace droppos
