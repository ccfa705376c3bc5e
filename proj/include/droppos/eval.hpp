#pragma once

// Position-reconstruction accuracy, accuracy grids, reconstruction renders
// and frozen-backbone linear probes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "droppos/data.hpp"
#include "droppos/droppos.hpp"
#include "droppos/optim.hpp"
#include "droppos/ppm.hpp"

namespace droppos {

/// Sample key used for every evaluation mask; keeps eval masks disjoint from
/// the training stream (which uses sample indices < batch size).
inline constexpr std::uint64_t kEvalSampleKey = 0xE7A1'0000'0000'0001ULL;
inline constexpr std::uint64_t kProbeSampleKey = 0xE7A1'0000'0000'0002ULL;

struct EvalConfig {
  std::size_t images = 1024;  // per grid cell
  std::size_t batch_size = 64;
  std::uint64_t seed = 1234;
  Normalization norm;
};

/// Eval masks for image `index`: independent of the training seed and of the
/// model, so grids are comparable across checkpoints.
inline SampleMasks eval_masks(std::size_t num_patches, double gamma, double gamma_pos, std::uint64_t eval_seed,
                              std::size_t index) {
  return sample_masks(num_patches, gamma, gamma_pos, eval_seed, index, kEvalSampleKey);
}

struct AccuracyResult {
  double accuracy = 0;
  std::size_t correct = 0;
  std::size_t dropped = 0;
};

namespace detail {

inline std::vector<ImageRecord> load_records(const Dataset& data, std::size_t begin, std::size_t end) {
  std::vector<ImageRecord> recs;
  recs.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) recs.push_back(data.get(i));
  return recs;
}

inline void check_eval_data(const Dataset& data, const ViTConfig& cfg) {
  if (data.size() == 0) throw ConfigError("evaluation dataset is empty", "data");
  if (data.image_size() != cfg.image_size || data.channels() != cfg.channels) {
    throw ConfigError("dataset image geometry does not match the model", "model.image_size");
  }
}

}  // namespace detail

/// Top-1 accuracy over dropped-position patches of the first `cfg.images`
/// images of `data`.
template <class T>
AccuracyResult position_accuracy(const DropPosModel<T>& model, const Dataset& data, double gamma, double gamma_pos,
                                 const EvalConfig& cfg) {
  detail::check_eval_data(data, model.cfg);
  if (cfg.batch_size == 0) throw ConfigError("eval batch_size must be at least 1", "eval.batch_size");
  const std::size_t count = std::min(cfg.images, data.size());
  const std::size_t n = model.cfg.num_patches();
  NoGradGuard no_grad;
  AccuracyResult r;
  for (std::size_t begin = 0; begin < count; begin += cfg.batch_size) {
    const std::size_t end = std::min(count, begin + cfg.batch_size);
    const auto recs = detail::load_records(data, begin, end);
    std::vector<SampleMasks> masks;
    for (std::size_t i = begin; i < end; ++i) masks.push_back(eval_masks(n, gamma, gamma_pos, cfg.seed, i));
    const auto fp = forward_pass(model, to_batch<T>(recs, cfg.norm), masks);
    const auto targets = loss_targets(fp, masks, false, 1.0);
    const auto d = dropped_accuracy(fp.logits, targets);
    r.correct += d.correct;
    r.dropped += d.dropped;
  }
  if (r.dropped == 0) {
    throw ContractError("position_accuracy: gamma_pos leaves no dropped positions to score");
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.dropped);
  return r;
}

struct AccuracyGrid {
  std::array<double, 4> gammas{0.0, 0.25, 0.5, 0.75};
  std::array<double, 4> gamma_pos{0.25, 0.5, 0.75, 0.95};
  std::array<std::array<double, 4>, 4> cells{};  // [gamma][gamma_pos]

  double average() const {
    double s = 0;
    for (const auto& row : cells) {
      for (double c : row) s += c;
    }
    return s / 16.0;
  }
};

template <class T>
AccuracyGrid accuracy_grid(const DropPosModel<T>& model, const Dataset& data, const EvalConfig& cfg) {
  AccuracyGrid g;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      g.cells[i][j] = position_accuracy(model, data, g.gammas[i], g.gamma_pos[j], cfg).accuracy;
    }
  }
  return g;
}

/// 16 cell rows then `average,,<mean>`.
inline std::string grid_csv(const AccuracyGrid& g) {
  std::string out = "gamma,gamma_pos,accuracy\n";
  char buf[96];
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      std::snprintf(buf, sizeof buf, "%g,%g,%.6f\n", g.gammas[i], g.gamma_pos[j], g.cells[i][j]);
      out += buf;
    }
  }
  std::snprintf(buf, sizeof buf, "average,,%.6f\n", g.average());
  return out + buf;
}

// ---------------------------------------------------------------- renders

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// Colors the patch grid of `img`: masked patches black, visible patches whose
/// predicted position (predictions[i] for keep_ids[i]) is wrong white, the
/// rest keep their pixels. Single-channel images are replicated to gray.
inline RgbImage compose_render(const ImageRecord& img, std::size_t patch_size, const PatchMask& mask,
                               std::span<const std::size_t> predictions) {
  if (predictions.size() != mask.visible()) throw ContractError("compose_render: one prediction per visible patch");
  const std::size_t grid = img.width / patch_size;
  if (grid * grid != mask.num_patches()) throw ShapeError("compose_render: mask does not match the patch grid");
  std::vector<int> state(mask.num_patches(), 0);  // 0 masked, 1 correct, 2 wrong
  for (std::size_t i = 0; i < mask.visible(); ++i) {
    state[mask.keep_ids[i]] = predictions[i] == mask.keep_ids[i] ? 1 : 2;
  }
  RgbImage out{img.width, img.height, std::vector<std::uint8_t>(img.width * img.height * 3)};
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const int s = state[(y / patch_size) * grid + x / patch_size];
      for (std::size_t c = 0; c < 3; ++c) {
        std::uint8_t v = 0;
        if (s == 2) v = 255;
        if (s == 1) v = to_byte(img.at(y, x, img.channels == 1 ? 0 : c));
        out.pixels[(y * img.width + x) * 3 + c] = v;
      }
    }
  }
  return out;
}

/// Predicts a position for every visible patch of `img` and renders it.
template <class T>
RgbImage render_reconstruction(const DropPosModel<T>& model, const ImageRecord& img, double gamma, double gamma_pos,
                               std::uint64_t seed, std::size_t index, const Normalization& norm) {
  const std::size_t n = model.cfg.num_patches();
  const std::vector<SampleMasks> masks{eval_masks(n, gamma, gamma_pos, seed, index)};
  NoGradGuard no_grad;
  const auto fp = forward_pass(model, to_batch<T>(std::span<const ImageRecord>(&img, 1), norm), masks);
  std::vector<std::size_t> pred;
  auto o = fp.logits.data();
  for (std::size_t i = 0; i < fp.visible; ++i) {
    const T* row = o.data() + i * n;
    pred.push_back(static_cast<std::size_t>(std::max_element(row, row + n) - row));
  }
  return compose_render(img, model.cfg.patch_size, masks.front().patch, pred);
}

// ---------------------------------------------------------------- probes

struct ProbeConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 256;
  double lr = 1e-2;
  double pe_mask_ratio = 0.75;
  std::size_t train_images = 2048;
  std::size_t test_images = 1024;
  std::uint64_t seed = 99;
  Normalization norm;
};

struct ProbeReport {
  std::vector<std::pair<std::uint64_t, double>> curve;  // (optimizer steps, held-out top-1)
  double accuracy = 0;
  std::size_t head_params = 0;
};

inline std::string probe_csv(const ProbeReport& r) {
  std::string out = "step,accuracy\n";
  char buf[64];
  for (const auto& [step, acc] : r.curve) {
    std::snprintf(buf, sizeof buf, "%llu,%.6f\n", static_cast<unsigned long long>(step), acc);
    out += buf;
  }
  return out;
}

/// FNV-1a over the raw bytes of every parameter.
template <class T>
std::uint64_t parameter_checksum(const ParamList<T>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    const auto* b = reinterpret_cast<const std::uint8_t*>(p.tensor.data().data());
    for (std::size_t i = 0; i < p.tensor.numel() * sizeof(T); ++i) h = (h ^ b[i]) * 0x100000001b3ULL;
  }
  return h;
}

template <class T>
struct FeatureSet {
  std::size_t dim = 0;
  std::vector<T> x;  // rows x dim
  std::vector<std::size_t> y;
  std::size_t rows() const { return y.size(); }
};

/// Per-patch encoder features of dropped-PE patches (all patches visible).
template <class T>
FeatureSet<T> position_features(const DropPosModel<T>& model, const Dataset& data, std::size_t count,
                                const ProbeConfig& cfg, std::size_t batch = 64) {
  detail::check_eval_data(data, model.cfg);
  count = std::min(count, data.size());
  const std::size_t n = model.cfg.num_patches(), d = model.cfg.embed_dim;
  NoGradGuard no_grad;
  FeatureSet<T> fs{d, {}, {}};
  for (std::size_t begin = 0; begin < count; begin += batch) {
    const std::size_t end = std::min(count, begin + batch);
    const auto recs = detail::load_records(data, begin, end);
    std::vector<SampleMasks> masks;
    for (std::size_t i = begin; i < end; ++i) {
      masks.push_back(sample_masks(n, 0.0, cfg.pe_mask_ratio, cfg.seed, i, kProbeSampleKey));
    }
    const auto enc = encode_masked(model, to_batch<T>(recs, cfg.norm), masks);
    auto e = enc.data();
    for (std::size_t s = 0; s < masks.size(); ++s) {
      for (std::size_t i = 0; i < n; ++i) {
        if (masks[s].position.bits[i]) continue;
        const T* row = e.data() + (s * (n + 1) + 1 + i) * d;
        fs.x.insert(fs.x.end(), row, row + d);
        fs.y.push_back(masks[s].patch.keep_ids[i]);
      }
    }
  }
  return fs;
}

/// Mean-pooled patch features with every PE kept, labelled by record label.
template <class T>
FeatureSet<T> pooled_features(const DropPosModel<T>& model, const Dataset& data, std::size_t count,
                              const Normalization& norm, std::size_t batch = 64) {
  detail::check_eval_data(data, model.cfg);
  count = std::min(count, data.size());
  const std::size_t n = model.cfg.num_patches(), d = model.cfg.embed_dim;
  NoGradGuard no_grad;
  FeatureSet<T> fs{d, {}, {}};
  for (std::size_t begin = 0; begin < count; begin += batch) {
    const std::size_t end = std::min(count, begin + batch);
    const auto recs = detail::load_records(data, begin, end);
    for (const auto& r : recs) {
      if (r.label < 0) throw ConfigError("class probe needs labelled records", "data.labels");
    }
    std::vector<SampleMasks> masks(recs.size(), sample_masks(n, 0.0, 0.0, 0, 0, kProbeSampleKey));
    const auto enc = encode_masked(model, to_batch<T>(recs, norm), masks);
    auto e = enc.data();
    for (std::size_t s = 0; s < recs.size(); ++s) {
      std::vector<double> acc(d, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const T* row = e.data() + (s * (n + 1) + 1 + i) * d;
        for (std::size_t k = 0; k < d; ++k) acc[k] += row[k];
      }
      for (double v : acc) fs.x.push_back(static_cast<T>(v / static_cast<double>(n)));
      fs.y.push_back(static_cast<std::size_t>(recs[s].label));
    }
  }
  return fs;
}

template <class T>
double linear_head_accuracy(const FeatureSet<T>& fs, const LinearParams<T>& head) {
  if (fs.rows() == 0) return 0.0;
  NoGradGuard no_grad;
  const auto logits = head(Tensor<T>(Shape{fs.rows(), fs.dim}, fs.x));
  const std::size_t k = logits.dim(1);
  auto o = logits.data();
  std::size_t hit = 0;
  for (std::size_t i = 0; i < fs.rows(); ++i) {
    const T* row = o.data() + i * k;
    hit += static_cast<std::size_t>(std::max_element(row, row + k) - row) == fs.y[i];
  }
  return static_cast<double>(hit) / static_cast<double>(fs.rows());
}

/// Trains a dim -> classes linear map with softmax cross-entropy (Adam, no
/// weight decay) and scores it on `test` after every epoch.
template <class T>
ProbeReport train_linear_head(const FeatureSet<T>& train, const FeatureSet<T>& test, std::size_t classes,
                              const ProbeConfig& cfg) {
  if (train.rows() == 0) throw ConfigError("probe training set produced no samples", "eval");
  if (cfg.batch_size == 0) throw ConfigError("probe batch_size must be at least 1", "eval.probe_batch_size");
  auto head = LinearParams<T>::init(train.dim, classes, cfg.seed, "probe.head");
  ParamList<T> params;
  head.collect(params, "probe.head");
  auto state = OptimizerState<T>::for_params(params);
  const AdamWConfig hp{0.9, 0.999, 1e-8, 0.0};

  ProbeReport rep;
  rep.head_params = train.dim * classes + classes;
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    KeyedRng rng(cfg.seed, Stream::kProbe, epoch);
    const auto order = rng.permutation(train.rows());
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::size_t m = end - begin;
      std::vector<T> xb;
      std::vector<T> onehot(m * classes, T(0));
      xb.reserve(m * train.dim);
      for (std::size_t r = 0; r < m; ++r) {
        const std::size_t i = order[begin + r];
        xb.insert(xb.end(), train.x.begin() + static_cast<std::ptrdiff_t>(i * train.dim),
                  train.x.begin() + static_cast<std::ptrdiff_t>((i + 1) * train.dim));
        onehot[r * classes + train.y[i]] = T(1);
      }
      for (auto& p : params) p.tensor.zero_grad();
      auto logits = head(Tensor<T>(Shape{m, train.dim}, std::move(xb)));
      auto loss = scale(sum(mul(log_softmax(logits), Tensor<T>(Shape{m, classes}, std::move(onehot)))),
                        static_cast<T>(-1.0 / static_cast<double>(m)));
      backward(loss);
      adamw_step(params, state, hp, cfg.lr);
      ++step;
    }
    rep.curve.emplace_back(step, linear_head_accuracy(test, head));
  }
  rep.accuracy = rep.curve.empty() ? linear_head_accuracy(test, head) : rep.curve.back().second;
  return rep;
}

/// Linear position probe on a frozen backbone: `pe_mask_ratio` of the PEs are
/// replaced by the mask token and a dim -> N head predicts their positions.
template <class T>
ProbeReport linear_position_probe(const DropPosModel<T>& model, const Dataset& train, const Dataset& test,
                                  const ProbeConfig& cfg) {
  const auto before = parameter_checksum(model.parameters());
  const auto tr = position_features(model, train, cfg.train_images, cfg);
  auto te_cfg = cfg;
  te_cfg.seed = cfg.seed + 1;
  const auto te = position_features(model, test, cfg.test_images, te_cfg);
  auto rep = train_linear_head(tr, te, model.cfg.num_patches(), cfg);
  if (parameter_checksum(model.parameters()) != before) throw ContractError("probe modified the frozen backbone");
  return rep;
}

template <class T>
ProbeReport linear_class_probe(const DropPosModel<T>& model, const Dataset& train, const Dataset& test,
                               const ProbeConfig& cfg) {
  const auto before = parameter_checksum(model.parameters());
  const auto tr = pooled_features(model, train, cfg.train_images, cfg.norm);
  const auto te = pooled_features(model, test, cfg.test_images, cfg.norm);
  auto rep = train_linear_head(tr, te, train.num_classes(), cfg);
  if (parameter_checksum(model.parameters()) != before) throw ContractError("probe modified the frozen backbone");
  return rep;
}

}  // namespace droppos
