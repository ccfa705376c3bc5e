#pragma once

// DropPos pretraining loop: batches -> masks -> forward_step -> backward ->
// AdamW, with sigma decayed per optimizer step.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "droppos/checkpoint.hpp"
#include "droppos/data.hpp"
#include "droppos/droppos.hpp"
#include "droppos/optim.hpp"

namespace droppos {

struct TrainConfig {
  double base_lr = 4e-3;
  std::size_t batch_size = 64;
  std::size_t epochs = 20;
  std::size_t warmup_epochs = 1;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  std::size_t checkpoint_every = 0;  // optimizer steps between periodic checkpoints; 0 = final only
};

struct AugmentConfig {
  bool enabled = false;
  double scale_min = 0.2;
  double scale_max = 1.0;
};

struct PretrainSetup {
  ViTConfig model;
  TaskConfig task;
  TrainConfig train;
  AugmentConfig augment;
  Normalization norm;
  std::uint64_t seed = 0;
};

struct MetricRow {
  std::uint64_t step = 0;
  double loss = 0;
  double acc = 0;
  double lr = 0;
  double sigma = 0;

  bool operator==(const MetricRow&) const = default;
};

inline std::string metrics_csv_header() { return "step,loss,acc,lr,sigma\n"; }

inline std::string metrics_csv_row(const MetricRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%.9g\n", static_cast<unsigned long long>(r.step), r.loss, r.acc,
                r.lr, r.sigma);
  return buf;
}

template <class T>
struct TrainState {
  DropPosModel<T> model;
  OptimizerState<T> opt;
  std::uint64_t step = 0;
};

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rebuilds the smoothing matrix only when sigma changes.
class SmoothingCache {
 public:
  SmoothingCache(std::size_t grid_h, std::size_t grid_w) : gh_(grid_h), gw_(grid_w) {}
  const SmoothingMatrix& get(double sigma) {
    if (!matrix_ || matrix_->sigma != sigma) matrix_ = smoothing_matrix(gh_, gw_, sigma);
    return *matrix_;
  }

 private:
  std::size_t gh_, gw_;
  std::optional<SmoothingMatrix> matrix_;
};

template <class T>
class Pretrainer {
 public:
  using StepCallback = std::function<void(const MetricRow&, const TrainState<T>&)>;

  Pretrainer(PretrainSetup setup, const Dataset& data)
      : setup_(std::move(setup)), data_(data), smoothing_(setup_.model.grid(), setup_.model.grid()) {
    setup_.model.validate();
    if (data_.size() == 0) throw ConfigError("training dataset is empty", "data");
    if (data_.image_size() != setup_.model.image_size || data_.channels() != setup_.model.channels) {
      throw ConfigError("dataset images are " + std::to_string(data_.image_size()) + "px x " +
                            std::to_string(data_.channels()) + "ch but the model expects " +
                            std::to_string(setup_.model.image_size) + "px x " + std::to_string(setup_.model.channels) + "ch",
                        "model.image_size");
    }
    if (setup_.train.batch_size == 0) throw ConfigError("batch_size must be at least 1", "train.batch_size");
  }

  const PretrainSetup& setup() const noexcept { return setup_; }

  std::uint64_t steps_per_epoch() const {
    return (data_.size() + setup_.train.batch_size - 1) / setup_.train.batch_size;
  }
  std::uint64_t total_steps() const { return steps_per_epoch() * setup_.train.epochs; }
  std::uint64_t warmup_steps() const { return steps_per_epoch() * setup_.train.warmup_epochs; }

  SigmaSchedule sigma_schedule() const { return {setup_.task.sigma_0, setup_.task.sigma_T, total_steps()}; }

  double lr_for(std::uint64_t step) const {
    return lr_at(step, total_steps(), warmup_steps(), scaled_lr(setup_.train.base_lr, setup_.train.batch_size));
  }

  AdamWConfig adamw() const {
    return {setup_.train.beta1, setup_.train.beta2, setup_.train.eps, setup_.train.weight_decay};
  }

  TrainState<T> initial_state() const {
    TrainState<T> s{DropPosModel<T>::init(setup_.model, setup_.seed), {}, 0};
    s.opt = OptimizerState<T>::for_params(s.model.parameters());
    return s;
  }

  /// Images of step `step`, augmented and normalized, as [B, H, W, C].
  Tensor<T> batch_images(std::uint64_t step) const {
    const std::uint64_t epoch = step / steps_per_epoch();
    if (epoch != cached_epoch_) {
      epoch_batches_ = batches(data_.size(), setup_.train.batch_size, setup_.seed, epoch);
      cached_epoch_ = epoch;
    }
    const auto& ids = epoch_batches_.at(step % steps_per_epoch());
    std::vector<ImageRecord> recs;
    recs.reserve(ids.size());
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto r = data_.get(ids[k]);
      if (setup_.augment.enabled) {
        KeyedRng rng(setup_.seed, Stream::kAugment, step, k);
        r = random_resized_crop(r, {setup_.augment.scale_min, setup_.augment.scale_max}, setup_.model.image_size, rng);
      }
      recs.push_back(std::move(r));
    }
    return to_batch<T>(recs, setup_.norm);
  }

  std::vector<SampleMasks> batch_masks(std::uint64_t step, std::size_t batch) const {
    std::vector<SampleMasks> masks;
    masks.reserve(batch);
    for (std::size_t k = 0; k < batch; ++k) {
      masks.push_back(sample_masks(setup_.model.num_patches(), setup_.task.gamma, setup_.task.gamma_pos, setup_.seed, step, k));
    }
    return masks;
  }

  /// Runs optimizer steps until state.step == until (clamped to the schedule).
  void run(TrainState<T>& state, std::uint64_t until, const StepCallback& on_step = {}) {
    until = std::min(until, total_steps());
    const auto params = state.model.parameters();
    const auto hp = adamw();
    while (state.step < until) {
      const std::uint64_t t = state.step;
      const double sigma = sigma_at(t, sigma_schedule());
      const double lr = lr_for(t);
      auto images = batch_images(t);
      auto masks = batch_masks(t, images.dim(0));

      for (const auto& p : params) p.tensor.zero_grad();
      auto out = forward_step(state.model, images, masks, setup_.task, smoothing_.get(sigma));
      if (!std::isfinite(out.diag.loss)) {
        throw TrainingAborted("non-finite loss at step " + std::to_string(t) + "; last periodic checkpoint kept");
      }
      backward(out.loss);
      if (state.model.pos_table.requires_grad() || state.model.pos_table.has_grad()) {
        throw ContractError("positional table received a gradient; it must stay frozen");
      }
      adamw_step(params, state.opt, hp, lr);
      state.step = t + 1;
      if (on_step) on_step(MetricRow{t, out.diag.loss, out.diag.accuracy, lr, sigma}, state);
    }
  }

  Checkpoint checkpoint(const TrainState<T>& s, const std::string& config_json = {}) const {
    Checkpoint ck;
    const auto params = s.model.parameters();
    append_params(ck, params);
    append_optimizer(ck, params, s.opt);
    const std::uint64_t step = s.step;
    ck.records.push_back(ArrayRecord::from<std::uint64_t>("schedule.step", {}, std::span<const std::uint64_t>(&step, 1)));
    if (!config_json.empty()) append_text(ck, "config", config_json);
    return ck;
  }

  TrainState<T> restore(const Checkpoint& ck) const {
    auto s = initial_state();
    const auto params = s.model.parameters();
    restore_params(ck, params);
    s.opt = restore_optimizer(ck, params);
    s.step = ck.at("schedule.step").template as<std::uint64_t>().at(0);
    return s;
  }

 private:
  PretrainSetup setup_;
  const Dataset& data_;
  SmoothingCache smoothing_;
  mutable std::uint64_t cached_epoch_ = ~std::uint64_t{0};
  mutable std::vector<std::vector<std::size_t>> epoch_batches_;
};

/// Loads parameters only (no optimizer) into a freshly built model.
template <class T>
DropPosModel<T> model_from_checkpoint(const Checkpoint& ck, const ViTConfig& cfg) {
  auto model = DropPosModel<T>::init(cfg, 0);
  restore_params(ck, model.parameters());
  return model;
}

struct PretrainResult {
  std::vector<MetricRow> metrics;
  std::filesystem::path checkpoint;
};

/// File-producing pretraining run. Writes metrics.csv (appending when
/// resuming), periodic checkpoint_<step>.dpos files and checkpoint.dpos.
/// On abort the last periodic checkpoint is left untouched.
template <class T>
PretrainResult pretrain(const PretrainSetup& setup, const Dataset& data, const std::filesystem::path& out_dir,
                        const std::string& config_json, const std::optional<Checkpoint>& resume_from = std::nullopt,
                        std::uint64_t stop_at = ~std::uint64_t{0}) {
  std::filesystem::create_directories(out_dir);
  Pretrainer<T> trainer(setup, data);
  auto state = resume_from ? trainer.restore(*resume_from) : trainer.initial_state();

  const auto metrics_path = out_dir / "metrics.csv";
  std::ofstream csv;
  if (resume_from) {
    // Keep rows for steps before the resume point; drop anything later.
    std::vector<std::string> kept;
    std::ifstream in(metrics_path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (!line.empty() && std::stoull(line.substr(0, line.find(','))) < state.step) kept.push_back(line);
    }
    in.close();
    csv.open(metrics_path, std::ios::trunc);
    csv << metrics_csv_header();
    for (const auto& k : kept) csv << k << '\n';
  } else {
    csv.open(metrics_path, std::ios::trunc);
    csv << metrics_csv_header();
  }
  if (!csv) throw IoError("cannot write " + metrics_path.string());

  PretrainResult result;
  const auto every = setup.train.checkpoint_every;
  trainer.run(state, stop_at, [&](const MetricRow& row, const TrainState<T>& s) {
    csv << metrics_csv_row(row);
    result.metrics.push_back(row);
    if (every > 0 && s.step % every == 0) {
      csv.flush();
      save_checkpoint(trainer.checkpoint(s, config_json), out_dir / ("checkpoint_" + std::to_string(s.step) + ".dpos"));
    }
  });
  csv.flush();
  result.checkpoint = out_dir / "checkpoint.dpos";
  save_checkpoint(trainer.checkpoint(state, config_json), result.checkpoint);
  return result;
}

}  // namespace droppos
