#pragma once

// JSON run configuration: strict parsing (unknown keys rejected with their
// dotted path), defaults for every absent field, dotted-path overrides and a
// fully materialized echo.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "droppos/data.hpp"
#include "droppos/droppos.hpp"
#include "droppos/eval.hpp"
#include "droppos/train.hpp"

namespace droppos {

using Json = nlohmann::ordered_json;

struct DataConfig {
  std::string source = "synthetic";  // synthetic | cifar10
  std::string train_path;            // cifar10 binary batches
  std::string eval_path;
  std::size_t train_size = 8192;     // synthetic only
  std::size_t eval_size = 1024;
  std::uint64_t train_seed = 1;
  std::uint64_t eval_seed = 2;
  bool labels = false;  // records carry usable class labels
  Normalization norm;
  SyntheticParams synthetic;
  AugmentConfig augment;
};

struct EvalSettings {
  std::size_t images = 1024;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1234;
  double render_gamma = 0.75;
  double render_gamma_pos = 0.95;
  std::size_t probe_epochs = 20;
  std::size_t probe_batch_size = 256;
  double probe_lr = 1e-2;
  double probe_pe_mask_ratio = 0.75;
  std::size_t probe_train_images = 2048;
  std::size_t probe_test_images = 1024;
};

struct RunConfig {
  ViTConfig model;
  TaskConfig task;
  DataConfig data;
  TrainConfig train;
  EvalSettings eval;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";

  PretrainSetup pretrain_setup() const { return {model, task, train, data.augment, data.norm, seed}; }
  EvalConfig eval_config() const { return {eval.images, eval.batch_size, eval.seed, data.norm}; }
  ProbeConfig probe_config() const {
    return {eval.probe_epochs, eval.probe_batch_size, eval.probe_lr, eval.probe_pe_mask_ratio,
            eval.probe_train_images, eval.probe_test_images, eval.seed, data.norm};
  }
};

namespace detail {

/// Reads the known keys of one JSON object; finish() rejects the rest.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be a JSON object", path_);
  }

  template <class V>
  void get(const std::string& key, V& out) {
    seen_.push_back(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_unsigned_v<V> && !std::is_same_v<V, bool>) {
        if (!it->is_number_unsigned()) throw ConfigError("", "");
      } else if constexpr (std::is_floating_point_v<V>) {
        if (!it->is_number()) throw ConfigError("", "");
      } else if constexpr (std::is_same_v<V, bool>) {
        if (!it->is_boolean()) throw ConfigError("", "");
      } else if constexpr (std::is_same_v<V, std::string>) {
        if (!it->is_string()) throw ConfigError("", "");
      }
      out = it->template get<V>();
    } catch (const std::exception&) {
      throw ConfigError("bad value for " + join(key) + ": " + it->dump(), join(key));
    }
  }

  const Json* child(const std::string& key) {
    seen_.push_back(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
        throw ConfigError("unknown config key '" + join(it.key()) + "'", join(it.key()));
      }
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }
  const Json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

template <class F>
void section(ObjectReader& parent, const std::string& key, F&& fill) {
  if (const Json* j = parent.child(key)) {
    ObjectReader r(*j, parent.join(key));
    fill(r);
    r.finish();
  }
}

inline void check(bool ok, const std::string& message, const std::string& path) {
  if (!ok) throw ConfigError(message, path);
}

}  // namespace detail

inline void validate(const RunConfig& c) {
  using detail::check;
  c.model.validate();
  check(c.task.gamma >= 0.0 && c.task.gamma < 1.0, "task.gamma must lie in [0, 1)", "task.gamma");
  check(c.task.gamma_pos >= 0.0 && c.task.gamma_pos <= 1.0, "task.gamma_pos must lie in [0, 1]", "task.gamma_pos");
  {
    const std::size_t vis = kept_count(c.model.num_patches(), c.task.gamma);
    check(vis > 0, "task.gamma leaves no visible patches", "task.gamma");
    check(kept_count(vis, c.task.gamma_pos) < vis, "task.gamma_pos keeps every position; nothing to predict",
          "task.gamma_pos");
  }
  check(c.task.sigma_0 >= 0.0, "task.sigma_0 must be nonnegative", "task.sigma_0");
  check(c.task.sigma_T >= 0.0, "task.sigma_T must be nonnegative", "task.sigma_T");
  check(c.task.tau > 0.0, "task.tau must be positive", "task.tau");
  check(c.data.source == "synthetic" || c.data.source == "cifar10", "data.source must be synthetic or cifar10",
        "data.source");
  check(c.data.norm.mean.size() == c.model.channels, "data.mean needs one entry per channel", "data.mean");
  check(c.data.norm.std.size() == c.model.channels, "data.std needs one entry per channel", "data.std");
  for (double s : c.data.norm.std) check(s > 0.0, "data.std entries must be positive", "data.std");
  check(c.data.augment.scale_min > 0.0 && c.data.augment.scale_min <= c.data.augment.scale_max &&
            c.data.augment.scale_max <= 1.0,
        "data.augment scale range must satisfy 0 < min <= max <= 1", "data.augment.scale_min");
  check(c.data.synthetic.amplitude_min <= c.data.synthetic.amplitude_max, "amplitude_min exceeds amplitude_max",
        "data.synthetic.amplitude_min");
  check(c.data.synthetic.min_shapes <= c.data.synthetic.max_shapes, "min_shapes exceeds max_shapes",
        "data.synthetic.min_shapes");
  check(c.train.batch_size >= 1, "train.batch_size must be at least 1", "train.batch_size");
  check(c.train.base_lr >= 0.0, "train.base_lr must be nonnegative", "train.base_lr");
  check(c.train.warmup_epochs <= c.train.epochs || c.train.epochs == 0, "train.warmup_epochs exceeds train.epochs",
        "train.warmup_epochs");
  check(c.eval.images >= 1, "eval.images must be at least 1", "eval.images");
  check(c.eval.batch_size >= 1, "eval.batch_size must be at least 1", "eval.batch_size");
  check(c.eval.probe_pe_mask_ratio > 0.0 && c.eval.probe_pe_mask_ratio <= 1.0,
        "eval.probe_pe_mask_ratio must lie in (0, 1]", "eval.probe_pe_mask_ratio");
}

inline RunConfig config_from_json(const Json& j) {
  using detail::section;
  RunConfig c;
  detail::ObjectReader root(j, "");
  section(root, "model", [&](detail::ObjectReader& r) {
    r.get("image_size", c.model.image_size);
    r.get("patch_size", c.model.patch_size);
    r.get("channels", c.model.channels);
    r.get("embed_dim", c.model.embed_dim);
    r.get("depth", c.model.depth);
    r.get("heads", c.model.heads);
    r.get("mlp_ratio", c.model.mlp_ratio);
    r.get("decoder_dim", c.model.decoder_dim);
    r.get("decoder_depth", c.model.decoder_depth);
  });
  section(root, "task", [&](detail::ObjectReader& r) {
    r.get("gamma", c.task.gamma);
    r.get("gamma_pos", c.task.gamma_pos);
    r.get("sigma_0", c.task.sigma_0);
    r.get("sigma_T", c.task.sigma_T);
    r.get("tau", c.task.tau);
    r.get("attentive", c.task.attentive);
  });
  section(root, "data", [&](detail::ObjectReader& r) {
    r.get("source", c.data.source);
    r.get("train_path", c.data.train_path);
    r.get("eval_path", c.data.eval_path);
    r.get("train_size", c.data.train_size);
    r.get("eval_size", c.data.eval_size);
    r.get("train_seed", c.data.train_seed);
    r.get("eval_seed", c.data.eval_seed);
    r.get("labels", c.data.labels);
    r.get("mean", c.data.norm.mean);
    r.get("std", c.data.norm.std);
    section(r, "synthetic", [&](detail::ObjectReader& s) {
      s.get("amplitude_min", c.data.synthetic.amplitude_min);
      s.get("amplitude_max", c.data.synthetic.amplitude_max);
      s.get("offset_jitter", c.data.synthetic.offset_jitter);
      s.get("texture", c.data.synthetic.texture);
      s.get("min_shapes", c.data.synthetic.min_shapes);
      s.get("max_shapes", c.data.synthetic.max_shapes);
    });
    section(r, "augment", [&](detail::ObjectReader& s) {
      s.get("enabled", c.data.augment.enabled);
      s.get("scale_min", c.data.augment.scale_min);
      s.get("scale_max", c.data.augment.scale_max);
    });
  });
  section(root, "train", [&](detail::ObjectReader& r) {
    r.get("base_lr", c.train.base_lr);
    r.get("batch_size", c.train.batch_size);
    r.get("epochs", c.train.epochs);
    r.get("warmup_epochs", c.train.warmup_epochs);
    r.get("weight_decay", c.train.weight_decay);
    r.get("beta1", c.train.beta1);
    r.get("beta2", c.train.beta2);
    r.get("eps", c.train.eps);
    r.get("checkpoint_every", c.train.checkpoint_every);
  });
  section(root, "eval", [&](detail::ObjectReader& r) {
    r.get("images", c.eval.images);
    r.get("batch_size", c.eval.batch_size);
    r.get("seed", c.eval.seed);
    r.get("render_gamma", c.eval.render_gamma);
    r.get("render_gamma_pos", c.eval.render_gamma_pos);
    r.get("probe_epochs", c.eval.probe_epochs);
    r.get("probe_batch_size", c.eval.probe_batch_size);
    r.get("probe_lr", c.eval.probe_lr);
    r.get("probe_pe_mask_ratio", c.eval.probe_pe_mask_ratio);
    r.get("probe_train_images", c.eval.probe_train_images);
    r.get("probe_test_images", c.eval.probe_test_images);
  });
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  root.finish();
  validate(c);
  return c;
}

inline Json config_to_json(const RunConfig& c) {
  Json j;
  j["model"] = {{"image_size", c.model.image_size}, {"patch_size", c.model.patch_size},
                {"channels", c.model.channels},     {"embed_dim", c.model.embed_dim},
                {"depth", c.model.depth},           {"heads", c.model.heads},
                {"mlp_ratio", c.model.mlp_ratio},   {"decoder_dim", c.model.decoder_dim},
                {"decoder_depth", c.model.decoder_depth}};
  j["task"] = {{"gamma", c.task.gamma}, {"gamma_pos", c.task.gamma_pos}, {"sigma_0", c.task.sigma_0},
               {"sigma_T", c.task.sigma_T}, {"tau", c.task.tau}, {"attentive", c.task.attentive}};
  const auto& s = c.data.synthetic;
  j["data"] = {{"source", c.data.source},
               {"train_path", c.data.train_path},
               {"eval_path", c.data.eval_path},
               {"train_size", c.data.train_size},
               {"eval_size", c.data.eval_size},
               {"train_seed", c.data.train_seed},
               {"eval_seed", c.data.eval_seed},
               {"labels", c.data.labels},
               {"mean", c.data.norm.mean},
               {"std", c.data.norm.std},
               {"synthetic",
                {{"amplitude_min", s.amplitude_min},
                 {"amplitude_max", s.amplitude_max},
                 {"offset_jitter", s.offset_jitter},
                 {"texture", s.texture},
                 {"min_shapes", s.min_shapes},
                 {"max_shapes", s.max_shapes}}},
               {"augment",
                {{"enabled", c.data.augment.enabled},
                 {"scale_min", c.data.augment.scale_min},
                 {"scale_max", c.data.augment.scale_max}}}};
  j["train"] = {{"base_lr", c.train.base_lr},           {"batch_size", c.train.batch_size},
                {"epochs", c.train.epochs},             {"warmup_epochs", c.train.warmup_epochs},
                {"weight_decay", c.train.weight_decay}, {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},               {"eps", c.train.eps},
                {"checkpoint_every", c.train.checkpoint_every}};
  j["eval"] = {{"images", c.eval.images},
               {"batch_size", c.eval.batch_size},
               {"seed", c.eval.seed},
               {"render_gamma", c.eval.render_gamma},
               {"render_gamma_pos", c.eval.render_gamma_pos},
               {"probe_epochs", c.eval.probe_epochs},
               {"probe_batch_size", c.eval.probe_batch_size},
               {"probe_lr", c.eval.probe_lr},
               {"probe_pe_mask_ratio", c.eval.probe_pe_mask_ratio},
               {"probe_train_images", c.eval.probe_train_images},
               {"probe_test_images", c.eval.probe_test_images}};
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  return j;
}

/// Applies `a.b.c=value` to the document. The value is parsed as JSON when
/// it is valid JSON and taken as a plain string otherwise.
inline void apply_override(Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value", assignment);
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  Json* node = &doc;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override path '" + key + "' crosses a non-object", key);
    node = &(*node)[parts[i]];
    if (node->is_null()) *node = Json::object();
  }
  if (!node->is_object() || parts.empty() || parts.back().empty()) {
    throw ConfigError("bad override path '" + key + "'", key);
  }
  (*node)[parts.back()] = std::move(value);
}

inline Json parse_json_text(const std::string& text, const std::string& origin) {
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError(origin + " is not valid JSON", origin);
  return j;
}

/// Reads `path` (empty path = all defaults), applies overrides, validates.
inline RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  Json doc = Json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string(), path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    doc = parse_json_text(ss.str(), path.string());
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return config_from_json(doc);
}

inline std::string resolved_json(const RunConfig& c) { return config_to_json(c).dump(2) + "\n"; }

inline void write_resolved(const RunConfig& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.resolved.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "config.resolved.json").string());
  out << resolved_json(c);
}

// ---------------------------------------------------------------- datasets

struct Datasets {
  std::unique_ptr<Dataset> train;
  std::unique_ptr<Dataset> eval;
};

inline Datasets make_datasets(const RunConfig& c) {
  Datasets d;
  if (c.data.source == "synthetic") {
    d.train = std::make_unique<SyntheticDataset>(c.data.train_size, c.model.image_size, c.data.train_seed,
                                                 c.model.channels, c.data.synthetic);
    d.eval = std::make_unique<SyntheticDataset>(c.data.eval_size, c.model.image_size, c.data.eval_seed,
                                                c.model.channels, c.data.synthetic);
    return d;
  }
  if (c.data.train_path.empty()) throw ConfigError("cifar10 source needs data.train_path", "data.train_path");
  if (c.model.image_size != 32 || c.model.channels != 3) {
    throw ConfigError("cifar10 images are 32x32x3; set model.image_size=32 and model.channels=3", "model.image_size");
  }
  d.train = std::make_unique<InMemoryDataset>(read_cifar10_bin(c.data.train_path), 10);
  const auto& eval_path = c.data.eval_path.empty() ? c.data.train_path : c.data.eval_path;
  d.eval = std::make_unique<InMemoryDataset>(read_cifar10_bin(eval_path), 10);
  return d;
}

}  // namespace droppos
