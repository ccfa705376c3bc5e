#pragma once

// Command implementations behind the droppos CLI. Each returns a process
// exit code: 0 success, 1 runtime failure, 2 configuration error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "droppos/checkpoint.hpp"
#include "droppos/config.hpp"
#include "droppos/eval.hpp"
#include "droppos/ppm.hpp"
#include "droppos/train.hpp"

namespace droppos {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
  bool random_init = false;
};

/// Runs `body`, mapping exceptions to exit codes and printing the diagnostic.
template <class F>
int guarded(F&& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error";
    if (!e.path().empty()) err << " [" << e.path() << "]";
    err << ": " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

inline std::filesystem::path output_dir(const RunConfig& cfg, const CommonOptions& o) {
  return o.out ? std::filesystem::path(*o.out) : std::filesystem::path(cfg.output_dir);
}

/// Config with --seed/--out folded in as overrides so they show up in the
/// resolved echo.
inline RunConfig resolve(const CommonOptions& o) {
  auto overrides = o.overrides;
  if (o.seed) overrides.push_back("seed=" + std::to_string(*o.seed));
  if (o.out) overrides.push_back("output_dir=" + Json(*o.out).dump());
  return load_config(o.config_path, overrides);
}

/// Model from --checkpoint (architecture from its embedded config when present)
/// or a fresh initialization with --random-init.
inline DropPosModel<float> load_model(RunConfig& cfg, const CommonOptions& o) {
  if (o.random_init == o.checkpoint.has_value()) {
    throw ConfigError("pass exactly one of --checkpoint or --random-init", "checkpoint");
  }
  if (o.random_init) return DropPosModel<float>::init(cfg.model, cfg.seed);
  const auto ck = load_checkpoint(*o.checkpoint);
  if (ck.find("config")) cfg.model = config_from_json(parse_json_text(read_text(ck, "config"), *o.checkpoint)).model;
  return model_from_checkpoint<float>(ck, cfg.model);
}

}  // namespace detail

inline int cmd_pretrain(const CommonOptions& o, const std::optional<std::string>& resume, std::ostream& out = std::cout) {
  const auto cfg = detail::resolve(o);
  const auto dir = detail::output_dir(cfg, o);
  write_resolved(cfg, dir);
  const auto data = make_datasets(cfg);
  std::optional<Checkpoint> from;
  if (resume) from = load_checkpoint(*resume);
  const auto result = pretrain<float>(cfg.pretrain_setup(), *data.train, dir, resolved_json(cfg), from);
  if (!result.metrics.empty()) {
    const auto& last = result.metrics.back();
    out << "pretrained " << result.metrics.size() << " steps; final loss " << last.loss << ", batch accuracy "
        << last.acc << "\n";
  }
  out << "checkpoint: " << result.checkpoint.string() << "\n";
  return kExitOk;
}

inline int cmd_eval_grid(const CommonOptions& o, std::ostream& out = std::cout) {
  auto cfg = detail::resolve(o);
  const auto model = detail::load_model(cfg, o);
  const auto dir = detail::output_dir(cfg, o);
  std::filesystem::create_directories(dir);
  const auto data = make_datasets(cfg);
  const auto grid = accuracy_grid(model, *data.eval, cfg.eval_config());
  detail::write_text(dir / "grid.csv", grid_csv(grid));
  out << "average position accuracy: " << grid.average() << " (" << (dir / "grid.csv").string() << ")\n";
  return kExitOk;
}

struct RenderOptions {
  std::size_t index = 0;
  std::optional<double> gamma;
  std::optional<double> gamma_pos;
  bool gamma_sweep = false;
};

inline std::string render_name(std::size_t index, double gamma, double gamma_pos) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "render_%zu_g%.2f_gp%.2f.ppm", index, gamma, gamma_pos);
  return buf;
}

inline int cmd_render(const CommonOptions& o, const RenderOptions& r, std::ostream& out = std::cout) {
  auto cfg = detail::resolve(o);
  const auto model = detail::load_model(cfg, o);
  const auto dir = detail::output_dir(cfg, o);
  std::filesystem::create_directories(dir);
  const auto data = make_datasets(cfg);
  if (r.index >= data.eval->size()) {
    throw ConfigError("image index " + std::to_string(r.index) + " is outside the eval set", "index");
  }
  const auto img = data.eval->get(r.index);
  std::vector<std::pair<double, double>> settings;
  if (r.gamma_sweep) {
    for (double g : {0.0, 0.25, 0.5, 0.75}) settings.emplace_back(g, r.gamma_pos.value_or(0.95));
  } else {
    settings.emplace_back(r.gamma.value_or(cfg.eval.render_gamma), r.gamma_pos.value_or(cfg.eval.render_gamma_pos));
  }
  for (const auto& [g, gp] : settings) {
    const auto path = dir / render_name(r.index, g, gp);
    write_ppm(render_reconstruction(model, img, g, gp, cfg.eval.seed, r.index, cfg.data.norm), path);
    out << "wrote " << path.string() << "\n";
  }
  return kExitOk;
}

inline int cmd_probe(const CommonOptions& o, const std::string& kind, std::ostream& out = std::cout) {
  auto cfg = detail::resolve(o);
  if (kind != "position" && kind != "class") throw ConfigError("probe kind must be position or class", "kind");
  if (kind == "class" && !cfg.data.labels) {
    throw ConfigError("class probe needs labelled data; set data.labels=true", "data.labels");
  }
  const auto model = detail::load_model(cfg, o);
  const auto dir = detail::output_dir(cfg, o);
  std::filesystem::create_directories(dir);
  const auto data = make_datasets(cfg);
  const auto pc = cfg.probe_config();
  const auto rep = kind == "position" ? linear_position_probe(model, *data.train, *data.eval, pc)
                                      : linear_class_probe(model, *data.train, *data.eval, pc);
  const auto path = dir / ("probe_" + kind + ".csv");
  detail::write_text(path, probe_csv(rep));
  out << kind << " probe accuracy: " << rep.accuracy << " (" << rep.head_params << " head parameters; " << path.string()
      << ")\n";
  return kExitOk;
}

}  // namespace droppos
