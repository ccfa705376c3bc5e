// droppos: pretraining, accuracy grids, reconstruction renders and probes.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "droppos/commands.hpp"

namespace {

void add_common(CLI::App* cmd, droppos::CommonOptions& o, bool model_source) {
  cmd->add_option("--config", o.config_path, "JSON run config (defaults when omitted)");
  cmd->add_option("--override", o.overrides, "dotted-path override, e.g. task.gamma=0.5")->take_all();
  cmd->add_option("--seed", o.seed, "run seed (eval seed for eval commands)");
  cmd->add_option("--out", o.out, "output directory");
  if (model_source) {
    cmd->add_option("--checkpoint", o.checkpoint, "checkpoint to evaluate");
    cmd->add_flag("--random-init", o.random_init, "evaluate a freshly initialized model instead");
  }
}

// DROPPOS_THREADS caps Eigen's worker threads (the default build is single-threaded).
int apply_thread_env() {
  const char* env = std::getenv("DROPPOS_THREADS");
  if (!env) return 0;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || n < 1) {
    std::cerr << "config error [DROPPOS_THREADS]: expected a positive integer, got '" << env << "'\n";
    return droppos::kExitConfig;
  }
  Eigen::setNbThreads(static_cast<int>(n));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DropPos position-reconstruction pretraining"};
  app.require_subcommand(1);

  droppos::CommonOptions pre, grid, render, probe;
  std::optional<std::string> resume;
  droppos::RenderOptions ropt;
  std::string kind = "position";

  auto* c_pre = app.add_subcommand("pretrain", "run DropPos pretraining");
  add_common(c_pre, pre, false);
  c_pre->add_option("--resume", resume, "checkpoint to resume from");

  auto* c_grid = app.add_subcommand("eval-grid", "4x4 position accuracy grid");
  add_common(c_grid, grid, true);

  auto* c_render = app.add_subcommand("render", "reconstruction render (PPM)");
  add_common(c_render, render, true);
  c_render->add_option("--index", ropt.index, "eval image index");
  c_render->add_option("--gamma", ropt.gamma, "patch mask ratio");
  c_render->add_option("--gamma-pos", ropt.gamma_pos, "position mask ratio");
  c_render->add_flag("--gamma-sweep", ropt.gamma_sweep, "render gamma in {0, .25, .5, .75} at gamma_pos .95");

  auto* c_probe = app.add_subcommand("probe", "frozen-backbone linear probe");
  add_common(c_probe, probe, true);
  c_probe->add_option("--kind", kind, "position or class")->check(CLI::IsMember({"position", "class"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? droppos::kExitOk : droppos::kExitConfig;
  }
  if (int rc = apply_thread_env()) return rc;

  return droppos::guarded([&] {
    if (*c_pre) return droppos::cmd_pretrain(pre, resume);
    if (*c_grid) return droppos::cmd_eval_grid(grid);
    if (*c_render) return droppos::cmd_render(render, ropt);
    return droppos::cmd_probe(probe, kind);
  });
}
