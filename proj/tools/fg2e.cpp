#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>

#include "fg2e/image_io.hpp"
#include "fg2e/obj_export.hpp"
#include "fg2e/pipeline.hpp"

using namespace fg2e;

namespace {

void print_run(const RunResult& res) {
  if (res.completed) {
    std::printf("done: %lld iterations\n", res.iterations_run);
  } else {
    std::printf("stopped after %lld iterations; resume from %s\n", res.iterations_run,
                res.checkpoint_path.c_str());
  }
  std::printf("  obj:        %s\n", res.obj_path.c_str());
  std::printf("  texture:    %s\n", res.texture_path.c_str());
  std::printf("  trace:      %s\n", res.trace_path.c_str());
  std::printf("  checkpoint: %s\n", res.checkpoint_path.c_str());
}

void weight_stats(const Tensor& grid, const char* label) {
  if (grid.empty()) {
    std::printf("%s: empty (no edit round recorded)\n", label);
    return;
  }
  double lo = 1.0, hi = 0.0, sum = 0.0;
  size_t low_count = 0;
  for (size_t i = 0; i < grid.size(); ++i) {
    double v = grid[i];
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
    if (v < 0.5) ++low_count;
  }
  std::printf("%s: %dx%d  min %.4f  max %.4f  mean %.4f  edited(<0.5) %.1f%%\n", label,
              grid.dim(0), grid.dim(1), lo, hi, sum / double(grid.size()),
              100.0 * double(low_count) / double(grid.size()));
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_cap();

  CLI::App app{"score-distilled face generation and editing"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ckpt_path;
  long long stop_after = 0;

  CLI::App* generate = app.add_subcommand("generate", "optimize geometry and texture");
  generate->add_option("--config", config_path, "job.toml")->required();
  generate->add_option("--out", out_dir, "output directory")->required();
  generate->add_option("--from", ckpt_path, "checkpoint to resume");
  generate->add_option("--stop-after", stop_after, "pause after N iterations");

  CLI::App* edit = app.add_subcommand("edit", "run edit rounds against a checkpoint");
  edit->add_option("--config", config_path, "job.toml")->required();
  edit->add_option("--from", ckpt_path, "checkpoint holding the face to edit")->required();
  edit->add_option("--out", out_dir, "output directory")->required();
  edit->add_option("--stop-after", stop_after, "pause after N iterations");

  bool want_obj = false, want_png = false;
  CLI::App* exp = app.add_subcommand("export", "re-export artifacts from a checkpoint");
  exp->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  exp->add_option("--out", out_dir, "output directory")->default_val(".");
  exp->add_flag("--obj", want_obj, "write the mesh OBJ");
  exp->add_flag("--png", want_png, "write texture and render PNGs");

  int round = 0;
  CLI::App* inspect = app.add_subcommand("inspect-weights", "consistency weight statistics");
  inspect->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  inspect->add_option("--round", round, "completed round number (default: current weight)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) {
      JobConfig cfg = load_job_config(config_path);
      print_run(run_generation(cfg, out_dir, ckpt_path, stop_after));
    } else if (edit->parsed()) {
      JobConfig cfg = load_job_config(config_path);
      print_run(run_edit(cfg, ckpt_path, out_dir, stop_after));
    } else if (exp->parsed()) {
      JobConfig cfg = config_from_checkpoint(ckpt_path);
      Scene scene = build_scene(cfg);
      OptState state = load_checkpoint(ckpt_path, cfg);
      if (!want_obj && !want_png) want_obj = want_png = true;
      std::filesystem::create_directories(out_dir);
      if (want_obj && want_png) {
        export_face(scene, state.beta, state.u, out_dir);
        std::printf("wrote %s/face.obj, texture.png, render.png\n", out_dir.c_str());
      } else if (want_png) {
        Tensor texture = decode_texture(scene.decoder, state.u);
        write_png(out_dir + "/texture.png", texture);
        std::printf("wrote %s/texture.png\n", out_dir.c_str());
      } else {
        Geometry geom = apply_blendshape(scene.model, state.beta);
        write_obj(out_dir + "/face.obj", geom, scene.model, "");
        std::printf("wrote %s/face.obj\n", out_dir.c_str());
      }
    } else if (inspect->parsed()) {
      JobConfig cfg = config_from_checkpoint(ckpt_path);
      OptState state = load_checkpoint(ckpt_path, cfg);
      std::printf("rounds completed: %zu\n", state.weight_history.size());
      if (round > 0) {
        if (size_t(round) > state.weight_history.size()) {
          std::fprintf(stderr, "error: only %zu rounds recorded\n",
                       state.weight_history.size());
          return 1;
        }
        char label[32];
        std::snprintf(label, sizeof label, "round %d", round);
        weight_stats(state.weight_history[size_t(round) - 1], label);
      } else {
        weight_stats(state.consistency.weight.grid, "current");
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
