#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fg2e/config.hpp"
#include "fg2e/consistency.hpp"
#include "fg2e/optimizer.hpp"
#include "fg2e/sds.hpp"

namespace fg2e {

// Where a run currently stands. Phases: 0 = optimizing geometry,
// 1 = optimizing texture, 2 = generation complete, 3 = editing.
struct OptState {
  IdentityCoeffs beta;
  Tensor u;
  AdamState beta_adam;
  AdamState u_adam;
  long long iteration = 0;        // global trace row counter
  long long phase_iteration = 0;  // progress inside the current phase/round
  int phase = 0;
  int round = 0;  // edit round being executed, 0-based
  Rng rng;
  ConsistencyState consistency;
  // Originals the current edit round regularizes toward (valid in phase 3).
  IdentityCoeffs beta_round0;
  Tensor u_round0;
  // Final consistency weight of each completed edit round, for inspection.
  std::vector<Tensor> weight_history;
};

// Scene assembled from a config: model, decoder, schedule, and the oracle
// instances the job names. context() wires an SdsContext at call time, so
// Scene itself stays movable.
struct Scene {
  FaceModel model;
  TextureDecoder decoder;
  NoiseSchedule sched;
  Camera camera_proto;
  std::vector<Camera> camera_pool;
  std::vector<SHLight> light_pool;
  std::unique_ptr<ScoreOracle> geometry_oracle;
  std::unique_ptr<ScoreOracle> content_oracle;
  std::unique_ptr<ScoreOracle> prior_rgb_oracle;
  std::unique_ptr<ScoreOracle> prior_yuv_oracle;
  int texture_resolution = 0;

  SdsContext context() const;
};

Scene build_scene(const JobConfig& cfg);
OptState initial_state(const JobConfig& cfg);

// Per-round editing oracle; masked_edit regions take their pixel grid from
// the scene dimensions in cfg and answer to the round's instruction token.
std::unique_ptr<ScoreOracle> build_edit_oracle(const OracleSpec& spec, int token,
                                               const JobConfig& cfg, const NoiseSchedule& sched);

// FG2C checkpoint: f64 payloads (bit-exact resume) plus a scene fingerprint
// so a checkpoint is self-describing. Loading verifies the fingerprint and
// the format version and refuses mismatches.
void save_checkpoint(const OptState& state, const JobConfig& cfg, const std::string& path);
OptState load_checkpoint(const std::string& path, const JobConfig& cfg);

// Scene fields recovered from a checkpoint's fingerprint (mode, oracles and
// iteration counts are not part of it). Enough to rebuild the scene for
// export and inspection.
JobConfig config_from_checkpoint(const std::string& path);

struct RunResult {
  std::string out_dir;
  std::string obj_path;
  std::string texture_path;
  std::string trace_path;
  std::string checkpoint_path;
  bool completed = false;
  long long iterations_run = 0;
};

// Geometry phase then texture phase, per cfg.mode. `resume_checkpoint`
// continues a previous run; `stop_after` > 0 returns after that many
// iterations with a checkpoint on disk (an interruption you can resume).
RunResult run_generation(const JobConfig& cfg, const std::string& out_dir,
                         const std::string& resume_checkpoint = "", long long stop_after = 0);

// Edit rounds against the face in `checkpoint_path`. A phase-3 checkpoint
// resumes mid-round; anything else starts the round list fresh.
RunResult run_edit(const JobConfig& cfg, const std::string& checkpoint_path,
                   const std::string& out_dir, long long stop_after = 0);

// Exports for one face state: OBJ with a texture reference, the decoded
// texture PNG, and a preview render PNG from the front camera.
void export_face(const Scene& scene, const IdentityCoeffs& beta, const Tensor& u,
                 const std::string& dir);

// Grayscale heatmap of a consistency weight grid.
void export_weight_png(const Tensor& grid, const std::string& path);

// Applies the FG2E_THREADS cap when the variable is set and positive.
void apply_thread_cap();

}  // namespace fg2e
