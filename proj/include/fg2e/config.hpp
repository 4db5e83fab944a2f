#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fg2e/diffusion.hpp"
#include "fg2e/math.hpp"
#include "fg2e/sds.hpp"
#include "fg2e/toml_lite.hpp"

namespace fg2e {

enum class JobMode { generate, generate_geometry, generate_texture, edit };

// What a config names as the score network for one optimization phase or
// edit round. Kept as a spec (not an instance) so fixtures are only read
// when the phase actually runs.
struct OracleSpec {
  std::string kind;  // "", gaussian_target, depth_banded, masked_edit, fixture, flat, image
  std::string path;  // FG2T latent / PNG / recorded-fixture file for the kinds that load one
  std::vector<Vec3> palette;            // depth_banded bands, near to far
  Vec3 color{0.0, 0.0, 0.0};            // masked_edit fill color
  std::array<int, 4> rect{0, 0, 0, 0};  // masked_edit region [x0,x1) x [y0,y1)
  bool in_uv = true;                    // rect in texture texels (else screen pixels)
  double level = 0.5;                   // "flat" prior gray level
};

struct EditRoundConfig {
  EditTargets targets = EditTargets::texture;
  int token = 0;
  int iterations = 0;  // 0 -> default for the target kind (200 geometry-only, 400 otherwise)
  OracleSpec oracle;
};

// Everything a job needs besides the output directory. Usually parsed from
// job.toml; every field also admits direct programmatic construction.
struct JobConfig {
  JobMode mode = JobMode::generate;

  // scene
  uint64_t seed = 0;  // master seed driving all per-iteration sampling
  uint64_t model_seed = 7;
  uint64_t decoder_seed = 11;
  int v_grid = 16;
  int identity_dims = 8;
  int latent_size = 16;  // texture latent side; the decoder upsamples x4
  int latent_channels = 4;
  int image_size = 64;
  double camera_distance = 0.0;  // 0 -> prototype default

  // diffusion + loss weights
  ScheduleKind schedule_kind = ScheduleKind::linear_beta;
  int schedule_steps = 50;
  SdsConfig sds;

  // optimization loop
  double lr = 0.05;
  int geo_iterations = 200;
  int tex_iterations = 400;
  int views_per_iteration = 1;  // >1 averages gradients over extra sampled views
  int checkpoint_every = 0;     // 0 = checkpoint only at phase ends / on error

  // explicit view/light pools; empty means sample the built-in distributions
  std::vector<double> pool_azimuths;
  std::vector<double> pool_elevations;
  double ambient_radiance = 0.0;  // >0 pins lighting to a single ambient source

  OracleSpec geometry_oracle;
  OracleSpec texture_oracle;
  OracleSpec prior_oracle;

  // editing
  bool carry_weights = false;  // keep the consistency weight across rounds
  bool self_guided = true;     // false freezes the weight at 1 (ablation)
  std::vector<EditRoundConfig> rounds;
};

JobMode parse_job_mode(const std::string& s);
EditTargets parse_edit_targets(const std::string& s);

JobConfig parse_job_config(const TomlTable& t);
JobConfig load_job_config(const std::string& path);

// Structural checks shared by the CLI and library callers: iteration counts
// against the mode, oracle presence per phase, fixture paths readable.
void validate_job_config(const JobConfig& cfg);

}  // namespace fg2e
