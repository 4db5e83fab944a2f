#include "fg2e/pipeline.hpp"

#include <omp.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>

#include "fg2e/image_io.hpp"
#include "fg2e/obj_export.hpp"

namespace fg2e {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------- binary io
// Checkpoints are raw little-endian scalars with f64 tensor payloads; FG2T's
// f32 quantization would break bit-exact resume.

void put_bytes(std::ostream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), std::streamsize(n));
}

void take_bytes(std::istream& in, void* p, size_t n) {
  in.read(static_cast<char*>(p), std::streamsize(n));
  if (!in) throw FormatError("checkpoint: truncated file");
}

template <class T>
void put(std::ostream& out, T v) {
  put_bytes(out, &v, sizeof v);
}

template <class T>
T take(std::istream& in) {
  T v;
  take_bytes(in, &v, sizeof v);
  return v;
}

void put_tensor(std::ostream& out, const Tensor& t) {
  put<uint32_t>(out, uint32_t(t.rank()));
  for (int d : t.dims()) put<uint32_t>(out, uint32_t(d));
  put_bytes(out, t.data(), t.size() * sizeof(double));
}

Tensor take_tensor(std::istream& in) {
  uint32_t rank = take<uint32_t>(in);
  if (rank > 8) throw FormatError("checkpoint: implausible tensor rank");
  if (rank == 0) return Tensor();
  std::vector<int> dims(rank);
  size_t n = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    uint32_t d = take<uint32_t>(in);
    if (d == 0 || d > (1u << 20)) throw FormatError("checkpoint: implausible tensor dim");
    dims[i] = int(d);
    n *= d;
  }
  Tensor t(dims);
  take_bytes(in, t.data(), n * sizeof(double));
  return t;
}

void put_doubles(std::ostream& out, const std::vector<double>& v) {
  put<uint32_t>(out, uint32_t(v.size()));
  put_bytes(out, v.data(), v.size() * sizeof(double));
}

std::vector<double> take_doubles(std::istream& in) {
  uint32_t n = take<uint32_t>(in);
  if (n > (1u << 24)) throw FormatError("checkpoint: implausible vector length");
  std::vector<double> v(n);
  if (n) take_bytes(in, v.data(), n * sizeof(double));
  return v;
}

void put_bytes_vec(std::ostream& out, const std::vector<uint8_t>& v) {
  put<uint32_t>(out, uint32_t(v.size()));
  put_bytes(out, v.data(), v.size());
}

std::vector<uint8_t> take_bytes_vec(std::istream& in) {
  uint32_t n = take<uint32_t>(in);
  if (n > (1u << 26)) throw FormatError("checkpoint: implausible byte-array length");
  std::vector<uint8_t> v(n);
  if (n) take_bytes(in, v.data(), n);
  return v;
}

void put_adam(std::ostream& out, const AdamState& s) {
  put_tensor(out, s.m);
  put_tensor(out, s.v);
  put<int64_t>(out, s.step);
}

AdamState take_adam(std::istream& in) {
  AdamState s;
  s.m = take_tensor(in);
  s.v = take_tensor(in);
  s.step = take<int64_t>(in);
  return s;
}

constexpr uint32_t kCheckpointVersion = 1;

struct Fingerprint {
  uint64_t model_seed = 0, decoder_seed = 0;
  int32_t v_grid = 0, identity_dims = 0, latent_size = 0, latent_channels = 0, image_size = 0;
  int32_t schedule_kind = 0, schedule_steps = 0;
  double camera_distance = 0.0;
};

Fingerprint fingerprint_of(const JobConfig& cfg) {
  Fingerprint f;
  f.model_seed = cfg.model_seed;
  f.decoder_seed = cfg.decoder_seed;
  f.v_grid = cfg.v_grid;
  f.identity_dims = cfg.identity_dims;
  f.latent_size = cfg.latent_size;
  f.latent_channels = cfg.latent_channels;
  f.image_size = cfg.image_size;
  f.schedule_kind = int32_t(cfg.schedule_kind);
  f.schedule_steps = cfg.schedule_steps;
  f.camera_distance = cfg.camera_distance;
  return f;
}

void put_fingerprint(std::ostream& out, const Fingerprint& f) {
  put(out, f.model_seed);
  put(out, f.decoder_seed);
  put(out, f.v_grid);
  put(out, f.identity_dims);
  put(out, f.latent_size);
  put(out, f.latent_channels);
  put(out, f.image_size);
  put(out, f.schedule_kind);
  put(out, f.schedule_steps);
  put(out, f.camera_distance);
}

Fingerprint take_fingerprint(std::istream& in) {
  Fingerprint f;
  f.model_seed = take<uint64_t>(in);
  f.decoder_seed = take<uint64_t>(in);
  f.v_grid = take<int32_t>(in);
  f.identity_dims = take<int32_t>(in);
  f.latent_size = take<int32_t>(in);
  f.latent_channels = take<int32_t>(in);
  f.image_size = take<int32_t>(in);
  f.schedule_kind = take<int32_t>(in);
  f.schedule_steps = take<int32_t>(in);
  f.camera_distance = take<double>(in);
  return f;
}

void open_checkpoint(std::ifstream& in, const std::string& path) {
  in.open(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  char magic[4];
  take_bytes(in, magic, 4);
  if (std::memcmp(magic, "FG2C", 4) != 0) throw FormatError("'" + path + "' is not a checkpoint");
  uint32_t version = take<uint32_t>(in);
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint '" + path + "' is format version " + std::to_string(version) +
                      "; this build reads version " + std::to_string(kCheckpointVersion));
}

// -------------------------------------------------------------- scene build

std::unique_ptr<ScoreOracle> build_phase_oracle(const OracleSpec& spec,
                                                const NoiseSchedule& sched) {
  if (spec.kind.empty()) return nullptr;
  if (spec.kind == "gaussian_target")
    return std::make_unique<GaussianTargetOracle>(load_fg2t(spec.path), sched);
  if (spec.kind == "depth_banded") return std::make_unique<DepthBandedOracle>(spec.palette, sched);
  if (spec.kind == "fixture") return std::make_unique<FixtureOracle>(spec.path);
  throw FormatError("config: oracle kind '" + spec.kind + "' cannot drive a phase");
}

Tensor prior_image(const OracleSpec& spec, int resolution) {
  if (spec.kind == "flat") return Tensor({resolution, resolution, 3}, spec.level);
  Tensor img = read_png(spec.path);
  if (img.rank() != 3 || img.dim(0) != resolution || img.dim(1) != resolution)
    throw FormatError("config: prior image must be " + std::to_string(resolution) + "x" +
                      std::to_string(resolution));
  return img;
}

// ---------------------------------------------------------------- run loops

double grad_norm(const GradReport& rep) {
  double s = 0.0;
  if (rep.grad_beta)
    for (double g : *rep.grad_beta) s += g * g;
  if (rep.grad_u) s += rep.grad_u->dot(*rep.grad_u);
  return std::sqrt(s);
}

// Gradient averaging over extra sampled views; each call consumes its own
// camera/light/noise draws.
GradReport average_views(int views, const std::function<GradReport()>& one) {
  GradReport acc = one();
  for (int v = 1; v < views; ++v) {
    GradReport r = one();
    if (acc.grad_beta && r.grad_beta)
      for (size_t i = 0; i < acc.grad_beta->size(); ++i)
        (*acc.grad_beta)[i] += (*r.grad_beta)[i];
    if (acc.grad_u && r.grad_u) *acc.grad_u += *r.grad_u;
    acc.loss_proxy += r.loss_proxy;
  }
  if (views > 1) {
    double inv = 1.0 / views;
    if (acc.grad_beta)
      for (double& g : *acc.grad_beta) g *= inv;
    if (acc.grad_u) *acc.grad_u *= inv;
    acc.loss_proxy *= inv;
  }
  return acc;
}

// Append-only iteration log; %.17g keeps doubles round-trip exact so resumed
// runs can be compared byte for byte.
class TraceWriter {
 public:
  explicit TraceWriter(const std::string& path) {
    bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
    out_.open(path, std::ios::app);
    if (!out_) throw std::runtime_error("cannot open trace '" + path + "'");
    if (fresh) out_ << "iteration,phase,round,t,loss_proxy,grad_norm\n";
    out_.flush();
  }

  void row(long long iter, int phase, int round, double t, double proxy, double gnorm) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%lld,%d,%d,%.17g,%.17g,%.17g\n", iter, phase, round, t, proxy,
                  gnorm);
    out_ << buf;
    out_.flush();
  }

 private:
  std::ofstream out_;
};

AdamState fresh_beta_adam(const JobConfig& cfg) {
  return cfg.identity_dims > 0 ? make_adam_state({cfg.identity_dims}) : AdamState{};
}

RunResult make_result(const std::string& out_dir) {
  RunResult res;
  res.out_dir = out_dir;
  res.obj_path = out_dir + "/face.obj";
  res.texture_path = out_dir + "/texture.png";
  res.trace_path = out_dir + "/trace.csv";
  res.checkpoint_path = out_dir + "/checkpoint.fg2c";
  return res;
}

}  // namespace

SdsContext Scene::context() const {
  SdsContext ctx;
  ctx.model = &model;
  ctx.decoder = &decoder;
  ctx.sched = sched;
  ctx.camera_proto = camera_proto;
  ctx.camera_pool = camera_pool;
  ctx.light_pool = light_pool;
  ctx.geometry_oracle = geometry_oracle.get();
  ctx.content_oracle = content_oracle.get();
  ctx.prior_rgb_oracle = prior_rgb_oracle.get();
  ctx.prior_yuv_oracle = prior_yuv_oracle.get();
  return ctx;
}

Scene build_scene(const JobConfig& cfg) {
  Scene s;
  s.model = synthetic_face_model(cfg.model_seed, cfg.v_grid, cfg.identity_dims);
  s.decoder = make_texture_decoder(cfg.decoder_seed, cfg.latent_channels);
  s.sched = make_schedule(cfg.schedule_kind, cfg.schedule_steps);
  s.camera_proto.image_size = cfg.image_size;
  if (cfg.camera_distance > 0.0) s.camera_proto.distance = cfg.camera_distance;
  for (double el : cfg.pool_elevations)
    for (double az : cfg.pool_azimuths) {
      Camera cam = s.camera_proto;
      cam.elevation_deg = el;
      cam.azimuth_deg = az;
      s.camera_pool.push_back(cam);
    }
  if (cfg.ambient_radiance > 0.0) s.light_pool.push_back(ambient_light(cfg.ambient_radiance));

  // The decoder turns an R x R latent into a 4R x 4R texture.
  Tensor probe({cfg.latent_size, cfg.latent_size, cfg.latent_channels});
  s.texture_resolution = decode_texture(s.decoder, probe).dim(0);

  s.geometry_oracle = build_phase_oracle(cfg.geometry_oracle, s.sched);
  s.content_oracle = build_phase_oracle(cfg.texture_oracle, s.sched);
  if (!cfg.prior_oracle.kind.empty()) {
    Tensor img = prior_image(cfg.prior_oracle, s.texture_resolution);
    s.prior_rgb_oracle = std::make_unique<GaussianTargetOracle>(encode_image(img), s.sched);
    s.prior_yuv_oracle =
        std::make_unique<GaussianTargetOracle>(encode_image(rgb_to_yuv(img)), s.sched);
  }
  return s;
}

OptState initial_state(const JobConfig& cfg) {
  OptState s;
  s.beta.assign(size_t(cfg.identity_dims), 0.0);
  s.u = Tensor({cfg.latent_size, cfg.latent_size, cfg.latent_channels});
  s.beta_adam = fresh_beta_adam(cfg);
  s.u_adam = make_adam_state(s.u.dims());
  s.rng = Rng(cfg.seed);
  return s;
}

std::unique_ptr<ScoreOracle> build_edit_oracle(const OracleSpec& spec, int token,
                                               const JobConfig& cfg, const NoiseSchedule& sched) {
  if (spec.kind == "gaussian_target")
    return std::make_unique<GaussianTargetOracle>(load_fg2t(spec.path), sched);
  if (spec.kind == "fixture") return std::make_unique<FixtureOracle>(spec.path);
  if (spec.kind == "masked_edit") {
    EditRegion region;
    region.in_uv = spec.in_uv;
    int side = spec.in_uv ? 4 * cfg.latent_size : cfg.image_size;
    region.mask = Tensor({side, side});
    int x0 = std::min(spec.rect[0], side), x1 = std::min(spec.rect[1], side);
    int y0 = std::min(spec.rect[2], side), y1 = std::min(spec.rect[3], side);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) region.mask.at(y, x) = 1.0;
    return std::make_unique<MaskedEditOracle>(region, spec.color, token, sched);
  }
  throw FormatError("config: oracle kind '" + spec.kind + "' cannot drive an edit round");
}

void save_checkpoint(const OptState& state, const JobConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  put_bytes(out, "FG2C", 4);
  put<uint32_t>(out, kCheckpointVersion);
  put_fingerprint(out, fingerprint_of(cfg));

  put<int64_t>(out, state.iteration);
  put<int64_t>(out, state.phase_iteration);
  put<int32_t>(out, state.phase);
  put<int32_t>(out, state.round);
  for (uint64_t w : state.rng.state) put(out, w);
  put_doubles(out, state.beta);
  put_tensor(out, state.u);
  put_adam(out, state.beta_adam);
  put_adam(out, state.u_adam);

  put<int32_t>(out, state.consistency.round);
  put_tensor(out, state.consistency.weight.grid);
  put_tensor(out, state.consistency.snapshot.texture_before);
  const PositionMap& pm = state.consistency.snapshot.posmap_before;
  put_tensor(out, pm.grid);
  put<int32_t>(out, pm.resolution);
  put<int32_t>(out, pm.degenerate_skipped);
  put_bytes_vec(out, pm.valid);

  put_doubles(out, state.beta_round0);
  put_tensor(out, state.u_round0);
  put<uint32_t>(out, uint32_t(state.weight_history.size()));
  for (const Tensor& w : state.weight_history) put_tensor(out, w);

  out.flush();
  if (!out) throw std::runtime_error("short write on checkpoint '" + path + "'");
}

OptState load_checkpoint(const std::string& path, const JobConfig& cfg) {
  std::ifstream in;
  open_checkpoint(in, path);

  Fingerprint want = fingerprint_of(cfg);
  Fingerprint got = take_fingerprint(in);
  auto mismatch = [&](const char* field) {
    throw FormatError(std::string("checkpoint '") + path +
                      "' was produced by a different scene (" + field + " differs)");
  };
  if (got.model_seed != want.model_seed) mismatch("model seed");
  if (got.decoder_seed != want.decoder_seed) mismatch("decoder seed");
  if (got.v_grid != want.v_grid) mismatch("vertex grid");
  if (got.identity_dims != want.identity_dims) mismatch("identity dims");
  if (got.latent_size != want.latent_size) mismatch("latent size");
  if (got.latent_channels != want.latent_channels) mismatch("latent channels");
  if (got.image_size != want.image_size) mismatch("image size");
  if (got.schedule_kind != want.schedule_kind) mismatch("schedule kind");
  if (got.schedule_steps != want.schedule_steps) mismatch("schedule steps");
  if (got.camera_distance != want.camera_distance) mismatch("camera distance");

  OptState s;
  s.iteration = take<int64_t>(in);
  s.phase_iteration = take<int64_t>(in);
  s.phase = take<int32_t>(in);
  s.round = take<int32_t>(in);
  for (uint64_t& w : s.rng.state) w = take<uint64_t>(in);
  s.beta = take_doubles(in);
  s.u = take_tensor(in);
  s.beta_adam = take_adam(in);
  s.u_adam = take_adam(in);

  s.consistency.round = take<int32_t>(in);
  s.consistency.weight.grid = take_tensor(in);
  s.consistency.snapshot.texture_before = take_tensor(in);
  PositionMap& pm = s.consistency.snapshot.posmap_before;
  pm.grid = take_tensor(in);
  pm.resolution = take<int32_t>(in);
  pm.degenerate_skipped = take<int32_t>(in);
  pm.valid = take_bytes_vec(in);

  s.beta_round0 = take_doubles(in);
  s.u_round0 = take_tensor(in);
  uint32_t history = take<uint32_t>(in);
  if (history > (1u << 16)) throw FormatError("checkpoint: implausible history length");
  s.weight_history.resize(history);
  for (Tensor& w : s.weight_history) w = take_tensor(in);
  return s;
}

JobConfig config_from_checkpoint(const std::string& path) {
  std::ifstream in;
  open_checkpoint(in, path);
  Fingerprint f = take_fingerprint(in);
  JobConfig cfg;
  cfg.model_seed = f.model_seed;
  cfg.decoder_seed = f.decoder_seed;
  cfg.v_grid = f.v_grid;
  cfg.identity_dims = f.identity_dims;
  cfg.latent_size = f.latent_size;
  cfg.latent_channels = f.latent_channels;
  cfg.image_size = f.image_size;
  cfg.schedule_kind = ScheduleKind(f.schedule_kind);
  cfg.schedule_steps = f.schedule_steps;
  cfg.camera_distance = f.camera_distance;
  cfg.geo_iterations = 0;
  cfg.tex_iterations = 0;
  return cfg;
}

void export_face(const Scene& scene, const IdentityCoeffs& beta, const Tensor& u,
                 const std::string& dir) {
  Geometry geom = apply_blendshape(scene.model, beta);
  Tensor texture = decode_texture(scene.decoder, u);
  write_png(dir + "/texture.png", texture);
  save_fg2t(texture, dir + "/texture.fg2t");  // full-precision copy of the PNG
  write_obj(dir + "/face.obj", geom, scene.model, "texture.png");

  Camera front = scene.camera_proto;
  front.azimuth_deg = 0.0;
  front.elevation_deg = 0.0;
  FragmentBuffer frag = rasterize(geom, scene.model, front);
  Image preview = shade_textured(frag, texture, geom, scene.model, ambient_light(1.0));
  write_png(dir + "/render.png", preview);
}

void export_weight_png(const Tensor& grid, const std::string& path) {
  if (grid.rank() != 2) throw std::invalid_argument("weight grid must be R x R");
  int r = grid.dim(0);
  Tensor img({r, r, 3});
  for (int y = 0; y < r; ++y)
    for (int x = 0; x < r; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = grid.at(y, x);
  write_png(path, img);
}

void apply_thread_cap() {
  const char* env = std::getenv("FG2E_THREADS");
  if (!env) return;
  int n = std::atoi(env);
  if (n > 0) omp_set_num_threads(n);
}

RunResult run_generation(const JobConfig& cfg, const std::string& out_dir,
                         const std::string& resume_checkpoint, long long stop_after) {
  validate_job_config(cfg);
  if (cfg.mode == JobMode::edit)
    throw std::invalid_argument("run_generation needs a generate mode");
  fs::create_directories(out_dir);

  Scene scene = build_scene(cfg);
  OptState state =
      resume_checkpoint.empty() ? initial_state(cfg) : load_checkpoint(resume_checkpoint, cfg);
  if (state.phase == 3)
    throw std::invalid_argument("checkpoint is mid-edit; run_generation cannot continue it");
  if (cfg.mode == JobMode::generate_texture && state.phase == 2) {
    // A finished checkpoint feeds the decoupled texture stage: keep the face,
    // start the texture ramp fresh. Mid-texture checkpoints (phase 1) still
    // resume in place.
    state.phase = 1;
    state.phase_iteration = 0;
  }

  const long long geo_total = cfg.mode == JobMode::generate_texture ? 0 : cfg.geo_iterations;
  const long long tex_total = cfg.mode == JobMode::generate_geometry ? 0 : cfg.tex_iterations;

  RunResult res = make_result(out_dir);
  TraceWriter trace(res.trace_path);
  SdsContext ctx = scene.context();
  AdamConfig acfg;
  acfg.lr = cfg.lr;

  long long budget = stop_after > 0 ? stop_after : -1;
  auto flush = [&] { save_checkpoint(state, cfg, res.checkpoint_path); };
  Rng iter_start_rng = state.rng;

  try {
    while (state.phase < 2) {
      const long long total = state.phase == 0 ? geo_total : tex_total;
      if (state.phase_iteration >= total) {
        ++state.phase;
        state.phase_iteration = 0;
        continue;
      }
      if (budget == 0) {
        flush();
        return res;
      }
      iter_start_rng = state.rng;
      double t = t_schedule(int(state.phase_iteration), int(total), cfg.sds);
      GradReport rep;
      if (state.phase == 0) {
        rep = average_views(cfg.views_per_iteration,
                            [&] { return geometry_step(ctx, state.beta, t, cfg.sds, state.rng); });
        if (rep.grad_beta) adam_step(state.beta, *rep.grad_beta, state.beta_adam, acfg);
      } else {
        rep = average_views(cfg.views_per_iteration, [&] {
          return texture_step(ctx, state.u, state.beta, t, cfg.sds, state.rng);
        });
        if (rep.grad_u) adam_step(state.u, *rep.grad_u, state.u_adam, acfg);
      }
      ++state.iteration;
      ++state.phase_iteration;
      ++res.iterations_run;
      trace.row(state.iteration, state.phase, 0, t, rep.loss_proxy, grad_norm(rep));
      if (budget > 0) --budget;
      if (cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0) flush();
    }
  } catch (...) {
    state.rng = iter_start_rng;  // checkpoint at the last completed iteration
    flush();
    throw;
  }

  export_face(scene, state.beta, state.u, out_dir);
  flush();
  res.completed = true;
  return res;
}

RunResult run_edit(const JobConfig& cfg, const std::string& checkpoint_path,
                   const std::string& out_dir, long long stop_after) {
  validate_job_config(cfg);
  if (cfg.mode != JobMode::edit) throw std::invalid_argument("run_edit needs mode = edit");
  fs::create_directories(out_dir);

  Scene scene = build_scene(cfg);
  OptState state = load_checkpoint(checkpoint_path, cfg);
  if (state.phase != 3) {  // fresh edit from a generation (or idle) checkpoint
    state.phase = 3;
    state.round = 0;
    state.phase_iteration = 0;
  } else if (state.round >= int(cfg.rounds.size())) {
    // A finished edit checkpoint chains into a new round list. Consistency
    // state carries over, so later sessions keep distrusting earlier edits.
    state.round = 0;
    state.phase_iteration = 0;
  }

  RunResult res = make_result(out_dir);
  TraceWriter trace(res.trace_path);
  SdsContext ctx = scene.context();
  AdamConfig acfg;
  acfg.lr = cfg.lr;

  long long budget = stop_after > 0 ? stop_after : -1;
  auto flush = [&] { save_checkpoint(state, cfg, res.checkpoint_path); };
  Rng iter_start_rng = state.rng;

  try {
    while (state.round < int(cfg.rounds.size())) {
      const EditRoundConfig& rc = cfg.rounds[size_t(state.round)];
      const long long round_total =
          rc.iterations > 0 ? rc.iterations : (rc.targets == EditTargets::geometry ? 200 : 400);
      std::unique_ptr<ScoreOracle> oracle =
          build_edit_oracle(rc.oracle, rc.token, cfg, scene.sched);

      while (state.phase_iteration < round_total) {
        if (budget == 0) {
          flush();
          return res;
        }
        if (state.phase_iteration == 0) {
          // Round start: capture originals, reset the consistency round and
          // the moments. Runs exactly once per round; a resumed mid-round
          // checkpoint skips it.
          state.beta_round0 = state.beta;
          state.u_round0 = state.u;
          Tensor carried;
          bool carry = cfg.carry_weights && state.consistency.round > 0;
          if (carry) carried = state.consistency.weight.grid;
          reset_round(state.consistency, decode_texture(scene.decoder, state.u),
                      apply_blendshape(scene.model, state.beta), scene.model,
                      scene.texture_resolution);
          if (carry) state.consistency.weight.grid = carried;
          state.beta_adam = fresh_beta_adam(cfg);
          state.u_adam = make_adam_state(state.u.dims());
        }

        EditContext edit;
        edit.beta_orig = state.beta_round0;
        edit.u_orig = state.u_round0;
        edit.oracle = oracle.get();
        edit.token = rc.token;
        edit.targets = rc.targets;
        edit.self_guided = cfg.self_guided;

        iter_start_rng = state.rng;
        double t = t_schedule(int(state.phase_iteration), int(round_total), cfg.sds);
        GradReport rep = average_views(cfg.views_per_iteration, [&] {
          return final_edit_step(ctx, edit, state.beta, state.u, state.consistency, t, cfg.sds,
                                 state.rng);
        });
        if (rep.grad_beta) adam_step(state.beta, *rep.grad_beta, state.beta_adam, acfg);
        if (rep.grad_u) adam_step(state.u, *rep.grad_u, state.u_adam, acfg);
        ++state.iteration;
        ++state.phase_iteration;
        ++res.iterations_run;
        trace.row(state.iteration, 3, state.round + 1, t, rep.loss_proxy, grad_norm(rep));
        if (budget > 0) --budget;
        if (cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0) flush();
      }

      // Round complete: per-round artifacts plus the weight it ended with.
      state.weight_history.push_back(state.consistency.weight.grid);
      std::string rdir = out_dir + "/round_" + std::to_string(state.round + 1);
      fs::create_directories(rdir);
      export_face(scene, state.beta, state.u, rdir);
      export_weight_png(state.consistency.weight.grid, rdir + "/weight.png");
      save_fg2t(state.consistency.weight.grid, rdir + "/weight.fg2t");
      ++state.round;
      state.phase_iteration = 0;
    }
  } catch (...) {
    state.rng = iter_start_rng;
    flush();
    throw;
  }

  export_face(scene, state.beta, state.u, out_dir);
  flush();
  res.completed = true;
  return res;
}

}  // namespace fg2e
