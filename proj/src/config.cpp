#include "fg2e/config.hpp"

#include <climits>
#include <filesystem>
#include <set>

namespace fg2e {

namespace {

[[noreturn]] void bad(const std::string& what) { throw FormatError("config: " + what); }

int to_int(const TomlTable& t, const std::string& key, int fallback) {
  long long v = t.get_int(key, fallback);
  if (v < INT_MIN || v > INT_MAX) bad("key '" + key + "' out of range");
  return int(v);
}

uint64_t to_seed(const TomlTable& t, const std::string& key, uint64_t fallback) {
  if (!t.has(key)) return fallback;
  long long v = t.get_int(key);
  if (v < 0) bad("key '" + key + "' must be non-negative");
  return uint64_t(v);
}

std::vector<double> to_numbers(const TomlTable& t, const std::string& key) {
  std::vector<double> out;
  if (!t.has(key)) return out;
  for (const TomlValue& v : t.get_array(key)) {
    if (v.kind != TomlValue::Kind::number) bad("key '" + key + "' must hold numbers");
    out.push_back(v.num);
  }
  return out;
}

Vec3 to_vec3(const TomlTable& t, const std::string& key, Vec3 fallback) {
  if (!t.has(key)) return fallback;
  std::vector<double> v = to_numbers(t, key);
  if (v.size() != 3) bad("key '" + key + "' must be [r, g, b]");
  return {v[0], v[1], v[2]};
}

WMode parse_w_mode(const std::string& s) {
  if (s == "one") return WMode::one;
  if (s == "one_minus_alpha_bar") return WMode::one_minus_alpha_bar;
  bad("unknown w_mode '" + s + "'");
}

ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "linear_beta") return ScheduleKind::linear_beta;
  bad("unknown schedule kind '" + s + "'");
}

// Shared by the per-phase [oracle.*] tables and the flattened per-round
// fields; `kind_key` differs between the two layouts.
OracleSpec parse_oracle(const TomlTable& t, const std::string& prefix,
                        const std::string& kind_key) {
  OracleSpec spec;
  spec.kind = t.get_string(prefix + kind_key, "");
  spec.path = t.get_string(prefix + "path", "");
  spec.level = t.get_number(prefix + "level", 0.5);
  spec.in_uv = t.get_bool(prefix + "in_uv", true);
  spec.color = to_vec3(t, prefix + "color", {0.0, 0.0, 0.0});

  std::vector<double> pal = to_numbers(t, prefix + "palette");
  if (!pal.empty()) {
    if (pal.size() % 3 != 0) bad("'" + prefix + "palette' must be flat RGB triples");
    for (size_t i = 0; i + 2 < pal.size(); i += 3)
      spec.palette.push_back({pal[i], pal[i + 1], pal[i + 2]});
  }

  std::vector<double> rect = to_numbers(t, prefix + "rect");
  if (!rect.empty()) {
    if (rect.size() != 4) bad("'" + prefix + "rect' must be [x0, x1, y0, y1]");
    for (int i = 0; i < 4; ++i) {
      if (rect[i] != double(int(rect[i]))) bad("'" + prefix + "rect' must be integers");
      spec.rect[i] = int(rect[i]);
    }
  }
  return spec;
}

// Distinct round labels under edit.round.*, in file order.
std::vector<std::string> round_labels(const TomlTable& t) {
  std::vector<std::string> labels;
  for (const std::string& key : t.keys_under("edit.round.")) {
    std::string rest = key.substr(std::string("edit.round.").size());
    size_t dot = rest.find('.');
    if (dot == std::string::npos) bad("stray key '" + key + "'; round fields live in [edit.round.<n>]");
    std::string label = rest.substr(0, dot);
    if (labels.empty() || labels.back() != label) {
      for (const std::string& seen : labels)
        if (seen == label) bad("round '" + label + "' appears twice (rounds must be contiguous)");
      labels.push_back(label);
    }
  }
  return labels;
}

const std::set<std::string>& known_scalar_keys() {
  static const std::set<std::string> keys = {
      "job.mode", "job.seed", "job.model_seed", "job.decoder_seed",
      "model.v_grid", "model.identity_dims", "model.latent_size", "model.latent_channels",
      "render.image_size", "render.distance",
      "schedule.kind", "schedule.steps",
      "sds.w_mode", "sds.t_start", "sds.t_end", "sds.lambda_pr", "sds.lambda_yuv",
      "sds.lambda_reg", "sds.fuse_w",
      "optim.lr", "optim.geometry_iterations", "optim.texture_iterations",
      "optim.views_per_iteration", "optim.checkpoint_every",
      "views.azimuths", "views.elevations",
      "lights.ambient",
      "edit.carry_weights", "edit.self_guided",
  };
  return keys;
}

const std::set<std::string>& known_oracle_fields() {
  static const std::set<std::string> keys = {"kind", "path", "level", "in_uv",
                                             "color", "palette", "rect"};
  return keys;
}

const std::set<std::string>& known_round_fields() {
  static const std::set<std::string> keys = {"targets", "token",  "iterations", "oracle",
                                             "path",    "level",  "in_uv",      "color",
                                             "palette", "rect"};
  return keys;
}

// Typos in a declarative config should fail loudly, not silently default.
void reject_unknown_keys(const TomlTable& t) {
  for (const std::string& key : t.keys_under("")) {
    if (known_scalar_keys().count(key)) continue;
    size_t dot = key.rfind('.');
    std::string field = dot == std::string::npos ? key : key.substr(dot + 1);
    if (key.rfind("oracle.geometry.", 0) == 0 || key.rfind("oracle.texture.", 0) == 0 ||
        key.rfind("oracle.prior.", 0) == 0) {
      if (known_oracle_fields().count(field)) continue;
    }
    if (key.rfind("edit.round.", 0) == 0 && known_round_fields().count(field)) continue;
    bad("unrecognized key '" + key + "'");
  }
}

void check_readable(const std::string& what, const std::string& path) {
  if (path.empty()) bad(what + " needs a path");
  if (!std::filesystem::exists(path)) bad(what + " path '" + path + "' does not exist");
}

void validate_oracle(const std::string& label, const OracleSpec& o,
                     const std::set<std::string>& allowed) {
  if (!allowed.count(o.kind)) bad(label + ": oracle kind '" + o.kind + "' not usable here");
  if (o.kind == "gaussian_target" || o.kind == "fixture" || o.kind == "image")
    check_readable(label + " oracle", o.path);
  if (o.kind == "depth_banded" && o.palette.empty()) bad(label + ": depth_banded needs a palette");
  if (o.kind == "masked_edit") {
    if (o.rect[0] > o.rect[1] || o.rect[2] > o.rect[3] || o.rect[0] < 0 || o.rect[2] < 0)
      bad(label + ": rect must be [x0, x1, y0, y1] with 0 <= x0 <= x1, 0 <= y0 <= y1");
  }
}

}  // namespace

JobMode parse_job_mode(const std::string& s) {
  if (s == "generate") return JobMode::generate;
  if (s == "generate_geometry") return JobMode::generate_geometry;
  if (s == "generate_texture") return JobMode::generate_texture;
  if (s == "edit") return JobMode::edit;
  bad("unknown mode '" + s + "'");
}

EditTargets parse_edit_targets(const std::string& s) {
  if (s == "geometry") return EditTargets::geometry;
  if (s == "texture") return EditTargets::texture;
  if (s == "both") return EditTargets::both;
  bad("unknown edit targets '" + s + "'");
}

JobConfig parse_job_config(const TomlTable& t) {
  reject_unknown_keys(t);

  JobConfig cfg;
  cfg.mode = parse_job_mode(t.get_string("job.mode", "generate"));
  cfg.seed = to_seed(t, "job.seed", 0);
  cfg.model_seed = to_seed(t, "job.model_seed", 7);
  cfg.decoder_seed = to_seed(t, "job.decoder_seed", 11);

  cfg.v_grid = to_int(t, "model.v_grid", 16);
  cfg.identity_dims = to_int(t, "model.identity_dims", 8);
  cfg.latent_size = to_int(t, "model.latent_size", 16);
  cfg.latent_channels = to_int(t, "model.latent_channels", 4);

  cfg.image_size = to_int(t, "render.image_size", 64);
  cfg.camera_distance = t.get_number("render.distance", 0.0);

  cfg.schedule_kind = parse_schedule_kind(t.get_string("schedule.kind", "linear_beta"));
  cfg.schedule_steps = to_int(t, "schedule.steps", 50);

  cfg.sds.w_mode = parse_w_mode(t.get_string("sds.w_mode", "one"));
  cfg.sds.t_start = t.get_number("sds.t_start", cfg.sds.t_start);
  cfg.sds.t_end = t.get_number("sds.t_end", cfg.sds.t_end);
  cfg.sds.lambda_pr = t.get_number("sds.lambda_pr", cfg.sds.lambda_pr);
  cfg.sds.lambda_yuv = t.get_number("sds.lambda_yuv", cfg.sds.lambda_yuv);
  cfg.sds.lambda_reg = t.get_number("sds.lambda_reg", cfg.sds.lambda_reg);
  cfg.sds.fuse_w = t.get_number("sds.fuse_w", cfg.sds.fuse_w);

  cfg.lr = t.get_number("optim.lr", 0.05);
  cfg.geo_iterations = to_int(t, "optim.geometry_iterations", 200);
  cfg.tex_iterations = to_int(t, "optim.texture_iterations", 400);
  cfg.views_per_iteration = to_int(t, "optim.views_per_iteration", 1);
  cfg.checkpoint_every = to_int(t, "optim.checkpoint_every", 0);

  cfg.pool_azimuths = to_numbers(t, "views.azimuths");
  cfg.pool_elevations = to_numbers(t, "views.elevations");
  cfg.ambient_radiance = t.get_number("lights.ambient", 0.0);

  cfg.geometry_oracle = parse_oracle(t, "oracle.geometry.", "kind");
  cfg.texture_oracle = parse_oracle(t, "oracle.texture.", "kind");
  cfg.prior_oracle = parse_oracle(t, "oracle.prior.", "kind");

  cfg.carry_weights = t.get_bool("edit.carry_weights", false);
  cfg.self_guided = t.get_bool("edit.self_guided", true);

  for (const std::string& label : round_labels(t)) {
    std::string prefix = "edit.round." + label + ".";
    EditRoundConfig round;
    round.targets = parse_edit_targets(t.get_string(prefix + "targets", "texture"));
    round.token = to_int(t, prefix + "token", 0);
    round.iterations = to_int(t, prefix + "iterations", 0);
    round.oracle = parse_oracle(t, prefix, "oracle");
    cfg.rounds.push_back(std::move(round));
  }
  return cfg;
}

JobConfig load_job_config(const std::string& path) {
  return parse_job_config(load_toml(path));
}

void validate_job_config(const JobConfig& cfg) {
  if (cfg.v_grid < 2) bad("model.v_grid must be at least 2");
  if (cfg.identity_dims < 0) bad("model.identity_dims must be non-negative");
  if (cfg.latent_size < 1 || cfg.latent_channels < 1) bad("latent dimensions must be positive");
  if (cfg.image_size < 8 || cfg.image_size % 4 != 0)
    bad("render.image_size must be a multiple of 4, at least 8");
  if (cfg.camera_distance < 0.0) bad("render.distance must be non-negative");
  if (cfg.schedule_steps < 2) bad("schedule.steps must be at least 2");

  if (!(cfg.sds.t_start > 0.0 && cfg.sds.t_start < 1.0) ||
      !(cfg.sds.t_end > 0.0 && cfg.sds.t_end < 1.0) || cfg.sds.t_end > cfg.sds.t_start)
    bad("sds times must satisfy 0 < t_end <= t_start < 1");
  if (cfg.sds.lambda_pr < 0.0 || cfg.sds.lambda_yuv < 0.0 || cfg.sds.lambda_reg < 0.0)
    bad("sds loss weights must be non-negative");
  if (cfg.sds.fuse_w < 0.0 || cfg.sds.fuse_w > 1.0) bad("sds.fuse_w must lie in [0, 1]");

  if (cfg.lr <= 0.0) bad("optim.lr must be positive");
  if (cfg.geo_iterations < 0 || cfg.tex_iterations < 0) bad("iteration counts must be non-negative");
  if (cfg.views_per_iteration < 1) bad("optim.views_per_iteration must be at least 1");
  if (cfg.checkpoint_every < 0) bad("optim.checkpoint_every must be non-negative");

  if (cfg.pool_azimuths.empty() != cfg.pool_elevations.empty())
    bad("views.azimuths and views.elevations must be given together");
  if (cfg.ambient_radiance < 0.0) bad("lights.ambient must be non-negative");

  bool runs_geo = false, runs_tex = false;
  switch (cfg.mode) {
    case JobMode::generate:
      if (cfg.geo_iterations + cfg.tex_iterations < 1) bad("generate needs at least one iteration");
      runs_geo = cfg.geo_iterations > 0;
      runs_tex = cfg.tex_iterations > 0;
      break;
    case JobMode::generate_geometry:
      if (cfg.geo_iterations < 1) bad("generate_geometry needs geometry_iterations >= 1");
      runs_geo = true;
      break;
    case JobMode::generate_texture:
      if (cfg.tex_iterations < 1) bad("generate_texture needs texture_iterations >= 1");
      runs_tex = true;
      break;
    case JobMode::edit:
      break;
  }

  if (runs_geo)
    validate_oracle("geometry phase", cfg.geometry_oracle, {"gaussian_target", "fixture"});
  if (runs_tex)
    validate_oracle("texture phase", cfg.texture_oracle,
                    {"gaussian_target", "depth_banded", "fixture"});

  bool needs_prior = runs_tex;
  for (size_t i = 0; i < cfg.rounds.size(); ++i) {
    const EditRoundConfig& r = cfg.rounds[i];
    std::string label = "edit round " + std::to_string(i + 1);
    if (cfg.mode != JobMode::edit) bad(label + " given outside edit mode");
    if (r.token < 0) bad(label + ": token must be non-negative");
    if (r.iterations < 0) bad(label + ": iterations must be non-negative");
    validate_oracle(label, r.oracle, {"masked_edit", "gaussian_target", "fixture"});
    if (r.targets != EditTargets::geometry) needs_prior = true;
  }
  if (needs_prior) validate_oracle("texture prior", cfg.prior_oracle, {"flat", "image"});
}

}  // namespace fg2e
