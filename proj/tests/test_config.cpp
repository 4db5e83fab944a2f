#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <string>

#include "fg2e/config.hpp"
#include "fg2e/tensor.hpp"
#include "fg2e/toml_lite.hpp"

using namespace fg2e;

namespace {

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("toml scalar values parse") {
  TomlTable t = parse_toml(
      "name = \"face \\\"A\\\"\"\n"
      "tab = \"a\\tb\"\n"
      "count = 42\n"
      "ratio = -0.75\n"
      "tiny = 1e-3\n"
      "on = true\n"
      "off = false  # trailing comment\n"
      "# full-line comment\n"
      "hash_inside = \"not # a comment\"\n");
  CHECK(t.get_string("name") == "face \"A\"");
  CHECK(t.get_string("tab") == "a\tb");
  CHECK(t.get_int("count") == 42);
  CHECK(t.get_number("ratio") == -0.75);
  CHECK(t.get_number("tiny") == 1e-3);
  CHECK(t.get_bool("on"));
  CHECK_FALSE(t.get_bool("off"));
  CHECK(t.get_string("hash_inside") == "not # a comment");
}

TEST_CASE("toml tables flatten to dotted keys in file order") {
  TomlTable t = parse_toml(
      "top = 1\n"
      "[render]\n"
      "size = 64\n"
      "[oracle.texture]\n"
      "kind = \"depth_banded\"\n"
      "palette = [0.9, 0.1, 0.1, 0.1, 0.1, 0.9]\n"
      "[edit.round.2]\n"
      "token = 5\n"
      "[edit.round.1]\n"
      "token = 3\n");
  CHECK(t.get_number("top") == 1.0);
  CHECK(t.get_int("render.size") == 64);
  CHECK(t.get_string("oracle.texture.kind") == "depth_banded");
  CHECK(t.get_array("oracle.texture.palette").size() == 6);

  auto rounds = t.keys_under("edit.round.");
  REQUIRE(rounds.size() == 2);
  CHECK(rounds[0] == "edit.round.2.token");  // file order, not numeric order
  CHECK(rounds[1] == "edit.round.1.token");
}

TEST_CASE("toml arrays hold mixed scalars but never nest") {
  TomlTable t = parse_toml("a = [1, 2.5, -3]\nempty = []\nwords = [\"x\", \"y\"]\n");
  const auto& a = t.get_array("a");
  REQUIRE(a.size() == 3);
  CHECK(a[0].num == 1.0);
  CHECK(a[1].num == 2.5);
  CHECK(a[2].num == -3.0);
  CHECK(t.get_array("empty").empty());
  CHECK(t.get_array("words")[1].str == "y");
  CHECK_THROWS_AS(parse_toml("bad = [[1], [2]]\n"), FormatError);
}

TEST_CASE("toml syntax errors carry line numbers") {
  CHECK(error_of([] { parse_toml("ok = 1\nbroken\n"); }).find("line 2") != std::string::npos);
  CHECK(error_of([] { parse_toml("s = \"unterminated\n"); }).find("line 1") != std::string::npos);
  CHECK(error_of([] { parse_toml("a = [1, 2\n"); }).find("unterminated array") !=
        std::string::npos);
  CHECK(error_of([] { parse_toml("x = 1\nx = 2\n"); }).find("duplicate") != std::string::npos);
  CHECK(error_of([] { parse_toml("v = whatever\n"); }).find("unrecognized value") !=
        std::string::npos);
  CHECK(error_of([] { parse_toml("k = 1 2\n"); }).find("trailing") != std::string::npos);
  CHECK(error_of([] { parse_toml("[table\nk = 1\n"); }).find("unterminated table") !=
        std::string::npos);
  CHECK(error_of([] { parse_toml("bad key! = 1\n"); }).find("bad key") != std::string::npos);
}

TEST_CASE("toml accessors distinguish missing from mistyped") {
  TomlTable t = parse_toml("n = 3\ns = \"x\"\n");
  CHECK(error_of([&] { t.get_string("absent"); }).find("missing key") != std::string::npos);
  CHECK(error_of([&] { t.get_string("n"); }).find("expected string") != std::string::npos);
  CHECK(error_of([&] { t.get_number("s"); }).find("expected number") != std::string::npos);
  CHECK(error_of([&] { t.get_int("s"); }) != "");
  CHECK(t.get_string("absent", "dflt") == "dflt");
  CHECK(t.get_number("absent", 2.5) == 2.5);
  CHECK(t.get_int("absent", 9) == 9);
  CHECK(t.get_bool("absent", true));
  CHECK_THROWS_AS(parse_toml("f = 1.5\n").get_int("f"), FormatError);
}

TEST_CASE("load_toml reports unreadable paths") {
  CHECK(error_of([] { load_toml("no_such_config.toml"); }).find("cannot open") !=
        std::string::npos);
}

TEST_CASE("job config defaults match the paper settings") {
  JobConfig cfg = parse_job_config(parse_toml(""));
  CHECK(cfg.mode == JobMode::generate);
  CHECK(cfg.lr == 0.05);
  CHECK(cfg.geo_iterations == 200);
  CHECK(cfg.tex_iterations == 400);
  CHECK(cfg.sds.lambda_pr == 0.5);
  CHECK(cfg.sds.lambda_yuv == 0.5);
  CHECK(cfg.sds.lambda_reg == 1.0);
  CHECK(cfg.sds.fuse_w == 0.9);
  CHECK(cfg.v_grid == 16);
  CHECK(cfg.identity_dims == 8);
  CHECK(cfg.image_size == 64);
  CHECK(cfg.views_per_iteration == 1);
  CHECK(cfg.carry_weights == false);
  CHECK(cfg.self_guided == true);
  CHECK(cfg.rounds.empty());
}

TEST_CASE("a full job file parses into every field") {
  TomlTable t = parse_toml(
      "[job]\n"
      "mode = \"edit\"\n"
      "seed = 1234\n"
      "model_seed = 7\n"
      "decoder_seed = 11\n"
      "[model]\n"
      "v_grid = 12\n"
      "identity_dims = 6\n"
      "latent_size = 8\n"
      "latent_channels = 4\n"
      "[render]\n"
      "image_size = 32\n"
      "distance = 1.5\n"
      "[schedule]\n"
      "kind = \"linear_beta\"\n"
      "steps = 40\n"
      "[sds]\n"
      "w_mode = \"one_minus_alpha_bar\"\n"
      "t_start = 0.9\n"
      "t_end = 0.1\n"
      "lambda_pr = 0.25\n"
      "lambda_yuv = 0.75\n"
      "lambda_reg = 2.0\n"
      "fuse_w = 0.8\n"
      "[optim]\n"
      "lr = 0.02\n"
      "geometry_iterations = 50\n"
      "texture_iterations = 60\n"
      "views_per_iteration = 2\n"
      "checkpoint_every = 10\n"
      "[views]\n"
      "azimuths = [0, 30, 330]\n"
      "elevations = [0, 10]\n"
      "[lights]\n"
      "ambient = 1.0\n"
      "[oracle.prior]\n"
      "kind = \"flat\"\n"
      "level = 0.4\n"
      "[edit]\n"
      "carry_weights = true\n"
      "self_guided = false\n"
      "[edit.round.1]\n"
      "targets = \"texture\"\n"
      "token = 4\n"
      "iterations = 30\n"
      "oracle = \"masked_edit\"\n"
      "color = [0.9, 0.2, 0.1]\n"
      "rect = [8, 16, 8, 16]\n"
      "in_uv = true\n"
      "[edit.round.2]\n"
      "targets = \"geometry\"\n"
      "token = 2\n"
      "oracle = \"masked_edit\"\n"
      "color = [0.1, 0.1, 0.1]\n"
      "rect = [0, 4, 0, 4]\n");
  JobConfig cfg = parse_job_config(t);
  CHECK(cfg.mode == JobMode::edit);
  CHECK(cfg.seed == 1234);
  CHECK(cfg.v_grid == 12);
  CHECK(cfg.latent_size == 8);
  CHECK(cfg.image_size == 32);
  CHECK(cfg.camera_distance == 1.5);
  CHECK(cfg.schedule_steps == 40);
  CHECK(cfg.sds.w_mode == WMode::one_minus_alpha_bar);
  CHECK(cfg.sds.t_start == 0.9);
  CHECK(cfg.sds.lambda_pr == 0.25);
  CHECK(cfg.sds.fuse_w == 0.8);
  CHECK(cfg.lr == 0.02);
  CHECK(cfg.views_per_iteration == 2);
  CHECK(cfg.checkpoint_every == 10);
  CHECK(cfg.pool_azimuths.size() == 3);
  CHECK(cfg.pool_elevations.size() == 2);
  CHECK(cfg.ambient_radiance == 1.0);
  CHECK(cfg.prior_oracle.kind == "flat");
  CHECK(cfg.prior_oracle.level == 0.4);
  CHECK(cfg.carry_weights);
  CHECK_FALSE(cfg.self_guided);

  REQUIRE(cfg.rounds.size() == 2);
  CHECK(cfg.rounds[0].targets == EditTargets::texture);
  CHECK(cfg.rounds[0].token == 4);
  CHECK(cfg.rounds[0].iterations == 30);
  CHECK(cfg.rounds[0].oracle.kind == "masked_edit");
  CHECK(cfg.rounds[0].oracle.color.y == 0.2);
  CHECK(cfg.rounds[0].oracle.rect[1] == 16);
  CHECK(cfg.rounds[0].oracle.in_uv);
  CHECK(cfg.rounds[1].targets == EditTargets::geometry);
  CHECK(cfg.rounds[1].iterations == 0);  // defaulted later by target kind

  validate_job_config(cfg);  // well-formed as given
}

TEST_CASE("unknown keys are rejected loudly") {
  CHECK(error_of([] { parse_job_config(parse_toml("[optim]\nlearning_rate = 0.1\n")); })
            .find("unrecognized key") != std::string::npos);
  CHECK(error_of([] { parse_job_config(parse_toml("stray = 1\n")); }).find("unrecognized") !=
        std::string::npos);
  // Recognized sections still reject misspelled fields.
  CHECK(error_of([] { parse_job_config(parse_toml("[oracle.texture]\nkin = \"x\"\n")); })
            .find("unrecognized") != std::string::npos);
}

TEST_CASE("config parse rejects malformed fields") {
  CHECK_THROWS_AS(parse_job_config(parse_toml("[job]\nmode = \"train\"\n")), FormatError);
  CHECK_THROWS_AS(parse_job_config(parse_toml("[job]\nseed = -1\n")), FormatError);
  CHECK_THROWS_AS(parse_job_config(parse_toml("[sds]\nw_mode = \"x\"\n")), FormatError);
  CHECK_THROWS_AS(parse_job_config(parse_toml("[schedule]\nkind = \"cosine\"\n")), FormatError);
  CHECK_THROWS_AS(parse_job_config(parse_toml("[optim]\nlr = \"fast\"\n")), FormatError);
  CHECK_THROWS_AS(
      parse_job_config(parse_toml("[edit.round.1]\noracle = \"masked_edit\"\nrect = [1, 2]\n")),
      FormatError);
  CHECK_THROWS_AS(
      parse_job_config(parse_toml("[oracle.texture]\nkind = \"depth_banded\"\npalette = [1, 2]\n")),
      FormatError);
  CHECK_THROWS_AS(parse_job_config(parse_toml("[edit.round.1]\ntoken = 1\n[edit.round.2]\n"
                                              "token = 2\n[edit.round.1]\niterations = 5\n")),
                  FormatError);  // rounds must be contiguous
}

TEST_CASE("validation enforces the structural invariants") {
  save_fg2t(Tensor({4, 4, 4}), "cfg_target.fg2t");

  JobConfig good;
  good.mode = JobMode::generate_geometry;
  good.geometry_oracle.kind = "gaussian_target";
  good.geometry_oracle.path = "cfg_target.fg2t";
  validate_job_config(good);

  JobConfig cfg = good;
  cfg.geo_iterations = 0;
  CHECK(error_of([&] { validate_job_config(cfg); }).find("geometry_iterations") !=
        std::string::npos);

  cfg = good;
  cfg.geometry_oracle.path = "cfg_missing.fg2t";
  CHECK(error_of([&] { validate_job_config(cfg); }).find("does not exist") != std::string::npos);

  cfg = good;
  cfg.geometry_oracle.kind = "depth_banded";  // needs depth conditioning; not a geometry oracle
  cfg.geometry_oracle.palette = {{1, 0, 0}};
  CHECK(error_of([&] { validate_job_config(cfg); }).find("not usable") != std::string::npos);

  cfg = good;
  cfg.image_size = 30;
  CHECK_THROWS_AS(validate_job_config(cfg), FormatError);

  cfg = good;
  cfg.sds.fuse_w = 1.5;
  CHECK_THROWS_AS(validate_job_config(cfg), FormatError);

  cfg = good;
  cfg.sds.t_end = 0.99;  // above t_start
  CHECK_THROWS_AS(validate_job_config(cfg), FormatError);

  cfg = good;
  cfg.pool_azimuths = {0.0, 30.0};  // elevations missing
  CHECK(error_of([&] { validate_job_config(cfg); }).find("together") != std::string::npos);

  cfg = good;
  cfg.lr = 0.0;
  CHECK_THROWS_AS(validate_job_config(cfg), FormatError);

  cfg = good;
  cfg.views_per_iteration = 0;
  CHECK_THROWS_AS(validate_job_config(cfg), FormatError);

  // Texture generation demands both a content oracle and a prior.
  JobConfig tex;
  tex.mode = JobMode::generate_texture;
  tex.texture_oracle.kind = "depth_banded";
  tex.texture_oracle.palette = {{0.9, 0.1, 0.1}, {0.1, 0.1, 0.9}};
  CHECK(error_of([&] { validate_job_config(tex); }).find("texture prior") != std::string::npos);
  tex.prior_oracle.kind = "flat";
  validate_job_config(tex);
  tex.texture_oracle.palette.clear();
  CHECK(error_of([&] { validate_job_config(tex); }).find("palette") != std::string::npos);

  // Edit rounds demand a prior too, unless geometry-only.
  JobConfig ed;
  ed.mode = JobMode::edit;
  validate_job_config(ed);  // zero rounds is legal
  EditRoundConfig round;
  round.oracle.kind = "masked_edit";
  round.oracle.rect = {0, 4, 0, 4};
  round.targets = EditTargets::geometry;
  ed.rounds.push_back(round);
  validate_job_config(ed);
  ed.rounds[0].targets = EditTargets::texture;
  CHECK(error_of([&] { validate_job_config(ed); }).find("texture prior") != std::string::npos);
  ed.prior_oracle.kind = "flat";
  validate_job_config(ed);
  ed.rounds[0].oracle.rect = {4, 0, 0, 4};  // x0 > x1
  CHECK(error_of([&] { validate_job_config(ed); }).find("rect") != std::string::npos);
  ed.rounds[0].oracle.rect = {0, 4, 0, 4};
  ed.rounds[0].token = -1;
  CHECK_THROWS_AS(validate_job_config(ed), FormatError);
  ed.rounds[0].token = 0;
  ed.mode = JobMode::generate_geometry;
  ed.geometry_oracle = good.geometry_oracle;
  CHECK(error_of([&] { validate_job_config(ed); }).find("outside edit mode") != std::string::npos);
}

TEST_CASE("load_job_config reads a file end to end") {
  write_file("cfg_job.toml",
             "[job]\nmode = \"generate_texture\"\nseed = 3\n"
             "[optim]\ntexture_iterations = 5\n"
             "[oracle.texture]\nkind = \"depth_banded\"\npalette = [0.9, 0.1, 0.1]\n"
             "[oracle.prior]\nkind = \"flat\"\n");
  JobConfig cfg = load_job_config("cfg_job.toml");
  CHECK(cfg.mode == JobMode::generate_texture);
  CHECK(cfg.tex_iterations == 5);
  CHECK(cfg.texture_oracle.palette.size() == 1);
  validate_job_config(cfg);
}
