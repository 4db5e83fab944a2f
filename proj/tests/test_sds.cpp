#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <utility>

#include "fg2e/sds.hpp"

using namespace fg2e;

namespace {

// Hand-built schedule whose middle step has abar exactly 0.5, so the
// gaussian oracle's closed form collapses to grad == z - target.
NoiseSchedule half_schedule() {
  NoiseSchedule s;
  s.alpha_bar = {0.9, 0.5, 0.1};
  return s;
}

// eps_hat is a fixed tensor regardless of input; the score residual is then
// mu - eps, whose Monte Carlo mean must converge to mu.
struct ConstantOracle : ScoreOracle {
  Tensor mu;
  explicit ConstantOracle(Tensor m) : mu(std::move(m)) {}
  Tensor predict_eps(const Tensor&, double, const Condition&) const override { return mu; }
};

struct Scene {
  FaceModel model = synthetic_face_model(7, 8, 4);
  TextureDecoder decoder = make_texture_decoder(11, 4);
  NoiseSchedule sched = make_schedule(ScheduleKind::linear_beta, 50);
  Camera proto;
  Tensor u{{8, 8, 4}};          // decodes to a 32x32 texture
  IdentityCoeffs beta{0.2, -0.1, 0.15, 0.05};

  Scene() {
    proto.image_size = 32;
    Rng r(99);
    for (size_t i = 0; i < u.size(); ++i) u[i] = 0.5 * r.normal();
  }

  SdsContext ctx() const {
    SdsContext c;
    c.model = &model;
    c.decoder = &decoder;
    c.sched = sched;
    c.camera_proto = proto;
    return c;
  }
};

// Replays the camera/light draws a rendering step is about to make.
std::pair<Camera, SHLight> peek_view(const Rng& rng, const Camera& proto) {
  Rng copy = rng;
  Camera cam = sample_camera(copy, proto);
  SHLight light = sample_light(copy);
  return {cam, light};
}

Tensor random_tensor(std::vector<int> dims, uint64_t seed, double scale = 1.0) {
  Tensor t(std::move(dims));
  Rng r(seed);
  for (size_t i = 0; i < t.size(); ++i) t[i] = scale * r.normal();
  return t;
}

double beta_norm(const IdentityCoeffs& g) {
  double s = 0.0;
  for (double v : g) s += v * v;
  return std::sqrt(s);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("time schedule ramps linearly and validates indices") {
  SdsConfig cfg;
  CHECK(t_schedule(0, 400, cfg) == doctest::Approx(0.98).epsilon(1e-12));
  CHECK(t_schedule(399, 400, cfg) == doctest::Approx(0.02).epsilon(1e-12));
  CHECK(t_schedule(200, 401, cfg) == doctest::Approx(0.50).epsilon(1e-12));
  CHECK(t_schedule(0, 1, cfg) == doctest::Approx(0.98).epsilon(1e-12));
  CHECK_THROWS_AS(t_schedule(-1, 10, cfg), std::invalid_argument);
  CHECK_THROWS_AS(t_schedule(10, 10, cfg), std::invalid_argument);
  CHECK_THROWS_AS(t_schedule(0, 0, cfg), std::invalid_argument);

  // Strictly decreasing across the run.
  double prev = 2.0;
  for (int i = 0; i < 10; ++i) {
    double t = t_schedule(i, 10, cfg);
    CHECK(t < prev);
    prev = t;
  }
}

TEST_CASE("view tags follow azimuth sectors") {
  auto tag_of = [](double az) {
    Camera cam;
    cam.azimuth_deg = az;
    return view_tag(cam);
  };
  CHECK(tag_of(0.0) == ViewTag::front);
  CHECK(tag_of(30.0) == ViewTag::front);
  CHECK(tag_of(330.0) == ViewTag::front);
  CHECK(tag_of(60.0) == ViewTag::side);
  CHECK(tag_of(100.0) == ViewTag::side);
  CHECK(tag_of(270.0) == ViewTag::side);
  // Boundary and undefined sectors fall back to front.
  CHECK(tag_of(45.0) == ViewTag::front);
  CHECK(tag_of(135.0) == ViewTag::front);
  CHECK(tag_of(180.0) == ViewTag::front);
  CHECK(tag_of(225.0) == ViewTag::front);
  CHECK(tag_of(315.0) == ViewTag::front);
  // Normalization of wrapped or negative azimuths.
  CHECK(tag_of(360.0 + 60.0) == ViewTag::side);
  CHECK(tag_of(-30.0) == ViewTag::front);
  CHECK(tag_of(-90.0) == ViewTag::side);
}

TEST_CASE("score gradient matches the closed form at abar one half") {
  NoiseSchedule sched = half_schedule();
  Tensor z = random_tensor({4, 4, 3}, 21);
  Tensor target = random_tensor({4, 4, 3}, 22);
  GaussianTargetOracle oracle(target, sched);
  SdsConfig cfg;
  Condition cond;

  Rng rng(5);
  Tensor g = sds_grad(oracle, z, cond, 0.5, cfg, sched, rng);
  for (size_t i = 0; i < g.size(); ++i)
    CHECK(g[i] == doctest::Approx(z[i] - target[i]).epsilon(1e-12));

  // z == target: residual vanishes for any draw.
  GaussianTargetOracle self(z, sched);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor g0 = sds_grad(self, z, cond, 0.5, cfg, sched, rng);
    CHECK(g0.max_abs() < 1e-12);
  }
}

TEST_CASE("score gradient w mode rescales by one minus abar") {
  NoiseSchedule sched = half_schedule();
  Tensor z = random_tensor({3, 3, 3}, 31);
  Tensor target = random_tensor({3, 3, 3}, 32);
  GaussianTargetOracle oracle(target, sched);
  Condition cond;

  SdsConfig one;
  SdsConfig scaled;
  scaled.w_mode = WMode::one_minus_alpha_bar;

  // Same seed, same draws: the two modes differ by exactly w = 1 - abar.
  Tensor g1 = [&] { Rng r(9); return sds_grad(oracle, z, cond, 0.5, one, sched, r); }();
  Tensor g2 = [&] { Rng r(9); return sds_grad(oracle, z, cond, 0.5, scaled, sched, r); }();
  for (size_t i = 0; i < g1.size(); ++i)
    CHECK(g2[i] == doctest::Approx(0.5 * g1[i]).epsilon(1e-12));
}

TEST_CASE("score gradient mean over draws converges to the oracle bias") {
  NoiseSchedule sched = make_schedule(ScheduleKind::linear_beta, 50);
  Tensor mu = random_tensor({4, 4, 3}, 41);
  ConstantOracle oracle(mu);
  Tensor z({4, 4, 3});  // zeros
  SdsConfig cfg;
  Condition cond;

  const int n_draws = 1500;
  Rng rng(77);
  Tensor mean = Tensor::zeros_like(mu);
  for (int i = 0; i < n_draws; ++i) {
    Tensor g = sds_grad(oracle, z, cond, 0.5, cfg, sched, rng);
    mean += g;
  }
  mean *= 1.0 / n_draws;

  // grad = mu - eps, so the estimator mean is mu with per-element std
  // 1/sqrt(N) and pooled std 1/sqrt(N*n).
  const double n_el = double(mu.size());
  double pooled = 0.0;
  double worst = 0.0;
  for (size_t i = 0; i < mu.size(); ++i) {
    double dev = mean[i] - mu[i];
    pooled += dev;
    worst = std::max(worst, std::abs(dev));
  }
  pooled /= n_el;
  CHECK(std::abs(pooled) < 3.0 / std::sqrt(n_draws * n_el));
  CHECK(worst < 5.0 / std::sqrt(double(n_draws)));
}

TEST_CASE("geometry step is stationary when the oracle wants the current view") {
  Scene sc;
  SdsContext ctx = sc.ctx();
  ctx.sched = half_schedule();
  SdsConfig cfg;

  Rng rng(123);
  auto [cam, light] = peek_view(rng, ctx.camera_proto);
  Geometry geom = apply_blendshape(sc.model, sc.beta);
  FragmentBuffer frag = rasterize(geom, sc.model, cam);
  Image img = shade_textureless(frag, ctx.textureless_mode, geom, sc.model, light);
  GaussianTargetOracle oracle(encode_image(img), ctx.sched);
  ctx.geometry_oracle = &oracle;

  GradReport rep = geometry_step(ctx, sc.beta, 0.5, cfg, rng);
  REQUIRE(rep.grad_beta.has_value());
  CHECK(!rep.grad_u.has_value());
  CHECK(rep.grad_beta->size() == sc.model.basis_count());
  CHECK(beta_norm(*rep.grad_beta) < 1e-9);
  CHECK(rep.loss_proxy < 1e-18);
  CHECK(rep.t_used == 0.5);
}

TEST_CASE("geometry step descends toward a different identity's render") {
  Scene sc;
  SdsContext ctx = sc.ctx();
  ctx.sched = half_schedule();
  ctx.alpha_band_px = 0.0;  // interior-only gradient for a clean probe
  SdsConfig cfg;

  IdentityCoeffs beta0(4, 0.0);
  IdentityCoeffs beta_t{0.8, -0.6, 0.5, 0.4};

  Rng rng(321);
  auto [cam, light] = peek_view(rng, ctx.camera_proto);
  Geometry geom_t = apply_blendshape(sc.model, beta_t);
  Image img_t = shade_textureless(rasterize(geom_t, sc.model, cam), ctx.textureless_mode, geom_t,
                                  sc.model, light);
  Tensor target = encode_image(img_t);
  GaussianTargetOracle oracle(target, ctx.sched);
  ctx.geometry_oracle = &oracle;

  GradReport rep = geometry_step(ctx, beta0, 0.5, cfg, rng);
  REQUIRE(rep.grad_beta.has_value());
  CHECK(beta_norm(*rep.grad_beta) > 0.0);

  auto energy = [&](const IdentityCoeffs& b) {
    Geometry g = apply_blendshape(sc.model, b);
    Image im = shade_textureless(rasterize(g, sc.model, cam), ctx.textureless_mode, g, sc.model,
                                 light);
    Tensor z = encode_image(im);
    z -= target;
    return 0.5 * z.dot(z);
  };

  const double e0 = energy(beta0);
  IdentityCoeffs stepped = beta0;
  for (size_t k = 0; k < stepped.size(); ++k) stepped[k] -= 1e-2 * (*rep.grad_beta)[k];
  CHECK(energy(stepped) < e0);
}

TEST_CASE("geometry step handles a model without identity basis") {
  Scene sc;
  sc.model = synthetic_face_model(3, 6, 0);
  SdsContext ctx = sc.ctx();
  ctx.sched = half_schedule();
  SdsConfig cfg;

  Rng rng(55);
  auto [cam, light] = peek_view(rng, ctx.camera_proto);
  Geometry geom = apply_blendshape(sc.model, {});
  Image img = shade_textureless(rasterize(geom, sc.model, cam), ctx.textureless_mode, geom,
                                sc.model, light);
  GaussianTargetOracle oracle(encode_image(img), ctx.sched);
  ctx.geometry_oracle = &oracle;

  GradReport rep = geometry_step(ctx, {}, 0.5, cfg, rng);
  REQUIRE(rep.grad_beta.has_value());
  CHECK(rep.grad_beta->empty());
}

TEST_CASE("texture content step is stationary at its own render") {
  Scene sc;
  SdsContext ctx = sc.ctx();
  ctx.sched = half_schedule();
  SdsConfig cfg;

  Rng rng(777);
  auto [cam, light] = peek_view(rng, ctx.camera_proto);
  Geometry geom = apply_blendshape(sc.model, sc.beta);
  FragmentBuffer frag = rasterize(geom, sc.model, cam);
  Tensor d = decode_texture(sc.decoder, sc.u);
  Image img = shade_textured(frag, d, geom, sc.model, light);
  GaussianTargetOracle oracle(encode_image(img), ctx.sched);
  ctx.content_oracle = &oracle;

  GradReport rep = texture_content_step(ctx, sc.u, sc.beta, 0.5, cfg, rng);
  REQUIRE(rep.grad_u.has_value());
  CHECK(!rep.grad_beta.has_value());
  CHECK(rep.grad_u->max_abs() < 1e-9);
}

TEST_CASE("texture content step responds to a depth banded oracle") {
  Scene sc;
  SdsContext ctx = sc.ctx();
  SdsConfig cfg;

  DepthBandedOracle oracle({Vec3{0.9, 0.1, 0.1}, Vec3{0.1, 0.1, 0.9}}, ctx.sched);
  ctx.content_oracle = &oracle;

  Rng rng(888);
  GradReport rep = texture_content_step(ctx, sc.u, sc.beta, 0.5, cfg, rng);
  REQUIRE(rep.grad_u.has_value());
  CHECK(rep.grad_u->max_abs() > 1e-6);
  CHECK(rep.loss_proxy > 0.0);
}

TEST_CASE("depth banded descent reduces band mismatch energy") {
  Scene sc;
  SdsContext ctx = sc.ctx();
  ctx.sched = half_schedule();
  // Flat lighting keeps the banded target inside the reachable set.
  ctx.light_pool = {ambient_light(1.0)};
  SdsConfig cfg;

  DepthBandedOracle oracle({Vec3{0.85, 0.15, 0.15}, Vec3{0.15, 0.15, 0.85}}, ctx.sched);
  ctx.content_oracle = &oracle;

  // The objective the steps actually descend: latent mismatch against the
  // banded target, averaged over seeded draws from the view distribution.
  Geometry geom = apply_blendshape(sc.model, sc.beta);
  auto mismatch = [&](const Tensor& u) {
    Tensor d = decode_texture(sc.decoder, u);
    Rng eval_rng(777);
    double total = 0.0;
    for (int v = 0; v < 8; ++v) {
      Camera cam = sample_camera(eval_rng, ctx.camera_proto);
      SHLight light = ambient_light(1.0);
      FragmentBuffer frag = rasterize(geom, sc.model, cam);
      Tensor z = encode_image(shade_textured(frag, d, geom, sc.model, light));
      Tensor target = encode_image(oracle.banded_target_image(render_depth(frag)));
      z -= target;
      total += z.dot(z);
    }
    return total;
  };

  Tensor u = sc.u;
  const double before = mismatch(u);
  Rng rng(4242);
  for (int i = 0; i < 50; ++i) {
    GradReport rep = texture_content_step(ctx, u, sc.beta, 0.5, cfg, rng);
    Tensor g = *rep.grad_u;
    g *= 8.0;
    u -= g;
  }
  const double after = mismatch(u);
  CHECK(after < 0.5 * before);
}

TEST_CASE("texture prior step is stationary when both priors want the current map") {
  Scene sc;
  SdsContext ctx = sc.ctx();
  ctx.sched = half_schedule();
  SdsConfig cfg;

  Tensor d = decode_texture(sc.decoder, sc.u);
  GaussianTargetOracle rgb(encode_image(d), ctx.sched);
  GaussianTargetOracle yuv(encode_image(rgb_to_yuv(d)), ctx.sched);
  ctx.prior_rgb_oracle = &rgb;
  ctx.prior_yuv_oracle = &yuv;

  Rng rng(31337);
  GradReport rep = texture_prior_step(ctx, sc.u, 0.5, cfg, rng);
  REQUIRE(rep.grad_u.has_value());
  CHECK(!rep.grad_beta.has_value());
  CHECK(rep.grad_u->max_abs() < 1e-9);
}

TEST_CASE("texture prior step with lambda yuv zero equals the rgb chain") {
  Scene sc;
  SdsContext ctx = sc.ctx();
  SdsConfig cfg;
  cfg.lambda_yuv = 0.0;

  Tensor d = decode_texture(sc.decoder, sc.u);
  GaussianTargetOracle rgb(random_tensor({8, 8, 3}, 61), ctx.sched);
  GaussianTargetOracle yuv(random_tensor({8, 8, 3}, 62), ctx.sched);
  ctx.prior_rgb_oracle = &rgb;
  ctx.prior_yuv_oracle = &yuv;

  Rng rng(5150);
  Rng mirror = rng;
  GradReport rep = texture_prior_step(ctx, sc.u, 0.5, cfg, rng);

  // Recompute the RGB-only chain with the same draws.
  Tensor z_rgb = encode_image(d);
  Tensor g_rgb = sds_grad(rgb, z_rgb, [] {
    Condition c;
    c.tokens = {0};
    return c;
  }(), 0.5, cfg, ctx.sched, mirror);
  Tensor grad_d = encode_image_backward(g_rgb, d.dim(0), d.dim(1));
  Tensor expected = decode_texture_backward(sc.decoder, sc.u, grad_d);

  REQUIRE(rep.grad_u.has_value());
  Tensor diff = *rep.grad_u;
  diff -= expected;
  CHECK(diff.max_abs() == 0.0);
  CHECK(rep.loss_proxy == doctest::Approx(0.5 * g_rgb.dot(g_rgb)).epsilon(1e-12));
}

TEST_CASE("yuv prior flattens brightness variance") {
  Scene sc;
  SdsContext ctx = sc.ctx();
  ctx.sched = half_schedule();
  SdsConfig cfg;

  // Both priors agree on a target whose luma is constant but whose chroma
  // matches the starting texture.
  Tensor d0 = decode_texture(sc.decoder, sc.u);
  Tensor flat = rgb_to_yuv(d0);
  for (int y = 0; y < flat.dim(0); ++y)
    for (int x = 0; x < flat.dim(1); ++x) flat.at(y, x, 0) = 0.4;
  GaussianTargetOracle yuv(encode_image(flat), ctx.sched);
  GaussianTargetOracle rgb(encode_image(yuv_to_rgb(flat)), ctx.sched);
  ctx.prior_rgb_oracle = &rgb;
  ctx.prior_yuv_oracle = &yuv;

  auto luma_var = [&](const Tensor& u) {
    Tensor yuv_map = rgb_to_yuv(decode_texture(sc.decoder, u));
    double mean = 0.0;
    const int n = yuv_map.dim(0) * yuv_map.dim(1);
    for (int y = 0; y < yuv_map.dim(0); ++y)
      for (int x = 0; x < yuv_map.dim(1); ++x) mean += yuv_map.at(y, x, 0);
    mean /= n;
    double var = 0.0;
    for (int y = 0; y < yuv_map.dim(0); ++y)
      for (int x = 0; x < yuv_map.dim(1); ++x) {
        double dev = yuv_map.at(y, x, 0) - mean;
        var += dev * dev;
      }
    return var / n;
  };

  Tensor u = sc.u;
  const double before = luma_var(u);
  Rng rng(606);
  for (int i = 0; i < 100; ++i) {
    GradReport rep = texture_prior_step(ctx, u, 0.5, cfg, rng);
    Tensor g = *rep.grad_u;
    g *= 4.0;
    u -= g;
  }
  CHECK(luma_var(u) < 0.25 * before);
}

TEST_CASE("texture step combines content and prior with the configured weights") {
  Scene sc;
  SdsContext ctx = sc.ctx();
  SdsConfig cfg;
  cfg.lambda_pr = 0.7;

  GaussianTargetOracle content(random_tensor({8, 8, 3}, 71), ctx.sched);
  Tensor d = decode_texture(sc.decoder, sc.u);
  GaussianTargetOracle rgb(encode_image(d), ctx.sched);
  GaussianTargetOracle yuv(encode_image(rgb_to_yuv(d)), ctx.sched);
  ctx.content_oracle = &content;
  ctx.prior_rgb_oracle = &rgb;
  ctx.prior_yuv_oracle = &yuv;

  Rng full_rng(2024);
  Rng part_rng = full_rng;
  GradReport full = texture_step(ctx, sc.u, sc.beta, 0.5, cfg, full_rng);
  GradReport content_rep = texture_content_step(ctx, sc.u, sc.beta, 0.5, cfg, part_rng);
  GradReport prior_rep = texture_prior_step(ctx, sc.u, 0.5, cfg, part_rng);

  // Draw parity: the combined step consumed exactly the two parts' draws.
  CHECK(full_rng.state == part_rng.state);

  REQUIRE(full.grad_u.has_value());
  Tensor manual = *prior_rep.grad_u;
  manual *= cfg.lambda_pr;
  manual += *content_rep.grad_u;
  CHECK(bit_equal(*full.grad_u, manual));
  CHECK(full.loss_proxy ==
        doctest::Approx(content_rep.loss_proxy + cfg.lambda_pr * prior_rep.loss_proxy)
            .epsilon(1e-12));

  // lambda_pr = 0 leaves exactly the content gradient.
  SdsConfig off = cfg;
  off.lambda_pr = 0.0;
  Rng a(2025);
  Rng b = a;
  GradReport combined = texture_step(ctx, sc.u, sc.beta, 0.5, off, a);
  GradReport content_only = texture_content_step(ctx, sc.u, sc.beta, 0.5, off, b);
  Tensor diff = *combined.grad_u;
  diff -= *content_only.grad_u;
  CHECK(diff.max_abs() == 0.0);
}

TEST_CASE("steps consume a fixed draw budget") {
  Scene sc;
  SdsContext ctx = sc.ctx();
  SdsConfig cfg;

  Tensor d = decode_texture(sc.decoder, sc.u);
  GaussianTargetOracle rgb(encode_image(d), ctx.sched);
  GaussianTargetOracle yuv(encode_image(rgb_to_yuv(d)), ctx.sched);
  GaussianTargetOracle geo(random_tensor({8, 8, 3}, 81), ctx.sched);
  ctx.prior_rgb_oracle = &rgb;
  ctx.prior_yuv_oracle = &yuv;
  ctx.geometry_oracle = &geo;

  const int latent_draws = 8 * 8 * 3;

  SUBCASE("texture prior consumes noise only") {
    Rng a(14);
    Rng b = a;
    texture_prior_step(ctx, sc.u, 0.5, cfg, a);
    for (int i = 0; i < 2 * latent_draws; ++i) b.normal();
    CHECK(a.state == b.state);
  }

  SUBCASE("geometry step consumes one camera, one light, one noise image") {
    Rng a(15);
    Rng b = a;
    geometry_step(ctx, sc.beta, 0.5, cfg, a);
    sample_camera(b, ctx.camera_proto);
    sample_light(b);
    for (int i = 0; i < latent_draws; ++i) b.normal();
    CHECK(a.state == b.state);
  }

  SUBCASE("geometry-targeted edits skip the prior draws") {
    EditRegion region;
    region.mask = Tensor({32, 32});
    MaskedEditOracle oracle(region, Vec3{1.0, 0.2, 0.2}, 3, ctx.sched);
    EditContext edit;
    edit.beta_orig = sc.beta;
    edit.u_orig = sc.u;
    edit.oracle = &oracle;
    edit.token = 3;
    edit.targets = EditTargets::geometry;

    Rng a(16);
    Rng b = a;
    edit_step(ctx, edit, sc.beta, sc.u, 0.5, cfg, a);
    sample_camera(b, ctx.camera_proto);
    sample_light(b);
    for (int i = 0; i < latent_draws; ++i) b.normal();
    CHECK(a.state == b.state);

    edit.targets = EditTargets::texture;
    Rng c(16);
    Rng e = c;
    edit_step(ctx, edit, sc.beta, sc.u, 0.5, cfg, c);
    sample_camera(e, ctx.camera_proto);
    sample_light(e);
    for (int i = 0; i < 3 * latent_draws; ++i) e.normal();
    CHECK(c.state == e.state);
  }
}

TEST_CASE("edit step routes gradients to the selected targets") {
  Scene sc;
  SdsContext ctx = sc.ctx();
  SdsConfig cfg;

  Tensor d = decode_texture(sc.decoder, sc.u);
  GaussianTargetOracle rgb(encode_image(d), ctx.sched);
  GaussianTargetOracle yuv(encode_image(rgb_to_yuv(d)), ctx.sched);
  ctx.prior_rgb_oracle = &rgb;
  ctx.prior_yuv_oracle = &yuv;

  EditRegion region;
  region.in_uv = true;
  region.mask = Tensor({32, 32});
  for (int y = 12; y < 20; ++y)
    for (int x = 12; x < 20; ++x) region.mask.at(y, x) = 1.0;
  MaskedEditOracle oracle(region, Vec3{0.9, 0.1, 0.1}, 2, ctx.sched);

  EditContext edit;
  edit.beta_orig = sc.beta;
  edit.u_orig = sc.u;
  edit.oracle = &oracle;
  edit.token = 2;

  Rng rng(1001);
  edit.targets = EditTargets::geometry;
  GradReport rg = edit_step(ctx, edit, sc.beta, sc.u, 0.5, cfg, rng);
  CHECK(rg.grad_beta.has_value());
  CHECK(!rg.grad_u.has_value());

  edit.targets = EditTargets::texture;
  GradReport rt = edit_step(ctx, edit, sc.beta, sc.u, 0.5, cfg, rng);
  CHECK(!rt.grad_beta.has_value());
  CHECK(rt.grad_u.has_value());

  edit.targets = EditTargets::both;
  GradReport rb = edit_step(ctx, edit, sc.beta, sc.u, 0.5, cfg, rng);
  CHECK(rb.grad_beta.has_value());
  CHECK(rb.grad_u.has_value());
  CHECK(rb.t_used == 0.5);
}

TEST_CASE("edit step vanishes at the original face with an empty region") {
  Scene sc;
  SdsContext ctx = sc.ctx();
  ctx.sched = half_schedule();
  SdsConfig cfg;
  cfg.lambda_pr = 0.0;

  Tensor d = decode_texture(sc.decoder, sc.u);
  GaussianTargetOracle rgb(encode_image(d), ctx.sched);
  GaussianTargetOracle yuv(encode_image(rgb_to_yuv(d)), ctx.sched);
  ctx.prior_rgb_oracle = &rgb;
  ctx.prior_yuv_oracle = &yuv;

  EditRegion region;
  region.mask = Tensor({32, 32});  // all-zero screen mask
  MaskedEditOracle oracle(region, Vec3{1.0, 0.0, 0.0}, 1, ctx.sched);

  EditContext edit;
  edit.beta_orig = sc.beta;
  edit.u_orig = sc.u;
  edit.oracle = &oracle;
  edit.token = 1;
  edit.targets = EditTargets::both;

  Rng rng(909);
  GradReport rep = edit_step(ctx, edit, sc.beta, sc.u, 0.5, cfg, rng);
  REQUIRE(rep.grad_beta.has_value());
  REQUIRE(rep.grad_u.has_value());
  CHECK(beta_norm(*rep.grad_beta) < 1e-9);
  CHECK(rep.grad_u->max_abs() < 1e-9);
}

TEST_CASE("masked recolor concentrates texture gradient inside the region") {
  Scene sc;
  SdsContext ctx = sc.ctx();
  SdsConfig cfg;
  cfg.lambda_pr = 0.0;

  Tensor d = decode_texture(sc.decoder, sc.u);
  GaussianTargetOracle rgb(encode_image(d), ctx.sched);
  GaussianTargetOracle yuv(encode_image(rgb_to_yuv(d)), ctx.sched);
  ctx.prior_rgb_oracle = &rgb;
  ctx.prior_yuv_oracle = &yuv;

  EditRegion region;
  region.in_uv = true;
  region.mask = Tensor({32, 32});
  for (int y = 12; y < 20; ++y)
    for (int x = 12; x < 20; ++x) region.mask.at(y, x) = 1.0;
  MaskedEditOracle oracle(region, Vec3{0.95, 0.05, 0.05}, 4, ctx.sched);

  EditContext edit;
  edit.beta_orig = sc.beta;
  edit.u_orig = sc.u;
  edit.oracle = &oracle;
  edit.token = 4;
  edit.targets = EditTargets::texture;

  // Average the latent-gradient mass over several sampled views so one
  // grazing view cannot dominate.
  Tensor mass({8, 8, 4});
  Rng rng(2718);
  for (int i = 0; i < 6; ++i) {
    GradReport rep = edit_step(ctx, edit, sc.beta, sc.u, 0.5, cfg, rng);
    REQUIRE(rep.grad_u.has_value());
    for (size_t k = 0; k < mass.size(); ++k) mass[k] += std::abs((*rep.grad_u)[k]);
  }

  // Region texels 12..19 pull on latent cells 2..5; one extra cell of slack
  // absorbs the decoder footprint and screen-space blending.
  double inside = 0.0;
  double total = 0.0;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 4; ++c) {
        double v = mass.at(y, x, c);
        total += v;
        if (y >= 1 && y <= 6 && x >= 1 && x <= 6) inside += v;
      }
  REQUIRE(total > 0.0);
  CHECK(inside / total >= 0.8);
}

TEST_CASE("final edit step matches edit step when regularization is off") {
  Scene sc;
  SdsContext ctx = sc.ctx();
  SdsConfig cfg;
  cfg.lambda_pr = 0.0;
  cfg.lambda_reg = 0.0;

  Tensor d = decode_texture(sc.decoder, sc.u);
  GaussianTargetOracle rgb(encode_image(d), ctx.sched);
  GaussianTargetOracle yuv(encode_image(rgb_to_yuv(d)), ctx.sched);
  ctx.prior_rgb_oracle = &rgb;
  ctx.prior_yuv_oracle = &yuv;

  EditRegion region;
  region.in_uv = true;
  region.mask = Tensor({32, 32});
  for (int y = 10; y < 22; ++y)
    for (int x = 10; x < 22; ++x) region.mask.at(y, x) = 1.0;
  MaskedEditOracle oracle(region, Vec3{0.9, 0.1, 0.1}, 2, ctx.sched);

  EditContext edit;
  edit.beta_orig = sc.beta;
  edit.u_orig = sc.u;
  edit.oracle = &oracle;
  edit.token = 2;
  edit.targets = EditTargets::both;

  Geometry geom = apply_blendshape(sc.model, sc.beta);
  ConsistencyState state;
  reset_round(state, decode_texture(sc.decoder, sc.u), geom, sc.model, 32);

  Rng r1(31);
  Rng r2(31);
  GradReport rf = final_edit_step(ctx, edit, sc.beta, sc.u, state, 0.5, cfg, r1);
  GradReport re = edit_step(ctx, edit, sc.beta, sc.u, 0.5, cfg, r2);

  Tensor du = *rf.grad_u;
  du -= *re.grad_u;
  CHECK(du.max_abs() == 0.0);
  for (size_t k = 0; k < rf.grad_beta->size(); ++k)
    CHECK((*rf.grad_beta)[k] == (*re.grad_beta)[k]);
  CHECK(rf.loss_proxy == re.loss_proxy);

  // The consistency weight still absorbed this view's attention.
  double mn = 1.0;
  for (size_t i = 0; i < state.weight.grid.size(); ++i)
    mn = std::min(mn, state.weight.grid[i]);
  CHECK(mn < 1.0);

  // Zeroed weight kills the regularizer even at high lambda_reg.
  SdsConfig hot = cfg;
  hot.lambda_reg = 5.0;
  Tensor u2 = sc.u;
  u2 += random_tensor({8, 8, 4}, 91, 0.2);
  ConsistencyState zeroed;
  reset_round(zeroed, decode_texture(sc.decoder, sc.u), geom, sc.model, 32);
  for (size_t i = 0; i < zeroed.weight.grid.size(); ++i) zeroed.weight.grid[i] = 0.0;
  edit.self_guided = false;  // freeze the weight at zero
  Rng r3(32);
  Rng r4(32);
  GradReport rz = final_edit_step(ctx, edit, sc.beta, u2, zeroed, 0.5, hot, r3);
  GradReport rb = edit_step(ctx, edit, sc.beta, u2, 0.5, hot, r4);
  Tensor dz = *rz.grad_u;
  dz -= *rb.grad_u;
  CHECK(dz.max_abs() == 0.0);
  CHECK(rz.loss_proxy == rb.loss_proxy);
}

TEST_CASE("final edit step regularizer recomposes from its parts") {
  Scene sc;
  SdsContext ctx = sc.ctx();
  SdsConfig cfg;
  cfg.lambda_pr = 0.0;
  cfg.lambda_reg = 0.7;

  Tensor d = decode_texture(sc.decoder, sc.u);
  GaussianTargetOracle rgb(encode_image(d), ctx.sched);
  GaussianTargetOracle yuv(encode_image(rgb_to_yuv(d)), ctx.sched);
  ctx.prior_rgb_oracle = &rgb;
  ctx.prior_yuv_oracle = &yuv;

  EditRegion region;
  region.in_uv = true;
  region.mask = Tensor({32, 32});
  for (int y = 8; y < 24; ++y)
    for (int x = 8; x < 24; ++x) region.mask.at(y, x) = 1.0;
  MaskedEditOracle oracle(region, Vec3{0.2, 0.8, 0.2}, 6, ctx.sched);

  EditContext edit;
  edit.beta_orig = sc.beta;
  edit.u_orig = sc.u;
  edit.oracle = &oracle;
  edit.token = 6;
  edit.targets = EditTargets::both;
  edit.self_guided = false;  // keep the weight fixed so the reg is reproducible

  // Drift both parameters away from the snapshot so the regularizer bites.
  Tensor u2 = sc.u;
  u2 += random_tensor({8, 8, 4}, 92, 0.3);
  IdentityCoeffs beta2 = sc.beta;
  beta2[1] += 0.4;

  Geometry snap_geom = apply_blendshape(sc.model, sc.beta);
  ConsistencyState state;
  reset_round(state, decode_texture(sc.decoder, sc.u), snap_geom, sc.model, 32);

  Rng r1(404);
  Rng r2(404);
  GradReport rf = final_edit_step(ctx, edit, beta2, u2, state, 0.5, cfg, r1);
  GradReport re = edit_step(ctx, edit, beta2, u2, 0.5, cfg, r2);

  Geometry geom2 = apply_blendshape(sc.model, beta2);
  PositionMap posmap = unwrap_position_map(geom2, sc.model, 32);
  RegGrads reg =
      reg_losses(state.snapshot, decode_texture(sc.decoder, u2), posmap, state.weight);
  CHECK(reg.loss_tex > 0.0);
  CHECK(reg.loss_geo > 0.0);

  Tensor expected_u = decode_texture_backward(sc.decoder, u2, reg.grad_texture);
  expected_u *= cfg.lambda_reg;
  expected_u += *re.grad_u;
  Tensor du = *rf.grad_u;
  du -= expected_u;
  CHECK(du.max_abs() == 0.0);

  IdentityCoeffs reg_beta =
      blendshape_backward(sc.model, unwrap_position_map_backward(sc.model, 32, reg.grad_posmap));
  for (size_t k = 0; k < rf.grad_beta->size(); ++k)
    CHECK((*rf.grad_beta)[k] ==
          doctest::Approx((*re.grad_beta)[k] + cfg.lambda_reg * reg_beta[k]).epsilon(1e-12));
  CHECK(rf.loss_proxy ==
        doctest::Approx(re.loss_proxy + cfg.lambda_reg * (reg.loss_tex + reg.loss_geo))
            .epsilon(1e-12));
}

TEST_CASE("consistency weight drops inside the edited region only") {
  Scene sc;
  SdsContext ctx = sc.ctx();
  SdsConfig cfg;
  cfg.lambda_pr = 0.0;

  Tensor d = decode_texture(sc.decoder, sc.u);
  GaussianTargetOracle rgb(encode_image(d), ctx.sched);
  GaussianTargetOracle yuv(encode_image(rgb_to_yuv(d)), ctx.sched);
  ctx.prior_rgb_oracle = &rgb;
  ctx.prior_yuv_oracle = &yuv;

  EditRegion region;
  region.in_uv = true;
  region.mask = Tensor({32, 32});
  for (int y = 12; y < 20; ++y)
    for (int x = 12; x < 20; ++x) region.mask.at(y, x) = 1.0;
  MaskedEditOracle oracle(region, Vec3{0.9, 0.2, 0.2}, 5, ctx.sched);

  EditContext edit;
  edit.beta_orig = sc.beta;
  edit.u_orig = sc.u;
  edit.oracle = &oracle;
  edit.token = 5;
  edit.targets = EditTargets::texture;

  Geometry geom = apply_blendshape(sc.model, sc.beta);
  ConsistencyState state;
  reset_round(state, decode_texture(sc.decoder, sc.u), geom, sc.model, 32);

  Rng rng(112);
  for (int i = 0; i < 3; ++i)
    final_edit_step(ctx, edit, sc.beta, sc.u, state, 0.5, cfg, rng);

  double sum_in = 0.0, sum_out = 0.0;
  int n_in = 0, n_out = 0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      double w = state.weight.grid.at(y, x);
      CHECK(w >= 0.0);
      CHECK(w <= 1.0);
      // Two-texel margin between in and out absorbs attention blur.
      bool in_core = y >= 13 && y < 19 && x >= 13 && x < 19;
      bool out_far = y < 9 || y >= 23 || x < 9 || x >= 23;
      if (in_core) {
        sum_in += w;
        ++n_in;
      } else if (out_far) {
        sum_out += w;
        ++n_out;
      }
    }
  REQUIRE(n_in > 0);
  REQUIRE(n_out > 0);
  CHECK(sum_in / n_in < sum_out / n_out);

  // The ablation flag leaves the weight untouched.
  ConsistencyState frozen;
  reset_round(frozen, decode_texture(sc.decoder, sc.u), geom, sc.model, 32);
  edit.self_guided = false;
  Rng rng2(113);
  final_edit_step(ctx, edit, sc.beta, sc.u, frozen, 0.5, cfg, rng2);
  for (size_t i = 0; i < frozen.weight.grid.size(); ++i)
    CHECK(frozen.weight.grid[i] == 1.0);
}

TEST_CASE("step reports replay bit exactly from the seed") {
  Scene sc;
  SdsContext ctx = sc.ctx();
  SdsConfig cfg;

  Tensor d = decode_texture(sc.decoder, sc.u);
  GaussianTargetOracle geo(random_tensor({8, 8, 3}, 95), ctx.sched);
  GaussianTargetOracle content(random_tensor({8, 8, 3}, 96), ctx.sched);
  GaussianTargetOracle rgb(encode_image(d), ctx.sched);
  GaussianTargetOracle yuv(encode_image(rgb_to_yuv(d)), ctx.sched);
  ctx.geometry_oracle = &geo;
  ctx.content_oracle = &content;
  ctx.prior_rgb_oracle = &rgb;
  ctx.prior_yuv_oracle = &yuv;

  EditRegion region;
  region.in_uv = true;
  region.mask = Tensor({32, 32});
  for (int y = 12; y < 20; ++y)
    for (int x = 12; x < 20; ++x) region.mask.at(y, x) = 1.0;
  MaskedEditOracle oracle(region, Vec3{0.8, 0.3, 0.3}, 7, ctx.sched);
  EditContext edit;
  edit.beta_orig = sc.beta;
  edit.u_orig = sc.u;
  edit.oracle = &oracle;
  edit.token = 7;
  edit.targets = EditTargets::both;

  Geometry geom = apply_blendshape(sc.model, sc.beta);

  auto run = [&](uint64_t seed) {
    Rng rng(seed);
    ConsistencyState state;
    reset_round(state, decode_texture(sc.decoder, sc.u), geom, sc.model, 32);
    std::vector<GradReport> reps;
    reps.push_back(geometry_step(ctx, sc.beta, 0.9, cfg, rng));
    reps.push_back(texture_step(ctx, sc.u, sc.beta, 0.7, cfg, rng));
    reps.push_back(edit_step(ctx, edit, sc.beta, sc.u, 0.5, cfg, rng));
    reps.push_back(final_edit_step(ctx, edit, sc.beta, sc.u, state, 0.3, cfg, rng));
    return reps;
  };

  auto a = run(1234);
  auto b = run(1234);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].loss_proxy == b[i].loss_proxy);
    if (a[i].grad_u) CHECK(bit_equal(*a[i].grad_u, *b[i].grad_u));
    if (a[i].grad_beta) {
      REQUIRE(b[i].grad_beta.has_value());
      for (size_t k = 0; k < a[i].grad_beta->size(); ++k)
        CHECK((*a[i].grad_beta)[k] == (*b[i].grad_beta)[k]);
    }
  }

  auto c = run(1235);
  bool any_diff = false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].loss_proxy != c[i].loss_proxy) any_diff = true;
  CHECK(any_diff);
}
