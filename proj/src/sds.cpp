#include "fg2e/sds.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace fg2e {

double t_schedule(int iter, int total, const SdsConfig& cfg) {
  if (total < 1 || iter < 0 || iter >= total) throw std::invalid_argument("bad schedule index");
  if (total == 1) return cfg.t_start;
  double f = double(iter) / double(total - 1);
  return cfg.t_start + (cfg.t_end - cfg.t_start) * f;
}

ViewTag view_tag(const Camera& cam) {
  double az = std::fmod(cam.azimuth_deg, 360.0);
  if (az < 0.0) az += 360.0;
  if ((az > 45.0 && az < 135.0) || (az > 225.0 && az < 315.0)) return ViewTag::side;
  return ViewTag::front;
}

namespace {

double w_of_t(const SdsConfig& cfg, const NoiseSchedule& sched, double t) {
  return cfg.w_mode == WMode::one ? 1.0 : 1.0 - sched.alpha_bar_at(t);
}

Tensor draw_normal(std::vector<int> dims, Rng& rng) {
  Tensor eps(std::move(dims));
  for (size_t i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
  return eps;
}

// One camera draw then one light draw, honoring any explicit pools.
std::pair<Camera, SHLight> sample_view(const SdsContext& ctx, Rng& rng) {
  Camera cam = ctx.camera_pool.empty()
                   ? sample_camera(rng, ctx.camera_proto)
                   : ctx.camera_pool[size_t(rng.uniform_index(int(ctx.camera_pool.size())))];
  SHLight light = ctx.light_pool.empty()
                      ? sample_light(rng)
                      : ctx.light_pool[size_t(rng.uniform_index(int(ctx.light_pool.size())))];
  return {cam, light};
}

}  // namespace

Tensor sds_grad(const ScoreOracle& oracle, const Tensor& z, const Condition& cond, double t,
                const SdsConfig& cfg, const NoiseSchedule& sched, Rng& rng) {
  Tensor eps = draw_normal(z.dims(), rng);
  Tensor z_t = add_noise(z, t, eps, sched);
  Tensor eps_hat = oracle.predict_eps(z_t, t, cond);
  Tensor grad = eps_hat - eps;
  grad *= w_of_t(cfg, sched, t);
  return grad;
}

GradReport geometry_step(const SdsContext& ctx, const IdentityCoeffs& beta, double t,
                         const SdsConfig& cfg, Rng& rng) {
  if (!ctx.geometry_oracle) throw std::invalid_argument("geometry oracle not configured");
  auto [cam, light] = sample_view(ctx, rng);

  Geometry geom = apply_blendshape(*ctx.model, beta);
  FragmentBuffer frag = rasterize(geom, *ctx.model, cam);
  Image img = shade_textureless(frag, ctx.textureless_mode, geom, *ctx.model, light);
  Tensor z = encode_image(img);

  Condition cond;
  cond.view_tag = view_tag(cam);
  Tensor g_z = sds_grad(*ctx.geometry_oracle, z, cond, t, cfg, ctx.sched, rng);

  Tensor grad_img = encode_image_backward(g_z, img.dim(0), img.dim(1));
  std::vector<Vec3> grad_vertices = shade_textureless_backward_vertices(
      frag, grad_img, ctx.textureless_mode, geom, *ctx.model, light, cam, ctx.alpha_band_px);

  GradReport rep;
  rep.grad_beta = blendshape_backward(*ctx.model, grad_vertices);
  rep.loss_proxy = 0.5 * g_z.dot(g_z);
  rep.t_used = t;
  return rep;
}

GradReport texture_content_step(const SdsContext& ctx, const Tensor& u,
                                const IdentityCoeffs& beta_frozen, double t, const SdsConfig& cfg,
                                Rng& rng) {
  if (!ctx.content_oracle) throw std::invalid_argument("content oracle not configured");
  auto [cam, light] = sample_view(ctx, rng);

  Geometry geom = apply_blendshape(*ctx.model, beta_frozen);
  FragmentBuffer frag = rasterize(geom, *ctx.model, cam);
  Tensor d = decode_texture(*ctx.decoder, u);
  Image img = shade_textured(frag, d, geom, *ctx.model, light);
  Tensor z = encode_image(img);

  Condition cond;
  cond.view_tag = view_tag(cam);
  cond.depth = render_depth(frag);
  Tensor g_z = sds_grad(*ctx.content_oracle, z, cond, t, cfg, ctx.sched, rng);

  Tensor grad_img = encode_image_backward(g_z, img.dim(0), img.dim(1));
  Tensor grad_tex =
      shade_textured_backward_texture(frag, grad_img, d, geom, *ctx.model, light);

  GradReport rep;
  rep.grad_u = decode_texture_backward(*ctx.decoder, u, grad_tex);
  rep.loss_proxy = 0.5 * g_z.dot(g_z);
  rep.t_used = t;
  return rep;
}

GradReport texture_prior_step(const SdsContext& ctx, const Tensor& u, double t,
                              const SdsConfig& cfg, Rng& rng) {
  if (!ctx.prior_rgb_oracle || !ctx.prior_yuv_oracle)
    throw std::invalid_argument("prior oracles not configured");

  Tensor d = decode_texture(*ctx.decoder, u);
  Condition cond;
  cond.tokens = {ctx.prior_token};

  // RGB prior directly on the texture's own latent.
  Tensor z_rgb = encode_image(d);
  Tensor g_rgb = sds_grad(*ctx.prior_rgb_oracle, z_rgb, cond, t, cfg, ctx.sched, rng);
  Tensor grad_d = encode_image_backward(g_rgb, d.dim(0), d.dim(1));

  // YUV prior on the converted texture, pulled back through the transform.
  Tensor dp = rgb_to_yuv(d);
  Tensor z_yuv = encode_image(dp);
  Tensor g_yuv = sds_grad(*ctx.prior_yuv_oracle, z_yuv, cond, t, cfg, ctx.sched, rng);
  Tensor grad_dp = encode_image_backward(g_yuv, dp.dim(0), dp.dim(1));
  grad_dp = rgb_to_yuv_backward(grad_dp);
  grad_dp *= cfg.lambda_yuv;
  grad_d += grad_dp;

  GradReport rep;
  rep.grad_u = decode_texture_backward(*ctx.decoder, u, grad_d);
  rep.loss_proxy = 0.5 * g_rgb.dot(g_rgb) + cfg.lambda_yuv * 0.5 * g_yuv.dot(g_yuv);
  rep.t_used = t;
  return rep;
}

GradReport texture_step(const SdsContext& ctx, const Tensor& u, const IdentityCoeffs& beta,
                        double t, const SdsConfig& cfg, Rng& rng) {
  GradReport content = texture_content_step(ctx, u, beta, t, cfg, rng);
  GradReport prior = texture_prior_step(ctx, u, t, cfg, rng);

  GradReport rep;
  Tensor g = *prior.grad_u;
  g *= cfg.lambda_pr;
  g += *content.grad_u;
  rep.grad_u = std::move(g);
  rep.loss_proxy = content.loss_proxy + cfg.lambda_pr * prior.loss_proxy;
  rep.t_used = t;
  return rep;
}

namespace {

struct EditCore {
  GradReport report;
  FragmentBuffer frag;       // current-face view
  Tensor attention;          // empty when the oracle exposes none
  Tensor texture;            // decode(u), reused by the regularizer
  Geometry geom;             // current-face geometry
};

EditCore edit_core(const SdsContext& ctx, const EditContext& edit, const IdentityCoeffs& beta,
                   const Tensor& u, double t, const SdsConfig& cfg, Rng& rng) {
  if (!edit.oracle) throw std::invalid_argument("edit oracle not configured");
  auto [cam, light] = sample_view(ctx, rng);

  EditCore core;
  core.geom = apply_blendshape(*ctx.model, beta);
  core.frag = rasterize(core.geom, *ctx.model, cam);
  core.texture = decode_texture(*ctx.decoder, u);
  Image img = shade_textured(core.frag, core.texture, core.geom, *ctx.model, light);
  Tensor z = encode_image(img);

  // The oracle conditions on the pre-edit face seen from the same view.
  Geometry geom_o = apply_blendshape(*ctx.model, edit.beta_orig);
  FragmentBuffer frag_o = rasterize(geom_o, *ctx.model, cam);
  Tensor tex_o = decode_texture(*ctx.decoder, edit.u_orig);
  Image img_o = shade_textured(frag_o, tex_o, geom_o, *ctx.model, light);

  Condition cond;
  cond.tokens = {edit.token};
  cond.view_tag = view_tag(cam);
  cond.original_latent = encode_image(img_o);
  cond.screen_uv = screen_uv_map(core.frag, *ctx.model);

  // Inline sds_grad so the noised latent stays available for the attention
  // query; the draw order matches sds_grad exactly.
  Tensor eps = Tensor(z.dims());
  for (size_t i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
  Tensor z_t = add_noise(z, t, eps, ctx.sched);
  Tensor eps_hat = edit.oracle->predict_eps(z_t, t, cond);
  Tensor g_z = eps_hat - eps;
  g_z *= w_of_t(cfg, ctx.sched, t);

  if (edit.self_guided && edit.oracle->supports_attention())
    core.attention = edit.oracle->attention(z_t, t, cond, edit.token);

  Tensor grad_img = encode_image_backward(g_z, img.dim(0), img.dim(1));
  const bool want_geo = edit.targets != EditTargets::texture;
  const bool want_tex = edit.targets != EditTargets::geometry;

  core.report.t_used = t;
  core.report.loss_proxy = 0.5 * g_z.dot(g_z);
  if (want_geo) {
    std::vector<Vec3> grad_vertices = shade_textured_backward_vertices(
        core.frag, grad_img, core.texture, core.geom, *ctx.model, light, cam, ctx.alpha_band_px);
    core.report.grad_beta = blendshape_backward(*ctx.model, grad_vertices);
  }
  if (want_tex) {
    Tensor grad_tex = shade_textured_backward_texture(core.frag, grad_img, core.texture,
                                                      core.geom, *ctx.model, light);
    Tensor grad_u = decode_texture_backward(*ctx.decoder, u, grad_tex);
    // Texture edits keep the texture prior in the loop.
    GradReport prior = texture_prior_step(ctx, u, t, cfg, rng);
    Tensor g = *prior.grad_u;
    g *= cfg.lambda_pr;
    grad_u += g;
    core.report.grad_u = std::move(grad_u);
    core.report.loss_proxy += cfg.lambda_pr * prior.loss_proxy;
  }
  return core;
}

}  // namespace

GradReport edit_step(const SdsContext& ctx, const EditContext& edit, const IdentityCoeffs& beta,
                     const Tensor& u, double t, const SdsConfig& cfg, Rng& rng) {
  return edit_core(ctx, edit, beta, u, t, cfg, rng).report;
}

GradReport final_edit_step(const SdsContext& ctx, const EditContext& edit,
                           const IdentityCoeffs& beta, const Tensor& u, ConsistencyState& state,
                           double t, const SdsConfig& cfg, Rng& rng) {
  EditCore core = edit_core(ctx, edit, beta, u, t, cfg, rng);
  const int res = state.weight.resolution();

  // Fold this view's attention into the consistency weight before reading it.
  if (!core.attention.empty()) {
    TemporalWeight tw = temporal_weight(core.attention, core.frag, *ctx.model, res);
    fuse(state.weight, tw, cfg.fuse_w);
  }

  PositionMap posmap = unwrap_position_map(core.geom, *ctx.model, res);
  RegGrads reg = reg_losses(state.snapshot, core.texture, posmap, state.weight);

  GradReport rep = std::move(core.report);
  rep.loss_proxy += cfg.lambda_reg * (reg.loss_tex + reg.loss_geo);
  if (rep.grad_u) {
    Tensor g = decode_texture_backward(*ctx.decoder, u, reg.grad_texture);
    g *= cfg.lambda_reg;
    *rep.grad_u += g;
  }
  if (rep.grad_beta) {
    std::vector<Vec3> grad_vertices =
        unwrap_position_map_backward(*ctx.model, res, reg.grad_posmap);
    IdentityCoeffs g = blendshape_backward(*ctx.model, grad_vertices);
    for (size_t k = 0; k < g.size(); ++k) (*rep.grad_beta)[k] += cfg.lambda_reg * g[k];
  }
  return rep;
}

}  // namespace fg2e
