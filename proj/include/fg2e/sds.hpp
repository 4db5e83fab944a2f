#pragma once

#include <optional>

#include "fg2e/consistency.hpp"
#include "fg2e/diffusion.hpp"
#include "fg2e/face_model.hpp"
#include "fg2e/renderer.hpp"
#include "fg2e/rng.hpp"
#include "fg2e/tensor.hpp"
#include "fg2e/texture_space.hpp"

namespace fg2e {

enum class WMode { one, one_minus_alpha_bar };

struct SdsConfig {
  WMode w_mode = WMode::one;
  double t_start = 0.98;
  double t_end = 0.02;
  double lambda_pr = 0.5;
  double lambda_yuv = 0.5;
  double lambda_reg = 1.0;
  double fuse_w = 0.9;  // consistency moving-average factor
};

// One optimization step's output. loss_proxy is the half squared norm of the
// latent-space score gradient (plus weighted regularizer losses where they
// apply); score distillation has no true loss, but the proxy traces descent.
struct GradReport {
  std::optional<IdentityCoeffs> grad_beta;
  std::optional<Tensor> grad_u;
  double loss_proxy = 0.0;
  double t_used = 0.0;
};

// Linear diffusion-time ramp across the run.
double t_schedule(int iter, int total, const SdsConfig& cfg);

// Coarse prompt tag from the camera azimuth; undefined sectors fall back to
// front.
ViewTag view_tag(const Camera& cam);

// Score-distillation gradient at a latent: draws eps, noises z, and returns
// w(t) * (eps_hat - eps). Nothing differentiates through the oracle.
Tensor sds_grad(const ScoreOracle& oracle, const Tensor& z, const Condition& cond, double t,
                const SdsConfig& cfg, const NoiseSchedule& sched, Rng& rng);

// Shared wiring for the step functions: model, decoder, schedule, camera
// prototype, and the oracles standing in for the various diffusion networks.
struct SdsContext {
  const FaceModel* model = nullptr;
  const TextureDecoder* decoder = nullptr;
  NoiseSchedule sched;
  Camera camera_proto;
  TexturelessMode textureless_mode = TexturelessMode::normal;
  double alpha_band_px = 1.0;
  int prior_token = 0;  // fixed keyword passed to the texture-prior oracles
  // Optional explicit view/light pools; when non-empty the steps draw
  // uniformly from them instead of the built-in sampling distributions.
  std::vector<Camera> camera_pool;
  std::vector<SHLight> light_pool;
  const ScoreOracle* geometry_oracle = nullptr;
  const ScoreOracle* content_oracle = nullptr;
  const ScoreOracle* prior_rgb_oracle = nullptr;
  const ScoreOracle* prior_yuv_oracle = nullptr;
};

// Every step that renders consumes exactly one camera and one light sample
// (in that order) before its noise draws, so a seeded rng replays the whole
// report sequence bit-exactly. texture_prior_step renders nothing and
// consumes noise draws only.

// Textureless render of the identity-coefficient geometry, scored by the
// geometry oracle; returns grad_beta.
GradReport geometry_step(const SdsContext& ctx, const IdentityCoeffs& beta, double t,
                         const SdsConfig& cfg, Rng& rng);

// Depth-conditioned scoring of the textured render; beta stays frozen and
// only grad_u is produced.
GradReport texture_content_step(const SdsContext& ctx, const Tensor& u,
                                const IdentityCoeffs& beta_frozen, double t, const SdsConfig& cfg,
                                Rng& rng);

// Texture-space prior: RGB and YUV score gradients taken directly on the
// decoded texture map (no rendering), combined as rgb + lambda_yuv * yuv.
GradReport texture_prior_step(const SdsContext& ctx, const Tensor& u, double t,
                              const SdsConfig& cfg, Rng& rng);

// Full texture loss: content + lambda_pr * prior.
GradReport texture_step(const SdsContext& ctx, const Tensor& u, const IdentityCoeffs& beta,
                        double t, const SdsConfig& cfg, Rng& rng);

enum class EditTargets { geometry, texture, both };

// Frozen description of the face being edited away from, plus the editing
// oracle. The original face is re-rendered per sampled view to supply the
// oracle's original_latent condition.
struct EditContext {
  IdentityCoeffs beta_orig;
  Tensor u_orig;
  const ScoreOracle* oracle = nullptr;
  int token = 0;  // region-indicating instruction token
  EditTargets targets = EditTargets::texture;
  // When false, attention maps are ignored and the consistency weight is
  // left untouched (the C == 1 ablation).
  bool self_guided = true;
};

// Editing score step with gradients routed to the selected parameters;
// texture edits fold in lambda_pr * texture_prior_step.
GradReport edit_step(const SdsContext& ctx, const EditContext& edit, const IdentityCoeffs& beta,
                     const Tensor& u, double t, const SdsConfig& cfg, Rng& rng);

// edit_step plus the self-guided consistency machinery: updates the weight
// from this view's attention, then adds lambda_reg * regularizer gradients
// pulling unattended texels back toward the round snapshot.
GradReport final_edit_step(const SdsContext& ctx, const EditContext& edit,
                           const IdentityCoeffs& beta, const Tensor& u, ConsistencyState& state,
                           double t, const SdsConfig& cfg, Rng& rng);

}  // namespace fg2e
