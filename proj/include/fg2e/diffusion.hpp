#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "fg2e/math.hpp"
#include "fg2e/tensor.hpp"

namespace fg2e {

// DDPM-style discrete schedule addressed by continuous time t in [0,1].
struct NoiseSchedule {
  std::vector<double> alpha_bar;  // strictly decreasing, values in (0,1]

  int t_max() const { return int(alpha_bar.size()); }
  int step_for(double t) const;  // round(t * (T_max - 1)), t clamped to [0,1]
  double alpha_bar_at(double t) const { return alpha_bar[size_t(step_for(t))]; }
};

enum class ScheduleKind { linear_beta };

NoiseSchedule make_schedule(ScheduleKind kind, int t_max);

// z_t = sqrt(abar) * z + sqrt(1 - abar) * eps
Tensor add_noise(const Tensor& z, double t, const Tensor& eps, const NoiseSchedule& sched);

enum class ViewTag { front, side };

// Hashable conditioning bundle. Oracles read only the fields they declare;
// a missing required field raises ContractError.
struct Condition {
  std::vector<int> tokens;
  std::optional<Tensor> depth;            // H x W normalized render depth
  std::optional<Tensor> original_latent;  // pre-edit image latent
  std::optional<Tensor> screen_uv;        // H x W x 3 (u, v, coverage) of the current view
  ViewTag view_tag = ViewTag::front;
};

uint64_t hash_bytes(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL);
uint64_t hash_tensor(const Tensor& t, uint64_t h);
uint64_t condition_hash(const Condition& cond);
uint64_t query_hash(const Tensor& z_t, double t, const Condition& cond);

// Epsilon-prediction interface. Implementations are pure: identical inputs
// give bit-identical outputs, so they can be shared across threads freely.
class ScoreOracle {
 public:
  virtual ~ScoreOracle() = default;
  virtual Tensor predict_eps(const Tensor& z_t, double t, const Condition& cond) const = 0;
  virtual bool supports_attention() const { return false; }
  // Per-pixel scores in [0, inf) at render resolution for one token.
  virtual Tensor attention(const Tensor& z_t, double t, const Condition& cond, int token) const;
};

// Closed-form oracle that always denoises toward a fixed latent. Satisfies
// eps_hat - eps = sqrt(abar)/sqrt(1-abar) * (z - target) for any eps.
class GaussianTargetOracle : public ScoreOracle {
 public:
  GaussianTargetOracle(Tensor target, NoiseSchedule sched);
  Tensor predict_eps(const Tensor& z_t, double t, const Condition& cond) const override;
  const Tensor& target() const { return target_; }

 private:
  Tensor target_;
  NoiseSchedule sched_;
};

// Denoises toward a color-quantized function of the conditioning depth map:
// texture guidance that is a deterministic function of rendered geometry.
class DepthBandedOracle : public ScoreOracle {
 public:
  DepthBandedOracle(std::vector<Vec3> palette, NoiseSchedule sched);
  Tensor predict_eps(const Tensor& z_t, double t, const Condition& cond) const override;
  // Palette image at depth resolution; bands span the covered depth range.
  Tensor banded_target_image(const Tensor& depth) const;

 private:
  std::vector<Vec3> palette_;
  NoiseSchedule sched_;
};

// Edit region, either as a UV-texel grid (resolved to screen through the
// condition's screen_uv map) or directly as a screen mask.
struct EditRegion {
  bool in_uv = false;
  Tensor mask;  // R x R (uv) or H x W (screen), values in [0,1]
};

// Recolor-style editing oracle: denoises toward the pre-edit latent outside
// the region and toward edit_color inside it; exposes a region-shaped
// attention map for its instruction token.
class MaskedEditOracle : public ScoreOracle {
 public:
  MaskedEditOracle(EditRegion region, Vec3 edit_color, int token, NoiseSchedule sched);
  Tensor predict_eps(const Tensor& z_t, double t, const Condition& cond) const override;
  bool supports_attention() const override { return true; }
  Tensor attention(const Tensor& z_t, double t, const Condition& cond, int token) const override;

  // Region resolved to an h x w screen grid for the given view.
  Tensor screen_mask(const Condition& cond, int h, int w) const;
  // Latent the oracle denoises toward for this view.
  Tensor target_latent(const Condition& cond) const;
  int token() const { return token_; }

 private:
  EditRegion region_;
  Vec3 edit_color_;
  int token_;
  NoiseSchedule sched_;
};

// Replays recorded (query hash -> eps_hat) tables bit-exactly. Unknown
// queries raise MissingFixtureError with the offending hash.
class FixtureOracle : public ScoreOracle {
 public:
  explicit FixtureOracle(const std::string& path);
  Tensor predict_eps(const Tensor& z_t, double t, const Condition& cond) const override;
  size_t size() const { return table_.size(); }

 private:
  std::unordered_map<uint64_t, Tensor> table_;
};

// Pass-through wrapper that quantizes every prediction through f32 and
// remembers it, so a saved table replays the wrapped run bit-exactly.
// Not thread-safe; meant for single-threaded capture runs.
class RecordingOracle : public ScoreOracle {
 public:
  explicit RecordingOracle(const ScoreOracle& inner) : inner_(inner) {}
  Tensor predict_eps(const Tensor& z_t, double t, const Condition& cond) const override;
  bool supports_attention() const override { return inner_.supports_attention(); }
  Tensor attention(const Tensor& z_t, double t, const Condition& cond, int token) const override;
  void save(const std::string& path) const;
  size_t recorded() const { return order_.size(); }

 private:
  const ScoreOracle& inner_;
  mutable std::unordered_map<uint64_t, Tensor> table_;
  mutable std::vector<uint64_t> order_;
};

}  // namespace fg2e
