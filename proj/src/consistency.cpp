#include "fg2e/consistency.hpp"

#include <algorithm>
#include <stdexcept>

namespace fg2e {

ConsistencyWeight make_consistency_weight(int resolution) {
  if (resolution <= 0) throw std::invalid_argument("resolution must be positive");
  ConsistencyWeight c;
  c.grid = Tensor({resolution, resolution}, 1.0);
  return c;
}

TemporalWeight temporal_weight(const Tensor& attn, const FragmentBuffer& frag,
                               const FaceModel& model, int resolution) {
  if (attn.rank() != 2 || attn.dim(0) != frag.height || attn.dim(1) != frag.width)
    throw std::invalid_argument("attention map does not match the fragment buffer");

  TemporalWeight tw;
  tw.grid = Tensor({resolution, resolution});
  tw.coverage.assign(size_t(resolution) * resolution, 0);

  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (int y = 0; y < frag.height; ++y)
    for (int x = 0; x < frag.width; ++x) {
      if (!frag.covered(y, x)) continue;
      double a = attn.at(y, x);
      if (!any) {
        lo = hi = a;
        any = true;
      } else {
        lo = std::min(lo, a);
        hi = std::max(hi, a);
      }
    }
  if (!any) return tw;  // all-background frame: nothing to update

  Tensor normalized({frag.height, frag.width});
  const double span = hi - lo;
  for (int y = 0; y < frag.height; ++y)
    for (int x = 0; x < frag.width; ++x) {
      if (!frag.covered(y, x)) continue;
      // Degenerate span: a constant positive map is all "attended", a zero
      // map not at all.
      normalized.at(y, x) = span > 0.0 ? (attn.at(y, x) - lo) / span : (hi > 0.0 ? 1.0 : 0.0);
    }

  UvSplat splat = project_screen_to_uv(frag, normalized, model, resolution);
  for (int ty = 0; ty < resolution; ++ty)
    for (int tx = 0; tx < resolution; ++tx) {
      if (!splat.covered_at(ty, tx)) continue;
      double a = splat.grid.at(ty, tx);
      tw.grid.at(ty, tx) = 1.0 - a * a;
      tw.coverage[size_t(ty) * resolution + tx] = 1;
    }
  return tw;
}

void fuse(ConsistencyWeight& c, const TemporalWeight& tw, double w) {
  if (w < 0.0 || w >= 1.0) throw std::invalid_argument("moving-average factor must be in [0,1)");
  const int res = c.resolution();
  if (tw.grid.dim(0) != res || tw.grid.dim(1) != res)
    throw std::invalid_argument("temporal weight resolution mismatch");
  for (int ty = 0; ty < res; ++ty)
    for (int tx = 0; tx < res; ++tx) {
      if (!tw.covered_at(ty, tx)) continue;
      double cand = tw.grid.at(ty, tx);
      double& cur = c.grid.at(ty, tx);
      if (cand < cur) cur = w * cur + (1.0 - w) * cand;
    }
}

RegGrads reg_losses(const EditSnapshot& snap, const Tensor& texture_now,
                    const PositionMap& posmap_now, const ConsistencyWeight& c) {
  const int res = c.resolution();
  if (!snap.texture_before.same_shape(texture_now))
    throw std::invalid_argument("texture resolution mismatch");
  if (texture_now.dim(0) != res || texture_now.dim(1) != res)
    throw std::invalid_argument("consistency weight does not match texture resolution");
  if (snap.posmap_before.resolution != posmap_now.resolution ||
      posmap_now.resolution != res)
    throw std::invalid_argument("position map resolution mismatch");

  RegGrads out;
  out.grad_texture = Tensor::zeros_like(texture_now);
  out.grad_posmap = Tensor::zeros_like(posmap_now.grid);
  for (int ty = 0; ty < res; ++ty)
    for (int tx = 0; tx < res; ++tx) {
      const double cw = c.grid.at(ty, tx);
      const double cw2 = cw * cw;
      for (int ch = 0; ch < 3; ++ch) {
        double diff = snap.texture_before.at(ty, tx, ch) - texture_now.at(ty, tx, ch);
        out.loss_tex += cw2 * diff * diff;
        out.grad_texture.at(ty, tx, ch) = -2.0 * cw2 * diff;
      }
      if (!snap.posmap_before.valid_at(ty, tx) || !posmap_now.valid_at(ty, tx)) continue;
      for (int ch = 0; ch < 3; ++ch) {
        double diff = snap.posmap_before.grid.at(ty, tx, ch) - posmap_now.grid.at(ty, tx, ch);
        out.loss_geo += cw2 * diff * diff;
        out.grad_posmap.at(ty, tx, ch) = -2.0 * cw2 * diff;
      }
    }
  return out;
}

void reset_round(ConsistencyState& state, const Tensor& texture_now, const Geometry& geom_now,
                 const FaceModel& model, int resolution) {
  state.weight = make_consistency_weight(resolution);
  state.snapshot.texture_before = texture_now;
  state.snapshot.posmap_before = unwrap_position_map(geom_now, model, resolution);
  state.round += 1;
}

}  // namespace fg2e
