#pragma once

// Serial reference implementations of the parallel kernels. They share the
// per-pixel math with the production drivers, so tests can check that the
// OpenMP orchestration is bit-exact against straight loops, and the bench
// tool can measure the speedup.

#include "fg2e/renderer.hpp"

namespace fg2e::ref {

FragmentBuffer rasterize(const Geometry& geom, const FaceModel& model, const Camera& cam);
Image shade_textured(const FragmentBuffer& frag, const Tensor& texture, const Geometry& geom,
                     const FaceModel& model, const SHLight& light);
Image shade_textureless(const FragmentBuffer& frag, TexturelessMode mode, const Geometry& geom,
                        const FaceModel& model, const SHLight& light);
PositionMap unwrap_position_map(const Geometry& geom, const FaceModel& model, int resolution);

}  // namespace fg2e::ref
