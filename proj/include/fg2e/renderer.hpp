#pragma once

#include <cstdint>
#include <vector>

#include "fg2e/face_model.hpp"
#include "fg2e/math.hpp"
#include "fg2e/rng.hpp"
#include "fg2e/tensor.hpp"

namespace fg2e {

// Images are H×W×3 tensors with values in [0,1]; depth maps are H×W.
using Image = Tensor;
using DepthMap = Tensor;

struct Camera {
  double near = 0.1;
  double far = 10.0;
  double fov_deg = 12.59;
  int image_size = 64;
  double elevation_deg = 0.0;
  double azimuth_deg = 0.0;
  double distance = 3.0;
};

// Orbit camera looking at the origin with +Y up.
struct CameraBasis {
  Vec3 eye, right, up, fwd;
  double tan_half_fov = 0.0;
  int size = 0;
};

CameraBasis camera_basis(const Camera& cam);

// Projects a world point; returns pixel coordinates and writes the
// camera-space depth (distance along the view axis).
Vec2 project_point(const CameraBasis& basis, const Vec3& p, double* z_cam);

struct SHLight {
  // 3-band spherical harmonics per RGB channel, band order
  // (00, 1-1, 10, 11, 2-2, 2-1, 20, 21, 22).
  double coeffs[9][3] = {};
};

// Irradiance for a unit normal, clamped to >= 0.
double sh_irradiance(const SHLight& light, const Vec3& n, int channel);
Vec3 sh_irradiance_grad(const SHLight& light, const Vec3& n, int channel);

// Light whose irradiance equals `radiance` for every normal.
SHLight ambient_light(double radiance);

struct FragmentBuffer {
  int width = 0, height = 0;
  double near = 0.1, far = 10.0;
  std::vector<int> face_id;     // H*W, -1 = background
  Tensor bary;                  // H×W×3, perspective-correct
  std::vector<double> depth;    // H*W camera-space distance; background = far
  std::vector<uint8_t> mask;    // H*W coverage

  bool covered(int y, int x) const { return mask[size_t(y) * width + x] != 0; }
  int face_at(int y, int x) const { return face_id[size_t(y) * width + x]; }
  double depth_at(int y, int x) const { return depth[size_t(y) * width + x]; }
};

FragmentBuffer rasterize(const Geometry& geom, const FaceModel& model, const Camera& cam);

// Area-weighted, normalized per-vertex normals.
std::vector<Vec3> vertex_normals(const Geometry& geom, const FaceModel& model);

enum class TexturelessMode { normal, grey };

Image shade_textured(const FragmentBuffer& frag, const Tensor& texture, const Geometry& geom,
                     const FaceModel& model, const SHLight& light);
Image shade_textureless(const FragmentBuffer& frag, TexturelessMode mode, const Geometry& geom,
                        const FaceModel& model, const SHLight& light);

// Normalized depth image: covered = (far - depth)/(far - near), background 0.
DepthMap render_depth(const FragmentBuffer& frag);

// Per-pixel interpolated UV plus coverage: H×W×3 laid out as (u, v, mask).
Tensor screen_uv_map(const FragmentBuffer& frag, const FaceModel& model);

struct UvSplat {
  Tensor grid;                    // R×R, contribution average
  std::vector<uint8_t> coverage;  // R*R
  int resolution = 0;

  bool covered_at(int ty, int tx) const { return coverage[size_t(ty) * resolution + tx] != 0; }
};

// Splats per-pixel scalars into UV texels (average of contributions).
UvSplat project_screen_to_uv(const FragmentBuffer& frag, const Tensor& values,
                             const FaceModel& model, int resolution);

// --- backward passes ---------------------------------------------------
// All gradients treat the pixel→face assignment as frozen (interior
// gradients). alpha_band_px > 0 adds a crude screen-space silhouette term
// that lets expansion pressure reach the boundary vertices; keep it at 0
// when validating against finite differences.

Tensor shade_textured_backward_texture(const FragmentBuffer& frag, const Tensor& grad_image,
                                       const Tensor& texture, const Geometry& geom,
                                       const FaceModel& model, const SHLight& light);

std::vector<Vec3> shade_textured_backward_vertices(const FragmentBuffer& frag,
                                                   const Tensor& grad_image, const Tensor& texture,
                                                   const Geometry& geom, const FaceModel& model,
                                                   const SHLight& light, const Camera& cam,
                                                   double alpha_band_px = 0.0);

std::vector<Vec3> shade_textureless_backward_vertices(const FragmentBuffer& frag,
                                                      const Tensor& grad_image, TexturelessMode mode,
                                                      const Geometry& geom, const FaceModel& model,
                                                      const SHLight& light, const Camera& cam,
                                                      double alpha_band_px = 0.0);

// Bilinear texture sample at uv in [0,1]^2 (align-corners-false grid,
// clamped borders). Exposed for the texture-space module and tests.
Vec3 sample_texture(const Tensor& texture, const Vec2& uv);

// Appendix camera/light draw: extrinsics from the stored discrete sets,
// intrinsics copied from `proto`. Consumes a fixed number of rng draws.
Camera sample_camera(Rng& rng, const Camera& proto);
SHLight sample_light(Rng& rng);

// The 16 stored light sets backing sample_light.
const std::vector<SHLight>& light_table();

}  // namespace fg2e
