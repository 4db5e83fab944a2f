#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fg2e/math.hpp"
#include "fg2e/tensor.hpp"

namespace fg2e {

// Linear parametric face mesh: mean shape plus K weighted offset bases,
// shared triangle topology and per-vertex UV coordinates in [0,1].
struct FaceModel {
  std::vector<Vec3> mean;                 // V
  std::vector<std::vector<Vec3>> basis;   // K x V
  std::vector<std::array<int, 3>> faces;  // F, indices into vertices
  std::vector<Vec2> uv;                   // V

  int vertex_count() const { return int(mean.size()); }
  int basis_count() const { return int(basis.size()); }
  int face_count() const { return int(faces.size()); }

  // Throws std::invalid_argument on inconsistent dimensions or indices.
  void validate() const;
};

using IdentityCoeffs = std::vector<double>;

struct Geometry {
  std::vector<Vec3> vertices;
};

// UV-resolution grid of interpolated vertex positions. Texels not covered by
// any UV triangle hold the zero sentinel and valid=0.
struct PositionMap {
  Tensor grid;                  // R x R x 3
  std::vector<uint8_t> valid;   // R*R, row-major, row = v texel index
  int resolution = 0;
  int degenerate_skipped = 0;   // zero-area UV triangles ignored during the scan

  bool valid_at(int ty, int tx) const { return valid[size_t(ty) * resolution + tx] != 0; }
};

// vertices = mean + sum_k beta[k] * basis[k]; exact linear map.
Geometry apply_blendshape(const FaceModel& model, const IdentityCoeffs& beta);

// Transpose of apply_blendshape: pull per-vertex position gradients back to
// the coefficient vector.
IdentityCoeffs blendshape_backward(const FaceModel& model, const std::vector<Vec3>& grad_vertices);

// Rasterizes vertex positions into the UV atlas. A texel is covered when its
// center lies inside a UV triangle; ties on shared edges go to the lowest
// face index. Linear in the vertex positions.
PositionMap unwrap_position_map(const Geometry& geom, const FaceModel& model, int resolution);

// Pull position-map gradients back to vertices. Coverage and weights depend
// only on the UV layout, so no geometry argument is needed.
std::vector<Vec3> unwrap_position_map_backward(const FaceModel& model, int resolution,
                                               const Tensor& grad_grid);

// Binary model container: magic "FG2E", u32 version=1, u32 V, u32 K, u32 F,
// mean (V*3 f32), basis (K*V*3 f32), uv (V*2 f32), faces (F*3 u32), all
// little-endian.
void save_face_model(const FaceModel& model, const std::string& path);
FaceModel load_face_model(const std::string& path);

// Deterministic curved height-field patch over a grid of V_grid x V_grid
// vertices with K smooth random offset bases and planar UVs spanning [0,1].
// All stored values are representable in f32 so that save/load round-trips
// bit-exactly.
FaceModel synthetic_face_model(uint64_t seed, int v_grid, int k);

}  // namespace fg2e
