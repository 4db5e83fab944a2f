#pragma once

// Per-pixel rasterization/shading/backward kernels shared by the OpenMP
// drivers (renderer.cpp) and the serial reference drivers (reference.cpp).
// Everything here is a pure function of its arguments so drivers only choose
// iteration order and threading; results are bit-identical either way.

#include <algorithm>
#include <cmath>
#include <vector>

#include "fg2e/face_model.hpp"
#include "fg2e/math.hpp"
#include "fg2e/renderer.hpp"

namespace fg2e::detail {

inline double edge2d(const Vec2& a, const Vec2& b, const Vec2& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

struct FaceScreen {
  Vec2 s[3];
  double z[3];
  double area2 = 0.0;
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bbox
  bool skip = true;
};

inline std::vector<FaceScreen> prepare_faces(const Geometry& geom, const FaceModel& model,
                                             const CameraBasis& basis, double near) {
  std::vector<FaceScreen> out(size_t(model.face_count()));
  const int size = basis.size;
  for (int fi = 0; fi < model.face_count(); ++fi) {
    FaceScreen& fs = out[size_t(fi)];
    const auto& tri = model.faces[size_t(fi)];
    bool ok = true;
    for (int j = 0; j < 3; ++j) {
      fs.s[j] = project_point(basis, geom.vertices[size_t(tri[j])], &fs.z[j]);
      if (!(fs.z[j] >= near)) ok = false;  // also rejects NaN
    }
    if (!ok) continue;
    fs.area2 = edge2d(fs.s[0], fs.s[1], fs.s[2]);
    if (fs.area2 == 0.0) continue;
    double minx = std::min({fs.s[0].x, fs.s[1].x, fs.s[2].x});
    double maxx = std::max({fs.s[0].x, fs.s[1].x, fs.s[2].x});
    double miny = std::min({fs.s[0].y, fs.s[1].y, fs.s[2].y});
    double maxy = std::max({fs.s[0].y, fs.s[1].y, fs.s[2].y});
    fs.x0 = std::max(0, int(std::floor(minx - 0.5)));
    fs.x1 = std::min(size - 1, int(std::ceil(maxx - 0.5)));
    fs.y0 = std::max(0, int(std::floor(miny - 0.5)));
    fs.y1 = std::min(size - 1, int(std::ceil(maxy - 0.5)));
    fs.skip = fs.x0 > fs.x1 || fs.y0 > fs.y1;
  }
  return out;
}

struct PixelFragment {
  int face = -1;
  double bary[3] = {0, 0, 0};
  double depth = 0.0;
};

// Scans faces in index order; nearest depth wins, equal depth keeps the
// earlier (lower) face id.
inline PixelFragment raster_pixel(const std::vector<FaceScreen>& faces, int x, int y, double near,
                                  double far) {
  Vec2 p{x + 0.5, y + 0.5};
  PixelFragment best;
  best.depth = far;
  bool found = false;
  for (size_t fi = 0; fi < faces.size(); ++fi) {
    const FaceScreen& fs = faces[fi];
    if (fs.skip || x < fs.x0 || x > fs.x1 || y < fs.y0 || y > fs.y1) continue;
    double l0 = edge2d(fs.s[1], fs.s[2], p) / fs.area2;
    double l1 = edge2d(fs.s[2], fs.s[0], p) / fs.area2;
    double l2 = edge2d(fs.s[0], fs.s[1], p) / fs.area2;
    if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) continue;
    double inv_depth = l0 / fs.z[0] + l1 / fs.z[1] + l2 / fs.z[2];
    double depth = 1.0 / inv_depth;
    if (depth < near || depth > far) continue;
    if (!found || depth < best.depth) {
      found = true;
      best.face = int(fi);
      best.depth = depth;
      best.bary[0] = (l0 / fs.z[0]) / inv_depth;
      best.bary[1] = (l1 / fs.z[1]) / inv_depth;
      best.bary[2] = (l2 / fs.z[2]) / inv_depth;
    }
  }
  if (!found) best.depth = far;
  return best;
}

// Unnormalized accumulators plus unit normals; the backward pass needs both.
struct VertexNormalData {
  std::vector<Vec3> accum;
  std::vector<Vec3> unit;
};

inline VertexNormalData vertex_normal_data(const Geometry& geom, const FaceModel& model) {
  VertexNormalData nd;
  nd.accum.assign(geom.vertices.size(), Vec3{});
  for (const auto& tri : model.faces) {
    const Vec3& a = geom.vertices[size_t(tri[0])];
    Vec3 n = cross(geom.vertices[size_t(tri[1])] - a, geom.vertices[size_t(tri[2])] - a);
    for (int j = 0; j < 3; ++j) nd.accum[size_t(tri[j])] += n;
  }
  nd.unit.resize(nd.accum.size());
  for (size_t i = 0; i < nd.accum.size(); ++i) nd.unit[i] = normalize(nd.accum[i]);
  return nd;
}

struct TexSample {
  Vec3 value;
  Vec3 d_du, d_dv;     // per-channel derivative w.r.t. uv
  int texel[4];        // linear texel indices (row*R + col)
  double weight[4];    // bilinear weights
};

inline TexSample sample_texture_full(const Tensor& texture, const Vec2& uv) {
  const int r = texture.dim(0);
  double x = uv.x * r - 0.5;
  double y = uv.y * r - 0.5;
  double fx0 = std::floor(x), fy0 = std::floor(y);
  double ax = x - fx0, ay = y - fy0;
  int x0 = std::clamp(int(fx0), 0, r - 1), x1 = std::clamp(int(fx0) + 1, 0, r - 1);
  int y0 = std::clamp(int(fy0), 0, r - 1), y1 = std::clamp(int(fy0) + 1, 0, r - 1);
  TexSample s;
  s.texel[0] = y0 * r + x0;
  s.texel[1] = y0 * r + x1;
  s.texel[2] = y1 * r + x0;
  s.texel[3] = y1 * r + x1;
  s.weight[0] = (1 - ax) * (1 - ay);
  s.weight[1] = ax * (1 - ay);
  s.weight[2] = (1 - ax) * ay;
  s.weight[3] = ax * ay;
  for (int c = 0; c < 3; ++c) {
    double v00 = texture[s.texel[0] * 3 + c], v10 = texture[s.texel[1] * 3 + c];
    double v01 = texture[s.texel[2] * 3 + c], v11 = texture[s.texel[3] * 3 + c];
    s.value[c] = s.weight[0] * v00 + s.weight[1] * v10 + s.weight[2] * v01 + s.weight[3] * v11;
    double dx = (1 - ay) * (v10 - v00) + ay * (v11 - v01);
    double dy = (1 - ax) * (v01 - v00) + ax * (v11 - v10);
    s.d_du[c] = dx * r;
    s.d_dv[c] = dy * r;
  }
  return s;
}

enum class ShadePixelMode { textured, grey, normal_color };

// Raw (pre-clamp) color; callers clamp for the image and mask gradients.
inline Vec3 shade_pixel_raw(ShadePixelMode mode, const FragmentBuffer& frag, int y, int x,
                            const Tensor* texture, const FaceModel& model,
                            const std::vector<Vec3>& unit_normals, const SHLight& light) {
  const auto& tri = model.faces[size_t(frag.face_at(y, x))];
  double b0 = frag.bary.at(y, x, 0), b1 = frag.bary.at(y, x, 1), b2 = frag.bary.at(y, x, 2);
  Vec3 n_raw = unit_normals[size_t(tri[0])] * b0 + unit_normals[size_t(tri[1])] * b1 +
               unit_normals[size_t(tri[2])] * b2;
  Vec3 n = normalize(n_raw);
  if (mode == ShadePixelMode::normal_color) return (n + Vec3{1, 1, 1}) * 0.5;
  Vec3 irr{sh_irradiance(light, n, 0), sh_irradiance(light, n, 1), sh_irradiance(light, n, 2)};
  if (mode == ShadePixelMode::grey) return irr * 0.5;
  Vec2 uv = model.uv[size_t(tri[0])] * b0 + model.uv[size_t(tri[1])] * b1 +
            model.uv[size_t(tri[2])] * b2;
  Vec3 t = sample_texture(*texture, uv);
  return {t.x * irr.x, t.y * irr.y, t.z * irr.z};
}

// Per-pixel backward record: everything scatter-shaped is staged here so the
// accumulation pass can run serially in a fixed order.
struct PixelBackward {
  bool active = false;
  int face = -1;
  Vec2 grad_screen[3];
  double grad_z[3] = {0, 0, 0};
  Vec3 grad_unit_normal[3];
  int texel[4] = {0, 0, 0, 0};
  Vec3 grad_texel[4];  // per-channel texel gradients
};

inline PixelBackward shade_pixel_backward(ShadePixelMode mode, const FragmentBuffer& frag, int y,
                                          int x, const Vec3& grad_pixel, const Tensor* texture,
                                          const FaceModel& model,
                                          const std::vector<Vec3>& unit_normals,
                                          const SHLight& light,
                                          const std::vector<FaceScreen>& faces) {
  PixelBackward pb;
  if (!frag.covered(y, x)) return pb;
  pb.active = true;
  pb.face = frag.face_at(y, x);
  const auto& tri = model.faces[size_t(pb.face)];
  const FaceScreen& fs = faces[size_t(pb.face)];
  double b[3] = {frag.bary.at(y, x, 0), frag.bary.at(y, x, 1), frag.bary.at(y, x, 2)};

  Vec3 n_raw = unit_normals[size_t(tri[0])] * b[0] + unit_normals[size_t(tri[1])] * b[1] +
               unit_normals[size_t(tri[2])] * b[2];
  double n_len = length(n_raw);
  Vec3 n = n_len > 0.0 ? n_raw * (1.0 / n_len) : Vec3{};

  // Clamp mask: saturated channels pass no gradient.
  Vec3 raw = shade_pixel_raw(mode, frag, y, x, texture, model, unit_normals, light);
  Vec3 g = grad_pixel;
  for (int c = 0; c < 3; ++c)
    if (raw[c] < 0.0 || raw[c] > 1.0) g[c] = 0.0;

  double gb[3] = {0, 0, 0};
  Vec3 g_nhat{};
  if (mode == ShadePixelMode::normal_color) {
    g_nhat = g * 0.5;
  } else {
    Vec3 irr{sh_irradiance(light, n, 0), sh_irradiance(light, n, 1), sh_irradiance(light, n, 2)};
    Vec3 albedo{0.5, 0.5, 0.5};
    if (mode == ShadePixelMode::textured) {
      Vec2 uv = model.uv[size_t(tri[0])] * b[0] + model.uv[size_t(tri[1])] * b[1] +
                model.uv[size_t(tri[2])] * b[2];
      TexSample ts = sample_texture_full(*texture, uv);
      albedo = ts.value;
      for (int k = 0; k < 4; ++k) {
        pb.texel[k] = ts.texel[k];
        pb.grad_texel[k] = Vec3{g.x * irr.x, g.y * irr.y, g.z * irr.z} * ts.weight[k];
      }
      double g_u = g.x * irr.x * ts.d_du.x + g.y * irr.y * ts.d_du.y + g.z * irr.z * ts.d_du.z;
      double g_v = g.x * irr.x * ts.d_dv.x + g.y * irr.y * ts.d_dv.y + g.z * irr.z * ts.d_dv.z;
      for (int i = 0; i < 3; ++i)
        gb[i] += g_u * model.uv[size_t(tri[i])].x + g_v * model.uv[size_t(tri[i])].y;
    }
    for (int c = 0; c < 3; ++c) {
      Vec3 d_irr = sh_irradiance_grad(light, n, c);
      g_nhat += d_irr * (g[c] * albedo[c]);
    }
  }

  // normalize() backward, then split between barycentrics and vertex normals.
  if (n_len > 0.0) {
    Vec3 g_nraw = (g_nhat - n * dot(n, g_nhat)) * (1.0 / n_len);
    for (int i = 0; i < 3; ++i) {
      gb[i] += dot(unit_normals[size_t(tri[i])], g_nraw);
      pb.grad_unit_normal[i] = g_nraw * b[i];
    }
  }

  // Perspective-correct barycentric chain back to screen positions and
  // camera depths, with the pixel->face assignment frozen. Texture-only
  // callers pass placeholder faces (skip set) and bypass this chain.
  if (fs.skip) return pb;
  double inv_s = frag.depth_at(y, x);  // 1/S
  double s_sum = 1.0 / inv_s;
  double m[3], lambda[3];
  for (int i = 0; i < 3; ++i) {
    m[i] = b[i] * s_sum;
    lambda[i] = m[i] * fs.z[i];
  }
  double gb_dot_b = gb[0] * b[0] + gb[1] * b[1] + gb[2] * b[2];
  double g_lambda[3];
  for (int j = 0; j < 3; ++j) {
    double g_m = (gb[j] - gb_dot_b) / s_sum;
    g_lambda[j] = g_m / fs.z[j];
    pb.grad_z[j] = -g_m * m[j] / fs.z[j];
  }

  Vec2 p{x + 0.5, y + 0.5};
  double g_area[3];  // dL/dA_i for the three sub-areas
  double g_area_total = 0.0;
  for (int i = 0; i < 3; ++i) {
    g_area[i] = g_lambda[i] / fs.area2;
    g_area_total -= g_lambda[i] * lambda[i] / fs.area2;
  }
  const Vec2& s0 = fs.s[0];
  const Vec2& s1 = fs.s[1];
  const Vec2& s2 = fs.s[2];
  // A0 = E(s1,s2,p), A1 = E(s2,s0,p), A2 = E(s0,s1,p), A = E(s0,s1,s2).
  pb.grad_screen[0] += Vec2{p.y - s2.y, s2.x - p.x} * g_area[1];
  pb.grad_screen[0] += Vec2{s1.y - p.y, p.x - s1.x} * g_area[2];
  pb.grad_screen[1] += Vec2{s2.y - p.y, p.x - s2.x} * g_area[0];
  pb.grad_screen[1] += Vec2{p.y - s0.y, s0.x - p.x} * g_area[2];
  pb.grad_screen[2] += Vec2{p.y - s1.y, s1.x - p.x} * g_area[0];
  pb.grad_screen[2] += Vec2{s0.y - p.y, p.x - s0.x} * g_area[1];
  pb.grad_screen[0] += Vec2{s1.y - s2.y, s2.x - s1.x} * g_area_total;
  pb.grad_screen[1] += Vec2{s2.y - s0.y, s0.x - s2.x} * g_area_total;
  pb.grad_screen[2] += Vec2{s0.y - s1.y, s1.x - s0.x} * g_area_total;
  return pb;
}

}  // namespace fg2e::detail
