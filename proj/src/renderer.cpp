#include "fg2e/renderer.hpp"

#include <algorithm>
#include <cmath>

#include "fg2e/common.hpp"
#include "render_kernels.hpp"

namespace fg2e {

CameraBasis camera_basis(const Camera& cam) {
  if (!(cam.near > 0.0 && cam.near < cam.far)) throw std::invalid_argument("bad near/far");
  if (cam.image_size < 1) throw std::invalid_argument("bad image size");
  if (!(cam.fov_deg > 0.0 && cam.fov_deg < 180.0)) throw std::invalid_argument("bad fov");
  double el = radians(cam.elevation_deg);
  double az = radians(cam.azimuth_deg);
  CameraBasis b;
  b.eye = Vec3{std::cos(el) * std::sin(az), std::sin(el), std::cos(el) * std::cos(az)} *
          cam.distance;
  b.fwd = normalize(-b.eye);  // looks at the origin
  Vec3 world_up{0, 1, 0};
  b.right = normalize(cross(b.fwd, world_up));
  b.up = cross(b.right, b.fwd);
  b.tan_half_fov = std::tan(0.5 * radians(cam.fov_deg));
  b.size = cam.image_size;
  return b;
}

Vec2 project_point(const CameraBasis& basis, const Vec3& p, double* z_cam) {
  Vec3 rel = p - basis.eye;
  double xv = dot(basis.right, rel);
  double yv = dot(basis.up, rel);
  double zv = dot(basis.fwd, rel);
  if (z_cam) *z_cam = zv;
  double half = 0.5 * basis.size;
  double inv = 1.0 / (zv * basis.tan_half_fov);
  return {half * (xv * inv + 1.0), half * (1.0 - yv * inv)};
}

// Ramamoorthi-Hanrahan irradiance constants.
static constexpr double kC1 = 0.429043, kC2 = 0.511664, kC3 = 0.743125, kC4 = 0.886227,
                        kC5 = 0.247708;

static double sh_irradiance_raw(const SHLight& l, const Vec3& n, int c) {
  double x = n.x, y = n.y, z = n.z;
  return kC1 * l.coeffs[8][c] * (x * x - y * y) + kC3 * l.coeffs[6][c] * z * z +
         kC4 * l.coeffs[0][c] - kC5 * l.coeffs[6][c] +
         2.0 * kC1 * (l.coeffs[4][c] * x * y + l.coeffs[7][c] * x * z + l.coeffs[5][c] * y * z) +
         2.0 * kC2 * (l.coeffs[3][c] * x + l.coeffs[1][c] * y + l.coeffs[2][c] * z);
}

double sh_irradiance(const SHLight& light, const Vec3& n, int channel) {
  return std::max(0.0, sh_irradiance_raw(light, n, channel));
}

Vec3 sh_irradiance_grad(const SHLight& l, const Vec3& n, int c) {
  if (sh_irradiance_raw(l, n, c) < 0.0) return {};  // clamped region
  double x = n.x, y = n.y, z = n.z;
  return {2.0 * kC1 * (l.coeffs[8][c] * x + l.coeffs[4][c] * y + l.coeffs[7][c] * z) +
              2.0 * kC2 * l.coeffs[3][c],
          2.0 * kC1 * (-l.coeffs[8][c] * y + l.coeffs[4][c] * x + l.coeffs[5][c] * z) +
              2.0 * kC2 * l.coeffs[1][c],
          2.0 * kC3 * l.coeffs[6][c] * z + 2.0 * kC1 * (l.coeffs[7][c] * x + l.coeffs[5][c] * y) +
              2.0 * kC2 * l.coeffs[2][c]};
}

SHLight ambient_light(double radiance) {
  SHLight l;
  for (int c = 0; c < 3; ++c) l.coeffs[0][c] = radiance / kC4;
  return l;
}

FragmentBuffer rasterize(const Geometry& geom, const FaceModel& model, const Camera& cam) {
  if (int(geom.vertices.size()) != model.vertex_count())
    throw std::invalid_argument("geometry does not match model");
  CameraBasis basis = camera_basis(cam);
  auto faces = detail::prepare_faces(geom, model, basis, cam.near);

  const int size = cam.image_size;
  FragmentBuffer frag;
  frag.width = frag.height = size;
  frag.near = cam.near;
  frag.far = cam.far;
  frag.face_id.assign(size_t(size) * size, -1);
  frag.bary = Tensor({size, size, 3});
  frag.depth.assign(size_t(size) * size, cam.far);
  frag.mask.assign(size_t(size) * size, 0);

#pragma omp parallel for schedule(static)
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      detail::PixelFragment pf = detail::raster_pixel(faces, x, y, cam.near, cam.far);
      size_t i = size_t(y) * size + x;
      if (pf.face < 0) continue;
      frag.face_id[i] = pf.face;
      frag.depth[i] = pf.depth;
      frag.mask[i] = 1;
      for (int k = 0; k < 3; ++k) frag.bary.at(y, x, k) = pf.bary[k];
    }
  }
  return frag;
}

std::vector<Vec3> vertex_normals(const Geometry& geom, const FaceModel& model) {
  return detail::vertex_normal_data(geom, model).unit;
}

Vec3 sample_texture(const Tensor& texture, const Vec2& uv) {
  return detail::sample_texture_full(texture, uv).value;
}

static void check_texture(const Tensor& texture) {
  if (texture.rank() != 3 || texture.dim(2) != 3 || texture.dim(0) != texture.dim(1) ||
      texture.dim(0) < 1)
    throw std::invalid_argument("texture must be a square RxRx3 tensor");
}

Image shade_textured(const FragmentBuffer& frag, const Tensor& texture, const Geometry& geom,
                     const FaceModel& model, const SHLight& light) {
  check_texture(texture);
  auto normals = detail::vertex_normal_data(geom, model);
  Image img({frag.height, frag.width, 3});
#pragma omp parallel for schedule(static)
  for (int y = 0; y < frag.height; ++y)
    for (int x = 0; x < frag.width; ++x) {
      if (!frag.covered(y, x)) continue;
      Vec3 c = detail::shade_pixel_raw(detail::ShadePixelMode::textured, frag, y, x, &texture,
                                       model, normals.unit, light);
      for (int k = 0; k < 3; ++k) img.at(y, x, k) = clamp01(c[k]);
    }
  return img;
}

Image shade_textureless(const FragmentBuffer& frag, TexturelessMode mode, const Geometry& geom,
                        const FaceModel& model, const SHLight& light) {
  auto normals = detail::vertex_normal_data(geom, model);
  auto pmode = mode == TexturelessMode::normal ? detail::ShadePixelMode::normal_color
                                               : detail::ShadePixelMode::grey;
  Image img({frag.height, frag.width, 3});
#pragma omp parallel for schedule(static)
  for (int y = 0; y < frag.height; ++y)
    for (int x = 0; x < frag.width; ++x) {
      if (!frag.covered(y, x)) continue;
      Vec3 c = detail::shade_pixel_raw(pmode, frag, y, x, nullptr, model, normals.unit, light);
      for (int k = 0; k < 3; ++k) img.at(y, x, k) = clamp01(c[k]);
    }
  return img;
}

DepthMap render_depth(const FragmentBuffer& frag) {
  DepthMap out({frag.height, frag.width});
  const double span = frag.far - frag.near;
#pragma omp parallel for schedule(static)
  for (int y = 0; y < frag.height; ++y)
    for (int x = 0; x < frag.width; ++x)
      out.at(y, x) = frag.covered(y, x) ? (frag.far - frag.depth_at(y, x)) / span : 0.0;
  return out;
}

Tensor screen_uv_map(const FragmentBuffer& frag, const FaceModel& model) {
  Tensor out({frag.height, frag.width, 3});
#pragma omp parallel for schedule(static)
  for (int y = 0; y < frag.height; ++y)
    for (int x = 0; x < frag.width; ++x) {
      if (!frag.covered(y, x)) continue;
      const auto& tri = model.faces[size_t(frag.face_at(y, x))];
      Vec2 uv = model.uv[size_t(tri[0])] * frag.bary.at(y, x, 0) +
                model.uv[size_t(tri[1])] * frag.bary.at(y, x, 1) +
                model.uv[size_t(tri[2])] * frag.bary.at(y, x, 2);
      out.at(y, x, 0) = uv.x;
      out.at(y, x, 1) = uv.y;
      out.at(y, x, 2) = 1.0;
    }
  return out;
}

UvSplat project_screen_to_uv(const FragmentBuffer& frag, const Tensor& values,
                             const FaceModel& model, int resolution) {
  if (values.rank() != 2 || values.dim(0) != frag.height || values.dim(1) != frag.width)
    throw std::invalid_argument("values shape does not match fragment buffer");
  if (resolution < 1) throw std::invalid_argument("resolution must be >= 1");
  UvSplat splat;
  splat.resolution = resolution;
  splat.grid = Tensor({resolution, resolution});
  splat.coverage.assign(size_t(resolution) * resolution, 0);
  std::vector<int> counts(size_t(resolution) * resolution, 0);
  // Serial scatter in pixel order keeps accumulation deterministic.
  for (int y = 0; y < frag.height; ++y)
    for (int x = 0; x < frag.width; ++x) {
      if (!frag.covered(y, x)) continue;
      const auto& tri = model.faces[size_t(frag.face_at(y, x))];
      Vec2 uv = model.uv[size_t(tri[0])] * frag.bary.at(y, x, 0) +
                model.uv[size_t(tri[1])] * frag.bary.at(y, x, 1) +
                model.uv[size_t(tri[2])] * frag.bary.at(y, x, 2);
      int tx = std::clamp(int(uv.x * resolution), 0, resolution - 1);
      int ty = std::clamp(int(uv.y * resolution), 0, resolution - 1);
      splat.grid.at(ty, tx) += values.at(y, x);
      counts[size_t(ty) * resolution + tx] += 1;
    }
  for (int t = 0; t < resolution * resolution; ++t)
    if (counts[size_t(t)] > 0) {
      splat.grid[t] /= counts[size_t(t)];
      splat.coverage[size_t(t)] = 1;
    }
  return splat;
}

// ---- backward drivers ---------------------------------------------------

namespace {

std::vector<detail::PixelBackward> pixel_backward_pass(detail::ShadePixelMode mode,
                                                       const FragmentBuffer& frag,
                                                       const Tensor& grad_image,
                                                       const Tensor* texture, const Geometry& geom,
                                                       const FaceModel& model, const SHLight& light,
                                                       const CameraBasis& basis, double near,
                                                       const detail::VertexNormalData& normals,
                                                       const std::vector<detail::FaceScreen>& faces) {
  (void)geom;
  (void)basis;
  (void)near;
  if (grad_image.rank() != 3 || grad_image.dim(0) != frag.height ||
      grad_image.dim(1) != frag.width || grad_image.dim(2) != 3)
    throw std::invalid_argument("grad_image shape mismatch");
  std::vector<detail::PixelBackward> records(size_t(frag.height) * frag.width);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < frag.height; ++y)
    for (int x = 0; x < frag.width; ++x) {
      Vec3 g{grad_image.at(y, x, 0), grad_image.at(y, x, 1), grad_image.at(y, x, 2)};
      records[size_t(y) * frag.width + x] =
          detail::shade_pixel_backward(mode, frag, y, x, g, texture, model, normals.unit, light,
                                       faces);
    }
  return records;
}

// Folds per-pixel records into per-vertex screen/depth/normal gradients and
// finishes the chain to world space. Deterministic: all reductions serial.
std::vector<Vec3> fold_vertex_gradients(const std::vector<detail::PixelBackward>& records,
                                        const Geometry& geom, const FaceModel& model,
                                        const CameraBasis& basis,
                                        const detail::VertexNormalData& normals) {
  const size_t nv = geom.vertices.size();
  std::vector<Vec2> g_screen(nv);
  std::vector<double> g_z(nv, 0.0);
  std::vector<Vec3> g_unit_normal(nv);
  for (const auto& pb : records) {
    if (!pb.active) continue;
    const auto& tri = model.faces[size_t(pb.face)];
    for (int j = 0; j < 3; ++j) {
      g_screen[size_t(tri[j])] += pb.grad_screen[j];
      g_z[size_t(tri[j])] += pb.grad_z[j];
      g_unit_normal[size_t(tri[j])] += pb.grad_unit_normal[j];
    }
  }

  std::vector<Vec3> grad(nv);
  const double half = 0.5 * basis.size;
  for (size_t v = 0; v < nv; ++v) {
    Vec3 rel = geom.vertices[v] - basis.eye;
    double xv = dot(basis.right, rel);
    double yv = dot(basis.up, rel);
    double zv = dot(basis.fwd, rel);
    if (zv <= 0.0) continue;
    double inv = 1.0 / (zv * basis.tan_half_fov);
    double g_xv = g_screen[v].x * half * inv;
    double g_yv = -g_screen[v].y * half * inv;
    double g_zv = g_z[v] - (g_screen[v].x * xv - g_screen[v].y * yv) * half * inv / zv;
    grad[v] = basis.right * g_xv + basis.up * g_yv + basis.fwd * g_zv;
  }

  // Vertex-normal chain: normalize backward per vertex, then the cross
  // product distributes face-normal gradients onto positions.
  std::vector<Vec3> g_accum(nv);
  for (size_t v = 0; v < nv; ++v) {
    double len = length(normals.accum[v]);
    if (len <= 0.0) continue;
    const Vec3& n = normals.unit[v];
    g_accum[v] = (g_unit_normal[v] - n * dot(n, g_unit_normal[v])) * (1.0 / len);
  }
  for (const auto& tri : model.faces) {
    Vec3 gf = g_accum[size_t(tri[0])] + g_accum[size_t(tri[1])] + g_accum[size_t(tri[2])];
    const Vec3& a = geom.vertices[size_t(tri[0])];
    Vec3 u = geom.vertices[size_t(tri[1])] - a;
    Vec3 v = geom.vertices[size_t(tri[2])] - a;
    Vec3 gu = cross(v, gf);
    Vec3 gv = cross(gf, u);
    grad[size_t(tri[0])] -= gu + gv;
    grad[size_t(tri[1])] += gu;
    grad[size_t(tri[2])] += gv;
  }
  return grad;
}

// Crude screen-space silhouette term: band pixels exert pressure on the
// nearest edge of the adjacent face, approximating coverage change.
void add_alpha_band_gradients(std::vector<Vec3>& grad, const FragmentBuffer& frag,
                              const Tensor& grad_image, detail::ShadePixelMode mode,
                              const Tensor* texture, const Geometry& geom, const FaceModel& model,
                              const SHLight& light, const CameraBasis& basis,
                              const detail::VertexNormalData& normals,
                              const std::vector<detail::FaceScreen>& faces, double band_px) {
  const int h = frag.height, w = frag.width;
  const int dx[4] = {1, -1, 0, 0};
  const int dy[4] = {0, 0, 1, -1};
  const size_t nv = geom.vertices.size();
  std::vector<Vec2> g_screen(nv);

  auto edge_pressure = [&](int fy, int fx, int qy, int qx, double sign) {
    // fy,fx: covered pixel supplying face and color; qy,qx: pixel whose
    // alpha would change.
    int face = frag.face_at(fy, fx);
    const detail::FaceScreen& fs = faces[size_t(face)];
    Vec3 color = detail::shade_pixel_raw(mode, frag, fy, fx, texture, model, normals.unit, light);
    for (int c = 0; c < 3; ++c) color[c] = clamp01(color[c]);
    Vec3 gq{grad_image.at(qy, qx, 0), grad_image.at(qy, qx, 1), grad_image.at(qy, qx, 2)};
    double g_alpha = dot(gq, color);
    if (g_alpha == 0.0) return;

    Vec2 q{qx + 0.5, qy + 0.5};
    double orient = fs.area2 > 0.0 ? 1.0 : -1.0;
    int best_e = 0;
    double best_d = 0.0;
    for (int e = 0; e < 3; ++e) {
      const Vec2& a = fs.s[e];
      const Vec2& b = fs.s[(e + 1) % 3];
      double len = std::max(1e-12, length(Vec3{b.x - a.x, b.y - a.y, 0.0}));
      double d = orient * detail::edge2d(a, b, q) / len;  // inside distance
      if (e == 0 || d < best_d) {
        best_d = d;
        best_e = e;
      }
    }
    const Vec2& a = fs.s[best_e];
    const Vec2& b = fs.s[(best_e + 1) % 3];
    double len = std::max(1e-12, length(Vec3{b.x - a.x, b.y - a.y, 0.0}));
    // alpha ramps over the band as the inside-distance d grows; d(L)/d(vertex)
    // = g_alpha/band * d d/d(vertex), treating edge length as constant.
    double scale = sign * g_alpha / (band_px * len) * orient;
    int ia = model.faces[size_t(face)][best_e];
    int ib = model.faces[size_t(face)][(best_e + 1) % 3];
    g_screen[size_t(ia)] += Vec2{b.y - q.y, q.x - b.x} * scale;
    g_screen[size_t(ib)] += Vec2{q.y - a.y, a.x - q.x} * scale;
  };

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (frag.covered(y, x)) continue;
      // Background pixel adjacent to coverage: expansion pressure.
      for (int k = 0; k < 4; ++k) {
        int ny = y + dy[k], nx = x + dx[k];
        if (ny < 0 || ny >= h || nx < 0 || nx >= w || !frag.covered(ny, nx)) continue;
        edge_pressure(ny, nx, y, x, 1.0);
        break;
      }
    }

  const double half = 0.5 * basis.size;
  for (size_t v = 0; v < nv; ++v) {
    if (g_screen[v].x == 0.0 && g_screen[v].y == 0.0) continue;
    Vec3 rel = geom.vertices[v] - basis.eye;
    double xv = dot(basis.right, rel);
    double yv = dot(basis.up, rel);
    double zv = dot(basis.fwd, rel);
    if (zv <= 0.0) continue;
    double inv = 1.0 / (zv * basis.tan_half_fov);
    double g_xv = g_screen[v].x * half * inv;
    double g_yv = -g_screen[v].y * half * inv;
    double g_zv = -(g_screen[v].x * xv - g_screen[v].y * yv) * half * inv / zv;
    grad[v] += basis.right * g_xv + basis.up * g_yv + basis.fwd * g_zv;
  }
}

}  // namespace

Tensor shade_textured_backward_texture(const FragmentBuffer& frag, const Tensor& grad_image,
                                       const Tensor& texture, const Geometry& geom,
                                       const FaceModel& model, const SHLight& light) {
  check_texture(texture);
  CameraBasis basis;  // unused by the texture chain
  basis.size = frag.width;
  auto normals = detail::vertex_normal_data(geom, model);
  // Texture gradients need screen data only for the bary chain, which texels
  // do not touch; prepare_faces is still required by the shared kernel.
  std::vector<detail::FaceScreen> faces(size_t(model.face_count()));
  auto records = pixel_backward_pass(detail::ShadePixelMode::textured, frag, grad_image, &texture,
                                     geom, model, light, basis, frag.near, normals, faces);
  Tensor grad(texture.dims());
  for (const auto& pb : records) {
    if (!pb.active) continue;
    for (int k = 0; k < 4; ++k)
      for (int c = 0; c < 3; ++c) grad[pb.texel[k] * 3 + c] += pb.grad_texel[k][c];
  }
  return grad;
}

std::vector<Vec3> shade_textured_backward_vertices(const FragmentBuffer& frag,
                                                   const Tensor& grad_image, const Tensor& texture,
                                                   const Geometry& geom, const FaceModel& model,
                                                   const SHLight& light, const Camera& cam,
                                                   double alpha_band_px) {
  check_texture(texture);
  CameraBasis basis = camera_basis(cam);
  auto normals = detail::vertex_normal_data(geom, model);
  auto faces = detail::prepare_faces(geom, model, basis, cam.near);
  auto records = pixel_backward_pass(detail::ShadePixelMode::textured, frag, grad_image, &texture,
                                     geom, model, light, basis, cam.near, normals, faces);
  auto grad = fold_vertex_gradients(records, geom, model, basis, normals);
  if (alpha_band_px > 0.0)
    add_alpha_band_gradients(grad, frag, grad_image, detail::ShadePixelMode::textured, &texture,
                             geom, model, light, basis, normals, faces, alpha_band_px);
  return grad;
}

std::vector<Vec3> shade_textureless_backward_vertices(const FragmentBuffer& frag,
                                                      const Tensor& grad_image,
                                                      TexturelessMode mode, const Geometry& geom,
                                                      const FaceModel& model, const SHLight& light,
                                                      const Camera& cam, double alpha_band_px) {
  CameraBasis basis = camera_basis(cam);
  auto pmode = mode == TexturelessMode::normal ? detail::ShadePixelMode::normal_color
                                               : detail::ShadePixelMode::grey;
  auto normals = detail::vertex_normal_data(geom, model);
  auto faces = detail::prepare_faces(geom, model, basis, cam.near);
  auto records = pixel_backward_pass(pmode, frag, grad_image, nullptr, geom, model, light, basis,
                                     cam.near, normals, faces);
  auto grad = fold_vertex_gradients(records, geom, model, basis, normals);
  if (alpha_band_px > 0.0)
    add_alpha_band_gradients(grad, frag, grad_image, pmode, nullptr, geom, model, light, basis,
                             normals, faces, alpha_band_px);
  return grad;
}

// ---- appendix sampling ----------------------------------------------------

Camera sample_camera(Rng& rng, const Camera& proto) {
  static const double kElevation[] = {0.0, 10.0, 30.0};
  static const double kAzimuth[] = {0.0, 30.0, 60.0, 300.0, 330.0};
  static const double kDistance[] = {1.5, 3.0};
  Camera cam = proto;
  cam.elevation_deg = kElevation[rng.uniform_index(3)];
  cam.azimuth_deg = kAzimuth[rng.uniform_index(5)];
  cam.distance = kDistance[rng.uniform_index(2)];
  return cam;
}

const std::vector<SHLight>& light_table() {
  static const std::vector<SHLight> table = [] {
    std::vector<SHLight> lights;
    lights.push_back(ambient_light(0.75));
    Rng rng(0x4C49474854ULL);  // fixed: the sets are data, not samples
    while (lights.size() < 16) {
      double base = 0.55 + 0.25 * rng.uniform();
      double cy = -0.2 + 1.2 * rng.uniform();
      double phi = 2.0 * kPi * rng.uniform();
      double cr = std::sqrt(std::max(0.0, 1.0 - cy * cy));
      Vec3 dir{cr * std::sin(phi), cy, cr * std::cos(phi)};
      double strength = 0.35 + 0.15 * rng.uniform();
      SHLight l;
      for (int c = 0; c < 3; ++c) {
        double tint = base * (1.0 + 0.08 * (rng.uniform() - 0.5));
        l.coeffs[0][c] = tint / kC4;
        double k1 = strength * tint / (2.0 * kC2);
        l.coeffs[3][c] = k1 * dir.x;
        l.coeffs[1][c] = k1 * dir.y;
        l.coeffs[2][c] = k1 * dir.z;
        l.coeffs[4 + c][c] = 0.05 * tint * (rng.uniform() - 0.5) / kC1;
      }
      lights.push_back(l);
    }
    return lights;
  }();
  return table;
}

SHLight sample_light(Rng& rng) { return light_table()[size_t(rng.uniform_index(16))]; }

}  // namespace fg2e
