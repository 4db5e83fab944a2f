#include "fg2e/reference.hpp"

#include <stdexcept>

#include "render_kernels.hpp"

namespace fg2e::ref {

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

  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      detail::PixelFragment pf = detail::raster_pixel(faces, x, y, cam.near, cam.far);
      size_t i = size_t(y) * size + x;
      if (pf.face < 0) continue;
      frag.face_id[i] = pf.face;
      frag.depth[i] = pf.depth;
      frag.mask[i] = 1;
      for (int k = 0; k < 3; ++k) frag.bary.at(y, x, k) = pf.bary[k];
    }
  return frag;
}

Image shade_textured(const FragmentBuffer& frag, const Tensor& texture, const Geometry& geom,
                     const FaceModel& model, const SHLight& light) {
  auto normals = detail::vertex_normal_data(geom, model);
  Image img({frag.height, frag.width, 3});
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
  for (int y = 0; y < frag.height; ++y)
    for (int x = 0; x < frag.width; ++x) {
      if (!frag.covered(y, x)) continue;
      Vec3 c = detail::shade_pixel_raw(pmode, frag, y, x, nullptr, model, normals.unit, light);
      for (int k = 0; k < 3; ++k) img.at(y, x, k) = clamp01(c[k]);
    }
  return img;
}

PositionMap unwrap_position_map(const Geometry& geom, const FaceModel& model, int resolution) {
  if (resolution < 1) throw std::invalid_argument("resolution must be >= 1");
  PositionMap map;
  map.resolution = resolution;
  map.grid = Tensor({resolution, resolution, 3});
  map.valid.assign(size_t(resolution) * resolution, 0);
  for (int fi = 0; fi < model.face_count(); ++fi) {
    const auto& tri = model.faces[size_t(fi)];
    if (detail::edge2d(model.uv[size_t(tri[0])], model.uv[size_t(tri[1])],
                       model.uv[size_t(tri[2])]) == 0.0)
      map.degenerate_skipped += 1;
  }
  for (int ty = 0; ty < resolution; ++ty)
    for (int tx = 0; tx < resolution; ++tx) {
      Vec2 center{(tx + 0.5) / resolution, (ty + 0.5) / resolution};
      for (int fi = 0; fi < model.face_count(); ++fi) {
        const auto& tri = model.faces[size_t(fi)];
        const Vec2& a = model.uv[size_t(tri[0])];
        const Vec2& b = model.uv[size_t(tri[1])];
        const Vec2& c = model.uv[size_t(tri[2])];
        double area2 = detail::edge2d(a, b, c);
        if (area2 == 0.0) continue;
        double l0 = detail::edge2d(b, c, center) / area2;
        double l1 = detail::edge2d(c, a, center) / area2;
        double l2 = detail::edge2d(a, b, center) / area2;
        if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) continue;
        Vec3 p = geom.vertices[size_t(tri[0])] * l0 + geom.vertices[size_t(tri[1])] * l1 +
                 geom.vertices[size_t(tri[2])] * l2;
        map.grid.at(ty, tx, 0) = p.x;
        map.grid.at(ty, tx, 1) = p.y;
        map.grid.at(ty, tx, 2) = p.z;
        map.valid[size_t(ty) * resolution + tx] = 1;
        break;
      }
    }
  return map;
}

}  // namespace fg2e::ref
