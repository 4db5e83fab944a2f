#include "fg2e/face_model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "fg2e/common.hpp"
#include "fg2e/rng.hpp"
#include "fg2e/serialize.hpp"

namespace fg2e {

void FaceModel::validate() const {
  const int v = vertex_count();
  if (int(uv.size()) != v) throw std::invalid_argument("uv count does not match vertex count");
  for (const auto& b : basis)
    if (int(b.size()) != v) throw std::invalid_argument("basis row does not match vertex count");
  for (const auto& f : faces)
    for (int idx : f)
      if (idx < 0 || idx >= v) throw std::invalid_argument("face index out of range");
  for (const auto& t : uv)
    if (t.x < 0.0 || t.x > 1.0 || t.y < 0.0 || t.y > 1.0)
      throw std::invalid_argument("uv coordinate outside [0,1]");
}

Geometry apply_blendshape(const FaceModel& model, const IdentityCoeffs& beta) {
  if (int(beta.size()) != model.basis_count())
    throw std::invalid_argument("coefficient count does not match basis count");
  const int v = model.vertex_count();
  const int k = model.basis_count();
  Geometry geom;
  geom.vertices.resize(size_t(v));
#pragma omp parallel for schedule(static)
  for (int i = 0; i < v; ++i) {
    Vec3 p = model.mean[size_t(i)];
    for (int j = 0; j < k; ++j) p += model.basis[size_t(j)][size_t(i)] * beta[size_t(j)];
    geom.vertices[size_t(i)] = p;
  }
  return geom;
}

IdentityCoeffs blendshape_backward(const FaceModel& model, const std::vector<Vec3>& grad_vertices) {
  if (int(grad_vertices.size()) != model.vertex_count())
    throw std::invalid_argument("gradient count does not match vertex count");
  const int k = model.basis_count();
  IdentityCoeffs grad(size_t(k), 0.0);
#pragma omp parallel for schedule(static)
  for (int j = 0; j < k; ++j) {
    double acc = 0.0;
    const auto& column = model.basis[size_t(j)];
    for (size_t i = 0; i < grad_vertices.size(); ++i) acc += dot(column[i], grad_vertices[i]);
    grad[size_t(j)] = acc;
  }
  return grad;
}

// Signed double area of (p,q,r); also the edge function of pq evaluated at r.
static double edge2d(const Vec2& p, const Vec2& q, const Vec2& r) {
  return (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x);
}

namespace {

struct TexelHit {
  int face = -1;
  double l0 = 0.0, l1 = 0.0, l2 = 0.0;
};

// Scans UV triangles in index order per texel center; the first covering
// face claims the texel, which implements the lowest-face-index tie rule.
struct UvScan {
  std::vector<TexelHit> hits;  // R*R
  int degenerate = 0;
};

UvScan scan_uv_coverage(const FaceModel& model, int resolution) {
  const int r = resolution;
  UvScan scan;
  scan.hits.assign(size_t(r) * r, TexelHit{});
  const int f = model.face_count();
  std::vector<uint8_t> degenerate(size_t(f), 0);
  for (int fi = 0; fi < f; ++fi) {
    const auto& tri = model.faces[size_t(fi)];
    double area2 = edge2d(model.uv[size_t(tri[0])], model.uv[size_t(tri[1])], model.uv[size_t(tri[2])]);
    if (area2 == 0.0) degenerate[size_t(fi)] = 1;
  }
  for (uint8_t d : degenerate) scan.degenerate += d;

#pragma omp parallel for schedule(static)
  for (int ty = 0; ty < r; ++ty) {
    for (int tx = 0; tx < r; ++tx) {
      Vec2 center{(tx + 0.5) / r, (ty + 0.5) / r};
      TexelHit hit;
      for (int fi = 0; fi < f; ++fi) {
        if (degenerate[size_t(fi)]) continue;
        const auto& tri = model.faces[size_t(fi)];
        const Vec2& a = model.uv[size_t(tri[0])];
        const Vec2& b = model.uv[size_t(tri[1])];
        const Vec2& c = model.uv[size_t(tri[2])];
        double area2 = edge2d(a, b, c);
        double l0 = edge2d(b, c, center) / area2;
        double l1 = edge2d(c, a, center) / area2;
        double l2 = edge2d(a, b, center) / area2;
        if (l0 >= 0.0 && l1 >= 0.0 && l2 >= 0.0) {
          hit = TexelHit{fi, l0, l1, l2};
          break;
        }
      }
      scan.hits[size_t(ty) * r + tx] = hit;
    }
  }
  return scan;
}

}  // namespace

PositionMap unwrap_position_map(const Geometry& geom, const FaceModel& model, int resolution) {
  if (resolution < 1) throw std::invalid_argument("resolution must be >= 1");
  if (int(geom.vertices.size()) != model.vertex_count())
    throw std::invalid_argument("geometry does not match model");
  UvScan scan = scan_uv_coverage(model, resolution);

  PositionMap map;
  map.resolution = resolution;
  map.grid = Tensor({resolution, resolution, 3});
  map.valid.assign(size_t(resolution) * resolution, 0);
  map.degenerate_skipped = scan.degenerate;

  const int r = resolution;
#pragma omp parallel for schedule(static)
  for (int ty = 0; ty < r; ++ty) {
    for (int tx = 0; tx < r; ++tx) {
      const TexelHit& hit = scan.hits[size_t(ty) * r + tx];
      if (hit.face < 0) continue;
      const auto& tri = model.faces[size_t(hit.face)];
      Vec3 p = geom.vertices[size_t(tri[0])] * hit.l0 + geom.vertices[size_t(tri[1])] * hit.l1 +
               geom.vertices[size_t(tri[2])] * hit.l2;
      map.grid.at(ty, tx, 0) = p.x;
      map.grid.at(ty, tx, 1) = p.y;
      map.grid.at(ty, tx, 2) = p.z;
      map.valid[size_t(ty) * r + tx] = 1;
    }
  }
  return map;
}

std::vector<Vec3> unwrap_position_map_backward(const FaceModel& model, int resolution,
                                               const Tensor& grad_grid) {
  if (grad_grid.rank() != 3 || grad_grid.dim(0) != resolution || grad_grid.dim(1) != resolution ||
      grad_grid.dim(2) != 3)
    throw std::invalid_argument("gradient grid shape mismatch");
  UvScan scan = scan_uv_coverage(model, resolution);
  std::vector<Vec3> grad(size_t(model.vertex_count()));
  // Serial scatter in texel order keeps the reduction deterministic.
  for (int ty = 0; ty < resolution; ++ty) {
    for (int tx = 0; tx < resolution; ++tx) {
      const TexelHit& hit = scan.hits[size_t(ty) * resolution + tx];
      if (hit.face < 0) continue;
      Vec3 g{grad_grid.at(ty, tx, 0), grad_grid.at(ty, tx, 1), grad_grid.at(ty, tx, 2)};
      const auto& tri = model.faces[size_t(hit.face)];
      grad[size_t(tri[0])] += g * hit.l0;
      grad[size_t(tri[1])] += g * hit.l1;
      grad[size_t(tri[2])] += g * hit.l2;
    }
  }
  return grad;
}

static constexpr char kModelMagic[4] = {'F', 'G', '2', 'E'};
static constexpr uint32_t kModelVersion = 1;
static constexpr uint32_t kMaxCount = 1u << 24;

void save_face_model(const FaceModel& model, const std::string& path) {
  model.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path);
  out.write(kModelMagic, 4);
  io::write_u32(out, kModelVersion);
  io::write_u32(out, uint32_t(model.vertex_count()));
  io::write_u32(out, uint32_t(model.basis_count()));
  io::write_u32(out, uint32_t(model.face_count()));
  for (const auto& p : model.mean) {
    io::write_f32(out, float(p.x));
    io::write_f32(out, float(p.y));
    io::write_f32(out, float(p.z));
  }
  for (const auto& column : model.basis)
    for (const auto& p : column) {
      io::write_f32(out, float(p.x));
      io::write_f32(out, float(p.y));
      io::write_f32(out, float(p.z));
    }
  for (const auto& t : model.uv) {
    io::write_f32(out, float(t.x));
    io::write_f32(out, float(t.y));
  }
  for (const auto& f : model.faces)
    for (int idx : f) io::write_u32(out, uint32_t(idx));
  if (!out) throw FormatError("write failed: " + path);
}

static double read_model_f32(std::istream& in, const char* what) {
  long long at = static_cast<long long>(in.tellg());
  float v = io::read_f32(in, what);
  if (std::isnan(v)) throw FormatError(std::string("NaN payload in ") + what, at);
  return double(v);
}

FaceModel load_face_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kModelMagic, 4) != 0) throw FormatError("bad model magic", 0);
  uint32_t version = io::read_u32(in, "model version");
  if (version != kModelVersion) throw FormatError("unsupported model version", 4);
  uint32_t v = io::read_u32(in, "vertex count");
  uint32_t k = io::read_u32(in, "basis count");
  uint32_t f = io::read_u32(in, "face count");
  if (v == 0 || v > kMaxCount || k > kMaxCount || f > kMaxCount)
    throw FormatError("implausible model dimensions", 8);

  FaceModel model;
  model.mean.resize(v);
  for (auto& p : model.mean) {
    p.x = read_model_f32(in, "mean shape");
    p.y = read_model_f32(in, "mean shape");
    p.z = read_model_f32(in, "mean shape");
  }
  model.basis.resize(k);
  for (auto& column : model.basis) {
    column.resize(v);
    for (auto& p : column) {
      p.x = read_model_f32(in, "basis");
      p.y = read_model_f32(in, "basis");
      p.z = read_model_f32(in, "basis");
    }
  }
  model.uv.resize(v);
  for (auto& t : model.uv) {
    t.x = read_model_f32(in, "uv");
    t.y = read_model_f32(in, "uv");
  }
  model.faces.resize(f);
  for (auto& face : model.faces) {
    for (int& idx : face) {
      long long at = static_cast<long long>(in.tellg());
      uint32_t raw = io::read_u32(in, "face index");
      if (raw >= v) throw FormatError("face index out of range", at);
      idx = int(raw);
    }
  }
  return model;
}

// Snapping through f32 keeps generated models bit-stable across the save/load
// boundary. The volatile store blocks the vectorizer from folding the
// double->float->double rounding away (observed with gcc 11 at -O3).
static double snap(double v) {
  volatile float f = float(v);
  return double(f);
}

FaceModel synthetic_face_model(uint64_t seed, int v_grid, int k) {
  if (v_grid < 2) throw std::invalid_argument("v_grid must be >= 2");
  if (k < 0) throw std::invalid_argument("basis count must be >= 0");
  Rng rng(seed ^ 0x66616365ULL);

  const int n = v_grid;
  const double half = 0.13;

  // Three smooth seeded bumps layered over a dome and a nose ridge.
  struct Bump {
    double amp, wx, wy, px, py;
  };
  std::vector<Bump> bumps(3);
  for (auto& b : bumps) {
    b.amp = 0.004 + 0.006 * rng.uniform();
    b.wx = 8.0 + 12.0 * rng.uniform();
    b.wy = 8.0 + 12.0 * rng.uniform();
    b.px = 2.0 * kPi * rng.uniform();
    b.py = 2.0 * kPi * rng.uniform();
  }

  FaceModel model;
  model.mean.resize(size_t(n) * n);
  model.uv.resize(size_t(n) * n);
  for (int gy = 0; gy < n; ++gy) {
    for (int gx = 0; gx < n; ++gx) {
      double x = -half + 2.0 * half * gx / (n - 1);
      double y = -half + 2.0 * half * gy / (n - 1);
      double z = 0.055 * std::exp(-(x * x + y * y) / (2.0 * 0.08 * 0.08));
      z += 0.02 * std::exp(-(x * x / (2.0 * 0.02 * 0.02) + (y + 0.02) * (y + 0.02) / (2.0 * 0.045 * 0.045)));
      for (const auto& b : bumps) z += b.amp * std::cos(b.wx * x + b.px) * std::cos(b.wy * y + b.py);
      z -= 0.035;
      size_t i = size_t(gy) * n + gx;
      model.mean[i] = {snap(x), snap(y), snap(z)};
      model.uv[i] = {snap(double(gx) / (n - 1)), snap(double(gy) / (n - 1))};
    }
  }

  model.basis.resize(size_t(k));
  for (int j = 0; j < k; ++j) {
    double amp_xy = 0.004, amp_z = 0.012;
    struct Field {
      double amp, wx, wy, px, py;
    };
    Field fields[3];
    for (int axis = 0; axis < 3; ++axis) {
      fields[axis].amp = (axis == 2 ? amp_z : amp_xy) * (0.5 + rng.uniform());
      fields[axis].wx = 6.0 + 14.0 * rng.uniform();
      fields[axis].wy = 6.0 + 14.0 * rng.uniform();
      fields[axis].px = 2.0 * kPi * rng.uniform();
      fields[axis].py = 2.0 * kPi * rng.uniform();
    }
    auto& column = model.basis[size_t(j)];
    column.resize(size_t(n) * n);
    for (int gy = 0; gy < n; ++gy) {
      for (int gx = 0; gx < n; ++gx) {
        double x = -half + 2.0 * half * gx / (n - 1);
        double y = -half + 2.0 * half * gy / (n - 1);
        Vec3 offset;
        for (int axis = 0; axis < 3; ++axis) {
          const Field& fl = fields[axis];
          offset[axis] = snap(fl.amp * std::cos(fl.wx * x + fl.px) * std::cos(fl.wy * y + fl.py));
        }
        column[size_t(gy) * n + gx] = offset;
      }
    }
  }

  model.faces.reserve(size_t(n - 1) * (n - 1) * 2);
  for (int gy = 0; gy < n - 1; ++gy) {
    for (int gx = 0; gx < n - 1; ++gx) {
      int v00 = gy * n + gx;
      int v10 = gy * n + gx + 1;
      int v01 = (gy + 1) * n + gx;
      int v11 = (gy + 1) * n + gx + 1;
      model.faces.push_back({v00, v10, v11});
      model.faces.push_back({v00, v11, v01});
    }
  }
  model.validate();
  return model;
}

}  // namespace fg2e
