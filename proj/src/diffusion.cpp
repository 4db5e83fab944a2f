#include "fg2e/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fg2e/common.hpp"
#include "fg2e/serialize.hpp"
#include "fg2e/texture_space.hpp"

namespace fg2e {

int NoiseSchedule::step_for(double t) const {
  double clamped = std::clamp(t, 0.0, 1.0);
  long long step = std::llround(clamped * (t_max() - 1));
  return int(std::clamp(step, 0LL, (long long)t_max() - 1));
}

NoiseSchedule make_schedule(ScheduleKind kind, int t_max) {
  if (kind != ScheduleKind::linear_beta) throw std::invalid_argument("unknown schedule kind");
  if (t_max < 2) throw std::invalid_argument("schedule needs at least two steps");
  NoiseSchedule s;
  s.alpha_bar.resize(size_t(t_max));
  const double beta0 = 1e-4, beta1 = 2e-2;
  double prod = 1.0;
  for (int i = 0; i < t_max; ++i) {
    double beta = beta0 + (beta1 - beta0) * double(i) / double(t_max - 1);
    prod *= 1.0 - beta;
    s.alpha_bar[size_t(i)] = prod;
  }
  return s;
}

Tensor add_noise(const Tensor& z, double t, const Tensor& eps, const NoiseSchedule& sched) {
  if (!z.same_shape(eps)) throw std::invalid_argument("noise shape mismatch");
  double abar = sched.alpha_bar_at(t);
  double a = std::sqrt(abar), b = std::sqrt(1.0 - abar);
  Tensor out(z.dims());
  for (size_t i = 0; i < z.size(); ++i) out[i] = a * z[i] + b * eps[i];
  return out;
}

uint64_t hash_bytes(const void* data, size_t n, uint64_t h) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t hash_tensor(const Tensor& t, uint64_t h) {
  uint64_t rank = uint64_t(t.rank());
  h = hash_bytes(&rank, sizeof rank, h);
  for (int i = 0; i < t.rank(); ++i) {
    uint64_t d = uint64_t(t.dim(i));
    h = hash_bytes(&d, sizeof d, h);
  }
  return hash_bytes(t.data(), t.size() * sizeof(double), h);
}

uint64_t condition_hash(const Condition& cond) {
  uint64_t h = 0xcbf29ce484222325ULL;
  uint64_t n = cond.tokens.size();
  h = hash_bytes(&n, sizeof n, h);
  if (n) h = hash_bytes(cond.tokens.data(), n * sizeof(int), h);
  unsigned char flags = (cond.depth ? 1 : 0) | (cond.original_latent ? 2 : 0) |
                        (cond.screen_uv ? 4 : 0) | (cond.view_tag == ViewTag::side ? 8 : 0);
  h = hash_bytes(&flags, 1, h);
  if (cond.depth) h = hash_tensor(*cond.depth, h);
  if (cond.original_latent) h = hash_tensor(*cond.original_latent, h);
  if (cond.screen_uv) h = hash_tensor(*cond.screen_uv, h);
  return h;
}

uint64_t query_hash(const Tensor& z_t, double t, const Condition& cond) {
  uint64_t h = hash_tensor(z_t, condition_hash(cond));
  return hash_bytes(&t, sizeof t, h);
}

Tensor ScoreOracle::attention(const Tensor&, double, const Condition&, int) const {
  throw std::logic_error("oracle does not expose attention maps");
}

namespace {

// Shared closed form: the epsilon that denoises z_t toward `target`.
Tensor eps_toward(const Tensor& z_t, double t, const Tensor& target, const NoiseSchedule& sched) {
  if (!z_t.same_shape(target)) throw std::invalid_argument("target shape mismatch");
  double abar = sched.alpha_bar_at(t);
  double a = std::sqrt(abar), inv = 1.0 / std::sqrt(1.0 - abar);
  Tensor out(z_t.dims());
  for (size_t i = 0; i < z_t.size(); ++i) out[i] = (z_t[i] - a * target[i]) * inv;
  return out;
}

}  // namespace

GaussianTargetOracle::GaussianTargetOracle(Tensor target, NoiseSchedule sched)
    : target_(std::move(target)), sched_(std::move(sched)) {}

Tensor GaussianTargetOracle::predict_eps(const Tensor& z_t, double t, const Condition&) const {
  return eps_toward(z_t, t, target_, sched_);
}

DepthBandedOracle::DepthBandedOracle(std::vector<Vec3> palette, NoiseSchedule sched)
    : palette_(std::move(palette)), sched_(std::move(sched)) {
  if (palette_.empty()) throw std::invalid_argument("palette must not be empty");
}

Tensor DepthBandedOracle::banded_target_image(const Tensor& depth) const {
  if (depth.rank() != 2) throw std::invalid_argument("depth must be H x W");
  const int h = depth.dim(0), w = depth.dim(1);
  // Bands span the covered depth range so every scene exercises the whole
  // palette; background (depth 0) stays black.
  double lo = 1.0, hi = 0.0;
  for (size_t i = 0; i < depth.size(); ++i)
    if (depth[i] > 0.0) {
      lo = std::min(lo, depth[i]);
      hi = std::max(hi, depth[i]);
    }
  const int n = int(palette_.size());
  const double span = hi - lo;
  Tensor img({h, w, 3});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double d = depth.at(y, x);
      if (d <= 0.0) continue;
      int band = span > 0.0 ? std::min(n - 1, int((d - lo) / span * n)) : 0;
      const Vec3& c = palette_[size_t(band)];
      img.at(y, x, 0) = c.x;
      img.at(y, x, 1) = c.y;
      img.at(y, x, 2) = c.z;
    }
  return img;
}

Tensor DepthBandedOracle::predict_eps(const Tensor& z_t, double t, const Condition& cond) const {
  if (!cond.depth) throw ContractError("depth_banded oracle requires a depth condition");
  Tensor target = encode_image(banded_target_image(*cond.depth));
  return eps_toward(z_t, t, target, sched_);
}

MaskedEditOracle::MaskedEditOracle(EditRegion region, Vec3 edit_color, int token,
                                   NoiseSchedule sched)
    : region_(std::move(region)), edit_color_(edit_color), token_(token),
      sched_(std::move(sched)) {
  if (region_.mask.rank() != 2) throw std::invalid_argument("edit region mask must be rank 2");
}

Tensor MaskedEditOracle::screen_mask(const Condition& cond, int h, int w) const {
  if (!region_.in_uv) {
    if (region_.mask.dim(0) != h || region_.mask.dim(1) != w)
      throw std::invalid_argument("screen mask does not match render size");
    return region_.mask;
  }
  if (!cond.screen_uv) throw ContractError("uv edit region requires a screen_uv condition");
  const Tensor& uvm = *cond.screen_uv;
  if (uvm.rank() != 3 || uvm.dim(0) != h || uvm.dim(1) != w)
    throw std::invalid_argument("screen_uv does not match render size");
  const int res = region_.mask.dim(0);
  Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (uvm.at(y, x, 2) <= 0.5) continue;
      int tx = std::clamp(int(uvm.at(y, x, 0) * region_.mask.dim(1)), 0, region_.mask.dim(1) - 1);
      int ty = std::clamp(int(uvm.at(y, x, 1) * res), 0, res - 1);
      out.at(y, x) = region_.mask.at(ty, tx);
    }
  return out;
}

Tensor MaskedEditOracle::target_latent(const Condition& cond) const {
  if (!cond.original_latent)
    throw ContractError("masked_edit oracle requires an original_latent condition");
  const Tensor& orig = *cond.original_latent;
  if (orig.rank() != 3 || orig.dim(2) != 3)
    throw std::invalid_argument("original_latent must be h x w x 3");
  const int lh = orig.dim(0), lw = orig.dim(1);
  Tensor mask = screen_mask(cond, lh * 4, lw * 4);
  Tensor target = orig;
  const double color[3] = {edit_color_.x, edit_color_.y, edit_color_.z};
  for (int y = 0; y < lh; ++y)
    for (int x = 0; x < lw; ++x) {
      double f = 0.0;
      for (int dy = 0; dy < 4; ++dy)
        for (int dx = 0; dx < 4; ++dx) f += mask.at(y * 4 + dy, x * 4 + dx);
      f /= 16.0;
      if (f <= 0.0) continue;
      for (int c = 0; c < 3; ++c)
        target.at(y, x, c) = (1.0 - f) * orig.at(y, x, c) + f * color[c];
    }
  return target;
}

Tensor MaskedEditOracle::predict_eps(const Tensor& z_t, double t, const Condition& cond) const {
  return eps_toward(z_t, t, target_latent(cond), sched_);
}

Tensor MaskedEditOracle::attention(const Tensor& z_t, double, const Condition& cond,
                                   int token) const {
  const int h = z_t.dim(0) * 4, w = z_t.dim(1) * 4;
  Tensor out({h, w});
  if (token != token_) return out;
  Tensor mask = screen_mask(cond, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          acc += mask.at(yy, xx);
        }
      out.at(y, x) = acc / 9.0;
    }
  return out;
}

static constexpr char kFixtureMagic[4] = {'F', 'G', '2', 'F'};

FixtureOracle::FixtureOracle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open fixture: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kFixtureMagic, 4) != 0)
    throw FormatError("bad fixture magic", 0);
  uint32_t version = io::read_u32(in, "fixture version");
  if (version != 1) throw FormatError("unsupported fixture version", 4);
  uint64_t count = io::read_u64(in, "fixture count");
  if (count > (1u << 20)) throw FormatError("fixture record count out of range", 8);
  for (uint64_t i = 0; i < count; ++i) {
    uint64_t key = io::read_u64(in, "fixture key");
    table_[key] = read_fg2t(in);
  }
}

Tensor FixtureOracle::predict_eps(const Tensor& z_t, double t, const Condition& cond) const {
  uint64_t key = query_hash(z_t, t, cond);
  auto it = table_.find(key);
  if (it == table_.end()) throw MissingFixtureError(key);
  return it->second;
}

Tensor RecordingOracle::predict_eps(const Tensor& z_t, double t, const Condition& cond) const {
  uint64_t key = query_hash(z_t, t, cond);
  auto it = table_.find(key);
  if (it != table_.end()) return it->second;
  Tensor eps = snap_f32(inner_.predict_eps(z_t, t, cond));
  table_.emplace(key, eps);
  order_.push_back(key);
  return eps;
}

Tensor RecordingOracle::attention(const Tensor& z_t, double t, const Condition& cond,
                                  int token) const {
  return inner_.attention(z_t, t, cond, token);
}

void RecordingOracle::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path);
  out.write(kFixtureMagic, 4);
  io::write_u32(out, 1);
  io::write_u64(out, order_.size());
  for (uint64_t key : order_) {
    io::write_u64(out, key);
    write_fg2t(out, table_.at(key));
  }
  if (!out) throw FormatError("write failed: " + path);
}

}  // namespace fg2e
