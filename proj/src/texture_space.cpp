#include "fg2e/texture_space.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fg2e/rng.hpp"

namespace fg2e {

namespace {

constexpr int kPool = 4;

// Luma weights; everything else is derived so the transform pair inverts to
// machine precision.
constexpr double kYR = 0.299;
constexpr double kYB = 0.114;
constexpr double kYG = 1.0 - kYR - kYB;

struct Tap {
  int i0, i1;
  double w0, w1;
};

// Sample-point convention: output pixel centers at (o + 0.5) / scale - 0.5,
// edges clamped.
Tap tap_for(int o, int scale, int extent) {
  double x = (o + 0.5) / scale - 0.5;
  double base = std::floor(x);
  int i = int(base);
  Tap t;
  t.w1 = x - base;
  t.w0 = 1.0 - t.w1;
  t.i0 = std::clamp(i, 0, extent - 1);
  t.i1 = std::clamp(i + 1, 0, extent - 1);
  return t;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_latent(const TextureDecoder& dec, const Tensor& latent) {
  if (latent.rank() != 3) throw std::invalid_argument("latent must be h x w x c");
  if (latent.dim(2) != dec.latent_channels())
    throw std::invalid_argument("latent channel count does not match decoder");
}

}  // namespace

TextureDecoder make_texture_decoder(uint64_t seed, int latent_channels) {
  if (latent_channels <= 0) throw std::invalid_argument("latent_channels must be positive");
  TextureDecoder dec;
  dec.seed = seed;
  dec.mix = Tensor({3, latent_channels});
  dec.bias = Tensor({3});
  Rng rng(seed);
  for (size_t i = 0; i < dec.mix.size(); ++i) dec.mix[i] = 0.4 * rng.normal();
  for (size_t i = 0; i < dec.bias.size(); ++i) dec.bias[i] = 0.1 * rng.normal();
  return dec;
}

Tensor decode_texture(const TextureDecoder& dec, const Tensor& latent) {
  check_latent(dec, latent);
  const int h = latent.dim(0), w = latent.dim(1), c = latent.dim(2);
  const int s = dec.upsample;
  Tensor out({h * s, w * s, 3});
#pragma omp parallel for schedule(static)
  for (int oy = 0; oy < h * s; ++oy) {
    Tap ty = tap_for(oy, s, h);
    for (int ox = 0; ox < w * s; ++ox) {
      Tap tx = tap_for(ox, s, w);
      for (int o = 0; o < 3; ++o) {
        double pre = dec.bias[size_t(o)];
        for (int i = 0; i < c; ++i) {
          double up = ty.w0 * (tx.w0 * latent.at(ty.i0, tx.i0, i) +
                               tx.w1 * latent.at(ty.i0, tx.i1, i)) +
                      ty.w1 * (tx.w0 * latent.at(ty.i1, tx.i0, i) +
                               tx.w1 * latent.at(ty.i1, tx.i1, i));
          pre += dec.mix.at(o, i) * up;
        }
        out.at(oy, ox, o) = sigmoid(pre);
      }
    }
  }
  return out;
}

Tensor decode_texture_backward(const TextureDecoder& dec, const Tensor& latent,
                               const Tensor& grad_texture) {
  check_latent(dec, latent);
  const int h = latent.dim(0), w = latent.dim(1), c = latent.dim(2);
  const int s = dec.upsample;
  if (grad_texture.rank() != 3 || grad_texture.dim(0) != h * s || grad_texture.dim(1) != w * s ||
      grad_texture.dim(2) != 3)
    throw std::invalid_argument("grad_texture shape does not match decode output");

  Tensor grad(latent.dims());
  std::vector<double> up(static_cast<size_t>(c));
  for (int oy = 0; oy < h * s; ++oy) {
    Tap ty = tap_for(oy, s, h);
    for (int ox = 0; ox < w * s; ++ox) {
      Tap tx = tap_for(ox, s, w);
      for (int j = 0; j < c; ++j)
        up[size_t(j)] = ty.w0 * (tx.w0 * latent.at(ty.i0, tx.i0, j) +
                                 tx.w1 * latent.at(ty.i0, tx.i1, j)) +
                        ty.w1 * (tx.w0 * latent.at(ty.i1, tx.i0, j) +
                                 tx.w1 * latent.at(ty.i1, tx.i1, j));
      double gpre[3];
      for (int o = 0; o < 3; ++o) {
        double pre = dec.bias[size_t(o)];
        for (int j = 0; j < c; ++j) pre += dec.mix.at(o, j) * up[size_t(j)];
        double sig = sigmoid(pre);
        gpre[o] = grad_texture.at(oy, ox, o) * sig * (1.0 - sig);
      }
      for (int i = 0; i < c; ++i) {
        double g_up = 0.0;
        for (int o = 0; o < 3; ++o) g_up += gpre[o] * dec.mix.at(o, i);
        grad.at(ty.i0, tx.i0, i) += g_up * ty.w0 * tx.w0;
        grad.at(ty.i0, tx.i1, i) += g_up * ty.w0 * tx.w1;
        grad.at(ty.i1, tx.i0, i) += g_up * ty.w1 * tx.w0;
        grad.at(ty.i1, tx.i1, i) += g_up * ty.w1 * tx.w1;
      }
    }
  }
  return grad;
}

Tensor encode_image(const Tensor& image) {
  if (image.rank() != 3) throw std::invalid_argument("image must be H x W x C");
  const int hh = image.dim(0), ww = image.dim(1), c = image.dim(2);
  if (hh != ww) throw std::invalid_argument("encoder expects a square image");
  if (hh % kPool != 0) throw std::invalid_argument("image side must be divisible by 4");
  const int oh = hh / kPool, ow = ww / kPool;
  Tensor out({oh, ow, c});
#pragma omp parallel for schedule(static)
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      for (int k = 0; k < c; ++k) {
        double acc = 0.0;
        for (int dy = 0; dy < kPool; ++dy)
          for (int dx = 0; dx < kPool; ++dx) acc += image.at(y * kPool + dy, x * kPool + dx, k);
        out.at(y, x, k) = acc / (kPool * kPool);
      }
  return out;
}

Tensor encode_image_backward(const Tensor& grad_latent, int image_h, int image_w) {
  if (grad_latent.rank() != 3) throw std::invalid_argument("grad_latent must be h x w x c");
  const int oh = grad_latent.dim(0), ow = grad_latent.dim(1), c = grad_latent.dim(2);
  if (image_h != oh * kPool || image_w != ow * kPool)
    throw std::invalid_argument("image size does not match pooled grid");
  Tensor grad({image_h, image_w, c});
#pragma omp parallel for schedule(static)
  for (int y = 0; y < image_h; ++y)
    for (int x = 0; x < image_w; ++x)
      for (int k = 0; k < c; ++k)
        grad.at(y, x, k) = grad_latent.at(y / kPool, x / kPool, k) / (kPool * kPool);
  return grad;
}

namespace {

void check_color(const Tensor& t) {
  if (t.rank() < 1 || t.dim(t.rank() - 1) != 3)
    throw std::invalid_argument("color transform expects trailing dimension 3");
}

}  // namespace

Tensor rgb_to_yuv(const Tensor& rgb) {
  check_color(rgb);
  Tensor out(rgb.dims());
  const size_t n = rgb.size() / 3;
  const double cu = 0.5 / (1.0 - kYB), cv = 0.5 / (1.0 - kYR);
#pragma omp parallel for schedule(static)
  for (long long p = 0; p < (long long)n; ++p) {
    double r = rgb[size_t(p) * 3], g = rgb[size_t(p) * 3 + 1], b = rgb[size_t(p) * 3 + 2];
    double y = kYR * r + kYG * g + kYB * b;
    out[size_t(p) * 3] = y;
    out[size_t(p) * 3 + 1] = cu * (b - y) + 0.5;
    out[size_t(p) * 3 + 2] = cv * (r - y) + 0.5;
  }
  return out;
}

Tensor yuv_to_rgb(const Tensor& yuv) {
  check_color(yuv);
  Tensor out(yuv.dims());
  const size_t n = yuv.size() / 3;
#pragma omp parallel for schedule(static)
  for (long long p = 0; p < (long long)n; ++p) {
    double y = yuv[size_t(p) * 3], u = yuv[size_t(p) * 3 + 1], v = yuv[size_t(p) * 3 + 2];
    double r = y + 2.0 * (1.0 - kYR) * (v - 0.5);
    double b = y + 2.0 * (1.0 - kYB) * (u - 0.5);
    double g = (y - kYR * r - kYB * b) / kYG;
    out[size_t(p) * 3] = r;
    out[size_t(p) * 3 + 1] = g;
    out[size_t(p) * 3 + 2] = b;
  }
  return out;
}

Tensor rgb_to_yuv_backward(const Tensor& grad_yuv) {
  check_color(grad_yuv);
  Tensor out(grad_yuv.dims());
  const size_t n = grad_yuv.size() / 3;
  const double cu = 0.5 / (1.0 - kYB), cv = 0.5 / (1.0 - kYR);
#pragma omp parallel for schedule(static)
  for (long long p = 0; p < (long long)n; ++p) {
    double gy = grad_yuv[size_t(p) * 3], gu = grad_yuv[size_t(p) * 3 + 1],
           gv = grad_yuv[size_t(p) * 3 + 2];
    out[size_t(p) * 3] = kYR * gy - cu * kYR * gu + cv * (1.0 - kYR) * gv;
    out[size_t(p) * 3 + 1] = kYG * gy - cu * kYG * gu - cv * kYG * gv;
    out[size_t(p) * 3 + 2] = kYB * gy + cu * (1.0 - kYB) * gu - cv * kYB * gv;
  }
  return out;
}

}  // namespace fg2e
