#pragma once

#include <cstdint>

#include "fg2e/tensor.hpp"

namespace fg2e {

// Fixed-weight texture decoder: bilinear x4 upsample of the latent grid,
// a 1x1 channel-mixing map, then a logistic squash into (0,1). Weights are
// generated from the seed so checkpoints can restate them exactly.
struct TextureDecoder {
  uint64_t seed = 0;
  int upsample = 4;
  Tensor mix;   // 3 x latent_channels
  Tensor bias;  // 3
  int latent_channels() const { return mix.dim(1); }
};

TextureDecoder make_texture_decoder(uint64_t seed, int latent_channels = 4);

// latent h x w x c -> texture (4h) x (4w) x 3.
Tensor decode_texture(const TextureDecoder& dec, const Tensor& latent);

// Pullback of decode_texture: gradient w.r.t. the texture -> gradient
// w.r.t. the latent. Serial scatter; bit-stable across thread counts.
Tensor decode_texture_backward(const TextureDecoder& dec, const Tensor& latent,
                               const Tensor& grad_texture);

// 4x4 average pooling per channel; the fixed image encoder. The image must
// be square with side divisible by the pool size.
Tensor encode_image(const Tensor& image);
Tensor encode_image_backward(const Tensor& grad_latent, int image_h, int image_w);

// BT.601 full-range transforms; U and V are offset by 0.5 so all three
// channels live in [0,1] for [0,1] RGB inputs. Last dimension must be 3.
Tensor rgb_to_yuv(const Tensor& rgb);
Tensor yuv_to_rgb(const Tensor& yuv);
// Pullback of rgb_to_yuv (transpose of its linear part; offsets drop out).
Tensor rgb_to_yuv_backward(const Tensor& grad_yuv);

}  // namespace fg2e
