#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <utility>

#include "balloonseg/image.hpp"
#include "balloonseg/tensor.hpp"

namespace bseg {

struct AugmentConfig {
  double hue_range = 0.3;    // hue offset drawn from U(0, hue_range)
  double shift_range = 0.2;  // max translation as a fraction of each dimension
  bool hflip = true;
  bool vflip = true;

  void validate() const {
    if (!(hue_range >= 0.0 && hue_range < 1.0)) throw std::invalid_argument("hue_range must lie in [0,1)");
    if (!(shift_range >= 0.0 && shift_range < 1.0)) throw std::invalid_argument("shift_range must lie in [0,1)");
  }
};

/// One concrete draw of the random transform.
struct AugmentParams {
  double hue_shift = 0.0;
  long shift_y = 0;
  long shift_x = 0;
  bool flip_h = false;
  bool flip_v = false;
};

inline AugmentParams draw_augment_params(const AugmentConfig& cfg, std::mt19937_64& rng, std::size_t h,
                                         std::size_t w) {
  cfg.validate();
  AugmentParams p;
  std::uniform_real_distribution<double> hue(0.0, cfg.hue_range);
  p.hue_shift = cfg.hue_range > 0.0 ? hue(rng) : 0.0;
  const long max_dy = std::lround(cfg.shift_range * static_cast<double>(h));
  const long max_dx = std::lround(cfg.shift_range * static_cast<double>(w));
  p.shift_y = std::uniform_int_distribution<long>(-max_dy, max_dy)(rng);
  p.shift_x = std::uniform_int_distribution<long>(-max_dx, max_dx)(rng);
  std::bernoulli_distribution coin(0.5);
  const bool fh = coin(rng);
  const bool fv = coin(rng);
  p.flip_h = cfg.hflip && fh;
  p.flip_v = cfg.vflip && fv;
  return p;
}

/// Rotates the hue of every pixel of a 1x3xHxW tensor by `offset` (mod 1).
inline void rotate_hue(Tensor<float>& image, double offset) {
  if (offset == 0.0) return;
  const Shape& s = image.shape();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < s.plane(); ++i) {
      float& r = image.vec()[image.index(n, 0, 0, 0) + i];
      float& g = image.vec()[image.index(n, 1, 0, 0) + i];
      float& b = image.vec()[image.index(n, 2, 0, 0) + i];
      Hsv hsv = rgb_to_hsv(r, g, b);
      if (hsv.s <= 0.0f) continue;
      const double h = std::fmod(static_cast<double>(hsv.h) + offset, 1.0);
      hsv.h = static_cast<float>(h);
      const auto rgb = hsv_to_rgb(hsv);
      r = std::clamp(rgb[0], 0.0f, 1.0f);
      g = std::clamp(rgb[1], 0.0f, 1.0f);
      b = std::clamp(rgb[2], 0.0f, 1.0f);
    }
  }
}

/// out(y, x) = in(y - dy, x - dx); vacated pixels become 0.
inline Tensor<float> shift(const Tensor<float>& t, long dy, long dx) {
  const Shape& s = t.shape();
  Tensor<float> out(s);
  const auto h = static_cast<long>(s.h), w = static_cast<long>(s.w);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (long y = 0; y < h; ++y) {
        const long sy = y - dy;
        if (sy < 0 || sy >= h) continue;
        for (long x = 0; x < w; ++x) {
          const long sx = x - dx;
          if (sx < 0 || sx >= w) continue;
          out(n, c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
              t(n, c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
        }
      }
    }
  }
  return out;
}

inline Tensor<float> flip(const Tensor<float>& t, bool horizontal, bool vertical) {
  if (!horizontal && !vertical) return t;
  const Shape& s = t.shape();
  Tensor<float> out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < s.h; ++y) {
        const std::size_t sy = vertical ? s.h - 1 - y : y;
        for (std::size_t x = 0; x < s.w; ++x) {
          out(n, c, y, x) = t(n, c, sy, horizontal ? s.w - 1 - x : x);
        }
      }
    }
  }
  return out;
}

/// Geometric part only; identical for image and mask.
inline Tensor<float> apply_geometry(const Tensor<float>& t, const AugmentParams& p) {
  return flip(shift(t, p.shift_y, p.shift_x), p.flip_h, p.flip_v);
}

/// Hue rotation on the image only, then the shared shift and flips.
inline std::pair<Tensor<float>, Tensor<float>> augment(const Tensor<float>& image, const Tensor<float>& mask,
                                                       const AugmentParams& p) {
  const Shape& is = image.shape();
  const Shape& ms = mask.shape();
  if (is.h != ms.h || is.w != ms.w || is.n != ms.n) {
    throw ShapeError("augment: image " + is.str() + " and mask " + ms.str() + " differ in size");
  }
  Tensor<float> img = image;
  rotate_hue(img, p.hue_shift);
  return {apply_geometry(img, p), apply_geometry(mask, p)};
}

inline std::pair<Tensor<float>, Tensor<float>> augment(const Tensor<float>& image, const Tensor<float>& mask,
                                                       const AugmentConfig& cfg, std::mt19937_64& rng) {
  return augment(image, mask, draw_augment_params(cfg, rng, image.shape().h, image.shape().w));
}

}  // namespace bseg
