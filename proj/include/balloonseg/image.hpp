#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "balloonseg/tensor.hpp"

namespace bseg {

/// 8-bit interleaved RGB raster.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // size = width * height * 3

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, std::array<std::uint8_t, 3> fill = {0, 0, 0})
      : width(w), height(h), pixels(w * h * 3) {
    for (std::size_t i = 0; i < w * h; ++i) std::copy(fill.begin(), fill.end(), pixels.begin() + 3 * i);
  }

  bool empty() const { return width == 0 || height == 0; }
  std::uint8_t* at(std::size_t x, std::size_t y) { return &pixels[(y * width + x) * 3]; }
  const std::uint8_t* at(std::size_t x, std::size_t y) const { return &pixels[(y * width + x) * 3]; }
  void set(std::size_t x, std::size_t y, std::array<std::uint8_t, 3> c) { std::copy(c.begin(), c.end(), at(x, y)); }

  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// 8-bit single-channel raster (masks, probability maps).
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

/// Bilinear resampling with half-pixel centers over `channels` interleaved
/// planes. Identical source and target sizes reproduce the input exactly.
inline std::vector<float> resize_bilinear(const std::vector<float>& src, std::size_t sw, std::size_t sh,
                                          std::size_t channels, std::size_t dw, std::size_t dh) {
  if (dw == 0 || dh == 0) throw std::invalid_argument("resize: zero-size target");
  if (sw == 0 || sh == 0) throw std::invalid_argument("resize: empty source");
  std::vector<float> dst(dw * dh * channels);
  const double sx = static_cast<double>(sw) / static_cast<double>(dw);
  const double sy = static_cast<double>(sh) / static_cast<double>(dh);
  for (std::size_t y = 0; y < dh; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(sh - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, sh - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < dw; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(sw - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, sw - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < channels; ++c) {
        auto px = [&](std::size_t xx, std::size_t yy) { return static_cast<double>(src[(yy * sw + xx) * channels + c]); };
        const double top = px(x0, y0) + wx * (px(x1, y0) - px(x0, y0));
        const double bot = px(x0, y1) + wx * (px(x1, y1) - px(x0, y1));
        dst[(y * dw + x) * channels + c] = static_cast<float>(top + wy * (bot - top));
      }
    }
  }
  return dst;
}

inline RgbImage resize_image(const RgbImage& img, std::size_t out_w, std::size_t out_h) {
  if (img.empty()) throw std::invalid_argument("resize_image: empty image");
  if (out_w == img.width && out_h == img.height) return img;
  std::vector<float> src(img.pixels.begin(), img.pixels.end());
  const auto dst = resize_bilinear(src, img.width, img.height, 3, out_w, out_h);
  RgbImage out(out_w, out_h);
  for (std::size_t i = 0; i < dst.size(); ++i) {
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(dst[i]), 0L, 255L));
  }
  return out;
}

/// Linear [0,255] -> [0,1], laid out as a 1x3xHxW tensor.
inline Tensor<float> normalize(const RgbImage& img) {
  if (img.empty()) throw std::invalid_argument("normalize: empty image");
  Tensor<float> t(Shape{1, 3, img.height, img.width});
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const auto* p = img.at(x, y);
      for (std::size_t c = 0; c < 3; ++c) t(0, c, y, x) = static_cast<float>(p[c]) / 255.0f;
    }
  }
  return t;
}

/// Inverse of normalize for a 1x3xHxW tensor (values clamped to [0,1]).
inline RgbImage to_rgb(const Tensor<float>& t) {
  const Shape& s = t.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("to_rgb: expected 1x3xHxW, got " + s.str());
  RgbImage img(s.w, s.h);
  for (std::size_t y = 0; y < s.h; ++y) {
    for (std::size_t x = 0; x < s.w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(x, y)[c] = static_cast<std::uint8_t>(std::lround(std::clamp(t(0, c, y, x), 0.0f, 1.0f) * 255.0f));
      }
    }
  }
  return img;
}

/// Probability plane (1x1xHxW) to 8-bit gray, 0..1 -> 0..255.
inline GrayImage to_gray(const Tensor<float>& t) {
  const Shape& s = t.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("to_gray: expected 1x1xHxW, got " + s.str());
  GrayImage g{s.w, s.h, std::vector<std::uint8_t>(s.plane())};
  for (std::size_t i = 0; i < s.plane(); ++i) {
    g.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(t[i], 0.0f, 1.0f) * 255.0f));
  }
  return g;
}

inline Tensor<float> from_gray(const GrayImage& g) {
  Tensor<float> t(Shape{1, 1, g.height, g.width});
  for (std::size_t i = 0; i < g.pixels.size(); ++i) t[i] = static_cast<float>(g.pixels[i]) / 255.0f;
  return t;
}

// --- HSV -------------------------------------------------------------------

struct Hsv {
  float h, s, v;  // all in [0,1]
};

inline Hsv rgb_to_hsv(float r, float g, float b) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  Hsv out{0.0f, mx > 0.0f ? d / mx : 0.0f, mx};
  if (d > 0.0f) {
    float h;
    if (mx == r) h = (g - b) / d;
    else if (mx == g) h = 2.0f + (b - r) / d;
    else h = 4.0f + (r - g) / d;
    h /= 6.0f;
    if (h < 0.0f) h += 1.0f;
    out.h = h;
  }
  return out;
}

inline std::array<float, 3> hsv_to_rgb(Hsv c) {
  if (c.s <= 0.0f) return {c.v, c.v, c.v};
  const float h6 = (c.h - std::floor(c.h)) * 6.0f;
  const int sector = static_cast<int>(h6) % 6;
  const float f = h6 - std::floor(h6);
  const float p = c.v * (1.0f - c.s);
  const float q = c.v * (1.0f - c.s * f);
  const float t = c.v * (1.0f - c.s * (1.0f - f));
  switch (sector) {
    case 0: return {c.v, t, p};
    case 1: return {q, c.v, p};
    case 2: return {p, c.v, t};
    case 3: return {p, q, c.v};
    case 4: return {t, p, c.v};
    default: return {c.v, p, q};
  }
}

}  // namespace bseg
