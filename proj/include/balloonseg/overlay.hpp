#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "balloonseg/image.hpp"
#include "balloonseg/tensor.hpp"

namespace bseg {

using Rgb8 = std::array<std::uint8_t, 3>;

/// 256-entry "hot" table: red ramps over 0..85, green over 85..170, blue over
/// 170..255. Entry i = (clamp(3i), clamp(3i - 255), clamp(3i - 510)).
inline const std::array<Rgb8, 256>& hot_colormap() {
  static const std::array<Rgb8, 256> lut = [] {
    std::array<Rgb8, 256> t{};
    auto clamp8 = [](int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); };
    for (int i = 0; i < 256; ++i) {
      t[static_cast<std::size_t>(i)] = {clamp8(3 * i), clamp8(3 * i - 255), clamp8(3 * i - 510)};
    }
    return t;
  }();
  return lut;
}

/// Probability in [0,1] to an 8-bit level (round to nearest, clamped).
inline std::uint8_t probability_level(double p) {
  if (!(p >= 0.0)) return 0;  // also maps NaN to 0
  return static_cast<std::uint8_t>(std::lround(std::min(p, 1.0) * 255.0));
}

/// Grayscale rendering of a 1x1xHxW probability map.
inline GrayImage probability_image(const Tensor<float>& pred) {
  const Shape& s = pred.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("probability_image: expected 1x1xHxW, got " + s.str());
  GrayImage g{s.w, s.h, std::vector<std::uint8_t>(s.plane())};
  for (std::size_t i = 0; i < s.plane(); ++i) g.pixels[i] = probability_level(pred[i]);
  return g;
}

/// 255 where pred >= threshold, else 0.
inline GrayImage mask_image(const Tensor<float>& pred, double threshold) {
  const Shape& s = pred.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("mask_image: expected 1x1xHxW, got " + s.str());
  GrayImage g{s.w, s.h, std::vector<std::uint8_t>(s.plane())};
  for (std::size_t i = 0; i < s.plane(); ++i) g.pixels[i] = static_cast<double>(pred[i]) >= threshold ? 255 : 0;
  return g;
}

/// Colormapped prediction alpha-blended over the page:
/// out = round((1 - alpha) * page + alpha * hot(p)). The prediction is resized
/// bilinearly to the page size first.
inline RgbImage render_overlay(const RgbImage& page, const Tensor<float>& pred, double alpha = 0.5) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("overlay alpha must lie in [0,1]");
  const Shape& s = pred.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("render_overlay: expected 1x1xHxW, got " + s.str());
  std::vector<float> probs(pred.data().begin(), pred.data().end());
  if (s.w != page.width || s.h != page.height) probs = resize_bilinear(probs, s.w, s.h, 1, page.width, page.height);
  const auto& lut = hot_colormap();
  RgbImage out = page;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const Rgb8& c = lut[probability_level(probs[i])];
    for (std::size_t k = 0; k < 3; ++k) {
      const double v = (1.0 - alpha) * page.pixels[3 * i + k] + alpha * c[k];
      out.pixels[3 * i + k] = static_cast<std::uint8_t>(std::lround(v));
    }
  }
  return out;
}

}  // namespace bseg
