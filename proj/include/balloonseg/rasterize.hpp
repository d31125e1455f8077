#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "balloonseg/annotations.hpp"
#include "balloonseg/tensor.hpp"

namespace bseg {

/// Fills one polygon into `mask` (1x1xHxW): a pixel is set when its center
/// lies inside under the even-odd rule. Geometry outside the raster is clipped.
inline void fill_polygon(Tensor<float>& mask, const Polygon& poly, double scale_x = 1.0, double scale_y = 1.0) {
  const std::size_t h = mask.shape().h;
  const std::size_t w = mask.shape().w;
  if (poly.size() < 3) return;
  std::vector<Point> pts(poly.size());
  double min_y = INFINITY, max_y = -INFINITY;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    pts[i] = {poly[i].x * scale_x, poly[i].y * scale_y};
    min_y = std::min(min_y, pts[i].y);
    max_y = std::max(max_y, pts[i].y);
  }
  const auto row_lo = static_cast<std::ptrdiff_t>(std::max(0.0, std::floor(min_y - 0.5)));
  const auto row_hi = static_cast<std::ptrdiff_t>(std::min(static_cast<double>(h) - 1.0, std::ceil(max_y)));
  std::vector<double> xs;
  for (std::ptrdiff_t row = row_lo; row <= row_hi; ++row) {
    const double cy = static_cast<double>(row) + 0.5;
    xs.clear();
    for (std::size_t i = 0, j = pts.size() - 1; i < pts.size(); j = i++) {
      const Point& a = pts[i];
      const Point& b = pts[j];
      if ((a.y > cy) != (b.y > cy)) xs.push_back(a.x + (cy - a.y) * (b.x - a.x) / (b.y - a.y));
    }
    std::sort(xs.begin(), xs.end());
    // Center cx is inside iff an odd number of crossings lie strictly right
    // of it, i.e. xs[2k] <= cx < xs[2k+1].
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const double lo = std::ceil(xs[k] - 0.5);
      const double hi = std::ceil(xs[k + 1] - 0.5) - 1.0;
      const auto x0 = static_cast<std::ptrdiff_t>(std::max(lo, 0.0));
      const auto x1 = static_cast<std::ptrdiff_t>(std::min(hi, static_cast<double>(w) - 1.0));
      for (std::ptrdiff_t x = x0; x <= x1; ++x) mask(0, 0, static_cast<std::size_t>(row), static_cast<std::size_t>(x)) = 1.0f;
    }
  }
}

/// Union of all annotation polygons, scaled from source to output pixels.
inline Tensor<float> rasterize(const std::vector<PolygonAnnotation>& annotations, std::size_t out_h, std::size_t out_w,
                               std::size_t src_h, std::size_t src_w) {
  if (out_h == 0 || out_w == 0 || src_h == 0 || src_w == 0) throw std::invalid_argument("rasterize: zero dimension");
  Tensor<float> mask(Shape{1, 1, out_h, out_w});
  const double sx = static_cast<double>(out_w) / static_cast<double>(src_w);
  const double sy = static_cast<double>(out_h) / static_cast<double>(src_h);
  for (const auto& a : annotations) fill_polygon(mask, a.vertices, sx, sy);
  return mask;
}

inline Tensor<float> rasterize_polygons(const std::vector<Polygon>& polys, std::size_t h, std::size_t w) {
  Tensor<float> mask(Shape{1, 1, h, w});
  for (const auto& p : polys) fill_polygon(mask, p);
  return mask;
}

/// Shoelace area (absolute).
inline double polygon_area(const Polygon& p) {
  double a = 0.0;
  for (std::size_t i = 0, j = p.size() - 1; i < p.size(); j = i++) a += p[j].x * p[i].y - p[i].x * p[j].y;
  return std::abs(a) * 0.5;
}

/// Intersection over union of two binary masks of equal size.
inline double mask_iou(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.size() != b.size()) throw ShapeError("mask_iou: size mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool pa = a[i] >= 0.5f, pb = b[i] >= 0.5f;
    inter += pa && pb;
    uni += pa || pb;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace bseg
