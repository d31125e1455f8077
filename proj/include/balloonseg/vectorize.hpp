#pragma once

// Probability map -> polygon detections.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "balloonseg/annotations.hpp"
#include "balloonseg/tensor.hpp"

namespace bseg {

/// 1 where pred >= threshold.
inline Tensor<float> binarize(const Tensor<float>& pred, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("binarize: threshold must lie in (0,1)");
  Tensor<float> mask(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) mask[i] = static_cast<double>(pred[i]) >= threshold ? 1.0f : 0.0f;
  return mask;
}

struct Component {
  int label = 0;  // 1-based
  std::size_t area = 0;
  std::size_t first_x = 0, first_y = 0;  // first pixel in row-major order
};

struct Labeling {
  std::size_t width = 0, height = 0;
  std::vector<int> labels;  // 0 = background
  std::vector<Component> components;

  int at(std::ptrdiff_t x, std::ptrdiff_t y) const {
    if (x < 0 || y < 0 || x >= static_cast<std::ptrdiff_t>(width) || y >= static_cast<std::ptrdiff_t>(height)) return 0;
    return labels[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)];
  }
};

/// 4-connected labeling of a 1x1xHxW binary mask; labels follow the
/// row-major order of each component's first pixel.
inline Labeling connected_components(const Tensor<float>& mask) {
  const Shape& s = mask.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("connected_components: expected a 1x1xHxW mask, got " + s.str());
  Labeling out{s.w, s.h, std::vector<int>(s.plane(), 0), {}};
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < s.plane(); ++start) {
    if (mask[start] < 0.5f || out.labels[start] != 0) continue;
    const int label = static_cast<int>(out.components.size()) + 1;
    Component comp{label, 0, start % s.w, start / s.w};
    out.labels[start] = label;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++comp.area;
      const std::size_t x = p % s.w, y = p / s.w;
      auto visit = [&](std::size_t q) {
        if (mask[q] >= 0.5f && out.labels[q] == 0) {
          out.labels[q] = label;
          stack.push_back(q);
        }
      };
      if (x > 0) visit(p - 1);
      if (x + 1 < s.w) visit(p + 1);
      if (y > 0) visit(p - s.w);
      if (y + 1 < s.h) visit(p + s.w);
    }
    out.components.push_back(comp);
  }
  return out;
}

/// Outer boundary of one component as a closed polygon, traversed with the
/// component on the right-hand side; holes are ignored. The boundary is
/// followed along pixel edges. Each unit edge contributes its midpoint, and a
/// pixel corner is kept only where two straight runs of length >= 2 meet, so
/// rectangles keep their exact corners while staircases collapse onto their
/// midline. Collinear vertices are dropped. A lone pixel yields its unit square.
inline Polygon trace_contour(const Labeling& lab, const Component& comp) {
  if (comp.area == 0) throw std::invalid_argument("trace_contour: empty component");
  const auto sx = static_cast<std::ptrdiff_t>(comp.first_x), sy = static_cast<std::ptrdiff_t>(comp.first_y);
  if (comp.area == 1) {
    const double x = static_cast<double>(sx), y = static_cast<double>(sy);
    return {{x, y}, {x + 1, y}, {x + 1, y + 1}, {x, y + 1}};
  }
  auto in = [&](std::ptrdiff_t x, std::ptrdiff_t y) { return lab.at(x, y) == comp.label; };
  // Directions E, S, W, N (y grows downward; "right" turns clockwise on screen).
  static constexpr std::array<std::array<int, 2>, 4> step{{{1, 0}, {0, 1}, {-1, 0}, {0, -1}}};
  // Pixel offsets of the ahead-left / ahead-right pixels relative to the corner.
  static constexpr std::array<std::array<int, 2>, 4> ahead_left{{{0, -1}, {0, 0}, {-1, 0}, {-1, -1}}};
  static constexpr std::array<std::array<int, 2>, 4> ahead_right{{{0, 0}, {-1, 0}, {-1, -1}, {0, -1}}};

  // Unit edges of the crack path starting at the first pixel's top-left corner.
  struct Edge {
    std::ptrdiff_t x, y;  // start corner
    int dir;
  };
  std::vector<Edge> edges;
  std::ptrdiff_t cx = sx, cy = sy;
  int dir = 0;
  const std::size_t limit = 4 * comp.area + 4;
  do {
    const bool right_in = in(cx + ahead_right[dir][0], cy + ahead_right[dir][1]);
    const bool left_in = in(cx + ahead_left[dir][0], cy + ahead_left[dir][1]);
    if (!right_in) dir = (dir + 1) % 4;
    else if (left_in) dir = (dir + 3) % 4;
    edges.push_back({cx, cy, dir});
    cx += step[dir][0];
    cy += step[dir][1];
  } while ((cx != sx || cy != sy) && edges.size() <= limit);

  // Run lengths; the start corner is always a turn (N -> E), so runs never wrap.
  std::vector<std::size_t> run_len(edges.size());
  for (std::size_t i = 0; i < edges.size();) {
    std::size_t j = i;
    while (j < edges.size() && edges[j].dir == edges[i].dir) ++j;
    for (std::size_t k = i; k < j; ++k) run_len[k] = j - i;
    i = j;
  }
  Polygon raw;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const std::size_t prev = (i + edges.size() - 1) % edges.size();
    const bool turn = edges[prev].dir != edges[i].dir;
    const auto x = static_cast<double>(edges[i].x), y = static_cast<double>(edges[i].y);
    if (turn && run_len[prev] >= 2 && run_len[i] >= 2) raw.push_back({x, y});
    raw.push_back({x + 0.5 * step[edges[i].dir][0], y + 0.5 * step[edges[i].dir][1]});
  }
  // Drop collinear vertices (coordinates are multiples of 0.5, so exact).
  Polygon poly;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const Point& a = raw[(i + raw.size() - 1) % raw.size()];
    const Point& b = raw[i];
    const Point& c = raw[(i + 1) % raw.size()];
    if ((b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x) != 0.0) poly.push_back(b);
  }
  return poly;
}

namespace detail {

inline double point_line_distance(const Point& p, const Point& a, const Point& b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len = std::hypot(vx, vy);
  if (len == 0.0) return std::hypot(p.x - a.x, p.y - a.y);
  return std::abs(vx * (p.y - a.y) - vy * (p.x - a.x)) / len;
}

inline void douglas_peucker(const Polygon& pts, std::size_t first, std::size_t last, double eps,
                            std::vector<bool>& keep) {
  if (last <= first + 1) return;
  double best = -1.0;
  std::size_t idx = first;
  for (std::size_t i = first + 1; i < last; ++i) {
    const double d = point_line_distance(pts[i], pts[first], pts[last]);
    if (d > best) {
      best = d;
      idx = i;
    }
  }
  if (best > eps) {
    keep[idx] = true;
    douglas_peucker(pts, first, idx, eps, keep);
    douglas_peucker(pts, idx, last, eps, keep);
  }
}

}  // namespace detail

/// Douglas-Peucker on a closed polygon, split at vertex 0 and the vertex
/// farthest from it. Returns the input when fewer than 3 vertices would remain.
inline Polygon simplify(const Polygon& poly, double epsilon) {
  if (epsilon <= 0.0 || poly.size() <= 3) return poly;
  std::size_t far = 0;
  double best = -1.0;
  for (std::size_t i = 1; i < poly.size(); ++i) {
    const double d = std::hypot(poly[i].x - poly[0].x, poly[i].y - poly[0].y);
    if (d > best) {
      best = d;
      far = i;
    }
  }
  Polygon ring = poly;
  ring.push_back(poly[0]);
  std::vector<bool> keep(ring.size(), false);
  keep[0] = keep[far] = true;
  detail::douglas_peucker(ring, 0, far, epsilon, keep);
  detail::douglas_peucker(ring, far, ring.size() - 1, epsilon, keep);
  Polygon out;
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
    if (keep[i]) out.push_back(ring[i]);
  }
  return out.size() >= 3 ? out : poly;
}

struct Detection {
  Polygon polygon;  // prediction-raster coordinates
  double mean_confidence = 0.0;
  std::size_t area = 0;  // pixels
};

struct DetectConfig {
  double threshold = 0.9;
  double min_area_frac = 0.0005;
  double epsilon = 1.5;
};

/// binarize -> components -> size filter -> mean confidence -> contour +
/// simplify, largest first.
inline std::vector<Detection> detect(const Tensor<float>& pred, const DetectConfig& cfg = {}) {
  const auto mask = binarize(pred, cfg.threshold);
  const auto lab = connected_components(mask);
  const double min_area = cfg.min_area_frac * static_cast<double>(lab.width * lab.height);

  std::vector<double> conf_sum(lab.components.size() + 1, 0.0);
  for (std::size_t i = 0; i < lab.labels.size(); ++i) {
    if (lab.labels[i] > 0) conf_sum[static_cast<std::size_t>(lab.labels[i])] += pred[i];
  }
  std::vector<Detection> out;
  for (const auto& comp : lab.components) {
    if (static_cast<double>(comp.area) < min_area) continue;
    Detection d;
    d.area = comp.area;
    d.mean_confidence = conf_sum[static_cast<std::size_t>(comp.label)] / static_cast<double>(comp.area);
    d.polygon = simplify(trace_contour(lab, comp), cfg.epsilon);
    out.push_back(std::move(d));
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) { return a.area > b.area; });
  return out;
}

inline Polygon scale_polygon(const Polygon& p, double sx, double sy) {
  Polygon out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = {p[i].x * sx, p[i].y * sy};
  return out;
}

/// Detections as annotation polygons in source-image coordinates.
inline std::vector<PolygonAnnotation> to_annotations(const std::vector<Detection>& dets, const std::string& page_id,
                                                     double sx = 1.0, double sy = 1.0) {
  std::vector<PolygonAnnotation> out;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    out.push_back({page_id + "_d" + std::to_string(i + 1), scale_polygon(dets[i].polygon, sx, sy)});
  }
  return out;
}

inline nlohmann::json polygon_json(const Polygon& p) {
  auto arr = nlohmann::json::array();
  for (const auto& v : p) arr.push_back({v.x, v.y});
  return arr;
}

inline Polygon polygon_from_json(const nlohmann::json& j) {
  Polygon p;
  for (const auto& v : j) p.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
  return p;
}

/// One JSON object per line: page_id, confidence, area, vertices.
inline std::string detections_jsonl(const std::vector<Detection>& dets, const std::string& page_id, double sx = 1.0,
                                    double sy = 1.0) {
  std::string out;
  for (const auto& d : dets) {
    nlohmann::json j{{"page_id", page_id},
                     {"confidence", d.mean_confidence},
                     {"area", d.area},
                     {"vertices", polygon_json(scale_polygon(d.polygon, sx, sy))}};
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace bseg
