#pragma once

// Synthetic comic pages used in place of a real annotated corpus: paneled
// pages with textured backgrounds, character-like blobs, captions (the
// negative class) and speech balloons made of an elliptical carrier plus a
// triangular tail, both filled with text-like strokes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "balloonseg/annotations.hpp"
#include "balloonseg/image.hpp"
#include "balloonseg/rng.hpp"
#include "balloonseg/tensor.hpp"

namespace bseg {

struct CountRange {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

struct RealRange {
  double lo = 0.0;
  double hi = 0.0;
};

/// Visual conventions shared by all pages of one synthetic book.
struct BookStyle {
  std::array<std::uint8_t, 3> paper{255, 255, 255};
  std::array<std::uint8_t, 3> ink{0, 0, 0};
  std::array<std::uint8_t, 3> caption_fill{255, 242, 190};
  double panel_hue = 0.0;
  int texture = 0;          // 0 flat+blobs, 1 gradient, 2 hatching
  double outline_width = 2.0;
  double text_height = 3.0;

  static BookStyle for_book(std::size_t book_index, std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, "book", book_index));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    BookStyle s;
    s.texture = static_cast<int>(book_index % 3);
    s.panel_hue = u(rng);
    s.outline_width = 1.5 + 1.5 * u(rng);
    s.text_height = 2.5 + 1.5 * u(rng);
    const auto paper = static_cast<std::uint8_t>(240 + static_cast<int>(15 * u(rng)));
    s.paper = {paper, paper, static_cast<std::uint8_t>(paper - 8)};
    s.ink = u(rng) < 0.7 ? std::array<std::uint8_t, 3>{10, 10, 10} : std::array<std::uint8_t, 3>{20, 25, 70};
    s.caption_fill = u(rng) < 0.6 ? std::array<std::uint8_t, 3>{255, 240, 170} : std::array<std::uint8_t, 3>{250, 250, 250};
    return s;
  }
};

struct SynthSpec {
  std::size_t width = 384;
  std::size_t height = 256;
  CountRange panel_rows{1, 2};
  CountRange panel_cols{1, 3};
  CountRange balloons{1, 3};
  CountRange captions{0, 2};
  RealRange balloon_rx{0.07, 0.13};     // carrier x-radius as a fraction of page width
  RealRange balloon_aspect{0.5, 0.85};  // y-radius / x-radius
  double max_coverage = 0.35;           // cap on the balloon pixel fraction
  BookStyle style{};

  void validate() const {
    if (width == 0 || height == 0) throw std::invalid_argument("synthetic page needs positive dimensions");
    if (panel_rows.lo == 0 || panel_cols.lo == 0 || panel_rows.lo > panel_rows.hi || panel_cols.lo > panel_cols.hi) {
      throw std::invalid_argument("panel grid ranges must be positive and ordered");
    }
    if (balloons.lo > balloons.hi || captions.lo > captions.hi) throw std::invalid_argument("count ranges must be ordered");
    if (!(balloon_rx.lo > 0 && balloon_rx.lo <= balloon_rx.hi)) throw std::invalid_argument("bad balloon size range");
    if (!(max_coverage > 0 && max_coverage <= 1)) throw std::invalid_argument("max_coverage must lie in (0,1]");
  }
};

/// Carrier ellipse plus tail triangle; the union is the balloon.
struct BalloonShape {
  double cx = 0, cy = 0, rx = 0, ry = 0;
  Point base_a, base_b, tip;
  Polygon outline;

  bool in_ellipse(double x, double y) const {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
  }
  bool in_tail(double x, double y) const {
    auto side = [](const Point& p, const Point& q, double x, double y) {
      return (q.x - p.x) * (y - p.y) - (q.y - p.y) * (x - p.x);
    };
    const double d1 = side(base_a, base_b, x, y), d2 = side(base_b, tip, x, y), d3 = side(tip, base_a, x, y);
    const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
    const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
    return !(neg && pos);
  }
  bool contains(double x, double y) const { return in_ellipse(x, y) || in_tail(x, y); }
  double approx_area() const {
    const double tail = std::abs((base_b.x - base_a.x) * (tip.y - base_a.y) - (base_b.y - base_a.y) * (tip.x - base_a.x)) / 2;
    return std::numbers::pi * rx * ry + tail;
  }
  double min_x() const { return std::min(cx - rx, tip.x); }
  double max_x() const { return std::max(cx + rx, tip.x); }
  double min_y() const { return std::min(cy - ry, tip.y); }
  double max_y() const { return std::max(cy + ry, tip.y); }
};

struct SyntheticPage {
  PageSample sample;             // image rendered, annotations = balloon outlines
  Tensor<float> painted;         // 1x1xHxW, pixels whose center lies in a painted carrier/tail
  std::vector<BalloonShape> balloons;
};

namespace detail {

struct Rect {
  double x0, y0, x1, y1;
  bool overlaps(const Rect& o, double margin = 0.0) const {
    return x0 - margin < o.x1 && o.x0 - margin < x1 && y0 - margin < o.y1 && o.y0 - margin < y1;
  }
};

class Canvas {
 public:
  explicit Canvas(RgbImage& img) : img_(img) {}

  template <typename Pred, typename Color>
  void paint_region(double x0, double y0, double x1, double y1, Pred inside, Color color) {
    const auto ix0 = static_cast<std::ptrdiff_t>(std::max(0.0, std::floor(x0)));
    const auto iy0 = static_cast<std::ptrdiff_t>(std::max(0.0, std::floor(y0)));
    const auto ix1 = static_cast<std::ptrdiff_t>(std::min(static_cast<double>(img_.width) - 1, std::ceil(x1)));
    const auto iy1 = static_cast<std::ptrdiff_t>(std::min(static_cast<double>(img_.height) - 1, std::ceil(y1)));
    for (std::ptrdiff_t y = iy0; y <= iy1; ++y) {
      for (std::ptrdiff_t x = ix0; x <= ix1; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        if (inside(px, py)) img_.set(static_cast<std::size_t>(x), static_cast<std::size_t>(y), color(px, py));
      }
    }
  }

  void fill_rect(const Rect& r, std::array<std::uint8_t, 3> c) {
    paint_region(r.x0, r.y0, r.x1, r.y1, [&](double x, double y) { return x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1; },
                 [&](double, double) { return c; });
  }

  void stroke_rect(const Rect& r, double width, std::array<std::uint8_t, 3> c) {
    fill_rect({r.x0, r.y0, r.x1, r.y0 + width}, c);
    fill_rect({r.x0, r.y1 - width, r.x1, r.y1}, c);
    fill_rect({r.x0, r.y0, r.x0 + width, r.y1}, c);
    fill_rect({r.x1 - width, r.y0, r.x1, r.y1}, c);
  }

  /// Pixels whose center is within width/2 of the closed polyline.
  void stroke_polygon(const Polygon& poly, double width, std::array<std::uint8_t, 3> c) {
    const double half = width / 2.0;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
      const Point a = poly[j], b = poly[i];
      paint_region(std::min(a.x, b.x) - half, std::min(a.y, b.y) - half, std::max(a.x, b.x) + half,
                   std::max(a.y, b.y) + half, [&](double x, double y) { return segment_distance(a, b, x, y) <= half; },
                   [&](double, double) { return c; });
    }
  }

  /// Rows of word-like bars inside `r`.
  void text_block(const Rect& r, double line_height, std::array<std::uint8_t, 3> ink, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> word(2.5 * line_height, 6.0 * line_height);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double pitch = line_height * 2.2;
    for (double y = r.y0; y + line_height <= r.y1; y += pitch) {
      double x = r.x0 + unit(rng) * line_height;
      while (true) {
        const double len = word(rng);
        if (x + len > r.x1) break;
        // Letters: vertical gaps every ~line_height pixels.
        for (double lx = x; lx + 0.6 * line_height <= x + len; lx += line_height) {
          fill_rect({lx, y, lx + 0.7 * line_height, y + line_height}, ink);
        }
        x += len + 1.2 * line_height;
      }
    }
  }

  static double segment_distance(const Point& a, const Point& b, double x, double y) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((x - a.x) * vx + (y - a.y) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = a.x + t * vx - x, dy = a.y + t * vy - y;
    return std::sqrt(dx * dx + dy * dy);
  }

 private:
  RgbImage& img_;
};

inline std::array<std::uint8_t, 3> hsv8(double h, double s, double v) {
  const auto rgb = hsv_to_rgb({static_cast<float>(h - std::floor(h)), static_cast<float>(s), static_cast<float>(v)});
  return {static_cast<std::uint8_t>(std::lround(rgb[0] * 255)), static_cast<std::uint8_t>(std::lround(rgb[1] * 255)),
          static_cast<std::uint8_t>(std::lround(rgb[2] * 255))};
}

inline void paint_panel(Canvas& canvas, const Rect& r, const BookStyle& style, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double hue = style.panel_hue + 0.15 * (u(rng) - 0.5);
  const double sat = 0.2 + 0.5 * u(rng);
  const double val = 0.45 + 0.45 * u(rng);
  switch (style.texture) {
    case 1: {
      const double val2 = std::clamp(val + 0.4 * (u(rng) - 0.5), 0.2, 1.0);
      canvas.paint_region(r.x0, r.y0, r.x1, r.y1, [&](double x, double y) { return x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1; },
                          [&](double, double y) {
                            const double t = (y - r.y0) / std::max(1.0, r.y1 - r.y0);
                            return hsv8(hue, sat, val + t * (val2 - val));
                          });
      break;
    }
    case 2: {
      const auto base = hsv8(hue, sat * 0.6, val);
      const auto line = hsv8(hue, sat, val * 0.6);
      const double spacing = 5.0 + 6.0 * u(rng);
      canvas.paint_region(r.x0, r.y0, r.x1, r.y1, [&](double x, double y) { return x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1; },
                          [&](double x, double y) { return std::fmod(x + y, spacing) < 1.5 ? line : base; });
      break;
    }
    default:
      canvas.fill_rect(r, hsv8(hue, sat, val));
  }
  // Character-like blobs; some are light, as distractors.
  std::uniform_int_distribution<int> nblobs(1, 4);
  const int blobs = nblobs(rng);
  for (int b = 0; b < blobs; ++b) {
    const double w = r.x1 - r.x0, h = r.y1 - r.y0;
    const double cx = r.x0 + w * u(rng), cy = r.y0 + h * (0.3 + 0.7 * u(rng));
    const double rx = std::max(3.0, w * (0.05 + 0.15 * u(rng))), ry = std::max(3.0, h * (0.1 + 0.3 * u(rng)));
    const bool light = u(rng) < 0.35;
    const auto color = light ? hsv8(u(rng), 0.1 * u(rng), 0.92 + 0.08 * u(rng)) : hsv8(u(rng), 0.3 + 0.6 * u(rng), 0.2 + 0.7 * u(rng));
    canvas.paint_region(cx - rx, cy - ry, cx + rx, cy + ry,
                        [&](double x, double y) {
                          const double dx = (x - cx) / rx, dy = (y - cy) / ry;
                          return dx * dx + dy * dy <= 1.0 && x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1;
                        },
                        [&](double, double) { return color; });
  }
}

inline BalloonShape make_balloon(double cx, double cy, double rx, double ry, std::mt19937_64& rng, double page_w,
                                 double page_h) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  BalloonShape b;
  b.cx = cx;
  b.cy = cy;
  b.rx = rx;
  b.ry = ry;
  const double pi = std::numbers::pi;
  const double theta = pi * (0.15 + 0.7 * u(rng));  // mostly downward (y grows down)
  const double delta = 0.18 + 0.12 * u(rng);
  const double reach = 1.35 + 0.45 * u(rng);
  auto on_ellipse = [&](double a) { return Point{cx + rx * std::cos(a), cy + ry * std::sin(a)}; };
  b.base_a = on_ellipse(theta + delta);
  b.base_b = on_ellipse(theta - delta);
  const double bend = (u(rng) - 0.5) * 0.4;
  b.tip = {std::clamp(cx + reach * rx * std::cos(theta + bend), -0.1 * page_w, 1.1 * page_w),
           std::clamp(cy + reach * ry * std::sin(theta + bend), -0.1 * page_h, 1.1 * page_h)};

  constexpr int kArc = 64;
  const double start = theta + delta;
  const double sweep = 2 * pi - 2 * delta;
  for (int k = 0; k < kArc; ++k) b.outline.push_back(on_ellipse(start + sweep * k / (kArc - 1)));
  b.outline.push_back(b.tip);
  return b;
}

}  // namespace detail

/// Deterministic per (spec, seed). Coordinates are in page pixels.
inline SyntheticPage generate_synthetic_page(const SynthSpec& spec, std::uint64_t seed, const std::string& book_id = "book0",
                                             const std::string& page_id = "page0") {
  spec.validate();
  using detail::Rect;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto pick = [&](CountRange r) { return std::uniform_int_distribution<std::size_t>(r.lo, r.hi)(rng); };
  const auto W = static_cast<double>(spec.width), H = static_cast<double>(spec.height);
  const BookStyle& style = spec.style;

  SyntheticPage out;
  out.sample.page_id = page_id;
  out.sample.book_id = book_id;
  out.sample.image_file = page_id + ".png";
  out.sample.width = spec.width;
  out.sample.height = spec.height;
  out.sample.image = RgbImage(spec.width, spec.height, style.paper);
  out.painted = Tensor<float>(Shape{1, 1, spec.height, spec.width});
  detail::Canvas canvas(out.sample.image);

  // Panels.
  const std::size_t rows = pick(spec.panel_rows), cols = pick(spec.panel_cols);
  const double margin = 0.03 * std::min(W, H), gutter = 0.025 * std::min(W, H);
  const double pw = (W - 2 * margin - (cols - 1) * gutter) / cols;
  const double ph = (H - 2 * margin - (rows - 1) * gutter) / rows;
  std::vector<Rect> panels;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      Rect p{margin + c * (pw + gutter), margin + r * (ph + gutter), 0, 0};
      p.x1 = p.x0 + pw;
      p.y1 = p.y0 + ph;
      detail::paint_panel(canvas, p, style, rng);
      canvas.stroke_rect(p, style.outline_width, style.ink);
      panels.push_back(p);
    }
  }

  // Captions: boxed text in a panel corner (negative class).
  std::vector<Rect> occupied;
  const std::size_t n_captions = pick(spec.captions);
  for (std::size_t i = 0; i < n_captions && !panels.empty(); ++i) {
    const Rect& p = panels[std::uniform_int_distribution<std::size_t>(0, panels.size() - 1)(rng)];
    const double cw = std::min(p.x1 - p.x0 - 4, W * (0.14 + 0.12 * u(rng)));
    const double chh = std::min(p.y1 - p.y0 - 4, H * (0.07 + 0.06 * u(rng)));
    Rect cap{p.x0, p.y0, p.x0 + cw, p.y0 + chh};
    if (u(rng) < 0.5) cap = {p.x1 - cw, p.y1 - chh, p.x1, p.y1};
    bool clash = false;
    for (const auto& o : occupied) clash = clash || cap.overlaps(o, 2.0);
    if (clash) continue;
    canvas.fill_rect(cap, style.caption_fill);
    canvas.stroke_rect(cap, style.outline_width, style.ink);
    const double pad = style.outline_width + 2.0;
    canvas.text_block({cap.x0 + pad, cap.y0 + pad, cap.x1 - pad, cap.y1 - pad}, style.text_height, style.ink, rng);
    occupied.push_back(cap);
  }

  // Balloons: carrier + tail, may bleed across panel borders.
  const std::size_t n_balloons = pick(spec.balloons);
  double covered = 0.0;
  for (std::size_t attempt = 0; attempt < 400 && out.balloons.size() < n_balloons; ++attempt) {
    const double rx = W * (spec.balloon_rx.lo + (spec.balloon_rx.hi - spec.balloon_rx.lo) * u(rng));
    const double ry = rx * (spec.balloon_aspect.lo + (spec.balloon_aspect.hi - spec.balloon_aspect.lo) * u(rng));
    const double cx = rx * 0.7 + (W - 1.4 * rx) * u(rng);
    const double cy = ry * 0.7 + (H - 1.4 * ry) * u(rng);
    auto b = detail::make_balloon(cx, cy, rx, ry, rng, W, H);
    const Rect box{b.min_x(), b.min_y(), b.max_x(), b.max_y()};
    bool clash = false;
    for (const auto& o : occupied) clash = clash || box.overlaps(o, 3.0);
    if (clash) continue;
    if ((covered + b.approx_area()) / (W * H) > spec.max_coverage) continue;
    covered += b.approx_area();
    occupied.push_back(box);

    const auto fill = std::array<std::uint8_t, 3>{255, 255, 255};
    canvas.paint_region(box.x0, box.y0, box.x1, box.y1, [&](double x, double y) { return b.contains(x, y); },
                        [&](double x, double y) {
                          out.painted(0, 0, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = 1.0f;
                          return fill;
                        });
    canvas.stroke_polygon(b.outline, style.outline_width, style.ink);
    const double tw = b.rx * 0.62, th = b.ry * 0.5;
    canvas.text_block({b.cx - tw, b.cy - th, b.cx + tw, b.cy + th}, style.text_height, style.ink, rng);
    out.balloons.push_back(b);
  }

  for (std::size_t i = 0; i < out.balloons.size(); ++i) {
    out.sample.annotations.push_back({page_id + "_b" + std::to_string(i + 1), out.balloons[i].outline});
  }
  return out;
}

}  // namespace bseg
