#pragma once

// Reference implementations and shared checks used by both the unit tests and
// the acceptance runner. Everything here is written independently of the
// library's fast paths (direct loops, no im2col, no Eigen).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "balloonseg/gradcheck.hpp"
#include "balloonseg/losses.hpp"
#include "balloonseg/model.hpp"
#include "balloonseg/ops.hpp"
#include "balloonseg/rasterize.hpp"
#include "balloonseg/vectorize.hpp"

namespace oracle {

using bseg::LayerParams;
using bseg::Shape;
using bseg::Tensor;

template <typename T>
LayerParams<T> random_layer(const std::string& name, Shape w, std::size_t bias_channels, std::mt19937_64& rng,
                            double stddev = 0.5) {
  LayerParams<T> p;
  p.name = name;
  p.weights = Tensor<T>::randn(w, rng, static_cast<T>(stddev));
  if (bias_channels) p.bias = Tensor<T>::randn(Shape{1, bias_channels, 1, 1}, rng, static_cast<T>(stddev));
  return p;
}

/// Direct sliding-window convolution with explicit zero padding offsets.
/// Weights (cout, cin, kh, kw).
inline Tensor<double> conv2d_direct(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* bias,
                                    std::size_t stride, std::size_t pad_top, std::size_t pad_left, std::size_t out_h,
                                    std::size_t out_w) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  Tensor<double> y(Shape{xs.n, ws.n, out_h, out_w});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t co = 0; co < ws.n; ++co)
      for (std::size_t oy = 0; oy < out_h; ++oy)
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          double acc = bias ? (*bias)[co] : 0.0;
          for (std::size_t ci = 0; ci < ws.c; ++ci)
            for (std::size_t ky = 0; ky < ws.h; ++ky)
              for (std::size_t kx = 0; kx < ws.w; ++kx) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad_top);
                const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad_left);
                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(xs.h) ||
                    ix >= static_cast<std::ptrdiff_t>(xs.w))
                  continue;
                acc += x(n, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) * w(co, ci, ky, kx);
              }
          y(n, co, oy, ox) = acc;
        }
  return y;
}

/// Same padding for stride 1 and an odd kernel: pad (k-1)/2 on each side.
inline Tensor<double> conv2d_same_direct(const Tensor<double>& x, const LayerParams<double>& k) {
  const Shape& ws = k.weights.shape();
  return conv2d_direct(x, k.weights, k.bias ? &*k.bias : nullptr, 1, (ws.h - 1) / 2, (ws.w - 1) / 2, x.shape().h,
                       x.shape().w);
}

/// Scatter-accumulate transposed convolution; weights (cin, cout, s, s).
inline Tensor<double> conv_transpose_scatter(const Tensor<double>& x, const LayerParams<double>& k, std::size_t s) {
  const Shape& xs = x.shape();
  const Shape& ws = k.weights.shape();
  Tensor<double> y(Shape{xs.n, ws.c, xs.h * s, xs.w * s});
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t ci = 0; ci < xs.c; ++ci)
      for (std::size_t iy = 0; iy < xs.h; ++iy)
        for (std::size_t ix = 0; ix < xs.w; ++ix)
          for (std::size_t co = 0; co < ws.c; ++co)
            for (std::size_t ky = 0; ky < s; ++ky)
              for (std::size_t kx = 0; kx < s; ++kx)
                y(n, co, iy * s + ky, ix * s + kx) += x(n, ci, iy, ix) * k.weights(ci, co, ky, kx);
  if (k.bias) {
    for (std::size_t n = 0; n < xs.n; ++n)
      for (std::size_t co = 0; co < ws.c; ++co)
        for (std::size_t i = 0; i < y.shape().plane(); ++i) y[(n * ws.c + co) * y.shape().plane() + i] += (*k.bias)[co];
  }
  return y;
}

/// Exhaustive 2x2 window maximum.
inline Tensor<double> maxpool_scan(const Tensor<double>& x) {
  const Shape& s = x.shape();
  Tensor<double> y(Shape{s.n, s.c, s.h / 2, s.w / 2});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t oy = 0; oy < s.h / 2; ++oy)
        for (std::size_t ox = 0; ox < s.w / 2; ++ox) {
          double m = -INFINITY;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) m = std::max(m, x(n, c, 2 * oy + dy, 2 * ox + dx));
          y(n, c, oy, ox) = m;
        }
  return y;
}

/// Ray-casting point-in-polygon (even-odd) at an arbitrary point.
inline bool inside_even_odd(const bseg::Polygon& poly, double px, double py) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y > py) != (b.y > py)) {
      const double xc = a.x + (py - a.y) * (b.x - a.x) / (b.y - a.y);
      if (px < xc) in = !in;
    }
  }
  return in;
}

/// Per-pixel-center oracle raster.
inline Tensor<float> raster_oracle(const std::vector<bseg::Polygon>& polys, std::size_t h, std::size_t w) {
  Tensor<float> m(Shape{1, 1, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (const auto& p : polys)
        if (inside_even_odd(p, x + 0.5, y + 0.5)) m(0, 0, y, x) = 1.0f;
  return m;
}

inline double dot_double(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// ---------------------------------------------------------------------------
// Gradient suite: analytic backward passes against central differences.

struct GradResult {
  std::string op;
  bseg::GradCheckReport report;
};

inline std::vector<double>& grad_of(Tensor<double>& t) { return t.grad(); }

inline GradResult check_conv2d(std::mt19937_64& rng, Shape xs, std::size_t cout) {
  auto x = Tensor<double>::randn(xs, rng);
  auto k = random_layer<double>("conv", Shape{cout, xs.c, 3, 3}, cout, rng);
  const auto r = Tensor<double>::randn(Shape{xs.n, cout, xs.h, xs.w}, rng);
  const auto dx = bseg::conv2d_backward(x, k, r);
  const auto dw = k.weights.grad();
  const auto db = k.bias->grad();
  auto loss = [&] { return dot_double(bseg::conv2d(x, k), r); };
  return {"conv2d " + xs.str(),
          bseg::grad_check(loss, {{"x", &x.vec(), &dx.vec()}, {"w", &k.weights.vec(), &dw}, {"b", &k.bias->vec(), &db}})};
}

inline GradResult check_conv2d_strided(std::mt19937_64& rng, Shape xs, std::size_t cout) {
  auto x = Tensor<double>::randn(xs, rng);
  auto k = random_layer<double>("conv_s2", Shape{cout, xs.c, 2, 2}, cout, rng);
  const auto r = Tensor<double>::randn(Shape{xs.n, cout, xs.h / 2, xs.w / 2}, rng);
  const auto dx = bseg::conv2d_backward(x, k, r, 2, bseg::Padding::Valid);
  const auto dw = k.weights.grad();
  const auto db = k.bias->grad();
  auto loss = [&] { return dot_double(bseg::conv2d(x, k, 2, bseg::Padding::Valid), r); };
  return {"conv2d stride 2 " + xs.str(),
          bseg::grad_check(loss, {{"x", &x.vec(), &dx.vec()}, {"w", &k.weights.vec(), &dw}, {"b", &k.bias->vec(), &db}})};
}

inline GradResult check_conv2d_transpose(std::mt19937_64& rng, Shape xs, std::size_t cout) {
  auto x = Tensor<double>::randn(xs, rng);
  auto k = random_layer<double>("convT", Shape{xs.c, cout, 2, 2}, cout, rng);
  const auto r = Tensor<double>::randn(Shape{xs.n, cout, 2 * xs.h, 2 * xs.w}, rng);
  const auto dx = bseg::conv2d_transpose_backward(x, k, r);
  const auto dw = k.weights.grad();
  const auto db = k.bias->grad();
  auto loss = [&] { return dot_double(bseg::conv2d_transpose(x, k), r); };
  return {"conv2d_transpose " + xs.str(),
          bseg::grad_check(loss, {{"x", &x.vec(), &dx.vec()}, {"w", &k.weights.vec(), &dw}, {"b", &k.bias->vec(), &db}})};
}

inline GradResult check_maxpool2(std::mt19937_64& rng, Shape xs) {
  // Distinct values spaced well beyond the finite-difference step.
  std::vector<double> vals(xs.size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.01 * static_cast<double>(i);
  std::shuffle(vals.begin(), vals.end(), rng);
  Tensor<double> x(xs, vals);
  const auto pooled = bseg::maxpool2(x);
  const auto r = Tensor<double>::randn(pooled.out.shape(), rng);
  const auto dx = bseg::maxpool2_backward(xs, pooled.argmax, r);
  auto loss = [&] { return dot_double(bseg::maxpool2(x).out, r); };
  return {"maxpool2 " + xs.str(), bseg::grad_check(loss, {{"x", &x.vec(), &dx.vec()}})};
}

inline GradResult check_batchnorm(std::mt19937_64& rng, Shape xs) {
  auto x = Tensor<double>::randn(xs, rng, 2.0);
  LayerParams<double> p;
  p.name = "bn";
  p.weights = Tensor<double>::uniform(Shape{1, xs.c, 1, 1}, rng, 0.5, 1.5);
  p.bias = Tensor<double>::randn(Shape{1, xs.c, 1, 1}, rng);
  const bseg::BatchNormState<double> state(xs.c);
  const auto r = Tensor<double>::randn(xs, rng);
  bseg::BatchNormCache<double> cache;
  bseg::batchnorm2d(x, p, state, bseg::Mode::Train, &cache);
  const auto dx = bseg::batchnorm2d_backward(cache, p, r);
  const auto dg = p.weights.grad();
  const auto db = p.bias->grad();
  auto loss = [&] { return dot_double(bseg::batchnorm2d(x, p, state, bseg::Mode::Train), r); };
  return {"batchnorm2d " + xs.str(),
          bseg::grad_check(loss, {{"x", &x.vec(), &dx.vec()}, {"gamma", &p.weights.vec(), &dg}, {"beta", &p.bias->vec(), &db}})};
}

inline Tensor<double> random_mask(std::mt19937_64& rng, Shape s) {
  Tensor<double> y(s);
  std::bernoulli_distribution coin(0.4);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = coin(rng) ? 1.0 : 0.0;
  return y;
}

inline GradResult check_sigmoid_bce(std::mt19937_64& rng, Shape s) {
  auto z = Tensor<double>::randn(s, rng, 2.0);
  const auto y = random_mask(rng, s);
  const auto yhat = bseg::sigmoid(z);
  const auto dz = bseg::sigmoid_backward(yhat, bseg::bce_loss(y, yhat).grad);
  auto loss = [&] { return bseg::bce_loss(y, bseg::sigmoid(z)).value; };
  return {"sigmoid+bce " + s.str(), bseg::grad_check(loss, {{"z", &z.vec(), &dz.vec()}})};
}

inline GradResult check_dice(std::mt19937_64& rng, Shape s, bseg::DiceDenominator form) {
  auto yhat = Tensor<double>::uniform(s, rng, 0.05, 0.95);
  const auto y = random_mask(rng, s);
  const auto g = bseg::dice_loss(y, yhat, form).grad;
  auto loss = [&] { return bseg::dice_loss(y, yhat, form).value; };
  const std::string name = form == bseg::DiceDenominator::Additive ? "dice " : "dice (product form) ";
  return {name + s.str(), bseg::grad_check(loss, {{"yhat", &yhat.vec(), &g.vec()}})};
}

inline GradResult check_relu(std::mt19937_64& rng, Shape s) {
  auto x = Tensor<double>::randn(s, rng);
  for (auto& v : x.vec()) v += v >= 0 ? 0.05 : -0.05;  // stay clear of the kink
  const auto r = Tensor<double>::randn(s, rng);
  const auto dx = bseg::relu_backward(bseg::relu(x), r);
  auto loss = [&] { return dot_double(bseg::relu(x), r); };
  return {"relu " + s.str(), bseg::grad_check(loss, {{"x", &x.vec(), &dx.vec()}})};
}

inline GradResult check_concat(std::mt19937_64& rng, Shape as, std::size_t bc) {
  auto a = Tensor<double>::randn(as, rng);
  auto b = Tensor<double>::randn(Shape{as.n, bc, as.h, as.w}, rng);
  const auto r = Tensor<double>::randn(Shape{as.n, as.c + bc, as.h, as.w}, rng);
  const auto [da, db] = bseg::concat_channels_backward(as, b.shape(), r);
  auto loss = [&] { return dot_double(bseg::concat_channels(a, b), r); };
  return {"concat_channels " + as.str(), bseg::grad_check(loss, {{"a", &a.vec(), &da.vec()}, {"b", &b.vec(), &db.vec()}})};
}

/// Total loss (bce + dice + L2) through the whole network in train mode.
/// `per_tensor` entries are sampled from every parameter tensor.
inline GradResult check_network(std::uint64_t seed, std::size_t size, std::size_t base_width, std::size_t per_tensor) {
  bseg::ModelConfig cfg;
  cfg.input_h = size;
  cfg.input_w = size;
  cfg.base_width = base_width;
  cfg.l2_lambda = 0.05;
  cfg.init_seed = seed;
  bseg::Network<double> net(cfg);
  std::mt19937_64 rng(seed + 1);
  auto x = Tensor<double>::uniform(Shape{1, 3, size, size}, rng, 0.0, 1.0);
  const auto y = random_mask(rng, Shape{1, 1, size, size});
  // Zero biases put pre-activations of dead regions exactly on the ReLU kink.
  std::uniform_real_distribution<double> bias_dist(-0.1, 0.1);
  for (auto* p : net.parameters()) {
    if (!p->bias) continue;
    for (auto& v : p->bias->vec()) v = bias_dist(rng);
  }

  net.zero_grad();
  bseg::Network<double>::Tape tape;
  const auto yhat = net.forward(x, bseg::Mode::Train, &tape);
  const auto tl = bseg::total_loss(y, yhat, net.l2_penalty());
  const auto dx = net.backward(tape, tl.grad);
  net.add_l2_gradient();

  auto loss = [&] {
    const auto out = net.forward(x, bseg::Mode::Train);
    return bseg::total_loss(y, out, net.l2_penalty()).total;
  };
  // Thirty-odd ReLU layers leave kinks within reach of any finite step, so the
  // error is aggregated over the sampled entries: |a - n| / max(|a|, |n|).
  constexpr double h = 1e-6;
  double se = 0.0, sa = 0.0, sn = 0.0;
  std::size_t checked = 0;
  auto probe = [&](std::vector<double>& values, const std::vector<double>& grad) {
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(idx.size(), per_tensor));
    for (std::size_t i : idx) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss();
      values[i] = saved - h;
      const double down = loss();
      values[i] = saved;
      const double n = (up - down) / (2.0 * h);
      se += (grad[i] - n) * (grad[i] - n);
      sa += grad[i] * grad[i];
      sn += n * n;
      ++checked;
    }
  };
  for (auto* p : net.parameters()) {
    probe(p->weights.vec(), p->weights.grad());
    if (p->bias) probe(p->bias->vec(), p->bias->grad());
  }
  probe(x.vec(), dx.vec());

  bseg::GradCheckReport report;
  report.max_rel_error = std::sqrt(se) / std::max({std::sqrt(sa), std::sqrt(sn), 1e-12});
  report.worst = "aggregate";
  report.checked = checked;
  return {"network total loss 1x3x" + std::to_string(size) + "x" + std::to_string(size), report};
}

/// Every op of the layer set on shapes no larger than 2x4x8x8.
inline std::vector<GradResult> gradient_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradResult> out;
  out.push_back(check_conv2d(rng, Shape{2, 3, 5, 5}, 2));
  out.push_back(check_conv2d(rng, Shape{2, 4, 8, 8}, 3));
  out.push_back(check_conv2d_strided(rng, Shape{2, 4, 8, 8}, 3));
  out.push_back(check_conv2d_transpose(rng, Shape{1, 2, 3, 3}, 3));
  out.push_back(check_conv2d_transpose(rng, Shape{2, 4, 4, 4}, 2));
  out.push_back(check_maxpool2(rng, Shape{2, 4, 8, 8}));
  out.push_back(check_batchnorm(rng, Shape{2, 3, 4, 4}));
  out.push_back(check_batchnorm(rng, Shape{2, 4, 8, 8}));
  out.push_back(check_sigmoid_bce(rng, Shape{2, 1, 8, 8}));
  out.push_back(check_dice(rng, Shape{2, 1, 8, 8}, bseg::DiceDenominator::Additive));
  out.push_back(check_dice(rng, Shape{2, 1, 8, 8}, bseg::DiceDenominator::LiteralProduct));
  out.push_back(check_relu(rng, Shape{2, 4, 8, 8}));
  out.push_back(check_concat(rng, Shape{2, 2, 8, 8}, 2));
  return out;
}

// ---------------------------------------------------------------------------
// Adjoint identity between the stride-2 conv and the transposed conv.

struct AdjointResult {
  double max_abs_gap = 0.0;
  std::size_t trials = 0;
};

inline AdjointResult adjoint_trials(std::uint64_t seed, std::size_t trials) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> small(1, 4);
  AdjointResult res;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = small(rng), a = small(rng), b = small(rng), h = small(rng), w = small(rng);
    auto k = random_layer<double>("k", Shape{a, b, 2, 2}, 0, rng, 1.0);
    const auto x = Tensor<double>::randn(Shape{n, b, 2 * h, 2 * w}, rng);
    const auto y = Tensor<double>::randn(Shape{n, a, h, w}, rng);
    const double lhs = dot_double(bseg::conv2d(x, k, 2, bseg::Padding::Valid), y);
    const double rhs = dot_double(x, bseg::conv2d_transpose(y, k, 2));
    res.max_abs_gap = std::max(res.max_abs_gap, std::abs(lhs - rhs));
    ++res.trials;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Geometry round trip: rasterize -> trace -> simplify -> rasterize.

/// Convex polygon with vertices on a random ellipse, area >= min_area.
inline bseg::Polygon random_convex_polygon(std::mt19937_64& rng, double w, double h, double min_area) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> count(3, 12);
  for (;;) {
    const double rx = 6.0 + unit(rng) * (w / 4.0), ry = 6.0 + unit(rng) * (h / 4.0);
    const double cx = rx + 1 + unit(rng) * (w - 2 * rx - 2), cy = ry + 1 + unit(rng) * (h - 2 * ry - 2);
    const double rot = unit(rng) * std::numbers::pi;
    std::vector<double> ang(static_cast<std::size_t>(count(rng)));
    for (auto& a : ang) a = unit(rng) * 2 * std::numbers::pi;
    std::sort(ang.begin(), ang.end());
    bseg::Polygon p;
    for (double a : ang) {
      const double ex = rx * std::cos(a), ey = ry * std::sin(a);
      p.push_back({cx + ex * std::cos(rot) - ey * std::sin(rot), cy + ex * std::sin(rot) + ey * std::cos(rot)});
    }
    if (bseg::polygon_area(p) >= min_area) return p;
  }
}

struct RoundTrip {
  double iou = 0.0;
  double polygon_area = 0.0;
  std::size_t vertices = 0;
};

inline RoundTrip round_trip(const bseg::Polygon& poly, std::size_t h, std::size_t w, double epsilon) {
  const auto mask = bseg::rasterize_polygons({poly}, h, w);
  const auto lab = bseg::connected_components(mask);
  std::vector<bseg::Polygon> traced;
  std::size_t verts = 0;
  for (const auto& c : lab.components) {
    traced.push_back(bseg::simplify(bseg::trace_contour(lab, c), epsilon));
    verts += traced.back().size();
  }
  const auto back = bseg::rasterize_polygons(traced, h, w);
  return {bseg::mask_iou(mask, back), bseg::polygon_area(poly), verts};
}

}  // namespace oracle
