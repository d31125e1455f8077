#pragma once

// Forward and hand-derived backward passes for the layer set of the
// segmentation network: strided/same-padded conv, 2x2 transposed conv,
// 2x2 max pooling, ReLU, sigmoid, batch norm and channel concatenation.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "balloonseg/tensor.hpp"

namespace bseg {

/// A named parameter group (kernel + optional bias).
template <typename T>
struct LayerParams {
  std::string name;
  Tensor<T> weights;
  std::optional<Tensor<T>> bias;
  bool regularized = false;  // participates in the L2 penalty
};

enum class Padding { Same, Valid };
enum class Mode { Train, Eval };

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  std::size_t kh, kw, stride;
  std::size_t pad_top, pad_left;
  std::size_t out_h, out_w;
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& k, std::size_t stride, Padding pad) {
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g{k.h, k.w, stride, 0, 0, 0, 0};
  if (pad == Padding::Same) {
    g.out_h = (x.h + stride - 1) / stride;
    g.out_w = (x.w + stride - 1) / stride;
    const std::size_t need_h = (g.out_h - 1) * stride + k.h;
    const std::size_t need_w = (g.out_w - 1) * stride + k.w;
    const std::size_t total_h = need_h > x.h ? need_h - x.h : 0;
    const std::size_t total_w = need_w > x.w ? need_w - x.w : 0;
    if (total_h % 2 != 0 || total_w % 2 != 0) {
      throw ShapeError("conv2d: same padding needs an odd kernel, got " + std::to_string(k.h) + "x" +
                       std::to_string(k.w));
    }
    g.pad_top = total_h / 2;
    g.pad_left = total_w / 2;
  } else {
    if (x.h < k.h || x.w < k.w) throw ShapeError("conv2d: input smaller than kernel");
    g.out_h = (x.h - k.h) / stride + 1;
    g.out_w = (x.w - k.w) / stride + 1;
  }
  return g;
}

// col[(ci*kh + ky)*kw + kx][oy*out_w + ox] = x[ci][oy*s + ky - pt][ox*s + kx - pl]
template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t h, std::size_t w, const ConvGeometry& g, T* col) {
  const std::size_t out_plane = g.out_h * g.out_w;
  for (std::size_t ci = 0; ci < channels; ++ci) {
    const T* xc = x + ci * h * w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((ci * g.kh + ky) * g.kw + kx) * out_plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(iy) * w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into the image.
template <typename T>
void col2im(const T* col, std::size_t channels, std::size_t h, std::size_t w, const ConvGeometry& g, T* x) {
  const std::size_t out_plane = g.out_h * g.out_w;
  for (std::size_t ci = 0; ci < channels; ++ci) {
    T* xc = x + ci * h * w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((ci * g.kh + ky) * g.kw + kx) * out_plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = xc + static_cast<std::size_t>(iy) * w;
          const T* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_left);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Sequential sum; Eigen's vectorized reductions peel by pointer alignment,
// which makes the result depend on where the buffer happens to live.
template <typename T>
T sum_span(const T* p, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += p[i];
  return acc;
}

inline bool is_pointwise(const ConvGeometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad_top == 0 && g.pad_left == 0;
}

template <typename T>
void check_bias(const LayerParams<T>& k, std::size_t channels, const char* op) {
  if (k.bias && k.bias->size() != channels) {
    throw ShapeError(std::string(op) + ": bias of '" + k.name + "' has " + std::to_string(k.bias->size()) +
                     " entries, expected " + std::to_string(channels));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: weights are (c_out, c_in, kh, kw).

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const LayerParams<T>& k, std::size_t stride = 1, Padding pad = Padding::Same) {
  const Shape& xs = x.shape();
  const Shape& ks = k.weights.shape();
  if (xs.empty()) throw ShapeError("conv2d: zero-size input " + xs.str());
  if (xs.c != ks.c) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels but kernel '" + k.name + "' expects " +
                     std::to_string(ks.c));
  }
  detail::check_bias(k, ks.n, "conv2d");
  const auto g = detail::conv_geometry(xs, ks, stride, pad);
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t patch = ks.c * ks.h * ks.w;

  Tensor<T> y(Shape{xs.n, ks.n, g.out_h, g.out_w});
  detail::ConstMatMap<T> wm(k.weights.data().data(), ks.n, patch);
  std::vector<T> col;
  if (!detail::is_pointwise(g)) col.resize(patch * out_plane);

  for (std::size_t b = 0; b < xs.n; ++b) {
    const T* xb = x.data().data() + b * xs.c * xs.plane();
    const T* colp = xb;
    if (!col.empty()) {
      detail::im2col(xb, xs.c, xs.h, xs.w, g, col.data());
      colp = col.data();
    }
    detail::MatMap<T> ym(y.data().data() + b * ks.n * out_plane, ks.n, out_plane);
    ym.noalias() = wm * detail::ConstMatMap<T>(colp, patch, out_plane);
    if (k.bias) {
      for (std::size_t co = 0; co < ks.n; ++co) ym.row(co).array() += (*k.bias)[co];
    }
  }
  return y;
}

/// Accumulates kernel and bias gradients into `k` and returns dL/dx.
template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& x, LayerParams<T>& k, const Tensor<T>& dy, std::size_t stride = 1,
                          Padding pad = Padding::Same) {
  const Shape& xs = x.shape();
  const Shape& ks = k.weights.shape();
  const auto g = detail::conv_geometry(xs, ks, stride, pad);
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t patch = ks.c * ks.h * ks.w;
  if (dy.shape() != Shape{xs.n, ks.n, g.out_h, g.out_w}) {
    throw ShapeError("conv2d_backward: gradient shape " + dy.shape().str() + " does not match output");
  }

  Tensor<T> dx(xs);
  detail::ConstMatMap<T> wm(k.weights.data().data(), ks.n, patch);
  detail::MatMap<T> dwm(k.weights.grad().data(), ks.n, patch);
  const bool pointwise = detail::is_pointwise(g);
  std::vector<T> col(pointwise ? 0 : patch * out_plane);
  std::vector<T> dcol(pointwise ? 0 : patch * out_plane);

  for (std::size_t b = 0; b < xs.n; ++b) {
    const T* xb = x.data().data() + b * xs.c * xs.plane();
    T* dxb = dx.data().data() + b * xs.c * xs.plane();
    detail::ConstMatMap<T> dym(dy.data().data() + b * ks.n * out_plane, ks.n, out_plane);
    if (pointwise) {
      dwm.noalias() += dym * detail::ConstMatMap<T>(xb, patch, out_plane).transpose();
      detail::MatMap<T>(dxb, patch, out_plane).noalias() = wm.transpose() * dym;
    } else {
      detail::im2col(xb, xs.c, xs.h, xs.w, g, col.data());
      dwm.noalias() += dym * detail::ConstMatMap<T>(col.data(), patch, out_plane).transpose();
      detail::MatMap<T>(dcol.data(), patch, out_plane).noalias() = wm.transpose() * dym;
      detail::col2im(dcol.data(), xs.c, xs.h, xs.w, g, dxb);
    }
    if (k.bias) {
      auto& db = k.bias->grad();
      for (std::size_t co = 0; co < ks.n; ++co) db[co] += detail::sum_span(dym.data() + co * out_plane, out_plane);
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// conv2d_transpose: weights are (c_in, c_out, k, k) with stride == k, so
// output windows never overlap and the output is exactly stride x larger.

namespace detail {
template <typename T>
std::size_t transpose_kernel(const Tensor<T>& x, const LayerParams<T>& k, std::size_t stride) {
  const Shape& ks = k.weights.shape();
  if (x.shape().empty()) throw ShapeError("conv2d_transpose: empty input");
  if (x.shape().c != ks.n) {
    throw ShapeError("conv2d_transpose: input has " + std::to_string(x.shape().c) + " channels but kernel '" +
                     k.name + "' expects " + std::to_string(ks.n));
  }
  if (ks.h != stride || ks.w != stride) {
    throw ShapeError("conv2d_transpose: kernel must be stride x stride (" + std::to_string(stride) + ")");
  }
  check_bias(k, ks.c, "conv2d_transpose");
  return stride;
}
}  // namespace detail

template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& x, const LayerParams<T>& k, std::size_t stride = 2) {
  const std::size_t s = detail::transpose_kernel(x, k, stride);
  const Shape& xs = x.shape();
  const std::size_t c_out = k.weights.shape().c;
  const std::size_t taps = c_out * s * s;
  const std::size_t plane = xs.plane();

  Tensor<T> y(Shape{xs.n, c_out, xs.h * s, xs.w * s});
  detail::ConstMatMap<T> wm(k.weights.data().data(), xs.c, taps);
  std::vector<T> z(taps * plane);
  for (std::size_t b = 0; b < xs.n; ++b) {
    detail::ConstMatMap<T> xm(x.data().data() + b * xs.c * plane, xs.c, plane);
    detail::MatMap<T>(z.data(), taps, plane).noalias() = wm.transpose() * xm;
    for (std::size_t co = 0; co < c_out; ++co) {
      const T bias = k.bias ? (*k.bias)[co] : T(0);
      for (std::size_t a = 0; a < s; ++a) {
        for (std::size_t bb = 0; bb < s; ++bb) {
          const T* zr = z.data() + ((co * s + a) * s + bb) * plane;
          for (std::size_t i = 0; i < xs.h; ++i) {
            for (std::size_t j = 0; j < xs.w; ++j) y(b, co, i * s + a, j * s + bb) = zr[i * xs.w + j] + bias;
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> conv2d_transpose_backward(const Tensor<T>& x, LayerParams<T>& k, const Tensor<T>& dy,
                                    std::size_t stride = 2) {
  const std::size_t s = detail::transpose_kernel(x, k, stride);
  const Shape& xs = x.shape();
  const std::size_t c_out = k.weights.shape().c;
  const std::size_t taps = c_out * s * s;
  const std::size_t plane = xs.plane();
  if (dy.shape() != Shape{xs.n, c_out, xs.h * s, xs.w * s}) {
    throw ShapeError("conv2d_transpose_backward: gradient shape " + dy.shape().str() + " does not match output");
  }

  Tensor<T> dx(xs);
  detail::ConstMatMap<T> wm(k.weights.data().data(), xs.c, taps);
  detail::MatMap<T> dwm(k.weights.grad().data(), xs.c, taps);
  std::vector<T> dz(taps * plane);
  for (std::size_t b = 0; b < xs.n; ++b) {
    for (std::size_t co = 0; co < c_out; ++co) {
      for (std::size_t a = 0; a < s; ++a) {
        for (std::size_t bb = 0; bb < s; ++bb) {
          T* zr = dz.data() + ((co * s + a) * s + bb) * plane;
          for (std::size_t i = 0; i < xs.h; ++i) {
            for (std::size_t j = 0; j < xs.w; ++j) zr[i * xs.w + j] = dy(b, co, i * s + a, j * s + bb);
          }
        }
      }
    }
    detail::ConstMatMap<T> dzm(dz.data(), taps, plane);
    detail::ConstMatMap<T> xm(x.data().data() + b * xs.c * plane, xs.c, plane);
    dwm.noalias() += xm * dzm.transpose();
    detail::MatMap<T>(dx.data().data() + b * xs.c * plane, xs.c, plane).noalias() = wm * dzm;
    if (k.bias) {
      auto& db = k.bias->grad();
      for (std::size_t co = 0; co < c_out; ++co) {
        T acc = T(0);
        for (std::size_t t = 0; t < s * s; ++t) acc += detail::sum_span(dz.data() + (co * s * s + t) * plane, plane);
        db[co] += acc;
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2.

template <typename T>
struct PoolResult {
  Tensor<T> out;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

template <typename T>
PoolResult<T> maxpool2(const Tensor<T>& x) {
  const Shape& xs = x.shape();
  if (xs.h % 2 != 0 || xs.w % 2 != 0) throw ShapeError("maxpool2: odd spatial dims " + xs.str());
  PoolResult<T> r{Tensor<T>(Shape{xs.n, xs.c, xs.h / 2, xs.w / 2}), {}};
  r.argmax.resize(r.out.size());
  std::size_t o = 0;
  for (std::size_t b = 0; b < xs.n; ++b) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      for (std::size_t i = 0; i < xs.h / 2; ++i) {
        for (std::size_t j = 0; j < xs.w / 2; ++j, ++o) {
          // Row-major scan; strict comparison keeps the first maximum on ties.
          std::size_t best = x.index(b, c, 2 * i, 2 * j);
          for (std::size_t idx : {x.index(b, c, 2 * i, 2 * j + 1), x.index(b, c, 2 * i + 1, 2 * j),
                                  x.index(b, c, 2 * i + 1, 2 * j + 1)}) {
            if (x[idx] > x[best]) best = idx;
          }
          r.out[o] = x[best];
          r.argmax[o] = best;
        }
      }
    }
  }
  return r;
}

template <typename T>
Tensor<T> maxpool2_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax, const Tensor<T>& dy) {
  if (dy.size() != argmax.size()) throw ShapeError("maxpool2_backward: gradient does not match pooled output");
  Tensor<T> dx(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += dy[o];
  return dx;
}

// ---------------------------------------------------------------------------
// Pointwise activations.

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.data()) v = v < T(0) ? T(0) : v;  // NaN passes through
  return y;
}

/// `y` is the forward output; the derivative is taken from its sign.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  if (y.shape() != dy.shape()) throw ShapeError("relu_backward: shape mismatch");
  Tensor<T> dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] > T(0) ? dy[i] : T(0);
  return dx;
}

template <typename T>
T sigmoid(T v) {
  // Branch on sign so exp never overflows.
  T s;
  if (v >= T(0)) {
    s = T(1) / (T(1) + std::exp(-v));
  } else {
    const T e = std::exp(v);
    s = e / (T(1) + e);
  }
  // Keep the result inside the open interval even when it rounds to 0 or 1.
  return std::clamp(s, std::numeric_limits<T>::min(), std::nextafter(T(1), T(0)));
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  return y;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  if (y.shape() != dy.shape()) throw ShapeError("sigmoid_backward: shape mismatch");
  Tensor<T> dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = dy[i] * y[i] * (T(1) - y[i]);
  return dx;
}

// ---------------------------------------------------------------------------
// Batch normalization over (n, h, w) per channel.

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(Shape{1, channels, 1, 1}, T(0)), running_var(Shape{1, channels, 1, 1}, T(1)) {}
};

template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
  Mode mode = Mode::Train;
};

/// params.weights holds gamma (1,C,1,1); params.bias holds beta. In train
/// mode the running statistics are folded into `running` when given (it may
/// alias `state`).
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const LayerParams<T>& params, const BatchNormState<T>& state, Mode mode,
                      BatchNormCache<T>* cache = nullptr, BatchNormState<T>* running = nullptr) {
  const Shape& xs = x.shape();
  if (params.weights.size() != xs.c || !params.bias || params.bias->size() != xs.c ||
      state.running_mean.size() != xs.c) {
    throw ShapeError("batchnorm2d: parameters of '" + params.name + "' do not match " + std::to_string(xs.c) +
                     " channels");
  }
  const std::size_t count = xs.n * xs.plane();
  if (mode == Mode::Train && count < 2) {
    throw ShapeError("batchnorm2d: training needs at least 2 values per channel, got " + std::to_string(count));
  }
  const auto& gamma = params.weights;
  const auto& beta = *params.bias;

  Tensor<T> y(xs);
  Tensor<T> xhat(xs);
  std::vector<T> inv_std(xs.c);
  for (std::size_t c = 0; c < xs.c; ++c) {
    T mean, var;
    if (mode == Mode::Train) {
      T acc = T(0);
      for (std::size_t b = 0; b < xs.n; ++b) {
        const T* p = &x(b, c, 0, 0);
        for (std::size_t i = 0; i < xs.plane(); ++i) acc += p[i];
      }
      mean = acc / static_cast<T>(count);
      T sq = T(0);
      for (std::size_t b = 0; b < xs.n; ++b) {
        const T* p = &x(b, c, 0, 0);
        for (std::size_t i = 0; i < xs.plane(); ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      var = sq / static_cast<T>(count);
      const T unbiased = sq / static_cast<T>(count - 1);
      if (running) {
        running->running_mean[c] = (T(1) - state.momentum) * state.running_mean[c] + state.momentum * mean;
        running->running_var[c] = (T(1) - state.momentum) * state.running_var[c] + state.momentum * unbiased;
      }
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    inv_std[c] = T(1) / std::sqrt(var + state.eps);
    for (std::size_t b = 0; b < xs.n; ++b) {
      const T* p = &x(b, c, 0, 0);
      T* ph = &xhat(b, c, 0, 0);
      T* py = &y(b, c, 0, 0);
      for (std::size_t i = 0; i < xs.plane(); ++i) {
        ph[i] = (p[i] - mean) * inv_std[c];
        py[i] = gamma[c] * ph[i] + beta[c];
      }
    }
  }
  if (cache) *cache = BatchNormCache<T>{std::move(xhat), std::move(inv_std), mode};
  return y;
}

template <typename T>
Tensor<T> batchnorm2d_backward(const BatchNormCache<T>& cache, LayerParams<T>& params, const Tensor<T>& dy) {
  const Shape& xs = dy.shape();
  if (cache.xhat.shape() != xs) throw ShapeError("batchnorm2d_backward: gradient does not match cached input");
  const std::size_t count = xs.n * xs.plane();
  auto& dgamma = params.weights.grad();
  auto& dbeta = params.bias->grad();
  Tensor<T> dx(xs);
  for (std::size_t c = 0; c < xs.c; ++c) {
    T sum_dy = T(0), sum_dy_xhat = T(0);
    for (std::size_t b = 0; b < xs.n; ++b) {
      const T* g = &dy(b, c, 0, 0);
      const T* h = &cache.xhat(b, c, 0, 0);
      for (std::size_t i = 0; i < xs.plane(); ++i) {
        sum_dy += g[i];
        sum_dy_xhat += g[i] * h[i];
      }
    }
    dgamma[c] += sum_dy_xhat;
    dbeta[c] += sum_dy;
    const T gamma = params.weights[c];
    for (std::size_t b = 0; b < xs.n; ++b) {
      const T* g = &dy(b, c, 0, 0);
      const T* h = &cache.xhat(b, c, 0, 0);
      T* d = &dx(b, c, 0, 0);
      if (cache.mode == Mode::Train) {
        const T scale = gamma * cache.inv_std[c] / static_cast<T>(count);
        for (std::size_t i = 0; i < xs.plane(); ++i) {
          d[i] = scale * (static_cast<T>(count) * g[i] - sum_dy - h[i] * sum_dy_xhat);
        }
      } else {
        for (std::size_t i = 0; i < xs.plane(); ++i) d[i] = g[i] * gamma * cache.inv_std[c];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Channel concatenation; a's channels come first.

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    throw ShapeError("concat_channels: " + as.str() + " and " + bs.str() + " disagree on n/h/w");
  }
  Tensor<T> out(Shape{as.n, as.c + bs.c, as.h, as.w});
  const std::size_t pa = as.c * as.plane();
  const std::size_t pb = bs.c * bs.plane();
  for (std::size_t n = 0; n < as.n; ++n) {
    T* dst = out.data().data() + n * (pa + pb);
    std::copy_n(a.data().data() + n * pa, pa, dst);
    std::copy_n(b.data().data() + n * pb, pb, dst + pa);
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> concat_channels_backward(const Shape& a_shape, const Shape& b_shape,
                                                        const Tensor<T>& dy) {
  Tensor<T> da(a_shape), db(b_shape);
  const std::size_t pa = a_shape.c * a_shape.plane();
  const std::size_t pb = b_shape.c * b_shape.plane();
  if (dy.size() != da.size() + db.size()) throw ShapeError("concat_channels_backward: gradient size mismatch");
  for (std::size_t n = 0; n < a_shape.n; ++n) {
    const T* src = dy.data().data() + n * (pa + pb);
    std::copy_n(src, pa, da.data().data() + n * pa);
    std::copy_n(src + pa, pb, db.data().data() + n * pb);
  }
  return {std::move(da), std::move(db)};
}

}  // namespace bseg
