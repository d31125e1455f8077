#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "balloonseg/tensor.hpp"

namespace bseg {

inline constexpr double kBceClamp = 1e-7;
inline constexpr double kDiceSmooth = 1e-6;

enum class DiceDenominator {
  Additive,      // sum(y^2) + sum(yhat^2)
  LiteralProduct // sum(y^2) * sum(yhat^2), kept for comparison only
};

template <typename T>
struct LossValue {
  double value = 0.0;
  Tensor<T> grad;  // dL/d(yhat)
};

namespace detail {
template <typename T>
void check_pair(const Tensor<T>& y, const Tensor<T>& yhat, const char* op) {
  if (y.size() != yhat.size()) {
    throw ShapeError(std::string(op) + ": mask " + y.shape().str() + " and prediction " + yhat.shape().str() +
                     " differ in pixel count");
  }
  if (y.empty()) throw ShapeError(std::string(op) + ": empty input");
}
}  // namespace detail

/// Mean pixel-wise binary cross entropy, prediction clamped to [eps, 1 - eps].
/// The gradient is zero where the clamp is active.
template <typename T>
LossValue<T> bce_loss(const Tensor<T>& y, const Tensor<T>& yhat) {
  detail::check_pair(y, yhat, "bce_loss");
  const double n = static_cast<double>(y.size());
  LossValue<T> out{0.0, Tensor<T>(yhat.shape())};
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double raw = static_cast<double>(yhat[i]);
    const double p = std::clamp(raw, kBceClamp, 1.0 - kBceClamp);
    const double t = static_cast<double>(y[i]);
    acc += t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    const bool inside = raw >= kBceClamp && raw <= 1.0 - kBceClamp;
    out.grad[i] = inside ? static_cast<T>((-t / p + (1.0 - t) / (1.0 - p)) / n) : T(0);
  }
  out.value = -acc / n;
  return out;
}

/// Soft Dice loss 1 - (2 sum(y yhat) + s) / (denominator + s).
template <typename T>
LossValue<T> dice_loss(const Tensor<T>& y, const Tensor<T>& yhat,
                       DiceDenominator form = DiceDenominator::Additive) {
  detail::check_pair(y, yhat, "dice_loss");
  double inter = 0.0, yy = 0.0, pp = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double t = y[i], p = yhat[i];
    inter += t * p;
    yy += t * t;
    pp += p * p;
  }
  const double s = kDiceSmooth;
  const double num = 2.0 * inter + s;
  const double den = (form == DiceDenominator::Additive ? yy + pp : yy * pp) + s;
  LossValue<T> out{1.0 - num / den, Tensor<T>(yhat.shape())};
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double t = y[i], p = yhat[i];
    const double dden = form == DiceDenominator::Additive ? 2.0 * p : 2.0 * p * yy;
    out.grad[i] = static_cast<T>(-(2.0 * t * den - num * dden) / (den * den));
  }
  return out;
}

struct LossWeights {
  double bce = 1.0;
  double dice = 1.0;
  DiceDenominator dice_form = DiceDenominator::Additive;
};

template <typename T>
struct TotalLoss {
  double total = 0.0;
  double bce = 0.0;
  double dice = 0.0;
  double l2 = 0.0;
  Tensor<T> grad;  // dL/d(yhat); the L2 part is applied to weights separately
};

/// bce_weight * BCE + dice_weight * Dice + l2 (the precomputed penalty).
template <typename T>
TotalLoss<T> total_loss(const Tensor<T>& y, const Tensor<T>& yhat, double l2_penalty, const LossWeights& w = {}) {
  auto b = bce_loss(y, yhat);
  auto d = dice_loss(y, yhat, w.dice_form);
  TotalLoss<T> out;
  out.bce = b.value;
  out.dice = d.value;
  out.l2 = l2_penalty;
  out.total = w.bce * b.value + w.dice * d.value + l2_penalty;
  out.grad = Tensor<T>(yhat.shape());
  for (std::size_t i = 0; i < yhat.size(); ++i) {
    out.grad[i] = static_cast<T>(w.bce * b.grad[i] + w.dice * d.grad[i]);
  }
  return out;
}

}  // namespace bseg
