#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "balloonseg/losses.hpp"
#include "balloonseg/tensor.hpp"

namespace bseg {

/// Pixel counts pooled over an evaluation set.
struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }

  // Empty denominators: a class that is absent from both sides scores 1.
  double precision() const {
    if (tp + fp == 0) return tp + fn == 0 ? 1.0 : 0.0;
    return static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  double recall() const {
    if (tp + fn == 0) return tp + fp == 0 ? 1.0 : 0.0;
    return static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
  /// Sorensen-Dice on binarized masks: 2TP / (2TP + FP + FN).
  double dice() const {
    const auto den = 2 * tp + fp + fn;
    return den == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(den);
  }
};

template <typename T>
Confusion confusion(const Tensor<T>& y, const Tensor<T>& yhat, double threshold) {
  if (y.size() != yhat.size()) throw ShapeError("confusion: mask and prediction differ in size");
  Confusion c;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool truth = y[i] >= T(0.5);
    const bool pred = static_cast<double>(yhat[i]) >= threshold;
    if (truth && pred) ++c.tp;
    else if (pred) ++c.fp;
    else if (truth) ++c.fn;
    else ++c.tn;
  }
  return c;
}

struct MetricsReport {
  std::size_t epoch = 0;
  double bce = 0.0;
  double dice_coeff = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Accumulates pixel-weighted BCE and a pooled confusion matrix.
class MetricsAccumulator {
 public:
  explicit MetricsAccumulator(double threshold) : threshold_(threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("threshold must lie in (0,1)");
  }

  template <typename T>
  void add(const Tensor<T>& y, const Tensor<T>& yhat) {
    bce_sum_ += bce_loss(y, yhat).value * static_cast<double>(y.size());
    pixels_ += y.size();
    counts_ += confusion(y, yhat, threshold_);
  }

  const Confusion& counts() const { return counts_; }

  MetricsReport report(std::size_t epoch = 0) const {
    MetricsReport r;
    r.epoch = epoch;
    r.bce = pixels_ ? bce_sum_ / static_cast<double>(pixels_) : 0.0;
    r.dice_coeff = counts_.dice();
    r.precision = counts_.precision();
    r.recall = counts_.recall();
    r.f1 = counts_.f1();
    return r;
  }

 private:
  double threshold_;
  double bce_sum_ = 0.0;
  std::size_t pixels_ = 0;
  Confusion counts_;
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty sequence");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Per-metric median over the last `window` reports (all of them if fewer).
inline MetricsReport median_of_last(const std::vector<MetricsReport>& history, std::size_t window = 5) {
  if (history.empty()) throw std::invalid_argument("no epochs to summarize");
  const std::size_t start = history.size() > window ? history.size() - window : 0;
  auto column = [&](double MetricsReport::*field) {
    std::vector<double> v;
    for (std::size_t i = start; i < history.size(); ++i) v.push_back(history[i].*field);
    return median(std::move(v));
  };
  MetricsReport r;
  r.epoch = history.back().epoch;
  r.bce = column(&MetricsReport::bce);
  r.dice_coeff = column(&MetricsReport::dice_coeff);
  r.precision = column(&MetricsReport::precision);
  r.recall = column(&MetricsReport::recall);
  r.f1 = column(&MetricsReport::f1);
  return r;
}

}  // namespace bseg
