#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "balloonseg/ops.hpp"

namespace bseg {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moments are kept per parameter tensor and keyed
/// by the owning layer's name.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {
    if (!(config_.lr > 0)) throw std::invalid_argument("learning rate must be positive");
  }

  const AdamConfig& config() const { return config_; }
  std::size_t steps() const { return step_; }

  /// Applies one update using the gradients stored on each parameter.
  void step(const std::vector<LayerParams<T>*>& params) {
    ++step_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (auto* p : params) {
      update(p->name + ".weight", p->weights, c1, c2);
      if (p->bias) update(p->name + ".bias", *p->bias, c1, c2);
    }
  }

  /// First and second moment of one tensor, e.g. "head.conv.weight".
  const std::vector<double>& first_moment(const std::string& key) const { return moments_.at(key).m; }
  const std::vector<double>& second_moment(const std::string& key) const { return moments_.at(key).v; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };

  void update(const std::string& key, Tensor<T>& param, double c1, double c2) {
    if (!param.has_grad()) return;
    auto& mom = moments_[key];
    if (mom.m.empty()) {
      mom.m.assign(param.size(), 0.0);
      mom.v.assign(param.size(), 0.0);
    }
    const auto& g = param.grad();
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      mom.m[i] = config_.beta1 * mom.m[i] + (1.0 - config_.beta1) * gi;
      mom.v[i] = config_.beta2 * mom.v[i] + (1.0 - config_.beta2) * gi * gi;
      const double m_hat = mom.m[i] / c1;
      const double v_hat = mom.v[i] / c2;
      param[i] = static_cast<T>(static_cast<double>(param[i]) - config_.lr * m_hat / (std::sqrt(v_hat) + config_.epsilon));
    }
  }

  AdamConfig config_;
  std::size_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace bseg
