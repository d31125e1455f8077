#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace bseg {

/// One block of values to perturb, paired with its analytic gradient.
/// An empty index list checks every element.
struct GradProbe {
  std::string name;
  std::vector<double>* values;
  const std::vector<double>* analytic;
  std::vector<std::size_t> indices{};
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "name[index]" of the worst element

  bool passed(double tolerance) const { return checked > 0 && max_rel_error < tolerance; }
};

/// Compares every analytic gradient entry against a central finite
/// difference of `loss`. Relative error is |a - n| / max(|a|, |n|, floor);
/// the floor keeps near-zero entries from dividing by rounding noise.
inline GradCheckReport grad_check(const std::function<double()>& loss, const std::vector<GradProbe>& probes,
                                  double step = 1e-5, double floor = 1e-6) {
  GradCheckReport report;
  for (const auto& probe : probes) {
    auto& values = *probe.values;
    std::vector<std::size_t> indices = probe.indices;
    if (indices.empty()) {
      indices.resize(values.size());
      for (std::size_t i = 0; i < values.size(); ++i) indices[i] = i;
    }
    for (std::size_t i : indices) {
      const double saved = values.at(i);
      values[i] = saved + step;
      const double up = loss();
      values[i] = saved - step;
      const double down = loss();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = probe.analytic->at(i);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      const double rel = std::abs(analytic - numeric) / denom;
      if (report.checked == 0 || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = probe.name + "[" + std::to_string(i) + "]";
      }
      ++report.checked;
    }
  }
  return report;
}

}  // namespace bseg
