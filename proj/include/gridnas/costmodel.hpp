#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "gridnas/supergrid.hpp"

namespace gridnas {

// Selected-architecture cost: sum of per-block costs over set mask bits.
// Mask and table must be aligned (same block order, same length).
inline double arch_cost(const MaskBits& mask, const std::vector<double>& costs) {
  if (mask.size() != costs.size()) {
    throw std::invalid_argument("arch_cost: mask/cost length mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) total += costs[i];
  }
  return total;
}

inline double total_cost(const std::vector<double>& costs) {
  double total = 0.0;
  for (double c : costs) total += c;
  return total;
}

// Fraction of the grid's total cost the selection keeps.
inline double relative_cost(const MaskBits& mask, const std::vector<double>& costs) {
  const double total = total_cost(costs);
  if (total <= 0.0) throw std::invalid_argument("relative_cost: total cost must be positive");
  return arch_cost(mask, costs) / total;
}

// Budget hinge added to every task loss:
// lambda * max(0, relative_cost - target). Zero inside the budget, linear
// outside; its subgradient w.r.t. bit b is lambda * cost_b / total when the
// hinge is active and 0 otherwise.
inline double cost_reg(const MaskBits& mask, const std::vector<double>& costs,
                       double lambda, double target) {
  return lambda * std::max(0.0, relative_cost(mask, costs) - target);
}

inline std::vector<double> cost_reg_mask_grad(const MaskBits& mask,
                                              const std::vector<double>& costs,
                                              double lambda, double target) {
  const double total = total_cost(costs);
  if (total <= 0.0) throw std::invalid_argument("cost_reg: total cost must be positive");
  std::vector<double> g(mask.size(), 0.0);
  if (arch_cost(mask, costs) / total > target) {
    for (std::size_t i = 0; i < mask.size(); ++i) g[i] = lambda * costs[i] / total;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Inverted-residual block cost (multiply-accumulate count of the three
// convolutions: 1x1 expand, kxk depthwise at the stride, 1x1 project).

struct IrbSpec {
  int height = 0;
  int width = 0;
  int c_in = 0;
  int c_out = 0;
  int expansion = 1;
  int kernel = 3;
  int stride = 1;
};

inline double irb_flops(const IrbSpec& s) {
  if (s.height <= 0 || s.width <= 0 || s.c_in <= 0 || s.c_out <= 0 ||
      s.expansion <= 0 || s.kernel <= 0 || s.stride <= 0) {
    throw std::invalid_argument("irb_flops: all dimensions must be positive");
  }
  if (s.height % s.stride != 0 || s.width % s.stride != 0) {
    throw std::invalid_argument("irb_flops: spatial dims must be divisible by stride");
  }
  const double hw = static_cast<double>(s.height) * s.width;
  const double hw_out = hw / (static_cast<double>(s.stride) * s.stride);
  const double c_mid = static_cast<double>(s.expansion) * s.c_in;
  const double expand = hw * s.c_in * c_mid;
  const double depthwise = hw_out * c_mid * s.kernel * s.kernel;
  const double project = hw_out * c_mid * s.c_out;
  return expand + depthwise + project;
}

// ---------------------------------------------------------------------------
// Detection-style input sizing: scale the short side to min_size keeping
// aspect; if that pushes the long side past max_size, rescale (from the
// original dims) so the long side lands exactly on max_size. Nearest
// rounding throughout.

inline std::pair<int, int> resize_dims(int h, int w, int min_size, int max_size) {
  if (h <= 0 || w <= 0 || min_size <= 0 || max_size <= 0) {
    throw std::invalid_argument("resize_dims: all sizes must be positive");
  }
  if (min_size > max_size) {
    throw std::invalid_argument("resize_dims: min_size must not exceed max_size");
  }
  const double short_side = static_cast<double>(std::min(h, w));
  const double long_side = static_cast<double>(std::max(h, w));
  double scale = static_cast<double>(min_size) / short_side;
  if (long_side * scale > static_cast<double>(max_size)) {
    scale = static_cast<double>(max_size) / long_side;
  }
  const int h2 = static_cast<int>(std::lround(h * scale));
  const int w2 = static_cast<int>(std::lround(w * scale));
  return {h2, w2};
}

// Duty-cycle-weighted cost of a two-regime pipeline: the backbone+rpn part
// runs at `ratio` of full rate, the roi part always runs.
inline double average_flops(double backbone, double rpn, double roi, double ratio) {
  return ratio * (backbone + rpn) + roi;
}

}  // namespace gridnas
