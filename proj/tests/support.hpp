#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "wscl/rng.hpp"
#include "wscl/tensor.hpp"

namespace wscl::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(numel(shape));
  for (float& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

// Central differences of `loss` with respect to every entry of `param`.
inline std::vector<double> numeric_grad(Tensor& param, const std::function<double()>& loss, double h = 1e-3) {
  std::vector<double> out(param.numel());
  auto data = param.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const float keep = data[i];
    data[i] = static_cast<float>(keep + h);
    const double up = loss();
    data[i] = static_cast<float>(keep - h);
    const double down = loss();
    data[i] = keep;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

// ||a - b|| / max(||a||, ||b||), with a floor so all-zero gradients compare
// equal.
inline double relative_error(std::span<const float> analytic, const std::vector<double>& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += static_cast<double>(analytic[i]) * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
}

}  // namespace wscl::testing
