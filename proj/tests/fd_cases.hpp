#pragma once

// Seeded finite-difference cases shared by the unit tests and the acceptance
// binary. Each case returns one relative error per differentiated input.

#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "fd_oracle.hpp"
#include "support.hpp"
#include "wscl/tensor.hpp"

namespace wscl::testing {

// Scalar probe: sum(out * weights) with fixed weights.
inline Tensor probe(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

// Values with |x| >= 0.1 so that relu has no kink within the FD step.
inline Tensor away_from_zero(Shape shape, Rng& rng) {
  std::vector<float> v(numel(shape));
  for (float& x : v) {
    const double mag = rng.uniform(0.1, 1.0);
    x = static_cast<float>(rng.uniform() < 0.5 ? -mag : mag);
  }
  return Tensor(std::move(shape), std::move(v), true);
}

// Distinct values spaced 0.01 apart so max-pool winners never swap within h.
inline Tensor spaced(Shape shape, Rng& rng) {
  const std::size_t n = numel(shape);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<float> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<float>(0.01 * static_cast<double>(order[i]) - 0.3);
  return Tensor(std::move(shape), std::move(v), true);
}

inline double eval_no_grad(const std::function<Tensor()>& f) {
  NoGradGuard guard;
  return f().item();
}

// Relative error of d f / d p against central differences, for every p.
inline std::vector<double> grad_errors(const std::function<Tensor()>& f, std::vector<Tensor> params) {
  for (auto& p : params) p.clear_grad();
  backward(f());
  std::vector<double> out;
  for (auto& p : params) {
    auto numeric = numeric_grad(p, [&] { return eval_no_grad(f); });
    out.push_back(p.has_grad() ? relative_error(p.grad(), numeric) : 1.0);
  }
  return out;
}

struct FdCase {
  std::string name;
  std::function<std::vector<double>(std::uint64_t)> run;
};

inline std::vector<FdCase> primitive_fd_cases() {
  std::vector<FdCase> cases;
  cases.push_back({"matmul", [](std::uint64_t seed) {
    Rng rng(seed, "fd");
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng), w = random_tensor({3, 2}, rng, false);
    return grad_errors([&] { return probe(matmul(a, b), w); }, {a, b});
  }});
  cases.push_back({"add_bias", [](std::uint64_t seed) {
    Rng rng(seed, "fd");
    Tensor x = random_tensor({2, 3, 2, 2}, rng), bias = random_tensor({3}, rng);
    Tensor w = random_tensor({2, 3, 2, 2}, rng, false);
    return grad_errors([&] { return probe(add_bias(x, bias), w); }, {x, bias});
  }});
  cases.push_back({"add/mul/scale", [](std::uint64_t seed) {
    Rng rng(seed, "fd");
    Tensor a = random_tensor({5}, rng), b = random_tensor({5}, rng), w = random_tensor({5}, rng, false);
    return grad_errors([&] { return probe(scale(mul(add(a, b), b), 1.7f), w); }, {a, b});
  }});
  cases.push_back({"relu/reshape", [](std::uint64_t seed) {
    Rng rng(seed, "fd");
    Tensor x = away_from_zero({2, 6}, rng), w = random_tensor({3, 4}, rng, false);
    return grad_errors([&] { return probe(reshape(relu(x), {3, 4}), w); }, {x});
  }});
  cases.push_back({"conv2d", [](std::uint64_t seed) {
    Rng rng(seed, "fd");
    Tensor x = random_tensor({2, 2, 4, 4}, rng), k = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
    Tensor w = random_tensor({2, 3, 4, 4}, rng, false);
    return grad_errors([&] { return probe(conv2d(x, k, b), w); }, {x, k, b});
  }});
  cases.push_back({"max_pool2d", [](std::uint64_t seed) {
    Rng rng(seed, "fd");
    Tensor x = spaced({1, 2, 4, 5}, rng), w = random_tensor({1, 2, 2, 2}, rng, false);
    return grad_errors([&] { return probe(max_pool2d(x, 2), w); }, {x});
  }});
  cases.push_back({"cross_entropy", [](std::uint64_t seed) {
    Rng rng(seed, "fd");
    Tensor logits = random_tensor({4, 5}, rng, true, -2, 2);
    std::vector<int> labels{0, 3, 2, 4};
    std::vector<std::uint8_t> mask{1, 0, 1, 1, 1};
    auto errs = grad_errors([&] { return softmax_cross_entropy(logits, labels); }, {logits});
    for (double e : grad_errors([&] { return softmax_cross_entropy(logits, labels, mask); }, {logits})) errs.push_back(e);
    return errs;
  }});
  cases.push_back({"mse_logits", [](std::uint64_t seed) {
    Rng rng(seed, "fd");
    Tensor logits = random_tensor({3, 4}, rng), stored = random_tensor({3, 4}, rng, false);
    return grad_errors([&] { return mse_logits(logits, stored); }, {logits});
  }});
  return cases;
}

// End-to-end classifier case: even seeds use a small MLP, odd seeds a small CNN.
inline FdComparison classifier_fd_case(std::uint64_t seed) {
  ArchConfig arch;
  const bool cnn = seed % 2 == 1;
  arch.kind = cnn ? ArchKind::Cnn : ArchKind::Mlp;
  arch.widths = cnn ? std::vector<std::size_t>{2, 3} : std::vector<std::size_t>{6, 5};
  arch.input_spec = cnn ? Shape{1, 4, 4} : Shape{7};
  arch.num_classes = 4;
  LayeredClassifier model(arch, seed);
  Rng rng(seed, "fd.input");
  std::vector<double> x(3 * numel(arch.input_spec));
  for (double& v : x) v = static_cast<float>(rng.uniform());
  std::vector<int> labels{0, 1, 3};
  return compare_classifier_grads(model, x, labels);
}

}  // namespace wscl::testing
