#pragma once

// Double-precision reimplementation of the classifier forward pass used as the
// finite-difference oracle for end-to-end gradients.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "wscl/model.hpp"

namespace wscl::testing {

struct OracleNet {
  ArchConfig arch;
  // Weight then bias of every block, then of the head.
  std::vector<std::vector<double>> params;

  explicit OracleNet(LayeredClassifier& model) : arch(model.arch()) {
    for (auto* g : model.param_groups(HeadSelector::Cl)) {
      for (const auto& t : g->tensors) params.emplace_back(t.data().begin(), t.data().end());
    }
  }

  // Mean cross-entropy of `x` (batch-major) against `labels`. `pattern`
  // receives every relu sign and pooling argmax so callers can detect a
  // stencil that straddles a kink.
  double loss(const std::vector<double>& x, std::span<const int> labels, std::vector<std::int64_t>& pattern) const {
    pattern.clear();
    const std::size_t B = labels.size();
    std::vector<double> h = x;
    std::size_t channels = 0, height = 0, width = 0, dim = 0;
    if (arch.kind == ArchKind::Mlp) {
      dim = numel(arch.input_spec);
    } else {
      channels = arch.input_spec[0];
      height = arch.input_spec[1];
      width = arch.input_spec[2];
    }
    for (std::size_t k = 0; k < arch.blocks(); ++k) {
      const auto& w = params[2 * k];
      const auto& bias = params[2 * k + 1];
      const std::size_t out = arch.widths[k];
      if (arch.kind == ArchKind::Mlp) {
        h = affine(h, B, dim, out, w, bias);
        relu(h, pattern);
        dim = out;
        continue;
      }
      const std::size_t K = arch.kernel;
      const long pad = static_cast<long>(K / 2);
      std::vector<double> next(B * out * height * width);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t o = 0; o < out; ++o) {
          for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t xx = 0; xx < width; ++xx) {
              double acc = bias[o];
              for (std::size_t c = 0; c < channels; ++c) {
                for (std::size_t ky = 0; ky < K; ++ky) {
                  for (std::size_t kx = 0; kx < K; ++kx) {
                    const long sy = static_cast<long>(y + ky) - pad, sx = static_cast<long>(xx + kx) - pad;
                    if (sy < 0 || sx < 0 || sy >= static_cast<long>(height) || sx >= static_cast<long>(width)) continue;
                    acc += w[((o * channels + c) * K + ky) * K + kx] *
                           h[((b * channels + c) * height + static_cast<std::size_t>(sy)) * width + static_cast<std::size_t>(sx)];
                  }
                }
              }
              next[((b * out + o) * height + y) * width + xx] = acc;
            }
          }
        }
      }
      relu(next, pattern);
      channels = out;
      h = std::move(next);
      if (height >= 2 && width >= 2) {
        const std::size_t oh = height / 2, ow = width / 2;
        std::vector<double> pooled(B * channels * oh * ow);
        for (std::size_t bc = 0; bc < B * channels; ++bc) {
          for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
              std::size_t best = (2 * oy) * width + 2 * ox;
              for (std::size_t ky = 0; ky < 2; ++ky) {
                for (std::size_t kx = 0; kx < 2; ++kx) {
                  const std::size_t idx = (2 * oy + ky) * width + 2 * ox + kx;
                  if (h[bc * height * width + idx] > h[bc * height * width + best]) best = idx;
                }
              }
              pooled[(bc * oh + oy) * ow + ox] = h[bc * height * width + best];
              pattern.push_back(static_cast<std::int64_t>(best));
            }
          }
        }
        h = std::move(pooled);
        height = oh;
        width = ow;
      }
      dim = channels * height * width;
    }
    const std::size_t L = arch.blocks();
    const auto logits = affine(h, B, dim, arch.num_classes, params[2 * L], params[2 * L + 1]);
    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const double* row = &logits[b * arch.num_classes];
      const double mx = *std::max_element(row, row + arch.num_classes);
      double z = 0.0;
      for (std::size_t c = 0; c < arch.num_classes; ++c) z += std::exp(row[c] - mx);
      total += mx + std::log(z) - row[labels[b]];
    }
    return total / static_cast<double>(B);
  }

private:
  static std::vector<double> affine(const std::vector<double>& in, std::size_t B, std::size_t n_in, std::size_t n_out,
                                    const std::vector<double>& w, const std::vector<double>& bias) {
    std::vector<double> out(B * n_out);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t j = 0; j < n_out; ++j) {
        double acc = bias[j];
        for (std::size_t i = 0; i < n_in; ++i) acc += in[b * n_in + i] * w[i * n_out + j];
        out[b * n_out + j] = acc;
      }
    }
    return out;
  }

  static void relu(std::vector<double>& v, std::vector<std::int64_t>& pattern) {
    for (double& x : v) {
      pattern.push_back(x > 0.0);
      x = std::max(x, 0.0);
    }
  }
};

struct FdComparison {
  double relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};

// Compares the analytic gradient of every classifier parameter against
// central differences of the oracle. Coordinates whose stencil crosses a relu
// or pooling switch are skipped, since the loss is not differentiable there.
inline FdComparison compare_classifier_grads(LayeredClassifier& model, const std::vector<double>& x,
                                             std::span<const int> labels, double h = 1e-3) {
  OracleNet net(model);
  std::vector<std::int64_t> base, up_pattern, down_pattern;
  net.loss(x, labels, base);

  std::vector<float> input(x.begin(), x.end());
  Shape shape{labels.size()};
  shape.insert(shape.end(), model.arch().input_spec.begin(), model.arch().input_spec.end());
  model.zero_grad();
  backward(softmax_cross_entropy(model.forward(Tensor(shape, input), HeadSelector::Cl), labels));

  FdComparison out;
  double diff = 0.0, na = 0.0, nn = 0.0;
  std::size_t slot = 0;
  for (auto* g : model.param_groups(HeadSelector::Cl)) {
    for (const auto& t : g->tensors) {
      auto& p = net.params[slot++];
      const auto grad = t.grad();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double keep = p[i];
        p[i] = keep + h;
        const double up = net.loss(x, labels, up_pattern);
        p[i] = keep - h;
        const double down = net.loss(x, labels, down_pattern);
        p[i] = keep;
        if (up_pattern != base || down_pattern != base) {
          ++out.skipped;
          continue;
        }
        const double numeric = (up - down) / (2.0 * h);
        diff += (grad[i] - numeric) * (grad[i] - numeric);
        na += static_cast<double>(grad[i]) * grad[i];
        nn += numeric * numeric;
        ++out.checked;
      }
    }
  }
  out.relative_error = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  return out;
}

}  // namespace wscl::testing
