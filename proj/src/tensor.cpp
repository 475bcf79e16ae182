#include "wscl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "wscl/error.hpp"

namespace wscl {

namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<detail::Node>;

void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

const detail::Node& checked(const Tensor& t, const char* op) {
  if (!t.defined()) throw Error(ErrorCode::InvalidArgument, std::string(op) + ": undefined tensor");
  return *t.node();
}

bool needs_graph(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

NodePtr make_result(Shape shape, std::vector<float> data) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return node;
}

void attach(NodePtr& out, std::initializer_list<const Tensor*> inputs, std::function<void(detail::Node&)> fn) {
  out->requires_grad = true;
  for (const Tensor* t : inputs) out->parents.push_back(t->node());
  out->backward = std::move(fn);
}

std::vector<float>* grad_sink(detail::Node& parent) {
  if (!parent.requires_grad) return nullptr;
  if (parent.grad.empty()) parent.grad.assign(parent.data.size(), 0.0f);
  return &parent.grad;
}

}  // namespace

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Dimension: return "dimension error";
    case ErrorCode::Numeric: return "numeric error";
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::LabelRange: return "label out of range";
    case ErrorCode::MaskedLabel: return "masked label";
    case ErrorCode::MissingGradient: return "missing gradient";
    case ErrorCode::NotScalar: return "not a scalar";
    case ErrorCode::BadMagic: return "bad magic";
    case ErrorCode::Truncated: return "truncated payload";
    case ErrorCode::InvalidData: return "invalid data";
    case ErrorCode::Io: return "io error";
    case ErrorCode::Disjointness: return "label sets overlap";
    case ErrorCode::EmptyInput: return "empty input";
    case ErrorCode::State: return "invalid state";
    case ErrorCode::Config: return "invalid config";
  }
  return "error";
}

std::size_t numel(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

bool all_finite(std::span<const float> values) noexcept {
  return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<float> data, bool requires_grad) {
  for (std::size_t extent : shape) {
    require(extent > 0, ErrorCode::Dimension, "tensor extents must be positive, got " + shape_string(shape));
  }
  require(wscl::numel(shape) == data.size(), ErrorCode::Dimension,
          "shape " + shape_string(shape) + " does not match " + std::to_string(data.size()) + " values");
  require(all_finite(data), ErrorCode::Numeric, "tensor constructed from non-finite values");
  node_ = make_result(std::move(shape), std::move(data));
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = wscl::numel(shape);
  return Tensor(std::move(shape), std::vector<float>(n, 0.0f), requires_grad);
}

Tensor Tensor::scalar(float value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const { return checked(*this, "shape").shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  require(axis < s.size(), ErrorCode::Dimension, "axis out of range for " + shape_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(*this, "numel").data.size(); }

std::span<const float> Tensor::data() const { return checked(*this, "data").data; }

std::span<float> Tensor::mutable_data() {
  checked(*this, "mutable_data");
  return node_->data;
}

float Tensor::item() const {
  const auto& n = checked(*this, "item");
  require(n.data.size() == 1, ErrorCode::NotScalar, "item() on " + shape_string(n.shape));
  return n.data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  checked(*this, "set_requires_grad");
  node_->requires_grad = value;
  if (!value) node_->grad.clear();
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const float> Tensor::grad() const { return checked(*this, "grad").grad; }

std::span<float> Tensor::mutable_grad() {
  checked(*this, "mutable_grad");
  return node_->grad;
}

void Tensor::zero_grad() {
  checked(*this, "zero_grad");
  node_->grad.assign(node_->data.size(), 0.0f);
}

void Tensor::clear_grad() {
  checked(*this, "clear_grad");
  node_->grad.clear();
}

Tensor Tensor::clone() const {
  const auto& n = checked(*this, "clone");
  auto copy = make_result(n.shape, n.data);
  copy->requires_grad = n.requires_grad && n.parents.empty();
  return from_node(std::move(copy));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() noexcept { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& an = checked(a, "matmul");
  const auto& bn = checked(b, "matmul");
  require(an.shape.size() == 2 && bn.shape.size() == 2 && an.shape[1] == bn.shape[0], ErrorCode::Dimension,
          "matmul " + shape_string(an.shape) + " * " + shape_string(bn.shape));
  const std::size_t n = an.shape[0], k = an.shape[1], m = bn.shape[1];
  std::vector<float> out(n * m, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    float* row = &out[i * m];
    for (std::size_t p = 0; p < k; ++p) {
      const float av = an.data[i * k + p];
      if (av == 0.0f) continue;
      const float* brow = &bn.data[p * m];
      for (std::size_t j = 0; j < m; ++j) row[j] += av * brow[j];
    }
  }
  auto result = make_result({n, m}, std::move(out));
  if (needs_graph({&a, &b})) {
    attach(result, {&a, &b}, [n, k, m](detail::Node& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      const auto& g = self.grad;
      if (auto* ga = grad_sink(pa)) {
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const float* brow = &pb.data[p * m];
            const float* grow = &g[i * m];
            float acc = 0.0f;
            for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
            (*ga)[i * k + p] += acc;
          }
        }
      }
      if (auto* gb = grad_sink(pb)) {
        for (std::size_t i = 0; i < n; ++i) {
          const float* grow = &g[i * m];
          for (std::size_t p = 0; p < k; ++p) {
            const float av = pa.data[i * k + p];
            if (av == 0.0f) continue;
            float* gbrow = &(*gb)[p * m];
            for (std::size_t j = 0; j < m; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return Tensor::from_node(std::move(result));
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const auto& xn = checked(x, "add_bias");
  const auto& bn = checked(bias, "add_bias");
  require(xn.shape.size() >= 2 && bn.shape.size() == 1 && bn.shape[0] == xn.shape[1], ErrorCode::Dimension,
          "add_bias " + shape_string(xn.shape) + " + " + shape_string(bn.shape));
  const std::size_t batch = xn.shape[0], channels = xn.shape[1];
  const std::size_t inner = xn.data.size() / (batch * channels);
  std::vector<float> out = xn.data;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      float* p = &out[(b * channels + c) * inner];
      const float v = bn.data[c];
      for (std::size_t i = 0; i < inner; ++i) p[i] += v;
    }
  }
  auto result = make_result(xn.shape, std::move(out));
  if (needs_graph({&x, &bias})) {
    attach(result, {&x, &bias}, [batch, channels, inner](detail::Node& self) {
      const auto& g = self.grad;
      if (auto* gx = grad_sink(*self.parents[0])) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
      }
      if (auto* gb = grad_sink(*self.parents[1])) {
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t c = 0; c < channels; ++c) {
            const float* p = &g[(b * channels + c) * inner];
            float acc = 0.0f;
            for (std::size_t i = 0; i < inner; ++i) acc += p[i];
            (*gb)[c] += acc;
          }
        }
      }
    });
  }
  return Tensor::from_node(std::move(result));
}

Tensor add(const Tensor& a, const Tensor& b) {
  const auto& an = checked(a, "add");
  const auto& bn = checked(b, "add");
  require(an.shape == bn.shape, ErrorCode::Dimension, "add " + shape_string(an.shape) + " + " + shape_string(bn.shape));
  std::vector<float> out(an.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an.data[i] + bn.data[i];
  auto result = make_result(an.shape, std::move(out));
  if (needs_graph({&a, &b})) {
    attach(result, {&a, &b}, [](detail::Node& self) {
      for (auto& parent : self.parents) {
        if (auto* gp = grad_sink(*parent)) {
          for (std::size_t i = 0; i < self.grad.size(); ++i) (*gp)[i] += self.grad[i];
        }
      }
    });
  }
  return Tensor::from_node(std::move(result));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto& an = checked(a, "mul");
  const auto& bn = checked(b, "mul");
  require(an.shape == bn.shape, ErrorCode::Dimension, "mul " + shape_string(an.shape) + " * " + shape_string(bn.shape));
  std::vector<float> out(an.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = an.data[i] * bn.data[i];
  auto result = make_result(an.shape, std::move(out));
  if (needs_graph({&a, &b})) {
    attach(result, {&a, &b}, [](detail::Node& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      // Same node on both sides (x * x) accumulates twice, which is correct.
      if (auto* ga = grad_sink(pa)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * pb.data[i];
      }
      if (auto* gb = grad_sink(pb)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*gb)[i] += self.grad[i] * pa.data[i];
      }
    });
  }
  return Tensor::from_node(std::move(result));
}

Tensor scale(const Tensor& x, float factor) {
  const auto& xn = checked(x, "scale");
  std::vector<float> out(xn.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xn.data[i] * factor;
  auto result = make_result(xn.shape, std::move(out));
  if (needs_graph({&x})) {
    attach(result, {&x}, [factor](detail::Node& self) {
      if (auto* gx = grad_sink(*self.parents[0])) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i] * factor;
      }
    });
  }
  return Tensor::from_node(std::move(result));
}

Tensor relu(const Tensor& x) {
  const auto& xn = checked(x, "relu");
  std::vector<float> out(xn.data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xn.data[i] > 0.0f ? xn.data[i] : 0.0f;
  auto result = make_result(xn.shape, std::move(out));
  if (needs_graph({&x})) {
    attach(result, {&x}, [](detail::Node& self) {
      auto& px = *self.parents[0];
      if (auto* gx = grad_sink(px)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          if (px.data[i] > 0.0f) (*gx)[i] += self.grad[i];
        }
      }
    });
  }
  return Tensor::from_node(std::move(result));
}

Tensor sum(const Tensor& x) {
  const auto& xn = checked(x, "sum");
  double acc = 0.0;
  for (float v : xn.data) acc += v;
  auto result = make_result({1}, {static_cast<float>(acc)});
  if (needs_graph({&x})) {
    attach(result, {&x}, [](detail::Node& self) {
      if (auto* gx = grad_sink(*self.parents[0])) {
        for (float& g : *gx) g += self.grad[0];
      }
    });
  }
  return Tensor::from_node(std::move(result));
}

Tensor reshape(const Tensor& x, Shape shape) {
  const auto& xn = checked(x, "reshape");
  require(numel(shape) == xn.data.size(), ErrorCode::Dimension,
          "reshape " + shape_string(xn.shape) + " -> " + shape_string(shape));
  auto result = make_result(std::move(shape), xn.data);
  if (needs_graph({&x})) {
    attach(result, {&x}, [](detail::Node& self) {
      if (auto* gx = grad_sink(*self.parents[0])) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
      }
    });
  }
  return Tensor::from_node(std::move(result));
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const auto& xn = checked(x, "conv2d");
  const auto& wn = checked(weight, "conv2d");
  const auto& bn = checked(bias, "conv2d");
  require(xn.shape.size() == 4 && wn.shape.size() == 4 && bn.shape.size() == 1, ErrorCode::Dimension,
          "conv2d expects x[B,C,H,W], w[O,C,K,K], b[O]");
  const std::size_t B = xn.shape[0], C = xn.shape[1], H = xn.shape[2], W = xn.shape[3];
  const std::size_t O = wn.shape[0], K = wn.shape[2];
  require(wn.shape[1] == C && wn.shape[3] == K && K % 2 == 1 && bn.shape[0] == O, ErrorCode::Dimension,
          "conv2d weight " + shape_string(wn.shape) + " incompatible with input " + shape_string(xn.shape));
  const long pad = static_cast<long>(K / 2);
  const long h_ext = static_cast<long>(H), w_ext = static_cast<long>(W);

  std::vector<float> out(B * O * H * W, 0.0f);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < O; ++o) {
      float* plane = &out[(b * O + o) * H * W];
      std::fill(plane, plane + H * W, bn.data[o]);
      for (std::size_t c = 0; c < C; ++c) {
        const float* in = &xn.data[(b * C + c) * H * W];
        const float* ker = &wn.data[(o * C + c) * K * K];
        for (std::size_t ky = 0; ky < K; ++ky) {
          for (std::size_t kx = 0; kx < K; ++kx) {
            const float kv = ker[ky * K + kx];
            const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
            for (long y = std::max(0L, -dy); y < std::min(h_ext, h_ext - dy); ++y) {
              const float* in_row = in + (y + dy) * w_ext;
              float* out_row = plane + y * w_ext;
              for (long xx = std::max(0L, -dx); xx < std::min(w_ext, w_ext - dx); ++xx) {
                out_row[xx] += kv * in_row[xx + dx];
              }
            }
          }
        }
      }
    }
  }
  auto result = make_result({B, O, H, W}, std::move(out));
  if (needs_graph({&x, &weight, &bias})) {
    attach(result, {&x, &weight, &bias}, [=](detail::Node& self) {
      auto& px = *self.parents[0];
      auto& pw = *self.parents[1];
      auto* gx = grad_sink(px);
      auto* gw = grad_sink(pw);
      auto* gb = grad_sink(*self.parents[2]);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t o = 0; o < O; ++o) {
          const float* gplane = &self.grad[(b * O + o) * H * W];
          if (gb) {
            float acc = 0.0f;
            for (std::size_t i = 0; i < H * W; ++i) acc += gplane[i];
            (*gb)[o] += acc;
          }
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t in_off = (b * C + c) * H * W;
            const std::size_t k_off = (o * C + c) * K * K;
            for (std::size_t ky = 0; ky < K; ++ky) {
              for (std::size_t kx = 0; kx < K; ++kx) {
                const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
                const float kv = pw.data[k_off + ky * K + kx];
                float wacc = 0.0f;
                for (long y = std::max(0L, -dy); y < std::min(h_ext, h_ext - dy); ++y) {
                  const float* g_row = gplane + y * w_ext;
                  const std::size_t in_row = in_off + static_cast<std::size_t>((y + dy) * w_ext);
                  for (long xx = std::max(0L, -dx); xx < std::min(w_ext, w_ext - dx); ++xx) {
                    const std::size_t idx = in_row + static_cast<std::size_t>(xx + dx);
                    wacc += g_row[xx] * px.data[idx];
                    if (gx) (*gx)[idx] += g_row[xx] * kv;
                  }
                }
                if (gw) (*gw)[k_off + ky * K + kx] += wacc;
              }
            }
          }
        }
      }
    });
  }
  return Tensor::from_node(std::move(result));
}

Tensor max_pool2d(const Tensor& x, std::size_t window) {
  const auto& xn = checked(x, "max_pool2d");
  require(xn.shape.size() == 4, ErrorCode::Dimension, "max_pool2d expects [B,C,H,W]");
  require(window >= 1 && xn.shape[2] >= window && xn.shape[3] >= window, ErrorCode::Dimension,
          "max_pool2d window " + std::to_string(window) + " exceeds " + shape_string(xn.shape));
  const std::size_t B = xn.shape[0], C = xn.shape[1], H = xn.shape[2], W = xn.shape[3];
  const std::size_t OH = H / window, OW = W / window;
  std::vector<float> out(B * C * OH * OW);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const float* in = &xn.data[bc * H * W];
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox) {
        std::size_t best = (oy * window) * W + ox * window;
        for (std::size_t ky = 0; ky < window; ++ky) {
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t idx = (oy * window + ky) * W + ox * window + kx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const std::size_t o = bc * OH * OW + oy * OW + ox;
        out[o] = in[best];
        argmax[o] = bc * H * W + best;
      }
    }
  }
  auto result = make_result({B, C, OH, OW}, std::move(out));
  if (needs_graph({&x})) {
    attach(result, {&x}, [argmax = std::move(argmax)](detail::Node& self) {
      if (auto* gx = grad_sink(*self.parents[0])) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[argmax[i]] += self.grad[i];
      }
    });
  }
  return Tensor::from_node(std::move(result));
}

std::vector<double> softmax(std::span<const float> row) {
  std::vector<double> p(row.size());
  if (row.empty()) return p;
  const double mx = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    p[i] = std::exp(static_cast<double>(row[i]) - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, std::span<const std::uint8_t> class_mask) {
  const auto& ln = checked(logits, "softmax_cross_entropy");
  require(ln.shape.size() == 2, ErrorCode::Dimension, "cross entropy expects [B x C] logits, got " + shape_string(ln.shape));
  const std::size_t B = ln.shape[0], C = ln.shape[1];
  require(labels.size() == B, ErrorCode::Dimension,
          "cross entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(B));
  require(class_mask.empty() || class_mask.size() == C, ErrorCode::Dimension, "class mask length does not match logits");
  require(all_finite(ln.data), ErrorCode::Numeric, "cross entropy on non-finite logits");
  auto enabled = [&](std::size_t c) { return class_mask.empty() || class_mask[c] != 0; };

  // Per-row softmax over enabled classes, kept for the backward pass.
  std::vector<double> probs(B * C, 0.0);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const int y = labels[b];
    require(y >= 0 && static_cast<std::size_t>(y) < C, ErrorCode::LabelRange,
            "label " + std::to_string(y) + " not in [0," + std::to_string(C) + ")");
    require(enabled(static_cast<std::size_t>(y)), ErrorCode::MaskedLabel,
            "label " + std::to_string(y) + " belongs to a masked class");
    const float* row = &ln.data[b * C];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) {
      if (enabled(c)) mx = std::max(mx, static_cast<double>(row[c]));
    }
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      if (!enabled(c)) continue;
      probs[b * C + c] = std::exp(static_cast<double>(row[c]) - mx);
      z += probs[b * C + c];
    }
    for (std::size_t c = 0; c < C; ++c) probs[b * C + c] /= z;
    total += (mx + std::log(z)) - static_cast<double>(row[static_cast<std::size_t>(y)]);
  }
  auto result = make_result({1}, {static_cast<float>(total / static_cast<double>(B))});
  if (needs_graph({&logits})) {
    std::vector<int> label_copy(labels.begin(), labels.end());
    attach(result, {&logits}, [B, C, probs = std::move(probs), label_copy = std::move(label_copy)](detail::Node& self) {
      if (auto* gl = grad_sink(*self.parents[0])) {
        const double g = static_cast<double>(self.grad[0]) / static_cast<double>(B);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t c = 0; c < C; ++c) {
            double d = probs[b * C + c];
            if (static_cast<int>(c) == label_copy[b]) d -= 1.0;
            (*gl)[b * C + c] += static_cast<float>(g * d);
          }
        }
      }
    });
  }
  return Tensor::from_node(std::move(result));
}

Tensor mse_logits(const Tensor& logits, const Tensor& stored) {
  const auto& ln = checked(logits, "mse_logits");
  const auto& sn = checked(stored, "mse_logits");
  require(ln.shape == sn.shape, ErrorCode::Dimension,
          "mse_logits " + shape_string(ln.shape) + " vs " + shape_string(sn.shape));
  double acc = 0.0;
  for (std::size_t i = 0; i < ln.data.size(); ++i) {
    const double d = static_cast<double>(ln.data[i]) - sn.data[i];
    acc += d * d;
  }
  const double n = static_cast<double>(ln.data.size());
  auto result = make_result({1}, {static_cast<float>(acc / n)});
  if (needs_graph({&logits})) {
    attach(result, {&logits, &stored}, [n](detail::Node& self) {
      auto& pl = *self.parents[0];
      const auto& ps = *self.parents[1];
      if (auto* gl = grad_sink(pl)) {
        const double g = 2.0 * static_cast<double>(self.grad[0]) / n;
        for (std::size_t i = 0; i < pl.data.size(); ++i) {
          (*gl)[i] += static_cast<float>(g * (static_cast<double>(pl.data[i]) - ps.data[i]));
        }
      }
    });
  }
  return Tensor::from_node(std::move(result));
}

void backward(const Tensor& loss) {
  const auto& ln = checked(loss, "backward");
  require(ln.data.size() == 1, ErrorCode::NotScalar, "backward on " + shape_string(ln.shape));
  if (!ln.requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients are per-call; only leaves accumulate across calls.
  for (detail::Node* node : order) {
    if (node->backward) node->grad.assign(node->data.size(), 0.0f);
  }
  auto& root = *loss.node();
  if (root.grad.empty()) root.grad.assign(1, 0.0f);
  root.grad[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

}  // namespace wscl
