#include "wscl/model.hpp"

#include <cmath>
#include <cstring>

#include "wscl/error.hpp"
#include "wscl/rng.hpp"

namespace wscl {

namespace {

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<float> values(numel(shape));
  for (float& v : values) v = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor(std::move(shape), std::move(values), true);
}

ParamGroup linear_group(int id, std::size_t in, std::size_t out, Rng& rng) {
  ParamGroup g;
  g.id = id;
  g.tensors.push_back(glorot_uniform({in, out}, in, out, rng));
  g.tensors.push_back(Tensor::zeros({out}, true));
  return g;
}

ParamGroup copy_group(const ParamGroup& src) {
  ParamGroup g;
  g.id = src.id;
  g.frozen = src.frozen;
  for (const auto& t : src.tensors) {
    Tensor c = t.clone();
    c.set_requires_grad(t.requires_grad());
    g.tensors.push_back(std::move(c));
  }
  return g;
}

void append_bytes(std::vector<std::uint8_t>& out, const ParamGroup& g) {
  for (const auto& t : g.tensors) {
    auto d = t.data();
    const auto* p = reinterpret_cast<const std::uint8_t*>(d.data());
    out.insert(out.end(), p, p + d.size_bytes());
  }
}

void check_finite(const Tensor& t, const std::string& where) {
  if (!all_finite(t.data())) throw Error(ErrorCode::Numeric, "non-finite activation in " + where);
}

}  // namespace

std::string to_string(ArchKind kind) { return kind == ArchKind::Mlp ? "mlp" : "cnn"; }

ArchKind arch_kind_from_string(const std::string& name) {
  if (name == "mlp") return ArchKind::Mlp;
  if (name == "cnn") return ArchKind::Cnn;
  throw Error(ErrorCode::Config, "unknown architecture kind '" + name + "'");
}

void ArchConfig::validate() const {
  if (widths.size() < 2) throw Error(ErrorCode::InvalidArgument, "a layered classifier needs at least 2 blocks");
  for (std::size_t w : widths) {
    if (w == 0) throw Error(ErrorCode::InvalidArgument, "block widths must be positive");
  }
  if (input_spec.empty() || numel(input_spec) == 0) throw Error(ErrorCode::InvalidArgument, "empty input spec");
  if (num_classes < 1) throw Error(ErrorCode::InvalidArgument, "classifier needs at least one class");
  if (kind == ArchKind::Cnn) {
    if (input_spec.size() != 3) throw Error(ErrorCode::InvalidArgument, "cnn input spec must be [C,H,W]");
    if (kernel % 2 == 0) throw Error(ErrorCode::InvalidArgument, "cnn kernel must be odd");
  }
}

std::vector<FreezeMask> mask_candidates(std::size_t prev_depth, std::size_t num_blocks, int task_index) {
  if (prev_depth > num_blocks) {
    throw Error(ErrorCode::InvalidArgument,
                "previous depth " + std::to_string(prev_depth) + " exceeds " + std::to_string(num_blocks) + " blocks");
  }
  std::vector<FreezeMask> out;
  out.reserve(num_blocks - prev_depth + 1);
  for (std::size_t l = prev_depth; l <= num_blocks; ++l) {
    // prefix(l) OR prefix(prev_depth) == prefix(max(l, prev_depth)) == prefix(l)
    out.push_back(FreezeMask{std::max(l, prev_depth), task_index});
  }
  return out;
}

LayeredClassifier::LayeredClassifier(const ArchConfig& arch, std::uint64_t seed) : arch_(arch) {
  arch_.validate();
  const std::size_t L = arch_.blocks();
  if (arch_.kind == ArchKind::Mlp) {
    std::size_t in = numel(arch_.input_spec);
    for (std::size_t k = 0; k < L; ++k) {
      Rng rng(seed, "init.block", k + 1);
      blocks_.push_back(linear_group(static_cast<int>(k + 1), in, arch_.widths[k], rng));
      in = arch_.widths[k];
    }
    feature_dim_ = in;
  } else {
    std::size_t channels = arch_.input_spec[0], h = arch_.input_spec[1], w = arch_.input_spec[2];
    const std::size_t K = arch_.kernel;
    for (std::size_t k = 0; k < L; ++k) {
      Rng rng(seed, "init.block", k + 1);
      const std::size_t out = arch_.widths[k];
      ParamGroup g;
      g.id = static_cast<int>(k + 1);
      g.tensors.push_back(glorot_uniform({out, channels, K, K}, channels * K * K, out * K * K, rng));
      g.tensors.push_back(Tensor::zeros({out}, true));
      blocks_.push_back(std::move(g));
      channels = out;
      if (h >= 2 && w >= 2) {
        h /= 2;
        w /= 2;
      }
    }
    feature_dim_ = channels * h * w;
  }
  Rng head_rng(seed, "init.cl_head");
  cl_head_ = linear_group(static_cast<int>(L + 1), feature_dim_, arch_.num_classes, head_rng);
}

LayeredClassifier::LayeredClassifier(const LayeredClassifier& other) { deep_copy_from(other); }

LayeredClassifier& LayeredClassifier::operator=(const LayeredClassifier& other) {
  if (this != &other) deep_copy_from(other);
  return *this;
}

void LayeredClassifier::deep_copy_from(const LayeredClassifier& other) {
  arch_ = other.arch_;
  feature_dim_ = other.feature_dim_;
  mask_ = other.mask_;
  blocks_.clear();
  for (const auto& g : other.blocks_) blocks_.push_back(copy_group(g));
  cl_head_ = copy_group(other.cl_head_);
  dream_head_.reset();
  if (other.dream_head_) dream_head_ = copy_group(*other.dream_head_);
}

ParamGroup& LayeredClassifier::dream_head() {
  if (!dream_head_) throw Error(ErrorCode::State, "model has no dream head");
  return *dream_head_;
}

const ParamGroup& LayeredClassifier::dream_head() const {
  if (!dream_head_) throw Error(ErrorCode::State, "model has no dream head");
  return *dream_head_;
}

std::size_t LayeredClassifier::num_outputs(HeadSelector head) const {
  const ParamGroup& g = head == HeadSelector::Cl ? cl_head_ : dream_head();
  return g.tensors[1].numel();
}

void LayeredClassifier::extend_head(std::size_t num_dream_classes, std::uint64_t seed) {
  if (dream_head_) throw Error(ErrorCode::State, "dream head already attached");
  if (num_dream_classes < 2) throw Error(ErrorCode::InvalidArgument, "dream head needs at least 2 classes");
  Rng rng(seed, "init.dream_head");
  dream_head_ = linear_group(static_cast<int>(blocks_.size() + 2), feature_dim_, num_dream_classes, rng);
}

Tensor LayeredClassifier::features(const Tensor& batch) const {
  const Shape& s = batch.shape();
  if (s.size() < 1) throw Error(ErrorCode::Dimension, "batch has no leading axis");
  const std::size_t B = s[0];
  Shape per_sample(s.begin() + 1, s.end());
  if (numel(per_sample) != numel(arch_.input_spec)) {
    throw Error(ErrorCode::Dimension,
                "batch " + shape_string(s) + " does not match input spec " + shape_string(arch_.input_spec));
  }
  if (arch_.kind == ArchKind::Mlp) {
    Tensor h = reshape(batch, {B, numel(arch_.input_spec)});
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
      const auto& g = blocks_[k];
      h = relu(add_bias(matmul(h, g.tensors[0]), g.tensors[1]));
      check_finite(h, "block " + std::to_string(k + 1));
    }
    return h;
  }
  Shape image{B};
  image.insert(image.end(), arch_.input_spec.begin(), arch_.input_spec.end());
  Tensor h = reshape(batch, image);
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    const auto& g = blocks_[k];
    h = relu(conv2d(h, g.tensors[0], g.tensors[1]));
    if (h.dim(2) >= 2 && h.dim(3) >= 2) h = max_pool2d(h, 2);
    check_finite(h, "block " + std::to_string(k + 1));
  }
  return reshape(h, {B, feature_dim_});
}

Tensor LayeredClassifier::head_logits(const Tensor& feats, HeadSelector head) const {
  const ParamGroup& g = head == HeadSelector::Cl ? cl_head_ : dream_head();
  Tensor logits = add_bias(matmul(feats, g.tensors[0]), g.tensors[1]);
  check_finite(logits, head == HeadSelector::Cl ? "cl head" : "dream head");
  return logits;
}

Tensor LayeredClassifier::forward(const Tensor& batch, HeadSelector head) const {
  if (head == HeadSelector::Dream && !dream_head_) throw Error(ErrorCode::State, "model has no dream head");
  return head_logits(features(batch), head);
}

void LayeredClassifier::apply_mask(const FreezeMask& mask) {
  if (mask.depth > blocks_.size()) {
    throw Error(ErrorCode::InvalidArgument, "mask depth " + std::to_string(mask.depth) + " exceeds block count");
  }
  mask_ = mask;
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    auto& g = blocks_[k];
    g.frozen = mask.freezes(k + 1);
    for (auto& t : g.tensors) t.set_requires_grad(!g.frozen);
  }
}

std::vector<ParamGroup*> LayeredClassifier::param_groups(HeadSelector head) {
  std::vector<ParamGroup*> out;
  for (auto& g : blocks_) out.push_back(&g);
  out.push_back(head == HeadSelector::Cl ? &cl_head_ : &dream_head());
  return out;
}

std::size_t LayeredClassifier::trainable_scalars(HeadSelector head) const {
  std::size_t n = 0;
  for (const auto& g : blocks_) {
    if (!g.frozen) n += g.scalar_count();
  }
  n += (head == HeadSelector::Cl ? cl_head_ : dream_head()).scalar_count();
  return n;
}

std::size_t LayeredClassifier::total_scalars() const {
  std::size_t n = cl_head_.scalar_count();
  for (const auto& g : blocks_) n += g.scalar_count();
  if (dream_head_) n += dream_head_->scalar_count();
  return n;
}

void LayeredClassifier::zero_grad() {
  for (auto& g : blocks_) g.zero_grad();
  cl_head_.zero_grad();
  if (dream_head_) dream_head_->zero_grad();
}

std::vector<std::uint8_t> LayeredClassifier::block_bytes(std::size_t first, std::size_t last) const {
  std::vector<std::uint8_t> out;
  for (std::size_t k = first; k <= last && k <= blocks_.size(); ++k) {
    if (k >= 1) append_bytes(out, blocks_[k - 1]);
  }
  return out;
}

std::vector<std::uint8_t> LayeredClassifier::head_bytes(HeadSelector head) const {
  std::vector<std::uint8_t> out;
  append_bytes(out, head == HeadSelector::Cl ? cl_head_ : dream_head());
  return out;
}

std::uint64_t LayeredClassifier::digest() const {
  std::vector<std::uint8_t> bytes = block_bytes(1, blocks_.size());
  append_bytes(bytes, cl_head_);
  if (dream_head_) append_bytes(bytes, *dream_head_);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace wscl
