#include "wscl/optim.hpp"

#include <cmath>
#include <string>

#include "wscl/error.hpp"

namespace wscl {

std::size_t ParamGroup::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.numel();
  return n;
}

void ParamGroup::zero_grad() {
  for (auto& t : tensors) {
    if (t.requires_grad()) t.zero_grad();
  }
}

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0f) || !std::isfinite(learning_rate)) {
    throw Error(ErrorCode::InvalidArgument, "learning rate must be positive, got " + std::to_string(learning_rate));
  }
  if (!(momentum >= 0.0f) || !std::isfinite(momentum)) {
    throw Error(ErrorCode::InvalidArgument, "momentum must be non-negative");
  }
}

namespace {

void check_gradient(const ParamGroup& group, const Tensor& t, std::size_t index) {
  if (!t.has_grad()) {
    throw Error(ErrorCode::MissingGradient,
                "group " + std::to_string(group.id) + " tensor " + std::to_string(index) + " has no gradient");
  }
  if (!all_finite(t.grad())) {
    throw Error(ErrorCode::Numeric, "non-finite gradient in group " + std::to_string(group.id));
  }
}

}  // namespace

UpdateCount sgd_step(std::span<ParamGroup* const> groups, const SgdConfig& cfg) {
  cfg.validate();
  if (cfg.momentum != 0.0f) {
    throw Error(ErrorCode::InvalidArgument, "sgd_step is stateless; use Sgd for momentum");
  }
  Sgd opt(cfg);
  return opt.step(groups);
}

Sgd::Sgd(SgdConfig cfg) : cfg_(cfg) { cfg_.validate(); }

UpdateCount Sgd::step(std::span<ParamGroup* const> groups) {
  // Validate everything first so a failing step leaves parameters untouched.
  for (const ParamGroup* group : groups) {
    if (group->frozen) continue;
    for (std::size_t i = 0; i < group->tensors.size(); ++i) check_gradient(*group, group->tensors[i], i);
  }
  UpdateCount updated = 0;
  const float lr = cfg_.learning_rate;
  for (ParamGroup* group : groups) {
    if (group->frozen) continue;
    for (auto& t : group->tensors) {
      auto values = t.mutable_data();
      auto grad = t.grad();
      if (cfg_.momentum == 0.0f) {
        for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr * grad[i];
      } else {
        auto& v = velocity_[t.id()];
        if (v.empty()) v.assign(values.size(), 0.0f);
        for (std::size_t i = 0; i < values.size(); ++i) {
          v[i] = cfg_.momentum * v[i] + grad[i];
          values[i] -= lr * v[i];
        }
      }
      updated += values.size();
    }
  }
  return updated;
}

}  // namespace wscl
