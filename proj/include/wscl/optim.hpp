#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "wscl/tensor.hpp"

namespace wscl {

/// Parameters of one network block (or head). A frozen group is never
/// touched by an optimizer step.
struct ParamGroup {
  int id = 0;
  std::vector<Tensor> tensors;
  bool frozen = false;

  std::size_t scalar_count() const;
  void zero_grad();
};

struct SgdConfig {
  float learning_rate = 0.03f;
  float momentum = 0.0f;

  void validate() const;
};

/// Number of scalar parameters written by optimizer steps.
using UpdateCount = std::uint64_t;

/// Plain SGD: theta <- theta - lr * grad on every unfrozen group. Returns the
/// number of scalars updated. Rejects a non-zero momentum (use Sgd instead).
UpdateCount sgd_step(std::span<ParamGroup* const> groups, const SgdConfig& cfg);

/// SGD with optional heavy-ball momentum; velocity buffers are keyed by
/// tensor identity, so one instance must only ever see one model.
class Sgd {
public:
  explicit Sgd(SgdConfig cfg);

  UpdateCount step(std::span<ParamGroup* const> groups);
  const SgdConfig& config() const noexcept { return cfg_; }

private:
  SgdConfig cfg_;
  std::unordered_map<const void*, std::vector<float>> velocity_;
};

}  // namespace wscl
