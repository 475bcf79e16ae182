#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wscl/optim.hpp"
#include "wscl/tensor.hpp"

namespace wscl {

enum class ArchKind { Mlp, Cnn };

std::string to_string(ArchKind kind);
ArchKind arch_kind_from_string(const std::string& name);

struct ArchConfig {
  ArchKind kind = ArchKind::Mlp;
  /// Hidden width (MLP) or channel count (CNN) of each trunk block; its
  /// length is the number of blocks L.
  std::vector<std::size_t> widths{64, 64, 64, 64};
  /// Per-sample input shape, e.g. {64} or {1, 8, 8}. CNNs need [C, H, W].
  Shape input_spec{1, 8, 8};
  std::size_t num_classes = 10;
  std::size_t kernel = 3;

  std::size_t blocks() const noexcept { return widths.size(); }
  void validate() const;
};

/// Prefix freezing mask: blocks 1..depth are frozen.
struct FreezeMask {
  std::size_t depth = 0;
  int task_index = -1;

  bool freezes(std::size_t block) const noexcept { return block >= 1 && block <= depth; }
  friend bool operator==(const FreezeMask&, const FreezeMask&) = default;
};

/// Candidate masks for the next task given the previous depth j: every
/// prefix depth in {j, ..., L}, i.e. L - j + 1 masks. Each is the OR of a
/// fresh prefix with the previous mask, so previously frozen blocks stay
/// frozen.
std::vector<FreezeMask> mask_candidates(std::size_t prev_depth, std::size_t num_blocks, int task_index = -1);

enum class HeadSelector { Cl, Dream };

/// Block-ordered classifier l_1 o ... o l_L followed by a linear head over
/// the continual-learning classes and, optionally, a second linear head over
/// the auxiliary (dream) classes sharing the same trunk.
///
/// Copies are deep: a copied classifier owns independent parameters.
class LayeredClassifier {
public:
  LayeredClassifier(const ArchConfig& arch, std::uint64_t seed);

  LayeredClassifier(const LayeredClassifier& other);
  LayeredClassifier& operator=(const LayeredClassifier& other);
  LayeredClassifier(LayeredClassifier&&) noexcept = default;
  LayeredClassifier& operator=(LayeredClassifier&&) noexcept = default;

  const ArchConfig& arch() const noexcept { return arch_; }
  std::size_t num_blocks() const noexcept { return blocks_.size(); }
  std::size_t feature_dim() const noexcept { return feature_dim_; }

  std::vector<ParamGroup>& blocks() noexcept { return blocks_; }
  const std::vector<ParamGroup>& blocks() const noexcept { return blocks_; }
  ParamGroup& cl_head() noexcept { return cl_head_; }
  const ParamGroup& cl_head() const noexcept { return cl_head_; }
  bool has_dream_head() const noexcept { return dream_head_.has_value(); }
  ParamGroup& dream_head();
  const ParamGroup& dream_head() const;
  std::size_t num_outputs(HeadSelector head) const;

  /// Attaches the auxiliary head. Fails if one already exists or fewer than
  /// two classes are requested.
  void extend_head(std::size_t num_dream_classes, std::uint64_t seed);

  /// Penultimate representation [B x feature_dim].
  Tensor features(const Tensor& batch) const;
  /// Logits [B x C] over the selected head's classes.
  Tensor forward(const Tensor& batch, HeadSelector head) const;
  Tensor head_logits(const Tensor& features, HeadSelector head) const;

  const FreezeMask& mask() const noexcept { return mask_; }
  /// Freezes blocks 1..depth and unfreezes the rest; heads always stay
  /// trainable. Does not change any forward output.
  void apply_mask(const FreezeMask& mask);

  /// Trunk blocks plus the selected head, in block order.
  std::vector<ParamGroup*> param_groups(HeadSelector head);
  std::size_t trainable_scalars(HeadSelector head) const;
  std::size_t total_scalars() const;
  void zero_grad();

  /// Raw bytes of the parameters of blocks [first, last] (1-based).
  std::vector<std::uint8_t> block_bytes(std::size_t first, std::size_t last) const;
  std::vector<std::uint8_t> head_bytes(HeadSelector head) const;
  /// FNV-1a digest over every parameter byte.
  std::uint64_t digest() const;

private:
  void deep_copy_from(const LayeredClassifier& other);

  ArchConfig arch_;
  std::vector<ParamGroup> blocks_;
  ParamGroup cl_head_;
  std::optional<ParamGroup> dream_head_;
  std::size_t feature_dim_ = 0;
  FreezeMask mask_;
};

inline LayeredClassifier build_model(const ArchConfig& arch, std::uint64_t seed) { return LayeredClassifier(arch, seed); }

}  // namespace wscl
