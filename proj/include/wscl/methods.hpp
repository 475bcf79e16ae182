#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wscl/tensor.hpp"

namespace wscl {

enum class MethodKind { Er, DerPP, ErAce };

std::string to_string(MethodKind kind);
MethodKind method_kind_from_string(const std::string& name);

struct MethodSpec {
  MethodKind kind = MethodKind::Er;
  /// DER++ weight of the logit-matching term.
  float alpha_logits = 0.5f;
  /// DER++ weight of the replay cross-entropy term.
  float beta_replay = 0.5f;

  void validate() const;
};

struct ReplayBatch {
  Tensor logits;
  std::vector<int> labels;
  /// Logits recorded when the items were stored; required by DER++.
  std::optional<Tensor> stored_logits;
};

/// Everything a rehearsal loss needs for one optimization step.
struct BatchContext {
  Tensor stream_logits;
  std::vector<int> stream_labels;
  /// Output indices of the current task's classes.
  std::vector<int> current_classes;
  /// 1 for every class seen so far in the stream (current task included).
  ClassMask seen_classes;
  std::optional<ReplayBatch> replay;
  /// Multiplies every replay term (alpha of the wake and NREM losses).
  float replay_weight = 1.0f;
};

/// ER:     CE(stream) + w * CE(replay)
/// DER++:  CE(stream) + w * (alpha * MSE(replay, stored) + beta * CE(replay))
/// ER-ACE: CE(stream | batch classes + current task) + w * CE(replay)
/// Cross-entropies without an explicit restriction run over seen classes.
Tensor method_loss(const MethodSpec& spec, const BatchContext& ctx);

/// Mask of the classes ER-ACE keeps for the stream term.
ClassMask erace_stream_mask(std::size_t num_classes, std::span<const int> stream_labels,
                            std::span<const int> current_classes);

}  // namespace wscl
