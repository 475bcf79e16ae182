#include "wscl/methods.hpp"

#include <cmath>

#include "wscl/error.hpp"

namespace wscl {

std::string to_string(MethodKind kind) {
  switch (kind) {
    case MethodKind::Er: return "er";
    case MethodKind::DerPP: return "derpp";
    case MethodKind::ErAce: return "erace";
  }
  return "er";
}

MethodKind method_kind_from_string(const std::string& name) {
  if (name == "er") return MethodKind::Er;
  if (name == "derpp" || name == "der++") return MethodKind::DerPP;
  if (name == "erace" || name == "er-ace") return MethodKind::ErAce;
  throw Error(ErrorCode::Config, "unknown method '" + name + "'");
}

void MethodSpec::validate() const {
  if (!(alpha_logits >= 0.0f) || !(beta_replay >= 0.0f) || !std::isfinite(alpha_logits) || !std::isfinite(beta_replay)) {
    throw Error(ErrorCode::InvalidArgument, "method weights must be finite and non-negative");
  }
}

ClassMask erace_stream_mask(std::size_t num_classes, std::span<const int> stream_labels,
                            std::span<const int> current_classes) {
  ClassMask mask(num_classes, 0);
  auto enable = [&](int c) {
    if (c < 0 || static_cast<std::size_t>(c) >= num_classes) {
      throw Error(ErrorCode::LabelRange, "class " + std::to_string(c) + " outside head");
    }
    mask[static_cast<std::size_t>(c)] = 1;
  };
  for (int c : stream_labels) enable(c);
  for (int c : current_classes) enable(c);
  return mask;
}

Tensor method_loss(const MethodSpec& spec, const BatchContext& ctx) {
  spec.validate();
  const std::size_t C = ctx.stream_logits.dim(1);
  bool any_seen = false;
  for (auto s : ctx.seen_classes) any_seen = any_seen || s;
  if (!any_seen) throw Error(ErrorCode::InvalidArgument, "empty seen-class set");
  if (ctx.seen_classes.size() != C) throw Error(ErrorCode::Dimension, "seen-class mask does not match logits");

  Tensor loss;
  if (spec.kind == MethodKind::ErAce) {
    loss = softmax_cross_entropy(ctx.stream_logits, ctx.stream_labels,
                                 erace_stream_mask(C, ctx.stream_labels, ctx.current_classes));
  } else {
    loss = softmax_cross_entropy(ctx.stream_logits, ctx.stream_labels, ctx.seen_classes);
  }

  if (!ctx.replay || ctx.replay_weight == 0.0f) return loss;
  const ReplayBatch& replay = *ctx.replay;
  Tensor replay_ce = softmax_cross_entropy(replay.logits, replay.labels, ctx.seen_classes);
  Tensor replay_term;
  if (spec.kind == MethodKind::DerPP) {
    if (!replay.stored_logits) throw Error(ErrorCode::InvalidArgument, "DER++ replay batch lacks stored logits");
    replay_term = add(scale(mse_logits(replay.logits, *replay.stored_logits), spec.alpha_logits),
                      scale(replay_ce, spec.beta_replay));
  } else {
    replay_term = replay_ce;
  }
  return add(loss, scale(replay_term, ctx.replay_weight));
}

}  // namespace wscl
