#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "wscl/data.hpp"
#include "wscl/rng.hpp"

namespace wscl {

/// One stored sample. `label` is an output index of the classifier head.
struct MemoryItem {
  std::vector<float> features;
  int label = 0;
  int task_id = 0;
  /// Logits over all continual-learning classes captured at insertion time
  /// (DER++); empty when not recorded.
  std::vector<float> stored_logits;

  bool operator==(const MemoryItem&) const = default;
};

/// Per-task episodic buffer, rebuilt at the start of every wake phase.
struct ShortTermMemory {
  std::size_t capacity = 5000;
  int task_id = 0;
  std::vector<MemoryItem> items;
};

/// Persistent bounded buffer maintained by reservoir sampling.
struct LongTermMemory {
  std::size_t capacity = 0;
  std::vector<MemoryItem> items;
  std::uint64_t seen_count = 0;
};

/// Disjoint split of the long-term buffer: a small view for the wake loss and
/// the remainder for the sleep (NREM) loss.
struct LtmPartition {
  std::vector<MemoryItem> wake_view;
  std::vector<MemoryItem> sleep_view;
  /// Buffer slots holding the wake view, in wake_view order.
  std::vector<std::size_t> wake_slots;
};

/// min(capacity, N) samples of `task_data` drawn uniformly without
/// replacement; labels are taken as-is.
ShortTermMemory fill_short_term(const LabeledDataset& task_data, int task_id, std::size_t capacity, Rng& rng);

/// Classic reservoir rule: append while below capacity, otherwise replace a
/// uniform slot with probability capacity / seen_count. Returns true when the
/// item was stored.
bool reservoir_insert(LongTermMemory& ltm, MemoryItem item, Rng& rng);

/// Wake view of round(ratio * |items|) items (at least 1 for a non-empty
/// buffer); everything else goes to the sleep view.
LtmPartition partition_ltm(const LongTermMemory& ltm, double ratio, Rng& rng);

/// Indices of k draws from a view of `view_size` items: without replacement
/// when k <= view_size, otherwise uniform with replacement.
std::vector<std::size_t> sample_indices(std::size_t view_size, std::size_t k, Rng& rng);
std::vector<MemoryItem> sample_batch(std::span<const MemoryItem> view, std::size_t k, Rng& rng);

/// Stacks the features of the selected items into a [B, ...sample_shape] tensor.
Tensor stack_features(std::span<const MemoryItem> items, std::span<const std::size_t> indices, const Shape& sample_shape);

/// Writes the buffer as a dataset file at `path` plus a sidecar `path.logits`
/// holding f32 x num_classes per item (zeros when an item has no logits).
void save_memory(std::span<const MemoryItem> items, const Shape& sample_shape, std::size_t num_classes,
                 const std::filesystem::path& path);
std::vector<MemoryItem> load_memory(const std::filesystem::path& path);

}  // namespace wscl
