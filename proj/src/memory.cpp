#include "wscl/memory.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "wscl/error.hpp"

namespace wscl {

ShortTermMemory fill_short_term(const LabeledDataset& task_data, int task_id, std::size_t capacity, Rng& rng) {
  if (capacity < 1) throw Error(ErrorCode::InvalidArgument, "short-term capacity must be >= 1");
  if (task_data.size() == 0) throw Error(ErrorCode::EmptyInput, "cannot fill short-term memory from empty task data");
  ShortTermMemory stm;
  stm.capacity = capacity;
  stm.task_id = task_id;
  const auto picks = sample_indices(task_data.size(), std::min(capacity, task_data.size()), rng);
  stm.items.reserve(picks.size());
  for (std::size_t i : picks) {
    auto s = task_data.sample(i);
    stm.items.push_back(MemoryItem{{s.begin(), s.end()}, task_data.labels[i], task_id, {}});
  }
  return stm;
}

bool reservoir_insert(LongTermMemory& ltm, MemoryItem item, Rng& rng) {
  ++ltm.seen_count;
  if (ltm.capacity == 0) return false;
  if (ltm.items.size() < ltm.capacity) {
    ltm.items.push_back(std::move(item));
    return true;
  }
  const std::uint64_t slot = rng.below(ltm.seen_count);
  if (slot < ltm.capacity) {
    ltm.items[slot] = std::move(item);
    return true;
  }
  return false;
}

LtmPartition partition_ltm(const LongTermMemory& ltm, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw Error(ErrorCode::InvalidArgument, "partition ratio must lie in [0,1]");
  LtmPartition part;
  const std::size_t n = ltm.items.size();
  if (n == 0) return part;
  auto wake_size = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  wake_size = std::clamp<std::size_t>(wake_size, 1, n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  for (std::size_t r = 0; r < n; ++r) {
    if (r < wake_size) {
      part.wake_view.push_back(ltm.items[order[r]]);
      part.wake_slots.push_back(order[r]);
    } else {
      part.sleep_view.push_back(ltm.items[order[r]]);
    }
  }
  return part;
}

std::vector<std::size_t> sample_indices(std::size_t view_size, std::size_t k, Rng& rng) {
  if (view_size == 0) throw Error(ErrorCode::EmptyInput, "cannot sample from an empty view");
  std::vector<std::size_t> out;
  out.reserve(k);
  if (k > view_size) {
    for (std::size_t i = 0; i < k; ++i) out.push_back(rng.below(view_size));
    return out;
  }
  std::vector<std::size_t> pool(view_size);
  for (std::size_t i = 0; i < view_size; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(pool[i], pool[i + rng.below(view_size - i)]);
    out.push_back(pool[i]);
  }
  return out;
}

std::vector<MemoryItem> sample_batch(std::span<const MemoryItem> view, std::size_t k, Rng& rng) {
  std::vector<MemoryItem> out;
  for (std::size_t i : sample_indices(view.size(), k, rng)) out.push_back(view[i]);
  return out;
}

Tensor stack_features(std::span<const MemoryItem> items, std::span<const std::size_t> indices, const Shape& sample_shape) {
  if (indices.empty()) throw Error(ErrorCode::EmptyInput, "empty memory batch");
  const std::size_t n = numel(sample_shape);
  std::vector<float> values;
  values.reserve(indices.size() * n);
  for (std::size_t i : indices) {
    const auto& f = items[i].features;
    if (f.size() != n) throw Error(ErrorCode::Dimension, "memory item does not match sample shape");
    values.insert(values.end(), f.begin(), f.end());
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  return Tensor(std::move(shape), std::move(values));
}

void save_memory(std::span<const MemoryItem> items, const Shape& sample_shape, std::size_t num_classes,
                 const std::filesystem::path& path) {
  LabeledDataset ds;
  ds.name = path.stem().string();
  ds.sample_shape = sample_shape;
  ds.num_classes = num_classes;
  std::vector<float> logits;
  for (const auto& item : items) {
    ds.features.insert(ds.features.end(), item.features.begin(), item.features.end());
    ds.labels.push_back(item.label);
    if (item.stored_logits.empty()) {
      logits.insert(logits.end(), num_classes, 0.0f);
    } else {
      if (item.stored_logits.size() != num_classes) throw Error(ErrorCode::Dimension, "stored logits length mismatch");
      logits.insert(logits.end(), item.stored_logits.begin(), item.stored_logits.end());
    }
  }
  ds.refresh_class_set();
  save_dataset(ds, path);
  std::ofstream side(path.string() + ".logits", std::ios::binary | std::ios::trunc);
  if (!side) throw Error(ErrorCode::Io, "cannot write logits sidecar for " + path.string());
  for (float f : logits) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int i = 0; i < 4; ++i) side.put(static_cast<char>(bits >> (8 * i)));
  }
}

std::vector<MemoryItem> load_memory(const std::filesystem::path& path) {
  const LabeledDataset ds = load_dataset(path);
  std::ifstream side(path.string() + ".logits", std::ios::binary);
  if (!side) throw Error(ErrorCode::Io, "missing logits sidecar for " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(side)), std::istreambuf_iterator<char>());
  const std::size_t c = ds.num_classes;
  if (bytes.size() != ds.size() * c * 4) throw Error(ErrorCode::Truncated, "logits sidecar size mismatch");
  std::vector<MemoryItem> items;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    MemoryItem item;
    auto s = ds.sample(i);
    item.features.assign(s.begin(), s.end());
    item.label = ds.labels[i];
    item.stored_logits.resize(c);
    bool any = false;
    for (std::size_t j = 0; j < c; ++j) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[(i * c + j) * 4 + b]) << (8 * b);
      std::memcpy(&item.stored_logits[j], &bits, 4);
      any = any || bits != 0;
    }
    if (!any) item.stored_logits.clear();
    items.push_back(std::move(item));
  }
  return items;
}

}  // namespace wscl
