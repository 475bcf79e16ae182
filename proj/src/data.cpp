#include "wscl/data.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "wscl/error.hpp"
#include "wscl/rng.hpp"

namespace wscl {

std::span<const float> LabeledDataset::sample(std::size_t i) const {
  const std::size_t n = sample_size();
  return std::span<const float>(features).subspan(i * n, n);
}

void LabeledDataset::refresh_class_set() {
  std::set<int> unique(labels.begin(), labels.end());
  class_set.assign(unique.begin(), unique.end());
}

void LabeledDataset::validate() const {
  if (labels.empty()) throw Error(ErrorCode::InvalidData, "dataset '" + name + "' is empty");
  if (sample_shape.empty() || sample_size() == 0) throw Error(ErrorCode::InvalidData, "dataset has no sample shape");
  if (features.size() != labels.size() * sample_size()) {
    throw Error(ErrorCode::InvalidData, "feature count does not match N * prod(sample_shape)");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw Error(ErrorCode::LabelRange,
                  "label " + std::to_string(y) + " outside declared " + std::to_string(num_classes) + " classes");
    }
  }
  for (float v : features) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw Error(ErrorCode::InvalidData, "feature value outside [0,1] in dataset '" + name + "'");
    }
  }
  std::set<int> unique(labels.begin(), labels.end());
  if (!std::equal(unique.begin(), unique.end(), class_set.begin(), class_set.end())) {
    throw Error(ErrorCode::InvalidData, "class_set does not match labels");
  }
}

LabeledDataset subset(const LabeledDataset& source, std::span<const std::size_t> indices) {
  LabeledDataset out;
  out.name = source.name;
  out.sample_shape = source.sample_shape;
  out.num_classes = source.num_classes;
  const std::size_t n = source.sample_size();
  out.features.reserve(indices.size() * n);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    auto s = source.sample(i);
    out.features.insert(out.features.end(), s.begin(), s.end());
    out.labels.push_back(source.labels[i]);
  }
  out.refresh_class_set();
  return out;
}

LabeledDataset remap_labels(const LabeledDataset& source, const std::map<int, int>& map, std::size_t num_outputs) {
  LabeledDataset out = source;
  out.num_classes = num_outputs;
  for (int& y : out.labels) {
    auto it = map.find(y);
    if (it == map.end()) throw Error(ErrorCode::LabelRange, "label " + std::to_string(y) + " has no output index");
    y = it->second;
  }
  out.refresh_class_set();
  return out;
}

Tensor gather_batch(const LabeledDataset& source, std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error(ErrorCode::EmptyInput, "empty batch");
  const std::size_t n = source.sample_size();
  std::vector<float> values;
  values.reserve(indices.size() * n);
  for (std::size_t i : indices) {
    auto s = source.sample(i);
    values.insert(values.end(), s.begin(), s.end());
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), source.sample_shape.begin(), source.sample_shape.end());
  return Tensor(std::move(shape), std::move(values));
}

std::vector<int> TaskStream::task_outputs(std::size_t t) const {
  std::vector<int> out;
  for (int c : tasks.at(t).class_set) out.push_back(global_class_map.at(c));
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> TaskStream::all_classes() const {
  std::vector<int> out;
  for (const auto& [label, index] : global_class_map) out.push_back(label);
  return out;
}

TaskStream split_class_incremental(const LabeledDataset& train, const LabeledDataset& test, std::size_t num_tasks,
                                   std::uint64_t seed) {
  if (num_tasks == 0) throw Error(ErrorCode::InvalidArgument, "stream needs at least one task");
  const std::vector<int>& classes = train.class_set;
  if (classes.empty() || classes.size() % num_tasks != 0) {
    throw Error(ErrorCode::InvalidArgument, std::to_string(classes.size()) + " classes cannot be split into " +
                                                std::to_string(num_tasks) + " equal tasks");
  }
  for (int c : test.class_set) {
    if (!std::binary_search(classes.begin(), classes.end(), c)) {
      throw Error(ErrorCode::InvalidData, "test class " + std::to_string(c) + " absent from training data");
    }
  }
  std::vector<int> order = classes;
  if (num_tasks > 1) {
    Rng rng(seed, "split.class_order");
    rng.shuffle(std::span<int>(order));
  }
  const std::size_t per_task = classes.size() / num_tasks;

  TaskStream stream;
  for (std::size_t t = 0; t < num_tasks; ++t) {
    std::set<int> group(order.begin() + static_cast<long>(t * per_task),
                        order.begin() + static_cast<long>((t + 1) * per_task));
    int next = static_cast<int>(stream.global_class_map.size());
    for (int c : group) stream.global_class_map[c] = next++;
    auto pick = [&](const LabeledDataset& ds) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < ds.size(); ++i) {
        if (group.count(ds.labels[i])) idx.push_back(i);
      }
      return subset(ds, idx);
    };
    stream.tasks.push_back(pick(train));
    stream.test_tasks.push_back(pick(test));
    stream.tasks.back().name = train.name + (num_tasks > 1 ? "/task" + std::to_string(t + 1) : "");
    stream.test_tasks.back().name = test.name + (num_tasks > 1 ? "/task" + std::to_string(t + 1) : "");
  }
  return stream;
}

std::map<int, int> DreamSource::class_map() const {
  std::map<int, int> out;
  int next = 0;
  for (int c : dataset.class_set) out[c] = next++;
  return out;
}

void check_disjoint(const TaskStream& stream, const DreamSource& dream) {
  for (int c : dream.dataset.class_set) {
    if (stream.global_class_map.count(c)) {
      throw Error(ErrorCode::Disjointness, "dream class " + std::to_string(c) + " is also a task class");
    }
  }
}

DreamSource corrupt(const DreamSource& source, std::uint64_t seed) {
  if (!(source.noise_pct >= 0.0 && source.noise_pct <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "noise_pct must lie in [0,1]");
  }
  if (source.downscale_factor < 1) throw Error(ErrorCode::InvalidArgument, "downscale factor must be >= 1");
  DreamSource out = source;
  LabeledDataset& ds = out.dataset;
  const Shape& shape = ds.sample_shape;
  const std::size_t factor = source.downscale_factor;
  if (factor > 1) {
    if (shape.size() < 2) throw Error(ErrorCode::InvalidArgument, "downscaling needs image-shaped samples");
    const std::size_t h = shape[shape.size() - 2], w = shape[shape.size() - 1];
    if (factor > h || factor > w) {
      throw Error(ErrorCode::InvalidArgument,
                  "downscale factor " + std::to_string(factor) + " exceeds image side " + std::to_string(std::min(h, w)));
    }
  }

  if (source.noise_pct > 0.0) {
    double mean = 0.0, sq = 0.0;
    for (float v : ds.features) mean += v;
    mean /= static_cast<double>(ds.features.size());
    for (float v : ds.features) sq += (v - mean) * (v - mean);
    const double sigma = std::sqrt(sq / static_cast<double>(ds.features.size()));
    const double amplitude = source.noise_pct * sigma;
    Rng rng(seed, "corrupt.noise");
    for (float& v : ds.features) {
      v = static_cast<float>(std::clamp(static_cast<double>(v) + amplitude * rng.normal(), 0.0, 1.0));
    }
  }

  if (factor > 1) {
    const std::size_t h = shape[shape.size() - 2], w = shape[shape.size() - 1];
    const std::size_t planes = ds.features.size() / (h * w);
    for (std::size_t p = 0; p < planes; ++p) {
      float* img = &ds.features[p * h * w];
      for (std::size_t by = 0; by < h; by += factor) {
        for (std::size_t bx = 0; bx < w; bx += factor) {
          const std::size_t ey = std::min(h, by + factor), ex = std::min(w, bx + factor);
          double acc = 0.0;
          for (std::size_t y = by; y < ey; ++y) {
            for (std::size_t x = bx; x < ex; ++x) acc += img[y * w + x];
          }
          const float avg = static_cast<float>(acc / static_cast<double>((ey - by) * (ex - bx)));
          for (std::size_t y = by; y < ey; ++y) {
            for (std::size_t x = bx; x < ex; ++x) img[y * w + x] = avg;
          }
        }
      }
    }
  }
  return out;
}

DreamSource subsample_fraction(const DreamSource& source, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(ErrorCode::InvalidArgument, "fraction must lie in (0,1]");
  const LabeledDataset& ds = source.dataset;
  const std::size_t n = ds.size();
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  if (keep == 0) throw Error(ErrorCode::EmptyInput, "subsampling leaves no samples");
  DreamSource out = source;
  out.fraction = source.fraction * fraction;
  if (keep >= n) return out;

  Rng rng(seed, "subsample");
  std::vector<std::uint8_t> chosen(n, 0);
  std::size_t taken = 0;
  if (keep >= ds.class_set.size()) {
    // One random representative per class first.
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[ds.labels[i]].push_back(i);
    for (auto& [label, members] : by_class) {
      chosen[members[rng.below(members.size())]] = 1;
      ++taken;
    }
  }
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < n; ++i) {
    if (!chosen[i]) rest.push_back(i);
  }
  // Partial Fisher-Yates over the remaining indices.
  for (std::size_t i = 0; taken < keep; ++i, ++taken) {
    std::swap(rest[i], rest[i + rng.below(rest.size() - i)]);
    chosen[rest[i]] = 1;
  }
  std::vector<std::size_t> indices;
  for (std::size_t i = 0; i < n; ++i) {
    if (chosen[i]) indices.push_back(i);
  }
  out.dataset = subset(ds, indices);
  return out;
}

}  // namespace wscl
