#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "wscl/tensor.hpp"

namespace wscl {

/// N samples of a fixed shape with integer class labels. Feature values live
/// in [0, 1].
struct LabeledDataset {
  std::string name;
  Shape sample_shape;
  /// Size of the declared label space; every label is below it.
  std::size_t num_classes = 0;
  std::vector<float> features;
  std::vector<int> labels;
  /// Sorted unique labels actually present.
  std::vector<int> class_set;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t sample_size() const noexcept { return numel(sample_shape); }
  std::span<const float> sample(std::size_t i) const;

  void refresh_class_set();
  /// Throws InvalidData / LabelRange when an invariant does not hold.
  void validate() const;
  bool operator==(const LabeledDataset&) const = default;
};

LabeledDataset subset(const LabeledDataset& source, std::span<const std::size_t> indices);

/// Replaces every label by map.at(label); num_classes becomes num_outputs.
LabeledDataset remap_labels(const LabeledDataset& source, const std::map<int, int>& map, std::size_t num_outputs);

/// Stacks samples [indices] into a [B, ...sample_shape] tensor.
Tensor gather_batch(const LabeledDataset& source, std::span<const std::size_t> indices);

/// Class-incremental sequence of tasks with pairwise disjoint class sets.
struct TaskStream {
  std::vector<LabeledDataset> tasks;
  std::vector<LabeledDataset> test_tasks;
  /// Original class label -> contiguous output index. Task 1's classes take
  /// the first indices, then task 2's, and so on.
  std::map<int, int> global_class_map;

  std::size_t num_tasks() const noexcept { return tasks.size(); }
  std::size_t num_classes() const noexcept { return global_class_map.size(); }
  /// Output indices of the classes of task t.
  std::vector<int> task_outputs(std::size_t t) const;
  /// Union of all task class sets (original labels), sorted.
  std::vector<int> all_classes() const;
};

/// Partitions the classes of (train, test) into T equal groups following a
/// seeded shuffle of the class order. Samples keep their relative order.
TaskStream split_class_incremental(const LabeledDataset& train, const LabeledDataset& test, std::size_t num_tasks,
                                   std::uint64_t seed);

/// Auxiliary dataset for the REM stage plus the ablation knobs that produced
/// it.
struct DreamSource {
  LabeledDataset dataset;
  double fraction = 1.0;
  double noise_pct = 0.0;
  std::size_t downscale_factor = 1;

  /// Original dream label -> dream-head output index.
  std::map<int, int> class_map() const;
};

/// Throws Disjointness when any dream class is also a task class.
void check_disjoint(const TaskStream& stream, const DreamSource& dream);

/// Adds noise_pct * sigma_data Gaussian noise (clamped to [0, 1]) then
/// block-averages by downscale_factor and upsamples back by repetition.
DreamSource corrupt(const DreamSource& source, std::uint64_t seed);

/// Keeps ceil(f * N) samples, drawing one per class first when that fits.
DreamSource subsample_fraction(const DreamSource& source, double fraction, std::uint64_t seed);

/// Parameters of the synthetic generator. Each class has a prototype built
/// from directions shared between task and dream classes plus directions
/// private to its family, so features learned on dream classes transfer.
struct SynthSpec {
  std::size_t tasks = 5;
  std::size_t classes_per_task = 2;
  std::size_t dream_classes = 20;
  std::size_t samples_per_class = 200;
  std::size_t dream_samples_per_class = 100;
  std::size_t side = 8;
  std::size_t shared_dim = 8;
  std::size_t private_dim = 4;
  /// Fraction of prototype energy in the shared directions.
  double shared_weight = 0.8;
  double class_separation = 2.0;
  double latent_noise = 0.6;
  double pixel_noise = 0.5;
  double test_fraction = 0.2;
  /// Probability that a sample's latent code is negated. Above 0 each class
  /// becomes a pair of antipodal clusters, which no linear readout of the
  /// pixels separates well.
  double mirror = 0.0;

  void validate() const;
};

/// Parses "key=value,key=value" (optionally prefixed with "synth:").
SynthSpec parse_synth_spec(const std::string& text);
std::string to_string(const SynthSpec& spec);

struct SynthData {
  LabeledDataset train;
  LabeledDataset test;
  LabeledDataset dream;
};

SynthData synth_datasets(const SynthSpec& spec, std::uint64_t seed);

struct StreamAndDream {
  TaskStream stream;
  DreamSource dream;
};

StreamAndDream synth_stream(const SynthSpec& spec, std::uint64_t seed);

// Binary format (little-endian): "WSCLDS01" | u32 N | u32 ndims | u32 dims[ndims]
// | u32 num_classes | f32 features[N * prod(dims)] | u16 labels[N]
void save_dataset(const LabeledDataset& dataset, const std::filesystem::path& path);
LabeledDataset load_dataset(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_dataset(const LabeledDataset& dataset);
LabeledDataset decode_dataset(std::span<const std::uint8_t> bytes, const std::string& name = "");

}  // namespace wscl
