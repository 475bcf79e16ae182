#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace wscl {

/// Derives an independent stream seed from a run seed, a component label and
/// an index (task, candidate, block...). All randomness in the library flows
/// through this function so that runs are reproducible without ambient entropy.
std::uint64_t derive_seed(std::uint64_t global, std::string_view label, std::uint64_t index = 0) noexcept;

/// Mersenne-twister engine with hand-written distributions. The standard
/// distributions are implementation-defined, which would make recorded runs
/// differ between standard libraries.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t global, std::string_view label, std::uint64_t index = 0)
      : engine_(derive_seed(global, label, index)) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal (Box-Muller, one value cached).
  double normal();

  template <typename T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::swap(values[i - 1], values[below(i)]);
    }
  }

private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace wscl
