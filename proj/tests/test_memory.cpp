#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <set>

#include "wscl/error.hpp"
#include "wscl/memory.hpp"

using namespace wscl;

namespace {

MemoryItem item(int id) { return MemoryItem{{static_cast<float>(id) / 1000.0f}, id % 7, id, {}}; }

LabeledDataset indexed(std::size_t n) {
  LabeledDataset ds;
  ds.sample_shape = {1};
  ds.num_classes = 1;
  for (std::size_t i = 0; i < n; ++i) {
    ds.features.push_back(static_cast<float>(i) / static_cast<float>(n));
    ds.labels.push_back(0);
  }
  ds.refresh_class_set();
  return ds;
}

}  // namespace

TEST_CASE("short-term memory under capacity keeps everything") {
  Rng rng(0);
  const auto stm = fill_short_term(indexed(100), 3, 5000, rng);
  CHECK(stm.items.size() == 100);
  CHECK(stm.capacity == 5000);
  for (const auto& it : stm.items) CHECK(it.task_id == 3);
  CHECK(ShortTermMemory{}.capacity == 5000);
  Rng r2(0);
  CHECK_THROWS_AS(fill_short_term(LabeledDataset{}, 0, 5, r2), Error);
}

TEST_CASE("short-term inclusion probability is N_s / N") {
  const auto ds = indexed(20);
  std::vector<int> hits(20, 0);
  Rng rng(1);
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    const auto stm = fill_short_term(ds, 0, 5, rng);
    REQUIRE(stm.items.size() == 5);
    std::set<float> distinct;
    for (const auto& it : stm.items) {
      distinct.insert(it.features[0]);
      ++hits[static_cast<std::size_t>(std::lround(it.features[0] * 20))];
    }
    CHECK(distinct.size() == 5);
  }
  const double p = 0.25, sigma = std::sqrt(p * (1 - p) / trials);
  for (int h : hits) CHECK(std::abs(h / static_cast<double>(trials) - p) < 4 * sigma);
}

TEST_CASE("reservoir below capacity stores directly") {
  LongTermMemory ltm;
  ltm.capacity = 5;
  Rng rng(2);
  for (int i = 0; i < 3; ++i) CHECK(reservoir_insert(ltm, item(i), rng));
  CHECK(ltm.items.size() == 3);
  CHECK(ltm.seen_count == 3);
  for (int i = 3; i < 40; ++i) reservoir_insert(ltm, item(i), rng);
  CHECK(ltm.items.size() == 5);
  CHECK(ltm.seen_count == 40);
}

TEST_CASE("zero-capacity reservoir only counts") {
  LongTermMemory ltm;
  Rng rng(0);
  CHECK_FALSE(reservoir_insert(ltm, item(0), rng));
  CHECK(ltm.items.empty());
  CHECK(ltm.seen_count == 1);
}

namespace {

// z such that n two-sided tests jointly exceed it with the same probability
// (0.27%) as a single test exceeds 3 sigma.
double family_z(std::size_t n) {
  const double target = std::erfc(3.0 / std::sqrt(2.0)) / static_cast<double>(n);
  double lo = 3.0, hi = 8.0;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (std::erfc(mid / std::sqrt(2.0)) > target ? lo : hi) = mid;
  }
  return hi;
}

std::vector<int> residency(std::size_t k, int trials, std::uint64_t seed) {
  const std::size_t n = 10 * k;
  std::vector<int> resident(n, 0);
  Rng rng(derive_seed(seed, "reservoir.test", k));
  for (int t = 0; t < trials; ++t) {
    LongTermMemory ltm;
    ltm.capacity = k;
    for (std::size_t i = 0; i < n; ++i) reservoir_insert(ltm, item(static_cast<int>(i)), rng);
    for (const auto& it : ltm.items) ++resident[static_cast<std::size_t>(it.task_id)];
  }
  return resident;
}

}  // namespace

TEST_CASE("reservoir residency is k / n") {
  const int trials = 10000;
  const double p = 0.1, sigma = std::sqrt(p * (1 - p) / trials);

  // Capacity 1: each of the 10 items is resident with probability 1/10.
  for (int r : residency(1, trials, 3)) CHECK(std::abs(r / static_cast<double>(trials) - p) < 3 * sigma);

  // Capacity 5 over 50 items: the bound is widened for the 50 simultaneous
  // comparisons.
  const auto resident = residency(5, trials, 3);
  const double z = family_z(resident.size());
  for (int r : resident) CHECK(std::abs(r / static_cast<double>(trials) - p) < z * sigma);
  CHECK(std::accumulate(resident.begin(), resident.end(), 0) == 5 * trials);
}

TEST_CASE("partition sizes") {
  Rng rng(4);
  LongTermMemory ltm;
  ltm.capacity = 200;
  for (int i = 0; i < 200; ++i) reservoir_insert(ltm, item(i), rng);
  auto part = partition_ltm(ltm, 0.10, rng);
  CHECK(part.wake_view.size() == 20);
  CHECK(part.sleep_view.size() == 180);
  CHECK(part.wake_slots.size() == 20);

  LongTermMemory one;
  one.capacity = 1;
  reservoir_insert(one, item(0), rng);
  part = partition_ltm(one, 0.10, rng);
  CHECK(part.wake_view.size() == 1);
  CHECK(part.sleep_view.empty());

  part = partition_ltm(LongTermMemory{}, 0.10, rng);
  CHECK(part.wake_view.empty());
  CHECK(part.sleep_view.empty());
}

TEST_CASE("partition views are disjoint and cover the buffer") {
  Rng rng(5);
  for (int n = 1; n <= 60; ++n) {
    LongTermMemory ltm;
    ltm.capacity = static_cast<std::size_t>(n);
    for (int i = 0; i < n; ++i) reservoir_insert(ltm, item(i), rng);
    const auto part = partition_ltm(ltm, 0.10, rng);
    std::set<int> seen;
    for (const auto& it : part.wake_view) CHECK(seen.insert(it.task_id).second);
    for (const auto& it : part.sleep_view) CHECK(seen.insert(it.task_id).second);
    CHECK(seen.size() == static_cast<std::size_t>(n));
    for (std::size_t w = 0; w < part.wake_slots.size(); ++w) CHECK(ltm.items[part.wake_slots[w]] == part.wake_view[w]);
  }
}

TEST_CASE("sample_batch") {
  std::vector<MemoryItem> view;
  for (int i = 0; i < 10; ++i) view.push_back(item(i));
  Rng rng(6);
  auto all = sample_batch(view, 10, rng);
  std::set<int> ids;
  for (const auto& it : all) ids.insert(it.task_id);
  CHECK(ids.size() == 10);

  std::vector<MemoryItem> single{item(42)};
  CHECK(sample_batch(single, 1, rng)[0] == single[0]);
  CHECK(sample_batch(single, 3, rng).size() == 3);
  CHECK_THROWS_AS(sample_batch(std::span<const MemoryItem>{}, 1, rng), Error);

  const int draws = 10000;
  std::vector<int> freq(10, 0);
  for (int d = 0; d < draws; ++d) ++freq[static_cast<std::size_t>(sample_batch(view, 1, rng)[0].task_id)];
  const double p = 0.1, sigma = std::sqrt(p * (1 - p) / draws);
  for (int f : freq) CHECK(std::abs(f / static_cast<double>(draws) - p) < 3 * sigma);
}

TEST_CASE("memory round trip keeps stored logits") {
  std::vector<MemoryItem> items;
  for (int i = 0; i < 4; ++i) {
    MemoryItem it{{0.1f * static_cast<float>(i), 0.5f}, i % 3, i / 2, {}};
    if (i % 2 == 0) it.stored_logits = {1.0f, -2.0f, static_cast<float>(i)};
    items.push_back(it);
  }
  const auto path = std::filesystem::temp_directory_path() / "wscl_test_memory.wds";
  save_memory(items, {2}, 3, path);
  const auto back = load_memory(path);
  REQUIRE(back.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back[i].features == items[i].features);
    CHECK(back[i].label == items[i].label);
    if (!items[i].stored_logits.empty()) CHECK(back[i].stored_logits == items[i].stored_logits);
  }
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".logits");
}
