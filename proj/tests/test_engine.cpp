#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "wscl/engine.hpp"
#include "wscl/error.hpp"
#include "wscl/experiment.hpp"

using namespace wscl;

namespace {

SynthSpec small_spec() {
  SynthSpec s;
  s.tasks = 3;
  s.classes_per_task = 2;
  s.samples_per_class = 40;
  s.side = 4;
  s.shared_dim = 4;
  s.private_dim = 2;
  s.dream_classes = 4;
  s.dream_samples_per_class = 20;
  return s;
}

ArchConfig small_arch() {
  ArchConfig a;
  a.widths = {8, 8, 8};
  return a;
}

WsclConfig small_cfg() {
  WsclConfig c;
  c.sleep_epochs = 2;
  c.batch_size = 16;
  c.long_term_capacity = 30;
  return c;
}

struct Fixture {
  StreamAndDream data = synth_stream(small_spec(), 1);
  ArchConfig arch = small_arch();
  std::vector<LabeledDataset> train;
  std::vector<LabeledDataset> test;

  Fixture() {
    arch.num_classes = data.stream.num_classes();
    arch.input_spec = data.stream.tasks[0].sample_shape;
    for (std::size_t t = 0; t < data.stream.num_tasks(); ++t) {
      train.push_back(remap_labels(data.stream.tasks[t], data.stream.global_class_map, arch.num_classes));
    }
  }

  TaskContext context(std::size_t t, std::uint64_t seed = 0) const {
    TaskContext ctx;
    ctx.task_index = t;
    ctx.seed = seed;
    ctx.seen_classes.assign(arch.num_classes, 0);
    for (std::size_t k = 0; k <= t; ++k) {
      for (int c : data.stream.task_outputs(k)) ctx.seen_classes[static_cast<std::size_t>(c)] = 1;
    }
    ctx.current_classes = data.stream.task_outputs(t);
    return ctx;
  }

  LayeredClassifier model(bool dream_head = false) const {
    LayeredClassifier m(arch, 5);
    if (dream_head) m.extend_head(data.dream.dataset.class_set.size(), 6);
    return m;
  }

  ShortTermMemory stm(std::size_t t) const {
    Rng rng(0);
    return fill_short_term(train[t], static_cast<int>(t), 5000, rng);
  }

  DreamCursor dreams() const {
    const auto map = data.dream.class_map();
    return DreamCursor(remap_labels(data.dream.dataset, map, map.size()), 3);
  }

  RunRecord run(const WsclConfig& cfg, std::uint64_t seed = 0) const {
    return run_stream(data.stream, &data.dream, small_arch(), cfg, seed);
  }
};

LongTermMemory filled_ltm(const Fixture& f, std::size_t capacity) {
  LongTermMemory ltm;
  ltm.capacity = capacity;
  Rng rng(9);
  for (std::size_t i = 0; i < f.train[0].size(); ++i) {
    auto s = f.train[0].sample(i);
    reservoir_insert(ltm, MemoryItem{{s.begin(), s.end()}, f.train[0].labels[i], 0, {}}, rng);
  }
  return ltm;
}

}  // namespace

TEST_CASE("wake phase trains L - j + 1 candidates") {
  Fixture f;
  const auto cfg = small_cfg();
  auto wake = wake_phase(f.model(), f.train[0], LongTermMemory{}, FreezeMask{0, -1}, cfg, f.context(0));
  CHECK(wake.candidates.size() == 4);
  CHECK(wake.mask.depth == wake.candidates[wake.winner].depth);
  CHECK(wake.model.mask().depth == wake.mask.depth);
  UpdateCount search = 0;
  for (const auto& c : wake.candidates) search += c.updates;
  CHECK(wake.search_updates == search);
  CHECK(wake.updates == wake.candidates[wake.winner].updates);
  CHECK(wake.stm.items.size() == f.train[0].size());

  wake = wake_phase(f.model(), f.train[0], LongTermMemory{}, FreezeMask{2, 0}, cfg, f.context(0));
  CHECK(wake.candidates.size() == 2);
  CHECK(wake.mask.depth >= 2);
}

TEST_CASE("a fully frozen trunk leaves only the head trainable") {
  Fixture f;
  const auto start = f.model();
  const auto wake = wake_phase(start, f.train[0], LongTermMemory{}, FreezeMask{3, 0}, small_cfg(), f.context(0));
  CHECK(wake.candidates.size() == 1);
  CHECK(wake.model.block_bytes(1, 3) == start.block_bytes(1, 3));
  CHECK(wake.model.head_bytes(HeadSelector::Cl) != start.head_bytes(HeadSelector::Cl));
}

TEST_CASE("wake winner matches a brute-force search on a repeated task") {
  Fixture f;
  auto cfg = small_cfg();
  // Learn task 1 well, then present it again as task 2 for one epoch.
  auto long_cfg = cfg;
  long_cfg.wake_epochs = 400;
  auto first = wake_phase(f.model(), f.train[0], LongTermMemory{}, FreezeMask{0, -1}, long_cfg, f.context(0));
  const LongTermMemory ltm = filled_ltm(f, 30);
  auto ctx = f.context(0);
  ctx.task_index = 1;
  const auto wake = wake_phase(first.model, f.train[0], ltm, first.mask, cfg, ctx);

  std::size_t best = 0;
  std::vector<double> losses;
  for (std::size_t d = first.mask.depth; d <= 3; ++d) {
    LayeredClassifier clone = first.model;
    losses.push_back(train_wake_candidate(clone, d, f.train[0], wake.partition.wake_view, cfg, ctx).selection_loss);
    if (losses.back() <= losses[best]) best = losses.size() - 1;
  }
  CHECK(wake.winner == best);
  for (std::size_t c = 0; c < losses.size(); ++c) CHECK(wake.candidates[c].selection_loss == losses[c]);
}

TEST_CASE("deepest candidate wins on a repeated task") {
  Fixture f;
  auto cfg = small_cfg();
  auto long_cfg = cfg;
  long_cfg.wake_epochs = 400;
  auto first = wake_phase(f.model(), f.train[0], LongTermMemory{}, FreezeMask{0, -1}, long_cfg, f.context(0));
  auto ctx = f.context(0);
  ctx.task_index = 1;
  const auto wake = wake_phase(first.model, f.train[0], filled_ltm(f, 30), first.mask, cfg, ctx);
  CHECK(wake.mask.depth == 3);
}

TEST_CASE("parallel candidate training matches sequential training") {
  Fixture f;
  auto cfg = small_cfg();
  const auto seq = wake_phase(f.model(), f.train[0], LongTermMemory{}, FreezeMask{0, -1}, cfg, f.context(0));
  cfg.parallel_candidates = true;
  const auto par = wake_phase(f.model(), f.train[0], LongTermMemory{}, FreezeMask{0, -1}, cfg, f.context(0));
  CHECK(seq.winner == par.winner);
  CHECK(seq.model.digest() == par.model.digest());
  for (std::size_t c = 0; c < seq.candidates.size(); ++c) {
    CHECK(seq.candidates[c].selection_loss == par.candidates[c].selection_loss);
  }
}

TEST_CASE("nrem step without replay is the plain method loss") {
  Fixture f;
  auto model = f.model();
  const auto stm = f.stm(0);
  std::vector<MemoryItem> batch(stm.items.begin(), stm.items.begin() + 8);
  const auto ctx = f.context(0);

  std::vector<std::size_t> idx(8);
  for (std::size_t i = 0; i < 8; ++i) idx[i] = i;
  BatchContext bc;
  bc.stream_logits = model.forward(stack_features(batch, idx, f.arch.input_spec), HeadSelector::Cl);
  for (const auto& it : batch) bc.stream_labels.push_back(it.label);
  bc.current_classes = ctx.current_classes;
  bc.seen_classes = ctx.seen_classes;
  const double expected = method_loss(MethodSpec{}, bc).item();

  Sgd opt(SgdConfig{});
  const auto r = nrem_step(model, batch, {}, MethodSpec{}, 0.0f, opt, ctx);
  CHECK(r.loss == doctest::Approx(expected));
  CHECK(r.updates == model.trainable_scalars(HeadSelector::Cl));
}

TEST_CASE("nrem loss on a two-sample batch is CE + alpha * CE") {
  Fixture f;
  auto model = f.model();
  const auto stm = f.stm(1);
  const auto ltm = filled_ltm(f, 10);
  std::vector<MemoryItem> s{stm.items[0], stm.items[1]};
  std::vector<MemoryItem> l{ltm.items[0], ltm.items[1]};
  const auto ctx = f.context(1);

  auto ce = [&](const std::vector<MemoryItem>& items) {
    std::vector<std::size_t> idx{0, 1};
    std::vector<int> labels{items[0].label, items[1].label};
    const Tensor logits = model.forward(stack_features(items, idx, f.arch.input_spec), HeadSelector::Cl);
    // Hand-rolled masked softmax over the seen classes.
    double total = 0.0;
    const std::size_t C = logits.dim(1);
    for (std::size_t b = 0; b < 2; ++b) {
      double z = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        if (ctx.seen_classes[c]) z += std::exp(static_cast<double>(logits.data()[b * C + c]));
      }
      total += std::log(z) - logits.data()[b * C + static_cast<std::size_t>(labels[b])];
    }
    return total / 2.0;
  };
  const double expected = ce(s) + 0.5 * ce(l);
  Sgd opt(SgdConfig{});
  CHECK(nrem_step(model, s, l, MethodSpec{}, 0.5f, opt, ctx).loss == doctest::Approx(expected).epsilon(1e-5));
}

TEST_CASE("frozen prefix survives 100 nrem steps bit for bit") {
  Fixture f;
  auto model = f.model();
  model.apply_mask(FreezeMask{2, 0});
  const auto before = model.block_bytes(1, 2);
  const auto stm = f.stm(0);
  const auto ltm = filled_ltm(f, 20);
  Sgd opt(SgdConfig{});
  for (int step = 0; step < 100; ++step) {
    std::vector<MemoryItem> batch(stm.items.begin() + step % 10, stm.items.begin() + step % 10 + 8);
    nrem_step(model, batch, ltm.items, MethodSpec{}, 1.0f, opt, f.context(0));
  }
  CHECK(model.block_bytes(1, 2) == before);
  CHECK(model.block_bytes(3, 3) != f.model().block_bytes(3, 3));
}

TEST_CASE("DER++ reservoir items carry the logits seen at storage time") {
  Fixture f;
  auto model = f.model();
  const auto stm = f.stm(0);
  std::vector<MemoryItem> batch(stm.items.begin(), stm.items.begin() + 6);
  std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5};
  const Tensor pre = model.forward(stack_features(batch, idx, f.arch.input_spec), HeadSelector::Cl);

  LongTermMemory ltm;
  ltm.capacity = 10;
  Rng rng(0);
  Sgd opt(SgdConfig{});
  nrem_step(model, batch, {}, MethodSpec{MethodKind::DerPP}, 1.0f, opt, f.context(0), &ltm, &rng);
  REQUIRE(ltm.items.size() == 6);
  const std::size_t C = pre.dim(1);
  for (std::size_t i = 0; i < 6; ++i) {
    const std::vector<float> row(pre.data().begin() + static_cast<long>(i * C),
                                 pre.data().begin() + static_cast<long>((i + 1) * C));
    CHECK(ltm.items[i].stored_logits == row);
  }
}

TEST_CASE("empty short-term batch is rejected") {
  Fixture f;
  auto model = f.model();
  Sgd opt(SgdConfig{});
  CHECK_THROWS_AS(nrem_step(model, {}, {}, MethodSpec{}, 1.0f, opt, f.context(0)), Error);
}

TEST_CASE("rem step touches only the trunk and the dream head") {
  Fixture f;
  auto model = f.model(true);
  auto dreams = f.dreams();
  const auto idx = dreams.next(16);
  const Tensor batch = gather_batch(dreams.data(), idx);
  std::vector<int> labels;
  for (std::size_t i : idx) labels.push_back(dreams.data().labels[i]);

  const auto cl_before = model.head_bytes(HeadSelector::Cl);
  const auto dream_before = model.head_bytes(HeadSelector::Dream);
  Sgd opt(SgdConfig{});
  rem_step(model, batch, labels, opt);
  CHECK(model.head_bytes(HeadSelector::Cl) == cl_before);
  CHECK(model.head_bytes(HeadSelector::Dream) != dream_before);

  // Fully frozen trunk: only the dream head moves.
  model.apply_mask(FreezeMask{3, 0});
  const auto trunk = model.block_bytes(1, 3);
  const auto r = rem_step(model, batch, labels, opt);
  CHECK(model.block_bytes(1, 3) == trunk);
  CHECK(model.head_bytes(HeadSelector::Cl) == cl_before);
  CHECK(r.updates == model.dream_head().scalar_count());

  auto plain = f.model();
  CHECK_THROWS_AS(rem_step(plain, batch, labels, opt), Error);
}

TEST_CASE("dream loss on uniform logits is ln of the dream class count") {
  Fixture f;
  auto model = f.model(true);
  for (auto& t : model.dream_head().tensors) {
    for (float& v : t.mutable_data()) v = 0.0f;
  }
  auto dreams = f.dreams();
  const auto idx = dreams.next(8);
  std::vector<int> labels;
  for (std::size_t i : idx) labels.push_back(dreams.data().labels[i]);
  Sgd opt(SgdConfig{});
  const auto r = rem_step(model, gather_batch(dreams.data(), idx), labels, opt);
  CHECK(r.loss == doctest::Approx(std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("dream cursor wraps around and visits everything") {
  Fixture f;
  auto dreams = f.dreams();
  const std::size_t n = dreams.data().size();
  std::vector<int> seen(n, 0);
  for (std::size_t i : dreams.next(n)) ++seen[i];
  for (int s : seen) CHECK(s == 1);
  CHECK(dreams.next(3 * n).size() == 3 * n);
}

TEST_CASE("sleep alternates NREM and REM batches") {
  Fixture f;
  auto cfg = small_cfg();
  cfg.sleep_epochs = 3;
  auto model = f.model(true);
  const auto stm = f.stm(0);
  LongTermMemory ltm;
  ltm.capacity = 30;
  auto dreams = f.dreams();
  const auto r = sleep_phase(model, stm, ltm, {}, &dreams, cfg, f.context(0));
  const std::size_t batches = (stm.items.size() + cfg.batch_size - 1) / cfg.batch_size;
  REQUIRE(r.schedule.size() == 3);
  for (const auto& epoch : r.schedule) {
    std::string expected;
    for (std::size_t b = 0; b < batches; ++b) expected += "NR";
    CHECK(epoch == expected);
  }
  CHECK(r.nrem_steps == 3 * batches);
  CHECK(r.rem_steps == 3 * batches);
  // Every short-term item is offered once, in the first epoch.
  CHECK(r.reservoir_offers == stm.items.size());
  CHECK(ltm.seen_count == stm.items.size());
}

TEST_CASE("sleep with one stage runs only that stage") {
  Fixture f;
  auto cfg = small_cfg();
  const auto stm = f.stm(0);

  cfg.stages.rem = false;
  auto model = f.model();
  LongTermMemory ltm;
  ltm.capacity = 30;
  auto r = sleep_phase(model, stm, ltm, {}, nullptr, cfg, f.context(0));
  CHECK(r.rem_steps == 0);
  CHECK(r.schedule[0].find('R') == std::string::npos);

  cfg.stages.rem = true;
  cfg.stages.nrem = false;
  auto dreamer = f.model(true);
  auto dreams = f.dreams();
  LongTermMemory untouched;
  untouched.capacity = 30;
  r = sleep_phase(dreamer, stm, untouched, {}, &dreams, cfg, f.context(0));
  CHECK(r.nrem_steps == 0);
  CHECK(untouched.seen_count == 0);
  CHECK(untouched.items.empty());

  cfg.stages.rem = false;
  CHECK_THROWS_AS(sleep_phase(dreamer, stm, untouched, {}, &dreams, cfg, f.context(0)), Error);
}

TEST_CASE("frozen prefix is bytewise unchanged through a full sleep phase") {
  Fixture f;
  auto cfg = small_cfg();
  cfg.sleep_epochs = 4;
  auto model = f.model(true);
  model.apply_mask(FreezeMask{2, 1});
  const auto before = model.block_bytes(1, 2);
  auto ltm = filled_ltm(f, 30);
  auto dreams = f.dreams();
  sleep_phase(model, f.stm(1), ltm, {}, &dreams, cfg, f.context(1));
  CHECK(model.block_bytes(1, 2) == before);
}

TEST_CASE("only-wake runs equal pure wake training") {
  Fixture f;
  auto cfg = small_cfg();
  cfg.stages.nrem = false;
  cfg.stages.rem = false;
  const auto record = f.run(cfg);
  // Task 1 from the same initialization and an empty buffer.
  LayeredClassifier init(f.arch, derive_seed(0, "model.init"));
  const auto wake = wake_phase(init, f.train[0], LongTermMemory{}, FreezeMask{0, -1}, cfg, f.context(0));
  CHECK(record.tasks[0].theta_digest == wake.model.digest());
  for (const auto& t : record.tasks) {
    CHECK(t.nrem_steps == 0);
    CHECK(t.rem_steps == 0);
    CHECK(t.ltm_size == 0);
  }
}

TEST_CASE("ablations keep to their data sources") {
  Fixture f;
  auto cfg = small_cfg();
  cfg.stages.rem = false;
  // Without REM no dream source is needed at all.
  const auto nrem_only = run_stream(f.data.stream, nullptr, small_arch(), cfg, 0);
  for (const auto& t : nrem_only.tasks) {
    CHECK(t.rem_steps == 0);
    CHECK_FALSE(t.theta_checkpoint->has_dream_head());
  }
  CHECK(nrem_only.tasks.back().ltm_size > 0);

  cfg.stages.rem = true;
  cfg.stages.nrem = false;
  const auto rem_only = f.run(cfg);
  for (const auto& t : rem_only.tasks) {
    CHECK(t.ltm_size == 0);
    CHECK(t.nrem_steps == 0);
    CHECK(t.rem_steps > 0);
  }
}

TEST_CASE("run_stream invariants") {
  Fixture f;
  const auto cfg = small_cfg();
  const auto record = f.run(cfg);
  REQUIRE(record.tasks.size() == 3);
  std::size_t prev = 0;
  for (const auto& t : record.tasks) {
    CHECK(t.accepted_mask.depth >= prev);
    prev = t.accepted_mask.depth;
    CHECK(t.candidates.size() == 3 - (t.task_index == 0 ? 0 : record.tasks[t.task_index - 1].accepted_mask.depth) + 1);
    for (const auto& epoch : t.sleep_schedule) {
      const auto n = std::count(epoch.begin(), epoch.end(), 'N');
      const auto r = std::count(epoch.begin(), epoch.end(), 'R');
      CHECK(std::abs(n - r) <= 1);
    }
  }
  CHECK(record.total_updates == recompute_update_count(record));
  CHECK(record.metrics.faa == doctest::Approx(faa(record.class_il)));
  CHECK(record.metrics.fwt.has_value());
  CHECK(record.metrics.forgetting.has_value());
  CHECK(record.scratch_accuracies.size() == 3);
  CHECK(record.metrics_task_il.faa >= record.metrics.faa);
}

TEST_CASE("identical seeds give identical records") {
  Fixture f;
  const auto cfg = small_cfg();
  const auto a = run_record_to_json(f.run(cfg, 4)).dump();
  const auto b = run_record_to_json(f.run(cfg, 4)).dump();
  CHECK(a == b);
  CHECK(a != run_record_to_json(f.run(cfg, 5)).dump());
}

TEST_CASE("freezing reduces the update count for an equal schedule") {
  Fixture f;
  auto frozen = small_cfg();
  frozen.initial_depth = 1;
  auto control = small_cfg();
  control.stages.wake_search = false;
  const auto a = f.run(frozen), b = f.run(control);
  for (const auto& t : b.tasks) CHECK(t.accepted_mask.depth == 0);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(a.tasks[t].task_data_steps == b.tasks[t].task_data_steps);
    CHECK(a.tasks[t].rem_steps == b.tasks[t].rem_steps);
  }
  CHECK(a.total_updates < b.total_updates);
  CHECK(a.total_updates == recompute_update_count(a));
  CHECK(b.total_updates == recompute_update_count(b));
}

TEST_CASE("single-task stream") {
  auto spec = small_spec();
  spec.tasks = 1;
  const auto data = synth_stream(spec, 2);
  const auto record = run_stream(data.stream, &data.dream, small_arch(), small_cfg(), 0);
  CHECK(record.metrics.faa == record.class_il.at(0, 0));
  CHECK_FALSE(record.metrics.fwt.has_value());
  CHECK_FALSE(record.metrics.forgetting.has_value());
}

TEST_CASE("baseline regimes") {
  Fixture f;
  auto cfg = small_cfg();
  for (auto regime : {Regime::Plain, Regime::FineTune, Regime::Joint}) {
    cfg.regime = regime;
    const auto record = f.run(cfg);
    CHECK(record.total_updates == recompute_update_count(record));
    for (const auto& t : record.tasks) CHECK(t.rem_steps == 0);
    if (regime == Regime::FineTune) CHECK(record.tasks.back().ltm_size == 0);
    if (regime == Regime::Plain) CHECK(record.tasks.back().ltm_size == 30);
  }
}

TEST_CASE("fine-tuning forgets more than WSCL-ER on two tasks") {
  auto spec = small_spec();
  spec.tasks = 2;
  spec.samples_per_class = 100;
  auto cfg = small_cfg();
  cfg.method.kind = MethodKind::Er;
  auto ft = cfg;
  ft.regime = Regime::FineTune;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto data = synth_stream(spec, seed);
    const auto wscl = run_stream(data.stream, &data.dream, small_arch(), cfg, seed);
    const auto tuned = run_stream(data.stream, nullptr, small_arch(), ft, seed);
    CAPTURE(seed);
    CHECK(*tuned.metrics.forgetting > *wscl.metrics.forgetting);
  }
}

TEST_CASE("stage errors name the task") {
  Fixture f;
  TaskStream stream = f.data.stream;
  stream.tasks[1].features.clear();
  stream.tasks[1].labels.clear();
  try {
    run_stream(stream, &f.data.dream, small_arch(), small_cfg(), 0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptyInput);
    CHECK(std::string(e.what()).find("task 2") != std::string::npos);
  }
}

TEST_CASE("REM without a dream source is a config error") {
  Fixture f;
  try {
    run_stream(f.data.stream, nullptr, small_arch(), small_cfg(), 0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Config);
  }
}

TEST_CASE("config validation") {
  auto cfg = small_cfg();
  cfg.lr = 0.0f;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = small_cfg();
  cfg.wake_epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK(stage_label(StageFlags{true, false, false}) == "Only Wake");
  CHECK(stage_label(StageFlags{true, true, true}) == "Wake+REM+NREM");
  CHECK(regime_from_string(to_string(Regime::FineTune)) == Regime::FineTune);
}
