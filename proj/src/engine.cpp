#include "wscl/engine.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>

#include "wscl/error.hpp"

namespace wscl {

std::string stage_label(const StageFlags& stages) {
  if (stages.nrem && stages.rem) return "Wake+REM+NREM";
  if (stages.nrem) return "Wake+NREM";
  if (stages.rem) return "Wake+REM";
  return "Only Wake";
}

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::Wscl: return "wscl";
    case Regime::Plain: return "plain";
    case Regime::FineTune: return "finetune";
    case Regime::Joint: return "joint";
  }
  return "wscl";
}

Regime regime_from_string(const std::string& name) {
  if (name == "wscl") return Regime::Wscl;
  if (name == "plain") return Regime::Plain;
  if (name == "finetune") return Regime::FineTune;
  if (name == "joint") return Regime::Joint;
  throw Error(ErrorCode::Config, "unknown regime '" + name + "'");
}

void WsclConfig::validate() const {
  if (!(lr > 0.0f)) throw Error(ErrorCode::Config, "lr must be positive");
  if (batch_size == 0) throw Error(ErrorCode::Config, "batch_size must be positive");
  if (!(alpha >= 0.0f)) throw Error(ErrorCode::Config, "alpha must be non-negative");
  if (short_term_capacity == 0) throw Error(ErrorCode::Config, "short-term capacity must be positive");
  if (!(wake_view_ratio >= 0.0 && wake_view_ratio <= 1.0)) throw Error(ErrorCode::Config, "wake_view_ratio must lie in [0,1]");
  if (!(selection_tail > 0.0 && selection_tail <= 1.0)) throw Error(ErrorCode::Config, "selection_tail must lie in (0,1]");
  if (regime == Regime::Wscl && wake_epochs == 0) throw Error(ErrorCode::Config, "wake_epochs must be >= 1");
  if (regime == Regime::Wscl && sleep_epochs == 0 && (stages.nrem || stages.rem)) {
    throw Error(ErrorCode::Config, "sleep_epochs must be >= 1 when a sleep stage is enabled");
  }
  if (regime != Regime::Wscl && effective_baseline_epochs() == 0) throw Error(ErrorCode::Config, "baseline epochs must be >= 1");
  method.validate();
}

namespace {

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    out.emplace_back(order.begin() + static_cast<long>(start),
                     order.begin() + static_cast<long>(std::min(n, start + batch_size)));
  }
  return out;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

std::vector<int> labels_of(std::span<const MemoryItem> items, std::span<const std::size_t> idx) {
  std::vector<int> out;
  for (std::size_t i : idx) out.push_back(items[i].label);
  return out;
}

std::vector<int> labels_of(const LabeledDataset& ds, std::span<const std::size_t> idx) {
  std::vector<int> out;
  for (std::size_t i : idx) out.push_back(ds.labels[i]);
  return out;
}

/// Forward pass over replay items, packaged for method_loss.
ReplayBatch make_replay(const LayeredClassifier& model, std::span<const MemoryItem> items,
                        std::span<const std::size_t> idx, const MethodSpec& method) {
  ReplayBatch replay;
  replay.logits = model.forward(stack_features(items, idx, model.arch().input_spec), HeadSelector::Cl);
  replay.labels = labels_of(items, idx);
  if (method.kind == MethodKind::DerPP) {
    const std::size_t C = replay.logits.dim(1);
    std::vector<float> stored;
    stored.reserve(idx.size() * C);
    for (std::size_t i : idx) {
      const auto& s = items[i].stored_logits;
      if (s.size() != C) throw Error(ErrorCode::InvalidArgument, "DER++ replay item lacks stored logits");
      stored.insert(stored.end(), s.begin(), s.end());
    }
    replay.stored_logits = Tensor({idx.size(), C}, std::move(stored));
  }
  return replay;
}

double tail_mean(const std::vector<double>& losses, double tail_share) {
  if (losses.empty()) return 0.0;
  const auto tail = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(tail_share * static_cast<double>(losses.size()) - 1e-9)));
  const std::size_t start = losses.size() - std::min(tail, losses.size());
  return std::accumulate(losses.begin() + static_cast<long>(start), losses.end(), 0.0) /
         static_cast<double>(losses.size() - start);
}

/// Offers items to the reservoir, attaching logits rows when requested.
void offer_to_reservoir(LongTermMemory& ltm, std::span<const MemoryItem> items, const Tensor* logits, Rng& rng) {
  for (std::size_t r = 0; r < items.size(); ++r) {
    MemoryItem copy = items[r];
    if (logits) {
      const std::size_t C = logits->dim(1);
      auto row = logits->data().subspan(r * C, C);
      copy.stored_logits.assign(row.begin(), row.end());
    }
    reservoir_insert(ltm, std::move(copy), rng);
  }
}

std::vector<MemoryItem> items_of(const LabeledDataset& ds, std::span<const std::size_t> idx, int task_id) {
  std::vector<MemoryItem> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) {
    auto s = ds.sample(i);
    out.push_back(MemoryItem{{s.begin(), s.end()}, ds.labels[i], task_id, {}});
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Wake phase
// ---------------------------------------------------------------------------

CandidateResult train_wake_candidate(LayeredClassifier& model, std::size_t depth, const LabeledDataset& task_data,
                                     std::span<const MemoryItem> wake_view, const WsclConfig& cfg,
                                     const TaskContext& ctx) {
  if (task_data.size() == 0) throw Error(ErrorCode::EmptyInput, "empty task data");
  model.apply_mask(FreezeMask{depth, static_cast<int>(ctx.task_index)});
  Sgd opt(SgdConfig{cfg.lr, 0.0f});
  // Every candidate replays the same batch order (common random numbers), so
  // the comparison isolates the effect of the mask.
  Rng rng(ctx.seed, "wake", ctx.task_index);
  CandidateResult result;
  result.depth = depth;
  std::vector<double> losses;
  for (std::size_t epoch = 0; epoch < cfg.wake_epochs; ++epoch) {
    for (const auto& batch : epoch_batches(task_data.size(), cfg.batch_size, rng)) {
      model.zero_grad();
      BatchContext bc;
      bc.stream_logits = model.forward(gather_batch(task_data, batch), HeadSelector::Cl);
      bc.stream_labels = labels_of(task_data, batch);
      bc.current_classes = ctx.current_classes;
      bc.seen_classes = ctx.seen_classes;
      bc.replay_weight = cfg.alpha;
      if (!wake_view.empty()) {
        const auto idx = sample_indices(wake_view.size(), cfg.batch_size, rng);
        bc.replay = make_replay(model, wake_view, idx, cfg.method);
      }
      Tensor loss = method_loss(cfg.method, bc);
      backward(loss);
      result.updates += opt.step(model.param_groups(HeadSelector::Cl));
      losses.push_back(loss.item());
    }
  }
  result.steps = losses.size();
  result.mean_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
  result.selection_loss = tail_mean(losses, cfg.selection_tail);
  return result;
}

WakeResult wake_phase(const LayeredClassifier& model, const LabeledDataset& task_data, const LongTermMemory& ltm,
                      const FreezeMask& prev_mask, const WsclConfig& cfg, const TaskContext& ctx) {
  if (task_data.size() == 0) throw Error(ErrorCode::EmptyInput, "empty task data");
  Rng stm_rng(ctx.seed, "stm", ctx.task_index);
  ShortTermMemory stm = fill_short_term(task_data, static_cast<int>(ctx.task_index), cfg.short_term_capacity, stm_rng);
  Rng partition_rng(ctx.seed, "partition", ctx.task_index);
  LtmPartition partition = partition_ltm(ltm, cfg.wake_view_ratio, partition_rng);

  std::vector<FreezeMask> masks;
  if (cfg.stages.wake_search) {
    masks = mask_candidates(prev_mask.depth, model.num_blocks(), static_cast<int>(ctx.task_index));
  } else {
    masks.push_back(FreezeMask{prev_mask.depth, static_cast<int>(ctx.task_index)});
  }
  if (masks.empty()) throw Error(ErrorCode::State, "no candidate masks");

  std::vector<LayeredClassifier> clones(masks.size(), model);
  std::vector<CandidateResult> results(masks.size());
  if (cfg.parallel_candidates && masks.size() > 1) {
    std::vector<std::future<CandidateResult>> jobs;
    for (std::size_t c = 0; c < masks.size(); ++c) {
      jobs.push_back(std::async(std::launch::async, [&, c] {
        return train_wake_candidate(clones[c], masks[c].depth, task_data, partition.wake_view, cfg, ctx);
      }));
    }
    for (std::size_t c = 0; c < masks.size(); ++c) results[c] = jobs[c].get();
  } else {
    for (std::size_t c = 0; c < masks.size(); ++c) {
      results[c] = train_wake_candidate(clones[c], masks[c].depth, task_data, partition.wake_view, cfg, ctx);
    }
  }

  std::size_t winner = 0;
  for (std::size_t c = 1; c < results.size(); ++c) {
    // Candidates are ordered by increasing depth; <= prefers the deeper mask on ties.
    if (results[c].selection_loss <= results[winner].selection_loss) winner = c;
  }
  UpdateCount search = 0;
  for (const auto& r : results) search += r.updates;

  WakeResult out{std::move(clones[winner]), masks[winner], std::move(stm), std::move(partition), results, winner,
                 results[winner].steps, results[winner].updates, search};
  return out;
}

// ---------------------------------------------------------------------------
// Sleep phase
// ---------------------------------------------------------------------------

StepResult nrem_step(LayeredClassifier& model, std::span<const MemoryItem> stm_batch,
                     std::span<const MemoryItem> ltm_batch, const MethodSpec& method, float alpha, Sgd& opt,
                     const TaskContext& ctx, LongTermMemory* insert_into, Rng* rng) {
  if (stm_batch.empty()) throw Error(ErrorCode::EmptyInput, "NREM step needs short-term samples");
  if (insert_into && !rng) throw Error(ErrorCode::InvalidArgument, "reservoir insertion needs an rng");
  model.zero_grad();
  const auto stm_idx = all_indices(stm_batch.size());
  BatchContext bc;
  bc.stream_logits = model.forward(stack_features(stm_batch, stm_idx, model.arch().input_spec), HeadSelector::Cl);
  bc.stream_labels = labels_of(stm_batch, stm_idx);
  bc.current_classes = ctx.current_classes;
  bc.seen_classes = ctx.seen_classes;
  bc.replay_weight = alpha;
  if (!ltm_batch.empty()) bc.replay = make_replay(model, ltm_batch, all_indices(ltm_batch.size()), method);
  Tensor loss = method_loss(method, bc);
  backward(loss);
  StepResult out{loss.item(), opt.step(model.param_groups(HeadSelector::Cl))};
  if (insert_into) {
    const bool keep_logits = method.kind == MethodKind::DerPP;
    offer_to_reservoir(*insert_into, stm_batch, keep_logits ? &bc.stream_logits : nullptr, *rng);
  }
  return out;
}

StepResult rem_step(LayeredClassifier& model, const Tensor& dream_batch, std::span<const int> dream_labels, Sgd& opt) {
  if (!model.has_dream_head()) throw Error(ErrorCode::State, "REM step needs a dream head");
  model.zero_grad();
  Tensor loss = softmax_cross_entropy(model.forward(dream_batch, HeadSelector::Dream), dream_labels);
  backward(loss);
  return StepResult{loss.item(), opt.step(model.param_groups(HeadSelector::Dream))};
}

DreamCursor::DreamCursor(LabeledDataset mapped, std::uint64_t seed) : data_(std::move(mapped)), rng_(seed, "dream.cursor") {
  if (data_.size() == 0) throw Error(ErrorCode::EmptyInput, "dream dataset is empty");
  reshuffle();
}

void DreamCursor::reshuffle() {
  order_ = all_indices(data_.size());
  rng_.shuffle(std::span<std::size_t>(order_));
  pos_ = 0;
}

std::vector<std::size_t> DreamCursor::next(std::size_t k) {
  std::vector<std::size_t> out;
  out.reserve(k);
  while (out.size() < k) {
    if (pos_ == order_.size()) reshuffle();
    out.push_back(order_[pos_++]);
  }
  return out;
}

SleepResult sleep_phase(LayeredClassifier& model, const ShortTermMemory& stm, LongTermMemory& ltm,
                        std::span<const std::size_t> wake_slots, DreamCursor* dreams, const WsclConfig& cfg,
                        const TaskContext& ctx) {
  SleepResult out;
  const bool nrem = cfg.stages.nrem, rem = cfg.stages.rem;
  if (cfg.sleep_epochs == 0) return out;
  if (!nrem && !rem) throw Error(ErrorCode::Config, "sleep requested with both NREM and REM disabled");
  if (stm.items.empty()) throw Error(ErrorCode::EmptyInput, "sleep needs a non-empty short-term memory");
  if (rem && (!dreams || !model.has_dream_head())) throw Error(ErrorCode::State, "REM stage needs a dream source and head");

  Sgd opt(SgdConfig{cfg.lr, 0.0f});
  Rng rng(ctx.seed, "sleep", ctx.task_index);
  Rng reservoir_rng(ctx.seed, "reservoir", ctx.task_index);
  double nrem_loss = 0.0, rem_loss = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.sleep_epochs; ++epoch) {
    const auto batches = epoch_batches(stm.items.size(), cfg.batch_size, rng);
    std::string schedule;
    for (const auto& batch : batches) {
      if (nrem) {
        std::vector<MemoryItem> stm_batch;
        for (std::size_t i : batch) stm_batch.push_back(stm.items[i]);
        std::vector<std::size_t> pool;
        for (std::size_t slot = 0; slot < ltm.items.size(); ++slot) {
          if (std::find(wake_slots.begin(), wake_slots.end(), slot) == wake_slots.end()) pool.push_back(slot);
        }
        std::vector<MemoryItem> ltm_batch;
        if (!pool.empty()) {
          for (std::size_t i : sample_indices(pool.size(), cfg.batch_size, rng)) ltm_batch.push_back(ltm.items[pool[i]]);
        }
        const bool first = epoch == 0;
        const StepResult r = nrem_step(model, stm_batch, ltm_batch, cfg.method, cfg.alpha, opt, ctx,
                                       first ? &ltm : nullptr, first ? &reservoir_rng : nullptr);
        if (first) out.reservoir_offers += stm_batch.size();
        out.updates += r.updates;
        nrem_loss += r.loss;
        ++out.nrem_steps;
        schedule += 'N';
      }
      if (rem) {
        const auto idx = dreams->next(cfg.batch_size);
        const StepResult r =
            rem_step(model, gather_batch(dreams->data(), idx), labels_of(dreams->data(), idx), opt);
        out.updates += r.updates;
        rem_loss += r.loss;
        ++out.rem_steps;
        schedule += 'R';
      }
    }
    out.schedule.push_back(std::move(schedule));
  }
  if (out.nrem_steps) out.mean_nrem_loss = nrem_loss / static_cast<double>(out.nrem_steps);
  if (out.rem_steps) out.mean_rem_loss = rem_loss / static_cast<double>(out.rem_steps);
  return out;
}

// ---------------------------------------------------------------------------
// Baseline trainers
// ---------------------------------------------------------------------------

namespace {

struct BaselineTaskResult {
  std::size_t steps = 0;
  UpdateCount updates = 0;
};

/// Conventional rehearsal training on one task: stream batch plus a replay
/// batch drawn from the whole buffer; the stream is offered to the reservoir
/// during the first epoch.
BaselineTaskResult train_plain_task(LayeredClassifier& model, const LabeledDataset& task_data, LongTermMemory& ltm,
                                    const MethodSpec& method, const WsclConfig& cfg, const TaskContext& ctx,
                                    std::size_t epochs) {
  Sgd opt(SgdConfig{cfg.lr, 0.0f});
  Rng rng(ctx.seed, "plain", ctx.task_index);
  Rng reservoir_rng(ctx.seed, "plain.reservoir", ctx.task_index);
  BaselineTaskResult out;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    for (const auto& batch : epoch_batches(task_data.size(), cfg.batch_size, rng)) {
      model.zero_grad();
      BatchContext bc;
      bc.stream_logits = model.forward(gather_batch(task_data, batch), HeadSelector::Cl);
      bc.stream_labels = labels_of(task_data, batch);
      bc.current_classes = ctx.current_classes;
      bc.seen_classes = ctx.seen_classes;
      bc.replay_weight = cfg.alpha;
      if (!ltm.items.empty()) {
        const auto idx = sample_indices(ltm.items.size(), cfg.batch_size, rng);
        bc.replay = make_replay(model, ltm.items, idx, method);
      }
      Tensor loss = method_loss(method, bc);
      backward(loss);
      out.updates += opt.step(model.param_groups(HeadSelector::Cl));
      ++out.steps;
      if (epoch == 0 && ltm.capacity > 0) {
        const auto items = items_of(task_data, batch, static_cast<int>(ctx.task_index));
        offer_to_reservoir(ltm, items, method.kind == MethodKind::DerPP ? &bc.stream_logits : nullptr, reservoir_rng);
      }
    }
  }
  return out;
}

LabeledDataset concat(std::span<const LabeledDataset> parts) {
  LabeledDataset out = parts.front();
  for (std::size_t k = 1; k < parts.size(); ++k) {
    out.features.insert(out.features.end(), parts[k].features.begin(), parts[k].features.end());
    out.labels.insert(out.labels.end(), parts[k].labels.begin(), parts[k].labels.end());
  }
  out.refresh_class_set();
  return out;
}

std::size_t unfrozen_block_scalars(const ParameterLayout& layout, std::size_t depth) {
  std::size_t n = 0;
  for (std::size_t k = depth; k < layout.block_scalars.size(); ++k) n += layout.block_scalars[k];
  return n;
}

}  // namespace

double scratch_accuracy(const ArchConfig& arch, const EvalSuite& suite, const LabeledDataset& mapped_train,
                        std::size_t task, std::size_t steps, const WsclConfig& cfg, std::uint64_t seed) {
  LayeredClassifier model(arch, derive_seed(seed, "scratch.init", task));
  const ClassMask seen = class_il_mask(suite, task, task);
  Sgd opt(SgdConfig{cfg.lr, 0.0f});
  Rng rng(seed, "scratch.order", task);
  std::size_t done = 0;
  while (done < steps) {
    for (const auto& batch : epoch_batches(mapped_train.size(), cfg.batch_size, rng)) {
      if (done == steps) break;
      model.zero_grad();
      Tensor loss = softmax_cross_entropy(model.forward(gather_batch(mapped_train, batch), HeadSelector::Cl),
                                          labels_of(mapped_train, batch), seen);
      backward(loss);
      opt.step(model.param_groups(HeadSelector::Cl));
      ++done;
    }
  }
  return masked_accuracy(model, suite.tests[task], seen);
}

UpdateCount recompute_update_count(const RunRecord& record) {
  UpdateCount total = 0;
  const auto& layout = record.layout;
  for (const auto& t : record.tasks) {
    const std::size_t trunk = unfrozen_block_scalars(layout, t.accepted_mask.depth);
    total += static_cast<UpdateCount>(t.task_data_steps) * (trunk + layout.cl_head_scalars);
    total += static_cast<UpdateCount>(t.rem_steps) * (trunk + layout.dream_head_scalars);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Stream driver
// ---------------------------------------------------------------------------

RunRecord run_stream(const TaskStream& stream, const DreamSource* dream, const ArchConfig& arch_in,
                     const WsclConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t T = stream.num_tasks();
  if (T == 0) throw Error(ErrorCode::InvalidArgument, "stream has no tasks");
  const std::size_t C = stream.num_classes();

  ArchConfig arch = arch_in;
  arch.num_classes = C;
  arch.input_spec = stream.tasks.front().sample_shape;

  RunRecord record;
  record.seed = seed;
  record.config = cfg;
  record.arch = arch;
  record.class_il = AccuracyMatrix(T);
  record.task_il = AccuracyMatrix(T);

  EvalSuite suite;
  std::vector<LabeledDataset> train;
  for (std::size_t t = 0; t < T; ++t) {
    train.push_back(remap_labels(stream.tasks[t], stream.global_class_map, C));
    suite.tests.push_back(remap_labels(stream.test_tasks[t], stream.global_class_map, C));
    suite.task_outputs.push_back(stream.task_outputs(t));
  }

  LayeredClassifier model(arch, derive_seed(seed, "model.init"));
  const bool use_rem = cfg.regime == Regime::Wscl && cfg.stages.rem && cfg.sleep_epochs > 0;
  std::optional<DreamCursor> dreams;
  if (use_rem) {
    if (!dream || dream->dataset.size() == 0) throw Error(ErrorCode::Config, "REM stage enabled without a dream source");
    check_disjoint(stream, *dream);
    const auto dream_map = dream->class_map();
    model.extend_head(dream_map.size(), derive_seed(seed, "dream_head.init"));
    dreams.emplace(remap_labels(dream->dataset, dream_map, dream_map.size()), derive_seed(seed, "dream.order"));
  }
  record.layout.cl_head_scalars = model.cl_head().scalar_count();
  for (const auto& g : model.blocks()) record.layout.block_scalars.push_back(g.scalar_count());
  if (model.has_dream_head()) record.layout.dream_head_scalars = model.dream_head().scalar_count();

  record.random_init_accuracies = evaluate_matrix_row(model, suite, 0, EvalMode::ClassIL);

  if (cfg.regime == Regime::Joint) {
    TaskContext ctx;
    ctx.task_index = 0;
    ctx.seed = seed;
    ctx.seen_classes.assign(C, 1);
    for (std::size_t c = 0; c < C; ++c) ctx.current_classes.push_back(static_cast<int>(c));
    LongTermMemory none;
    const auto res = train_plain_task(model, concat(train), none, cfg.method, cfg, ctx, cfg.effective_baseline_epochs());
    for (std::size_t t = 0; t < T; ++t) {
      record.class_il.set_row(t, evaluate_matrix_row(model, suite, T - 1, EvalMode::ClassIL));
      record.task_il.set_row(t, evaluate_matrix_row(model, suite, T - 1, EvalMode::TaskIL));
      TaskOutcome outcome;
      outcome.task_index = t;
      outcome.theta_digest = model.digest();
      if (t == T - 1) {
        outcome.update_count = res.updates;
        outcome.task_data_steps = res.steps;
        outcome.theta_checkpoint = model;
      }
      record.tasks.push_back(std::move(outcome));
    }
  } else {
    LongTermMemory ltm;
    ltm.capacity = cfg.regime == Regime::FineTune ? 0 : cfg.long_term_capacity;
    FreezeMask mask{cfg.initial_depth, -1};
    if (mask.depth > model.num_blocks()) throw Error(ErrorCode::Config, "initial_depth exceeds block count");
    model.apply_mask(mask);
    ClassMask seen(C, 0);
    const MethodSpec method = cfg.regime == Regime::FineTune ? MethodSpec{MethodKind::Er, 0.0f, 0.0f} : cfg.method;

    for (std::size_t t = 0; t < T; ++t) {
      TaskContext ctx;
      ctx.task_index = t;
      ctx.seed = seed;
      ctx.current_classes = suite.task_outputs[t];
      for (int c : ctx.current_classes) seen[static_cast<std::size_t>(c)] = 1;
      ctx.seen_classes = seen;

      TaskOutcome outcome;
      outcome.task_index = t;
      try {
        if (cfg.regime == Regime::Wscl) {
          WakeResult wake = wake_phase(model, train[t], ltm, mask, cfg, ctx);
          model = std::move(wake.model);
          mask = wake.mask;
          outcome.candidates = std::move(wake.candidates);
          outcome.wake_steps = wake.steps;
          outcome.search_update_count = wake.search_updates;
          outcome.update_count = wake.updates;
          const bool sleeping = (cfg.stages.nrem || cfg.stages.rem) && cfg.sleep_epochs > 0;
          if (sleeping) {
            const SleepResult sleep = sleep_phase(model, wake.stm, ltm, wake.partition.wake_slots,
                                                  dreams ? &*dreams : nullptr, cfg, ctx);
            outcome.nrem_steps = sleep.nrem_steps;
            outcome.rem_steps = sleep.rem_steps;
            outcome.update_count += sleep.updates;
            outcome.sleep_schedule = sleep.schedule;
          }
          outcome.task_data_steps = outcome.wake_steps + outcome.nrem_steps;
        } else {
          const auto res = train_plain_task(model, train[t], ltm, method, cfg, ctx, cfg.effective_baseline_epochs());
          outcome.update_count = res.updates;
          outcome.task_data_steps = res.steps;
        }
        record.class_il.set_row(t, evaluate_matrix_row(model, suite, t, EvalMode::ClassIL));
        record.task_il.set_row(t, evaluate_matrix_row(model, suite, t, EvalMode::TaskIL));
      } catch (const Error& e) {
        throw Error(e.code(), "task " + std::to_string(t + 1) + ": " + e.detail());
      }
      outcome.accepted_mask = model.mask();
      outcome.accepted_mask.task_index = static_cast<int>(t);
      outcome.theta_digest = model.digest();
      outcome.theta_checkpoint = model;
      outcome.ltm_size = ltm.items.size();
      record.tasks.push_back(std::move(outcome));
    }
  }

  for (const auto& t : record.tasks) record.total_updates += t.update_count;

  if (cfg.compute_fwt && T >= 2 && cfg.regime != Regime::Joint && cfg.fwt_mode == FwtMode::PostTask) {
    for (std::size_t t = 0; t < T; ++t) {
      record.scratch_accuracies.push_back(
          scratch_accuracy(arch, suite, train[t], t, record.tasks[t].task_data_steps + record.tasks[t].rem_steps, cfg, seed));
    }
  }

  auto fill = [&](MetricsReport& m, const AccuracyMatrix& r, EvalMode mode) {
    m.eval_mode = mode;
    m.faa = faa(r);
    m.per_task_accuracies = r.row(T - 1);
    m.update_count = record.total_updates;
    if (T >= 2) {
      m.forgetting = forgetting(r);
      if (cfg.compute_fwt && cfg.regime != Regime::Joint) {
        if (cfg.fwt_mode == FwtMode::ZeroShot) {
          if (mode == EvalMode::ClassIL) m.fwt = fwt(r, {}, record.random_init_accuracies, FwtMode::ZeroShot);
        } else if (mode == EvalMode::ClassIL) {
          m.fwt = fwt(r, record.scratch_accuracies, {}, FwtMode::PostTask);
        }
      }
    }
  };
  fill(record.metrics, record.class_il, EvalMode::ClassIL);
  fill(record.metrics_task_il, record.task_il, EvalMode::TaskIL);
  return record;
}

}  // namespace wscl
