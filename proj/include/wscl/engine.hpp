#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wscl/data.hpp"
#include "wscl/memory.hpp"
#include "wscl/methods.hpp"
#include "wscl/metrics.hpp"
#include "wscl/model.hpp"
#include "wscl/optim.hpp"

namespace wscl {

struct StageFlags {
  bool wake_search = true;
  bool nrem = true;
  bool rem = true;

  bool operator==(const StageFlags&) const = default;
};

/// Table-4 style label: "Only Wake", "Wake+REM", "Wake+NREM", "Wake+REM+NREM".
std::string stage_label(const StageFlags& stages);

/// How a run trains on the stream.
///  - Wscl:     wake (mask search) + sleep (NREM/REM) per task.
///  - Plain:    the rehearsal method alone, `baseline_epochs` epochs per task.
///  - FineTune: plain cross-entropy, no buffer.
///  - Joint:    one model trained on the union of all tasks.
enum class Regime { Wscl, Plain, FineTune, Joint };

std::string to_string(Regime regime);
Regime regime_from_string(const std::string& name);

struct WsclConfig {
  Regime regime = Regime::Wscl;
  std::size_t wake_epochs = 1;
  std::size_t sleep_epochs = 10;
  float lr = 0.03f;
  std::size_t batch_size = 32;
  /// Weight of the long-term-memory term in the wake and NREM losses.
  float alpha = 1.0f;
  std::size_t short_term_capacity = 5000;
  std::size_t long_term_capacity = 200;
  /// Share of the long-term buffer reserved for the wake loss.
  double wake_view_ratio = 0.10;
  /// Candidates are ranked by their mean loss over this trailing share of
  /// wake batches.
  double selection_tail = 0.10;
  StageFlags stages;
  MethodSpec method;
  FwtMode fwt_mode = FwtMode::PostTask;
  /// Depth of the mask in force before task 1.
  std::size_t initial_depth = 0;
  bool parallel_candidates = false;
  bool compute_fwt = true;
  /// Epochs per task for the Plain/FineTune/Joint regimes; 0 means
  /// wake_epochs + sleep_epochs so budgets match the WSCL schedule.
  std::size_t baseline_epochs = 0;

  std::size_t effective_baseline_epochs() const noexcept {
    return baseline_epochs ? baseline_epochs : wake_epochs + sleep_epochs;
  }
  void validate() const;
};

/// Per-task inputs shared by every stage.
struct TaskContext {
  std::size_t task_index = 0;
  std::vector<int> current_classes;
  ClassMask seen_classes;
  std::uint64_t seed = 0;
};

struct StepResult {
  double loss = 0.0;
  UpdateCount updates = 0;
};

struct CandidateResult {
  std::size_t depth = 0;
  /// Mean loss over the trailing selection window.
  double selection_loss = 0.0;
  double mean_loss = 0.0;
  std::size_t steps = 0;
  UpdateCount updates = 0;
};

struct WakeResult {
  LayeredClassifier model;
  FreezeMask mask;
  ShortTermMemory stm;
  LtmPartition partition;
  std::vector<CandidateResult> candidates;
  std::size_t winner = 0;
  /// Steps and updates of the accepted candidate only.
  std::size_t steps = 0;
  UpdateCount updates = 0;
  /// Updates spent on every candidate, winner included.
  UpdateCount search_updates = 0;
};

/// Fills the short-term memory, splits the long-term memory, trains one clone
/// per candidate mask for wake_epochs on the task data (plus alpha times the
/// replay loss on the wake view) and keeps the clone with the lowest
/// trailing-window loss. Ties go to the deeper mask.
WakeResult wake_phase(const LayeredClassifier& model, const LabeledDataset& task_data, const LongTermMemory& ltm,
                      const FreezeMask& prev_mask, const WsclConfig& cfg, const TaskContext& ctx);

/// Trains one wake candidate; exposed so tests can brute-force the search.
CandidateResult train_wake_candidate(LayeredClassifier& model, std::size_t depth, const LabeledDataset& task_data,
                                     std::span<const MemoryItem> wake_view, const WsclConfig& cfg,
                                     const TaskContext& ctx);

/// One SGD step on method loss(short-term batch) + alpha * method loss(long-term
/// batch). When `insert_into` is given, the short-term items are offered to
/// the reservoir afterwards, carrying the logits the network produced for them
/// before the step.
StepResult nrem_step(LayeredClassifier& model, std::span<const MemoryItem> stm_batch,
                     std::span<const MemoryItem> ltm_batch, const MethodSpec& method, float alpha, Sgd& opt,
                     const TaskContext& ctx, LongTermMemory* insert_into = nullptr, Rng* rng = nullptr);

/// One SGD step of cross-entropy on the dream head. Only the trunk's unfrozen
/// blocks and the dream head are updated.
StepResult rem_step(LayeredClassifier& model, const Tensor& dream_batch, std::span<const int> dream_labels, Sgd& opt);

/// Endless reshuffled pass over the dream dataset (labels already mapped to
/// dream-head outputs).
class DreamCursor {
public:
  DreamCursor(LabeledDataset mapped, std::uint64_t seed);

  std::vector<std::size_t> next(std::size_t k);
  const LabeledDataset& data() const noexcept { return data_; }

private:
  void reshuffle();

  LabeledDataset data_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

struct SleepResult {
  std::size_t nrem_steps = 0;
  std::size_t rem_steps = 0;
  UpdateCount updates = 0;
  std::size_t reservoir_offers = 0;
  /// One string per epoch, 'N' for an NREM batch and 'R' for a REM batch.
  std::vector<std::string> schedule;
  double mean_nrem_loss = 0.0;
  double mean_rem_loss = 0.0;
};

/// sleep_epochs passes over the short-term memory. Each epoch runs
/// ceil(|M_s| / batch_size) batches per enabled stage, strictly alternating
/// NREM and REM. Reservoir insertions happen during the first epoch only.
/// NREM replay draws from every buffer slot outside `wake_slots`, so items
/// stored earlier in the same sleep phase are replayed too.
SleepResult sleep_phase(LayeredClassifier& model, const ShortTermMemory& stm, LongTermMemory& ltm,
                        std::span<const std::size_t> wake_slots, DreamCursor* dreams, const WsclConfig& cfg,
                        const TaskContext& ctx);

struct TaskOutcome {
  std::size_t task_index = 0;
  FreezeMask accepted_mask;
  std::optional<LayeredClassifier> theta_checkpoint;
  std::uint64_t theta_digest = 0;
  UpdateCount update_count = 0;
  UpdateCount search_update_count = 0;
  std::vector<CandidateResult> candidates;
  std::size_t wake_steps = 0;
  std::size_t nrem_steps = 0;
  std::size_t rem_steps = 0;
  /// Optimizer steps on the continual-learning head (wake + NREM, or every
  /// step of a baseline). Adding rem_steps gives the budget of the
  /// from-scratch FWT reference.
  std::size_t task_data_steps = 0;
  std::vector<std::string> sleep_schedule;
  std::size_t ltm_size = 0;
};

struct ParameterLayout {
  std::vector<std::size_t> block_scalars;
  std::size_t cl_head_scalars = 0;
  std::size_t dream_head_scalars = 0;
};

struct RunRecord {
  std::uint64_t seed = 0;
  WsclConfig config;
  ArchConfig arch;
  ParameterLayout layout;
  std::vector<TaskOutcome> tasks;
  AccuracyMatrix class_il;
  AccuracyMatrix task_il;
  std::vector<double> scratch_accuracies;
  std::vector<double> random_init_accuracies;
  MetricsReport metrics;
  MetricsReport metrics_task_il;
  UpdateCount total_updates = 0;
};

/// Recomputes the number of scalar updates from step counts, accepted depths
/// and the parameter layout alone.
UpdateCount recompute_update_count(const RunRecord& record);

/// Trains on the stream under cfg.regime and evaluates after every task.
/// `dream` may be null when REM is disabled or the regime is not Wscl.
RunRecord run_stream(const TaskStream& stream, const DreamSource* dream, const ArchConfig& arch, const WsclConfig& cfg,
                     std::uint64_t seed);

/// Accuracy on task `task` of a fresh model trained only on that task for
/// `steps` SGD steps of cross-entropy over the classes of tasks 1..task.
double scratch_accuracy(const ArchConfig& arch, const EvalSuite& suite, const LabeledDataset& mapped_train,
                        std::size_t task, std::size_t steps, const WsclConfig& cfg, std::uint64_t seed);

}  // namespace wscl
