#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wscl/data.hpp"
#include "wscl/model.hpp"

namespace wscl {

enum class EvalMode { ClassIL, TaskIL };
enum class FwtMode { PostTask, ZeroShot };

std::string to_string(EvalMode mode);
std::string to_string(FwtMode mode);
FwtMode fwt_mode_from_string(const std::string& name);

/// R[t][i]: test accuracy on task i after finishing training on task t.
class AccuracyMatrix {
public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(std::size_t tasks);

  std::size_t tasks() const noexcept { return values_.size(); }
  bool has(std::size_t t, std::size_t i) const;
  double at(std::size_t t, std::size_t i) const;
  void set(std::size_t t, std::size_t i, double accuracy);
  void set_row(std::size_t t, std::span<const double> row);
  std::vector<double> row(std::size_t t) const;

  /// CSV with a header row and column of 1-based task ids; empty cells mark
  /// entries that were not evaluated.
  std::string to_csv() const;

private:
  std::vector<std::vector<std::optional<double>>> values_;
};

struct MetricsReport {
  EvalMode eval_mode = EvalMode::ClassIL;
  double faa = 0.0;
  std::optional<double> fwt;
  std::optional<double> forgetting;
  std::vector<double> per_task_accuracies;
  std::uint64_t update_count = 0;
};

/// Test sets with labels already mapped to head outputs, plus the output
/// indices owned by each task.
struct EvalSuite {
  std::vector<LabeledDataset> tests;
  std::vector<std::vector<int>> task_outputs;

  std::size_t tasks() const noexcept { return tests.size(); }
  std::size_t num_outputs() const;
};

/// Fraction of samples whose argmax over the allowed outputs equals the label.
double masked_accuracy(const LayeredClassifier& model, const LabeledDataset& test, const ClassMask& allowed);

/// Row t of R. Class-IL takes the argmax over the outputs of every task up to
/// max(t, i); task-IL restricts it to task i's own outputs.
std::vector<double> evaluate_matrix_row(const LayeredClassifier& model, const EvalSuite& suite, std::size_t t,
                                        EvalMode mode);

/// Class-IL restriction used for row t, column i.
ClassMask class_il_mask(const EvalSuite& suite, std::size_t t, std::size_t i);

/// Mean of the last row.
double faa(const AccuracyMatrix& r);

/// PostTask: mean over tasks i >= 2 of R[i][i] - scratch[i].
/// ZeroShot: mean over tasks i >= 2 of R[i-1][i] - random_init[i].
/// Throws InvalidArgument when fewer than two tasks exist.
double fwt(const AccuracyMatrix& r, std::span<const double> scratch, std::span<const double> random_init, FwtMode mode);

/// Mean over i < T of max_{t in [i, T-1]} R[t][i] - R[T-1][i].
double forgetting(const AccuracyMatrix& r);

}  // namespace wscl
