#include "wscl/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "wscl/error.hpp"

namespace wscl {

std::string to_string(EvalMode mode) { return mode == EvalMode::ClassIL ? "class-il" : "task-il"; }
std::string to_string(FwtMode mode) { return mode == FwtMode::PostTask ? "post_task" : "zero_shot"; }

FwtMode fwt_mode_from_string(const std::string& name) {
  if (name == "post_task") return FwtMode::PostTask;
  if (name == "zero_shot") return FwtMode::ZeroShot;
  throw Error(ErrorCode::Config, "unknown fwt mode '" + name + "'");
}

AccuracyMatrix::AccuracyMatrix(std::size_t tasks) : values_(tasks, std::vector<std::optional<double>>(tasks)) {}

bool AccuracyMatrix::has(std::size_t t, std::size_t i) const {
  return t < values_.size() && i < values_.size() && values_[t][i].has_value();
}

double AccuracyMatrix::at(std::size_t t, std::size_t i) const {
  if (!has(t, i)) {
    throw Error(ErrorCode::State, "accuracy R[" + std::to_string(t) + "][" + std::to_string(i) + "] not populated");
  }
  return *values_[t][i];
}

void AccuracyMatrix::set(std::size_t t, std::size_t i, double accuracy) {
  if (t >= values_.size() || i >= values_.size()) throw Error(ErrorCode::Dimension, "accuracy index out of range");
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) throw Error(ErrorCode::InvalidArgument, "accuracy outside [0,1]");
  values_[t][i] = accuracy;
}

void AccuracyMatrix::set_row(std::size_t t, std::span<const double> row) {
  if (row.size() != values_.size()) throw Error(ErrorCode::Dimension, "row length does not match task count");
  for (std::size_t i = 0; i < row.size(); ++i) set(t, i, row[i]);
}

std::vector<double> AccuracyMatrix::row(std::size_t t) const {
  std::vector<double> out;
  for (std::size_t i = 0; i < values_.size(); ++i) out.push_back(at(t, i));
  return out;
}

std::string AccuracyMatrix::to_csv() const {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << "after_task";
  for (std::size_t i = 0; i < values_.size(); ++i) out << ",task_" << (i + 1);
  out << '\n';
  for (std::size_t t = 0; t < values_.size(); ++t) {
    out << (t + 1);
    for (std::size_t i = 0; i < values_.size(); ++i) {
      out << ',';
      if (values_[t][i]) out << *values_[t][i];
    }
    out << '\n';
  }
  return out.str();
}

std::size_t EvalSuite::num_outputs() const { return tests.empty() ? 0 : tests.front().num_classes; }

double masked_accuracy(const LayeredClassifier& model, const LabeledDataset& test, const ClassMask& allowed) {
  if (test.size() == 0) throw Error(ErrorCode::EmptyInput, "empty test set");
  NoGradGuard no_grad;
  constexpr std::size_t kChunk = 256;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < test.size(); start += kChunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(test.size(), start + kChunk); ++i) idx.push_back(i);
    const Tensor logits = model.forward(gather_batch(test, idx), HeadSelector::Cl);
    const std::size_t C = logits.dim(1);
    if (allowed.size() != C) throw Error(ErrorCode::Dimension, "evaluation mask does not match head");
    auto data = logits.data();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      int best = -1;
      float best_value = 0.0f;
      for (std::size_t c = 0; c < C; ++c) {
        if (!allowed[c]) continue;
        const float v = data[r * C + c];
        if (best < 0 || v > best_value) {
          best = static_cast<int>(c);
          best_value = v;
        }
      }
      if (best == test.labels[idx[r]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

ClassMask class_il_mask(const EvalSuite& suite, std::size_t t, std::size_t i) {
  ClassMask mask(suite.num_outputs(), 0);
  const std::size_t last = std::max(t, i);
  for (std::size_t k = 0; k <= last && k < suite.tasks(); ++k) {
    for (int c : suite.task_outputs[k]) mask[static_cast<std::size_t>(c)] = 1;
  }
  return mask;
}

std::vector<double> evaluate_matrix_row(const LayeredClassifier& model, const EvalSuite& suite, std::size_t t,
                                        EvalMode mode) {
  if (t >= suite.tasks()) throw Error(ErrorCode::InvalidArgument, "row index beyond task count");
  std::vector<double> row;
  for (std::size_t i = 0; i < suite.tasks(); ++i) {
    ClassMask mask;
    if (mode == EvalMode::ClassIL) {
      mask = class_il_mask(suite, t, i);
    } else {
      if (suite.task_outputs[i].empty()) throw Error(ErrorCode::InvalidArgument, "task-IL needs task identities");
      mask.assign(suite.num_outputs(), 0);
      for (int c : suite.task_outputs[i]) mask[static_cast<std::size_t>(c)] = 1;
    }
    row.push_back(masked_accuracy(model, suite.tests[i], mask));
  }
  return row;
}

double faa(const AccuracyMatrix& r) {
  if (r.tasks() == 0) throw Error(ErrorCode::InvalidArgument, "empty accuracy matrix");
  const auto last = r.row(r.tasks() - 1);
  return std::accumulate(last.begin(), last.end(), 0.0) / static_cast<double>(last.size());
}

double fwt(const AccuracyMatrix& r, std::span<const double> scratch, std::span<const double> random_init, FwtMode mode) {
  const std::size_t T = r.tasks();
  if (T < 2) throw Error(ErrorCode::InvalidArgument, "forward transfer needs at least two tasks");
  double acc = 0.0;
  for (std::size_t i = 1; i < T; ++i) {
    if (mode == FwtMode::PostTask) {
      if (scratch.size() != T) throw Error(ErrorCode::Dimension, "need one scratch accuracy per task");
      acc += r.at(i, i) - scratch[i];
    } else {
      if (random_init.size() != T) throw Error(ErrorCode::Dimension, "need one random-init accuracy per task");
      acc += r.at(i - 1, i) - random_init[i];
    }
  }
  return acc / static_cast<double>(T - 1);
}

double forgetting(const AccuracyMatrix& r) {
  const std::size_t T = r.tasks();
  if (T < 2) throw Error(ErrorCode::InvalidArgument, "forgetting needs at least two tasks");
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < T; ++i) {
    double best = r.at(i, i);
    for (std::size_t t = i; t < T; ++t) best = std::max(best, r.at(t, i));
    acc += best - r.at(T - 1, i);
  }
  return acc / static_cast<double>(T - 1);
}

}  // namespace wscl
