#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "puicl/model.hpp"
#include "puicl/pusplit.hpp"

namespace puicl {

/// Labels use 1 = positive, 0 = negative throughout.

/// Mann-Whitney AUC by rank sum with midranks for ties. Throws MetricError
/// when truth holds a single class or lengths differ.
double auc(std::span<const double> scores, std::span<const int> truth);

/// Predicts positive iff score >= threshold.
std::vector<int> classify(std::span<const double> scores, double threshold = 0.5);

double accuracy(std::span<const int> pred, std::span<const int> truth);
/// 0 when there are no true positives.
double f1(std::span<const int> pred, std::span<const int> truth);

struct ConfusionCounts {
  std::size_t positives = 0;  // n_u+
  std::size_t negatives = 0;  // n_u-
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

ConfusionCounts confusion(std::span<const int> pred, std::span<const int> truth);

struct MetricsReport {
  double auc = 0;
  double acc = 0;
  double f1 = 0;
  ConfusionCounts counts;
  double threshold = 0.5;
};

MetricsReport evaluate(std::span<const double> scores, std::span<const int> truth, double threshold = 0.5);

/// A preprocessed numeric benchmark table with 0/1 labels.
struct BenchmarkDataset {
  std::string name;
  RowMatrix x;
  std::vector<int> labels;  // raw 0/1 values from the file
};

inline constexpr std::size_t kBenchmarkMaxPositives = 600;

struct BenchmarkTask {
  PuInstance instance;
  int positive_label = 0;             // raw label treated as the positive class
  std::size_t available_positives = 0;
  std::size_t available_negatives = 0;
  std::size_t negative_shortfall = 0;  // unlabeled negatives missing for pi = 0.5
};

/// Majority class (ties: lower label) becomes positive; up to 600 positives
/// are split 1:2 into labeled and unlabeled, and unlabeled negatives match
/// the unlabeled positives when available. Throws DegenerateSampleError when fewer
/// than 3 positives or no negatives exist.
BenchmarkTask build_benchmark_task(const BenchmarkDataset& dataset, Rng& rng);

struct TaskSummary {
  std::string dataset;
  std::vector<MetricsReport> repeats;
  double auc_mean = 0, auc_std = 0;
  double acc_mean = 0, acc_std = 0;
  double f1_mean = 0, f1_std = 0;
  std::size_t negative_shortfall = 0;  // largest over repeats
  std::string error;                   // non-empty when the task failed

  bool ok() const { return error.empty(); }
};

struct BenchmarkReport {
  std::vector<TaskSummary> tasks;
  TaskSummary average;  // arithmetic mean over successful tasks, dataset "average"
  std::uint64_t seed = 0;
  int repeats = 0;
};

/// Fills the mean/std fields (sample std, 0 for a single repeat).
void summarize(TaskSummary& task);

/// Each task x repeat rebuilds the PU split from seed-derived streams,
/// runs predict_proba and scores it. Task failures are recorded and the
/// run continues.
BenchmarkReport run_benchmark(const ModelParams<float>& params, const std::vector<BenchmarkDataset>& datasets,
                              int repeats, std::uint64_t seed);

/// Logistic regression fitted by full-batch gradient descent with labeled
/// rows as positives and every unlabeled row as negative. Deterministic.
/// Returns positive-class probabilities for the unlabeled rows.
std::vector<double> naive_baseline(const PuInstance& instance);

}  // namespace puicl
