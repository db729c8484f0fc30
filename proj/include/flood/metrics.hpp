#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "flood/tensor.hpp"

namespace flood {

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes = 0);
  ConfusionMatrix(int classes, std::vector<std::int64_t> counts);

  int classes() const { return k_; }
  void add(int truth, int predicted, std::int64_t n = 1);
  std::int64_t at(int truth, int predicted) const { return counts_[static_cast<std::size_t>(truth * k_ + predicted)]; }
  std::int64_t total() const;
  std::int64_t trace() const;
  std::int64_t row_sum(int truth) const;
  std::int64_t col_sum(int predicted) const;
  const std::vector<std::int64_t>& counts() const { return counts_; }

  // Additive merge of shard results.
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  int k_;
  std::vector<std::int64_t> counts_;
};

struct ClassMetrics {
  double precision = 0, recall = 0, f1 = 0;
  std::int64_t support = 0;  // true instances
};

struct MetricsReport {
  double accuracy = 0;
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  double mcc = 0;
  std::vector<ClassMetrics> per_class;
  // Number of 0/0 ratios that were reported as 0.
  int zero_divisions = 0;
};

// Multiclass MCC (R_K); 0 when the denominator vanishes.
double mcc(const ConfusionMatrix& cm);

// Throws InvalidArgument for an empty matrix.
MetricsReport compute_metrics(const ConfusionMatrix& cm);

// Index of the row maximum; ties go to the lowest index.
int argmax(std::span<const float> row);

// probabilities [N,K] against labels.
ConfusionMatrix confusion_from_probabilities(const Tensor<float>& probabilities, std::span<const int> labels);

// Unweighted mean of member probabilities [N,K]. Each element is summed in
// sorted order, so the result does not depend on member order.
Tensor<float> ensemble_soft_vote(const std::vector<Tensor<float>>& members);
// Majority class per row as a one-hot table; ties to the lowest class index.
Tensor<float> ensemble_hard_vote(const std::vector<Tensor<float>>& members);

}  // namespace flood
