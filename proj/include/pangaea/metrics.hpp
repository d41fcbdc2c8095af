#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace pangaea {

enum class TaskKind { Classification, Regression, RankingScore };

struct EvalBatch {
  std::vector<double> y;
  std::vector<double> y_hat;
  TaskKind kind = TaskKind::Classification;

  void validate() const;
};

double metric_acc(const EvalBatch& b);

enum class F1Average { Binary, Weighted };

struct F1Result {
  double value = 0.0;
  // Set when some denominator was zero and its F1 was taken as 0.
  bool zero_denominator = false;
};

// Binary: 2·#(y=1 ∧ ŷ=1) / (#(y=1) + #(ŷ=1)). Weighted: one-vs-rest F1 per
// class present in y, averaged with weights equal to class support.
F1Result metric_f1(const EvalBatch& b, F1Average average = F1Average::Binary);

double metric_mse(const EvalBatch& b);
double metric_mae(const EvalBatch& b);
double metric_rmse(const EvalBatch& b);

// Pairwise AUC with strict comparison: ties between a positive and a negative count 0.
double metric_auc(const EvalBatch& b);

enum class Direction { HigherBetter, LowerBetter };

double percentage(double x, double x0, Direction direction);
double improvement(double x, double x0, Direction direction);

std::vector<double> minmax_norm(std::span<const double> xs);

struct SignedNorm {
  std::vector<double> values;
  // Members below x0 exist but min == x0, or members above x0 exist but max == x0.
  bool degenerate_low = false;
  bool degenerate_high = false;

  bool flagged() const noexcept { return degenerate_low || degenerate_high; }
};

SignedNorm signed_norm(std::span<const double> xs, double x0);

}  // namespace pangaea
