#include "pangaea/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "pangaea/error.hpp"

namespace pangaea {

void EvalBatch::validate() const {
  require(!y.empty(), ErrorKind::Contract, "evaluation batch is empty");
  require(y.size() == y_hat.size(), ErrorKind::Contract,
          "evaluation batch has " + std::to_string(y.size()) + " targets but " +
              std::to_string(y_hat.size()) + " predictions");
}

double metric_acc(const EvalBatch& b) {
  b.validate();
  std::size_t hit = 0;
  for (std::size_t i = 0; i < b.y.size(); ++i) hit += b.y[i] == b.y_hat[i];
  return static_cast<double>(hit) / static_cast<double>(b.y.size());
}

namespace {

struct Counts {
  std::size_t both = 0, actual = 0, predicted = 0;
};

Counts count_class(const EvalBatch& b, double c) {
  Counts k;
  for (std::size_t i = 0; i < b.y.size(); ++i) {
    const bool a = b.y[i] == c, p = b.y_hat[i] == c;
    k.both += a && p;
    k.actual += a;
    k.predicted += p;
  }
  return k;
}

}  // namespace

F1Result metric_f1(const EvalBatch& b, F1Average average) {
  b.validate();
  if (average == F1Average::Binary) {
    auto k = count_class(b, 1.0);
    if (k.actual + k.predicted == 0) return {0.0, true};
    return {2.0 * static_cast<double>(k.both) / static_cast<double>(k.actual + k.predicted), false};
  }
  std::map<double, std::size_t> support;
  for (double v : b.y) ++support[v];
  F1Result out;
  for (const auto& [c, n] : support) {
    auto k = count_class(b, c);
    const double f1 = 2.0 * static_cast<double>(k.both) / static_cast<double>(k.actual + k.predicted);
    out.value += f1 * static_cast<double>(n);
  }
  out.value /= static_cast<double>(b.y.size());
  return out;
}

double metric_mse(const EvalBatch& b) {
  b.validate();
  double s = 0.0;
  for (std::size_t i = 0; i < b.y.size(); ++i) s += (b.y[i] - b.y_hat[i]) * (b.y[i] - b.y_hat[i]);
  return s / static_cast<double>(b.y.size());
}

double metric_mae(const EvalBatch& b) {
  b.validate();
  double s = 0.0;
  for (std::size_t i = 0; i < b.y.size(); ++i) s += std::abs(b.y[i] - b.y_hat[i]);
  return s / static_cast<double>(b.y.size());
}

double metric_rmse(const EvalBatch& b) { return std::sqrt(metric_mse(b)); }

double metric_auc(const EvalBatch& b) {
  b.validate();
  std::vector<std::size_t> order(b.y.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return b.y_hat[i] < b.y_hat[j]; });
  std::size_t pos = 0, neg = 0, pairs = 0, below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i, group_neg = 0;
    for (; j < order.size() && b.y_hat[order[j]] == b.y_hat[order[i]]; ++j) {
      const double label = b.y[order[j]];
      require(label == 0.0 || label == 1.0, ErrorKind::Contract, "AUC labels must be 0 or 1");
      if (label == 1.0) {
        ++pos;
        pairs += below;
      } else {
        ++group_neg;
      }
    }
    neg += group_neg;
    below += group_neg;
    i = j;
  }
  require(pos > 0 && neg > 0, ErrorKind::UndefinedMetric,
          "AUC needs at least one positive and one negative");
  return static_cast<double>(pairs) / (static_cast<double>(pos) * static_cast<double>(neg));
}

double percentage(double x, double x0, Direction direction) {
  require(x0 != 0.0, ErrorKind::Contract, "percentage baseline must be nonzero");
  const double delta = direction == Direction::HigherBetter ? x - x0 : x0 - x;
  return delta / x0 * 100.0 + 100.0;
}

double improvement(double x, double x0, Direction direction) {
  return percentage(x, x0, direction) - 100.0;
}

std::vector<double> minmax_norm(std::span<const double> xs) {
  require(!xs.empty(), ErrorKind::Contract, "minmax_norm of an empty list");
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  require(*hi > *lo, ErrorKind::Degenerate, "minmax_norm of a constant list");
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = (xs[i] - *lo) / (*hi - *lo);
  return out;
}

SignedNorm signed_norm(std::span<const double> xs, double x0) {
  require(!xs.empty(), ErrorKind::Contract, "signed_norm of an empty list");
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  SignedNorm out;
  out.values.resize(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double x = xs[i];
    if (x < x0) {
      if (*lo == x0) {
        out.degenerate_low = true;
        out.values[i] = 0.0;
      } else {
        out.values[i] = -(x - x0) / (*lo - x0);
      }
    } else if (*hi == x0) {
      out.degenerate_high = true;
      out.values[i] = 0.0;
    } else {
      out.values[i] = (x - x0) / (*hi - x0);
    }
  }
  return out;
}

}  // namespace pangaea
