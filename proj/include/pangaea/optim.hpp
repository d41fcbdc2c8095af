#pragma once

#include <cstddef>
#include <vector>

#include "pangaea/tensor.hpp"

namespace pangaea {

struct AdamWConfig {
  double lr = 2e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

// Decoupled weight decay Adam. Parameters absent from a gradient set are
// left untouched, moments included.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig config);

  void step(const Gradients& grads, double lr);
  // One buffer per parameter, in construction order; empty buffers are skipped.
  void step(const std::vector<std::vector<double>>& grads, double lr);

  const AdamWConfig& config() const noexcept { return config_; }
  const std::vector<Tensor>& params() const noexcept { return params_; }
  std::size_t steps() const noexcept { return steps_; }
  const std::vector<std::vector<double>>& first_moments() const noexcept { return m_; }
  const std::vector<std::vector<double>>& second_moments() const noexcept { return v_; }
  // Per-parameter update counts used for bias correction.
  const std::vector<std::size_t>& update_counts() const noexcept { return updates_; }
  void restore(std::size_t steps, std::vector<std::size_t> updates,
               std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

 private:
  void update(std::size_t index, std::span<const double> g, double lr);

  std::vector<Tensor> params_;
  AdamWConfig config_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> m_, v_;
  std::vector<std::size_t> updates_;
};

// Linear warmup over ceil(warmup_ratio * total_steps) steps, then cosine
// decay to zero with `cycles` hard restarts.
struct ScheduleConfig {
  std::size_t total_steps = 1;
  double warmup_ratio = 0.03;
  std::size_t cycles = 1;

  std::size_t warmup_steps() const;
  void validate() const;
};

double lr_at(std::size_t step, const ScheduleConfig& schedule, double base_lr);

}  // namespace pangaea
