#include "pangaea/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "pangaea/error.hpp"

namespace pangaea {

void AdamWConfig::validate() const {
  require(lr > 0.0, ErrorKind::Config, "learning rate must be positive");
  require(weight_decay >= 0.0, ErrorKind::Config, "weight decay must be non-negative");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorKind::Config,
          "betas must lie in [0,1)");
  require(eps > 0.0, ErrorKind::Config, "eps must be positive");
}

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  config_.validate();
  for (const auto& p : params_) {
    require(p.is_leaf(), ErrorKind::Contract, "AdamW only updates leaf tensors");
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
  updates_.assign(params_.size(), 0);
}

void AdamW::update(std::size_t index, std::span<const double> g, double lr) {
  auto w = params_[index].mutable_data();
  require(g.size() == w.size(), ErrorKind::Contract, "gradient size differs from parameter");
  auto& m = m_[index];
  auto& v = v_[index];
  const std::size_t t = ++updates_[index];
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  const double decay = 1.0 - lr * config_.weight_decay;
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    w[i] *= decay;
    w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
  }
}

void AdamW::step(const Gradients& grads, double lr) {
  ++steps_;
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (grads.contains(params_[i])) update(i, grads.of(params_[i]), lr);
}

void AdamW::step(const std::vector<std::vector<double>>& grads, double lr) {
  require(grads.size() == params_.size(), ErrorKind::Contract,
          "one gradient buffer per parameter required");
  ++steps_;
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (!grads[i].empty()) update(i, grads[i], lr);
}

void AdamW::restore(std::size_t steps, std::vector<std::size_t> updates,
                    std::vector<std::vector<double>> m, std::vector<std::vector<double>> v) {
  require(m.size() == params_.size() && v.size() == params_.size() &&
              updates.size() == params_.size(),
          ErrorKind::Shape,
          "optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params_.size(); ++i)
    require(m[i].size() == params_[i].size() && v[i].size() == params_[i].size(),
            ErrorKind::Shape, "optimizer moment " + std::to_string(i) + " has the wrong size");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
  updates_ = std::move(updates);
}

std::size_t ScheduleConfig::warmup_steps() const {
  return static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
}

void ScheduleConfig::validate() const {
  require(total_steps > 0, ErrorKind::Config, "schedule needs at least one step");
  require(warmup_ratio >= 0.0 && warmup_ratio < 1.0, ErrorKind::Config,
          "warmup_ratio must lie in [0,1)");
  require(cycles >= 1, ErrorKind::Config, "schedule needs at least one cycle");
}

double lr_at(std::size_t step, const ScheduleConfig& schedule, double base_lr) {
  schedule.validate();
  const std::size_t warmup = schedule.warmup_steps();
  if (step < warmup) return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (schedule.total_steps <= warmup) return base_lr;
  const double progress = static_cast<double>(step - warmup) /
                          static_cast<double>(schedule.total_steps - warmup);
  if (progress >= 1.0) return 0.0;
  const double phase = std::fmod(static_cast<double>(schedule.cycles) * progress, 1.0);
  return base_lr * std::max(0.0, 0.5 * (1.0 + std::cos(std::numbers::pi * phase)));
}

}  // namespace pangaea
