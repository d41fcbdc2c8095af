#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pangaea/model.hpp"
#include "pangaea/triplet.hpp"

namespace pangaea {

enum class LossKind { CE, BCE, MSE };

const char* loss_kind_name(LossKind kind) noexcept;
LossKind parse_loss_kind(const std::string& name);

struct FinetuneConfig {
  std::string head = "task";
  std::size_t head_out_dim = 2;
  std::size_t head_layers = 2;
  LossKind loss = LossKind::CE;
  double lr = 1e-3;
  double weight_decay = 0.05;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  // Only the head is updated.
  bool freeze_body = false;
  // Zero the head's final layer after re-initialization.
  bool zero_init_output = false;
  std::uint64_t seed = 0;

  void validate() const;
};

// targets: CE, one class index per sample; BCE, head_out_dim values in {0,1}
// per sample; MSE, head_out_dim reals per sample. Row-major.
struct FinetuneData {
  ModalityKind modality = ModalityKind::Table;
  std::vector<Sample> samples;
  std::vector<double> targets;
  std::uint64_t encode_seed = 0;

  std::size_t size() const noexcept { return samples.size(); }
};

using MetricRow = std::pair<std::string, double>;

struct EpochRecord {
  std::size_t epoch = 0;
  // Mean minibatch loss during the epoch; for epoch 0, the loss of the untouched model.
  double train_loss = 0.0;
  std::vector<MetricRow> metrics;

  double metric(const std::string& name) const;
};

struct FinetuneResult {
  // Epoch 0 (before any update) followed by one record per epoch.
  std::vector<EpochRecord> trace;
};

// Head outputs for every sample, [n x head_out_dim].
Tensor predict(const Model& model, const std::string& head, const FinetuneData& data,
               std::size_t batch_size = 64);

Tensor finetune_loss(const Model& model, const FinetuneConfig& config, const FinetuneData& data,
                     std::span<const std::size_t> indices);

// CE: acc, f1 (binary for two classes, else weighted) and auc for two classes.
// BCE: element accuracy at logit 0. MSE: mse, mae, rmse.
std::vector<MetricRow> evaluate(const Model& model, const FinetuneConfig& config,
                                const FinetuneData& data);

// Re-initializes the head, then trains with AdamW on shuffled minibatches.
// Metrics are computed on `eval` when given, on `train` otherwise.
FinetuneResult finetune(Model& model, const FinetuneData& train, const FinetuneConfig& config,
                        const FinetuneData* eval = nullptr);

}  // namespace pangaea
