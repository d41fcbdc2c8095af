#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pangaea/model.hpp"
#include "pangaea/optim.hpp"
#include "pangaea/triplet.hpp"

namespace pangaea {

// ---------------------------------------------------------------- imputation

enum class ColumnKind { Discrete, Continuous, TimeSeries };

// Discrete: most frequent value (smallest on ties). Continuous: mean.
// TimeSeries: zeros.
std::vector<double> impute_missing(std::span<const std::optional<double>> column, ColumnKind kind);

// ---------------------------------------------------------------- normalization

struct ImageNormalization {
  double mean[3] = {0.485, 0.456, 0.406};
  double std[3] = {0.229, 0.224, 0.225};
};

struct NormStats {
  // Table: one entry per column. TimeSeries: one entry per sample window.
  // Image: the three channel constants. Other modalities: empty.
  std::vector<double> mean;
  std::vector<double> std;
  // Columns or windows whose variance was zero; their std was replaced by 1.
  std::vector<std::size_t> degenerate;

  bool flagged() const noexcept { return !degenerate.empty(); }
};

struct NormalizedData {
  std::vector<Sample> samples;
  NormStats stats;
};

// Table: column-wise z-score over the dataset. TimeSeries: z-score per window.
// Image: fixed channel constants. Graph, text, audio and point clouds pass through.
NormalizedData normalize(const std::vector<Sample>& samples, ModalityKind modality,
                         const ImageNormalization& image = {});

// ---------------------------------------------------------------- corruption

enum class CorruptionMode { NumericMaskNoise, TextMaskId, ImageTokenMask };

const char* corruption_mode_name(CorruptionMode mode) noexcept;

struct CorruptionSpec {
  ModalityKind modality = ModalityKind::Table;
  CorruptionMode mode = CorruptionMode::NumericMaskNoise;
  double mask_fraction = 0.10;
  double noise_variance = 0.10;

  void validate() const;
  // Table, TimeSeries, Graph: mask 0.10 and variance 0.10. Text: 0.15 of ids.
  // Image: 0.75 of triplet tokens. Other modalities raise a config error.
  static CorruptionSpec defaults(ModalityKind modality);
};

struct MaskRecord {
  // Sorted element indices (numeric), id positions (text) or triplet indices (image).
  std::vector<std::size_t> masked;
};

struct Corrupted {
  std::vector<double> values;
  MaskRecord mask;
};

// Each element is masked to 0 with probability mask_fraction; every other
// element receives Gaussian noise of the given variance.
Corrupted corrupt_numeric(std::span<const double> values, const CorruptionSpec& spec,
                          std::mt19937_64& rng);
// Each id is replaced by mask_id with probability mask_fraction.
Corrupted corrupt_text(std::span<const double> ids, const CorruptionSpec& spec,
                       std::size_t mask_id, std::mt19937_64& rng);
// Exactly floor(mask_fraction * count) distinct triplet indices, sorted.
MaskRecord choose_token_mask(std::size_t count, const CorruptionSpec& spec, std::mt19937_64& rng);

// ---------------------------------------------------------------- losses

// Table, TimeSeries, Graph, Image: mean square error between equally shaped
// prediction and target. Text: prediction [m x 2V] holds two logit vectors
// per masked triplet, target [m x 2] the original ids; mean cross-entropy.
Tensor recon_loss(ModalityKind modality, const Tensor& prediction, const Tensor& target);

// ---------------------------------------------------------------- training

struct PretrainDataset {
  std::string name;
  ModalityKind modality = ModalityKind::Table;
  std::vector<Sample> samples;  // already imputed and normalized
  CorruptionSpec corruption;
  std::uint64_t encode_seed = 0;

  std::string head() const { return "recon_" + name; }
};

// Output length of the dataset's reconstruction head.
std::size_t recon_output_dim(const PretrainDataset& dataset, const ModelConfig& config);

struct PretrainConfig {
  AdamWConfig optimizer;
  ScheduleConfig schedule;
  std::size_t batch_size = 32;
  // 0 reads PANGAEA_THREADS.
  std::size_t threads = 0;
  bool capture_gradients = false;
  std::uint64_t seed = 0;
};

// Sample indices and corruption seed for every dataset of one step.
struct BatchPlan {
  std::vector<std::vector<std::size_t>> samples;
  std::vector<std::uint64_t> corruption_seeds;
};

// Builds the reconstruction loss of one dataset for the given batch.
Tensor modality_loss(const Model& model, const PretrainDataset& dataset,
                     std::span<const std::size_t> samples, std::uint64_t corruption_seed);

struct StepResult {
  std::size_t step = 0;
  double lr = 0.0;
  std::vector<double> losses;  // per dataset, in dataset order
  double mean_loss = 0.0;
  std::size_t optimizer_steps = 0;
  // With capture_gradients: the gradient handed to the optimizer, one
  // buffer per model parameter (empty when the parameter was not reached).
  std::vector<std::vector<double>> applied_gradient;
};

class Pretrainer {
 public:
  // Attaches one reconstruction head per dataset.
  Pretrainer(Model& model, std::vector<PretrainDataset> datasets, PretrainConfig config);

  BatchPlan plan();
  // One optimizer step on the gradient of the mean of all dataset losses.
  StepResult step_parallel();
  StepResult step_parallel(const BatchPlan& plan);
  // One backward pass and one optimizer step per dataset, in order.
  StepResult step_ct();
  StepResult step_ct(const BatchPlan& plan);

  const std::vector<PretrainDataset>& datasets() const noexcept { return datasets_; }
  const PretrainConfig& config() const noexcept { return config_; }
  AdamW& optimizer() noexcept { return optimizer_; }
  std::size_t step() const noexcept { return step_; }
  std::mt19937_64& rng() noexcept { return rng_; }
  // history()[d] holds dataset d's loss at every step.
  const std::vector<std::vector<double>>& history() const noexcept { return history_; }

 private:
  std::vector<Tensor> build_losses(const BatchPlan& plan) const;
  void check_plan(const BatchPlan& plan) const;

  Model& model_;
  std::vector<PretrainDataset> datasets_;
  PretrainConfig config_;
  AdamW optimizer_;
  std::size_t step_ = 0;
  std::mt19937_64 rng_;
  std::vector<std::vector<double>> history_;
};

}  // namespace pangaea
