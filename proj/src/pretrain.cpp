#include "pangaea/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include "pangaea/error.hpp"
#include "pangaea/parallel.hpp"

namespace pangaea {

// ---------------------------------------------------------------- imputation

std::vector<double> impute_missing(std::span<const std::optional<double>> column,
                                   ColumnKind kind) {
  std::vector<double> out(column.size());
  if (kind == ColumnKind::TimeSeries) {
    for (std::size_t i = 0; i < column.size(); ++i) out[i] = column[i].value_or(0.0);
    return out;
  }
  std::vector<double> present;
  for (const auto& v : column)
    if (v) present.push_back(*v);
  require(!present.empty(), ErrorKind::Imputation,
          "cannot impute a column with no observed values");
  double fill = 0.0;
  if (kind == ColumnKind::Discrete) {
    std::map<double, std::size_t> counts;
    for (double v : present) ++counts[v];
    std::size_t best = 0;
    for (const auto& [value, n] : counts)
      if (n > best) {
        best = n;
        fill = value;
      }
  } else {
    fill = std::accumulate(present.begin(), present.end(), 0.0) /
           static_cast<double>(present.size());
  }
  for (std::size_t i = 0; i < column.size(); ++i) out[i] = column[i].value_or(fill);
  return out;
}

// ---------------------------------------------------------------- normalization

namespace {

std::pair<double, double> mean_std(std::span<const double> xs) {
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / n)};
}

}  // namespace

NormalizedData normalize(const std::vector<Sample>& samples, ModalityKind modality,
                         const ImageNormalization& image) {
  NormalizedData out{samples, {}};
  if (samples.empty()) return out;
  for (const auto& s : samples)
    require(s.modality == modality, ErrorKind::Contract, "sample modality differs from dataset");

  if (modality == ModalityKind::Table) {
    const std::size_t d = samples.front().values.size();
    for (const auto& s : samples)
      require(s.values.size() == d, ErrorKind::Dimension, "table rows differ in length");
    for (std::size_t c = 0; c < d; ++c) {
      std::vector<double> col(samples.size());
      for (std::size_t r = 0; r < samples.size(); ++r) col[r] = samples[r].values[c];
      auto [mean, sd] = mean_std(col);
      if (sd == 0.0) {
        sd = 1.0;
        out.stats.degenerate.push_back(c);
      }
      out.stats.mean.push_back(mean);
      out.stats.std.push_back(sd);
      for (auto& s : out.samples) s.values[c] = (s.values[c] - mean) / sd;
    }
  } else if (modality == ModalityKind::TimeSeries) {
    for (std::size_t r = 0; r < out.samples.size(); ++r) {
      auto& v = out.samples[r].values;
      require(!v.empty(), ErrorKind::Dimension, "empty time series window");
      auto [mean, sd] = mean_std(v);
      if (sd == 0.0) {
        sd = 1.0;
        out.stats.degenerate.push_back(r);
      }
      out.stats.mean.push_back(mean);
      out.stats.std.push_back(sd);
      for (auto& x : v) x = (x - mean) / sd;
    }
  } else if (modality == ModalityKind::Image) {
    for (int ch = 0; ch < 3; ++ch) {
      require(image.std[ch] > 0.0, ErrorKind::Config, "image channel std must be positive");
      out.stats.mean.push_back(image.mean[ch]);
      out.stats.std.push_back(image.std[ch]);
    }
    for (auto& s : out.samples) {
      require(s.values.size() % 3 == 0, ErrorKind::Dimension, "image values must be H x W x 3");
      for (std::size_t i = 0; i < s.values.size(); ++i)
        s.values[i] = (s.values[i] - image.mean[i % 3]) / image.std[i % 3];
    }
  }
  return out;
}

// ---------------------------------------------------------------- corruption

const char* corruption_mode_name(CorruptionMode mode) noexcept {
  switch (mode) {
    case CorruptionMode::NumericMaskNoise: return "numeric-mask-noise";
    case CorruptionMode::TextMaskId: return "text-mask-id";
    case CorruptionMode::ImageTokenMask: return "image-token-mask";
  }
  return "unknown";
}

void CorruptionSpec::validate() const {
  require(mask_fraction >= 0.0 && mask_fraction <= 1.0, ErrorKind::Config,
          "mask_fraction must lie in [0,1], got " + std::to_string(mask_fraction));
  require(noise_variance >= 0.0, ErrorKind::Config, "noise_variance must be non-negative");
}

CorruptionSpec CorruptionSpec::defaults(ModalityKind modality) {
  switch (modality) {
    case ModalityKind::Table:
    case ModalityKind::TimeSeries:
    case ModalityKind::Graph: return {modality, CorruptionMode::NumericMaskNoise, 0.10, 0.10};
    case ModalityKind::Text: return {modality, CorruptionMode::TextMaskId, 0.15, 0.0};
    case ModalityKind::Image: return {modality, CorruptionMode::ImageTokenMask, 0.75, 0.0};
    default: break;
  }
  fail(ErrorKind::Config,
       std::string("no pre-training corruption is defined for ") + modality_name(modality));
}

Corrupted corrupt_numeric(std::span<const double> values, const CorruptionSpec& spec,
                          std::mt19937_64& rng) {
  spec.validate();
  Corrupted out{std::vector<double>(values.begin(), values.end()), {}};
  std::bernoulli_distribution mask(spec.mask_fraction);
  std::normal_distribution<double> noise(0.0, std::sqrt(spec.noise_variance));
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (mask(rng)) {
      out.values[i] = 0.0;
      out.mask.masked.push_back(i);
    } else if (spec.noise_variance > 0.0) {
      out.values[i] += noise(rng);
    }
  }
  return out;
}

Corrupted corrupt_text(std::span<const double> ids, const CorruptionSpec& spec,
                       std::size_t mask_id, std::mt19937_64& rng) {
  spec.validate();
  Corrupted out{std::vector<double>(ids.begin(), ids.end()), {}};
  std::bernoulli_distribution mask(spec.mask_fraction);
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (mask(rng)) {
      out.values[i] = static_cast<double>(mask_id);
      out.mask.masked.push_back(i);
    }
  return out;
}

MaskRecord choose_token_mask(std::size_t count, const CorruptionSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  const auto k = static_cast<std::size_t>(
      std::floor(spec.mask_fraction * static_cast<double>(count) + 1e-9));
  std::vector<std::size_t> pool(count);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, count - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  MaskRecord out{std::vector<std::size_t>(pool.begin(), pool.begin() + k)};
  std::sort(out.masked.begin(), out.masked.end());
  return out;
}

// ---------------------------------------------------------------- losses

Tensor recon_loss(ModalityKind modality, const Tensor& prediction, const Tensor& target) {
  require(prediction.rank() == 2 && target.rank() == 2 && prediction.rows() == target.rows(),
          ErrorKind::Dimension, "reconstruction prediction and target disagree in rows");
  require(prediction.rows() > 0, ErrorKind::Contract, "no positions to reconstruct");
  if (modality != ModalityKind::Text) return mse_loss(prediction, target);
  require(target.cols() == 2 && prediction.cols() % 2 == 0, ErrorKind::Dimension,
          "text reconstruction needs [m x 2V] logits and [m x 2] ids");
  const std::size_t vocab = prediction.cols() / 2;
  std::vector<std::size_t> ids;
  for (double v : target.data()) {
    require(v >= 0.0 && v < static_cast<double>(vocab), ErrorKind::Contract,
            "target id outside the vocabulary");
    ids.push_back(static_cast<std::size_t>(v));
  }
  return cross_entropy(reshape(prediction, {2 * prediction.rows(), vocab}), ids);
}

// ---------------------------------------------------------------- training

std::size_t recon_output_dim(const PretrainDataset& dataset, const ModelConfig& config) {
  require(!dataset.samples.empty(), ErrorKind::Contract,
          "dataset '" + dataset.name + "' has no samples");
  switch (dataset.corruption.mode) {
    case CorruptionMode::TextMaskId: return 2 * config.vocab_size;
    case CorruptionMode::ImageTokenMask: return 2 * kPatchValues;
    case CorruptionMode::NumericMaskNoise: break;
  }
  const std::size_t n = dataset.samples.front().values.size();
  for (const auto& s : dataset.samples)
    require(s.values.size() == n, ErrorKind::Dimension,
            "dataset '" + dataset.name + "' mixes sample lengths");
  return n;
}

namespace {

Tensor rows_tensor(const std::vector<std::vector<double>>& rows) {
  const std::size_t n = rows.size(), w = rows.front().size();
  std::vector<double> flat;
  flat.reserve(n * w);
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor::from({n, w}, std::move(flat));
}

}  // namespace

Tensor modality_loss(const Model& model, const PretrainDataset& ds,
                     std::span<const std::size_t> samples, std::uint64_t corruption_seed) {
  require(!samples.empty(), ErrorKind::Contract, "empty batch for dataset '" + ds.name + "'");
  std::mt19937_64 rng(corruption_seed);
  const std::size_t vocab = model.config().vocab_size;
  std::vector<TokenSeq> seqs;
  std::vector<std::vector<double>> targets;
  std::vector<std::size_t> rows;  // per-token modes: batch rows to decode
  std::size_t offset = 0;

  for (auto idx : samples) {
    require(idx < ds.samples.size(), ErrorKind::Contract, "batch index out of range");
    const Sample& s = ds.samples[idx];
    require(s.modality == ds.modality, ErrorKind::Contract, "sample modality differs from dataset");
    switch (ds.corruption.mode) {
      case CorruptionMode::NumericMaskNoise: {
        Sample c = s;
        c.values = corrupt_numeric(s.values, ds.corruption, rng).values;
        seqs.push_back(model.tokenize(encode(c, ds.encode_seed, vocab)));
        targets.push_back(s.values);
        break;
      }
      case CorruptionMode::TextMaskId: {
        require(vocab > 1, ErrorKind::Config, "text pre-training needs a vocabulary");
        Sample c = s;
        auto corrupted = corrupt_text(s.values, ds.corruption, vocab - 1, rng);
        c.values = corrupted.values;
        auto seq = model.tokenize(encode(c, ds.encode_seed, vocab));
        std::vector<std::size_t> triplets;
        for (auto pos : corrupted.mask.masked) triplets.push_back(pos / 2);
        triplets.erase(std::unique(triplets.begin(), triplets.end()), triplets.end());
        for (auto j : triplets) {
          rows.push_back(offset + 1 + j);
          targets.push_back({s.values[2 * j], s.values[2 * j + 1]});
        }
        offset += seq.length();
        seqs.push_back(std::move(seq));
        break;
      }
      case CorruptionMode::ImageTokenMask: {
        auto set = encode(s, ds.encode_seed, vocab);
        auto mask = choose_token_mask(set.size(), ds.corruption, rng);
        auto seq = apply_token_mask(model.tokenize(set), mask.masked, model.tokenizer());
        for (auto j : mask.masked) {
          rows.push_back(offset + 1 + j);
          auto t = set.triplets[j].num1;
          t.insert(t.end(), set.triplets[j].num2.begin(), set.triplets[j].num2.end());
          targets.push_back(std::move(t));
        }
        offset += seq.length();
        seqs.push_back(std::move(seq));
        break;
      }
    }
  }

  auto batch = make_batch(seqs);
  auto hidden = model.forward(batch);
  const std::string head = ds.head();
  if (ds.corruption.mode == CorruptionMode::NumericMaskNoise)
    return recon_loss(ds.modality, model.decode_recon(head, hidden, batch), rows_tensor(targets));
  require(!rows.empty(), ErrorKind::Contract,
          "dataset '" + ds.name + "': no masked positions in this batch");
  return recon_loss(ds.modality, model.decode_per_token(head, hidden, rows), rows_tensor(targets));
}

namespace {

std::vector<Tensor> attach_heads(Model& model, const std::vector<PretrainDataset>& datasets) {
  require(!datasets.empty(), ErrorKind::Contract, "pre-training needs at least one dataset");
  for (const auto& ds : datasets) {
    ds.corruption.validate();
    require(ds.corruption.modality == ds.modality, ErrorKind::Config,
            "corruption spec of '" + ds.name + "' is for another modality");
    model.attach_head(ds.head(), recon_output_dim(ds, model.config()));
  }
  return model.parameters();
}

}  // namespace

Pretrainer::Pretrainer(Model& model, std::vector<PretrainDataset> datasets, PretrainConfig config)
    : model_(model),
      datasets_(std::move(datasets)),
      config_(config),
      optimizer_(attach_heads(model_, datasets_), config_.optimizer),
      rng_(config.seed),
      history_(datasets_.size()) {
  config_.schedule.validate();
  require(config_.batch_size > 0, ErrorKind::Config, "batch size must be positive");
  if (config_.threads == 0) config_.threads = worker_count();
}

BatchPlan Pretrainer::plan() {
  BatchPlan p;
  for (const auto& ds : datasets_) {
    std::uniform_int_distribution<std::size_t> pick(0, ds.samples.size() - 1);
    std::vector<std::size_t> idx(config_.batch_size);
    for (auto& i : idx) i = pick(rng_);
    p.samples.push_back(std::move(idx));
    p.corruption_seeds.push_back(rng_());
  }
  return p;
}

void Pretrainer::check_plan(const BatchPlan& plan) const {
  require(plan.samples.size() == datasets_.size() &&
              plan.corruption_seeds.size() == datasets_.size(),
          ErrorKind::Contract, "batch plan must cover every dataset");
}

std::vector<Tensor> Pretrainer::build_losses(const BatchPlan& plan) const {
  std::vector<Tensor> losses(datasets_.size());
  parallel_for(datasets_.size(), config_.threads, [&](std::size_t i) {
    losses[i] = modality_loss(model_, datasets_[i], plan.samples[i], plan.corruption_seeds[i]);
  });
  return losses;
}

StepResult Pretrainer::step_parallel() { return step_parallel(plan()); }

StepResult Pretrainer::step_parallel(const BatchPlan& plan) {
  check_plan(plan);
  StepResult r;
  r.step = ++step_;
  r.lr = lr_at(step_, config_.schedule, config_.optimizer.lr);
  auto losses = build_losses(plan);
  Tensor total = losses.front();
  for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
  total = scale(total, 1.0 / static_cast<double>(losses.size()));
  auto grads = gradients(total);
  for (std::size_t i = 0; i < losses.size(); ++i) {
    r.losses.push_back(losses[i].item());
    history_[i].push_back(r.losses.back());
  }
  r.mean_loss = total.item();
  if (config_.capture_gradients)
    for (const auto& p : optimizer_.params())
      r.applied_gradient.push_back(grads.contains(p)
                                       ? std::vector<double>(grads.of(p).begin(), grads.of(p).end())
                                       : std::vector<double>{});
  optimizer_.step(grads, r.lr);
  r.optimizer_steps = 1;
  return r;
}

StepResult Pretrainer::step_ct() { return step_ct(plan()); }

StepResult Pretrainer::step_ct(const BatchPlan& plan) {
  check_plan(plan);
  StepResult r;
  r.step = ++step_;
  r.lr = lr_at(step_, config_.schedule, config_.optimizer.lr);
  for (std::size_t i = 0; i < datasets_.size(); ++i) {
    auto loss = modality_loss(model_, datasets_[i], plan.samples[i], plan.corruption_seeds[i]);
    auto grads = gradients(loss);
    r.losses.push_back(loss.item());
    history_[i].push_back(r.losses.back());
    optimizer_.step(grads, r.lr);
    ++r.optimizer_steps;
  }
  r.mean_loss = std::accumulate(r.losses.begin(), r.losses.end(), 0.0) /
                static_cast<double>(r.losses.size());
  return r;
}

}  // namespace pangaea
