#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>

#include "pangaea/error.hpp"
#include "pangaea/pretrain.hpp"
#include "pangaea/synth.hpp"

using namespace pangaea;

namespace {

ModelConfig tiny_config() {
  auto c = ModelConfig::desk();
  c.n_blocks = 1;
  c.n_heads = 2;
  c.hidden_dim = 16;
  c.intermediate_dim = 24;
  c.vocab_size = 32;
  c.point_hidden = 8;
  c.topology_capacity = 300;
  return c;
}

std::vector<PretrainDataset> toy_datasets(std::size_t count = 16) {
  SynthSpec table;
  table.modality = ModalityKind::Table;
  table.count = count;
  SynthSpec series;
  series.modality = ModalityKind::TimeSeries;
  series.count = count;
  auto t = gen_synthetic(table, 1);
  auto s = gen_synthetic(series, 2);
  return {
      {"table", ModalityKind::Table, normalize(t.samples, ModalityKind::Table).samples,
       CorruptionSpec::defaults(ModalityKind::Table), 0},
      {"series", ModalityKind::TimeSeries,
       normalize(s.samples, ModalityKind::TimeSeries).samples,
       CorruptionSpec::defaults(ModalityKind::TimeSeries), 0},
  };
}

std::optional<ErrorKind> kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

}  // namespace

TEST(Impute, DiscreteModeSmallestOnTies) {
  std::vector<std::optional<double>> col = {2.0, std::nullopt, 1.0, 2.0, 1.0, std::nullopt};
  auto out = impute_missing(col, ColumnKind::Discrete);
  EXPECT_EQ(out, (std::vector<double>{2, 1, 1, 2, 1, 1}));
}

TEST(Impute, ContinuousMean) {
  std::vector<std::optional<double>> col = {1.0, std::nullopt, 3.0};
  auto out = impute_missing(col, ColumnKind::Continuous);
  EXPECT_EQ(out, (std::vector<double>{1, 2, 3}));
}

TEST(Impute, TimeSeriesZeroAndAllMissing) {
  std::vector<std::optional<double>> col = {5.0, std::nullopt};
  EXPECT_EQ(impute_missing(col, ColumnKind::TimeSeries), (std::vector<double>{5, 0}));
  std::vector<std::optional<double>> empty = {std::nullopt, std::nullopt};
  EXPECT_EQ(kind_of([&] { impute_missing(empty, ColumnKind::Continuous); }),
            ErrorKind::Imputation);
}

TEST(Normalize, TableColumnsZeroMeanUnitStd) {
  std::vector<Sample> rows;
  for (double v : {1.0, 2.0, 3.0, 4.0})
    rows.push_back({ModalityKind::Table, {2}, {v, 7.0}});
  auto n = normalize(rows, ModalityKind::Table);
  double mean = 0, sq = 0;
  for (const auto& r : n.samples) mean += r.values[0];
  for (const auto& r : n.samples) sq += r.values[0] * r.values[0];
  EXPECT_NEAR(mean, 0.0, 1e-12);
  EXPECT_NEAR(sq / 4.0, 1.0, 1e-12);
  ASSERT_EQ(n.stats.degenerate, (std::vector<std::size_t>{1}));
  EXPECT_TRUE(n.stats.flagged());
  for (const auto& r : n.samples) EXPECT_EQ(r.values[1], 0.0);
}

TEST(Normalize, ImageChannelConstants) {
  Sample img{ModalityKind::Image, {224, 224, 3}, std::vector<double>(224 * 224 * 3, 0.5)};
  auto n = normalize({img}, ModalityKind::Image);
  EXPECT_NEAR(n.samples[0].values[0], (0.5 - 0.485) / 0.229, 1e-12);
  EXPECT_NEAR(n.samples[0].values[2], (0.5 - 0.406) / 0.225, 1e-12);
}

TEST(Corruption, IdentityAtZero) {
  CorruptionSpec spec{ModalityKind::Table, CorruptionMode::NumericMaskNoise, 0.0, 0.0};
  std::mt19937_64 rng(3);
  std::vector<double> v = {1.5, -2.0, 3.25};
  auto c = corrupt_numeric(v, spec, rng);
  EXPECT_EQ(c.values, v);
  EXPECT_TRUE(c.mask.masked.empty());
}

TEST(Corruption, FractionOutsideRangeIsConfigError) {
  CorruptionSpec spec{ModalityKind::Table, CorruptionMode::NumericMaskNoise, 1.5, 0.1};
  EXPECT_EQ(kind_of([&] { spec.validate(); }), ErrorKind::Config);
  spec.mask_fraction = -0.1;
  EXPECT_EQ(kind_of([&] { spec.validate(); }), ErrorKind::Config);
}

TEST(Corruption, NumericMaskRateAndNoiseVariance) {
  auto spec = CorruptionSpec::defaults(ModalityKind::Table);
  std::mt19937_64 rng(11);
  std::vector<double> zeros(100000, 0.0);
  std::vector<double> ones(100000, 1.0);
  auto c = corrupt_numeric(ones, spec, rng);
  const double rate = static_cast<double>(c.mask.masked.size()) / 1e5;
  EXPECT_NEAR(rate, 0.10, 0.005);
  for (auto i : c.mask.masked) EXPECT_EQ(c.values[i], 0.0);
  auto n = corrupt_numeric(zeros, spec, rng);
  std::vector<bool> masked(zeros.size(), false);
  for (auto i : n.mask.masked) masked[i] = true;
  double sum = 0, sq = 0;
  std::size_t k = 0;
  for (std::size_t i = 0; i < zeros.size(); ++i)
    if (!masked[i]) {
      sum += n.values[i];
      sq += n.values[i] * n.values[i];
      ++k;
    }
  const double m = sum / k;
  const double var = sq / k - m * m;
  EXPECT_NEAR(var, 0.1, 0.005);
}

TEST(Corruption, TextMaskRate) {
  auto spec = CorruptionSpec::defaults(ModalityKind::Text);
  std::mt19937_64 rng(5);
  std::vector<double> ids(100000, 4.0);
  auto c = corrupt_text(ids, spec, 99, rng);
  EXPECT_NEAR(static_cast<double>(c.mask.masked.size()) / 1e5, 0.15, 0.005);
  for (auto i : c.mask.masked) EXPECT_EQ(c.values[i], 99.0);
  std::size_t replaced = std::count(c.values.begin(), c.values.end(), 99.0);
  EXPECT_EQ(replaced, c.mask.masked.size());
}

TEST(Corruption, ImageMasksExactly147) {
  auto spec = CorruptionSpec::defaults(ModalityKind::Image);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = choose_token_mask(196, spec, rng);
    ASSERT_EQ(m.masked.size(), 147u);
    EXPECT_TRUE(std::is_sorted(m.masked.begin(), m.masked.end()));
    EXPECT_EQ(std::adjacent_find(m.masked.begin(), m.masked.end()), m.masked.end());
    EXPECT_LT(m.masked.back(), 196u);
  }
}

TEST(Corruption, UnsupportedModalityDefaults) {
  EXPECT_EQ(kind_of([] { CorruptionSpec::defaults(ModalityKind::Audio); }), ErrorKind::Config);
}

TEST(ReconLoss, ZeroWhenEqualAndScalarMse) {
  auto a = Tensor::from({1, 3}, {1.0, 2.0, 3.0});
  EXPECT_EQ(recon_loss(ModalityKind::Table, a, a).item(), 0.0);
  auto p = Tensor::from({1, 1}, {2.5});
  auto t = Tensor::from({1, 1}, {1.0});
  EXPECT_DOUBLE_EQ(recon_loss(ModalityKind::TimeSeries, p, t).item(), 2.25);
}

TEST(ReconLoss, TextUniformLogitsGiveLogV) {
  const std::size_t v = 17;
  auto logits = Tensor::from({3, 2 * v}, std::vector<double>(3 * 2 * v, 0.25));
  auto ids = Tensor::from({3, 2}, {0, 1, 16, 3, 4, 5});
  EXPECT_NEAR(recon_loss(ModalityKind::Text, logits, ids).item(), std::log(double(v)), 1e-12);
}

TEST(ReconLoss, NoMaskedTokensIsContractError) {
  auto cfg = tiny_config();
  cfg.topology_capacity = 1000;
  Model model(cfg, 2);
  SynthSpec spec;
  spec.modality = ModalityKind::Image;
  spec.count = 1;
  auto data = gen_synthetic(spec, 3);
  auto corruption = CorruptionSpec::defaults(ModalityKind::Image);
  corruption.mask_fraction = 0.0;
  PretrainDataset ds{"img", ModalityKind::Image,
                     normalize(data.samples, ModalityKind::Image).samples, corruption, 0};
  model.attach_head(ds.head(), recon_output_dim(ds, model.config()));
  std::vector<std::size_t> batch = {0};
  EXPECT_EQ(kind_of([&] { modality_loss(model, ds, batch, 1); }), ErrorKind::Contract);
}

TEST(Schedule, WarmupAndCosine) {
  ScheduleConfig s{1000, 0.03, 1};
  EXPECT_EQ(s.warmup_steps(), 30u);
  EXPECT_EQ(lr_at(0, s, 2e-4), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(30, s, 2e-4), 2e-4);
  EXPECT_DOUBLE_EQ(lr_at(15, s, 2e-4), 1e-4);
  EXPECT_NEAR(lr_at(30 + 485, s, 2e-4), 1e-4, 1e-18);
  EXPECT_NEAR(lr_at(1000, s, 2e-4), 0.0, 1e-18);
  double peak = 0;
  for (std::size_t k = 0; k <= 1000; ++k) peak = std::max(peak, lr_at(k, s, 2e-4));
  EXPECT_EQ(peak, 2e-4);
}

TEST(Schedule, HardRestarts) {
  ScheduleConfig s{130, 0.0, 2};
  EXPECT_EQ(s.warmup_steps(), 0u);
  EXPECT_DOUBLE_EQ(lr_at(0, s, 1.0), 1.0);
  EXPECT_NEAR(lr_at(65, s, 1.0), 1.0, 1e-12);
  EXPECT_NEAR(lr_at(32, s, 1.0), 0.5 * (1 + std::cos(M_PI * 64.0 / 130.0)), 1e-12);
}

TEST(AdamW, FirstStepMovesByLrTimesSign) {
  auto w = Tensor::from({3}, {1.0, -1.0, 0.5}, true);
  AdamW opt({w}, {0.1, 0.0, 0.9, 0.999, 1e-12});
  opt.step(std::vector<std::vector<double>>{{2.0, -3.0, 0.0}}, 0.1);
  EXPECT_NEAR(w.data()[0], 0.9, 1e-9);
  EXPECT_NEAR(w.data()[1], -0.9, 1e-9);
  EXPECT_NEAR(w.data()[2], 0.5, 1e-9);
}

TEST(AdamW, DecoupledDecayAndSkip) {
  auto a = Tensor::from({1}, {2.0}, true);
  auto b = Tensor::from({1}, {2.0}, true);
  AdamW opt({a, b}, {0.1, 0.5, 0.9, 0.999, 1e-8});
  opt.step(std::vector<std::vector<double>>{{0.0}, {}}, 0.1);
  EXPECT_NEAR(a.data()[0], 2.0 * (1 - 0.1 * 0.5), 1e-12);
  EXPECT_EQ(b.data()[0], 2.0);
  EXPECT_EQ(opt.update_counts(), (std::vector<std::size_t>{1, 0}));
}

TEST(Pretrain, ParallelStepAppliesMeanGradient) {
  Model model(tiny_config(), 7);
  PretrainConfig pc;
  pc.batch_size = 4;
  pc.capture_gradients = true;
  pc.schedule.total_steps = 10;
  Pretrainer trainer(model, toy_datasets(), pc);
  auto plan = trainer.plan();
  const auto params = model.parameters();
  std::vector<std::vector<double>> expected(params.size());
  for (std::size_t d = 0; d < trainer.datasets().size(); ++d) {
    auto loss = modality_loss(model, trainer.datasets()[d], plan.samples[d],
                              plan.corruption_seeds[d]);
    auto g = gradients(loss);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (expected[i].empty()) expected[i].assign(params[i].size(), 0.0);
      if (g.contains(params[i]))
        for (std::size_t j = 0; j < params[i].size(); ++j) expected[i][j] += g.of(params[i])[j] / 2;
    }
  }
  auto r = trainer.step_parallel(plan);
  ASSERT_EQ(r.applied_gradient.size(), params.size());
  double worst = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (r.applied_gradient[i].empty()) {
      for (double v : expected[i]) EXPECT_EQ(v, 0.0);
      continue;
    }
    for (std::size_t j = 0; j < params[i].size(); ++j)
      worst = std::max(worst, std::abs(r.applied_gradient[i][j] - expected[i][j]));
  }
  EXPECT_LT(worst, 1e-10);
  EXPECT_EQ(r.optimizer_steps, 1u);
  EXPECT_NEAR(r.mean_loss, (r.losses[0] + r.losses[1]) / 2, 1e-15);
}

TEST(Pretrain, ThreadCountDoesNotChangeResult) {
  std::vector<double> ref;
  for (std::size_t threads : {1u, 2u}) {
    Model model(tiny_config(), 7);
    PretrainConfig pc;
    pc.batch_size = 3;
    pc.threads = threads;
    pc.seed = 4;
    pc.schedule.total_steps = 4;
    Pretrainer trainer(model, toy_datasets(8), pc);
    std::vector<double> losses;
    for (int s = 0; s < 3; ++s) losses.push_back(trainer.step_parallel().mean_loss);
    if (ref.empty()) ref = losses;
    else EXPECT_EQ(losses, ref);
  }
}

TEST(Pretrain, CtTakesOneStepPerDatasetAndDiffers) {
  auto run = [](bool ct) {
    Model model(tiny_config(), 7);
    PretrainConfig pc;
    pc.batch_size = 4;
    pc.schedule = {10, 0.0, 1};
    pc.optimizer.lr = 1e-2;
    Pretrainer trainer(model, toy_datasets(), pc);
    auto plan = trainer.plan();
    auto r = ct ? trainer.step_ct(plan) : trainer.step_parallel(plan);
    EXPECT_EQ(r.optimizer_steps, ct ? 2u : 1u);
    EXPECT_EQ(trainer.optimizer().steps(), ct ? 2u : 1u);
    return std::vector<double>(model.params().get("proj.weight").data().begin(),
                               model.params().get("proj.weight").data().end());
  };
  auto a = run(false);
  auto b = run(true);
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  EXPECT_GT(diff, 1e-6);
}

TEST(Pretrain, HeadsMatchReconDims) {
  Model model(tiny_config(), 1);
  PretrainConfig pc;
  Pretrainer trainer(model, toy_datasets(4), pc);
  EXPECT_EQ(model.head_out_dim("recon_table"), 8u);
  EXPECT_EQ(model.head_out_dim("recon_series"), 256u);
}
