#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <optional>

#include "pangaea/error.hpp"
#include "pangaea/finetune.hpp"
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

FinetuneData table_task(std::size_t n, std::uint64_t seed, double noise = 0.0) {
  SynthSpec spec;
  spec.count = n;
  spec.noise = noise;
  auto d = gen_synthetic(spec, seed);
  return {ModalityKind::Table, d.samples, d.labels, 0};
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

TEST(Finetune, ZeroEpochsReportsInitialModel) {
  Model model(tiny_config(), 1);
  FinetuneConfig cfg;
  cfg.epochs = 0;
  auto data = table_task(20, 2);
  auto r = finetune(model, data, cfg);
  ASSERT_EQ(r.trace.size(), 1u);
  EXPECT_EQ(r.trace[0].epoch, 0u);
  EXPECT_EQ(r.trace[0].metric("acc"), evaluate(model, cfg, data)[0].second);
}

TEST(Finetune, SeparableTableReachesHighAccuracy) {
  Model model(ModelConfig::desk(), 4);
  FinetuneConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 32;
  auto data = table_task(128, 5);
  auto r = finetune(model, data, cfg);
  EXPECT_GT(r.trace.back().metric("acc"), 0.95);
  EXPECT_LT(r.trace.back().train_loss, r.trace.front().train_loss);
}

TEST(Finetune, ZeroHeadFrozenBodyStartsAtLogC) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Model model(tiny_config(), seed);
    FinetuneConfig cfg;
    cfg.epochs = 0;
    cfg.head_out_dim = 3;
    cfg.freeze_body = true;
    cfg.zero_init_output = true;
    auto data = table_task(10, 2);
    for (auto& t : data.targets) t = std::fmod(t + 1, 3);
    auto r = finetune(model, data, cfg);
    EXPECT_NEAR(r.trace[0].train_loss, std::log(3.0), 1e-12);
  }
}

TEST(Finetune, FrozenBodyLeavesBodyUntouched) {
  Model model(tiny_config(), 1);
  auto before = std::vector<double>(model.params().get("proj.weight").data().begin(),
                                    model.params().get("proj.weight").data().end());
  FinetuneConfig cfg;
  cfg.epochs = 2;
  cfg.freeze_body = true;
  finetune(model, table_task(16, 2), cfg);
  auto after = model.params().get("proj.weight").data();
  for (std::size_t i = 0; i < before.size(); ++i) ASSERT_EQ(before[i], after[i]);
}

TEST(Finetune, BceMatchesLiteralFormula) {
  Model model(tiny_config(), 6);
  FinetuneConfig cfg;
  cfg.loss = LossKind::BCE;
  cfg.head_out_dim = 3;
  model.attach_head(cfg.head, 3);
  auto data = table_task(4, 3);
  data.targets = {1, 0, 1, 0, 0, 1, 1, 1, 0, 0, 1, 0};
  std::vector<std::size_t> idx = {0, 1, 2, 3};
  const double loss = finetune_loss(model, cfg, data, idx).item();
  auto z = predict(model, cfg.head, data);
  double lit = 0;
  for (std::size_t i = 0; i < 12; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-z.data()[i]));
    lit += data.targets[i] == 1.0 ? -std::log(s) : -std::log(1 - s);
  }
  EXPECT_NEAR(loss, lit / 12, 1e-12);
}

TEST(Finetune, MseRegressionTrace) {
  Model model(tiny_config(), 2);
  FinetuneConfig cfg;
  cfg.loss = LossKind::MSE;
  cfg.head_out_dim = 1;
  cfg.epochs = 3;
  SynthSpec spec;
  spec.classes = 0;
  spec.count = 24;
  auto d = gen_synthetic(spec, 3);
  FinetuneData data{ModalityKind::Table, d.samples, d.labels, 0};
  auto r = finetune(model, data, cfg);
  ASSERT_EQ(r.trace.size(), 4u);
  for (const auto& e : r.trace)
    EXPECT_NEAR(e.metric("rmse") * e.metric("rmse"), e.metric("mse"), 1e-12);
}

TEST(Finetune, PretrainedAndScratchBothProduceTraces) {
  auto data = table_task(32, 8);
  FinetuneConfig cfg;
  cfg.epochs = 2;
  Model scratch(tiny_config(), 1);
  Model pre(tiny_config(), 1);
  PretrainConfig pc;
  pc.batch_size = 8;
  pc.schedule.total_steps = 3;
  Pretrainer trainer(pre, {{"t", ModalityKind::Table, normalize(data.samples, ModalityKind::Table).samples,
                            CorruptionSpec::defaults(ModalityKind::Table), 0}},
                     pc);
  for (int i = 0; i < 3; ++i) trainer.step_parallel();
  auto a = finetune(scratch, data, cfg);
  auto b = finetune(pre, data, cfg);
  EXPECT_EQ(a.trace.size(), b.trace.size());
}

TEST(Finetune, MismatchedTargetsAreConfigErrors) {
  Model model(tiny_config(), 1);
  FinetuneConfig cfg;
  auto data = table_task(8, 1);
  data.targets.pop_back();
  EXPECT_EQ(kind_of([&] { finetune(model, data, cfg); }), ErrorKind::Config);
  auto bad = table_task(8, 1);
  bad.targets[0] = 5;
  EXPECT_EQ(kind_of([&] { finetune(model, bad, cfg); }), ErrorKind::Config);
}
