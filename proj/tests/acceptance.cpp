#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "pangaea/checkpoint.hpp"
#include "pangaea/error.hpp"
#include "pangaea/metrics.hpp"
#include "pangaea/model.hpp"
#include "pangaea/optim.hpp"
#include "pangaea/pretrain.hpp"
#include "pangaea/scaling.hpp"
#include "pangaea/synth.hpp"

using namespace pangaea;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

std::vector<double> normal_values(std::size_t n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

PretrainDataset dataset(const std::string& name, ModalityKind m, std::size_t count, std::uint64_t seed) {
  SynthSpec s;
  s.modality = m;
  s.count = count;
  auto data = gen_synthetic(s, seed);
  return {name, m, normalize(data.samples, m).samples, CorruptionSpec::defaults(m), 0};
}

// ---------------------------------------------------------------- 1

Outcome encoder_counts() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> width(1, 383);
  std::size_t checked = 0;
  auto expect = [&](ModalityKind m, std::uint64_t seed, std::size_t want, SynthSpec spec) -> std::string {
    spec.modality = m;
    spec.count = 3;
    for (const auto& s : gen_synthetic(spec, seed).samples) {
      const auto got = encode(s, seed, spec.vocab).size();
      ++checked;
      if (got != want)
        return std::string(modality_name(m)) + " gave " + std::to_string(got) + ", want " + std::to_string(want);
    }
    return "";
  };
  for (int trial = 0; trial < 5; ++trial) {
    SynthSpec spec;
    spec.features = width(rng);
    std::string err = expect(ModalityKind::Table, rng(), spec.features, spec);
    if (err.empty()) err = expect(ModalityKind::TimeSeries, rng(), 8, spec);
    if (err.empty()) err = expect(ModalityKind::Text, rng(), 256, spec);
    if (err.empty()) err = expect(ModalityKind::Image, rng(), 196, spec);
    spec.feature_dim = 1 + width(rng) % 64;
    if (err.empty()) err = expect(ModalityKind::Graph, rng(), 32, spec);
    if (err.empty()) err = expect(ModalityKind::Audio, rng(), 256, spec);
    spec.groups = 2 * (1 + trial * 3);
    if (err.empty()) err = expect(ModalityKind::PointCloud, rng(), spec.groups / 2, spec);
    if (!err.empty()) return {false, err};
  }
  std::mt19937_64 mrng(7);
  const auto image = CorruptionSpec::defaults(ModalityKind::Image);
  for (int trial = 0; trial < 20; ++trial) {
    auto mask = choose_token_mask(196, image, mrng);
    if (mask.masked.size() != 147 || 196 - mask.masked.size() != 49)
      return {false, "image mask kept " + std::to_string(196 - mask.masked.size()) + " visible"};
  }
  return {true, std::to_string(checked) + " samples over 7 modalities; image 147 masked / 49 visible"};
}

// ---------------------------------------------------------------- 2

Outcome gradient_check() {
  Model model(ModelConfig::desk(), 21);
  model.attach_head("recon_table", 8);
  std::mt19937_64 rng(22);
  auto x = normal_values(8, rng);
  auto set = encode_table(x, 5);
  auto target = Tensor::from({1, 8}, x);
  auto loss_fn = [&] {
    auto batch = make_batch({model.tokenize(set)});
    return mse_loss(model.decode_recon("recon_table", model.forward(batch), batch), target);
  };
  auto params = model.parameters();
  GradCheckOptions opts;
  opts.samples = 200;
  opts.seed = 3;
  opts.tolerance = 1e-4;
  auto report = finite_diff_check(loss_fn, params, opts);
  return {report.passed(), std::to_string(report.entries.size()) + " parameters, worst relative error " +
                               fmt("%.2e", report.worst())};
}

// ---------------------------------------------------------------- 3

Outcome mean_gradient() {
  Model model(ModelConfig::desk(), 5);
  PretrainConfig pc;
  pc.batch_size = 4;
  pc.capture_gradients = true;
  pc.schedule.total_steps = 10;
  Pretrainer trainer(model, {dataset("table", ModalityKind::Table, 16, 1),
                             dataset("series", ModalityKind::TimeSeries, 16, 2)},
                     pc);
  auto plan = trainer.plan();
  const auto params = model.parameters();
  std::vector<std::vector<double>> expected(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) expected[i].assign(params[i].size(), 0.0);
  const double n = static_cast<double>(trainer.datasets().size());
  for (std::size_t d = 0; d < trainer.datasets().size(); ++d) {
    auto g = gradients(modality_loss(model, trainer.datasets()[d], plan.samples[d], plan.corruption_seeds[d]));
    for (std::size_t i = 0; i < params.size(); ++i)
      if (g.contains(params[i])) {
        auto gi = g.of(params[i]).data();
        for (std::size_t j = 0; j < params[i].size(); ++j) expected[i][j] += gi[j] / n;
      }
  }
  auto r = trainer.step_parallel(plan);
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      const double applied = r.applied_gradient[i].empty() ? 0.0 : r.applied_gradient[i][j];
      worst = std::max(worst, std::abs(applied - expected[i][j]));
    }
  return {worst < 1e-10 && r.optimizer_steps == 1,
          "max |applied - mean| = " + fmt("%.2e", worst) + ", optimizer steps " + std::to_string(r.optimizer_steps)};
}

// ---------------------------------------------------------------- 4

Outcome permutation() {
  Model model(ModelConfig::desk(), 4);
  std::mt19937_64 rng(5);
  double worst = 0.0;
  for (std::size_t n : {1u, 8u, 32u, 196u, 256u}) {
    TokenSeq seq;
    seq.tokens = Tensor::from({n + 1, 512}, normal_values((n + 1) * 512, rng));
    seq.positions.resize(n + 1);
    std::iota(seq.positions.begin(), seq.positions.end(), 0);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 1);
    std::shuffle(perm.begin(), perm.end(), rng);
    perm.insert(perm.begin(), 0);
    TokenSeq permuted{gather_rows(seq.tokens, perm), {}};
    for (auto r : perm) permuted.positions.push_back(seq.positions[r]);
    auto h = model.forward(seq), hp = model.forward(permuted);
    for (std::size_t r = 0; r <= n; ++r)
      for (std::size_t c = 0; c < h.cols(); ++c) worst = std::max(worst, std::abs(hp.at(r, c) - h.at(perm[r], c)));
  }
  return {worst < 1e-10, "token counts {1,8,32,196,256}, max deviation " + fmt("%.2e", worst)};
}

// ---------------------------------------------------------------- 5

Outcome convergence() {
  Model model(ModelConfig::desk(), 0);
  PretrainConfig pc;
  pc.batch_size = 32;
  pc.schedule.total_steps = 500;
  pc.seed = 3;
  Pretrainer trainer(model, {dataset("table", ModalityKind::Table, 512, 1),
                             dataset("series", ModalityKind::TimeSeries, 512, 2)},
                     pc);
  double first = 0.0, last = 0.0;
  for (std::size_t s = 0; s < pc.schedule.total_steps; ++s) {
    auto r = trainer.step_parallel();
    if (s == 0) first = r.mean_loss;
    last = r.mean_loss;
  }
  return {last < 0.5 * first, "step 1 loss " + fmt("%.4f", first) + ", step 500 loss " + fmt("%.4f", last) +
                                  " (ratio " + fmt("%.3f", last / first) + ")"};
}

// ---------------------------------------------------------------- 6

Outcome scaling() {
  std::vector<ScalingPoint> pts;
  for (int x = 0; x <= 5; ++x) pts.push_back({double(x), predicted_y(0.18, 0.14, x)});
  auto fit = fit_scaling(pts);
  const double dp = std::abs(fit.p - 0.18), dc = std::abs(fit.c - 0.14);
  int ok = 0;
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.01);
    auto noisy = pts;
    for (auto& q : noisy) q.y += noise(rng);
    auto f = fit_scaling(noisy);
    ok += std::abs(f.p - 0.18) <= 0.03 && std::abs(f.c - 0.14) <= 0.03;
  }
  return {dp < 1e-6 && dc < 1e-6 && ok >= 95,
          "noiseless |dp| " + fmt("%.1e", dp) + " |dc| " + fmt("%.1e", dc) + "; noisy " + std::to_string(ok) + "/100"};
}

// ---------------------------------------------------------------- 7

Outcome metric_fidelity() {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> len(2, 200);
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> tick(0, 20);
  std::size_t mismatches = 0, auc_batches = 0;
  double worst_rmse = 0.0;
  for (int batch = 0; batch < 1000; ++batch) {
    const std::size_t n = len(rng);
    std::vector<double> y(n), yh(n), score(n), ry(n), ryh(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = coin(rng);
      yh[i] = coin(rng);
      score[i] = tick(rng) / 10.0;  // coarse grid forces ties
      ry[i] = normal_values(1, rng)[0];
      ryh[i] = normal_values(1, rng)[0];
    }
    EvalBatch cls{y, yh, TaskKind::Classification};
    std::size_t same = 0, tp = 0, pos = 0, pred = 0;
    for (std::size_t i = 0; i < n; ++i) {
      same += y[i] == yh[i];
      tp += y[i] == 1 && yh[i] == 1;
      pos += y[i] == 1;
      pred += yh[i] == 1;
    }
    mismatches += metric_acc(cls) != double(same) / double(n);
    const double f1 = pos + pred == 0 ? 0.0 : 2.0 * double(tp) / double(pos + pred);
    mismatches += metric_f1(cls).value != f1;

    EvalBatch reg{ry, ryh, TaskKind::Regression};
    double se = 0.0, ae = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      se += (ry[i] - ryh[i]) * (ry[i] - ryh[i]);
      ae += std::abs(ry[i] - ryh[i]);
    }
    mismatches += metric_mse(reg) != se / double(n);
    mismatches += metric_mae(reg) != ae / double(n);
    const double rmse = metric_rmse(reg);
    mismatches += rmse != std::sqrt(se / double(n));
    worst_rmse = std::max(worst_rmse, std::abs(rmse * rmse - metric_mse(reg)));

    if (pos > 0 && pos < n) {
      ++auc_batches;
      std::size_t wins = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) wins += y[i] == 1 && y[j] == 0 && score[i] > score[j];
      EvalBatch rank{y, score, TaskKind::RankingScore};
      mismatches += metric_auc(rank) != double(wins) / (double(pos) * double(n - pos));
    }
  }
  return {mismatches == 0 && worst_rmse < 1e-12,
          "1000 batches (" + std::to_string(auc_batches) + " with AUC), " + std::to_string(mismatches) +
              " mismatches, max |rmse^2 - mse| " + fmt("%.1e", worst_rmse)};
}

// ---------------------------------------------------------------- 8

Outcome percentage_arithmetic() {
  const double v = improvement(0.755, 0.741, Direction::HigherBetter);
  const double rounded = std::round(v * 100.0) / 100.0;
  return {rounded == 1.89, "Credit 0.741 -> 0.755 gives +" + fmt("%.4f", v) + "%"};
}

// ---------------------------------------------------------------- 9

Outcome schedule() {
  const double base = 2e-4;
  std::string detail;
  bool ok = true;
  for (std::size_t total : {100u, 1000u, 4321u}) {
    ScheduleConfig s{total, 0.03, 1};
    double peak = 0.0;
    for (std::size_t t = 0; t <= total; ++t) peak = std::max(peak, lr_at(t, s, base));
    const double at_end = lr_at(s.warmup_steps(), s, base);
    ok = ok && lr_at(0, s, base) == 0.0 && std::abs(at_end - base) < 1e-18 && std::abs(peak - base) < 1e-18;
    if (total == 1000)
      detail = "total 1000: lr(0) = " + fmt("%g", lr_at(0, s, base)) + ", lr(" + std::to_string(s.warmup_steps()) +
               ") = " + fmt("%g", at_end) + ", max = " + fmt("%g", peak);
  }
  return {ok, detail};
}

// ---------------------------------------------------------------- 10

Outcome serialization() {
  Model model(ModelConfig::desk(), 9);
  model.attach_head("recon_table", 8);
  model.attach_head("task", 3, 1);
  std::mt19937_64 rng(10);
  auto x = normal_values(8, rng);
  auto set = encode_table(x, 1);
  auto batch = make_batch({model.tokenize(set)});
  const auto bytes = checkpoint_bytes(model, 12, "state");
  auto loaded = parse_checkpoint(bytes);
  auto b2 = make_batch({loaded.model->tokenize(set)});
  auto h1 = model.forward(batch), h2 = loaded.model->forward(b2);
  auto o1 = model.apply_head("task", slice_rows(h1, 0, 1)), o2 = loaded.model->apply_head("task", slice_rows(h2, 0, 1));
  double worst = 0.0;
  auto compare = [&](const Tensor& a, const Tensor& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
      worst = std::max(worst, std::abs(a.at(i) - b.at(i)) / std::max(1.0, std::abs(a.at(i))));
  };
  compare(h1, h2);
  compare(o1, o2);

  std::size_t tried = 0, accepted = 0;
  auto attempt = [&](const std::string& corrupt) {
    ++tried;
    try {
      parse_checkpoint(corrupt);
      ++accepted;
    } catch (const Error&) {
    }
  };
  std::uniform_int_distribution<std::size_t> pos(0, bytes.size() - 1);
  const std::size_t head = std::min<std::size_t>(bytes.size(), 4096);
  for (std::size_t i = 0; i < head; ++i) {
    auto c = bytes;
    c[i] = static_cast<char>(c[i] ^ 0x5a);
    attempt(c);
  }
  for (int k = 0; k < 300; ++k) {
    auto c = bytes;
    const auto i = pos(rng);
    c[i] = static_cast<char>(c[i] ^ (1 + k % 255));
    attempt(c);
    attempt(bytes.substr(0, pos(rng)));
  }
  attempt(bytes + "x");
  attempt("");
  return {worst <= 1e-6 && accepted == 0,
          "max relative forward deviation " + fmt("%.2e", worst) + "; " + std::to_string(accepted) + " of " +
              std::to_string(tried) + " corrupted files accepted"};
}

// ---------------------------------------------------------------- 11

Outcome corruption_statistics() {
  std::mt19937_64 rng(2024);
  const auto numeric = CorruptionSpec::defaults(ModalityKind::Table);
  auto masked = corrupt_numeric(std::vector<double>(100000, 1.0), numeric, rng);
  const double rate = masked.mask.masked.size() / 1e5;
  auto noisy = corrupt_numeric(std::vector<double>(100000, 0.0), numeric, rng);
  std::vector<bool> hit(100000, false);
  for (auto i : noisy.mask.masked) hit[i] = true;
  double sum = 0, sq = 0, k = 0;
  for (std::size_t i = 0; i < hit.size(); ++i)
    if (!hit[i]) {
      sum += noisy.values[i];
      sq += noisy.values[i] * noisy.values[i];
      ++k;
    }
  const double var = (sq - sum * sum / k) / (k - 1);
  auto text = corrupt_text(std::vector<double>(100000, 3.0), CorruptionSpec::defaults(ModalityKind::Text), 9, rng);
  const double text_rate = text.mask.masked.size() / 1e5;
  const bool ok = std::abs(rate - 0.10) <= 0.005 && std::abs(text_rate - 0.15) <= 0.005 &&
                  std::abs(var - 0.1) <= 0.005;
  return {ok, "numeric mask " + fmt("%.4f", rate) + ", text mask " + fmt("%.4f", text_rate) + ", noise variance " +
                  fmt("%.4f", var)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"encoder triplet counts", encoder_counts},
      {"finite-difference gradients", gradient_check},
      {"parallel step applies the mean gradient", mean_gradient},
      {"permutation equivariance", permutation},
      {"pre-training loss halves in 500 steps", convergence},
      {"scaling-law constants recovered", scaling},
      {"metric formulas", metric_fidelity},
      {"improvement percentage", percentage_arithmetic},
      {"learning-rate schedule", schedule},
      {"checkpoint round trip and corruption", serialization},
      {"corruption statistics", corruption_statistics},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("raised: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s  %2d  %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
