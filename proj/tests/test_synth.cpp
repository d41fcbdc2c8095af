#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "pangaea/synth.hpp"

using namespace pangaea;

TEST(Synth, SameSeedSameData) {
  for (auto m : {ModalityKind::Table, ModalityKind::TimeSeries, ModalityKind::Graph,
                 ModalityKind::Text, ModalityKind::PointCloud}) {
    SynthSpec spec;
    spec.modality = m;
    spec.count = 6;
    auto a = gen_synthetic(spec, 42);
    auto b = gen_synthetic(spec, 42);
    ASSERT_EQ(a.samples.size(), 6u);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(a.samples[i].values, b.samples[i].values);
    EXPECT_EQ(a.labels, b.labels);
    auto c = gen_synthetic(spec, 43);
    EXPECT_NE(a.samples[0].values, c.samples[0].values);
  }
}

TEST(Synth, NoiselessTableFollowsRule) {
  SynthSpec spec;
  spec.noise = 0.0;
  spec.count = 200;
  spec.classes = 3;
  auto d = gen_synthetic(spec, 1);
  for (std::size_t i = 0; i < d.samples.size(); ++i)
    EXPECT_EQ(d.labels[i], table_rule(spec, d.weights, d.samples[i].values));
  spec.classes = 0;
  auto r = gen_synthetic(spec, 1);
  for (std::size_t i = 0; i < r.samples.size(); ++i)
    EXPECT_DOUBLE_EQ(r.labels[i], table_rule(spec, r.weights, r.samples[i].values));
}

TEST(Synth, SeriesPeaksAtStatedFrequencies) {
  SynthSpec spec;
  spec.modality = ModalityKind::TimeSeries;
  spec.count = 3;
  spec.noise = 0.05;
  auto d = gen_synthetic(spec, 5);
  for (const auto& s : d.samples) {
    std::vector<double> power(kSeriesLength / 2);
    for (std::size_t k = 0; k < power.size(); ++k) {
      std::complex<double> acc = 0;
      for (std::size_t t = 0; t < kSeriesLength; ++t)
        acc += s.values[t] * std::polar(1.0, -2 * std::numbers::pi * k * t / kSeriesLength);
      power[k] = std::norm(acc);
    }
    std::vector<std::size_t> order(power.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::partial_sort(order.begin(), order.begin() + 2, order.end(),
                      [&](auto a, auto b) { return power[a] > power[b]; });
    std::vector<std::size_t> top = {order[0], order[1]};
    std::sort(top.begin(), top.end());
    EXPECT_EQ(top, (std::vector<std::size_t>{3, 11}));
  }
}

TEST(Synth, ShapesPerModality) {
  SynthSpec spec;
  spec.count = 2;
  spec.modality = ModalityKind::Image;
  auto img = gen_synthetic(spec, 1);
  EXPECT_EQ(img.samples[0].shape, (Shape{224, 224, 3}));
  for (double v : img.samples[0].values) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  spec.modality = ModalityKind::Audio;
  EXPECT_EQ(gen_synthetic(spec, 1).samples[0].shape, (Shape{512, 128, 3}));
  spec.modality = ModalityKind::Graph;
  auto g = gen_synthetic(spec, 1);
  EXPECT_EQ(g.samples[0].shape, (Shape{33, 8}));
  EXPECT_EQ(g.graph.nodes, 96u);
  spec.modality = ModalityKind::Text;
  auto t = gen_synthetic(spec, 1);
  for (double v : t.samples[0].values) ASSERT_LT(v, 511.0);
  spec.modality = ModalityKind::PointCloud;
  EXPECT_EQ(gen_synthetic(spec, 1).samples[0].shape, (Shape{16, 8, 3}));
}
