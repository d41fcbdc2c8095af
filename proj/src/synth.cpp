#include "pangaea/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "pangaea/error.hpp"

namespace pangaea {

void SynthSpec::validate() const {
  require(count > 0, ErrorKind::Config, "synthetic count must be positive");
  require(noise >= 0.0, ErrorKind::Config, "synthetic noise must be non-negative");
  switch (modality) {
    case ModalityKind::Table:
      require(features > 0 && features < kNumericPad, ErrorKind::Config,
              "table features must lie in [1, 384)");
      require(classes != 1, ErrorKind::Config, "classes must be 0 (regression) or >= 2");
      break;
    case ModalityKind::TimeSeries:
      require(!frequencies.empty(), ErrorKind::Config, "time series needs frequencies");
      for (double f : frequencies)
        require(f > 0.0 && f < kSeriesLength / 2.0, ErrorKind::Config,
                "frequencies must lie in (0, 128) cycles per window");
      break;
    case ModalityKind::Image:
    case ModalityKind::Audio:
      require(pattern_classes >= 1, ErrorKind::Config, "pattern_classes must be positive");
      break;
    case ModalityKind::Graph:
      require(nodes >= 2 && communities >= 1 && communities <= nodes, ErrorKind::Config,
              "graph needs nodes >= 2 and 1 <= communities <= nodes");
      require(feature_dim > 0 && feature_dim < kNumericPad, ErrorKind::Config,
              "graph feature_dim must lie in [1, 384)");
      require(p_in >= 0.0 && p_in <= 1.0 && p_out >= 0.0 && p_out <= 1.0, ErrorKind::Config,
              "edge probabilities must lie in [0,1]");
      break;
    case ModalityKind::Text:
      require(vocab >= 3, ErrorKind::Config, "text vocabulary must hold at least 3 ids");
      break;
    case ModalityKind::PointCloud:
      require(groups >= 2 && groups % 2 == 0, ErrorKind::Config, "groups must be even and >= 2");
      require(points >= groups && points >= group_size && group_size >= 1, ErrorKind::Config,
              "points must be at least groups and group_size");
      break;
  }
}

double table_rule(const SynthSpec& spec, const std::vector<double>& weights,
                  std::span<const double> x) {
  const std::size_t d = x.size();
  const std::size_t rows = spec.classes == 0 ? 1 : spec.classes;
  require(weights.size() == rows * d, ErrorKind::Dimension, "weights do not match the row");
  std::vector<double> score(rows, 0.0);
  for (std::size_t c = 0; c < rows; ++c)
    for (std::size_t i = 0; i < d; ++i) score[c] += weights[c * d + i] * x[i];
  if (spec.classes == 0) return score[0];
  return static_cast<double>(std::max_element(score.begin(), score.end()) - score.begin());
}

namespace {

using Rng = std::mt19937_64;

void gen_table(const SynthSpec& spec, Rng& rng, SynthDataset& out) {
  std::normal_distribution<double> n01;
  const std::size_t rows = spec.classes == 0 ? 1 : spec.classes;
  out.weights.resize(rows * spec.features);
  for (auto& w : out.weights) w = n01(rng);
  for (std::size_t s = 0; s < spec.count; ++s) {
    Sample x{ModalityKind::Table, {spec.features}, std::vector<double>(spec.features)};
    for (auto& v : x.values) v = n01(rng);
    if (spec.classes == 0) {
      out.labels.push_back(table_rule(spec, out.weights, x.values) + spec.noise * n01(rng));
    } else {
      std::vector<double> score(rows, 0.0);
      for (std::size_t c = 0; c < rows; ++c) {
        for (std::size_t i = 0; i < spec.features; ++i)
          score[c] += out.weights[c * spec.features + i] * x.values[i];
        score[c] += spec.noise * n01(rng);
      }
      out.labels.push_back(
          static_cast<double>(std::max_element(score.begin(), score.end()) - score.begin()));
    }
    out.samples.push_back(std::move(x));
  }
}

void gen_timeseries(const SynthSpec& spec, Rng& rng, SynthDataset& out) {
  std::uniform_real_distribution<double> amp(0.5, 1.5), phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> n01;
  for (std::size_t s = 0; s < spec.count; ++s) {
    Sample x{ModalityKind::TimeSeries, {kSeriesLength}, std::vector<double>(kSeriesLength, 0.0)};
    std::size_t strongest = 0;
    double best = -1.0;
    for (std::size_t f = 0; f < spec.frequencies.size(); ++f) {
      const double a = amp(rng), p = phase(rng);
      if (a > best) {
        best = a;
        strongest = f;
      }
      for (std::size_t t = 0; t < kSeriesLength; ++t)
        x.values[t] += a * std::sin(2.0 * std::numbers::pi * spec.frequencies[f] *
                                        static_cast<double>(t) / kSeriesLength +
                                    p);
    }
    for (auto& v : x.values) v += spec.noise * n01(rng);
    out.samples.push_back(std::move(x));
    out.labels.push_back(static_cast<double>(strongest));
  }
}

void gen_pattern(const SynthSpec& spec, Rng& rng, SynthDataset& out, std::size_t height,
                 std::size_t width) {
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi), freq(2.0, 6.0);
  std::normal_distribution<double> n01;
  for (std::size_t s = 0; s < spec.count; ++s) {
    const std::size_t cls = s % spec.pattern_classes;
    const double theta = std::numbers::pi * static_cast<double>(cls) /
                         static_cast<double>(spec.pattern_classes);
    const double f = freq(rng), p = phase(rng);
    Sample x{spec.modality, {height, width, kChannels}, std::vector<double>(height * width * 3)};
    for (std::size_t r = 0; r < height; ++r)
      for (std::size_t c = 0; c < width; ++c) {
        const double u = (static_cast<double>(c) * std::cos(theta) +
                          static_cast<double>(r) * std::sin(theta)) /
                         static_cast<double>(std::max(height, width));
        const double base = 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * f * u + p);
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double v = base * (0.6 + 0.2 * static_cast<double>(ch)) + spec.noise * n01(rng);
          x.values[(r * width + c) * 3 + ch] = std::clamp(v, 0.0, 1.0);
        }
      }
    out.samples.push_back(std::move(x));
    out.labels.push_back(static_cast<double>(cls));
  }
}

void gen_graph(const SynthSpec& spec, Rng& rng, SynthDataset& out) {
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u01;
  Graph& g = out.graph;
  g.nodes = spec.nodes;
  g.feature_dim = spec.feature_dim;
  g.adjacency.assign(spec.nodes, {});
  std::vector<std::size_t> community(spec.nodes);
  for (std::size_t v = 0; v < spec.nodes; ++v) community[v] = v % spec.communities;
  for (std::size_t a = 0; a < spec.nodes; ++a)
    for (std::size_t b = a + 1; b < spec.nodes; ++b) {
      const double p = community[a] == community[b] ? spec.p_in : spec.p_out;
      if (u01(rng) < p) {
        g.adjacency[a].push_back(b);
        g.adjacency[b].push_back(a);
      }
    }
  std::vector<double> centroids(spec.communities * spec.feature_dim);
  for (auto& c : centroids) c = n01(rng);
  g.features.resize(spec.nodes * spec.feature_dim);
  for (std::size_t v = 0; v < spec.nodes; ++v)
    for (std::size_t i = 0; i < spec.feature_dim; ++i)
      g.features[v * spec.feature_dim + i] =
          centroids[community[v] * spec.feature_dim + i] + spec.noise * n01(rng);
  for (std::size_t s = 0; s < spec.count; ++s) {
    const std::size_t anchor = s % spec.nodes;
    out.samples.push_back(graph_sample(g, anchor, rng()));
    out.labels.push_back(static_cast<double>(community[anchor]));
  }
}

void gen_text(const SynthSpec& spec, Rng& rng, SynthDataset& out) {
  const std::size_t usable = spec.vocab - 1;
  constexpr std::size_t kChains = 2, kFanout = 3;
  std::uniform_int_distribution<std::size_t> any(0, usable - 1), branch(0, kFanout - 1);
  std::vector<std::size_t> successors(kChains * usable * kFanout);
  for (auto& s : successors) s = any(rng);
  for (std::size_t s = 0; s < spec.count; ++s) {
    const std::size_t chain = s % kChains;
    Sample x{ModalityKind::Text, {kTextLength}, std::vector<double>(kTextLength)};
    std::size_t cur = any(rng);
    for (std::size_t t = 0; t < kTextLength; ++t) {
      x.values[t] = static_cast<double>(cur);
      cur = successors[(chain * usable + cur) * kFanout + branch(rng)];
    }
    out.samples.push_back(std::move(x));
    out.labels.push_back(static_cast<double>(chain));
  }
}

void gen_pointcloud(const SynthSpec& spec, Rng& rng, SynthDataset& out) {
  std::uniform_real_distribution<double> u(-1.0, 1.0), angle(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> n01;
  for (std::size_t s = 0; s < spec.count; ++s) {
    const std::size_t shape = s % 3;
    std::vector<double> pts;
    pts.reserve(spec.points * 3);
    for (std::size_t i = 0; i < spec.points; ++i) {
      double x = 0, y = 0, z = 0;
      if (shape == 0) {  // sphere
        do {
          x = n01(rng);
          y = n01(rng);
          z = n01(rng);
        } while (x * x + y * y + z * z < 1e-12);
        const double r = std::sqrt(x * x + y * y + z * z);
        x /= r;
        y /= r;
        z /= r;
      } else if (shape == 1) {  // cube surface
        x = u(rng);
        y = u(rng);
        z = u(rng);
        const std::size_t face = std::uniform_int_distribution<std::size_t>(0, 5)(rng);
        const double side = face % 2 ? 1.0 : -1.0;
        (face / 2 == 0 ? x : face / 2 == 1 ? y : z) = side;
      } else {  // cylinder side
        const double a = angle(rng);
        x = std::cos(a);
        y = std::sin(a);
        z = u(rng);
      }
      pts.push_back(x + spec.noise * n01(rng));
      pts.push_back(y + spec.noise * n01(rng));
      pts.push_back(z + spec.noise * n01(rng));
    }
    out.samples.push_back(group_pointcloud(pts, spec.groups, spec.group_size, rng()));
    out.labels.push_back(static_cast<double>(shape));
  }
}

}  // namespace

SynthDataset gen_synthetic(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  SynthDataset out;
  out.modality = spec.modality;
  switch (spec.modality) {
    case ModalityKind::Table: gen_table(spec, rng, out); break;
    case ModalityKind::TimeSeries: gen_timeseries(spec, rng, out); break;
    case ModalityKind::Image: gen_pattern(spec, rng, out, kImageSide, kImageSide); break;
    case ModalityKind::Audio: gen_pattern(spec, rng, out, kAudioRows, kAudioCols); break;
    case ModalityKind::Graph: gen_graph(spec, rng, out); break;
    case ModalityKind::Text: gen_text(spec, rng, out); break;
    case ModalityKind::PointCloud: gen_pointcloud(spec, rng, out); break;
  }
  return out;
}

}  // namespace pangaea
