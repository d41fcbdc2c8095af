#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pangaea/model.hpp"
#include "pangaea/triplet.hpp"

namespace pangaea {

// 1 - (1-p)^k
double geometric_cdf(double p, std::size_t k);
// 1 - (1-p)^x + c
double predicted_y(double p, double c, double x);

struct ScalingPoint {
  double x = 0.0;
  double y = 0.0;
};

struct ScalingFit {
  double p = 0.0;
  double c = 0.0;
  double residual_sse = 0.0;
  std::vector<ScalingPoint> points;
  // p ended on 0 or 1.
  bool boundary = false;
  std::size_t iterations = 0;
};

// Grid search over p in [0,1] with c profiled out, then damped Gauss-Newton on (p, c).
ScalingFit fit_scaling(const std::vector<ScalingPoint>& points);

// ---------------------------------------------------------------- combinations

inline constexpr std::size_t kPretrainModalities = 5;
// Bit order of subset masks.
inline constexpr std::array<const char*, kPretrainModalities> kPretrainModalityNames = {
    "text", "table", "timeseries", "graph", "vision"};

std::size_t pretrain_modality_index(const std::string& name);
std::uint32_t subset_mask(const std::vector<std::string>& names);

struct CombinationResult {
  std::uint32_t subset = 0;  // bit i set when kPretrainModalityNames[i] was used
  // Task (or task type) name -> raw score, higher is better.
  std::vector<std::pair<std::string, double>> scores;
};

struct CardinalityCurve {
  // One point per cardinality that had data, ascending x.
  std::vector<ScalingPoint> points;
  // Cardinalities in 0..5 with no combination.
  std::vector<std::size_t> gaps;
};

// Per task: min-max normalize across combinations. Then mean per subset
// cardinality, then mean across tasks.
CardinalityCurve aggregate_by_cardinality(const std::vector<CombinationResult>& results);

// ---------------------------------------------------------------- affinity

// Segment label of the reconstruction token and of tokens left out of the analysis.
inline constexpr int kNoSegment = -1;

struct AffinityOptions {
  std::size_t sequence = 0;
  // Empty selects every layer / head.
  std::vector<std::size_t> layers;
  std::vector<std::size_t> heads;
};

struct AffinityMatrix {
  // values[a][b]: mean attention weight from queries of modality a to keys of modality b.
  // NaN when a or b has no tokens.
  std::array<std::array<double, kPretrainModalities>, kPretrainModalities> values{};
  std::array<bool, kPretrainModalities> present{};
};

AffinityMatrix attention_affinity(const std::vector<AttentionMap>& maps,
                                  const std::vector<int>& segments,
                                  const AffinityOptions& options = {});

struct MixedSequence {
  TokenSeq seq;
  std::vector<int> segments;
};

// One recon token followed by the triplet tokens of every part in order,
// positions continuing across parts. Labels index kPretrainModalityNames.
MixedSequence mixed_sequence(const Model& model,
                             const std::vector<std::pair<int, TripletSet>>& parts);

}  // namespace pangaea
