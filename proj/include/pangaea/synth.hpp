#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "pangaea/io.hpp"
#include "pangaea/triplet.hpp"

namespace pangaea {

struct SynthSpec {
  ModalityKind modality = ModalityKind::Table;
  std::size_t count = 64;
  double noise = 0.1;

  // Table: x ~ N(0,1)^features. classes >= 2 labels by argmax of a seeded
  // linear map plus noise; classes == 0 gives a linear regression target.
  std::size_t features = 8;
  std::size_t classes = 2;

  // TimeSeries: sum of sinusoids at these frequencies (cycles per window).
  std::vector<double> frequencies = {3.0, 11.0};

  // Image and audio: oriented gradient patterns, one orientation per class.
  std::size_t pattern_classes = 2;

  // Graph: stochastic block model.
  std::size_t nodes = 96;
  std::size_t communities = 2;
  std::size_t feature_dim = 8;
  double p_in = 0.2;
  double p_out = 0.02;

  // Text: bigram chains over ids 0..vocab-2 (the last id is reserved as mask).
  std::size_t vocab = 512;

  // Point cloud: noisy sphere / cube / cylinder surfaces.
  std::size_t points = 256;
  std::size_t groups = 16;
  std::size_t group_size = 8;

  void validate() const;
};

struct SynthDataset {
  ModalityKind modality = ModalityKind::Table;
  std::vector<Sample> samples;
  // Class index or regression target per sample.
  std::vector<double> labels;
  // Table ground truth, classes (or 1) x features, row-major.
  std::vector<double> weights;
  // Graph generators also return the graph.
  Graph graph;
};

SynthDataset gen_synthetic(const SynthSpec& spec, std::uint64_t seed);

// Ground-truth label of a table row under the stated rule (noise excluded).
double table_rule(const SynthSpec& spec, const std::vector<double>& weights,
                  std::span<const double> x);

}  // namespace pangaea
