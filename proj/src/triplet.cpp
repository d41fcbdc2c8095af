#include "pangaea/triplet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "pangaea/error.hpp"

namespace pangaea {

const char* modality_name(ModalityKind kind) noexcept {
  switch (kind) {
    case ModalityKind::Table: return "table";
    case ModalityKind::TimeSeries: return "timeseries";
    case ModalityKind::Image: return "image";
    case ModalityKind::Audio: return "audio";
    case ModalityKind::Graph: return "graph";
    case ModalityKind::Text: return "text";
    case ModalityKind::PointCloud: return "pointcloud";
  }
  return "unknown";
}

std::optional<ModalityKind> parse_modality(std::string_view name) noexcept {
  for (std::size_t i = 0; i < kModalityCount; ++i) {
    auto kind = static_cast<ModalityKind>(i);
    if (name == modality_name(kind)) return kind;
  }
  if (name == "vision") return ModalityKind::Image;
  if (name == "time-series" || name == "time_series") return ModalityKind::TimeSeries;
  if (name == "point-cloud" || name == "point_cloud") return ModalityKind::PointCloud;
  return std::nullopt;
}

namespace {

void require_shape(const Shape& got, const Shape& want, std::size_t values, const char* what) {
  require(got == want && values == shape_size(want), ErrorKind::Dimension,
          std::string(what) + ": expected shape " + shape_string(want) + ", got " +
              shape_string(got));
}

// Splits an H x W x 3 grid into 16 x 8 x 3 patches and pairs horizontal neighbours.
TripletSet encode_patch_grid(ModalityKind kind, std::span<const double> grid, std::size_t height,
                             std::size_t width) {
  const std::size_t patch_rows = height / kPatchRows;
  const std::size_t patch_cols = width / kPatchCols;
  auto patch = [&](std::size_t index) {
    const std::size_t pr = index / patch_cols, pc = index % patch_cols;
    std::vector<double> out;
    out.reserve(kPatchValues);
    for (std::size_t r = 0; r < kPatchRows; ++r) {
      const std::size_t row = pr * kPatchRows + r;
      const double* src = grid.data() + (row * width + pc * kPatchCols) * kChannels;
      out.insert(out.end(), src, src + kPatchCols * kChannels);
    }
    return out;
  };
  TripletSet set{kind, {}, {height, width, kChannels}};
  const std::size_t pairs_per_row = patch_cols / 2;
  set.triplets.reserve(patch_rows * pairs_per_row);
  for (std::size_t j = 0; j < patch_rows * pairs_per_row; ++j) {
    const std::size_t left = (j / pairs_per_row) * patch_cols + 2 * (j % pairs_per_row);
    set.triplets.push_back({patch(left), patch(left + 1), {left, left + 1}, j});
  }
  return set;
}

}  // namespace

TripletSet encode_table(std::span<const double> x, std::uint64_t seed) {
  const std::size_t d = x.size();
  require(d > 0, ErrorKind::Dimension, "encode_table: empty sample");
  require(d < kNumericPad, ErrorKind::Capacity,
          "encode_table: " + std::to_string(d) + " features exceed the padding capacity " +
              std::to_string(kNumericPad));
  const std::size_t part = std::max<std::size_t>(1, d / 2);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> pool(d);

  // Partial Fisher-Yates: the first `part` entries are a uniform draw without replacement.
  auto draw = [&] {
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < part; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, d - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    std::vector<std::size_t> idx(pool.begin(), pool.begin() + part);
    std::sort(idx.begin(), idx.end());
    return idx;
  };

  TripletSet set{ModalityKind::Table, {}, {d}};
  set.triplets.reserve(d);
  for (std::size_t j = 0; j < d; ++j) {
    RawTriplet t;
    t.global_index = j;
    for (auto* out : {&t.num1, &t.num2}) {
      for (auto i : draw()) {
        out->push_back(x[i]);
        t.local_indices.push_back(i);
      }
    }
    set.triplets.push_back(std::move(t));
  }
  return set;
}

TripletSet encode_timeseries(std::span<const double> x) {
  require(x.size() == kSeriesLength, ErrorKind::Dimension,
          "encode_timeseries: expected 256 values, got " + std::to_string(x.size()));
  TripletSet set{ModalityKind::TimeSeries, {}, {kSeriesLength}};
  for (std::size_t j = 0; j < kSeriesTriplets; ++j) {
    const std::size_t offset = 32 * j;
    RawTriplet t;
    t.num1.assign(x.begin() + offset, x.begin() + offset + 16);
    t.num2.assign(x.begin() + offset + 16, x.begin() + offset + 32);
    t.local_indices.resize(32);
    std::iota(t.local_indices.begin(), t.local_indices.end(), offset);
    t.global_index = j;
    set.triplets.push_back(std::move(t));
  }
  return set;
}

TripletSet encode_image(std::span<const double> pixels, const Shape& shape) {
  require_shape(shape, {kImageSide, kImageSide, kChannels}, pixels.size(), "encode_image");
  return encode_patch_grid(ModalityKind::Image, pixels, kImageSide, kImageSide);
}

TripletSet encode_audio(std::span<const double> spectrogram, const Shape& shape) {
  require_shape(shape, {kAudioRows, kAudioCols, kChannels}, spectrogram.size(), "encode_audio");
  return encode_patch_grid(ModalityKind::Audio, spectrogram, kAudioRows, kAudioCols);
}

TripletSet encode_graph(std::span<const double> anchor,
                        const std::vector<std::vector<double>>& neighbors) {
  const std::size_t d = anchor.size();
  require(d > 0 && d < kNumericPad, ErrorKind::Contract,
          "encode_graph: feature dimension must be in [1, 384), got " + std::to_string(d));
  require(neighbors.size() == kGraphNeighbors, ErrorKind::Contract,
          "encode_graph: expected 32 neighbors, got " + std::to_string(neighbors.size()));
  std::vector<std::size_t> features(d);
  std::iota(features.begin(), features.end(), 0);
  TripletSet set{ModalityKind::Graph, {}, {kGraphNeighbors + 1, d}};
  for (std::size_t j = 0; j < kGraphNeighbors; ++j) {
    require(neighbors[j].size() == d, ErrorKind::Contract,
            "encode_graph: neighbor feature length differs from anchor");
    set.triplets.push_back(
        {std::vector<double>(anchor.begin(), anchor.end()), neighbors[j], features, j});
  }
  return set;
}

TripletSet encode_text(std::span<const std::size_t> ids, std::size_t vocab_size) {
  require(ids.size() == kTextLength, ErrorKind::Contract,
          "encode_text: expected 512 token ids, got " + std::to_string(ids.size()));
  for (auto id : ids)
    require(id < vocab_size, ErrorKind::Contract,
            "encode_text: token id " + std::to_string(id) + " outside vocabulary of " +
                std::to_string(vocab_size));
  TripletSet set{ModalityKind::Text, {}, {kTextLength}};
  for (std::size_t j = 0; j < kTextLength / 2; ++j)
    set.triplets.push_back({{static_cast<double>(ids[2 * j])},
                            {static_cast<double>(ids[2 * j + 1])},
                            {2 * j, 2 * j + 1},
                            j});
  return set;
}

TripletSet encode_pointcloud(std::span<const double> groups, const Shape& shape) {
  require(shape.size() == 3 && shape[2] == 3 && shape_size(shape) == groups.size(),
          ErrorKind::Dimension, "encode_pointcloud: expected [g,k,3], got " + shape_string(shape));
  const std::size_t g = shape[0], k = shape[1];
  require(g >= 2 && g % 2 == 0, ErrorKind::Contract,
          "encode_pointcloud: group count must be even and >= 2, got " + std::to_string(g));
  const std::size_t stride = k * 3;
  auto group = [&](std::size_t i) {
    return std::vector<double>(groups.begin() + i * stride, groups.begin() + (i + 1) * stride);
  };
  TripletSet set{ModalityKind::PointCloud, {}, shape};
  for (std::size_t j = 0; j < g / 2; ++j)
    set.triplets.push_back({group(2 * j), group(2 * j + 1), {2 * j, 2 * j + 1}, j});
  return set;
}

std::vector<std::size_t> sample_ids(const Sample& sample, std::size_t vocab_size) {
  std::vector<std::size_t> ids;
  ids.reserve(sample.values.size());
  for (double v : sample.values) {
    require(v >= 0.0 && std::floor(v) == v, ErrorKind::Contract,
            "token ids must be non-negative integers");
    require(v < static_cast<double>(vocab_size), ErrorKind::Contract,
            "token id " + std::to_string(static_cast<long long>(v)) + " outside vocabulary");
    ids.push_back(static_cast<std::size_t>(v));
  }
  return ids;
}

TripletSet encode(const Sample& sample, std::uint64_t seed, std::size_t vocab_size) {
  const auto& v = sample.values;
  switch (sample.modality) {
    case ModalityKind::Table:
      require(sample.shape.size() == 1 && sample.shape[0] == v.size(), ErrorKind::Dimension,
              "table sample must be a vector");
      return encode_table(v, seed);
    case ModalityKind::TimeSeries: return encode_timeseries(v);
    case ModalityKind::Image: return encode_image(v, sample.shape);
    case ModalityKind::Audio: return encode_audio(v, sample.shape);
    case ModalityKind::Graph: {
      require(sample.shape.size() == 2 && shape_size(sample.shape) == v.size(),
              ErrorKind::Dimension, "graph sample must be [33,d]");
      require(sample.shape[0] == kGraphNeighbors + 1, ErrorKind::Contract,
              "graph sample must hold the anchor and exactly 32 neighbors");
      const std::size_t d = sample.shape[1];
      std::vector<std::vector<double>> neighbors;
      for (std::size_t j = 1; j <= kGraphNeighbors; ++j)
        neighbors.emplace_back(v.begin() + j * d, v.begin() + (j + 1) * d);
      return encode_graph(std::span<const double>(v.data(), d), neighbors);
    }
    case ModalityKind::Text: {
      auto ids = sample_ids(sample, vocab_size);
      return encode_text(ids, vocab_size);
    }
    case ModalityKind::PointCloud: return encode_pointcloud(v, sample.shape);
  }
  fail(ErrorKind::Contract, "unknown modality");
}

std::size_t expected_triplet_count(ModalityKind kind, const Shape& sample_shape) {
  switch (kind) {
    case ModalityKind::Table: return sample_shape.at(0);
    case ModalityKind::TimeSeries: return kSeriesTriplets;
    case ModalityKind::Text: return kTextLength / 2;
    case ModalityKind::Image: return 196;
    case ModalityKind::Graph: return kGraphNeighbors;
    case ModalityKind::Audio: return 256;
    case ModalityKind::PointCloud: return sample_shape.at(0) / 2;
  }
  return 0;
}

}  // namespace pangaea
