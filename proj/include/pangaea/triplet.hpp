#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "pangaea/tensor.hpp"

namespace pangaea {

enum class ModalityKind { Table, TimeSeries, Image, Audio, Graph, Text, PointCloud };

inline constexpr std::size_t kModalityCount = 7;

const char* modality_name(ModalityKind kind) noexcept;
std::optional<ModalityKind> parse_modality(std::string_view name) noexcept;

// Fixed sample geometry of the shape-constrained modalities.
inline constexpr std::size_t kSeriesLength = 256;
inline constexpr std::size_t kSeriesTriplets = 8;
inline constexpr std::size_t kTextLength = 512;
inline constexpr std::size_t kGraphNeighbors = 32;
inline constexpr std::size_t kPatchRows = 16;
inline constexpr std::size_t kPatchCols = 8;
inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kPatchValues = kPatchRows * kPatchCols * kChannels;  // 384
inline constexpr std::size_t kImageSide = 224;
inline constexpr std::size_t kAudioRows = 512;
inline constexpr std::size_t kAudioCols = 128;
// Numeric parts are zero-padded to this length before tokenization.
inline constexpr std::size_t kNumericPad = 384;

// One sample of any modality, values row-major in `shape`:
//   Table [d], TimeSeries [256], Image [224,224,3], Audio [512,128,3],
//   Graph [33,d] (anchor row then 32 neighbors), Text [512] token ids,
//   PointCloud [g,k,3] grouped points.
struct Sample {
  ModalityKind modality = ModalityKind::Table;
  Shape shape;
  std::vector<double> values;
};

struct RawTriplet {
  std::vector<double> num1;
  std::vector<double> num2;
  std::vector<std::size_t> local_indices;
  std::size_t global_index = 0;
};

struct TripletSet {
  ModalityKind modality = ModalityKind::Table;
  std::vector<RawTriplet> triplets;
  Shape sample_shape;

  std::size_t size() const noexcept { return triplets.size(); }
};

// Each part holds floor(d/2) features (at least one) drawn without replacement.
TripletSet encode_table(std::span<const double> x, std::uint64_t seed);
TripletSet encode_timeseries(std::span<const double> x);
TripletSet encode_image(std::span<const double> pixels, const Shape& shape);
TripletSet encode_audio(std::span<const double> spectrogram, const Shape& shape);
TripletSet encode_graph(std::span<const double> anchor,
                        const std::vector<std::vector<double>>& neighbors);
TripletSet encode_text(std::span<const std::size_t> ids, std::size_t vocab_size);
TripletSet encode_pointcloud(std::span<const double> groups, const Shape& shape);

// Dispatches on sample.modality. `seed` only affects tables; `vocab_size` only text.
TripletSet encode(const Sample& sample, std::uint64_t seed, std::size_t vocab_size);

std::size_t expected_triplet_count(ModalityKind kind, const Shape& sample_shape);

// Token ids stored as doubles in a Sample, validated as integral and in range.
std::vector<std::size_t> sample_ids(const Sample& sample, std::size_t vocab_size);

}  // namespace pangaea
