#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <random>

#include "pangaea/error.hpp"
#include "pangaea/triplet.hpp"

using namespace pangaea;

namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> dist;
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorKind::Contract;
}

bool same_sets(const TripletSet& a, const TripletSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const auto &x = a.triplets[j], &y = b.triplets[j];
    if (x.num1 != y.num1 || x.num2 != y.num2 || x.local_indices != y.local_indices ||
        x.global_index != y.global_index)
      return false;
  }
  return true;
}

void expect_global_indices_are_a_range(const TripletSet& s) {
  for (std::size_t j = 0; j < s.size(); ++j) EXPECT_EQ(s.triplets[j].global_index, j);
}

// Every index 0..n-1 appears exactly once across all local index lists.
void expect_exact_cover(const TripletSet& s, std::size_t n) {
  std::vector<int> seen(n, 0);
  for (const auto& t : s.triplets)
    for (auto i : t.local_indices) {
      ASSERT_LT(i, n);
      ++seen[i];
    }
  for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(seen[i], 1) << "index " << i;
}

}  // namespace

TEST(Modality, NamesRoundTrip) {
  for (std::size_t i = 0; i < kModalityCount; ++i) {
    auto kind = static_cast<ModalityKind>(i);
    EXPECT_EQ(parse_modality(modality_name(kind)), kind);
  }
  EXPECT_EQ(parse_modality("vision"), ModalityKind::Image);
  EXPECT_FALSE(parse_modality("smell").has_value());
}

// ---------------------------------------------------------------- table

TEST(EncodeTable, FourFeatures) {
  std::vector<double> x{1, 2, 3, 4};
  auto s = encode_table(x, 17);
  ASSERT_EQ(s.size(), 4u);
  for (const auto& t : s.triplets) {
    EXPECT_EQ(t.num1.size(), 2u);
    EXPECT_EQ(t.num2.size(), 2u);
    EXPECT_EQ(t.local_indices.size(), 4u);
  }
  expect_global_indices_are_a_range(s);
}

TEST(EncodeTable, TwoFeaturesDrawFromSample) {
  std::vector<double> x{5, 7};
  for (std::uint64_t seed : {0u, 1u, 2u, 99u}) {
    auto s = encode_table(x, seed);
    ASSERT_EQ(s.size(), 2u);
    for (const auto& t : s.triplets) {
      ASSERT_EQ(t.num1.size(), 1u);
      EXPECT_TRUE(t.num1[0] == 5 || t.num1[0] == 7);
      EXPECT_TRUE(t.num2[0] == 5 || t.num2[0] == 7);
    }
  }
}

TEST(EncodeTable, DeterministicUnderSeed) {
  std::mt19937_64 rng(3);
  auto x = random_values(6, rng);
  EXPECT_TRUE(same_sets(encode_table(x, 42), encode_table(x, 42)));
  EXPECT_FALSE(same_sets(encode_table(x, 42), encode_table(x, 43)));
}

TEST(EncodeTable, PartsAreSubvectorsWithoutRepeats) {
  std::mt19937_64 rng(4);
  auto x = random_values(11, rng);
  auto s = encode_table(x, 5);
  for (const auto& t : s.triplets) {
    ASSERT_EQ(t.num1.size(), 5u);  // floor(11/2)
    ASSERT_EQ(t.local_indices.size(), 10u);
    std::vector<std::size_t> first(t.local_indices.begin(), t.local_indices.begin() + 5);
    std::sort(first.begin(), first.end());
    EXPECT_EQ(std::adjacent_find(first.begin(), first.end()), first.end());
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_EQ(t.num1[i], x[t.local_indices[i]]);
      EXPECT_EQ(t.num2[i], x[t.local_indices[5 + i]]);
    }
  }
}

TEST(EncodeTable, SingleFeature) {
  std::vector<double> x{3.5};
  auto s = encode_table(x, 0);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.triplets[0].num1, std::vector<double>{3.5});
  EXPECT_EQ(s.triplets[0].num2, std::vector<double>{3.5});
}

TEST(EncodeTable, Errors) {
  std::vector<double> empty;
  EXPECT_EQ(kind_of([&] { encode_table(empty, 0); }), ErrorKind::Dimension);
  std::vector<double> wide(384, 1.0);
  EXPECT_EQ(kind_of([&] { encode_table(wide, 0); }), ErrorKind::Capacity);
  std::vector<double> widest_ok(383, 1.0);
  EXPECT_EQ(encode_table(widest_ok, 0).size(), 383u);
}

// ---------------------------------------------------------------- time series

TEST(EncodeTimeSeries, OffsetsAndIndices) {
  std::vector<double> x(256);
  std::iota(x.begin(), x.end(), 0.0);
  auto s = encode_timeseries(x);
  ASSERT_EQ(s.size(), 8u);
  std::vector<std::size_t> first(32);
  std::iota(first.begin(), first.end(), 0);
  EXPECT_EQ(s.triplets[0].local_indices, first);
  EXPECT_EQ(s.triplets[7].local_indices.front(), 224u);
  // triplet 3 (1-based) is index 2
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(s.triplets[2].num1[i], 64.0 + i);
    EXPECT_EQ(s.triplets[2].num2[i], 80.0 + i);
  }
  expect_exact_cover(s, 256);
}

TEST(EncodeTimeSeries, ConstantSeries) {
  std::vector<double> x(256, -2.0);
  for (const auto& t : encode_timeseries(x).triplets) {
    EXPECT_TRUE(std::all_of(t.num1.begin(), t.num1.end(), [](double v) { return v == -2.0; }));
    EXPECT_TRUE(std::all_of(t.num2.begin(), t.num2.end(), [](double v) { return v == -2.0; }));
  }
}

TEST(EncodeTimeSeries, WrongLength) {
  std::vector<double> x(255);
  EXPECT_EQ(kind_of([&] { encode_timeseries(x); }), ErrorKind::Dimension);
}

// ---------------------------------------------------------------- image / audio

TEST(EncodeImage, CountsAndFirstPair) {
  std::vector<double> img(224 * 224 * 3);
  std::iota(img.begin(), img.end(), 0.0);
  auto s = encode_image(img, {224, 224, 3});
  ASSERT_EQ(s.size(), 196u);
  EXPECT_EQ(s.triplets[0].local_indices, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(s.triplets[14].local_indices, (std::vector<std::size_t>{28, 29}));
  expect_exact_cover(s, 392);
  for (const auto& t : s.triplets) {
    EXPECT_EQ(t.num1.size(), 384u);
    EXPECT_EQ(t.num2.size(), 384u);
  }
}

TEST(EncodeImage, ValuesComeFromNamedPatches) {
  std::mt19937_64 rng(9);
  auto img = random_values(224 * 224 * 3, rng);
  auto s = encode_image(img, {224, 224, 3});
  for (std::size_t j : {0u, 13u, 77u, 195u}) {
    const auto& t = s.triplets[j];
    for (int part = 0; part < 2; ++part) {
      const std::size_t p = t.local_indices[part];
      const std::size_t pr = p / 28, pc = p % 28;
      const auto& values = part == 0 ? t.num1 : t.num2;
      for (std::size_t r = 0; r < 16; ++r)
        for (std::size_t c = 0; c < 8; ++c)
          for (std::size_t ch = 0; ch < 3; ++ch)
            EXPECT_EQ(values[(r * 8 + c) * 3 + ch],
                      img[((pr * 16 + r) * 224 + pc * 8 + c) * 3 + ch]);
    }
  }
}

TEST(EncodeImage, ConstantImage) {
  std::vector<double> img(224 * 224 * 3, 0.25);
  for (const auto& t : encode_image(img, {224, 224, 3}).triplets)
    EXPECT_TRUE(std::all_of(t.num2.begin(), t.num2.end(), [](double v) { return v == 0.25; }));
}

TEST(EncodeImage, WrongShape) {
  std::vector<double> img(224 * 224 * 3);
  EXPECT_EQ(kind_of([&] { encode_image(img, {224, 112, 6}); }), ErrorKind::Dimension);
}

TEST(EncodeAudio, CountsAndCoverage) {
  std::vector<double> spec(512 * 128 * 3, 0.0);
  auto s = encode_audio(spec, {512, 128, 3});
  ASSERT_EQ(s.size(), 256u);
  EXPECT_EQ(s.triplets[0].local_indices, (std::vector<std::size_t>{0, 1}));
  expect_exact_cover(s, 512);
  for (const auto& t : s.triplets)
    EXPECT_TRUE(std::all_of(t.num1.begin(), t.num1.end(), [](double v) { return v == 0.0; }));
  EXPECT_EQ(kind_of([&] { encode_audio(spec, {128, 512, 3}); }), ErrorKind::Dimension);
}

// ---------------------------------------------------------------- graph

TEST(EncodeGraph, AnchorRepeated) {
  std::mt19937_64 rng(12);
  auto anchor = random_values(5, rng);
  std::vector<std::vector<double>> nb;
  for (int i = 0; i < 32; ++i) nb.push_back(random_values(5, rng));
  auto s = encode_graph(anchor, nb);
  ASSERT_EQ(s.size(), 32u);
  for (std::size_t j = 0; j < 32; ++j) {
    EXPECT_EQ(s.triplets[j].num1, anchor);
    EXPECT_EQ(s.triplets[j].num2, nb[j]);
  }
}

TEST(EncodeGraph, NeighborsEqualAnchor) {
  std::vector<double> anchor{1, 2};
  std::vector<std::vector<double>> nb(32, anchor);
  for (const auto& t : encode_graph(anchor, nb).triplets) EXPECT_EQ(t.num1, t.num2);
}

TEST(EncodeGraph, HandBuiltToyGraph) {
  std::vector<double> anchor{0.5, -1.0, 2.0};
  std::vector<std::vector<double>> nb;
  for (int i = 0; i < 32; ++i) nb.push_back({double(i), double(i) * 2, -double(i)});
  TripletSet expected{ModalityKind::Graph, {}, {33, 3}};
  for (std::size_t j = 0; j < 32; ++j)
    expected.triplets.push_back({anchor, nb[j], {0, 1, 2}, j});
  EXPECT_TRUE(same_sets(encode_graph(anchor, nb), expected));
}

TEST(EncodeGraph, Errors) {
  std::vector<double> anchor(3, 0.0);
  std::vector<std::vector<double>> nb(31, anchor);
  EXPECT_EQ(kind_of([&] { encode_graph(anchor, nb); }), ErrorKind::Contract);
  std::vector<double> wide(384, 0.0);
  std::vector<std::vector<double>> nb_wide(32, wide);
  EXPECT_EQ(kind_of([&] { encode_graph(wide, nb_wide); }), ErrorKind::Contract);
}

// ---------------------------------------------------------------- text

TEST(EncodeText, PairsConsecutiveIds) {
  std::vector<std::size_t> ids(512);
  std::iota(ids.begin(), ids.end(), 0);
  auto s = encode_text(ids, 4096);
  ASSERT_EQ(s.size(), 256u);
  EXPECT_EQ(s.triplets[0].local_indices, (std::vector<std::size_t>{0, 1}));
  // triplet 5 (1-based) holds ids 8 and 9
  EXPECT_EQ(s.triplets[4].num1[0], 8.0);
  EXPECT_EQ(s.triplets[4].num2[0], 9.0);
  expect_exact_cover(s, 512);
}

TEST(EncodeText, EqualIds) {
  std::vector<std::size_t> ids(512, 3);
  for (const auto& t : encode_text(ids, 10).triplets) EXPECT_EQ(t.num1, t.num2);
}

TEST(EncodeText, Errors) {
  std::vector<std::size_t> short_ids(511, 0);
  EXPECT_EQ(kind_of([&] { encode_text(short_ids, 10); }), ErrorKind::Contract);
  std::vector<std::size_t> ids(512, 0);
  ids[100] = 10;
  EXPECT_EQ(kind_of([&] { encode_text(ids, 10); }), ErrorKind::Contract);
}

// ---------------------------------------------------------------- point cloud

TEST(EncodePointCloud, Counts) {
  std::mt19937_64 rng(1);
  auto groups = random_values(64 * 8 * 3, rng);
  auto s = encode_pointcloud(groups, {64, 8, 3});
  ASSERT_EQ(s.size(), 32u);
  expect_exact_cover(s, 64);
  auto two = encode_pointcloud(std::span<const double>(groups.data(), 2 * 8 * 3), {2, 8, 3});
  ASSERT_EQ(two.size(), 1u);
  EXPECT_EQ(two.triplets[0].local_indices, (std::vector<std::size_t>{0, 1}));
}

TEST(EncodePointCloud, DuplicateGroups) {
  std::vector<double> groups(2 * 4 * 3, 1.0);
  auto s = encode_pointcloud(groups, {2, 4, 3});
  EXPECT_EQ(s.triplets[0].num1, s.triplets[0].num2);
}

TEST(EncodePointCloud, OddGroupCount) {
  std::vector<double> groups(3 * 4 * 3, 1.0);
  EXPECT_EQ(kind_of([&] { encode_pointcloud(groups, {3, 4, 3}); }), ErrorKind::Contract);
}

// ---------------------------------------------------------------- invariants

TEST(EncodeInvariants, CountsMatchTableForEveryModality) {
  std::mt19937_64 rng(77);
  std::vector<Sample> samples;
  samples.push_back({ModalityKind::Table, {13}, random_values(13, rng)});
  samples.push_back({ModalityKind::TimeSeries, {256}, random_values(256, rng)});
  samples.push_back({ModalityKind::Image, {224, 224, 3}, random_values(224 * 224 * 3, rng)});
  samples.push_back({ModalityKind::Audio, {512, 128, 3}, random_values(512 * 128 * 3, rng)});
  samples.push_back({ModalityKind::Graph, {33, 6}, random_values(33 * 6, rng)});
  std::vector<double> ids(512);
  for (auto& v : ids) v = double(rng() % 100);
  samples.push_back({ModalityKind::Text, {512}, ids});
  samples.push_back({ModalityKind::PointCloud, {20, 5, 3}, random_values(20 * 5 * 3, rng)});
  const std::map<ModalityKind, std::size_t> table{
      {ModalityKind::Table, 13}, {ModalityKind::TimeSeries, 8}, {ModalityKind::Image, 196},
      {ModalityKind::Audio, 256}, {ModalityKind::Graph, 32},    {ModalityKind::Text, 256},
      {ModalityKind::PointCloud, 10}};
  for (const auto& s : samples) {
    auto set = encode(s, 1, 100);
    EXPECT_EQ(set.size(), table.at(s.modality)) << modality_name(s.modality);
    EXPECT_EQ(set.size(), expected_triplet_count(s.modality, s.shape));
    expect_global_indices_are_a_range(set);
  }
}
