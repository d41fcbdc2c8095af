#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pangaea/tensor.hpp"
#include "pangaea/triplet.hpp"

namespace pangaea {

// ---------------------------------------------------------------- tensor files

// "PGT1", u32 rank, rank x u64 dims, float32 little-endian payload.
struct TensorData {
  Shape shape;
  std::vector<double> values;
};

void write_tensor_file(const std::filesystem::path& path, const Shape& shape,
                       std::span<const double> values);
TensorData read_tensor_file(const std::filesystem::path& path);

// Writes to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// ---------------------------------------------------------------- csv

using CsvRow = std::vector<std::string>;

// RFC 4180 style: fields with comma, quote, CR or LF are quoted, quotes doubled.
std::vector<CsvRow> parse_csv(const std::string& text);
std::string format_csv(const std::vector<CsvRow>& rows);

enum class CsvColumn { Numeric, Categorical };

struct TableCsv {
  std::vector<std::string> header;
  // Row-major cells; std::nullopt marks an empty cell.
  std::vector<std::vector<std::optional<double>>> rows;
  // For categorical columns: code -> original label.
  std::vector<std::vector<std::string>> categories;

  std::vector<std::optional<double>> column(std::size_t c) const;
};

// Categorical columns are integer-coded in order of first appearance.
// An empty schema treats every column as numeric.
TableCsv read_table_csv(const std::filesystem::path& path, const std::vector<CsvColumn>& schema = {});
TableCsv parse_table_csv(const std::string& text, const std::vector<CsvColumn>& schema = {});
void write_table_csv(const std::filesystem::path& path, const TableCsv& table);

// ---------------------------------------------------------------- converters

std::vector<std::vector<double>> frame_timeseries(std::span<const double> series,
                                                  std::size_t window = kSeriesLength,
                                                  std::size_t stride = kSeriesLength);

// Farthest point sampling from a seeded start; returns center indices in selection order.
std::vector<std::size_t> farthest_point_sampling(std::span<const double> points, std::size_t g,
                                                 std::uint64_t seed);
// Indices of the k nearest points to `center` by Euclidean distance (ties by index).
std::vector<std::size_t> k_nearest(std::span<const double> points, std::span<const double> center,
                                   std::size_t k);
// points is S x 3; the result is the [g, k, 3] grouped sample.
Sample group_pointcloud(std::span<const double> points, std::size_t g, std::size_t k,
                        std::uint64_t seed);

struct Graph {
  std::size_t nodes = 0;
  std::vector<std::vector<std::size_t>> adjacency;
  // nodes x feature_dim
  std::vector<double> features;
  std::size_t feature_dim = 0;
};

std::vector<std::size_t> sample_graph_neighbors(const Graph& graph, std::size_t anchor,
                                                std::size_t count, std::uint64_t seed);
// Anchor features followed by the features of 32 sampled neighbors, shape [33, d].
Sample graph_sample(const Graph& graph, std::size_t anchor, std::uint64_t seed);

// ---------------------------------------------------------------- records

// One JSON object per line: {"step": n, "name": ..., "value": ...} (or "epoch").
class RecordWriter {
 public:
  explicit RecordWriter(std::ostream& out, std::string index_key = "step");
  void write(std::size_t index, const std::string& name, double value);

 private:
  std::ostream& out_;
  std::string key_;
};

struct PlotPoint {
  double x;
  double y;
};

// Two-column CSV with a header row, rows in the given order.
std::string format_plotdata(const std::vector<PlotPoint>& points, const std::string& x_name = "x",
                            const std::string& y_name = "y");
void write_plotdata(const std::filesystem::path& path, const std::vector<PlotPoint>& points,
                    const std::string& x_name = "x", const std::string& y_name = "y");

}  // namespace pangaea
