#include "pangaea/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "json.hpp"

#include "pangaea/error.hpp"

namespace pangaea {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- tensor files

namespace {

constexpr char kTensorMagic[4] = {'P', 'G', 'T', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  void need(std::size_t n) const {
    require(pos_ + n <= bytes_.size(), ErrorKind::Truncated, what_ + ": file is truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::string& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    require(static_cast<bool>(out), ErrorKind::Io, "write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    fail(ErrorKind::Io, "cannot rename " + tmp.string() + " to " + path.string() + ": " +
                            ec.message());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_tensor_file(const fs::path& path, const Shape& shape, std::span<const double> values) {
  require(shape_size(shape) == values.size(), ErrorKind::Dimension,
          "tensor file: shape " + shape_string(shape) + " does not match " +
              std::to_string(values.size()) + " values");
  std::string out(kTensorMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put_u64(out, d);
  for (double v : values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  write_file_atomic(path, out);
}

TensorData read_tensor_file(const fs::path& path) {
  const std::string bytes = read_file(path);
  ByteReader r(bytes, path.string());
  require(r.take(4) == std::string(kTensorMagic, 4), ErrorKind::Format,
          path.string() + ": not a PGT1 tensor file");
  TensorData t;
  const std::uint32_t rank = r.u32();
  for (std::uint32_t i = 0; i < rank; ++i) t.shape.push_back(r.u64());
  const std::size_t n = shape_size(t.shape);
  require(r.remaining() >= 4 * n, ErrorKind::Truncated, path.string() + ": payload is truncated");
  require(r.remaining() == 4 * n, ErrorKind::Format, path.string() + ": trailing bytes");
  t.values.resize(n);
  for (auto& v : t.values) v = r.f32();
  return t;
}

// ---------------------------------------------------------------- csv

namespace {

struct ParsedCsv {
  std::vector<CsvRow> rows;
  std::vector<std::size_t> lines;  // 1-based line where each row starts
};

ParsedCsv parse_csv_lines(const std::string& text) {
  ParsedCsv out;
  CsvRow row;
  std::string field;
  bool quoted = false, field_started = false;
  std::size_t line = 1, row_line = 1;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    out.rows.push_back(std::move(row));
    out.lines.push_back(row_line);
    row.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
      continue;
    } else if (c == '\n') {
      end_row();
      row_line = ++line;
    } else {
      field.push_back(c);
      field_started = true;
    }
  }
  require(!quoted, ErrorKind::Parse, "unterminated quoted field starting on line " +
                                         std::to_string(row_line));
  if (field_started || !row.empty() || !field.empty()) end_row();
  return out;
}

bool needs_quotes(const std::string& s) {
  return s.find_first_of(",\"\r\n") != std::string::npos;
}

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::optional<double> parse_number(const std::string& s) {
  double v = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  while (begin < end && *begin == ' ') ++begin;
  while (end > begin && end[-1] == ' ') --end;
  if (begin < end && *begin == '+') ++begin;
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end) return std::nullopt;
  return v;
}

}  // namespace

std::vector<CsvRow> parse_csv(const std::string& text) { return parse_csv_lines(text).rows; }

std::string format_csv(const std::vector<CsvRow>& rows) {
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out.push_back(',');
      if (needs_quotes(row[i])) {
        out.push_back('"');
        for (char c : row[i]) {
          if (c == '"') out.push_back('"');
          out.push_back(c);
        }
        out.push_back('"');
      } else {
        out += row[i];
      }
    }
    out.push_back('\n');
  }
  return out;
}

std::vector<std::optional<double>> TableCsv::column(std::size_t c) const {
  require(c < header.size(), ErrorKind::Contract, "column index out of range");
  std::vector<std::optional<double>> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[c]);
  return out;
}

TableCsv parse_table_csv(const std::string& text, const std::vector<CsvColumn>& schema) {
  auto parsed = parse_csv_lines(text);
  require(!parsed.rows.empty(), ErrorKind::Parse, "csv has no header row");
  TableCsv t;
  t.header = parsed.rows.front();
  const std::size_t width = t.header.size();
  require(schema.empty() || schema.size() == width, ErrorKind::Config,
          "schema lists " + std::to_string(schema.size()) + " columns, csv has " +
              std::to_string(width));
  t.categories.resize(width);
  std::vector<std::map<std::string, std::size_t>> codes(width);
  for (std::size_t r = 1; r < parsed.rows.size(); ++r) {
    const auto& row = parsed.rows[r];
    const std::size_t line = parsed.lines[r];
    require(row.size() == width, ErrorKind::Parse,
            "line " + std::to_string(line) + ": expected " + std::to_string(width) +
                " fields, got " + std::to_string(row.size()));
    std::vector<std::optional<double>> cells(width);
    for (std::size_t c = 0; c < width; ++c) {
      if (row[c].empty()) continue;
      const bool categorical = !schema.empty() && schema[c] == CsvColumn::Categorical;
      if (categorical) {
        auto [it, inserted] = codes[c].emplace(row[c], t.categories[c].size());
        if (inserted) t.categories[c].push_back(row[c]);
        cells[c] = static_cast<double>(it->second);
      } else {
        auto v = parse_number(row[c]);
        require(v.has_value(), ErrorKind::Parse,
                "line " + std::to_string(line) + ": column '" + t.header[c] +
                    "' is not numeric: '" + row[c] + "'");
        cells[c] = v;
      }
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

TableCsv read_table_csv(const fs::path& path, const std::vector<CsvColumn>& schema) {
  return parse_table_csv(read_file(path), schema);
}

void write_table_csv(const fs::path& path, const TableCsv& table) {
  std::vector<CsvRow> rows{table.header};
  for (const auto& r : table.rows) {
    CsvRow out;
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (!r[c]) {
        out.emplace_back();
      } else if (c < table.categories.size() && !table.categories[c].empty()) {
        out.push_back(table.categories[c].at(static_cast<std::size_t>(*r[c])));
      } else {
        out.push_back(format_number(*r[c]));
      }
    }
    rows.push_back(std::move(out));
  }
  write_file_atomic(path, format_csv(rows));
}

// ---------------------------------------------------------------- converters

std::vector<std::vector<double>> frame_timeseries(std::span<const double> series,
                                                  std::size_t window, std::size_t stride) {
  require(window > 0 && stride > 0, ErrorKind::Config, "window and stride must be positive");
  require(series.size() >= window, ErrorKind::Contract,
          "series of length " + std::to_string(series.size()) + " is shorter than the window " +
              std::to_string(window));
  std::vector<std::vector<double>> out;
  for (std::size_t start = 0; start + window <= series.size(); start += stride)
    out.emplace_back(series.begin() + start, series.begin() + start + window);
  return out;
}

namespace {

double dist2(std::span<const double> points, std::size_t i, std::span<const double> c) {
  double s = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double d = points[3 * i + a] - c[a];
    s += d * d;
  }
  return s;
}

}  // namespace

std::vector<std::size_t> farthest_point_sampling(std::span<const double> points, std::size_t g,
                                                 std::uint64_t seed) {
  require(points.size() % 3 == 0, ErrorKind::Dimension, "points must be S x 3");
  const std::size_t s = points.size() / 3;
  require(g >= 1 && s >= g, ErrorKind::Contract,
          "cannot select " + std::to_string(g) + " centers from " + std::to_string(s) + " points");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> centers{std::uniform_int_distribution<std::size_t>(0, s - 1)(rng)};
  std::vector<double> nearest(s);
  for (std::size_t i = 0; i < s; ++i) nearest[i] = dist2(points, i, points.subspan(3 * centers[0], 3));
  while (centers.size() < g) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < s; ++i)
      if (nearest[i] > nearest[best]) best = i;
    centers.push_back(best);
    for (std::size_t i = 0; i < s; ++i)
      nearest[i] = std::min(nearest[i], dist2(points, i, points.subspan(3 * best, 3)));
  }
  return centers;
}

std::vector<std::size_t> k_nearest(std::span<const double> points, std::span<const double> center,
                                   std::size_t k) {
  const std::size_t s = points.size() / 3;
  require(k >= 1 && k <= s, ErrorKind::Contract, "k must lie in [1, S]");
  std::vector<std::pair<double, std::size_t>> d(s);
  for (std::size_t i = 0; i < s; ++i) d[i] = {dist2(points, i, center), i};
  std::partial_sort(d.begin(), d.begin() + k, d.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = d[i].second;
  return out;
}

Sample group_pointcloud(std::span<const double> points, std::size_t g, std::size_t k,
                        std::uint64_t seed) {
  require(points.size() % 3 == 0, ErrorKind::Dimension, "points must be S x 3");
  const std::size_t s = points.size() / 3;
  require(g >= 2 && s >= g, ErrorKind::Contract,
          "point grouping needs S >= g >= 2 (S=" + std::to_string(s) + ", g=" + std::to_string(g) +
              ")");
  require(k >= 1 && s >= k, ErrorKind::Contract, "point grouping needs S >= k >= 1");
  Sample out{ModalityKind::PointCloud, {g, k, 3}, {}};
  out.values.reserve(g * k * 3);
  for (auto c : farthest_point_sampling(points, g, seed))
    for (auto i : k_nearest(points, points.subspan(3 * c, 3), k))
      out.values.insert(out.values.end(), points.begin() + 3 * i, points.begin() + 3 * i + 3);
  return out;
}

std::vector<std::size_t> sample_graph_neighbors(const Graph& graph, std::size_t anchor,
                                                std::size_t count, std::uint64_t seed) {
  require(anchor < graph.nodes && graph.adjacency.size() == graph.nodes, ErrorKind::Contract,
          "anchor " + std::to_string(anchor) + " is not a node of the graph");
  const auto& nb = graph.adjacency[anchor];
  if (nb.empty()) return std::vector<std::size_t>(count, anchor);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out;
  out.reserve(count);
  if (nb.size() < count) {
    std::uniform_int_distribution<std::size_t> pick(0, nb.size() - 1);
    for (std::size_t i = 0; i < count; ++i) out.push_back(nb[pick(rng)]);
    return out;
  }
  std::vector<std::size_t> pool = nb;
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
    out.push_back(pool[i]);
  }
  return out;
}

Sample graph_sample(const Graph& graph, std::size_t anchor, std::uint64_t seed) {
  const std::size_t d = graph.feature_dim;
  require(d > 0 && graph.features.size() == graph.nodes * d, ErrorKind::Dimension,
          "graph features must be nodes x feature_dim");
  Sample out{ModalityKind::Graph, {kGraphNeighbors + 1, d}, {}};
  auto row = [&](std::size_t v) {
    out.values.insert(out.values.end(), graph.features.begin() + v * d,
                      graph.features.begin() + (v + 1) * d);
  };
  row(anchor);
  for (auto v : sample_graph_neighbors(graph, anchor, kGraphNeighbors, seed)) row(v);
  return out;
}

// ---------------------------------------------------------------- records

RecordWriter::RecordWriter(std::ostream& out, std::string index_key)
    : out_(out), key_(std::move(index_key)) {
  require(key_ == "step" || key_ == "epoch", ErrorKind::Config,
          "record index must be 'step' or 'epoch'");
}

void RecordWriter::write(std::size_t index, const std::string& name, double value) {
  nlohmann::ordered_json j;
  j[key_] = index;
  j["name"] = name;
  j["value"] = value;
  out_ << j.dump() << '\n';
}

std::string format_plotdata(const std::vector<PlotPoint>& points, const std::string& x_name,
                            const std::string& y_name) {
  require(!points.empty(), ErrorKind::Contract, "plot data needs at least one point");
  std::vector<CsvRow> rows{{x_name, y_name}};
  for (const auto& p : points) rows.push_back({format_number(p.x), format_number(p.y)});
  return format_csv(rows);
}

void write_plotdata(const fs::path& path, const std::vector<PlotPoint>& points,
                    const std::string& x_name, const std::string& y_name) {
  write_file_atomic(path, format_plotdata(points, x_name, y_name));
}

}  // namespace pangaea
