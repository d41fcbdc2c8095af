#include "pangaea/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include "pangaea/error.hpp"

namespace pangaea {

using detail::GradSlots;
using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------- Tensor

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) require(d > 0, ErrorKind::Dimension, "tensor dimensions must be positive");
  require(shape_size(shape) == data.size(), ErrorKind::Dimension,
          "tensor data length " + std::to_string(data.size()) + " does not match shape " +
              shape_string(shape));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
  require(rank() == 2, ErrorKind::Dimension, "expected a matrix, got " + shape_string(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const {
  require(rank() == 2, ErrorKind::Dimension, "expected a matrix, got " + shape_string(shape()));
  return shape()[1];
}

std::span<const double> Tensor::data() const { return node_->value; }

double Tensor::item() const {
  require(size() == 1, ErrorKind::Contract, "item() on a non-scalar tensor");
  return node_->value[0];
}

std::span<double> Tensor::mutable_data() {
  require(is_leaf(), ErrorKind::Contract, "only leaf tensors can be modified in place");
  return node_->value;
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->inputs.empty() && !node_->backward; }
const char* Tensor::op() const { return node_->op; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

// ---------------------------------------------------------------- helpers

namespace {

Tensor make_op(const char* op, Shape shape, std::vector<double> value,
               std::vector<NodePtr> inputs, detail::BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad =
      std::any_of(inputs.begin(), inputs.end(), [](const NodePtr& n) { return n->requires_grad; });
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  return Tensor(std::move(node));
}

void require_matrix(const Tensor& t, const char* op) {
  require(t.defined(), ErrorKind::Contract, std::string(op) + ": undefined tensor");
  require(t.rank() == 2, ErrorKind::Dimension,
          std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::Dimension,
          std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
              shape_string(b.shape()));
}

// Views a rank-1 or rank-2 tensor as rows x cols.
std::pair<std::size_t, std::size_t> as_rows(const Tensor& t) {
  if (t.rank() == 1) return {1, t.shape()[0]};
  if (t.rank() == 2) return {t.shape()[0], t.shape()[1]};
  fail(ErrorKind::Dimension, "expected rank 1 or 2, got " + shape_string(t.shape()));
}

}  // namespace

// ---------------------------------------------------------------- linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k, ErrorKind::Dimension,
          "matmul: inner dimensions differ " + shape_string(a.shape()) + " * " +
              shape_string(b.shape()));
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return make_op("matmul", {m, n}, std::move(out), {a.node(), b.node()},
                 [m, k, n](const Node& self, std::span<const double> g, GradSlots& slots) {
                   const double* A = self.inputs[0]->value.data();
                   const double* B = self.inputs[1]->value.data();
                   if (double* ga = slots(0)) {
                     // dA = dC * B^T
                     for (std::size_t i = 0; i < m; ++i) {
                       const double* grow = g.data() + i * n;
                       for (std::size_t p = 0; p < k; ++p) {
                         const double* brow = B + p * n;
                         double acc = 0.0;
                         for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                         ga[i * k + p] += acc;
                       }
                     }
                   }
                   if (double* gb = slots(1)) {
                     // dB = A^T * dC
                     for (std::size_t i = 0; i < m; ++i) {
                       const double* grow = g.data() + i * n;
                       for (std::size_t p = 0; p < k; ++p) {
                         const double av = A[i * k + p];
                         if (av == 0.0) continue;
                         double* gbrow = gb + p * n;
                         for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                       }
                     }
                   }
                 });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  auto in = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
  return make_op("transpose", {n, m}, std::move(out), {a.node()},
                 [m, n](const Node&, std::span<const double> g, GradSlots& slots) {
                   if (double* ga = slots(0))
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
                 });
}

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_op("add", a.shape(), std::move(out), {a.node(), b.node()},
                 [](const Node&, std::span<const double> g, GradSlots& slots) {
                   for (std::size_t s = 0; s < 2; ++s)
                     if (double* gi = slots(s))
                       for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                 });
}

Tensor add_row(const Tensor& a, const Tensor& b) {
  require_matrix(a, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  require(b.size() == n && b.rank() <= 2 && (b.rank() < 2 || b.rows() == 1), ErrorKind::Dimension,
          "add_row: bias " + shape_string(b.shape()) + " does not match " +
              shape_string(a.shape()));
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bias = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias[j];
  return make_op("add_row", a.shape(), std::move(out), {a.node(), b.node()},
                 [m, n](const Node&, std::span<const double> g, GradSlots& slots) {
                   if (double* ga = slots(0))
                     for (std::size_t i = 0; i < m * n; ++i) ga[i] += g[i];
                   if (double* gb = slots(1))
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_op("mul", a.shape(), std::move(out), {a.node(), b.node()},
                 [](const Node& self, std::span<const double> g, GradSlots& slots) {
                   const auto& x = self.inputs[0]->value;
                   const auto& y = self.inputs[1]->value;
                   if (double* ga = slots(0))
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
                   if (double* gb = slots(1))
                     for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
                 });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return make_op("scale", a.shape(), std::move(out), {a.node()},
                 [s](const Node&, std::span<const double> g, GradSlots& slots) {
                   if (double* ga = slots(0))
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
                 });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_size(shape) == a.size(), ErrorKind::Dimension,
          "reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op("reshape", std::move(shape), std::move(out), {a.node()},
                 [](const Node&, std::span<const double> g, GradSlots& slots) {
                   if (double* ga = slots(0))
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                 });
}

// ---------------------------------------------------------------- structure

Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), ErrorKind::Contract, "concat_rows: no inputs");
  for (const auto& p : parts) require_matrix(p, "concat_rows");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  std::vector<NodePtr> inputs;
  for (const auto& p : parts) {
    require(p.cols() == n, ErrorKind::Dimension, "concat_rows: column count differs");
    m += p.rows();
    inputs.push_back(p.node());
  }
  std::vector<double> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_op("concat_rows", {m, n}, std::move(out), std::move(inputs),
                 [](const Node& self, std::span<const double> g, GradSlots& slots) {
                   std::size_t offset = 0;
                   for (std::size_t s = 0; s < self.inputs.size(); ++s) {
                     const std::size_t len = self.inputs[s]->value.size();
                     if (double* gi = slots(s))
                       for (std::size_t i = 0; i < len; ++i) gi[i] += g[offset + i];
                     offset += len;
                   }
                 });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), ErrorKind::Contract, "concat_cols: no inputs");
  for (const auto& p : parts) require_matrix(p, "concat_cols");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  std::vector<NodePtr> inputs;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require(p.rows() == m, ErrorKind::Dimension, "concat_cols: row count differs");
    n += p.cols();
    widths.push_back(p.cols());
    inputs.push_back(p.node());
  }
  std::vector<double> out(m * n);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    auto in = p.data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(in.begin() + i * w, w, out.begin() + i * n + col);
    col += w;
  }
  return make_op("concat_cols", {m, n}, std::move(out), std::move(inputs),
                 [m, n, widths](const Node&, std::span<const double> g, GradSlots& slots) {
                   std::size_t col = 0;
                   for (std::size_t s = 0; s < widths.size(); ++s) {
                     const std::size_t w = widths[s];
                     if (double* gi = slots(s))
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < w; ++j) gi[i * w + j] += g[i * n + col + j];
                     col += w;
                   }
                 });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_rows");
  require(begin < end && end <= a.rows(), ErrorKind::Dimension, "slice_rows: bad range");
  const std::size_t n = a.cols();
  std::vector<double> out(a.data().begin() + begin * n, a.data().begin() + end * n);
  return make_op("slice_rows", {end - begin, n}, std::move(out), {a.node()},
                 [begin, n](const Node&, std::span<const double> g, GradSlots& slots) {
                   if (double* ga = slots(0))
                     for (std::size_t i = 0; i < g.size(); ++i) ga[begin * n + i] += g[i];
                 });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_cols");
  require(begin < end && end <= a.cols(), ErrorKind::Dimension, "slice_cols: bad range");
  const std::size_t m = a.rows(), n = a.cols(), w = end - begin;
  std::vector<double> out(m * w);
  auto in = a.data();
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(in.begin() + i * n + begin, w, out.begin() + i * w);
  return make_op("slice_cols", {m, w}, std::move(out), {a.node()},
                 [m, n, w, begin](const Node&, std::span<const double> g, GradSlots& slots) {
                   if (double* ga = slots(0))
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += g[i * w + j];
                 });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_matrix(a, "gather_rows");
  require(!rows.empty(), ErrorKind::Contract, "gather_rows: no rows requested");
  const std::size_t n = a.cols();
  std::vector<double> out(rows.size() * n);
  auto in = a.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < a.rows(), ErrorKind::Dimension,
            "gather_rows: row " + std::to_string(rows[r]) + " out of range");
    std::copy_n(in.begin() + rows[r] * n, n, out.begin() + r * n);
  }
  auto out_node = make_op("gather_rows", {rows.size(), n}, std::move(out), {a.node()},
                          [n](const Node& self, std::span<const double> g, GradSlots& slots) {
                            if (double* ga = slots(0))
                              for (std::size_t r = 0; r < self.saved_index.size(); ++r)
                                for (std::size_t j = 0; j < n; ++j)
                                  ga[self.saved_index[r] * n + j] += g[r * n + j];
                          });
  out_node.node()->saved_index.assign(rows.begin(), rows.end());
  return out_node;
}

Tensor embedding_mean(const Tensor& table, const std::vector<std::vector<std::size_t>>& bags) {
  require_matrix(table, "embedding_mean");
  require(!bags.empty(), ErrorKind::Contract, "embedding_mean: no bags");
  const std::size_t n = table.cols();
  std::vector<double> out(bags.size() * n, 0.0);
  auto in = table.data();
  for (std::size_t b = 0; b < bags.size(); ++b) {
    require(!bags[b].empty(), ErrorKind::Contract, "embedding_mean: empty index bag");
    const double w = 1.0 / static_cast<double>(bags[b].size());
    double* row = out.data() + b * n;
    for (auto idx : bags[b]) {
      require(idx < table.rows(), ErrorKind::Capacity,
              "embedding_mean: index " + std::to_string(idx) + " exceeds table capacity " +
                  std::to_string(table.rows()));
      const double* src = in.data() + idx * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += w * src[j];
    }
  }
  return make_op("embedding_mean", {bags.size(), n}, std::move(out), {table.node()},
                 [bags, n](const Node&, std::span<const double> g, GradSlots& slots) {
                   double* gt = slots(0);
                   if (!gt) return;
                   for (std::size_t b = 0; b < bags.size(); ++b) {
                     const double w = 1.0 / static_cast<double>(bags[b].size());
                     const double* grow = g.data() + b * n;
                     for (auto idx : bags[b])
                       for (std::size_t j = 0; j < n; ++j) gt[idx * n + j] += w * grow[j];
                   }
                 });
}

// ---------------------------------------------------------------- normalization & activations

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  const auto [m, n] = as_rows(x);
  require(n >= 1, ErrorKind::Dimension, "rms_norm: empty rows");
  require(gain.size() == n, ErrorKind::Dimension, "rms_norm: gain length mismatch");
  std::vector<double> out(m * n);
  std::vector<double> inv(m);
  auto in = x.data();
  auto gv = gain.data();
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += in[i * n + j] * in[i * n + j];
    inv[i] = 1.0 / std::sqrt(ss / static_cast<double>(n) + eps);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = gv[j] * in[i * n + j] * inv[i];
  }
  auto t = make_op(
      "rms_norm", x.shape(), std::move(out), {x.node(), gain.node()},
      [m, n](const Node& self, std::span<const double> g, GradSlots& slots) {
        const auto& xv = self.inputs[0]->value;
        const auto& gv = self.inputs[1]->value;
        const auto& inv = self.saved_value;
        double* gx = slots(0);
        double* gg = slots(1);
        for (std::size_t i = 0; i < m; ++i) {
          const double r = inv[i];
          if (gx) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * gv[j] * xv[i * n + j];
            const double c = r * r * r * dot / static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j)
              gx[i * n + j] += g[i * n + j] * gv[j] * r - xv[i * n + j] * c;
          }
          if (gg)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xv[i * n + j] * r;
        }
      });
  t.node()->saved_value = std::move(inv);
  return t;
}

Tensor softmax_rows(const Tensor& x) {
  const auto [m, n] = as_rows(x);
  std::vector<double> out(m * n);
  auto in = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = in.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  return make_op("softmax_rows", x.shape(), std::move(out), {x.node()},
                 [m, n](const Node& self, std::span<const double> g, GradSlots& slots) {
                   double* gx = slots(0);
                   if (!gx) return;
                   const auto& y = self.value;
                   for (std::size_t i = 0; i < m; ++i) {
                     double dot = 0.0;
                     for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
                     for (std::size_t j = 0; j < n; ++j)
                       gx[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
                   }
                 });
}

Tensor silu(const Tensor& x) {
  std::vector<double> out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] / (1.0 + std::exp(-in[i]));
  return make_op("silu", x.shape(), std::move(out), {x.node()},
                 [](const Node& self, std::span<const double> g, GradSlots& slots) {
                   double* gx = slots(0);
                   if (!gx) return;
                   const auto& xv = self.inputs[0]->value;
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     const double s = 1.0 / (1.0 + std::exp(-xv[i]));
                     gx[i] += g[i] * s * (1.0 + xv[i] * (1.0 - s));
                   }
                 });
}

Tensor max_pool_rows(const Tensor& x, std::size_t group) {
  require_matrix(x, "max_pool_rows");
  const std::size_t m = x.rows(), n = x.cols();
  require(group >= 1 && m % group == 0, ErrorKind::Dimension,
          "max_pool_rows: row count not divisible by group size");
  const std::size_t out_rows = m / group;
  std::vector<double> out(out_rows * n);
  std::vector<std::size_t> arg(out_rows * n);
  auto in = x.data();
  for (std::size_t o = 0; o < out_rows; ++o)
    for (std::size_t j = 0; j < n; ++j) {
      std::size_t best = o * group;
      for (std::size_t r = o * group + 1; r < (o + 1) * group; ++r)
        if (in[r * n + j] > in[best * n + j]) best = r;
      out[o * n + j] = in[best * n + j];
      arg[o * n + j] = best;
    }
  auto t = make_op("max_pool_rows", {out_rows, n}, std::move(out), {x.node()},
                   [n](const Node& self, std::span<const double> g, GradSlots& slots) {
                     double* gx = slots(0);
                     if (!gx) return;
                     for (std::size_t i = 0; i < g.size(); ++i)
                       gx[self.saved_index[i] * n + i % n] += g[i];
                   });
  t.node()->saved_index = std::move(arg);
  return t;
}

// ---------------------------------------------------------------- reductions & losses

Tensor sum(const Tensor& x) {
  auto in = x.data();
  const double s = std::accumulate(in.begin(), in.end(), 0.0);
  const std::size_t n = x.size();
  return make_op("sum", {}, {s}, {x.node()},
                 [n](const Node&, std::span<const double> g, GradSlots& slots) {
                   if (double* gx = slots(0))
                     for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
                 });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  return scale(sum(x), 1.0 / n);
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  require(prediction.size() == target.size(), ErrorKind::Dimension,
          "mse_loss: prediction " + shape_string(prediction.shape()) + " vs target " +
              shape_string(target.shape()));
  require(prediction.size() > 0, ErrorKind::Contract, "mse_loss: empty input");
  auto p = prediction.data(), t = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
  const double n = static_cast<double>(p.size());
  return make_op("mse_loss", {}, {acc / n}, {prediction.node(), target.node()},
                 [n](const Node& self, std::span<const double> g, GradSlots& slots) {
                   const auto& p = self.inputs[0]->value;
                   const auto& t = self.inputs[1]->value;
                   const double c = 2.0 * g[0] / n;
                   if (double* gp = slots(0))
                     for (std::size_t i = 0; i < p.size(); ++i) gp[i] += c * (p[i] - t[i]);
                   if (double* gt = slots(1))
                     for (std::size_t i = 0; i < p.size(); ++i) gt[i] -= c * (p[i] - t[i]);
                 });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  const auto [m, n] = as_rows(logits);
  require(targets.size() == m, ErrorKind::Dimension, "cross_entropy: one target per row required");
  auto in = logits.data();
  std::vector<double> probs(m * n);
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    require(targets[i] < n, ErrorKind::Contract, "cross_entropy: target class out of range");
    const double* row = in.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < n; ++j) probs[i * n + j] = std::exp(row[j] - mx) / z;
    loss += std::log(z) + mx - row[targets[i]];
  }
  auto t = make_op("cross_entropy", {}, {loss / static_cast<double>(m)}, {logits.node()},
                   [m, n](const Node& self, std::span<const double> g, GradSlots& slots) {
                     double* gx = slots(0);
                     if (!gx) return;
                     const double c = g[0] / static_cast<double>(m);
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) {
                         const double onehot = self.saved_index[i] == j ? 1.0 : 0.0;
                         gx[i * n + j] += c * (self.saved_value[i * n + j] - onehot);
                       }
                   });
  t.node()->saved_index.assign(targets.begin(), targets.end());
  t.node()->saved_value = std::move(probs);
  return t;
}

Tensor rope_rows(const Tensor& x, std::span<const std::size_t> positions, double base) {
  require_matrix(x, "rope_rows");
  const std::size_t m = x.rows(), d = x.cols();
  require(d % 2 == 0, ErrorKind::Config, "rope_rows: head dimension must be even");
  require(positions.size() == m, ErrorKind::Dimension, "rope_rows: one position per row required");
  require(base > 0.0, ErrorKind::Config, "rope_rows: base must be positive");
  std::vector<double> cs(m * d / 2), sn(m * d / 2);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double theta = static_cast<double>(positions[r]) *
                           std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      cs[r * d / 2 + i] = std::cos(theta);
      sn[r * d / 2 + i] = std::sin(theta);
    }
  std::vector<double> out(m * d);
  auto in = x.data();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double c = cs[r * d / 2 + i], s = sn[r * d / 2 + i];
      const double x0 = in[r * d + 2 * i], x1 = in[r * d + 2 * i + 1];
      out[r * d + 2 * i] = x0 * c - x1 * s;
      out[r * d + 2 * i + 1] = x0 * s + x1 * c;
    }
  auto t = make_op("rope_rows", {m, d}, std::move(out), {x.node()},
                   [m, d](const Node& self, std::span<const double> g, GradSlots& slots) {
                     double* gx = slots(0);
                     if (!gx) return;
                     const auto& cs = self.saved_value;
                     const std::size_t half = m * d / 2;
                     for (std::size_t r = 0; r < m; ++r)
                       for (std::size_t i = 0; i < d / 2; ++i) {
                         const double c = cs[r * d / 2 + i], s = cs[half + r * d / 2 + i];
                         const double g0 = g[r * d + 2 * i], g1 = g[r * d + 2 * i + 1];
                         gx[r * d + 2 * i] += g0 * c + g1 * s;
                         gx[r * d + 2 * i + 1] += -g0 * s + g1 * c;
                       }
                   });
  cs.insert(cs.end(), sn.begin(), sn.end());
  t.node()->saved_value = std::move(cs);
  return t;
}

// ---------------------------------------------------------------- autograd

namespace {

// Post-order over the graph: every node appears after all of its inputs.
std::vector<Node*> topological_order(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

class SlotTable final : public GradSlots {
 public:
  SlotTable(const std::vector<Node*>& order) {
    index_.reserve(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) index_.emplace(order[i], i);
    buffers_.resize(order.size());
  }

  void bind(const Node* node) { current_ = node; }

  double* operator()(std::size_t input) override {
    Node* in = current_->inputs[input].get();
    if (!in->requires_grad) return nullptr;
    return buffer(in).data();
  }

  std::vector<double>& buffer(const Node* node) {
    auto& buf = buffers_[index_.at(node)];
    if (buf.empty()) buf.assign(node->value.size(), 0.0);
    return buf;
  }

  bool has(const Node* node) const { return !buffers_[index_.at(node)].empty(); }

 private:
  std::unordered_map<const Node*, std::size_t> index_;
  std::vector<std::vector<double>> buffers_;
  const Node* current_ = nullptr;
};

template <typename LeafSink>
void run_backward(const Tensor& loss, LeafSink&& sink) {
  require(loss.defined(), ErrorKind::Contract, "backward: undefined loss");
  require(loss.size() == 1, ErrorKind::Contract,
          "backward: loss must be a scalar, got " + shape_string(loss.shape()));
  auto order = topological_order(loss.node().get());
  SlotTable slots(order);
  slots.buffer(loss.node().get())[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->requires_grad || !node->backward || !slots.has(node)) continue;
    slots.bind(node);
    node->backward(*node, slots.buffer(node), slots);
  }
  for (Node* node : order)
    if (node->requires_grad && node->inputs.empty() && !node->backward)
      sink(node, slots.buffer(node));
}

}  // namespace

void backward(const Tensor& loss) {
  run_backward(loss, [](Node* leaf, const std::vector<double>& g) {
    if (leaf->grad.empty()) leaf->grad.assign(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) leaf->grad[i] += g[i];
  });
}

Gradients gradients(const Tensor& loss) {
  Gradients out;
  run_backward(loss, [&out](Node* leaf, std::vector<double>& g) {
    out.grads_.emplace(leaf, std::move(g));
  });
  return out;
}

bool Gradients::contains(const Tensor& leaf) const { return grads_.count(leaf.id()) > 0; }

std::span<const double> Gradients::of(const Tensor& leaf) const {
  auto it = grads_.find(leaf.id());
  require(it != grads_.end(), ErrorKind::Contract, "gradient requested for an unreachable leaf");
  return it->second;
}

std::size_t graph_size(const Tensor& root) { return topological_order(root.node().get()).size(); }

// ---------------------------------------------------------------- gradient check

double relative_error(double analytic, double numeric) noexcept {
  return std::abs(analytic - numeric) / std::max(1e-12, std::abs(analytic) + std::abs(numeric));
}

double GradCheckReport::worst() const noexcept {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.rel_error);
  return w;
}

GradCheckReport check_gradients(const std::function<double()>& f, std::span<Tensor> params,
                                const std::vector<std::vector<double>>& analytic,
                                const GradCheckOptions& options) {
  require(analytic.size() == params.size(), ErrorKind::Contract,
          "check_gradients: one analytic buffer per parameter required");
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  if (options.samples == 0) {
    for (std::size_t p = 0; p < params.size(); ++p)
      for (std::size_t i = 0; i < params[p].size(); ++i) picks.emplace_back(p, i);
  } else {
    std::mt19937_64 rng(options.seed);
    for (std::size_t s = 0; s < options.samples; ++s) {
      const std::size_t p = std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng);
      const std::size_t i =
          std::uniform_int_distribution<std::size_t>(0, params[p].size() - 1)(rng);
      picks.emplace_back(p, i);
    }
  }

  auto evaluate = [&f] {
    const double v = f();
    require(std::isfinite(v), ErrorKind::Evaluation, "finite_diff_check: non-finite loss value");
    return v;
  };

  GradCheckReport report;
  report.max_rel_error.assign(params.size(), 0.0);
  for (auto [p, i] : picks) {
    require(analytic[p].size() == params[p].size(), ErrorKind::Contract,
            "check_gradients: analytic buffer size mismatch");
    auto data = params[p].mutable_data();
    const double saved = data[i];
    data[i] = saved + options.step;
    const double up = evaluate();
    data[i] = saved - options.step;
    const double down = evaluate();
    data[i] = saved;
    GradCheckEntry e{p, i, analytic[p][i], (up - down) / (2.0 * options.step), 0.0};
    e.rel_error = relative_error(e.analytic, e.numeric);
    report.max_rel_error[p] = std::max(report.max_rel_error[p], e.rel_error);
    if (e.rel_error > options.tolerance) report.failures.push_back(e);
    report.entries.push_back(e);
  }
  return report;
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn,
                                  std::span<Tensor> params, const GradCheckOptions& options) {
  const Tensor loss = loss_fn();
  const Gradients grads = gradients(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    if (grads.contains(p)) {
      auto g = grads.of(p);
      analytic.emplace_back(g.begin(), g.end());
    } else {
      analytic.emplace_back(p.size(), 0.0);
    }
  }
  return check_gradients([&loss_fn] { return loss_fn().item(); }, params, analytic, options);
}

}  // namespace pangaea
