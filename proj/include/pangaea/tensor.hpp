#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace pangaea {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor;

namespace detail {

struct Node;

// Hands a backward rule the gradient buffer of each input, or nullptr when
// that input does not take part in differentiation.
class GradSlots {
 public:
  virtual ~GradSlots() = default;
  virtual double* operator()(std::size_t input) = 0;
};

using BackwardFn =
    std::function<void(const Node& self, std::span<const double> out_grad, GradSlots& slots)>;

struct Node {
  const char* op = "leaf";
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  // Small per-op scratch retained from the forward pass (e.g. argmax indices).
  std::vector<std::size_t> saved_index;
  std::vector<double> saved_value;
};

}  // namespace detail

// Dense row-major float64 tensor with reverse-mode differentiation. Copies
// share the underlying node, so a Tensor is a cheap handle.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

  // Only leaves may be written in place (parameter updates, checkpoint load).
  std::span<double> mutable_data();

  bool requires_grad() const;
  bool is_leaf() const;
  const char* op() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  const detail::Node* id() const noexcept { return node_.get(); }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---------------------------------------------------------------- ops

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
// a[m x n] + b[n] broadcast along rows.
Tensor add_row(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
// Row i of the result is the mean of table rows listed in bags[i].
Tensor embedding_mean(const Tensor& table, const std::vector<std::vector<std::size_t>>& bags);
// Row-wise y = gain * x / sqrt(mean(x^2) + eps). Accepts [n] or [m x n].
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps);
Tensor softmax_rows(const Tensor& x);
Tensor silu(const Tensor& x);
// Column-wise max over consecutive blocks of `group` rows: [m x n] -> [m/group x n].
Tensor max_pool_rows(const Tensor& x, std::size_t group);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse_loss(const Tensor& prediction, const Tensor& target);
// Mean over rows of -log softmax(logits[r])[targets[r]].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);
// Rotates consecutive column pairs of row r by positions[r] * base^(-2i/d).
Tensor rope_rows(const Tensor& x, std::span<const std::size_t> positions, double base);

// ---------------------------------------------------------------- autograd

// Leaf gradients computed by one backward traversal, keyed by leaf identity.
class Gradients {
 public:
  bool contains(const Tensor& leaf) const;
  std::span<const double> of(const Tensor& leaf) const;
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend Gradients gradients(const Tensor& loss);
  std::unordered_map<const detail::Node*, std::vector<double>> grads_;
};

// Accumulates d(loss)/d(leaf) into each reachable requires_grad leaf.
void backward(const Tensor& loss);

// Same traversal, but returns leaf gradients instead of touching leaf buffers.
Gradients gradients(const Tensor& loss);

// Number of nodes in the graph below `root`, each counted once.
std::size_t graph_size(const Tensor& root);

// ---------------------------------------------------------------- gradient check

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // 0 checks every element; otherwise this many (tensor, element) draws.
  std::size_t samples = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::size_t param = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  // Per parameter tensor; 0 for tensors that were not sampled.
  std::vector<double> max_rel_error;
  std::vector<GradCheckEntry> failures;

  bool passed() const noexcept { return failures.empty(); }
  double worst() const noexcept;
};

double relative_error(double analytic, double numeric) noexcept;

// Compares `analytic` (one buffer per parameter) against central differences of `f`.
GradCheckReport check_gradients(const std::function<double()>& f,
                                std::span<Tensor> params,
                                const std::vector<std::vector<double>>& analytic,
                                const GradCheckOptions& options = {});

// Builds the loss once, differentiates it, then checks against central differences.
GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn,
                                  std::span<Tensor> params,
                                  const GradCheckOptions& options = {});

}  // namespace pangaea
