#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cstt/errors.hpp"

namespace cstt {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t numel(const Shape& shape);

namespace detail {

// One vertex of the dynamic compute graph. Forward values are written once at
// creation; only `grad` (and, for leaves, `data` via the optimizer) changes
// afterwards.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

// Dense row-major tensor of doubles with reverse-mode differentiation.
//
// Tensor is a cheap handle; copies share storage. Every op returns a fresh
// tensor, so values are immutable once built. Parameters are leaves created
// with `Tensor::parameter`; their data may be updated in place between
// forward passes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  explicit operator bool() const noexcept { return defined(); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  // Negative axes count from the back.
  std::size_t dim(int axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  // In-place access for leaves (optimizer steps, finite differences, loading).
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  const char* op_name() const { return node_->op; }
  bool is_leaf() const { return node_->parents.empty(); }

  // Same values, cut off from the graph.
  Tensor detach() const;
  // Deep copy as a leaf with its own storage.
  Tensor clone() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Internal: used by op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---- elementwise ---------------------------------------------------------
// Binary ops accept equal shapes or a right/left operand whose shape is a
// suffix of the other's (broadcast over leading batch dimensions only).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---- linear algebra ------------------------------------------------------
// a[..., m, k] x b[..., k, n]. Leading dims must match, or one side may have
// none (e.g. a batched activation times a 2-D weight).
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- shaping -------------------------------------------------------------
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
// Swaps the two given axes; defaults to the last two.
Tensor transpose(const Tensor& x, int axis_a = -2, int axis_b = -1);
Tensor concat(const std::vector<Tensor>& parts, int axis);

// ---- reductions ----------------------------------------------------------
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x, int axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// ---- row indexing --------------------------------------------------------
// Rows are slices along axis 0.
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& rows);
// out[rows[i]] += x[i]; output has `out_rows` rows.
Tensor scatter_add_rows(const Tensor& x, const std::vector<std::size_t>& rows,
                        std::size_t out_rows);
inline Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids) {
  return gather_rows(table, ids);
}

// ---- normalization / probabilities --------------------------------------
Tensor softmax(const Tensor& x, int axis);
// Softmax over the last axis with masked-out entries (mask == 0) forced to
// probability zero. `mask` has x.numel() entries. With an all-ones mask the
// result is bitwise identical to softmax(x, -1).
Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> mask);
Tensor log_softmax(const Tensor& x);  // last axis
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// Mean over rows of -log softmax(logits)[row, label]. logits is [R, K].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// ---- stochastic ----------------------------------------------------------
// Inverted dropout with an explicit keep-mask (1 = keep). rate == 0 returns x.
Tensor dropout(const Tensor& x, double rate, std::span<const std::uint8_t> keep);

// ---- differentiation -----------------------------------------------------
// Reverse-mode sweep from a scalar. Gradients accumulate into every
// requires_grad tensor reachable from `loss`. The graph below `loss` is
// released afterwards.
void backward(const Tensor& loss);

// The ops reachable from `root` in the order backward() replays them
// (reverse topological, each node exactly once).
std::vector<Tensor> replay_order(const Tensor& root);

// Name of the first op (in forward topological order) whose output holds a
// NaN/Inf while all of its inputs are finite; empty if everything is finite.
std::string first_nonfinite_op(const Tensor& root);

// Extension point for ops defined outside this file (and for fault
// injection in tests). `adjoint` receives the output gradient and one span per
// input; spans of inputs that do not require gradients are empty.
using Adjoint = std::function<void(std::span<const double> grad_out,
                                   std::vector<std::span<double>>& grad_in)>;
Tensor custom_op(const char* name, Shape shape, std::vector<double> values,
                 const std::vector<Tensor>& inputs, Adjoint adjoint);

}  // namespace cstt
