#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "debias/errors.hpp"

namespace debias {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  std::uint64_t id = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  std::vector<double>& ensure_grad();
};

}  // namespace detail

// Dense float64 tensor and a handle onto its node in the define-by-run graph.
// Copies are shallow: two Tensor objects may name the same node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double fill, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  // Negative indices count from the back.
  std::size_t dim(int axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double item() const;
  double operator[](std::size_t i) const { return values()[i]; }

  bool requires_grad() const;
  bool has_grad() const;
  // Empty span when no gradient has been allocated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  const char* op_name() const;
  bool is_leaf() const;

  // Internal graph access for op implementations.
  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Populates gradients of every leaf reachable from a one-element root.
// Leaf gradients accumulate across calls; intermediate gradients are reset.
void backward(const Tensor& root);

// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Per-element keep flags (1 = keep) matching the shape of the masked tensor.
using Mask = std::vector<std::uint8_t>;

// ---------------------------------------------------------------------------
// Differentiable operations. All of them validate shapes and throw ShapeError
// naming the op and the offending shapes.

// a[..., k] x b[k, n] -> [..., n]; a[..., k] x b[k] -> [...];
// a[B, m, k] x b[B, k, n] -> [B, m, n].
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise. `b` may have the same shape as `a` or a trailing suffix of it,
// in which case it is repeated over the leading dimensions.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor scale(const Tensor& x, double factor);

// Throws DomainError on any entry <= 0.
Tensor log(const Tensor& x);
// log(max(x, floor)); gradient is zero where the floor is active.
Tensor log_floored(const Tensor& x, double floor = 1e-12);

// Clamps into [lo, hi]; gradient passes through only strictly inside.
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor softmax_lastdim(const Tensor& x);
// Masked-out entries get probability 0. A fully masked row yields all zeros.
Tensor masked_softmax_lastdim(const Tensor& x, const Mask& keep);
Tensor log_softmax_lastdim(const Tensor& x);

// table[V, d] gathered by `ids` -> out_prefix + [d]. Gradients scatter-add.
Tensor embedding_lookup(const Tensor& table, const std::vector<std::int64_t>& ids,
                        const Shape& out_prefix);

Tensor concat_lastdim(const std::vector<Tensor>& parts);
Tensor mean_lastdim(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Identity when `training` is false or rate == 0. Otherwise kept entries are
// scaled by 1/(1-rate); the keep pattern is a pure function of `seed`.
Tensor dropout(const Tensor& x, double rate, std::uint64_t seed, bool training);

// Swaps the last two dimensions.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
// Keeps indices [begin, end) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

// Identity forward; backward multiplies the incoming gradient by -lambda.
Tensor gradient_reversal(const Tensor& x, double lambda);

}  // namespace debias
