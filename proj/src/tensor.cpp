#include "debias/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <random>
#include <unordered_set>

namespace debias {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

NodePtr new_node(Shape shape, std::vector<double> value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

// Builds an op output; records the graph only when some input needs gradients.
Tensor make_op(const char* op, Shape shape, std::vector<double> value,
               std::vector<NodePtr> inputs, std::function<void(Node&)> bw) {
  bool needs = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in->requires_grad;
  }
  auto n = new_node(std::move(shape), std::move(value), needs);
  n->op = op;
  if (needs) {
    n->inputs = std::move(inputs);
    n->backward = std::move(bw);
  }
  return Tensor(std::move(n));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(fmt::format("{}: shapes {} and {} do not conform", op,
                               shape_str(a), shape_str(b)));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const std::string& why) {
  throw ShapeError(fmt::format("{}: shape {} {}", op, shape_str(a), why));
}

bool is_suffix(const Shape& whole, const Shape& tail) {
  if (tail.size() > whole.size()) return false;
  return std::equal(tail.rbegin(), tail.rend(), whole.rbegin());
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(fmt::format("{}: undefined tensor", op));
}

std::size_t last_dim(const Shape& s, const char* op) {
  if (s.empty()) shape_fail(op, s, "needs at least one dimension");
  return s.back();
}

// Shared body of add/sub/mul: b equals a's shape or a trailing suffix of it.
template <typename Fwd, typename GradA, typename GradB>
Tensor binary_broadcast(const char* op, const Tensor& a, const Tensor& b, Fwd fwd,
                        GradA ga, GradB gb) {
  require_defined(a, op);
  require_defined(b, op);
  if (!is_suffix(a.shape(), b.shape())) shape_fail(op, a.shape(), b.shape());
  const std::size_t n = a.numel();
  const std::size_t m = b.numel();
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i % m]);
  return make_op(op, a.shape(), std::move(out), {a.node(), b.node()},
                 [n, m, ga, gb](Node& self) {
                   Node& x = *self.inputs[0];
                   Node& y = *self.inputs[1];
                   if (x.requires_grad) {
                     auto& g = x.ensure_grad();
                     for (std::size_t i = 0; i < n; ++i)
                       g[i] += ga(self.grad[i], x.value[i], y.value[i % m]);
                   }
                   if (y.requires_grad) {
                     auto& g = y.ensure_grad();
                     for (std::size_t i = 0; i < n; ++i)
                       g[i % m] += gb(self.grad[i], x.value[i], y.value[i % m]);
                   }
                 });
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  require_defined(x, op);
  const std::size_t n = x.numel();
  auto xv = x.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(xv[i]);
  return make_op(op, x.shape(), std::move(out), {x.node()}, [n, deriv](Node& self) {
    Node& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      g[i] += self.grad[i] * deriv(in.value[i], self.value[i]);
  });
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, ", ")); }

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  std::vector<double> v(numel_of(shape), fill);
  return Tensor(new_node(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != numel_of(shape))
    throw ShapeError(fmt::format("tensor: {} values for shape {}", values.size(),
                                 shape_str(shape)));
  return Tensor(new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({}, {v}, requires_grad); }

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::dim(int axis) const {
  const auto& s = shape();
  const int r = static_cast<int>(s.size());
  const int a = axis < 0 ? r + axis : axis;
  if (a < 0 || a >= r) throw ShapeError(fmt::format("dim {} out of range for {}", axis, shape_str(s)));
  return s[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }
std::span<const double> Tensor::values() const { return node_->value; }
std::span<double> Tensor::mutable_values() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1)
    throw ContractError(fmt::format("item: tensor of shape {} is not a scalar", shape_str(shape())));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }
const char* Tensor::op_name() const { return node_->op; }
bool Tensor::is_leaf() const { return node_->is_leaf(); }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

void backward(const Tensor& root) {
  require_defined(root, "backward");
  if (root.numel() != 1)
    throw ContractError(fmt::format("backward: root must have one element, got shape {}",
                                    shape_str(root.shape())));
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.node().get()};
  seen.insert(stack.back());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  // Creation ids are a topological order: inputs always predate outputs.
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });
  for (Node* n : order) {
    if (n->is_leaf())
      n->ensure_grad();
    else
      n->grad.assign(n->value.size(), 0.0);
  }
  root.node()->grad[0] += 1.0;
  for (Node* n : order) {
    if (!n->is_leaf()) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  constexpr const char* op = "matmul";
  require_defined(a, op);
  require_defined(b, op);
  const Shape& as = a.shape();
  const Shape& bs = b.shape();

  if (as.size() == 3 && bs.size() == 3) {
    const std::size_t batch = as[0], m = as[1], k = as[2], n = bs[2];
    if (bs[0] != batch || bs[1] != k) shape_fail(op, as, bs);
    std::vector<double> out(batch * m * n);
    for (std::size_t i = 0; i < batch; ++i) {
      MutMap(out.data() + i * m * n, m, n).noalias() =
          ConstMap(a.values().data() + i * m * k, m, k) *
          ConstMap(b.values().data() + i * k * n, k, n);
    }
    return make_op(op, {batch, m, n}, std::move(out), {a.node(), b.node()},
                   [batch, m, k, n](Node& self) {
                     Node& x = *self.inputs[0];
                     Node& y = *self.inputs[1];
                     for (std::size_t i = 0; i < batch; ++i) {
                       ConstMap dy(self.grad.data() + i * m * n, m, n);
                       if (x.requires_grad)
                         MutMap(x.ensure_grad().data() + i * m * k, m, k).noalias() +=
                             dy * ConstMap(y.value.data() + i * k * n, k, n).transpose();
                       if (y.requires_grad)
                         MutMap(y.ensure_grad().data() + i * k * n, k, n).noalias() +=
                             ConstMap(x.value.data() + i * m * k, m, k).transpose() * dy;
                     }
                   });
  }

  if (as.empty() || (bs.size() != 1 && bs.size() != 2)) shape_fail(op, as, bs);
  const std::size_t k = as.back();
  if (bs[0] != k) shape_fail(op, as, bs);
  const std::size_t n = bs.size() == 2 ? bs[1] : 1;
  const std::size_t rows = a.numel() / std::max<std::size_t>(k, 1);
  Shape out_shape(as.begin(), as.end() - 1);
  if (bs.size() == 2) out_shape.push_back(n);
  std::vector<double> out(rows * n);
  MutMap(out.data(), rows, n).noalias() =
      ConstMap(a.values().data(), rows, k) * ConstMap(b.values().data(), k, n);
  return make_op(op, std::move(out_shape), std::move(out), {a.node(), b.node()},
                 [rows, k, n](Node& self) {
                   Node& x = *self.inputs[0];
                   Node& y = *self.inputs[1];
                   ConstMap dy(self.grad.data(), rows, n);
                   if (x.requires_grad)
                     MutMap(x.ensure_grad().data(), rows, k).noalias() +=
                         dy * ConstMap(y.value.data(), k, n).transpose();
                   if (y.requires_grad)
                     MutMap(y.ensure_grad().data(), k, n).noalias() +=
                         ConstMap(x.value.data(), rows, k).transpose() * dy;
                 });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_broadcast(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor log(const Tensor& x) {
  require_defined(x, "log");
  // NaN passes through so a diverging run surfaces as a non-finite loss.
  for (double v : x.values()) {
    if (v <= 0.0) throw DomainError(fmt::format("log: non-positive input {}", v));
  }
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor log_floored(const Tensor& x, double floor) {
  return unary(
      "log_floored", x, [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      "clamp", x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return v > lo && v < hi ? 1.0 : 0.0; });
}

namespace {

Tensor softmax_impl(const char* op, const Tensor& x, const Mask* keep) {
  require_defined(x, op);
  const std::size_t n = last_dim(x.shape(), op);
  const std::size_t total = x.numel();
  if (keep && keep->size() != total)
    throw ShapeError(fmt::format("{}: mask of {} entries for shape {}", op, keep->size(),
                                 shape_str(x.shape())));
  const std::size_t rows = n == 0 ? 0 : total / n;
  auto xv = x.values();
  std::vector<double> out(total, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (!keep || (*keep)[base + j]) mx = std::max(mx, xv[base + j]);
    if (mx == -std::numeric_limits<double>::infinity()) continue;  // fully masked
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (keep && !(*keep)[base + j]) continue;
      out[base + j] = std::exp(xv[base + j] - mx);
      s += out[base + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[base + j] /= s;
  }
  return make_op(op, x.shape(), std::move(out), {x.node()}, [rows, n](Node& self) {
    Node& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[base + j] * self.value[base + j];
      for (std::size_t j = 0; j < n; ++j)
        g[base + j] += self.value[base + j] * (self.grad[base + j] - dot);
    }
  });
}

}  // namespace

Tensor softmax_lastdim(const Tensor& x) { return softmax_impl("softmax_lastdim", x, nullptr); }

Tensor masked_softmax_lastdim(const Tensor& x, const Mask& keep) {
  return softmax_impl("masked_softmax_lastdim", x, &keep);
}

Tensor log_softmax_lastdim(const Tensor& x) {
  constexpr const char* op = "log_softmax_lastdim";
  require_defined(x, op);
  const std::size_t n = last_dim(x.shape(), op);
  const std::size_t rows = n == 0 ? 0 : x.numel() / n;
  auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * n;
    double mx = xv[base];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[base + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(xv[base + j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out[base + j] = xv[base + j] - lse;
  }
  return make_op(op, x.shape(), std::move(out), {x.node()}, [rows, n](Node& self) {
    Node& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * n;
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += self.grad[base + j];
      for (std::size_t j = 0; j < n; ++j)
        g[base + j] += self.grad[base + j] - std::exp(self.value[base + j]) * gs;
    }
  });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<std::int64_t>& ids,
                        const Shape& out_prefix) {
  constexpr const char* op = "embedding_lookup";
  require_defined(table, op);
  if (table.rank() != 2) shape_fail(op, table.shape(), "is not a [rows, width] table");
  if (ids.size() != numel_of(out_prefix))
    throw ShapeError(fmt::format("{}: {} ids for output prefix {}", op, ids.size(),
                                 shape_str(out_prefix)));
  const std::size_t rows = table.dim(0), d = table.dim(1);
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= rows)
      throw DomainError(fmt::format("{}: id {} outside table of {} rows", op, id, rows));
  }
  auto tv = table.values();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d, out.begin() + i * d);
  Shape shape = out_prefix;
  shape.push_back(d);
  return make_op(op, std::move(shape), std::move(out), {table.node()},
                 [ids, d](Node& self) {
                   auto& g = self.inputs[0]->ensure_grad();
                   for (std::size_t i = 0; i < ids.size(); ++i) {
                     const std::size_t dst = static_cast<std::size_t>(ids[i]) * d;
                     for (std::size_t j = 0; j < d; ++j) g[dst + j] += self.grad[i * d + j];
                   }
                 });
}

Tensor concat_lastdim(const std::vector<Tensor>& parts) {
  constexpr const char* op = "concat_lastdim";
  if (parts.empty()) throw ShapeError("concat_lastdim: no inputs");
  for (const auto& p : parts) require_defined(p, op);
  const Shape& s0 = parts[0].shape();
  last_dim(s0, op);
  Shape lead(s0.begin(), s0.end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total_w = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size() || !std::equal(lead.begin(), lead.end(), s.begin()))
      shape_fail(op, s0, s);
    widths.push_back(s.back());
    total_w += s.back();
  }
  const std::size_t rows = numel_of(lead);
  std::vector<double> out(rows * total_w);
  std::vector<NodePtr> inputs;
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto v = parts[p].values();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * widths[p]), widths[p],
                  out.begin() + static_cast<std::ptrdiff_t>(r * total_w + off));
    off += widths[p];
    inputs.push_back(parts[p].node());
  }
  Shape shape = lead;
  shape.push_back(total_w);
  return make_op(op, std::move(shape), std::move(out), std::move(inputs),
                 [rows, widths, total_w](Node& self) {
                   std::size_t o = 0;
                   for (std::size_t p = 0; p < widths.size(); ++p) {
                     Node& in = *self.inputs[p];
                     if (in.requires_grad) {
                       auto& g = in.ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < widths[p]; ++j)
                           g[r * widths[p] + j] += self.grad[r * total_w + o + j];
                     }
                     o += widths[p];
                   }
                 });
}

Tensor mean_lastdim(const Tensor& x) {
  constexpr const char* op = "mean_lastdim";
  require_defined(x, op);
  const std::size_t n = last_dim(x.shape(), op);
  if (n == 0) shape_fail(op, x.shape(), "has an empty last dimension");
  const std::size_t rows = x.numel() / n;
  auto xv = x.values();
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += xv[r * n + j];
    out[r] = s / static_cast<double>(n);
  }
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  return make_op(op, std::move(shape), std::move(out), {x.node()}, [rows, n](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += self.grad[r] * inv;
  });
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_op("sum", {}, {s}, {x.node()}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  if (x.numel() == 0) shape_fail("mean", x.shape(), "is empty");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor dropout(const Tensor& x, double rate, std::uint64_t seed, bool training) {
  require_defined(x, "dropout");
  if (!(rate >= 0.0 && rate < 1.0))
    throw DomainError(fmt::format("dropout: rate {} outside [0, 1)", rate));
  if (!training || rate == 0.0) return x;
  std::mt19937_64 rng(seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  const std::size_t n = x.numel();
  std::vector<double> factor(n);
  for (auto& f : factor) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    f = u < rate ? 0.0 : keep_scale;
  }
  auto xv = x.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[i] * factor[i];
  return make_op("dropout", x.shape(), std::move(out), {x.node()},
                 [factor = std::move(factor)](Node& self) {
                   auto& g = self.inputs[0]->ensure_grad();
                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor[i];
                 });
}

Tensor transpose(const Tensor& x) {
  constexpr const char* op = "transpose";
  require_defined(x, op);
  const Shape& s = x.shape();
  if (s.size() < 2) shape_fail(op, s, "needs at least two dimensions");
  const std::size_t r = s[s.size() - 2], c = s.back();
  const std::size_t batch = r * c == 0 ? 0 : x.numel() / (r * c);
  auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t b = 0; b < batch; ++b)
    MutMap(out.data() + b * r * c, c, r) = ConstMap(xv.data() + b * r * c, r, c).transpose();
  Shape shape = s;
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  return make_op(op, std::move(shape), std::move(out), {x.node()}, [batch, r, c](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t b = 0; b < batch; ++b)
      MutMap(g.data() + b * r * c, r, c) += ConstMap(self.grad.data() + b * r * c, c, r).transpose();
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (numel_of(shape) != x.numel()) shape_fail("reshape", x.shape(), shape);
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_op("reshape", std::move(shape), std::move(out), {x.node()}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  constexpr const char* op = "slice";
  require_defined(x, op);
  const Shape& s = x.shape();
  if (axis >= s.size() || begin > end || end > s[axis])
    shape_fail(op, s, fmt::format("cannot slice axis {} to [{}, {})", axis, begin, end));
  const std::size_t outer = numel_of(Shape(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(axis)));
  const std::size_t inner =
      numel_of(Shape(s.begin() + static_cast<std::ptrdiff_t>(axis) + 1, s.end()));
  const std::size_t full = s[axis], len = end - begin;
  auto xv = x.values();
  std::vector<double> out(outer * len * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * full + begin) * inner), len * inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * len * inner));
  Shape shape = s;
  shape[axis] = len;
  return make_op(op, std::move(shape), std::move(out), {x.node()},
                 [outer, inner, full, begin, len](Node& self) {
                   auto& g = self.inputs[0]->ensure_grad();
                   for (std::size_t o = 0; o < outer; ++o)
                     for (std::size_t i = 0; i < len * inner; ++i)
                       g[(o * full + begin) * inner + i] += self.grad[o * len * inner + i];
                 });
}

Tensor gradient_reversal(const Tensor& x, double lambda) {
  require_defined(x, "gradient_reversal");
  if (!(lambda >= 0.0))
    throw DomainError(fmt::format("gradient_reversal: lambda {} must be >= 0", lambda));
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_op("gradient_reversal", x.shape(), std::move(out), {x.node()},
                 [lambda](Node& self) {
                   auto& g = self.inputs[0]->ensure_grad();
                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += -lambda * self.grad[i];
                 });
}

}  // namespace debias
