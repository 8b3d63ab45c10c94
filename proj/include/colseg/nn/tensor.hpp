#pragma once

// Minimal reverse-mode autodiff over dense row-major double tensors.
//
// A Tensor is a handle to a graph node. Operations on tensors that require gradients record a
// backward closure; Tensor::backward() runs them in reverse topological order and releases the
// recorded graph. Leaves created with requires_grad accumulate into grad() until zero_grad().

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "colseg/core/error.hpp"

namespace colseg::nn {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size())
      throw ShapeMismatch("tensor shape " + shape_str(shape) + " does not hold " +
                          std::to_string(values.size()) + " values");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double v) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  double item() const {
    if (numel() != 1) throw ShapeMismatch("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  // Constant copy with no history.
  Tensor detach() const { return from(shape(), node_->value); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

  void backward() const {
    if (numel() != 1) throw ShapeMismatch("backward() requires a scalar tensor");
    if (!node_->requires_grad) return;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->inputs.size()) {
        Node* child = n->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backward) {
        n->ensure_grad();
        n->backward(*n);
      }
    }
    // Release the graph only after the sweep: clearing inputs earlier could free nodes that are
    // still queued in `order`.
    for (Node* n : order) {
      n->backward = nullptr;
      n->inputs.clear();
    }
  }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> value,
                          std::initializer_list<Tensor> inputs,
                          std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (grad_enabled_flag()) {
    for (const auto& t : inputs)
      if (t.requires_grad()) n->requires_grad = true;
    if (n->requires_grad) {
      for (const auto& t : inputs) n->inputs.push_back(t.node_ptr());
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

inline Tensor make_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                          std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (grad_enabled_flag()) {
    for (const auto& t : inputs)
      if (t.requires_grad()) n->requires_grad = true;
    if (n->requires_grad) {
      for (const auto& t : inputs) n->inputs.push_back(t.node_ptr());
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

// Gradient buffer of the i-th input, or nullptr if it does not need one.
inline double* input_grad(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  if (!in.requires_grad) return nullptr;
  in.ensure_grad();
  return in.grad.data();
}

inline void check_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeMismatch(std::string(op) + ": " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
}

inline void check_rank(const Tensor& a, int r, const char* op) {
  if (a.rank() != r)
    throw ShapeMismatch(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                        shape_str(a.shape()));
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df) {
  std::vector<double> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_result(x.shape(), std::move(out), {x}, [df](Node& self) {
    double* gx = input_grad(self, 0);
    if (!gx) return;
    const auto& xin = self.inputs[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      gx[i] += self.grad[i] * df(xin[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (double* g = detail::input_grad(self, k))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (double* g = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = detail::input_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (double* g = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (double* g = detail::input_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

inline Tensor add_scalar(const Tensor& x, double s) {
  return detail::unary(
      x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

inline Tensor mul_scalar(const Tensor& x, double s) {
  return detail::unary(
      x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

// x / t where t is a one-element tensor (e.g. a learnable temperature).
inline Tensor div_by_scalar(const Tensor& x, const Tensor& t) {
  if (t.numel() != 1) throw ShapeMismatch("div_by_scalar: divisor must have one element");
  const double tv = t.item();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] / tv;
  return detail::make_result(x.shape(), std::move(out), {x, t}, [](Node& self) {
    const double tv = self.inputs[1]->value[0];
    if (double* g = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / tv;
    if (double* g = detail::input_grad(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * self.value[i];
      g[0] -= acc / tv;
    }
  });
}

// x * t where t is a one-element tensor.
inline Tensor mul_by_scalar(const Tensor& x, const Tensor& t) {
  if (t.numel() != 1) throw ShapeMismatch("mul_by_scalar: factor must have one element");
  const double tv = t.item();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * tv;
  return detail::make_result(x.shape(), std::move(out), {x, t}, [](Node& self) {
    const double tv = self.inputs[1]->value[0];
    const auto& xv = self.inputs[0]->value;
    if (double* g = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * tv;
    if (double* g = detail::input_grad(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * xv[i];
      g[0] += acc;
    }
  });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor abs(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

// tanh approximation of GELU.
inline Tensor gelu(const Tensor& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  return detail::unary(
      x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(k * (v + 0.044715 * v * v * v))); },
      [](double v, double) {
        const double u = k * (v + 0.044715 * v * v * v);
        const double t = std::tanh(u);
        const double du = k * (1.0 + 3 * 0.044715 * v * v);
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      });
}

// ---------------------------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeMismatch("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return detail::make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    if (double* g = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

inline Tensor transpose(const Tensor& x) {
  detail::check_rank(x, 2, "transpose");
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.numel());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * m + i] = x[i * n + j];
  return detail::make_result({n, m}, std::move(out), {x}, [m, n](Node& self) {
    if (double* g = detail::input_grad(self, 0))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) g[i * n + j] += self.grad[static_cast<std::size_t>(j) * m + i];
  });
}

// Rows [start, start+count) of a rank-2 tensor.
inline Tensor slice_rows(const Tensor& x, int start, int count) {
  detail::check_rank(x, 2, "slice_rows");
  const int n = x.dim(1);
  if (start < 0 || count < 0 || start + count > x.dim(0))
    throw ShapeMismatch("slice_rows out of range");
  const auto off = static_cast<std::size_t>(start) * n;
  std::vector<double> out(x.data().begin() + static_cast<long>(off),
                          x.data().begin() + static_cast<long>(off + std::size_t(count) * n));
  return detail::make_result({count, n}, std::move(out), {x}, [off](Node& self) {
    if (double* g = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[off + i] += self.grad[i];
  });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows of nothing");
  const int n = parts[0].dim(1);
  int rows = 0;
  for (const auto& p : parts) {
    detail::check_rank(p, 2, "concat_rows");
    if (p.dim(1) != n) throw ShapeMismatch("concat_rows column mismatch");
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(rows) * n);
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return detail::make_result({rows, n}, std::move(out), parts, [offsets](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k)
      if (double* g = detail::input_grad(self, k)) {
        const auto len = self.inputs[k]->value.size();
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[offsets[k] + i];
      }
  });
}

// Diagonal of a square matrix as an [n] vector.
inline Tensor diag(const Tensor& x) {
  detail::check_rank(x, 2, "diag");
  const int n = x.dim(0);
  if (x.dim(1) != n) throw ShapeMismatch("diag of non-square matrix");
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = x[static_cast<std::size_t>(i) * n + i];
  return detail::make_result({n}, std::move(out), {x}, [n](Node& self) {
    if (double* g = detail::input_grad(self, 0))
      for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i) * n + i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return detail::make_result({1}, {s}, {x}, [](Node& self) {
    if (double* g = detail::input_grad(self, 0)) {
      const double gv = self.grad[0];
      for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) g[i] += gv;
    }
  });
}

inline Tensor mean(const Tensor& x) {
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// [m,n] -> [m], summing each row.
inline Tensor sum_rows(const Tensor& x) {
  detail::check_rank(x, 2, "sum_rows");
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> out(m, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[i] += x[static_cast<std::size_t>(i) * n + j];
  return detail::make_result({m}, std::move(out), {x}, [m, n](Node& self) {
    if (double* g = detail::input_grad(self, 0))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) g[static_cast<std::size_t>(i) * n + j] += self.grad[i];
  });
}

// [m,n] -> [1,n], averaging over rows.
inline Tensor mean_over_rows(const Tensor& x) {
  detail::check_rank(x, 2, "mean_over_rows");
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> out(n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[j] += x[static_cast<std::size_t>(i) * n + j];
  for (auto& v : out) v /= m;
  return detail::make_result({1, n}, std::move(out), {x}, [m, n](Node& self) {
    if (double* g = detail::input_grad(self, 0))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) g[static_cast<std::size_t>(i) * n + j] += self.grad[j] / m;
  });
}

// ---------------------------------------------------------------------------------------------
// Linear algebra

// a[m,k] @ b[k,n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::check_rank(a, 2, "matmul");
  detail::check_rank(b, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeMismatch("matmul " + shape_str(a.shape()) + " @ " + shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  detail::MapMat(out.data(), m, n).noalias() =
      detail::ConstMapMat(a.data().data(), m, k) * detail::ConstMapMat(b.data().data(), k, n);
  return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    detail::ConstMapMat g(self.grad.data(), m, n);
    if (double* ga = detail::input_grad(self, 0))
      detail::MapMat(ga, m, k).noalias() +=
          g * detail::ConstMapMat(self.inputs[1]->value.data(), k, n).transpose();
    if (double* gb = detail::input_grad(self, 1))
      detail::MapMat(gb, k, n).noalias() +=
          detail::ConstMapMat(self.inputs[0]->value.data(), m, k).transpose() * g;
  });
}

// a[m,k] @ b[n,k]^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::check_rank(a, 2, "matmul_nt");
  detail::check_rank(b, 2, "matmul_nt");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k)
    throw ShapeMismatch("matmul_nt " + shape_str(a.shape()) + " @ " + shape_str(b.shape()) + "^T");
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  detail::MapMat(out.data(), m, n).noalias() =
      detail::ConstMapMat(a.data().data(), m, k) *
      detail::ConstMapMat(b.data().data(), n, k).transpose();
  return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    detail::ConstMapMat g(self.grad.data(), m, n);
    if (double* ga = detail::input_grad(self, 0))
      detail::MapMat(ga, m, k).noalias() +=
          g * detail::ConstMapMat(self.inputs[1]->value.data(), n, k);
    if (double* gb = detail::input_grad(self, 1))
      detail::MapMat(gb, n, k).noalias() +=
          g.transpose() * detail::ConstMapMat(self.inputs[0]->value.data(), m, k);
  });
}

// x[m,n] + b[n] broadcast over rows.
inline Tensor add_row_vector(const Tensor& x, const Tensor& b) {
  detail::check_rank(x, 2, "add_row_vector");
  const int m = x.dim(0), n = x.dim(1);
  if (b.numel() != static_cast<std::size_t>(n)) throw ShapeMismatch("add_row_vector width");
  std::vector<double> out(x.data().begin(), x.data().end());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] += b[j];
  return detail::make_result({m, n}, std::move(out), {x, b}, [m, n](Node& self) {
    if (double* g = detail::input_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = detail::input_grad(self, 1))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) g[j] += self.grad[static_cast<std::size_t>(i) * n + j];
  });
}

// x[m,n] / s[m] row-wise.
inline Tensor div_rows(const Tensor& x, const Tensor& s) {
  detail::check_rank(x, 2, "div_rows");
  const int m = x.dim(0), n = x.dim(1);
  if (s.numel() != static_cast<std::size_t>(m)) throw ShapeMismatch("div_rows length");
  std::vector<double> out(x.numel());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] = x[static_cast<std::size_t>(i) * n + j] / s[i];
  return detail::make_result({m, n}, std::move(out), {x, s}, [m, n](Node& self) {
    const auto& sv = self.inputs[1]->value;
    if (double* g = detail::input_grad(self, 0))
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          g[static_cast<std::size_t>(i) * n + j] += self.grad[static_cast<std::size_t>(i) * n + j] / sv[i];
    if (double* g = detail::input_grad(self, 1))
      for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) {
          const auto idx = static_cast<std::size_t>(i) * n + j;
          acc += self.grad[idx] * self.value[idx];
        }
        g[i] -= acc / sv[i];
      }
  });
}

// Each row scaled to unit L2 norm (norm floored at eps).
inline Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12) {
  detail::check_rank(x, 2, "l2_normalize_rows");
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> norms(m);
  std::vector<double> out(x.numel());
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += x[static_cast<std::size_t>(i) * n + j] * x[static_cast<std::size_t>(i) * n + j];
    norms[i] = std::max(std::sqrt(s), eps);
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] = x[static_cast<std::size_t>(i) * n + j] / norms[i];
  }
  return detail::make_result({m, n}, std::move(out), {x}, [m, n, norms](Node& self) {
    double* g = detail::input_grad(self, 0);
    if (!g) return;
    for (int i = 0; i < m; ++i) {
      const auto row = static_cast<std::size_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += self.grad[row + j] * self.value[row + j];
      for (int j = 0; j < n; ++j)
        g[row + j] += (self.grad[row + j] - self.value[row + j] * dot) / norms[i];
    }
  });
}

// Row-wise standardisation without affine parameters.
inline Tensor layer_norm_rows(const Tensor& x, double eps = 1e-5) {
  detail::check_rank(x, 2, "layer_norm_rows");
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> inv_std(m);
  std::vector<double> out(x.numel());
  for (int i = 0; i < m; ++i) {
    const auto row = static_cast<std::size_t>(i) * n;
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += x[row + j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (x[row + j] - mu) * (x[row + j] - mu);
    var /= n;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < n; ++j) out[row + j] = (x[row + j] - mu) * inv_std[i];
  }
  return detail::make_result({m, n}, std::move(out), {x}, [m, n, inv_std](Node& self) {
    double* g = detail::input_grad(self, 0);
    if (!g) return;
    for (int i = 0; i < m; ++i) {
      const auto row = static_cast<std::size_t>(i) * n;
      double gsum = 0.0, gy = 0.0;
      for (int j = 0; j < n; ++j) {
        gsum += self.grad[row + j];
        gy += self.grad[row + j] * self.value[row + j];
      }
      for (int j = 0; j < n; ++j)
        g[row + j] += inv_std[i] / n * (n * self.grad[row + j] - gsum - self.value[row + j] * gy);
    }
  });
}

// Numerically stable row-wise log-softmax.
inline Tensor log_softmax_rows(const Tensor& x) {
  detail::check_rank(x, 2, "log_softmax_rows");
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.numel());
  for (int i = 0; i < m; ++i) {
    const auto row = static_cast<std::size_t>(i) * n;
    double mx = x[row];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[row + j]);
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += std::exp(x[row + j] - mx);
    const double lse = mx + std::log(s);
    for (int j = 0; j < n; ++j) out[row + j] = x[row + j] - lse;
  }
  return detail::make_result({m, n}, std::move(out), {x}, [m, n](Node& self) {
    double* g = detail::input_grad(self, 0);
    if (!g) return;
    for (int i = 0; i < m; ++i) {
      const auto row = static_cast<std::size_t>(i) * n;
      double gsum = 0.0;
      for (int j = 0; j < n; ++j) gsum += self.grad[row + j];
      for (int j = 0; j < n; ++j)
        g[row + j] += self.grad[row + j] - std::exp(self.value[row + j]) * gsum;
    }
  });
}

inline Tensor softmax_rows(const Tensor& x) { return exp(log_softmax_rows(x)); }

// ---------------------------------------------------------------------------------------------
// Signal / image specific

// Sliding windows over time: x[T,C] -> [ceil(T/stride), k*C], zero padded so that window t is
// centred on input frame t*stride.
inline Tensor unfold_time(const Tensor& x, int k, int stride = 1) {
  detail::check_rank(x, 2, "unfold_time");
  const int t_in = x.dim(0), c = x.dim(1);
  const int t_out = (t_in + stride - 1) / stride;
  const int half = k / 2;
  std::vector<double> out(static_cast<std::size_t>(t_out) * k * c, 0.0);
  for (int t = 0; t < t_out; ++t)
    for (int j = 0; j < k; ++j) {
      const int src = t * stride + j - half;
      if (src < 0 || src >= t_in) continue;
      std::copy_n(x.data().begin() + static_cast<long>(src) * c, c,
                  out.begin() + (static_cast<long>(t) * k + j) * c);
    }
  return detail::make_result({t_out, k * c}, std::move(out), {x},
                             [t_in, t_out, k, c, stride, half](Node& self) {
                               double* g = detail::input_grad(self, 0);
                               if (!g) return;
                               for (int t = 0; t < t_out; ++t)
                                 for (int j = 0; j < k; ++j) {
                                   const int src = t * stride + j - half;
                                   if (src < 0 || src >= t_in) continue;
                                   const double* gs =
                                       self.grad.data() + (static_cast<long>(t) * k + j) * c;
                                   for (int q = 0; q < c; ++q) g[static_cast<long>(src) * c + q] += gs[q];
                                 }
                             });
}

// Planar image x[3,H,W] (any leading channel count) -> non-overlapping patches
// [(H/p)*(W/p), C*p*p], patches in row-major order, values channel-major within a patch.
inline Tensor patchify(const Tensor& x, int patch) {
  detail::check_rank(x, 3, "patchify");
  const int ch = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % patch || w % patch)
    throw ShapeMismatch("patchify: image " + shape_str(x.shape()) + " not divisible by patch " +
                        std::to_string(patch));
  const int gh = h / patch, gw = w / patch, len = ch * patch * patch;
  std::vector<double> out(static_cast<std::size_t>(gh) * gw * len);
  auto index = [=](int py, int px, int c, int dy, int dx) {
    return (static_cast<std::size_t>(c) * h + (py * patch + dy)) * w + px * patch + dx;
  };
  for (int py = 0; py < gh; ++py)
    for (int px = 0; px < gw; ++px) {
      double* dst = out.data() + (static_cast<std::size_t>(py) * gw + px) * len;
      for (int c = 0; c < ch; ++c)
        for (int dy = 0; dy < patch; ++dy)
          for (int dx = 0; dx < patch; ++dx) *dst++ = x[index(py, px, c, dy, dx)];
    }
  return detail::make_result({gh * gw, len}, std::move(out), {x},
                             [=](Node& self) {
                               double* g = detail::input_grad(self, 0);
                               if (!g) return;
                               const double* src = self.grad.data();
                               for (int py = 0; py < gh; ++py)
                                 for (int px = 0; px < gw; ++px)
                                   for (int c = 0; c < ch; ++c)
                                     for (int dy = 0; dy < patch; ++dy)
                                       for (int dx = 0; dx < patch; ++dx)
                                         g[index(py, px, c, dy, dx)] += *src++;
                             });
}

// Mean pooling of planar x[C,H,W] over non-overlapping k x k windows -> [C,H/k,W/k].
inline Tensor avg_pool2d(const Tensor& x, int k) {
  detail::check_rank(x, 3, "avg_pool2d");
  const int ch = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % k || w % k)
    throw ShapeMismatch("avg_pool2d: " + shape_str(x.shape()) + " not divisible by " + std::to_string(k));
  const int oh = h / k, ow = w / k;
  const double inv = 1.0 / (k * k);
  std::vector<double> out(static_cast<std::size_t>(ch) * oh * ow, 0.0);
  for (int c = 0; c < ch; ++c)
    for (int r = 0; r < h; ++r) {
      const double* src = x.data().data() + (static_cast<std::size_t>(c) * h + r) * w;
      double* dst = out.data() + (static_cast<std::size_t>(c) * oh + r / k) * ow;
      for (int col = 0; col < w; ++col) dst[col / k] += src[col] * inv;
    }
  return detail::make_result({ch, oh, ow}, std::move(out), {x}, [=](Node& self) {
    double* g = detail::input_grad(self, 0);
    if (!g) return;
    for (int c = 0; c < ch; ++c)
      for (int r = 0; r < h; ++r) {
        const double* go = self.grad.data() + (static_cast<std::size_t>(c) * oh + r / k) * ow;
        double* gi = g + (static_cast<std::size_t>(c) * h + r) * w;
        for (int col = 0; col < w; ++col) gi[col] += go[col / k] * inv;
      }
  });
}

// avg_pool2d(x * m) for planar x[C,H,W] and a mask m with H*W elements broadcast over channels,
// without materialising the product.
inline Tensor masked_avg_pool2d(const Tensor& x, const Tensor& m, int k) {
  detail::check_rank(x, 3, "masked_avg_pool2d");
  const int ch = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (m.numel() != static_cast<std::size_t>(h) * w) throw ShapeMismatch("masked_avg_pool2d: mask size");
  if (h % k || w % k) throw ShapeMismatch("masked_avg_pool2d: not divisible by " + std::to_string(k));
  const int oh = h / k, ow = w / k;
  const double inv = 1.0 / (k * k);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<double> out(static_cast<std::size_t>(ch) * oh * ow, 0.0);
  for (int c = 0; c < ch; ++c)
    for (int r = 0; r < h; ++r) {
      const double* src = x.data().data() + c * plane + static_cast<std::size_t>(r) * w;
      const double* mk = m.data().data() + static_cast<std::size_t>(r) * w;
      double* dst = out.data() + (static_cast<std::size_t>(c) * oh + r / k) * ow;
      for (int col = 0; col < w; ++col) dst[col / k] += src[col] * mk[col] * inv;
    }
  return detail::make_result({ch, oh, ow}, std::move(out), {x, m}, [=](Node& self) {
    const auto& xv = self.inputs[0]->value;
    const auto& mv = self.inputs[1]->value;
    double* gx = detail::input_grad(self, 0);
    double* gm = detail::input_grad(self, 1);
    for (int c = 0; c < ch; ++c)
      for (int r = 0; r < h; ++r) {
        const double* go = self.grad.data() + (static_cast<std::size_t>(c) * oh + r / k) * ow;
        const std::size_t base = c * plane + static_cast<std::size_t>(r) * w;
        for (int col = 0; col < w; ++col) {
          const double g = go[col / k] * inv;
          if (gx) gx[base + col] += g * mv[static_cast<std::size_t>(r) * w + col];
          if (gm) gm[static_cast<std::size_t>(r) * w + col] += g * xv[base + col];
        }
      }
  });
}

// Gaussian kernel responses of every column of x[C,N] to fixed centres[K,C]:
// out[k,n] = exp(-|x[:,n] - centres[k]|^2 / (2 sigma^2)). No gradient reaches the centres.
inline Tensor rbf_features(const Tensor& x, const Tensor& centres, double sigma) {
  detail::check_rank(x, 2, "rbf_features");
  detail::check_rank(centres, 2, "rbf_features");
  const int ch = x.dim(0), n = x.dim(1), kc = centres.dim(0);
  if (centres.dim(1) != ch) throw ShapeMismatch("rbf_features: centre width != channels");
  const double inv = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> out(static_cast<std::size_t>(kc) * n);
  for (int k = 0; k < kc; ++k)
    for (int i = 0; i < n; ++i) {
      double d2 = 0.0;
      for (int c = 0; c < ch; ++c) {
        const double e = x[static_cast<std::size_t>(c) * n + i] - centres[static_cast<std::size_t>(k) * ch + c];
        d2 += e * e;
      }
      out[static_cast<std::size_t>(k) * n + i] = std::exp(-d2 * inv);
    }
  std::vector<double> cv(centres.data().begin(), centres.data().end());
  return detail::make_result({kc, n}, std::move(out), {x}, [=, cv = std::move(cv)](Node& self) {
    double* g = detail::input_grad(self, 0);
    if (!g) return;
    const auto& xv = self.inputs[0]->value;
    for (int k = 0; k < kc; ++k)
      for (int i = 0; i < n; ++i) {
        const std::size_t o = static_cast<std::size_t>(k) * n + i;
        const double s = self.grad[o] * self.value[o] * -2.0 * inv;
        for (int c = 0; c < ch; ++c)
          g[static_cast<std::size_t>(c) * n + i] += s *
               (xv[static_cast<std::size_t>(c) * n + i] - cv[static_cast<std::size_t>(k) * ch + c]);
      }
  });
}

namespace detail {
struct InterpTap {
  int i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};
// Half-pixel-centre linear interpolation taps from n_in samples to n_out.
inline std::vector<InterpTap> interp_taps(int n_in, int n_out) {
  std::vector<InterpTap> taps(n_out);
  const double scale = static_cast<double>(n_in) / n_out;
  for (int o = 0; o < n_out; ++o) {
    const double f = std::clamp((o + 0.5) * scale - 0.5, 0.0, n_in - 1.0);
    const int i0 = static_cast<int>(f);
    taps[o] = {i0, std::min(i0 + 1, n_in - 1), f - i0};
  }
  return taps;
}
}  // namespace detail

// Bilinear resize of x[h,w] to [H,W] with half-pixel alignment.
inline Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w) {
  detail::check_rank(x, 2, "upsample_bilinear");
  const int h = x.dim(0), w = x.dim(1);
  const auto ty = detail::interp_taps(h, out_h);
  const auto tx = detail::interp_taps(w, out_w);
  // Columns first, then rows.
  std::vector<double> tmp(static_cast<std::size_t>(h) * out_w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < out_w; ++c) {
      const auto& t = tx[c];
      tmp[static_cast<std::size_t>(r) * out_w + c] =
          (1 - t.w1) * x[static_cast<std::size_t>(r) * w + t.i0] + t.w1 * x[static_cast<std::size_t>(r) * w + t.i1];
    }
  std::vector<double> out(static_cast<std::size_t>(out_h) * out_w);
  for (int r = 0; r < out_h; ++r) {
    const auto& t = ty[r];
    const double* a = tmp.data() + static_cast<std::size_t>(t.i0) * out_w;
    const double* b = tmp.data() + static_cast<std::size_t>(t.i1) * out_w;
    double* o = out.data() + static_cast<std::size_t>(r) * out_w;
    for (int c = 0; c < out_w; ++c) o[c] = (1 - t.w1) * a[c] + t.w1 * b[c];
  }
  return detail::make_result({out_h, out_w}, std::move(out), {x},
                             [=](Node& self) {
                               double* g = detail::input_grad(self, 0);
                               if (!g) return;
                               std::vector<double> gtmp(static_cast<std::size_t>(h) * out_w, 0.0);
                               for (int r = 0; r < out_h; ++r) {
                                 const auto& t = ty[r];
                                 const double* go = self.grad.data() + static_cast<std::size_t>(r) * out_w;
                                 double* a = gtmp.data() + static_cast<std::size_t>(t.i0) * out_w;
                                 double* b = gtmp.data() + static_cast<std::size_t>(t.i1) * out_w;
                                 for (int c = 0; c < out_w; ++c) {
                                   a[c] += (1 - t.w1) * go[c];
                                   b[c] += t.w1 * go[c];
                                 }
                               }
                               for (int r = 0; r < h; ++r)
                                 for (int c = 0; c < out_w; ++c) {
                                   const auto& t = tx[c];
                                   const double v = gtmp[static_cast<std::size_t>(r) * out_w + c];
                                   g[static_cast<std::size_t>(r) * w + t.i0] += (1 - t.w1) * v;
                                   g[static_cast<std::size_t>(r) * w + t.i1] += t.w1 * v;
                                 }
                             });
}

// x[C,P] * m[P] broadcast over the leading axis.
inline Tensor mul_planes(const Tensor& x, const Tensor& m) {
  const std::size_t planes = static_cast<std::size_t>(x.dim(0));
  const std::size_t p = x.numel() / planes;
  if (m.numel() != p) throw ShapeMismatch("mul_planes: plane size mismatch");
  std::vector<double> out(x.numel());
  for (std::size_t c = 0; c < planes; ++c)
    for (std::size_t i = 0; i < p; ++i) out[c * p + i] = x[c * p + i] * m[i];
  return detail::make_result(x.shape(), std::move(out), {x, m}, [planes, p](Node& self) {
    const auto& xv = self.inputs[0]->value;
    const auto& mv = self.inputs[1]->value;
    if (double* g = detail::input_grad(self, 0))
      for (std::size_t c = 0; c < planes; ++c)
        for (std::size_t i = 0; i < p; ++i) g[c * p + i] += self.grad[c * p + i] * mv[i];
    if (double* g = detail::input_grad(self, 1))
      for (std::size_t c = 0; c < planes; ++c)
        for (std::size_t i = 0; i < p; ++i) g[i] += self.grad[c * p + i] * xv[c * p + i];
  });
}

// Binary Gumbel-Softmax on logits with pre-drawn logistic noise (the difference of two Gumbel
// samples). The relaxed sample is sigmoid((z + noise) / temperature). With hard = true the
// forward value is the {0,1} rounding and the backward pass uses the relaxed derivative
// (straight-through estimator).
inline Tensor gumbel_sigmoid(const Tensor& logits, std::span<const double> noise,
                             double temperature, bool hard) {
  if (noise.size() != logits.numel()) throw ShapeMismatch("gumbel_sigmoid: noise size");
  std::vector<double> soft(logits.numel());
  std::vector<double> out(logits.numel());
  for (std::size_t i = 0; i < soft.size(); ++i) {
    soft[i] = 1.0 / (1.0 + std::exp(-(logits[i] + noise[i]) / temperature));
    out[i] = hard ? (soft[i] >= 0.5 ? 1.0 : 0.0) : soft[i];
  }
  return detail::make_result(logits.shape(), std::move(out), {logits},
                             [soft = std::move(soft), temperature](Node& self) {
                               double* g = detail::input_grad(self, 0);
                               if (!g) return;
                               for (std::size_t i = 0; i < soft.size(); ++i)
                                 g[i] += self.grad[i] * soft[i] * (1.0 - soft[i]) / temperature;
                             });
}

}  // namespace colseg::nn
