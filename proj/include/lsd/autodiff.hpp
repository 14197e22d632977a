// Reverse-mode automatic differentiation over dense rank<=2 tensors.
//
// A Tensor is a shared handle to a graph node. Operations record their
// inputs and a backward closure whenever any input requires a gradient and
// grad mode is enabled on the calling thread; backward() then walks the
// recorded graph in reverse topological order. A graph belongs to the thread
// that built it.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

namespace lsd::ad {

namespace detail {
inline thread_local bool grad_mode = true;
}

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradGuard() { detail::grad_mode = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode; }

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ")";
  return os.str();
}

template <class T>
struct Node {
  std::vector<T> value;
  std::vector<T> grad;
  Shape shape;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Tensor constant(std::vector<T> data, Shape shape) {
    check_size(data.size(), shape);
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(data);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
  }
  static Tensor zeros(Shape shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return constant(std::vector<T>(n, T(0)), std::move(shape));
  }
  static Tensor scalar(T v) { return constant({v}, {}); }
  static Tensor vector(std::vector<T> data) {
    const std::size_t n = data.size();
    return constant(std::move(data), {n});
  }
  /// Leaf that accumulates gradients across backward passes.
  static Tensor parameter(std::vector<T> data, Shape shape) {
    Tensor t = constant(std::move(data), std::move(shape));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t rows() const { return node_->rows(); }
  std::size_t cols() const { return node_->cols(); }
  std::size_t size() const { return node_->value.size(); }
  const std::vector<T>& data() const { return node_->value; }
  /// Direct access to the storage; only for leaves (optimizers, checkpoint loading, tests).
  std::vector<T>& mutable_data() { return node_->value; }
  T operator[](std::size_t i) const { return node_->value[i]; }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  T item() const {
    if (size() != 1) throw std::invalid_argument("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const std::vector<T>& grad() const { return node_->grad; }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  /// Same values, cut from the graph.
  Tensor detach() const { return constant(node_->value, node_->shape); }

 private:
  static void check_size(std::size_t n, const Shape& shape) {
    std::size_t expect = 1;
    for (auto d : shape) expect *= d;
    if (n != expect)
      throw std::invalid_argument("tensor data length " + std::to_string(n) + " does not match shape " + shape_str(shape));
  }
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <class T>
Tensor<T> make_result(std::vector<T> value, Shape shape, std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->shape = std::move(shape);
  if (ad::grad_enabled()) {
    bool any = false;
    for (const auto& t : inputs) any |= t.requires_grad();
    if (any) {
      n->requires_grad = true;
      for (auto& t : inputs) n->parents.push_back(t.node_ptr());
      n->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(n));
}

/// Gradient buffer of parent i, or nullptr if it does not need one.
template <class T>
T* parent_grad(Node<T>& self, std::size_t i) {
  auto& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapC = Eigen::Map<const RowMat<T>>;
template <class T>
using Map = Eigen::Map<RowMat<T>>;

inline void fail(const std::string& op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(op + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <class T>
Tensor<T> unary(const Tensor<T>& a, T (*f)(T), T (*df)(T, T)) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i]);
  return make_result<T>(std::move(out), a.shape(), {a}, [df](Node<T>& self) {
    T* ga = parent_grad(self, 0);
    if (!ga) return;
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * df(x[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. Binary ops accept equal shapes or a (1 x cols)
// right-hand side broadcast across rows.

namespace detail {
template <class T>
bool row_broadcast(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return false;
  if (a.size() == b.size() && a.rows() == b.rows() && a.cols() == b.cols()) return false;
  if (b.rows() == 1 && b.cols() == a.cols() && b.rank() <= 2) return true;
  fail(op, a.shape(), b.shape());
  return false;
}

template <class T, class Fwd, class GradA, class GradB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, Fwd fwd, GradA ga_fn, GradB gb_fn) {
  const bool bc = row_broadcast(a, b, op);
  const std::size_t cols = a.cols();
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a[i], b[bc ? i % cols : i]);
  return make_result<T>(std::move(out), a.shape(), {a, b}, [bc, cols, ga_fn, gb_fn](Node<T>& self) {
    const auto& x = self.parents[0]->value;
    const auto& y = self.parents[1]->value;
    if (T* ga = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * ga_fn(x[i], y[bc ? i % cols : i]);
    if (T* gb = parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[bc ? i % cols : i] += self.grad[i] * gb_fn(x[i], y[bc ? i % cols : i]);
  });
}
}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}
template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary(a, b, "div", [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
                        [](T x, T y) { return -x / (y * y); });
}
template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

/// Multiplies by a (1x1) tensor, broadcasting it over every element.
template <class T>
Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& s) {
  if (s.size() != 1) detail::fail("mul_scalar", a.shape(), s.shape());
  const T sv = s[0];
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * sv;
  return detail::make_result<T>(std::move(out), a.shape(), {a, s}, [](Node<T>& self) {
    const auto& x = self.parents[0]->value;
    const T sv = self.parents[1]->value[0];
    if (T* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * sv;
    if (T* gs = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gs[0] += self.grad[i] * x[i];
  });
}

/// Scales row r of a (r x c) by w[r], w being (r x 1) or (r).
template <class T>
Tensor<T> scale_rows(const Tensor<T>& a, const Tensor<T>& w) {
  const std::size_t rows = a.rows(), cols = a.cols();
  if (w.size() != rows) detail::fail("scale_rows", a.shape(), w.shape());
  std::vector<T> out(a.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = a[r * cols + c] * w[r];
  return detail::make_result<T>(std::move(out), a.shape(), {a, w}, [rows, cols](Node<T>& self) {
    const auto& x = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    T* ga = detail::parent_grad(self, 0);
    T* gw = detail::parent_grad(self, 1);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const T g = self.grad[r * cols + c];
        if (ga) ga[r * cols + c] += g * wv[r];
        if (gw) gw[r] += g * x[r * cols + c];
      }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return detail::make_result<T>(std::move(out), a.shape(), {a}, [s](Node<T>& self) {
    if (T* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * s;
  });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + s;
  return detail::make_result<T>(std::move(out), a.shape(), {a}, [](Node<T>& self) {
    if (T* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) { return scale(a, T(-1)); }

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary<T>(a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}
template <class T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary<T>(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}
template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x)); },
      [](T, T y) { return y * (T(1) - y); });
}
template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary<T>(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}
template <class T>
Tensor<T> log(const Tensor<T>& a) {
  return detail::unary<T>(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}
template <class T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return detail::unary<T>(a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}
template <class T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary<T>(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}
template <class T>
Tensor<T> abs(const Tensor<T>& a) {
  return detail::unary<T>(a, [](T x) { return std::abs(x); }, [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}
/// log(1 + e^x), computed stably.
template <class T>
Tensor<T> softplus(const Tensor<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](T x, T) { return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x)); });
}

// ---------------------------------------------------------------------------
// Linear algebra and shape manipulation

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k || b.rank() > 2 || a.rank() > 2) detail::fail("matmul", a.shape(), b.shape());
  std::vector<T> out(m * n);
  detail::Map<T>(out.data(), m, n).noalias() = detail::MapC<T>(a.data().data(), m, k) * detail::MapC<T>(b.data().data(), k, n);
  Shape shape = (a.rank() == 2) ? Shape{m, n} : Shape{n};
  return detail::make_result<T>(std::move(out), shape, {a, b}, [m, k, n](Node<T>& self) {
    detail::MapC<T> g(self.grad.data(), m, n);
    if (T* ga = detail::parent_grad(self, 0))
      detail::Map<T>(ga, m, k).noalias() += g * detail::MapC<T>(self.parents[1]->value.data(), k, n).transpose();
    if (T* gb = detail::parent_grad(self, 1))
      detail::Map<T>(gb, k, n).noalias() += detail::MapC<T>(self.parents[0]->value.data(), m, k).transpose() * g;
  });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return detail::make_result<T>(std::move(out), Shape{c, r}, {a}, [r, c](Node<T>& self) {
    if (T* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j * r + i];
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  if (n != a.size()) detail::fail("reshape", a.shape(), shape);
  return detail::make_result<T>(a.data(), std::move(shape), {a}, [](Node<T>& self) {
    if (T* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
  });
}

/// Concatenates along the last axis; all parts must share a row count.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) detail::fail("concat", parts[0].shape(), p.shape());
    cols += p.cols();
  }
  std::vector<T> out(rows * cols);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p.data().begin() + r * p.cols(), p.cols(), out.begin() + r * cols + off);
    off += p.cols();
  }
  Shape shape = (parts[0].rank() == 2) ? Shape{rows, cols} : Shape{cols};
  return detail::make_result<T>(std::move(out), shape, parts, [rows, cols, offsets](Node<T>& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      T* gp = detail::parent_grad(self, i);
      if (!gp) continue;
      const std::size_t pc = self.parents[i]->cols();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < pc; ++c) gp[r * pc + c] += self.grad[r * cols + offsets[i] + c];
    }
  });
}

/// Stacks along rows; all parts must share a column count. Result is rank 2.
template <class T>
Tensor<T> vstack(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("vstack: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  std::vector<T> out;
  for (const auto& p : parts) {
    if (p.cols() != cols) detail::fail("vstack", parts[0].shape(), p.shape());
    rows += p.rows();
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return detail::make_result<T>(std::move(out), Shape{rows, cols}, parts, [](Node<T>& self) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      const std::size_t n = self.parents[i]->value.size();
      if (T* gp = detail::parent_grad(self, i))
        for (std::size_t k = 0; k < n; ++k) gp[k] += self.grad[off + k];
      off += n;
    }
  });
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t start, std::size_t count) {
  const std::size_t rows = a.rows(), cols = a.cols();
  if (start + count > cols) detail::fail("slice_cols", a.shape(), Shape{start, count});
  std::vector<T> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(a.data().begin() + r * cols + start, count, out.begin() + r * count);
  Shape shape = (a.rank() == 2) ? Shape{rows, count} : Shape{count};
  return detail::make_result<T>(std::move(out), shape, {a}, [rows, cols, start, count](Node<T>& self) {
    if (T* ga = detail::parent_grad(self, 0))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < count; ++c) ga[r * cols + start + c] += self.grad[r * count + c];
  });
}

/// Selects rows by index (repeats allowed). Result is rank 2.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<std::size_t>& idx) {
  const std::size_t cols = a.cols();
  std::vector<T> out(idx.size() * cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= a.rows()) throw std::out_of_range("gather_rows: row index out of range");
    std::copy_n(a.data().begin() + idx[i] * cols, cols, out.begin() + i * cols);
  }
  return detail::make_result<T>(std::move(out), Shape{idx.size(), cols}, {a}, [idx, cols](Node<T>& self) {
    if (T* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t c = 0; c < cols; ++c) ga[idx[i] * cols + c] += self.grad[i * cols + c];
  });
}

template <class T>
Tensor<T> row(const Tensor<T>& a, std::size_t r) {
  return reshape(gather_rows(a, {r}), Shape{a.cols()});
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = std::accumulate(a.data().begin(), a.data().end(), T(0));
  return detail::make_result<T>({s}, Shape{}, {a}, [](Node<T>& self) {
    if (T* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) ga[i] += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) { return scale(sum(a), T(1) / T(a.size())); }

/// Column sums: (r x c) -> (c).
template <class T>
Tensor<T> sum_rows(const Tensor<T>& a) {
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<T> out(cols, T(0));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += a[r * cols + c];
  return detail::make_result<T>(std::move(out), Shape{cols}, {a}, [rows, cols](Node<T>& self) {
    if (T* ga = detail::parent_grad(self, 0))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += self.grad[c];
  });
}

template <class T>
Tensor<T> mean_rows(const Tensor<T>& a) { return scale(sum_rows(a), T(1) / T(a.rows())); }

/// Row sums: (r x c) -> (r x 1).
template <class T>
Tensor<T> sum_cols(const Tensor<T>& a) {
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<T> out(rows, T(0));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r] += a[r * cols + c];
  return detail::make_result<T>(std::move(out), Shape{rows, 1}, {a}, [rows, cols](Node<T>& self) {
    if (T* ga = detail::parent_grad(self, 0))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += self.grad[r];
  });
}

/// Elementwise maximum over rows: (r x c) -> (c). Ties route the gradient to the first row.
template <class T>
Tensor<T> max_rows(const Tensor<T>& a) {
  const std::size_t rows = a.rows(), cols = a.cols();
  if (rows == 0) throw std::invalid_argument("max_rows: empty tensor");
  std::vector<T> out(cols);
  std::vector<std::size_t> arg(cols, 0);
  for (std::size_t c = 0; c < cols; ++c) {
    out[c] = a[c];
    for (std::size_t r = 1; r < rows; ++r)
      if (a[r * cols + c] > out[c]) {
        out[c] = a[r * cols + c];
        arg[c] = r;
      }
  }
  return detail::make_result<T>(std::move(out), Shape{cols}, {a}, [arg, cols](Node<T>& self) {
    if (T* ga = detail::parent_grad(self, 0))
      for (std::size_t c = 0; c < cols; ++c) ga[arg[c] * cols + c] += self.grad[c];
  });
}

/// Minimum element as a scalar.
template <class T>
Tensor<T> min_all(const Tensor<T>& a) {
  const auto it = std::min_element(a.data().begin(), a.data().end());
  const std::size_t arg = static_cast<std::size_t>(it - a.data().begin());
  return detail::make_result<T>({*it}, Shape{}, {a}, [arg](Node<T>& self) {
    if (T* ga = detail::parent_grad(self, 0)) ga[arg] += self.grad[0];
  });
}

/// Per-segment elementwise max of rows: row i belongs to segment seg[i].
/// Segments with no rows produce zeros.
template <class T>
Tensor<T> segment_max(const Tensor<T>& a, const std::vector<std::size_t>& seg, std::size_t segments) {
  const std::size_t cols = a.cols();
  if (seg.size() != a.rows()) throw std::invalid_argument("segment_max: segment id count != rows");
  std::vector<T> out(segments * cols, T(0));
  std::vector<long> arg(segments * cols, -1);
  for (std::size_t r = 0; r < seg.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t o = seg[r] * cols + c;
      const T v = a[r * cols + c];
      if (arg[o] < 0 || v > out[o]) {
        out[o] = v;
        arg[o] = static_cast<long>(r);
      }
    }
  return detail::make_result<T>(std::move(out), Shape{segments, cols}, {a}, [arg, cols](Node<T>& self) {
    if (T* ga = detail::parent_grad(self, 0))
      for (std::size_t o = 0; o < arg.size(); ++o)
        if (arg[o] >= 0) ga[static_cast<std::size_t>(arg[o]) * cols + o % cols] += self.grad[o];
  });
}

// ---------------------------------------------------------------------------
// Softmax family and fused losses

template <class T>
Tensor<T> log_softmax_rows(const Tensor<T>& a) {
  const std::size_t rows = a.rows(), cols = a.cols();
  std::vector<T> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.data().data() + r * cols;
    const T m = *std::max_element(x, x + cols);
    T s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(x[c] - m);
    const T lse = m + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[c] - lse;
  }
  return detail::make_result<T>(std::move(out), a.shape(), {a}, [rows, cols](Node<T>& self) {
    T* ga = detail::parent_grad(self, 0);
    if (!ga) return;
    for (std::size_t r = 0; r < rows; ++r) {
      T gs = 0;
      for (std::size_t c = 0; c < cols; ++c) gs += self.grad[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c)
        ga[r * cols + c] += self.grad[r * cols + c] - std::exp(self.value[r * cols + c]) * gs;
    }
  });
}

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& a) { return exp(log_softmax_rows(a)); }

/// Sum of binary cross-entropies between sigmoid(logits) and fixed targets in [0,1].
template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const std::vector<T>& targets) {
  if (targets.size() != logits.size())
    detail::fail("bce_with_logits", logits.shape(), Shape{targets.size()});
  T total = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const T x = logits[i];
    // max(x,0) - x*t + log(1 + exp(-|x|))
    total += std::max(x, T(0)) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  return detail::make_result<T>({total}, Shape{}, {logits}, [targets](Node<T>& self) {
    T* ga = detail::parent_grad(self, 0);
    if (!ga) return;
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const T s = x[i] >= T(0) ? T(1) / (T(1) + std::exp(-x[i])) : std::exp(x[i]) / (T(1) + std::exp(x[i]));
      ga[i] += self.grad[0] * (s - targets[i]);
    }
  });
}

/// Sum over rows of -log softmax(logits)[row, target[row]].
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& targets) {
  if (targets.size() != logits.rows()) detail::fail("cross_entropy", logits.shape(), Shape{targets.size()});
  const Tensor<T> lsm = log_softmax_rows(logits);
  const std::size_t cols = logits.cols();
  std::vector<T> picked(lsm.size(), T(0));
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] >= cols) throw std::out_of_range("cross_entropy: target class out of range");
    picked[r * cols + targets[r]] = T(-1);
  }
  return sum(mul(lsm, Tensor<T>::constant(std::move(picked), lsm.shape())));
}

// ---------------------------------------------------------------------------
// Geometry ops used by the box losses

/// Rotation matrix (3x3, columns are local axes) of the normalized quaternion q/|q|, q = (w,x,y,z).
template <class T>
Tensor<T> quat_to_rot(const Tensor<T>& q) {
  if (q.size() != 4) detail::fail("quat_to_rot", q.shape(), Shape{4});
  const T n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]) + T(1e-12);
  const T w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
  std::vector<T> R = {T(1) - 2 * (y * y + z * z), 2 * (x * y - w * z),         2 * (x * z + w * y),
                      2 * (x * y + w * z),         T(1) - 2 * (x * x + z * z), 2 * (y * z - w * x),
                      2 * (x * z - w * y),         2 * (y * z + w * x),         T(1) - 2 * (x * x + y * y)};
  return detail::make_result<T>(std::move(R), Shape{3, 3}, {q}, [](Node<T>& self) {
    T* gq = detail::parent_grad(self, 0);
    if (!gq) return;
    const auto& raw = self.parents[0]->value;
    const T n = std::sqrt(raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2] + raw[3] * raw[3]) + T(1e-12);
    const T w = raw[0] / n, x = raw[1] / n, y = raw[2] / n, z = raw[3] / n;
    const auto& g = self.grad;
    // dR/d(w,x,y,z) for the unit quaternion, contracted with g.
    T dw = g[1] * (-2 * z) + g[2] * (2 * y) + g[3] * (2 * z) + g[5] * (-2 * x) + g[6] * (-2 * y) + g[7] * (2 * x);
    T dx = g[1] * (2 * y) + g[2] * (2 * z) + g[3] * (2 * y) + g[4] * (-4 * x) + g[5] * (-2 * w) + g[6] * (2 * z) +
           g[7] * (2 * w) + g[8] * (-4 * x);
    T dy = g[0] * (-4 * y) + g[1] * (2 * x) + g[2] * (2 * w) + g[3] * (2 * x) + g[5] * (2 * z) + g[6] * (-2 * w) +
           g[7] * (2 * z) + g[8] * (-4 * y);
    T dz = g[0] * (-4 * z) + g[1] * (-2 * w) + g[2] * (2 * x) + g[3] * (2 * w) + g[4] * (-4 * z) + g[5] * (2 * y) +
           g[6] * (2 * x) + g[7] * (2 * y);
    // Back through u = q / |q|: du/dq = (I - u u^T) / |q|.
    const T u[4] = {w, x, y, z};
    const T gu[4] = {dw, dx, dy, dz};
    const T proj = gu[0] * u[0] + gu[1] * u[1] + gu[2] * u[2] + gu[3] * u[3];
    for (int i = 0; i < 4; ++i) gq[i] += (gu[i] - u[i] * proj) / n;
  });
}

/// Symmetric chamfer: mean over A of squared distance to the nearest point of
/// B, plus the same from B to A. Both inputs are (n x 3).
template <class T>
Tensor<T> chamfer_sq(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != 3 || b.cols() != 3 || a.rows() == 0 || b.rows() == 0) detail::fail("chamfer_sq", a.shape(), b.shape());
  const std::size_t na = a.rows(), nb = b.rows();
  std::vector<std::size_t> nn_ab(na), nn_ba(nb);
  std::vector<T> best_b(nb, std::numeric_limits<T>::max());
  T total_a = 0;
  for (std::size_t i = 0; i < na; ++i) {
    T best = std::numeric_limits<T>::max();
    for (std::size_t j = 0; j < nb; ++j) {
      const T dx = a[3 * i] - b[3 * j], dy = a[3 * i + 1] - b[3 * j + 1], dz = a[3 * i + 2] - b[3 * j + 2];
      const T d = dx * dx + dy * dy + dz * dz;
      if (d < best) {
        best = d;
        nn_ab[i] = j;
      }
      if (d < best_b[j]) {
        best_b[j] = d;
        nn_ba[j] = i;
      }
    }
    total_a += best;
  }
  T total_b = std::accumulate(best_b.begin(), best_b.end(), T(0));
  const T value = total_a / T(na) + total_b / T(nb);
  return detail::make_result<T>({value}, Shape{}, {a, b}, [nn_ab, nn_ba](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    T* ga = detail::parent_grad(self, 0);
    T* gb = detail::parent_grad(self, 1);
    const T g = self.grad[0];
    const T sa = 2 * g / T(nn_ab.size()), sb = 2 * g / T(nn_ba.size());
    for (std::size_t i = 0; i < nn_ab.size(); ++i)
      for (int k = 0; k < 3; ++k) {
        const T d = av[3 * i + k] - bv[3 * nn_ab[i] + k];
        if (ga) ga[3 * i + k] += sa * d;
        if (gb) gb[3 * nn_ab[i] + k] -= sa * d;
      }
    for (std::size_t j = 0; j < nn_ba.size(); ++j)
      for (int k = 0; k < 3; ++k) {
        const T d = bv[3 * j + k] - av[3 * nn_ba[j] + k];
        if (gb) gb[3 * j + k] += sb * d;
        if (ga) ga[3 * nn_ba[j] + k] -= sb * d;
      }
  });
}

// ---------------------------------------------------------------------------

/// Populates gradients of every tensor reachable from `loss` (a scalar on the graph).
template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw std::invalid_argument("backward: loss is not on the tape");
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node<T>* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward) {
      n->ensure_grad();
      n->backward(*n);
    }
  }
}

}  // namespace lsd::ad
