#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace hosnet {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct NumericalError : Error {
  using Error::Error;
};
struct ContractError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool leaf = true;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() : node_(std::make_shared<detail::Node>()) {}

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    for (auto e : shape)
      if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
    if (shape_size(shape) != data.size())
      throw DimensionError("data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({1}, {v}, requires_grad);
  }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false) {
    std::vector<double> d;
    std::size_t cols = rows.begin()->size();
    for (auto& r : rows) {
      if (r.size() != cols) throw DimensionError("ragged matrix literal");
      d.insert(d.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(d), requires_grad);
  }
  static Tensor eye(std::size_t n) {
    auto t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.node_->data[i * n + i] = 1.0;
    return t;
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  // Write access is reserved for optimizer updates and checkpoint loading.
  std::span<double> mutable_data() { return node_->data; }

  double item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->data[0];
  }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t i, std::size_t j) const {
    return node_->data[i * node_->shape.back() + j];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool is_leaf() const { return node_->leaf; }

  bool has_grad() const { return !node_->grad.empty(); }
  // Zero-filled view when nothing has been accumulated yet.
  std::vector<double> grad() const {
    if (node_->grad.empty()) return std::vector<double>(size(), 0.0);
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  // Detached copy sharing no storage or history.
  Tensor clone(bool requires_grad = false) const {
    return Tensor(shape(), node_->data, requires_grad);
  }

  bool same_node(const Tensor& o) const { return node_ == o.node_; }

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Ordered record of executed differentiable operations.
class Tape {
 public:
  struct Record {
    std::string op;
    std::shared_ptr<detail::Node> output;
    // (output gradient, output value)
    std::function<void(const std::vector<double>&, const std::vector<double>&)> backward;
  };

  void push(Record r) { records_.push_back(std::move(r)); }
  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

 private:
  std::vector<Record> records_;
};

namespace detail {
inline thread_local Tape* active_tape = nullptr;
}

// Routes operations executed on this thread into `tape` for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : prev_(detail::active_tape) { detail::active_tape = &tape; }
  ~TapeScope() { detail::active_tape = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// Disables recording (evaluation, finite differences).
class NoGradScope {
 public:
  NoGradScope() : prev_(detail::active_tape) { detail::active_tape = nullptr; }
  ~NoGradScope() { detail::active_tape = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* prev_;
};

namespace detail {

using BackwardFn = std::function<void(const std::vector<double>&, const std::vector<double>&)>;

inline void check_finite(std::string_view op, const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericalError("non-finite value produced by " + std::string(op));
}

// Builds an op result; records `fn` on the active tape when any input needs gradients.
inline Tensor make_result(std::string_view op, Shape shape, std::vector<double> data,
                          std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  check_finite(op, data);
  Tensor out(std::move(shape), std::move(data));
  Tape* tape = active_tape;
  if (!tape) return out;
  bool needs = false;
  for (auto* in : inputs) needs = needs || in->requires_grad();
  if (!needs) return out;
  out.node().requires_grad = true;
  out.node().leaf = false;
  tape->push({std::string(op), out.node_ptr(), std::move(fn)});
  return out;
}

inline Tensor make_result(std::string_view op, Shape shape, std::vector<double> data,
                          const std::vector<Tensor>& inputs, BackwardFn fn) {
  check_finite(op, data);
  Tensor out(std::move(shape), std::move(data));
  Tape* tape = active_tape;
  if (!tape) return out;
  bool needs = false;
  for (auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  out.node().requires_grad = true;
  out.node().leaf = false;
  tape->push({std::string(op), out.node_ptr(), std::move(fn)});
  return out;
}

}  // namespace detail

namespace detail {
// Name of an op whose backward rule receives a doubled output gradient
// (fault-injection fixture for the gradient checker); empty in normal use.
inline thread_local std::string corrupt_backward_op;
}  // namespace detail

// Corrupts the backward rule of `op` for the lifetime of the scope.
class CorruptBackwardScope {
 public:
  explicit CorruptBackwardScope(std::string op) : prev_(std::move(detail::corrupt_backward_op)) {
    detail::corrupt_backward_op = std::move(op);
  }
  ~CorruptBackwardScope() { detail::corrupt_backward_op = std::move(prev_); }
  CorruptBackwardScope(const CorruptBackwardScope&) = delete;
  CorruptBackwardScope& operator=(const CorruptBackwardScope&) = delete;

 private:
  std::string prev_;
};

// Reverse sweep over `tape`. Leaf gradients accumulate across calls; interior
// gradients are reset first so a second call adds exactly one more dloss/dleaf.
inline void backward(const Tensor& loss, const Tape& tape) {
  if (loss.size() != 1)
    throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw ContractError("loss is not connected to any gradient leaf");
  for (auto& r : tape.records()) r.output->grad.clear();
  loss.node().grad_buffer()[0] += 1.0;
  const auto& recs = tape.records();
  for (auto it = recs.rbegin(); it != recs.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    if (!detail::corrupt_backward_op.empty() && it->op == detail::corrupt_backward_op) {
      std::vector<double> g = it->output->grad;
      for (auto& x : g) x *= 2.0;
      it->backward(g, it->output->data);
      continue;
    }
    it->backward(it->output->grad, it->output->data);
  }
}

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h, evaluated without recording.
inline std::vector<double> finite_diff_grad(const std::function<double(const Tensor&)>& f,
                                            const Tensor& x, double h = 1e-5) {
  NoGradScope guard;
  Tensor probe = x.clone();
  auto buf = probe.mutable_data();
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = buf[i];
    buf[i] = orig + h;
    const double fp = f(probe);
    buf[i] = orig - h;
    const double fm = f(probe);
    buf[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace hosnet
