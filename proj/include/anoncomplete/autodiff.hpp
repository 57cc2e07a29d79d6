#pragma once

// Dense vectors/matrices with a reverse-mode tape.
//
// Every value recorded on a Tape is a row-major (rows x cols) block of T.
// Ops append a backward closure when any input requires a gradient; backward()
// replays closures in exact reverse recording order and accumulates additively.
// Parameters live outside the tape, and tape leaves alias their storage, so
// gradients land directly in Parameter::grad.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace anoncomplete {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
struct Parameter {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::vector<T> value;
  std::vector<T> grad;

  Parameter() = default;
  Parameter(std::string n, int r, int c)
      : name(std::move(n)),
        rows(r),
        cols(c),
        value(static_cast<std::size_t>(r) * static_cast<std::size_t>(c)),
        grad(value.size()) {}

  std::size_t size() const noexcept { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T{0}); }
};

template <class T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; invalid once the tape is cleared.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const noexcept { return tape_ != nullptr && id_ >= 0; }
  Tape<T>* tape() const noexcept { return tape_; }
  int id() const noexcept { return id_; }

  int rows() const;
  int cols() const;
  std::size_t size() const;
  bool requires_grad() const;
  std::span<const T> value() const;
  std::span<T> grad() const;
  T item() const;

 private:
  Tape<T>* tape_ = nullptr;
  int id_ = -1;
};

template <class T>
class Tape {
 public:
  struct Node {
    T* val = nullptr;
    T* grad = nullptr;  // null when the node does not require a gradient
    int rows = 0;
    int cols = 0;
    bool leaf = false;  // a whole parameter; nothing on the tape reads its gradient
    std::size_t size() const noexcept {
      return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    }
  };

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }
  void set_recording(bool on) noexcept { recording_ = on; }
  bool check_finite() const noexcept { return check_finite_; }
  void set_check_finite(bool on) noexcept { check_finite_ = on; }

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::size_t num_nodes() const noexcept { return nodes_.size(); }
  std::size_t num_backward_ops() const noexcept { return backward_.size(); }

  /// Fresh node with zeroed value; gradient storage allocated when `needs_grad`.
  Var<T> make(int rows, int cols, bool needs_grad) {
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.val = alloc(n.size());
    if (needs_grad && recording_) n.grad = alloc(n.size());
    nodes_.push_back(n);
    return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
  }

  /// Node aliasing external storage (parameter leaves and views).
  Var<T> alias(T* val, T* grad, int rows, int cols) {
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.val = val;
    n.grad = recording_ ? grad : nullptr;
    nodes_.push_back(n);
    return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
  }

  Var<T> constant(std::span<const T> data, int rows, int cols) {
    if (data.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
      throw ShapeError("constant: data length does not match shape");
    }
    Var<T> v = make(rows, cols, false);
    std::copy(data.begin(), data.end(), nodes_.back().val);
    return v;
  }
  Var<T> constant(std::span<const T> data) {
    return constant(data, static_cast<int>(data.size()), 1);
  }
  Var<T> zeros(int rows, int cols = 1) { return make(rows, cols, false); }

  /// Leaf bound to a parameter; gradients accumulate into p.grad.
  Var<T> param(Parameter<T>& p) {
    Var<T> v = alias(p.value.data(), p.grad.data(), p.rows, p.cols);
    nodes_.back().leaf = true;
    return v;
  }

  /// Queues grad += dy xᵀ for a leaf; backward applies each leaf's queue as one product.
  void defer_outer(T* grad, int rows, int cols, const T* dy, const T* x) {
    auto& d = deferred_[grad];
    d.rows = rows;
    d.cols = cols;
    d.dy.push_back(dy);
    d.x.push_back(x);
  }

  /// Embedding lookup: a view of one parameter row (a column vector).
  /// Backward writes only into that row of p.grad.
  Var<T> row(Parameter<T>& p, int r) {
    if (r < 0 || r >= p.rows) throw ShapeError("row: index " + std::to_string(r) + " out of range for " + p.name);
    const std::size_t off = static_cast<std::size_t>(r) * static_cast<std::size_t>(p.cols);
    return alias(p.value.data() + off, p.grad.data() + off, p.cols, 1);
  }

  void on_backward(std::function<void()> fn) { backward_.push_back(std::move(fn)); }

  void backward(Var<T> root, T seed = T{1}) {
    const Node& n = node(root.id());
    if (n.size() != 1) throw ShapeError("backward: root must be a scalar");
    if (n.grad == nullptr) return;
    n.grad[0] += seed;
    for (auto it = backward_.rbegin(); it != backward_.rend(); ++it) (*it)();
    flush_deferred();
  }

  void clear() {
    nodes_.clear();
    backward_.clear();
    deferred_.clear();
    for (auto& b : blocks_) b.used = 0;
    current_ = 0;
  }

  void verify_finite(const Node& n, const char* op) const {
    if (!check_finite_) return;
    for (std::size_t i = 0; i < n.size(); ++i) {
      if (!std::isfinite(static_cast<double>(n.val[i]))) {
        throw NumericError(std::string("non-finite value produced by ") + op);
      }
    }
  }

 private:
  struct Deferred {
    int rows = 0, cols = 0;
    std::vector<const T*> dy, x;
  };

  void flush_deferred() {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
    for (auto& [grad, d] : deferred_) {
      const auto n = static_cast<Eigen::Index>(d.dy.size());
      Mat dy(d.rows, n), x(d.cols, n);
      for (Eigen::Index k = 0; k < n; ++k) {
        std::copy(d.dy[static_cast<std::size_t>(k)], d.dy[static_cast<std::size_t>(k)] + d.rows, dy.col(k).data());
        std::copy(d.x[static_cast<std::size_t>(k)], d.x[static_cast<std::size_t>(k)] + d.cols, x.col(k).data());
      }
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(grad, d.rows, d.cols).noalias() +=
          dy * x.transpose();
    }
    deferred_.clear();
  }

  struct Block {
    std::unique_ptr<T[]> data;
    std::size_t capacity = 0;
    std::size_t used = 0;
  };

  T* alloc(std::size_t n) {
    if (n == 0) n = 1;
    while (current_ < blocks_.size()) {
      Block& b = blocks_[current_];
      if (b.capacity - b.used >= n) {
        T* p = b.data.get() + b.used;
        b.used += n;
        std::fill(p, p + n, T{0});
        return p;
      }
      ++current_;
    }
    Block b;
    b.capacity = std::max<std::size_t>(n, kBlockSize);
    b.data = std::make_unique<T[]>(b.capacity);
    b.used = n;
    std::fill(b.data.get(), b.data.get() + n, T{0});
    blocks_.push_back(std::move(b));
    current_ = blocks_.size() - 1;
    return blocks_.back().data.get();
  }

  static constexpr std::size_t kBlockSize = std::size_t{1} << 16;

  std::vector<Node> nodes_;
  std::vector<std::function<void()>> backward_;
  std::map<T*, Deferred> deferred_;
  std::vector<Block> blocks_;
  std::size_t current_ = 0;
  bool recording_ = true;
  bool check_finite_ = true;
};

template <class T>
int Var<T>::rows() const { return tape_->node(id_).rows; }
template <class T>
int Var<T>::cols() const { return tape_->node(id_).cols; }
template <class T>
std::size_t Var<T>::size() const { return tape_->node(id_).size(); }
template <class T>
bool Var<T>::requires_grad() const { return tape_->node(id_).grad != nullptr; }
template <class T>
std::span<const T> Var<T>::value() const {
  const auto& n = tape_->node(id_);
  return {n.val, n.size()};
}
template <class T>
std::span<T> Var<T>::grad() const {
  const auto& n = tape_->node(id_);
  if (n.grad == nullptr) return {};
  return {n.grad, n.size()};
}
template <class T>
T Var<T>::item() const {
  if (size() != 1) throw ShapeError("item: not a scalar");
  return tape_->node(id_).val[0];
}

namespace ad {

template <class T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using CVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using CMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

namespace detail {

template <class T>
struct Raw {
  T* val;
  T* grad;
  int rows;
  int cols;
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

template <class T>
Raw<T> raw(Var<T> v) {
  const auto& n = v.tape()->node(v.id());
  return {n.val, n.grad, n.rows, n.cols};
}

template <class T>
Tape<T>& same_tape(Var<T> a, Var<T> b, const char* op) {
  if (!a.valid() || !b.valid()) throw ShapeError(std::string(op) + ": invalid operand");
  if (a.tape() != b.tape()) throw ShapeError(std::string(op) + ": operands on different tapes");
  return *a.tape();
}

template <class T>
void require_same_size(Var<T> a, Var<T> b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": size mismatch " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
}

template <class T>
Var<T> finish(Tape<T>& tape, Var<T> out, const char* op) {
  tape.verify_finite(tape.node(out.id()), op);
  return out;
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

}  // namespace detail

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b, "add");
  detail::require_same_size(a, b, "add");
  Var<T> out = tape.make(a.rows(), a.cols(), a.requires_grad() || b.requires_grad());
  auto A = detail::raw(a), B = detail::raw(b), O = detail::raw(out);
  for (std::size_t i = 0; i < O.size(); ++i) O.val[i] = A.val[i] + B.val[i];
  if (O.grad) {
    tape.on_backward([A, B, O] {
      for (std::size_t i = 0; i < O.size(); ++i) {
        if (A.grad) A.grad[i] += O.grad[i];
        if (B.grad) B.grad[i] += O.grad[i];
      }
    });
  }
  return detail::finish(tape, out, "add");
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b, "sub");
  detail::require_same_size(a, b, "sub");
  Var<T> out = tape.make(a.rows(), a.cols(), a.requires_grad() || b.requires_grad());
  auto A = detail::raw(a), B = detail::raw(b), O = detail::raw(out);
  for (std::size_t i = 0; i < O.size(); ++i) O.val[i] = A.val[i] - B.val[i];
  if (O.grad) {
    tape.on_backward([A, B, O] {
      for (std::size_t i = 0; i < O.size(); ++i) {
        if (A.grad) A.grad[i] += O.grad[i];
        if (B.grad) B.grad[i] -= O.grad[i];
      }
    });
  }
  return detail::finish(tape, out, "sub");
}

/// Elementwise product.
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b, "mul");
  detail::require_same_size(a, b, "mul");
  Var<T> out = tape.make(a.rows(), a.cols(), a.requires_grad() || b.requires_grad());
  auto A = detail::raw(a), B = detail::raw(b), O = detail::raw(out);
  for (std::size_t i = 0; i < O.size(); ++i) O.val[i] = A.val[i] * B.val[i];
  if (O.grad) {
    tape.on_backward([A, B, O] {
      for (std::size_t i = 0; i < O.size(); ++i) {
        if (A.grad) A.grad[i] += O.grad[i] * B.val[i];
        if (B.grad) B.grad[i] += O.grad[i] * A.val[i];
      }
    });
  }
  return detail::finish(tape, out, "mul");
}

template <class T>
Var<T> scale(Var<T> a, T factor) {
  Tape<T>& tape = *a.tape();
  Var<T> out = tape.make(a.rows(), a.cols(), a.requires_grad());
  auto A = detail::raw(a), O = detail::raw(out);
  for (std::size_t i = 0; i < O.size(); ++i) O.val[i] = A.val[i] * factor;
  if (O.grad) {
    tape.on_backward([A, O, factor] {
      for (std::size_t i = 0; i < O.size(); ++i) A.grad[i] += O.grad[i] * factor;
    });
  }
  return detail::finish(tape, out, "scale");
}

template <class T>
Var<T> neg(Var<T> a) { return scale(a, T{-1}); }

template <class T>
Var<T> add_scalar(Var<T> a, T c) {
  Tape<T>& tape = *a.tape();
  Var<T> out = tape.make(a.rows(), a.cols(), a.requires_grad());
  auto A = detail::raw(a), O = detail::raw(out);
  for (std::size_t i = 0; i < O.size(); ++i) O.val[i] = A.val[i] + c;
  if (O.grad) {
    tape.on_backward([A, O] {
      for (std::size_t i = 0; i < O.size(); ++i) A.grad[i] += O.grad[i];
    });
  }
  return detail::finish(tape, out, "add_scalar");
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  Tape<T>& tape = *a.tape();
  Var<T> out = tape.make(a.rows(), a.cols(), a.requires_grad());
  auto A = detail::raw(a), O = detail::raw(out);
  for (std::size_t i = 0; i < O.size(); ++i) O.val[i] = detail::stable_sigmoid(A.val[i]);
  if (O.grad) {
    tape.on_backward([A, O] {
      for (std::size_t i = 0; i < O.size(); ++i) A.grad[i] += O.grad[i] * O.val[i] * (T{1} - O.val[i]);
    });
  }
  return detail::finish(tape, out, "sigmoid");
}

template <class T>
Var<T> tanh(Var<T> a) {
  Tape<T>& tape = *a.tape();
  Var<T> out = tape.make(a.rows(), a.cols(), a.requires_grad());
  auto A = detail::raw(a), O = detail::raw(out);
  const auto n = static_cast<Eigen::Index>(O.size());
  VecMap<T>(O.val, n) = CVecMap<T>(A.val, n).array().tanh().matrix();
  if (O.grad) {
    tape.on_backward([A, O] {
      for (std::size_t i = 0; i < O.size(); ++i) A.grad[i] += O.grad[i] * (T{1} - O.val[i] * O.val[i]);
    });
  }
  return detail::finish(tape, out, "tanh");
}

template <class T>
Var<T> log(Var<T> a) {
  Tape<T>& tape = *a.tape();
  Var<T> out = tape.make(a.rows(), a.cols(), a.requires_grad());
  auto A = detail::raw(a), O = detail::raw(out);
  for (std::size_t i = 0; i < O.size(); ++i) O.val[i] = std::log(A.val[i]);
  if (O.grad) {
    tape.on_backward([A, O] {
      for (std::size_t i = 0; i < O.size(); ++i) A.grad[i] += O.grad[i] / A.val[i];
    });
  }
  return detail::finish(tape, out, "log");
}

/// log(sigmoid(x)), stable for large |x|.
template <class T>
Var<T> log_sigmoid(Var<T> a) {
  Tape<T>& tape = *a.tape();
  Var<T> out = tape.make(a.rows(), a.cols(), a.requires_grad());
  auto A = detail::raw(a), O = detail::raw(out);
  for (std::size_t i = 0; i < O.size(); ++i) {
    const T x = A.val[i];
    O.val[i] = x >= T{0} ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
  }
  if (O.grad) {
    tape.on_backward([A, O] {
      for (std::size_t i = 0; i < O.size(); ++i) A.grad[i] += O.grad[i] * (T{1} - detail::stable_sigmoid(A.val[i]));
    });
  }
  return detail::finish(tape, out, "log_sigmoid");
}

template <class T>
Var<T> softmax(Var<T> a) {
  Tape<T>& tape = *a.tape();
  if (a.size() == 0) throw ShapeError("softmax: empty input");
  Var<T> out = tape.make(a.rows(), a.cols(), a.requires_grad());
  auto A = detail::raw(a), O = detail::raw(out);
  const T mx = *std::max_element(A.val, A.val + A.size());
  T total{0};
  for (std::size_t i = 0; i < O.size(); ++i) {
    O.val[i] = std::exp(A.val[i] - mx);
    total += O.val[i];
  }
  for (std::size_t i = 0; i < O.size(); ++i) O.val[i] /= total;
  if (O.grad) {
    tape.on_backward([A, O] {
      T dot{0};
      for (std::size_t i = 0; i < O.size(); ++i) dot += O.grad[i] * O.val[i];
      for (std::size_t i = 0; i < O.size(); ++i) A.grad[i] += O.val[i] * (O.grad[i] - dot);
    });
  }
  return detail::finish(tape, out, "softmax");
}

template <class T>
Var<T> log_softmax(Var<T> a) {
  Tape<T>& tape = *a.tape();
  if (a.size() == 0) throw ShapeError("log_softmax: empty input");
  Var<T> out = tape.make(a.rows(), a.cols(), a.requires_grad());
  auto A = detail::raw(a), O = detail::raw(out);
  const T mx = *std::max_element(A.val, A.val + A.size());
  T total{0};
  for (std::size_t i = 0; i < A.size(); ++i) total += std::exp(A.val[i] - mx);
  const T lse = mx + std::log(total);
  for (std::size_t i = 0; i < O.size(); ++i) O.val[i] = A.val[i] - lse;
  if (O.grad) {
    tape.on_backward([A, O] {
      T gsum{0};
      for (std::size_t i = 0; i < O.size(); ++i) gsum += O.grad[i];
      for (std::size_t i = 0; i < O.size(); ++i) A.grad[i] += O.grad[i] - std::exp(O.val[i]) * gsum;
    });
  }
  return detail::finish(tape, out, "log_softmax");
}

template <class T>
Var<T> sum(Var<T> a) {
  Tape<T>& tape = *a.tape();
  Var<T> out = tape.make(1, 1, a.requires_grad());
  auto A = detail::raw(a), O = detail::raw(out);
  T s{0};
  for (std::size_t i = 0; i < A.size(); ++i) s += A.val[i];
  O.val[0] = s;
  if (O.grad) {
    tape.on_backward([A, O] {
      for (std::size_t i = 0; i < A.size(); ++i) A.grad[i] += O.grad[0];
    });
  }
  return detail::finish(tape, out, "sum");
}

template <class T>
Var<T> dot(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::same_tape(a, b, "dot");
  detail::require_same_size(a, b, "dot");
  Var<T> out = tape.make(1, 1, a.requires_grad() || b.requires_grad());
  auto A = detail::raw(a), B = detail::raw(b), O = detail::raw(out);
  O.val[0] = CVecMap<T>(A.val, static_cast<Eigen::Index>(A.size())).dot(CVecMap<T>(B.val, static_cast<Eigen::Index>(B.size())));
  if (O.grad) {
    tape.on_backward([A, B, O] {
      const T g = O.grad[0];
      for (std::size_t i = 0; i < A.size(); ++i) {
        if (A.grad) A.grad[i] += g * B.val[i];
        if (B.grad) B.grad[i] += g * A.val[i];
      }
    });
  }
  return detail::finish(tape, out, "dot");
}

/// (rows x k) * (k x cols). With cols == 1 this is a matrix-vector product.
template <class T>
Var<T> matmul(Var<T> w, Var<T> x) {
  Tape<T>& tape = detail::same_tape(w, x, "matmul");
  if (w.cols() != x.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + std::to_string(w.cols()) + " vs " +
                     std::to_string(x.rows()) + ")");
  }
  Var<T> out = tape.make(w.rows(), x.cols(), w.requires_grad() || x.requires_grad());
  auto W = detail::raw(w), X = detail::raw(x), O = detail::raw(out);
  MatMap<T>(O.val, O.rows, O.cols).noalias() = CMatMap<T>(W.val, W.rows, W.cols) * CMatMap<T>(X.val, X.rows, X.cols);
  if (O.grad) {
    const bool defer = tape.node(w.id()).leaf && X.cols == 1;
    tape.on_backward([W, X, O, defer, &tape] {
      CMatMap<T> dy(O.grad, O.rows, O.cols);
      if (X.grad) MatMap<T>(X.grad, X.rows, X.cols).noalias() += CMatMap<T>(W.val, W.rows, W.cols).transpose() * dy;
      if (W.grad && defer) {
        tape.defer_outer(W.grad, W.rows, W.cols, O.grad, X.val);
      } else if (W.grad) {
        MatMap<T>(W.grad, W.rows, W.cols).noalias() += dy * CMatMap<T>(X.val, X.rows, X.cols).transpose();
      }
    });
  }
  return detail::finish(tape, out, "matmul");
}

/// W x + b for a column vector x.
template <class T>
Var<T> linear(Var<T> w, Var<T> b, Var<T> x) {
  Tape<T>& tape = detail::same_tape(w, x, "linear");
  if (w.cols() != static_cast<int>(x.size()) || b.size() != static_cast<std::size_t>(w.rows())) {
    throw ShapeError("linear: shape mismatch");
  }
  Var<T> out = tape.make(w.rows(), 1, w.requires_grad() || b.requires_grad() || x.requires_grad());
  auto W = detail::raw(w), B = detail::raw(b), X = detail::raw(x), O = detail::raw(out);
  VecMap<T> y(O.val, O.rows);
  y.noalias() = CMatMap<T>(W.val, W.rows, W.cols) * CVecMap<T>(X.val, W.cols);
  y += CVecMap<T>(B.val, O.rows);
  if (O.grad) {
    const bool defer = tape.node(w.id()).leaf;
    tape.on_backward([W, B, X, O, defer, &tape] {
      CVecMap<T> dy(O.grad, O.rows);
      if (B.grad) VecMap<T>(B.grad, O.rows) += dy;
      if (X.grad) VecMap<T>(X.grad, W.cols).noalias() += CMatMap<T>(W.val, W.rows, W.cols).transpose() * dy;
      if (W.grad && defer) {
        tape.defer_outer(W.grad, W.rows, W.cols, O.grad, X.val);
      } else if (W.grad) {
        MatMap<T>(W.grad, W.rows, W.cols).noalias() += dy * CVecMap<T>(X.val, W.cols).transpose();
      }
    });
  }
  return detail::finish(tape, out, "linear");
}

/// Column-vector concatenation.
template <class T>
Var<T> concat(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape<T>& tape = *parts.front().tape();
  std::size_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.tape() != &tape) throw ShapeError("concat: operands on different tapes");
    total += p.size();
    rg = rg || p.requires_grad();
  }
  Var<T> out = tape.make(static_cast<int>(total), 1, rg);
  auto O = detail::raw(out);
  std::vector<detail::Raw<T>> ins;
  ins.reserve(parts.size());
  std::size_t off = 0;
  for (const auto& p : parts) {
    auto P = detail::raw(p);
    std::copy(P.val, P.val + P.size(), O.val + off);
    off += P.size();
    ins.push_back(P);
  }
  if (O.grad) {
    tape.on_backward([ins = std::move(ins), O] {
      std::size_t o = 0;
      for (const auto& P : ins) {
        if (P.grad) {
          for (std::size_t i = 0; i < P.size(); ++i) P.grad[i] += O.grad[o + i];
        }
        o += P.size();
      }
    });
  }
  return out;
}

template <class T>
Var<T> concat(std::initializer_list<Var<T>> parts) {
  return concat(std::span<const Var<T>>(parts.begin(), parts.size()));
}

/// Contiguous sub-vector as a view: shares value and gradient storage.
template <class T>
Var<T> slice(Var<T> a, std::size_t offset, std::size_t length) {
  if (offset + length > a.size()) throw ShapeError("slice: range out of bounds");
  auto A = detail::raw(a);
  return a.tape()->alias(A.val + offset, A.grad ? A.grad + offset : nullptr, static_cast<int>(length), 1);
}

template <class T>
Var<T> pick(Var<T> a, std::size_t index) { return slice(a, index, 1); }

/// Row r of a matrix node as a column vector view.
template <class T>
Var<T> row(Var<T> m, int r) {
  if (r < 0 || r >= m.rows()) throw ShapeError("row: index out of range");
  auto M = detail::raw(m);
  const std::size_t off = static_cast<std::size_t>(r) * static_cast<std::size_t>(M.cols);
  return m.tape()->alias(M.val + off, M.grad ? M.grad + off : nullptr, M.cols, 1);
}

/// Smaller of two scalars; the gradient flows to the selected operand (first on ties).
template <class T>
Var<T> min2(Var<T> a, Var<T> b) {
  if (a.size() != 1 || b.size() != 1) throw ShapeError("min2: operands must be scalars");
  return a.item() <= b.item() ? a : b;
}

/// n copies of a scalar.
template <class T>
Var<T> repeat(Var<T> s, int n) {
  if (s.size() != 1) throw ShapeError("repeat: operand must be a scalar");
  Tape<T>& tape = *s.tape();
  Var<T> out = tape.make(n, 1, s.requires_grad());
  auto S = detail::raw(s), O = detail::raw(out);
  std::fill(O.val, O.val + O.size(), S.val[0]);
  if (O.grad) {
    tape.on_backward([S, O] {
      T g{0};
      for (std::size_t i = 0; i < O.size(); ++i) g += O.grad[i];
      S.grad[0] += g;
    });
  }
  return out;
}

/// y_j = vectors[j] . q
template <class T>
Var<T> dots(std::span<const Var<T>> vectors, Var<T> q) {
  Tape<T>& tape = *q.tape();
  const auto d = q.size();
  bool rg = q.requires_grad();
  std::vector<detail::Raw<T>> ins;
  ins.reserve(vectors.size());
  for (const auto& v : vectors) {
    if (v.size() != d) throw ShapeError("dots: size mismatch");
    rg = rg || v.requires_grad();
    ins.push_back(detail::raw(v));
  }
  Var<T> out = tape.make(static_cast<int>(vectors.size()), 1, rg);
  auto Q = detail::raw(q), O = detail::raw(out);
  CVecMap<T> qm(Q.val, static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < ins.size(); ++j) O.val[j] = CVecMap<T>(ins[j].val, static_cast<Eigen::Index>(d)).dot(qm);
  if (O.grad) {
    tape.on_backward([ins = std::move(ins), Q, O, d] {
      const auto n = static_cast<Eigen::Index>(d);
      for (std::size_t j = 0; j < ins.size(); ++j) {
        const T g = O.grad[j];
        if (g == T{0}) continue;
        if (ins[j].grad) VecMap<T>(ins[j].grad, n) += g * CVecMap<T>(Q.val, n);
        if (Q.grad) VecMap<T>(Q.grad, n) += g * CVecMap<T>(ins[j].val, n);
      }
    });
  }
  return detail::finish(tape, out, "dots");
}

/// Additive attention scores: s_j = v . tanh(keys[j] + query).
template <class T>
Var<T> attention_scores(std::span<const Var<T>> keys, Var<T> query, Var<T> v) {
  Tape<T>& tape = detail::same_tape(query, v, "attention_scores");
  detail::require_same_size(query, v, "attention_scores");
  if (keys.empty()) throw ShapeError("attention_scores: no keys");
  const std::size_t d = query.size();
  const std::size_t n = keys.size();
  bool rg = query.requires_grad() || v.requires_grad();
  std::vector<detail::Raw<T>> ks;
  ks.reserve(n);
  for (const auto& k : keys) {
    if (k.size() != d) throw ShapeError("attention_scores: key size mismatch");
    rg = rg || k.requires_grad();
    ks.push_back(detail::raw(k));
  }
  Var<T> out = tape.make(static_cast<int>(n), 1, rg);
  // tanh activations kept for the backward pass
  Var<T> act = tape.make(static_cast<int>(n), static_cast<int>(d), false);
  auto Q = detail::raw(query), V = detail::raw(v), O = detail::raw(out), Act = detail::raw(act);
  const auto dn = static_cast<Eigen::Index>(d);
  CVecMap<T> q(Q.val, dn), vv(V.val, dn);
  for (std::size_t j = 0; j < n; ++j) {
    VecMap<T> t(Act.val + j * d, dn);
    t = (CVecMap<T>(ks[j].val, dn) + q).array().tanh().matrix();
    O.val[j] = vv.dot(t);
  }
  if (O.grad) {
    tape.on_backward([ks = std::move(ks), Q, V, O, Act, d, n] {
      const auto dn = static_cast<Eigen::Index>(d);
      CVecMap<T> vv(V.val, dn);
      Eigen::Matrix<T, Eigen::Dynamic, 1> du(dn);
      for (std::size_t j = 0; j < n; ++j) {
        const T g = O.grad[j];
        if (g == T{0}) continue;
        CVecMap<T> t(Act.val + j * d, dn);
        if (V.grad) VecMap<T>(V.grad, dn) += g * t;
        du = (g * vv.array() * (T{1} - t.array().square())).matrix();
        if (ks[j].grad) VecMap<T>(ks[j].grad, dn) += du;
        if (Q.grad) VecMap<T>(Q.grad, dn) += du;
      }
    });
  }
  return detail::finish(tape, out, "attention_scores");
}

/// sum_j weights[j] * vectors[j]
template <class T>
Var<T> weighted_sum(std::span<const Var<T>> vectors, Var<T> weights) {
  Tape<T>& tape = *weights.tape();
  if (vectors.empty() || weights.size() != vectors.size()) throw ShapeError("weighted_sum: size mismatch");
  const std::size_t d = vectors.front().size();
  bool rg = weights.requires_grad();
  std::vector<detail::Raw<T>> hs;
  hs.reserve(vectors.size());
  for (const auto& h : vectors) {
    if (h.size() != d) throw ShapeError("weighted_sum: vector size mismatch");
    rg = rg || h.requires_grad();
    hs.push_back(detail::raw(h));
  }
  Var<T> out = tape.make(static_cast<int>(d), 1, rg);
  auto Wt = detail::raw(weights), O = detail::raw(out);
  const auto dn = static_cast<Eigen::Index>(d);
  VecMap<T> y(O.val, dn);
  for (std::size_t j = 0; j < hs.size(); ++j) y += Wt.val[j] * CVecMap<T>(hs[j].val, dn);
  if (O.grad) {
    tape.on_backward([hs = std::move(hs), Wt, O, dn] {
      CVecMap<T> dy(O.grad, dn);
      for (std::size_t j = 0; j < hs.size(); ++j) {
        if (Wt.grad) Wt.grad[j] += dy.dot(CVecMap<T>(hs[j].val, dn));
        if (hs[j].grad) VecMap<T>(hs[j].grad, dn) += Wt.val[j] * dy;
      }
    });
  }
  return detail::finish(tape, out, "weighted_sum");
}

/// Copy of `base` with entries at `indices` replaced by the scalars in `values`.
/// Replaced entries pass no gradient back to `base`.
template <class T>
Var<T> scatter_replace(Var<T> base, std::span<const int> indices, std::span<const Var<T>> values) {
  Tape<T>& tape = *base.tape();
  if (indices.size() != values.size()) throw ShapeError("scatter_replace: size mismatch");
  bool rg = base.requires_grad();
  std::vector<detail::Raw<T>> vs;
  for (const auto& v : values) {
    if (v.size() != 1) throw ShapeError("scatter_replace: values must be scalars");
    rg = rg || v.requires_grad();
    vs.push_back(detail::raw(v));
  }
  std::vector<int> idx(indices.begin(), indices.end());
  std::vector<char> replaced(base.size(), 0);
  for (int i : idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= base.size()) throw ShapeError("scatter_replace: index out of range");
    replaced[static_cast<std::size_t>(i)] = 1;
  }
  Var<T> out = tape.make(base.rows(), base.cols(), rg);
  auto B = detail::raw(base), O = detail::raw(out);
  std::copy(B.val, B.val + B.size(), O.val);
  for (std::size_t j = 0; j < idx.size(); ++j) O.val[idx[j]] = vs[j].val[0];
  if (O.grad) {
    tape.on_backward([B, O, vs = std::move(vs), idx = std::move(idx), replaced = std::move(replaced)] {
      if (B.grad) {
        for (std::size_t i = 0; i < O.size(); ++i) {
          if (!replaced[i]) B.grad[i] += O.grad[i];
        }
      }
      for (std::size_t j = 0; j < idx.size(); ++j) {
        if (vs[j].grad) vs[j].grad[0] += O.grad[idx[j]];
      }
    });
  }
  return out;
}

/// One LSTM step. `w` is (4H x (I+H)) with gate blocks ordered input, forget,
/// candidate, output; `b` has 4H entries.
template <class T>
std::pair<Var<T>, Var<T>> lstm_cell(Var<T> x, Var<T> h, Var<T> c, Var<T> w, Var<T> b) {
  const std::size_t hd = h.size();
  if (c.size() != hd || static_cast<std::size_t>(w.rows()) != 4 * hd ||
      static_cast<std::size_t>(w.cols()) != x.size() + hd) {
    throw ShapeError("lstm_cell: shape mismatch");
  }
  Var<T> gates = linear(w, b, concat({x, h}));
  Var<T> in_gate = sigmoid(slice(gates, 0, hd));
  Var<T> forget_gate = sigmoid(slice(gates, hd, hd));
  Var<T> candidate = tanh(slice(gates, 2 * hd, hd));
  Var<T> out_gate = sigmoid(slice(gates, 3 * hd, hd));
  Var<T> c_next = add(mul(forget_gate, c), mul(in_gate, candidate));
  Var<T> h_next = mul(out_gate, tanh(c_next));
  return {h_next, c_next};
}

}  // namespace ad

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // "<param>[<index>]"
};

/// Relative difference with an absolute floor so coordinates where both
/// gradients vanish compare as equal.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares tape gradients against central differences. `f` builds a scalar on
/// the given tape from the current parameter values. Parameters larger than
/// `max_coords_per_param` are sampled.
template <class F>
GradCheckResult grad_check(F&& f, std::span<Parameter<double>* const> params, double eps = 1e-5,
                           std::size_t max_coords_per_param = 0, std::uint64_t seed = 7, double floor = 1e-6) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    Var<double> loss = f(tape);
    tape.backward(loss);
  }
  auto evaluate = [&f] {
    Tape<double> tape(false);
    return f(tape).item();
  };
  std::mt19937_64 rng(seed);
  GradCheckResult result;
  for (auto* p : params) {
    std::vector<std::size_t> coords(p->size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_coords_per_param > 0 && coords.size() > max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords_per_param);
    }
    for (std::size_t i : coords) {
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const double up = evaluate();
      p->value[i] = saved - eps;
      const double down = evaluate();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(p->grad[i], numeric, floor);
      ++result.coordinates;
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace anoncomplete
