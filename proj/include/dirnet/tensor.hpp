// Copyright 2026 The dirnet Authors.
// SPDX-License-Identifier: Apache-2.0

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
#include <vector>

namespace dirnet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

/// Thrown for any violated shape or argument precondition.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty unless tracked
  bool tracked = false;
};

/**
 * Dense row-major n-dimensional array with an optional gradient buffer.
 *
 * Tensor is a handle: copies share storage. Use clone() for a deep copy.
 * A tracked tensor participates in gradient recording whenever a Tape is
 * active on the current thread.
 */
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : s_(std::make_shared<TensorStorage<T>>()) {
    for (auto e : shape)
      if (e == 0) throw ShapeError("tensor extent must be positive: " + shape_str(shape));
    s_->shape = std::move(shape);
    s_->data.assign(shape_numel(s_->shape), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : Tensor(std::move(shape)) {
    if (values.size() != s_->data.size())
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(s_->shape));
    s_->data = std::move(values);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t numel() const { return s_->data.size(); }

  std::span<T> data() { return s_->data; }
  std::span<const T> data() const { return s_->data; }
  T* ptr() { return s_->data.data(); }
  const T* ptr() const { return s_->data.data(); }
  T& operator[](std::size_t i) { return s_->data[i]; }
  const T& operator[](std::size_t i) const { return s_->data[i]; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return s_->data[0];
  }

  bool tracked() const { return s_ && s_->tracked; }

  /// Marks the tensor as a gradient leaf (allocating a zero gradient) or
  /// detaches it (dropping the gradient).
  void set_tracked(bool on) {
    s_->tracked = on;
    if (on) {
      if (s_->grad.size() != s_->data.size()) s_->grad.assign(s_->data.size(), T(0));
    } else {
      s_->grad.clear();
    }
  }

  bool has_grad() const { return s_ && !s_->grad.empty(); }
  /// Gradient buffer. Writable through const handles: accumulating into it
  /// is graph bookkeeping, not a change of value.
  std::span<T> grad() const { return s_->grad; }
  void zero_grad() const { std::fill(s_->grad.begin(), s_->grad.end(), T(0)); }

  Tensor clone() const {
    Tensor t(shape());
    std::copy(s_->data.begin(), s_->data.end(), t.s_->data.begin());
    return t;
  }

  /// Same data, no gradient tracking, separate storage.
  Tensor detach() const { return clone(); }

  /// Shares storage with a different shape of equal element count; gradients
  /// are not propagated through reshaped views (use ops::reshape for that).
  bool same_storage(const Tensor& o) const { return s_ == o.s_; }

  std::shared_ptr<TensorStorage<T>> storage() const { return s_; }

 private:
  std::shared_ptr<TensorStorage<T>> s_;
};

/**
 * Ordered record of differentiable operations executed while active.
 *
 * Operations append their backward closures in execution order, which is a
 * topological order of the graph, so backward() replays them in reverse.
 */
template <typename T>
class Tape {
 public:
  void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }

  /// Accumulates d(loss)/d(leaf) into every tracked leaf, then clears.
  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1)
      throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    if (!std::isfinite(static_cast<double>(loss.item())))
      throw std::domain_error("backward() on non-finite loss");
    if (nodes_.empty() || !loss.tracked())
      throw std::logic_error("backward() with nothing recorded");
    loss.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    clear();
  }

  static Tape*& current() {
    thread_local Tape* tape = nullptr;
    return tape;
  }

 private:
  std::vector<std::function<void()>> nodes_;
};

/// Installs a tape as the recorder for the current thread for its lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(Tape<T>::current()) { Tape<T>::current() = &tape; }
  ~TapeScope() { Tape<T>::current() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

/// Suspends recording for its lifetime.
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : prev_(Tape<T>::current()) { Tape<T>::current() = nullptr; }
  ~NoGradScope() { Tape<T>::current() = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* prev_;
};

/// Runs backward on the tape active on this thread.
template <typename T>
void backward(Tensor<T>& loss) {
  Tape<T>* tape = Tape<T>::current();
  if (!tape) throw std::logic_error("backward() without an active tape");
  tape->backward(loss);
}

namespace detail {

template <typename T, typename... Ts>
bool should_record(const Tensor<T>& first, const Ts&... rest) {
  if (!Tape<T>::current()) return false;
  return first.tracked() || (... || rest.tracked());
}

/// Output tensor that is tracked iff recording.
template <typename T>
Tensor<T> make_output(Shape shape, bool record) {
  Tensor<T> out(std::move(shape));
  if (record) out.set_tracked(true);
  return out;
}

template <typename T>
void record(std::function<void()> fn) {
  Tape<T>::current()->record(std::move(fn));
}

}  // namespace detail

}  // namespace dirnet
