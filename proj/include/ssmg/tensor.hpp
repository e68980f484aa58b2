#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <vector>

#include "ssmg/common.hpp"
#include "ssmg/rng.hpp"

namespace ssmg {

// ---------------------------------------------------------------------------
// Instrumented scalar accounting. Every tensor storage (values and gradient
// buffers alike) registers its element count here, which is what the memory
// benchmark reports: retained scalar counts rather than process RSS, so the
// numbers are allocator- and platform-independent.
// ---------------------------------------------------------------------------
namespace memory {

class CapExceeded : public Error {
 public:
  using Error::Error;
};

namespace detail {
inline std::atomic<std::int64_t>& live_counter() {
  static std::atomic<std::int64_t> v{0};
  return v;
}
inline std::atomic<std::int64_t>& peak_counter() {
  static std::atomic<std::int64_t> v{0};
  return v;
}
inline std::atomic<std::int64_t>& cap_value() {
  static std::atomic<std::int64_t> v{0};  // 0 = unlimited
  return v;
}
}  // namespace detail

inline std::int64_t live() { return detail::live_counter().load(std::memory_order_relaxed); }
inline std::int64_t peak() { return detail::peak_counter().load(std::memory_order_relaxed); }

inline void set_cap(std::int64_t scalars) { detail::cap_value().store(scalars); }
inline std::int64_t cap() { return detail::cap_value().load(); }

// Start a measurement window: peak is pulled down to the currently live count.
inline void reset_peak() { detail::peak_counter().store(live()); }

inline void on_alloc(std::int64_t n) {
  const std::int64_t c = cap();
  const std::int64_t now = detail::live_counter().fetch_add(n, std::memory_order_relaxed) + n;
  if (c > 0 && now > c) {
    detail::live_counter().fetch_sub(n, std::memory_order_relaxed);
    throw CapExceeded("activation cap exceeded: " + std::to_string(now) + " scalars live, cap " +
                      std::to_string(c));
  }
  auto& pk = detail::peak_counter();
  std::int64_t p = pk.load(std::memory_order_relaxed);
  while (now > p && !pk.compare_exchange_weak(p, now, std::memory_order_relaxed)) {
  }
}

inline void on_free(std::int64_t n) {
  detail::live_counter().fetch_sub(n, std::memory_order_relaxed);
}

// RAII guard for transient (non-tensor) scratch that should still be visible
// to the accounting, e.g. caches held by fused-operation closures.
class ScopedCount {
 public:
  explicit ScopedCount(std::int64_t n) : n_(n) { on_alloc(n_); }
  ~ScopedCount() { on_free(n_); }
  ScopedCount(const ScopedCount&) = delete;
  ScopedCount& operator=(const ScopedCount&) = delete;

 private:
  std::int64_t n_;
};

}  // namespace memory

template <typename T>
class TapeT;

template <typename T>
struct StorageT {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;          // nonempty iff a gradient slot exists
  bool requires_grad = false;   // leaf the user wants gradients for
  bool diff = false;            // participates in the differentiable graph
  TapeT<T>* tape = nullptr;     // tape that produced this value (intermediates)

  explicit StorageT(Shape s, bool rg = false) : shape(std::move(s)), requires_grad(rg) {
    const std::int64_t n = numel_of(shape);
    memory::on_alloc(n);
    data.assign(static_cast<std::size_t>(n), T(0));
    if (requires_grad) {
      diff = true;
      alloc_grad();
    }
  }
  ~StorageT() {
    memory::on_free(static_cast<std::int64_t>(data.size()));
    if (!grad.empty()) memory::on_free(static_cast<std::int64_t>(grad.size()));
  }
  StorageT(const StorageT&) = delete;
  StorageT& operator=(const StorageT&) = delete;

  void alloc_grad() {
    if (!grad.empty()) return;
    memory::on_alloc(static_cast<std::int64_t>(data.size()));
    grad.assign(data.size(), T(0));
  }
};

// Dense row-major n-dimensional array. Handles share immutable storage; all
// mutation goes through construction, recorded operations, or the optimizer
// (which owns its parameters between tape lifetimes).
template <typename T>
class TensorT {
 public:
  using Scalar = T;

  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    return TensorT(std::make_shared<StorageT<T>>(std::move(shape), requires_grad));
  }
  static TensorT full(Shape shape, T value, bool requires_grad = false) {
    TensorT t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.storage()->data) v = value;
    return t;
  }
  static TensorT scalar(T value, bool requires_grad = false) {
    return full({}, value, requires_grad);
  }
  static TensorT from_vector(Shape shape, const std::vector<T>& values,
                             bool requires_grad = false) {
    TensorT t = zeros(std::move(shape), requires_grad);
    if (static_cast<std::int64_t>(values.size()) != t.numel())
      throw ShapeError("from_vector: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(t.shape()));
    t.storage()->data = values;
    return t;
  }

  bool defined() const { return st_ != nullptr; }
  const Shape& shape() const { return st_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(st_->shape.size()); }
  std::int64_t extent(std::int64_t axis) const { return st_->shape[static_cast<std::size_t>(axis)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(st_->data.size()); }

  std::vector<T>& data() { return st_->data; }
  const std::vector<T>& data() const { return st_->data; }
  std::vector<T>& grad() {
    if (st_->grad.empty()) throw Error("tensor has no gradient buffer");
    return st_->grad;
  }
  const std::vector<T>& grad() const {
    if (st_->grad.empty()) throw Error("tensor has no gradient buffer");
    return st_->grad;
  }
  bool has_grad() const { return st_ && !st_->grad.empty(); }
  bool requires_grad() const { return st_ && st_->requires_grad; }
  bool differentiable() const { return st_ && st_->diff; }
  TapeT<T>* tape() const { return st_ ? st_->tape : nullptr; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor of shape " + shape_str(shape()));
    return st_->data[0];
  }
  T at(std::initializer_list<std::int64_t> idx) const {
    const Shape st = row_major_strides(st_->shape);
    std::int64_t off = 0;
    std::size_t i = 0;
    for (auto v : idx) off += v * st[i++];
    return st_->data[static_cast<std::size_t>(off)];
  }

  // Deep copy, detached from any tape.
  TensorT clone() const {
    TensorT t = zeros(shape(), st_->requires_grad);
    t.storage()->data = st_->data;
    return t;
  }

  void zero_grad() {
    if (st_ && !st_->grad.empty()) std::fill(st_->grad.begin(), st_->grad.end(), T(0));
  }

  void check_finite(const char* what) const {
    for (const T v : st_->data)
      if (!std::isfinite(static_cast<double>(v)))
        throw ValueError(std::string(what) + ": non-finite value in tensor of shape " +
                         shape_str(shape()));
  }

  std::shared_ptr<StorageT<T>> storage() const { return st_; }

 private:
  explicit TensorT(std::shared_ptr<StorageT<T>> st) : st_(std::move(st)) {}
  std::shared_ptr<StorageT<T>> st_;
};

using Tensor = TensorT<double>;

// Seeded random tensors (parameter init, tests).
template <typename T>
TensorT<T> randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
  TensorT<T> t = TensorT<T>::zeros(std::move(shape), requires_grad);
  for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

template <typename T>
TensorT<T> rand_uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false) {
  TensorT<T> t = TensorT<T>::zeros(std::move(shape), requires_grad);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace ssmg
