#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "ssmg/tensor.hpp"

namespace ssmg {

// Ordered record of executed operations. Operations run while a TapeScope is
// active append one backward closure each; closures are replayed in reverse to
// distribute adjoints. A tape is confined to one worker thread.
template <typename T>
class TapeT {
 public:
  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  void record(std::function<void()> backward) { nodes_.push_back(std::move(backward)); }
  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a scalar loss. Errors: non-scalar loss, loss not
  // produced on this tape, repeated invocation without reset.
  void backward(const TensorT<T>& loss) {
    if (consumed_) throw Error("backward() called twice on the same tape; reset() first");
    if (!loss.defined() || loss.numel() != 1)
      throw ShapeError("backward() needs a scalar loss, got shape " +
                       (loss.defined() ? shape_str(loss.shape()) : std::string("<null>")));
    if (loss.tape() != this)
      throw Error("backward(): loss is detached from this tape");
    consumed_ = true;
    loss.storage()->alloc_grad();
    loss.storage()->grad[0] = T(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
  }

  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

using Tape = TapeT<double>;

namespace detail {
template <typename T>
inline TapeT<T>*& active_tape_slot() {
  thread_local TapeT<T>* slot = nullptr;
  return slot;
}
}  // namespace detail

template <typename T>
TapeT<T>* active_tape() {
  return detail::active_tape_slot<T>();
}

// Makes a tape the recording target for the current thread.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(TapeT<T>& tape) : prev_(detail::active_tape_slot<T>()) {
    detail::active_tape_slot<T>() = &tape;
  }
  ~TapeScope() { detail::active_tape_slot<T>() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  TapeT<T>* prev_;
};

}  // namespace ssmg
