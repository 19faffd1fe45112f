#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pixelcnn/tensor.hpp"

namespace pixelcnn {

/// Ordered record of executed differentiable operations.
///
/// Ops append themselves while a Tape is active (see Scope); backward()
/// replays the record in reverse, which is reverse topological order
/// because execution order already respects data dependencies. Gradients
/// accumulate into each tensor's grad buffer, so a parameter used several
/// times receives every contribution. Single-writer: one step of work
/// runs on one logical thread of control.
template <class S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// RAII activation: ops record onto the innermost active tape.
  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(current_) { current_ = &t; }
    ~Scope() { current_ = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* current() { return current_; }

  void record(const std::shared_ptr<TensorData<S>>& out,
              std::function<void()> backward_fn) {
    produced_.insert(out.get());
    entries_.push_back(std::move(backward_fn));
  }

  bool produced(const void* node) const { return produced_.count(node) != 0; }
  std::size_t size() const { return entries_.size(); }

  void clear() {
    entries_.clear();
    produced_.clear();
  }

  /// Seeds d(loss)/d(loss) = 1 and replays the record backwards.
  void backward(const Tensor<S>& loss) {
    if (loss.size() != 1)
      throw ShapeError("backward: loss must be scalar, got shape " +
                       shape_str(loss.shape()));
    if (!produced(loss.id()))
      throw ShapeError(
          "backward: loss was not produced on this tape (detached subgraph)");
    loss.ptr()->grad = ArrayX<S>::Constant(1, S(1));
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> entries_;
  std::unordered_set<const void*> produced_;
  static thread_local Tape* current_;
};

template <class S>
thread_local Tape<S>* Tape<S>::current_ = nullptr;

namespace detail {

template <class S>
inline bool tracing(const Tensor<S>& a) {
  return Tape<S>::current() != nullptr && a.requires_grad();
}

template <class S>
inline bool tracing(const Tensor<S>& a, const Tensor<S>& b) {
  return Tape<S>::current() != nullptr &&
         (a.requires_grad() || b.requires_grad());
}

/// Gradient accumulator: allocates the buffer on first touch.
template <class S>
inline ArrayX<S>& acc(const std::shared_ptr<TensorData<S>>& n) {
  if (n->grad.size() != n->values.size())
    n->grad = ArrayX<S>::Zero(n->values.size());
  return n->grad;
}

/// True when the node took part in the loss: backward fns bail out early
/// for outputs that never received a gradient.
template <class S>
inline bool has_out_grad(const std::shared_ptr<TensorData<S>>& n) {
  return n->grad.size() == n->values.size();
}

}  // namespace detail

}  // namespace pixelcnn
