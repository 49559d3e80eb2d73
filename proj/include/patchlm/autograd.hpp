#pragma once

#include <functional>
#include <vector>

#include "patchlm/tensor.hpp"

namespace patchlm {

// Records differentiable operations in execution order. backward() replays
// them in reverse, each exactly once, then clears the tape.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  struct Record {
    std::vector<TensorPtr<T>> inputs;
    TensorPtr<T> output;
    BackwardFn backward;
  };

  bool enabled() const { return enabled_; }
  void set_enabled(bool on) { enabled_ = on; }
  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

  // True when an op over these inputs must be recorded.
  bool needs_grad(std::initializer_list<const TensorPtr<T>*> inputs) const {
    if (!enabled_) return false;
    for (const auto* in : inputs) {
      if (*in && (*in)->requires_grad()) return true;
    }
    return false;
  }

  void record(std::vector<TensorPtr<T>> inputs, TensorPtr<T> output, BackwardFn fn) {
    output->set_requires_grad(true);
    records_.push_back({std::move(inputs), std::move(output), std::move(fn)});
  }

  // Seeds d(loss)/d(loss) = 1 and propagates. Gradients accumulate into
  // every requires_grad tensor reachable from the loss.
  void backward(const TensorPtr<T>& loss) {
    if (!loss || loss->size() != 1) {
      throw UsageError("backward requires a scalar loss");
    }
    loss->ensure_grad()[0] = T(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (it->output->has_grad()) it->backward();
    }
    records_.clear();
  }

 private:
  std::vector<Record> records_;
  bool enabled_ = true;
};

// Disables recording for the lifetime of the guard.
template <class T>
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape<T>& tape) : tape_(tape), prev_(tape.enabled()) { tape.set_enabled(false); }
  ~NoGradGuard() { tape_.set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape<T>& tape_;
  bool prev_;
};

}  // namespace patchlm
