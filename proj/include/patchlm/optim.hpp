#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "patchlm/tensor.hpp"

namespace patchlm {

// Linear warmup from 0 to peak, then cosine decay to floor_fraction * peak.
struct LrSchedule {
  double peak_lr = 3e-4;
  std::uint64_t warmup_steps = 2000;
  std::uint64_t total_steps = 0;
  double floor_fraction = 0.1;

  // Steps past total_steps clamp to the floor value.
  double lr_at(std::uint64_t step) const;
};

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

// AdamW with decoupled weight decay. Moments are attached to a parameter
// list (lazily on the first step if attach() was not called) and must keep
// matching its shapes.
template <class T>
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWHyper hyper) : hyper_(hyper) {}

  const AdamWHyper& hyper() const { return hyper_; }
  std::uint64_t step_count() const { return step_count_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

  // Allocates zeroed moments for these parameters and clears the step count.
  void attach(std::span<const TensorPtr<T>> params);
  // Applies one update using each parameter's grad buffer (missing = zero).
  void step(std::span<const TensorPtr<T>> params, double lr);
  // Zeroes the moments and the step count.
  void reset();

 private:
  AdamWHyper hyper_;
  std::uint64_t step_count_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the norm measured before clipping.
template <class T>
double clip_grad_global(std::span<const TensorPtr<T>> params, double max_norm);

template <class T>
double global_grad_norm(std::span<const TensorPtr<T>> params);

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace patchlm
