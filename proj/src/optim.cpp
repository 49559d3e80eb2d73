#include "patchlm/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace patchlm {

double LrSchedule::lr_at(std::uint64_t step) const {
  const double floor_lr = floor_fraction * peak_lr;
  if (step < warmup_steps) return peak_lr * double(step) / double(warmup_steps);
  if (step >= total_steps) return total_steps <= warmup_steps ? peak_lr : floor_lr;
  const double progress = double(step - warmup_steps) / double(total_steps - warmup_steps);
  return floor_lr + (peak_lr - floor_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <class T>
void AdamW<T>::attach(std::span<const TensorPtr<T>> params) {
  step_count_ = 0;
  m_.clear();
  v_.clear();
  for (const auto& p : params) {
    m_.emplace_back(p->size(), T(0));
    v_.emplace_back(p->size(), T(0));
  }
}

template <class T>
void AdamW<T>::step(std::span<const TensorPtr<T>> params, double lr) {
  if (lr < 0) throw ConfigError("learning rate must be non-negative");
  if (m_.empty()) attach(params);
  if (m_.size() != params.size()) throw ShapeError("AdamW: parameter list changed size");
  ++step_count_;
  const T b1 = T(hyper_.beta1), b2 = T(hyper_.beta2);
  const T bias1 = T(1.0 - std::pow(hyper_.beta1, double(step_count_)));
  const T bias2 = T(1.0 - std::pow(hyper_.beta2, double(step_count_)));
  const T lr_t = T(lr), eps = T(hyper_.eps), decay = T(lr * hyper_.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    if (m_[i].size() != p.size()) throw ShapeError("AdamW: moment shape does not match parameter");
    auto w = p.data();
    std::span<const T> g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    const std::size_t n = w.size();
#pragma omp parallel for schedule(static)
    for (std::size_t j = 0; j < n; ++j) {
      const T gj = g.empty() ? T(0) : g[j];
      m[j] = b1 * m[j] + (T(1) - b1) * gj;
      v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
      const T m_hat = m[j] / bias1;
      const T v_hat = v[j] / bias2;
      w[j] = w[j] - lr_t * m_hat / (std::sqrt(v_hat) + eps) - decay * w[j];
    }
  }
}

template <class T>
void AdamW<T>::reset() {
  step_count_ = 0;
  for (auto& m : m_) std::fill(m.begin(), m.end(), T(0));
  for (auto& v : v_) std::fill(v.begin(), v.end(), T(0));
}

template <class T>
double global_grad_norm(std::span<const TensorPtr<T>> params) {
  double sq = 0;
  for (const auto& p : params) {
    for (T g : p->grad()) sq += double(g) * double(g);
  }
  return std::sqrt(sq);
}

template <class T>
double clip_grad_global(std::span<const TensorPtr<T>> params, double max_norm) {
  if (!(max_norm > 0)) throw ConfigError("max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const T factor = T(max_norm / norm);
    for (const auto& p : params) {
      for (T& g : p->grad()) g *= factor;
    }
  }
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_global<float>(std::span<const TensorPtr<float>>, double);
template double clip_grad_global<double>(std::span<const TensorPtr<double>>, double);
template double global_grad_norm<float>(std::span<const TensorPtr<float>>);
template double global_grad_norm<double>(std::span<const TensorPtr<double>>);

}  // namespace patchlm
