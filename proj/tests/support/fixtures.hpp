#pragma once

#include <random>
#include <vector>

#include "patchlm/model.hpp"
#include "patchlm/tensor.hpp"

namespace fixtures {

inline patchlm::ModelConfig tiny_config(std::size_t layers = 1, std::size_t d = 8, std::size_t vocab = 11,
                                        std::size_t heads = 2, std::size_t ff = 12) {
  patchlm::ModelConfig c;
  c.vocab_size = vocab;
  c.hidden_size = d;
  c.intermediate_size = ff;
  c.n_layers = layers;
  c.n_heads = heads;
  c.max_context = 64;
  return c;
}

template <class T>
patchlm::TensorPtr<T> random_tensor(patchlm::Shape shape, std::uint64_t seed, double scale = 1.0,
                                    bool requires_grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  std::vector<T> data(patchlm::numel(shape));
  for (auto& v : data) v = T(d(rng));
  return patchlm::make_tensor<T>(std::move(shape), std::move(data), requires_grad);
}

inline std::vector<patchlm::TokenId> random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<patchlm::TokenId> t(n);
  for (auto& v : t) v = patchlm::TokenId(rng() % vocab);
  return t;
}

// Scales every weight so a random init produces non-trivial activations in tiny models.
template <class T>
void scale_weights(patchlm::TransformerParams<T>& p, double factor) {
  for (const auto& [name, t] : p.named()) {
    if (name.find("norm") != std::string::npos) continue;
    for (auto& v : t->data()) v = T(double(v) * factor);
  }
}

}  // namespace fixtures
