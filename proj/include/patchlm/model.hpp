#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "patchlm/autograd.hpp"
#include "patchlm/tensor.hpp"

namespace patchlm {

struct ModelConfig {
  std::size_t vocab_size = 256;
  std::size_t hidden_size = 128;
  std::size_t intermediate_size = 344;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t max_context = 1024;
  double rope_base = 10000.0;
  double rms_eps = 1e-5;

  std::size_t head_dim() const { return n_heads == 0 ? 0 : hidden_size / n_heads; }
  // Throws ConfigError when the architecture cannot be built.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// V*d + L*(4d^2 + 3*d*d_ff + 2d) + d + d*V, embeddings and head untied.
std::uint64_t param_count(const ModelConfig& config);

// Human-readable list of fields that differ, empty when equal.
std::vector<std::string> config_diff(const ModelConfig& expected, const ModelConfig& actual);

template <class T>
using NamedTensor = std::pair<std::string, TensorPtr<T>>;

template <class T>
struct LayerParams {
  TensorPtr<T> attn_norm, wq, wk, wv, wo;
  TensorPtr<T> ffn_norm, w1, w3, w2;
};

template <class T>
struct TransformerParams {
  ModelConfig config;
  TensorPtr<T> embedding;  // [V, d]
  std::vector<LayerParams<T>> layers;
  TensorPtr<T> final_norm;  // [d]
  TensorPtr<T> head;        // [d, V]

  // Stable order; names match the checkpoint format.
  std::vector<NamedTensor<T>> named() const;
  std::vector<TensorPtr<T>> tensors() const;
  std::uint64_t allocated_elements() const;
  void zero_grad() const;
  // Deep copy, gradients dropped.
  TransformerParams clone() const;
};

// Normal(0, 0.02) weights, unit RMSNorm weights; reproducible from seed.
template <class T>
TransformerParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

// Builds an empty parameter skeleton with the given tensors (shapes checked).
template <class T>
TransformerParams<T> params_from_named(const ModelConfig& config,
                                       const std::vector<NamedTensor<T>>& tensors);

// Which FFN signal a layer observer receives.
enum class ActivationSite { ffn_output, post_residual };

// Called once per layer during forward with that layer's [rows, d] signal.
template <class T>
using LayerObserver = std::function<void(std::size_t layer, const Tensor<T>& signal)>;

// tokens: batch * seq ids -> [batch, seq, d]
template <class T>
TensorPtr<T> embed(Tape<T>& tape, const TransformerParams<T>& params,
                   std::span<const TokenId> tokens, std::size_t batch, std::size_t seq);

// Backbone over [batch, seq, d] input embeddings; returns the final-normalized
// hidden state [batch, seq, d].
template <class T>
TensorPtr<T> forward_hidden(Tape<T>& tape, const TransformerParams<T>& params,
                            const TensorPtr<T>& input_embeddings,
                            std::span<const std::size_t> positions,
                            const LayerObserver<T>& observer = {},
                            ActivationSite site = ActivationSite::ffn_output);

// hidden [..., d] -> logits [..., V]
template <class T>
TensorPtr<T> lm_head(Tape<T>& tape, const TransformerParams<T>& params, const TensorPtr<T>& hidden);

// forward_hidden followed by lm_head: [batch, seq, V].
template <class T>
TensorPtr<T> forward(Tape<T>& tape, const TransformerParams<T>& params,
                     const TensorPtr<T>& input_embeddings, std::span<const std::size_t> positions);

// 0, 1, ..., n-1
std::vector<std::size_t> iota_positions(std::size_t n);

}  // namespace patchlm
