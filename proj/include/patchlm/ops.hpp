#pragma once

// Differentiable operations. Each op computes its forward value with the
// fast kernels and, when any input requires a gradient, records a backward
// rule on the tape that accumulates into the inputs' grad buffers.

#include <span>
#include <vector>

#include "patchlm/autograd.hpp"
#include "patchlm/kernels.hpp"
#include "patchlm/tensor.hpp"

namespace patchlm::ops {

// [..., k] x [k, n] -> [..., n]. Leading axes of `a` are treated as rows.
template <class T>
TensorPtr<T> matmul(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& b);

template <class T>
TensorPtr<T> add(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& b);

// Elementwise product.
template <class T>
TensorPtr<T> mul(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& b);

template <class T>
TensorPtr<T> scale(Tape<T>& tape, const TensorPtr<T>& a, T factor);

// Sum of all elements, shape [1].
template <class T>
TensorPtr<T> sum(Tape<T>& tape, const TensorPtr<T>& a);

template <class T>
TensorPtr<T> reshape(Tape<T>& tape, const TensorPtr<T>& a, Shape shape);

template <class T>
TensorPtr<T> rmsnorm(Tape<T>& tape, const TensorPtr<T>& x, const TensorPtr<T>& weight, T eps);

// silu(gate) * up
template <class T>
TensorPtr<T> swiglu(Tape<T>& tape, const TensorPtr<T>& gate, const TensorPtr<T>& up);

// (silu(x w1) * (x w3)) w2
template <class T>
TensorPtr<T> swiglu_ffn(Tape<T>& tape, const TensorPtr<T>& x, const TensorPtr<T>& w1,
                        const TensorPtr<T>& w3, const TensorPtr<T>& w2);

// x is [..., seq, heads * head_dim]; positions has one entry per sequence slot.
template <class T>
TensorPtr<T> rope(Tape<T>& tape, const TensorPtr<T>& x, std::size_t heads,
                  std::span<const std::size_t> positions, double base);

// q, k, v are [batch, seq, heads * head_dim].
template <class T>
TensorPtr<T> causal_attention(Tape<T>& tape, const TensorPtr<T>& q, const TensorPtr<T>& k,
                              const TensorPtr<T>& v, std::size_t heads);

// Row lookup into table[V, d]; output shape is lead + [d]. Gradients scatter-add.
template <class T>
TensorPtr<T> embedding(Tape<T>& tape, const TensorPtr<T>& table, std::span<const TokenId> tokens,
                       Shape lead);

// out row o = mean of x rows sources[o * group .. o * group + group).
template <class T>
TensorPtr<T> group_mean(Tape<T>& tape, const TensorPtr<T>& x, std::vector<std::size_t> sources,
                        std::size_t group, Shape out_shape);

// Mean over the selected rows and their `width` targets of -log softmax(row)[target].
// Row indices must be distinct.
template <class T>
TensorPtr<T> cross_entropy(Tape<T>& tape, const TensorPtr<T>& logits,
                           std::vector<std::size_t> rows, std::vector<TokenId> targets,
                           std::size_t width);

// Plain [n, V] x targets[n] cross-entropy.
template <class T>
TensorPtr<T> cross_entropy(Tape<T>& tape, const TensorPtr<T>& logits,
                           std::span<const TokenId> targets);

}  // namespace patchlm::ops
