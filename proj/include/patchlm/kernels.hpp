#pragma once

// Numerical kernels behind the autograd ops.
//
// `fast` is what training runs: Eigen-backed GEMM and OpenMP loops over
// independent rows. `reference` holds plain serial loops for the same
// forward math; tests compare the two and the benchmark times them.
// Every kernel here is deterministic for a fixed thread count, and all
// cross-row reductions run serially so results do not depend on it.

#include <cstddef>
#include <span>

#include "patchlm/tensor.hpp"

namespace patchlm::kernels {

template <class T>
struct MatrixView {
  T* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t stride = 0;  // elements between consecutive rows

  T& operator()(std::size_t r, std::size_t c) const { return data[r * stride + c]; }
};

template <class T>
MatrixView<T> view(std::span<T> buf, std::size_t rows, std::size_t cols) {
  return {buf.data(), rows, cols, cols};
}

enum class Trans { no, yes };

// Causal multi-head attention layout: activations are [batch * seq, heads * head_dim].
struct AttentionDims {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::size_t heads = 0;
  std::size_t head_dim = 0;
  std::size_t width() const { return heads * head_dim; }
};

namespace reference {

// C = alpha * op(A) * op(B) + beta * C
template <class T>
void gemm(MatrixView<const T> a, Trans ta, MatrixView<const T> b, Trans tb, MatrixView<T> c,
          T alpha, T beta);

template <class T>
void rmsnorm(std::span<const T> x, std::span<const T> weight, T eps, std::span<T> out);

template <class T>
void swiglu(std::span<const T> gate, std::span<const T> up, std::span<T> out);

template <class T>
void rope(std::span<const T> x, std::size_t seq, std::size_t heads, std::size_t head_dim,
          std::span<const std::size_t> positions, double base, std::span<T> out);

template <class T>
void causal_attention(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                      const AttentionDims& dims, std::span<T> out);

// Sum over the selected rows of -log softmax(row)[target], `width` targets per row.
template <class T>
double cross_entropy_sum(MatrixView<const T> logits, std::span<const std::size_t> rows,
                         std::span<const TokenId> targets, std::size_t width);

}  // namespace reference

namespace fast {

template <class T>
void gemm(MatrixView<const T> a, Trans ta, MatrixView<const T> b, Trans tb, MatrixView<T> c,
          T alpha, T beta);

// inv_rms receives 1/sqrt(mean(x^2)+eps) per row for the backward pass.
template <class T>
void rmsnorm(std::span<const T> x, std::span<const T> weight, T eps, std::span<T> out,
             std::span<T> inv_rms);

// Accumulates into grad_x and grad_weight.
template <class T>
void rmsnorm_backward(std::span<const T> x, std::span<const T> weight, std::span<const T> inv_rms,
                      std::span<const T> grad_out, std::span<T> grad_x, std::span<T> grad_weight);

template <class T>
void swiglu(std::span<const T> gate, std::span<const T> up, std::span<T> out);

template <class T>
void swiglu_backward(std::span<const T> gate, std::span<const T> up, std::span<const T> grad_out,
                     std::span<T> grad_gate, std::span<T> grad_up);

// direction = +1 rotates forward; -1 applies the inverse (transpose) rotation.
// With accumulate the result is added to out instead of overwriting it.
template <class T>
void rope(std::span<const T> x, std::size_t seq, std::size_t heads, std::size_t head_dim,
          std::span<const std::size_t> positions, double base, std::span<T> out, int direction,
          bool accumulate);

// probs receives the masked softmax weights, shape [batch, heads, seq, seq].
template <class T>
void causal_attention(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                      const AttentionDims& dims, std::span<T> probs, std::span<T> out);

template <class T>
void causal_attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                               std::span<const T> probs, std::span<const T> grad_out,
                               const AttentionDims& dims, std::span<T> grad_q,
                               std::span<T> grad_k, std::span<T> grad_v);

// lse receives the log-sum-exp of each selected row.
template <class T>
double cross_entropy_sum(MatrixView<const T> logits, std::span<const std::size_t> rows,
                         std::span<const TokenId> targets, std::size_t width, std::span<T> lse);

// grad_logits[row] += scale * (width * softmax(row) - target_counts(row))
template <class T>
void cross_entropy_backward(MatrixView<const T> logits, std::span<const std::size_t> rows,
                            std::span<const TokenId> targets, std::size_t width,
                            std::span<const T> lse, T scale, MatrixView<T> grad_logits);

}  // namespace fast

}  // namespace patchlm::kernels
