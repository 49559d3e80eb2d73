#include <cmath>
#include <limits>
#include <vector>

#include "patchlm/kernels.hpp"

namespace patchlm::kernels::reference {

template <class T>
void gemm(MatrixView<const T> a, Trans ta, MatrixView<const T> b, Trans tb, MatrixView<T> c,
          T alpha, T beta) {
  const std::size_t m = ta == Trans::no ? a.rows : a.cols;
  const std::size_t k = ta == Trans::no ? a.cols : a.rows;
  const std::size_t n = tb == Trans::no ? b.cols : b.rows;
  const std::size_t kb = tb == Trans::no ? b.rows : b.cols;
  if (k != kb || c.rows != m || c.cols != n) throw ShapeError("gemm: inner dimensions differ");
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t t = 0; t < k; ++t) {
        const T av = ta == Trans::no ? a(i, t) : a(t, i);
        const T bv = tb == Trans::no ? b(t, j) : b(j, t);
        acc += av * bv;
      }
      c(i, j) = alpha * acc + (beta == T(0) ? T(0) : beta * c(i, j));
    }
  }
}

template <class T>
void rmsnorm(std::span<const T> x, std::span<const T> weight, T eps, std::span<T> out) {
  const std::size_t d = weight.size();
  for (std::size_t r = 0; r < x.size() / d; ++r) {
    T ms = 0;
    for (std::size_t j = 0; j < d; ++j) ms += x[r * d + j] * x[r * d + j];
    const T scale = T(1) / std::sqrt(ms / T(d) + eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x[r * d + j] * scale * weight[j];
  }
}

template <class T>
void swiglu(std::span<const T> gate, std::span<const T> up, std::span<T> out) {
  for (std::size_t i = 0; i < gate.size(); ++i) {
    const T a = gate[i];
    out[i] = a / (T(1) + std::exp(-a)) * up[i];
  }
}

template <class T>
void rope(std::span<const T> x, std::size_t seq, std::size_t heads, std::size_t head_dim,
          std::span<const std::size_t> positions, double base, std::span<T> out) {
  const std::size_t width = heads * head_dim;
  for (std::size_t r = 0; r < x.size() / width; ++r) {
    const double pos = static_cast<double>(positions[r % seq]);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < head_dim / 2; ++i) {
        const double angle = pos * std::pow(base, -2.0 * double(i) / double(head_dim));
        const std::size_t o = r * width + h * head_dim + 2 * i;
        const double x0 = x[o], x1 = x[o + 1];
        out[o] = T(x0 * std::cos(angle) - x1 * std::sin(angle));
        out[o + 1] = T(x0 * std::sin(angle) + x1 * std::cos(angle));
      }
    }
  }
}

template <class T>
void causal_attention(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                      const AttentionDims& dims, std::span<T> out) {
  const std::size_t w = dims.width();
  const T scale = T(1) / std::sqrt(T(dims.head_dim));
  std::vector<T> p(dims.seq);
  for (std::size_t b = 0; b < dims.batch; ++b) {
    for (std::size_t h = 0; h < dims.heads; ++h) {
      for (std::size_t i = 0; i < dims.seq; ++i) {
        const T* qi = &q[(b * dims.seq + i) * w + h * dims.head_dim];
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const T* kj = &k[(b * dims.seq + j) * w + h * dims.head_dim];
          T s = 0;
          for (std::size_t t = 0; t < dims.head_dim; ++t) s += qi[t] * kj[t];
          p[j] = s * scale;
          mx = std::max(mx, p[j]);
        }
        T z = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        T* oi = &out[(b * dims.seq + i) * w + h * dims.head_dim];
        for (std::size_t t = 0; t < dims.head_dim; ++t) oi[t] = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          const T* vj = &v[(b * dims.seq + j) * w + h * dims.head_dim];
          for (std::size_t t = 0; t < dims.head_dim; ++t) oi[t] += p[j] / z * vj[t];
        }
      }
    }
  }
}

template <class T>
double cross_entropy_sum(MatrixView<const T> logits, std::span<const std::size_t> rows,
                         std::span<const TokenId> targets, std::size_t width) {
  double total = 0;
  for (std::size_t n = 0; n < rows.size(); ++n) {
    const T* row = &logits(rows[n], 0);
    double mx = row[0];
    for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max<double>(mx, row[j]);
    double z = 0;
    for (std::size_t j = 0; j < logits.cols; ++j) z += std::exp(row[j] - mx);
    for (std::size_t t = 0; t < width; ++t) {
      total -= double(row[targets[n * width + t]]) - mx - std::log(z);
    }
  }
  return total;
}

#define PATCHLM_INSTANTIATE(T)                                                               \
  template void gemm<T>(MatrixView<const T>, Trans, MatrixView<const T>, Trans, MatrixView<T>, \
                        T, T);                                                               \
  template void rmsnorm<T>(std::span<const T>, std::span<const T>, T, std::span<T>);         \
  template void swiglu<T>(std::span<const T>, std::span<const T>, std::span<T>);             \
  template void rope<T>(std::span<const T>, std::size_t, std::size_t, std::size_t,           \
                        std::span<const std::size_t>, double, std::span<T>);                 \
  template void causal_attention<T>(std::span<const T>, std::span<const T>,                  \
                                    std::span<const T>, const AttentionDims&, std::span<T>); \
  template double cross_entropy_sum<T>(MatrixView<const T>, std::span<const std::size_t>,    \
                                       std::span<const TokenId>, std::size_t);

PATCHLM_INSTANTIATE(float)
PATCHLM_INSTANTIATE(double)
#undef PATCHLM_INSTANTIATE

}  // namespace patchlm::kernels::reference
