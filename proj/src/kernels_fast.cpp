#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "patchlm/kernels.hpp"

namespace patchlm::kernels::fast {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>>;
template <class T>
using MutMap = Eigen::Map<RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

template <class T>
ConstMap<T> as_eigen(MatrixView<const T> v) {
  return ConstMap<T>(v.data, Eigen::Index(v.rows), Eigen::Index(v.cols),
                     Eigen::OuterStride<>(Eigen::Index(v.stride)));
}

template <class T>
MutMap<T> as_eigen(MatrixView<T> v) {
  return MutMap<T>(v.data, Eigen::Index(v.rows), Eigen::Index(v.cols),
                   Eigen::OuterStride<>(Eigen::Index(v.stride)));
}

template <class T>
ConstMap<T> head_block(const T* base, std::size_t rows, std::size_t cols, std::size_t stride) {
  return ConstMap<T>(base, Eigen::Index(rows), Eigen::Index(cols),
                     Eigen::OuterStride<>(Eigen::Index(stride)));
}

template <class T>
MutMap<T> head_block(T* base, std::size_t rows, std::size_t cols, std::size_t stride) {
  return MutMap<T>(base, Eigen::Index(rows), Eigen::Index(cols),
                   Eigen::OuterStride<>(Eigen::Index(stride)));
}

}  // namespace

template <class T>
void gemm(MatrixView<const T> a, Trans ta, MatrixView<const T> b, Trans tb, MatrixView<T> c,
          T alpha, T beta) {
  const std::size_t m = ta == Trans::no ? a.rows : a.cols;
  const std::size_t k = ta == Trans::no ? a.cols : a.rows;
  const std::size_t n = tb == Trans::no ? b.cols : b.rows;
  const std::size_t kb = tb == Trans::no ? b.rows : b.cols;
  if (k != kb || c.rows != m || c.cols != n) throw ShapeError("gemm: inner dimensions differ");
  auto A = as_eigen(a);
  auto B = as_eigen(b);
  auto C = as_eigen(c);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (beta == T(0)) {
      C.noalias() = alpha * lhs * rhs;
    } else {
      if (beta != T(1)) C *= beta;
      C.noalias() += alpha * lhs * rhs;
    }
  };
  if (ta == Trans::no && tb == Trans::no) run(A, B);
  else if (ta == Trans::no) run(A, B.transpose());
  else if (tb == Trans::no) run(A.transpose(), B);
  else run(A.transpose(), B.transpose());
}

template <class T>
void rmsnorm(std::span<const T> x, std::span<const T> weight, T eps, std::span<T> out,
             std::span<T> inv_rms) {
  const std::size_t d = weight.size();
  const std::size_t rows = x.size() / d;
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = &x[r * d];
    T ms = 0;
    for (std::size_t j = 0; j < d; ++j) ms += xr[j] * xr[j];
    const T s = T(1) / std::sqrt(ms / T(d) + eps);
    inv_rms[r] = s;
    T* o = &out[r * d];
    for (std::size_t j = 0; j < d; ++j) o[j] = xr[j] * s * weight[j];
  }
}

template <class T>
void rmsnorm_backward(std::span<const T> x, std::span<const T> weight, std::span<const T> inv_rms,
                      std::span<const T> grad_out, std::span<T> grad_x, std::span<T> grad_weight) {
  const std::size_t d = weight.size();
  const std::size_t rows = x.size() / d;
  if (!grad_x.empty()) {
#pragma omp parallel for schedule(static)
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = &x[r * d];
      const T* g = &grad_out[r * d];
      const T s = inv_rms[r];
      T dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += g[j] * weight[j] * xr[j] * s;
      dot /= T(d);
      T* gx = &grad_x[r * d];
      for (std::size_t j = 0; j < d; ++j) gx[j] += s * (g[j] * weight[j] - xr[j] * s * dot);
    }
  }
  if (!grad_weight.empty()) {
    for (std::size_t r = 0; r < rows; ++r) {
      const T s = inv_rms[r];
      for (std::size_t j = 0; j < d; ++j) grad_weight[j] += grad_out[r * d + j] * x[r * d + j] * s;
    }
  }
}

template <class T>
void swiglu(std::span<const T> gate, std::span<const T> up, std::span<T> out) {
  const std::size_t n = gate.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const T a = gate[i];
    out[i] = a / (T(1) + std::exp(-a)) * up[i];
  }
}

template <class T>
void swiglu_backward(std::span<const T> gate, std::span<const T> up, std::span<const T> grad_out,
                     std::span<T> grad_gate, std::span<T> grad_up) {
  const std::size_t n = gate.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const T a = gate[i];
    const T sig = T(1) / (T(1) + std::exp(-a));
    if (!grad_gate.empty()) grad_gate[i] += grad_out[i] * up[i] * sig * (T(1) + a * (T(1) - sig));
    if (!grad_up.empty()) grad_up[i] += grad_out[i] * a * sig;
  }
}

template <class T>
void rope(std::span<const T> x, std::size_t seq, std::size_t heads, std::size_t head_dim,
          std::span<const std::size_t> positions, double base, std::span<T> out, int direction,
          bool accumulate) {
  const std::size_t half = head_dim / 2;
  const std::size_t width = heads * head_dim;
  std::vector<T> cos_table(seq * half), sin_table(seq * half);
  for (std::size_t s = 0; s < seq; ++s) {
    for (std::size_t i = 0; i < half; ++i) {
      const double angle =
          double(positions[s]) * std::pow(base, -2.0 * double(i) / double(head_dim));
      cos_table[s * half + i] = T(std::cos(angle));
      sin_table[s * half + i] = T(direction * std::sin(angle));
    }
  }
  const std::size_t rows = x.size() / width;
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    const T* cs = &cos_table[(r % seq) * half];
    const T* sn = &sin_table[(r % seq) * half];
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t o = r * width + h * head_dim;
      for (std::size_t i = 0; i < half; ++i) {
        const T x0 = x[o + 2 * i], x1 = x[o + 2 * i + 1];
        const T y0 = x0 * cs[i] - x1 * sn[i];
        const T y1 = x0 * sn[i] + x1 * cs[i];
        if (accumulate) {
          out[o + 2 * i] += y0;
          out[o + 2 * i + 1] += y1;
        } else {
          out[o + 2 * i] = y0;
          out[o + 2 * i + 1] = y1;
        }
      }
    }
  }
}

template <class T>
void causal_attention(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                      const AttentionDims& dims, std::span<T> probs, std::span<T> out) {
  const std::size_t S = dims.seq, dh = dims.head_dim, w = dims.width();
  const T scale = T(1) / std::sqrt(T(dh));
  const std::ptrdiff_t pairs = std::ptrdiff_t(dims.batch * dims.heads);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bh = 0; bh < pairs; ++bh) {
    const std::size_t b = std::size_t(bh) / dims.heads, h = std::size_t(bh) % dims.heads;
    const std::size_t off = b * S * w + h * dh;
    auto Q = head_block(q.data() + off, S, dh, w);
    auto K = head_block(k.data() + off, S, dh, w);
    auto V = head_block(v.data() + off, S, dh, w);
    auto P = head_block(probs.data() + std::size_t(bh) * S * S, S, S, S);
    P.noalias() = scale * Q * K.transpose();
    for (std::size_t i = 0; i < S; ++i) {
      T* row = &P(Eigen::Index(i), 0);
      T mx = row[0];
      for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
      T z = 0;
      for (std::size_t j = 0; j <= i; ++j) {
        row[j] = std::exp(row[j] - mx);
        z += row[j];
      }
      const T inv = T(1) / z;
      for (std::size_t j = 0; j <= i; ++j) row[j] *= inv;
      for (std::size_t j = i + 1; j < S; ++j) row[j] = T(0);
    }
    auto O = head_block(out.data() + off, S, dh, w);
    O.noalias() = P.template triangularView<Eigen::Lower>() * V;
  }
}

template <class T>
void causal_attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                               std::span<const T> probs, std::span<const T> grad_out,
                               const AttentionDims& dims, std::span<T> grad_q,
                               std::span<T> grad_k, std::span<T> grad_v) {
  const std::size_t S = dims.seq, dh = dims.head_dim, w = dims.width();
  const T scale = T(1) / std::sqrt(T(dh));
  const std::ptrdiff_t pairs = std::ptrdiff_t(dims.batch * dims.heads);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bh = 0; bh < pairs; ++bh) {
    const std::size_t b = std::size_t(bh) / dims.heads, h = std::size_t(bh) % dims.heads;
    const std::size_t off = b * S * w + h * dh;
    auto Q = head_block(q.data() + off, S, dh, w);
    auto K = head_block(k.data() + off, S, dh, w);
    auto V = head_block(v.data() + off, S, dh, w);
    auto dO = head_block(grad_out.data() + off, S, dh, w);
    auto P = head_block(probs.data() + std::size_t(bh) * S * S, S, S, S);
    RowMat<T> dS = dO * V.transpose();
    if (!grad_v.empty()) {
      auto dV = head_block(grad_v.data() + off, S, dh, w);
      dV.noalias() += P.transpose().template triangularView<Eigen::Upper>() * dO;
    }
    for (std::size_t i = 0; i < S; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j <= i; ++j) dot += P(Eigen::Index(i), Eigen::Index(j)) * dS(Eigen::Index(i), Eigen::Index(j));
      for (std::size_t j = 0; j <= i; ++j) {
        dS(Eigen::Index(i), Eigen::Index(j)) =
            P(Eigen::Index(i), Eigen::Index(j)) * (dS(Eigen::Index(i), Eigen::Index(j)) - dot);
      }
      for (std::size_t j = i + 1; j < S; ++j) dS(Eigen::Index(i), Eigen::Index(j)) = T(0);
    }
    dS *= scale;
    if (!grad_q.empty()) {
      auto dQ = head_block(grad_q.data() + off, S, dh, w);
      dQ.noalias() += dS.template triangularView<Eigen::Lower>() * K;
    }
    if (!grad_k.empty()) {
      auto dK = head_block(grad_k.data() + off, S, dh, w);
      dK.noalias() += dS.transpose().template triangularView<Eigen::Upper>() * Q;
    }
  }
}

template <class T>
double cross_entropy_sum(MatrixView<const T> logits, std::span<const std::size_t> rows,
                         std::span<const TokenId> targets, std::size_t width, std::span<T> lse) {
  const std::size_t n = rows.size();
  const std::size_t V = logits.cols;
  std::vector<double> per_row(n);
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = &logits(rows[r], 0);
    double mx = row[0];
    for (std::size_t j = 1; j < V; ++j) mx = std::max<double>(mx, row[j]);
    double z = 0;
    for (std::size_t j = 0; j < V; ++j) z += std::exp(double(row[j]) - mx);
    const double l = mx + std::log(z);
    lse[r] = T(l);
    double acc = 0;
    for (std::size_t t = 0; t < width; ++t) acc += l - double(row[targets[r * width + t]]);
    per_row[r] = acc;
  }
  double total = 0;
  for (double v : per_row) total += v;
  return total;
}

template <class T>
void cross_entropy_backward(MatrixView<const T> logits, std::span<const std::size_t> rows,
                            std::span<const TokenId> targets, std::size_t width,
                            std::span<const T> lse, T scale, MatrixView<T> grad_logits) {
  const std::size_t n = rows.size();
  const std::size_t V = logits.cols;
  const T w = T(width);
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = &logits(rows[r], 0);
    T* g = &grad_logits(rows[r], 0);
    for (std::size_t j = 0; j < V; ++j) {
      const T p = T(std::exp(double(row[j]) - double(lse[r])));
      g[j] += scale * (w * p);
    }
    for (std::size_t t = 0; t < width; ++t) g[targets[r * width + t]] -= scale;
  }
}

#define PATCHLM_INSTANTIATE(T)                                                                 \
  template void gemm<T>(MatrixView<const T>, Trans, MatrixView<const T>, Trans, MatrixView<T>,   \
                        T, T);                                                                 \
  template void rmsnorm<T>(std::span<const T>, std::span<const T>, T, std::span<T>,            \
                           std::span<T>);                                                      \
  template void rmsnorm_backward<T>(std::span<const T>, std::span<const T>, std::span<const T>, \
                                    std::span<const T>, std::span<T>, std::span<T>);           \
  template void swiglu<T>(std::span<const T>, std::span<const T>, std::span<T>);               \
  template void swiglu_backward<T>(std::span<const T>, std::span<const T>, std::span<const T>, \
                                   std::span<T>, std::span<T>);                                \
  template void rope<T>(std::span<const T>, std::size_t, std::size_t, std::size_t,             \
                        std::span<const std::size_t>, double, std::span<T>, int, bool);        \
  template void causal_attention<T>(std::span<const T>, std::span<const T>,                    \
                                    std::span<const T>, const AttentionDims&, std::span<T>,    \
                                    std::span<T>);                                             \
  template void causal_attention_backward<T>(                                                  \
      std::span<const T>, std::span<const T>, std::span<const T>, std::span<const T>,          \
      std::span<const T>, const AttentionDims&, std::span<T>, std::span<T>, std::span<T>);     \
  template double cross_entropy_sum<T>(MatrixView<const T>, std::span<const std::size_t>,      \
                                       std::span<const TokenId>, std::size_t, std::span<T>);   \
  template void cross_entropy_backward<T>(MatrixView<const T>, std::span<const std::size_t>,   \
                                          std::span<const TokenId>, std::size_t,               \
                                          std::span<const T>, T, MatrixView<T>);

PATCHLM_INSTANTIATE(float)
PATCHLM_INSTANTIATE(double)
#undef PATCHLM_INSTANTIATE

}  // namespace patchlm::kernels::fast
