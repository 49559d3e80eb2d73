#include "patchlm/ops.hpp"

#include <cmath>

namespace patchlm::ops {

namespace {

using kernels::MatrixView;
using kernels::Trans;

template <class T>
MatrixView<const T> cview(std::span<const T> buf, std::size_t rows, std::size_t cols) {
  return {buf.data(), rows, cols, cols};
}

template <class T>
MatrixView<T> mview(std::span<T> buf, std::size_t rows, std::size_t cols) {
  return {buf.data(), rows, cols, cols};
}

template <class T>
std::span<T> grad_if(const TensorPtr<T>& t) {
  return t->requires_grad() ? t->ensure_grad() : std::span<T>{};
}

template <class T>
void same_shape(const TensorPtr<T>& a, const TensorPtr<T>& b, const char* op) {
  if (a->shape() != b->shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a->shape()) + " and " +
                     shape_str(b->shape()) + " differ");
  }
}

}  // namespace

template <class T>
TensorPtr<T> matmul(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (b->rank() != 2 || a->cols() != b->dim(0)) {
    throw ShapeError("matmul: cannot multiply " + shape_str(a->shape()) + " by " +
                     shape_str(b->shape()));
  }
  const std::size_t m = a->rows(), k = a->cols(), n = b->dim(1);
  Shape shape = a->shape();
  shape.back() = n;
  auto out = make_tensor<T>(shape);
  std::span<const T> ad = a->data(), bd = b->data();
  kernels::fast::gemm<T>(cview(ad, m, k), Trans::no, cview(bd, k, n), Trans::no,
                         mview(out->data(), m, n), T(1), T(0));
  if (tape.needs_grad({&a, &b})) {
    tape.record({a, b}, out, [a, b, out, m, k, n] {
      std::span<const T> g = out->grad();
      if (a->requires_grad()) {
        std::span<const T> bd = b->data();
        kernels::fast::gemm<T>(cview(g, m, n), Trans::no, cview(bd, k, n), Trans::yes,
                               mview(a->ensure_grad(), m, k), T(1), T(1));
      }
      if (b->requires_grad()) {
        std::span<const T> ad = a->data();
        kernels::fast::gemm<T>(cview(ad, m, k), Trans::yes, cview(g, m, n), Trans::no,
                               mview(b->ensure_grad(), k, n), T(1), T(1));
      }
    });
  }
  return out;
}

template <class T>
TensorPtr<T> add(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  same_shape(a, b, "add");
  auto out = make_tensor<T>(a->shape());
  auto o = out->data();
  auto ad = a->data(), bd = b->data();
  const std::size_t n = o.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) o[i] = ad[i] + bd[i];
  if (tape.needs_grad({&a, &b})) {
    tape.record({a, b}, out, [a, b, out] {
      auto g = out->grad();
      for (const auto& in : {a, b}) {
        if (!in->requires_grad()) continue;
        auto gi = in->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      }
    });
  }
  return out;
}

template <class T>
TensorPtr<T> mul(Tape<T>& tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  same_shape(a, b, "mul");
  auto out = make_tensor<T>(a->shape());
  auto o = out->data();
  auto ad = a->data(), bd = b->data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[i] * bd[i];
  if (tape.needs_grad({&a, &b})) {
    tape.record({a, b}, out, [a, b, out] {
      auto g = out->grad();
      auto ad = a->data(), bd = b->data();
      if (a->requires_grad()) {
        auto ga = a->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
      }
      if (b->requires_grad()) {
        auto gb = b->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
      }
    });
  }
  return out;
}

template <class T>
TensorPtr<T> scale(Tape<T>& tape, const TensorPtr<T>& a, T factor) {
  auto out = make_tensor<T>(a->shape());
  auto o = out->data();
  auto ad = a->data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[i] * factor;
  if (tape.needs_grad({&a})) {
    tape.record({a}, out, [a, out, factor] {
      auto g = out->grad();
      auto ga = a->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

template <class T>
TensorPtr<T> sum(Tape<T>& tape, const TensorPtr<T>& a) {
  double acc = 0;
  for (T v : a->data()) acc += v;
  auto out = make_tensor<T>({1}, std::vector<T>{T(acc)});
  if (tape.needs_grad({&a})) {
    tape.record({a}, out, [a, out] {
      const T g = out->grad()[0];
      for (auto& v : a->ensure_grad()) v += g;
    });
  }
  return out;
}

template <class T>
TensorPtr<T> reshape(Tape<T>& tape, const TensorPtr<T>& a, Shape shape) {
  auto d = a->data();
  auto out = make_tensor<T>(std::move(shape), std::vector<T>(d.begin(), d.end()));
  if (tape.needs_grad({&a})) {
    tape.record({a}, out, [a, out] {
      auto g = out->grad();
      auto ga = a->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

template <class T>
TensorPtr<T> rmsnorm(Tape<T>& tape, const TensorPtr<T>& x, const TensorPtr<T>& weight, T eps) {
  if (weight->rank() != 1 || x->cols() != weight->dim(0)) {
    throw ShapeError("rmsnorm: last axis of " + shape_str(x->shape()) + " does not match weight " +
                     shape_str(weight->shape()));
  }
  if (!(eps > T(0))) throw ConfigError("rmsnorm: eps must be positive");
  auto out = make_tensor<T>(x->shape());
  auto inv_rms = std::make_shared<std::vector<T>>(x->rows());
  kernels::fast::rmsnorm<T>(x->data(), weight->data(), eps, out->data(), *inv_rms);
  if (tape.needs_grad({&x, &weight})) {
    tape.record({x, weight}, out, [x, weight, out, inv_rms] {
      kernels::fast::rmsnorm_backward<T>(x->data(), weight->data(), *inv_rms, out->grad(),
                                         grad_if(x), grad_if(weight));
    });
  }
  return out;
}

template <class T>
TensorPtr<T> swiglu(Tape<T>& tape, const TensorPtr<T>& gate, const TensorPtr<T>& up) {
  same_shape(gate, up, "swiglu");
  auto out = make_tensor<T>(gate->shape());
  kernels::fast::swiglu<T>(gate->data(), up->data(), out->data());
  if (tape.needs_grad({&gate, &up})) {
    tape.record({gate, up}, out, [gate, up, out] {
      kernels::fast::swiglu_backward<T>(gate->data(), up->data(), out->grad(), grad_if(gate),
                                        grad_if(up));
    });
  }
  return out;
}

template <class T>
TensorPtr<T> swiglu_ffn(Tape<T>& tape, const TensorPtr<T>& x, const TensorPtr<T>& w1,
                        const TensorPtr<T>& w3, const TensorPtr<T>& w2) {
  if (w1->shape() != w3->shape() || w2->rank() != 2 || w2->dim(0) != w1->dim(1) ||
      w2->dim(1) != x->cols()) {
    throw ShapeError("swiglu_ffn: inconsistent weight shapes");
  }
  auto gate = matmul(tape, x, w1);
  auto up = matmul(tape, x, w3);
  return matmul(tape, swiglu(tape, gate, up), w2);
}

template <class T>
TensorPtr<T> rope(Tape<T>& tape, const TensorPtr<T>& x, std::size_t heads,
                  std::span<const std::size_t> positions, double base) {
  const std::size_t width = x->cols();
  if (heads == 0 || width % heads != 0) throw ShapeError("rope: width not divisible by heads");
  const std::size_t head_dim = width / heads;
  if (head_dim % 2 != 0) throw ConfigError("rope: head dimension must be even");
  const std::size_t seq = positions.size();
  if (seq == 0 || x->rows() % seq != 0) {
    throw ShapeError("rope: rows of " + shape_str(x->shape()) + " are not a multiple of " +
                     std::to_string(seq) + " positions");
  }
  auto out = make_tensor<T>(x->shape());
  kernels::fast::rope<T>(x->data(), seq, heads, head_dim, positions, base, out->data(), +1, false);
  if (tape.needs_grad({&x})) {
    std::vector<std::size_t> pos(positions.begin(), positions.end());
    tape.record({x}, out, [x, out, heads, head_dim, pos = std::move(pos), base] {
      kernels::fast::rope<T>(out->grad(), pos.size(), heads, head_dim, pos, base,
                             x->ensure_grad(), -1, true);
    });
  }
  return out;
}

template <class T>
TensorPtr<T> causal_attention(Tape<T>& tape, const TensorPtr<T>& q, const TensorPtr<T>& k,
                              const TensorPtr<T>& v, std::size_t heads) {
  same_shape(q, k, "attention");
  same_shape(q, v, "attention");
  if (q->rank() != 3) throw ShapeError("attention expects [batch, seq, width] inputs");
  kernels::AttentionDims dims{q->dim(0), q->dim(1), heads, q->dim(2) / heads};
  if (dims.head_dim * heads != q->dim(2)) throw ShapeError("attention: width not divisible by heads");
  auto out = make_tensor<T>(q->shape());
  auto probs = std::make_shared<std::vector<T>>(dims.batch * heads * dims.seq * dims.seq);
  kernels::fast::causal_attention<T>(q->data(), k->data(), v->data(), dims, *probs, out->data());
  if (tape.needs_grad({&q, &k, &v})) {
    tape.record({q, k, v}, out, [q, k, v, out, probs, dims] {
      kernels::fast::causal_attention_backward<T>(q->data(), k->data(), v->data(), *probs,
                                                  out->grad(), dims, grad_if(q), grad_if(k),
                                                  grad_if(v));
    });
  }
  return out;
}

template <class T>
TensorPtr<T> embedding(Tape<T>& tape, const TensorPtr<T>& table, std::span<const TokenId> tokens,
                       Shape lead) {
  if (table->rank() != 2) throw ShapeError("embedding table must be [V, d]");
  if (numel(lead) != tokens.size()) throw ShapeError("embedding: token count does not match shape");
  const std::size_t V = table->dim(0), d = table->dim(1);
  for (TokenId t : tokens) {
    if (t >= V) {
      throw IndexError("token id " + std::to_string(t) + " out of range for vocabulary " +
                       std::to_string(V));
    }
  }
  lead.push_back(d);
  auto out = make_tensor<T>(std::move(lead));
  auto o = out->data();
  auto src = table->data();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::copy_n(&src[std::size_t(tokens[i]) * d], d, &o[i * d]);
  }
  if (tape.needs_grad({&table})) {
    std::vector<TokenId> ids(tokens.begin(), tokens.end());
    tape.record({table}, out, [table, out, ids = std::move(ids), d] {
      auto g = out->grad();
      auto gt = table->ensure_grad();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        T* row = &gt[std::size_t(ids[i]) * d];
        for (std::size_t j = 0; j < d; ++j) row[j] += g[i * d + j];
      }
    });
  }
  return out;
}

template <class T>
TensorPtr<T> group_mean(Tape<T>& tape, const TensorPtr<T>& x, std::vector<std::size_t> sources,
                        std::size_t group, Shape out_shape) {
  const std::size_t d = x->cols();
  if (group == 0 || out_shape.empty() || out_shape.back() != d ||
      sources.size() != numel(out_shape) / d * group) {
    throw ShapeError("group_mean: inconsistent grouping");
  }
  for (auto s : sources) {
    if (s >= x->rows()) throw ShapeError("group_mean: source row out of range");
  }
  const std::size_t out_rows = sources.size() / group;
  auto out = make_tensor<T>(std::move(out_shape));
  auto o = out->data();
  auto xd = x->data();
  const T denom = T(group);
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < out_rows; ++r) {
    T* dst = &o[r * d];
    for (std::size_t g = 0; g < group; ++g) {
      const T* src = &xd[sources[r * group + g] * d];
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
    for (std::size_t j = 0; j < d; ++j) dst[j] /= denom;
  }
  if (tape.needs_grad({&x})) {
    tape.record({x}, out, [x, out, sources = std::move(sources), group, d, out_rows] {
      auto g = out->grad();
      auto gx = x->ensure_grad();
      const T denom = T(group);
      for (std::size_t r = 0; r < out_rows; ++r) {
        for (std::size_t k = 0; k < group; ++k) {
          T* dst = &gx[sources[r * group + k] * d];
          for (std::size_t j = 0; j < d; ++j) dst[j] += g[r * d + j] / denom;
        }
      }
    });
  }
  return out;
}

template <class T>
TensorPtr<T> cross_entropy(Tape<T>& tape, const TensorPtr<T>& logits,
                           std::vector<std::size_t> rows, std::vector<TokenId> targets,
                           std::size_t width) {
  const std::size_t V = logits->cols(), n_rows = logits->rows();
  if (width == 0 || rows.empty() || targets.size() != rows.size() * width) {
    throw ShapeError("cross_entropy: expected " + std::to_string(width) + " targets per row");
  }
  for (auto r : rows) {
    if (r >= n_rows) throw ShapeError("cross_entropy: row index out of range");
  }
  for (TokenId t : targets) {
    if (t >= V) {
      throw IndexError("target " + std::to_string(t) + " out of range for vocabulary " +
                       std::to_string(V));
    }
  }
  auto lse = std::make_shared<std::vector<T>>(rows.size());
  std::span<const T> ld = logits->data();
  const double total =
      kernels::fast::cross_entropy_sum<T>(cview(ld, n_rows, V), rows, targets, width, *lse);
  const double count = double(rows.size() * width);
  auto out = make_tensor<T>({1}, std::vector<T>{T(total / count)});
  if (tape.needs_grad({&logits})) {
    tape.record({logits}, out,
                [logits, out, rows = std::move(rows), targets = std::move(targets), width, lse,
                 count, n_rows, V] {
                  const T scale = T(double(out->grad()[0]) / count);
                  std::span<const T> ld = logits->data();
                  kernels::fast::cross_entropy_backward<T>(cview(ld, n_rows, V), rows, targets,
                                                           width, *lse, scale,
                                                           mview(logits->ensure_grad(), n_rows, V));
                });
  }
  return out;
}

template <class T>
TensorPtr<T> cross_entropy(Tape<T>& tape, const TensorPtr<T>& logits,
                           std::span<const TokenId> targets) {
  if (targets.size() != logits->rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(logits->rows()) + " rows");
  }
  std::vector<std::size_t> rows(targets.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return cross_entropy(tape, logits, std::move(rows),
                       std::vector<TokenId>(targets.begin(), targets.end()), 1);
}

#define PATCHLM_INSTANTIATE(T)                                                                   \
  template TensorPtr<T> matmul(Tape<T>&, const TensorPtr<T>&, const TensorPtr<T>&);             \
  template TensorPtr<T> add(Tape<T>&, const TensorPtr<T>&, const TensorPtr<T>&);                \
  template TensorPtr<T> mul(Tape<T>&, const TensorPtr<T>&, const TensorPtr<T>&);                \
  template TensorPtr<T> scale(Tape<T>&, const TensorPtr<T>&, T);                                \
  template TensorPtr<T> sum(Tape<T>&, const TensorPtr<T>&);                                     \
  template TensorPtr<T> reshape(Tape<T>&, const TensorPtr<T>&, Shape);                          \
  template TensorPtr<T> rmsnorm(Tape<T>&, const TensorPtr<T>&, const TensorPtr<T>&, T);         \
  template TensorPtr<T> swiglu(Tape<T>&, const TensorPtr<T>&, const TensorPtr<T>&);             \
  template TensorPtr<T> swiglu_ffn(Tape<T>&, const TensorPtr<T>&, const TensorPtr<T>&,          \
                                   const TensorPtr<T>&, const TensorPtr<T>&);                   \
  template TensorPtr<T> rope(Tape<T>&, const TensorPtr<T>&, std::size_t,                        \
                             std::span<const std::size_t>, double);                             \
  template TensorPtr<T> causal_attention(Tape<T>&, const TensorPtr<T>&, const TensorPtr<T>&,    \
                                         const TensorPtr<T>&, std::size_t);                     \
  template TensorPtr<T> embedding(Tape<T>&, const TensorPtr<T>&, std::span<const TokenId>,      \
                                  Shape);                                                       \
  template TensorPtr<T> group_mean(Tape<T>&, const TensorPtr<T>&, std::vector<std::size_t>,     \
                                   std::size_t, Shape);                                         \
  template TensorPtr<T> cross_entropy(Tape<T>&, const TensorPtr<T>&, std::vector<std::size_t>,  \
                                      std::vector<TokenId>, std::size_t);                       \
  template TensorPtr<T> cross_entropy(Tape<T>&, const TensorPtr<T>&, std::span<const TokenId>);

PATCHLM_INSTANTIATE(float)
PATCHLM_INSTANTIATE(double)
#undef PATCHLM_INSTANTIATE

}  // namespace patchlm::ops
