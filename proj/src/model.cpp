#include "patchlm/model.hpp"

#include <map>
#include <random>

#include "patchlm/ops.hpp"

namespace patchlm {

void ModelConfig::validate() const {
  if (vocab_size == 0 || hidden_size == 0 || intermediate_size == 0 || n_layers == 0 ||
      n_heads == 0 || max_context == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (hidden_size % n_heads != 0) {
    throw ConfigError("hidden_size " + std::to_string(hidden_size) +
                      " is not divisible by n_heads " + std::to_string(n_heads));
  }
  if (head_dim() % 2 != 0) {
    throw ConfigError("head dimension " + std::to_string(head_dim()) + " must be even for RoPE");
  }
  if (!(rope_base > 0) || !(rms_eps > 0)) throw ConfigError("rope_base and rms_eps must be positive");
}

std::uint64_t param_count(const ModelConfig& c) {
  const std::uint64_t V = c.vocab_size, d = c.hidden_size, f = c.intermediate_size,
                      L = c.n_layers;
  return V * d + L * (4 * d * d + 3 * d * f + 2 * d) + d + d * V;
}

std::vector<std::string> config_diff(const ModelConfig& e, const ModelConfig& a) {
  std::vector<std::string> out;
  auto cmp = [&](const char* name, auto x, auto y) {
    if (x != y) out.push_back(std::string(name) + ": expected " + std::to_string(x) + ", got " +
                              std::to_string(y));
  };
  cmp("vocab_size", e.vocab_size, a.vocab_size);
  cmp("hidden_size", e.hidden_size, a.hidden_size);
  cmp("intermediate_size", e.intermediate_size, a.intermediate_size);
  cmp("n_layers", e.n_layers, a.n_layers);
  cmp("n_heads", e.n_heads, a.n_heads);
  cmp("max_context", e.max_context, a.max_context);
  cmp("rope_base", e.rope_base, a.rope_base);
  cmp("rms_eps", e.rms_eps, a.rms_eps);
  return out;
}

std::vector<std::size_t> iota_positions(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  return p;
}

template <class T>
std::vector<NamedTensor<T>> TransformerParams<T>::named() const {
  std::vector<NamedTensor<T>> out;
  out.emplace_back("embed", embedding);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    out.emplace_back(p + "attn_norm", l.attn_norm);
    out.emplace_back(p + "wq", l.wq);
    out.emplace_back(p + "wk", l.wk);
    out.emplace_back(p + "wv", l.wv);
    out.emplace_back(p + "wo", l.wo);
    out.emplace_back(p + "ffn_norm", l.ffn_norm);
    out.emplace_back(p + "w1", l.w1);
    out.emplace_back(p + "w3", l.w3);
    out.emplace_back(p + "w2", l.w2);
  }
  out.emplace_back("final_norm", final_norm);
  out.emplace_back("head", head);
  return out;
}

template <class T>
std::vector<TensorPtr<T>> TransformerParams<T>::tensors() const {
  std::vector<TensorPtr<T>> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

template <class T>
std::uint64_t TransformerParams<T>::allocated_elements() const {
  std::uint64_t n = 0;
  for (auto& t : tensors()) n += t->size();
  return n;
}

template <class T>
void TransformerParams<T>::zero_grad() const {
  for (auto& t : tensors()) t->zero_grad();
}

template <class T>
TransformerParams<T> TransformerParams<T>::clone() const {
  std::vector<NamedTensor<T>> copies;
  for (auto& [name, t] : named()) {
    auto d = t->data();
    copies.emplace_back(name, make_tensor<T>(t->shape(), std::vector<T>(d.begin(), d.end()), true));
  }
  return params_from_named<T>(config, copies);
}

namespace {

template <class T>
std::vector<std::pair<std::string, Shape>> layout(const ModelConfig& c) {
  const std::size_t V = c.vocab_size, d = c.hidden_size, f = c.intermediate_size;
  std::vector<std::pair<std::string, Shape>> out;
  out.push_back({"embed", {V, d}});
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    out.push_back({p + "attn_norm", {d}});
    out.push_back({p + "wq", {d, d}});
    out.push_back({p + "wk", {d, d}});
    out.push_back({p + "wv", {d, d}});
    out.push_back({p + "wo", {d, d}});
    out.push_back({p + "ffn_norm", {d}});
    out.push_back({p + "w1", {d, f}});
    out.push_back({p + "w3", {d, f}});
    out.push_back({p + "w2", {f, d}});
  }
  out.push_back({"final_norm", {d}});
  out.push_back({"head", {d, V}});
  return out;
}

bool is_norm(const std::string& name) { return name.find("norm") != std::string::npos; }

}  // namespace

template <class T>
TransformerParams<T> params_from_named(const ModelConfig& config,
                                       const std::vector<NamedTensor<T>>& tensors) {
  config.validate();
  std::map<std::string, TensorPtr<T>> by_name(tensors.begin(), tensors.end());
  auto take = [&](const std::string& name, const Shape& shape) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("missing parameter tensor '" + name + "'");
    if (it->second->shape() != shape) {
      throw ShapeError("parameter '" + name + "' has shape " + shape_str(it->second->shape()) +
                       ", expected " + shape_str(shape));
    }
    it->second->set_requires_grad(true);
    return it->second;
  };
  const auto lay = layout<T>(config);
  std::size_t idx = 0;
  auto next = [&] {
    const auto& [name, shape] = lay[idx++];
    return take(name, shape);
  };
  TransformerParams<T> p;
  p.config = config;
  p.embedding = next();
  for (std::size_t i = 0; i < config.n_layers; ++i) {
    LayerParams<T> l;
    l.attn_norm = next();
    l.wq = next();
    l.wk = next();
    l.wv = next();
    l.wo = next();
    l.ffn_norm = next();
    l.w1 = next();
    l.w3 = next();
    l.w2 = next();
    p.layers.push_back(std::move(l));
  }
  p.final_norm = next();
  p.head = next();
  return p;
}

template <class T>
TransformerParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  std::vector<NamedTensor<T>> tensors;
  for (const auto& [name, shape] : layout<T>(config)) {
    std::vector<T> data(numel(shape));
    if (is_norm(name)) {
      std::fill(data.begin(), data.end(), T(1));
    } else {
      for (auto& v : data) v = T(normal(rng));
    }
    tensors.emplace_back(name, make_tensor<T>(shape, std::move(data), true));
  }
  return params_from_named<T>(config, tensors);
}

template <class T>
TensorPtr<T> embed(Tape<T>& tape, const TransformerParams<T>& params,
                   std::span<const TokenId> tokens, std::size_t batch, std::size_t seq) {
  return ops::embedding(tape, params.embedding, tokens, {batch, seq});
}

template <class T>
TensorPtr<T> forward_hidden(Tape<T>& tape, const TransformerParams<T>& params,
                            const TensorPtr<T>& input_embeddings,
                            std::span<const std::size_t> positions,
                            const LayerObserver<T>& observer, ActivationSite site) {
  const auto& c = params.config;
  if (input_embeddings->rank() != 3 || input_embeddings->dim(2) != c.hidden_size) {
    throw ShapeError("forward expects [batch, seq, " + std::to_string(c.hidden_size) +
                     "] embeddings, got " + shape_str(input_embeddings->shape()));
  }
  const std::size_t seq = input_embeddings->dim(1);
  if (seq > c.max_context) {
    throw ShapeError("sequence length " + std::to_string(seq) + " exceeds max_context " +
                     std::to_string(c.max_context));
  }
  if (positions.size() != seq) throw ShapeError("forward: one position per sequence slot required");
  for (auto p : positions) {
    if (p >= c.max_context) throw ShapeError("position exceeds max_context");
  }
  const T eps = T(c.rms_eps);
  TensorPtr<T> h = input_embeddings;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    auto a = ops::rmsnorm(tape, h, l.attn_norm, eps);
    auto q = ops::rope(tape, ops::matmul(tape, a, l.wq), c.n_heads, positions, c.rope_base);
    auto k = ops::rope(tape, ops::matmul(tape, a, l.wk), c.n_heads, positions, c.rope_base);
    auto v = ops::matmul(tape, a, l.wv);
    auto attn = ops::causal_attention(tape, q, k, v, c.n_heads);
    h = ops::add(tape, h, ops::matmul(tape, attn, l.wo));
    auto f = ops::rmsnorm(tape, h, l.ffn_norm, eps);
    auto ffn = ops::swiglu_ffn(tape, f, l.w1, l.w3, l.w2);
    h = ops::add(tape, h, ffn);
    if (observer) observer(i, site == ActivationSite::ffn_output ? *ffn : *h);
  }
  return ops::rmsnorm(tape, h, params.final_norm, eps);
}

template <class T>
TensorPtr<T> lm_head(Tape<T>& tape, const TransformerParams<T>& params, const TensorPtr<T>& hidden) {
  return ops::matmul(tape, hidden, params.head);
}

template <class T>
TensorPtr<T> forward(Tape<T>& tape, const TransformerParams<T>& params,
                     const TensorPtr<T>& input_embeddings, std::span<const std::size_t> positions) {
  return lm_head(tape, params, forward_hidden(tape, params, input_embeddings, positions));
}

#define PATCHLM_INSTANTIATE(T)                                                                    \
  template struct TransformerParams<T>;                                                           \
  template TransformerParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                \
  template TransformerParams<T> params_from_named<T>(const ModelConfig&,                          \
                                                     const std::vector<NamedTensor<T>>&);         \
  template TensorPtr<T> embed(Tape<T>&, const TransformerParams<T>&, std::span<const TokenId>,    \
                              std::size_t, std::size_t);                                          \
  template TensorPtr<T> forward_hidden(Tape<T>&, const TransformerParams<T>&,                     \
                                       const TensorPtr<T>&, std::span<const std::size_t>,         \
                                       const LayerObserver<T>&, ActivationSite);                  \
  template TensorPtr<T> lm_head(Tape<T>&, const TransformerParams<T>&, const TensorPtr<T>&);      \
  template TensorPtr<T> forward(Tape<T>&, const TransformerParams<T>&, const TensorPtr<T>&,       \
                                std::span<const std::size_t>);

PATCHLM_INSTANTIATE(float)
PATCHLM_INSTANTIATE(double)
#undef PATCHLM_INSTANTIATE

}  // namespace patchlm
