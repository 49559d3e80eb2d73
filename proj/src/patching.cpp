#include "patchlm/patching.hpp"

#include <random>

#include "patchlm/ops.hpp"

namespace patchlm {

std::string to_string(ContextMode mode) { return mode == ContextMode::full ? "full" : "reduced"; }

std::string to_string(PatchStrategy strategy) {
  return strategy == PatchStrategy::consecutive ? "consecutive" : "mixup";
}

ContextMode parse_context_mode(const std::string& text) {
  if (text == "full") return ContextMode::full;
  if (text == "reduced") return ContextMode::reduced;
  throw ConfigError("unknown context mode '" + text + "' (expected full|reduced)");
}

PatchStrategy parse_patch_strategy(const std::string& text) {
  if (text == "consecutive") return PatchStrategy::consecutive;
  if (text == "mixup") return PatchStrategy::mixup;
  throw ConfigError("unknown patch strategy '" + text + "' (expected consecutive|mixup)");
}

void PatchConfig::validate() const {
  if (patch_size == 0) throw ConfigError("patch size K must be at least 1");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (context_tokens < 2) throw ConfigError("context length T must be at least 2");
  if (context_mode == ContextMode::reduced && strategy == PatchStrategy::consecutive) {
    if (context_tokens % patch_size != 0 || context_tokens / patch_size < 2) {
      throw ConfigError("reduced context mode needs K to divide T into at least 2 patches");
    }
  }
  if (strategy == PatchStrategy::mixup && (input_proj || output_proj)) {
    throw ConfigError("projection ablations apply to consecutive patching only");
  }
}

std::size_t PatchConfig::block_length() const {
  if (strategy == PatchStrategy::mixup || context_mode == ContextMode::reduced) return context_tokens;
  return patch_size * context_tokens;
}

std::size_t PatchConfig::patches_per_sample() const {
  if (strategy == PatchStrategy::mixup) return context_tokens;
  return block_length() / patch_size;
}

template <class T>
std::vector<NamedTensor<T>> AuxProjections<T>::named() const {
  std::vector<NamedTensor<T>> out;
  if (w_in) out.emplace_back(std::string(kAuxPrefix) + "w_in", w_in);
  if (w_out) out.emplace_back(std::string(kAuxPrefix) + "w_out", w_out);
  return out;
}

template <class T>
AuxProjections<T> init_aux(const ModelConfig& model, const PatchConfig& patch, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 0.02);
  const std::size_t d = model.hidden_size, K = patch.patch_size;
  auto draw = [&](Shape shape) {
    std::vector<T> data(numel(shape));
    for (auto& v : data) v = T(normal(rng));
    return make_tensor<T>(std::move(shape), std::move(data), true);
  };
  AuxProjections<T> aux;
  if (patch.input_proj) aux.w_in = draw({K * d, d});
  if (patch.output_proj) aux.w_out = draw({d, K * d});
  return aux;
}

template <class T>
TensorPtr<T> patch_embed(Tape<T>& tape, const TensorPtr<T>& x, std::size_t K) {
  if (x->rank() != 3) throw ShapeError("patch_embed expects [batch, seq, d]");
  if (K == 0 || x->dim(1) % K != 0) {
    throw ShapeError("patch_embed: sequence length " + std::to_string(x->dim(1)) +
                     " is not divisible by K=" + std::to_string(K));
  }
  const std::size_t B = x->dim(0), P = x->dim(1) / K, d = x->dim(2);
  std::vector<std::size_t> sources(B * P * K);
  for (std::size_t r = 0; r < B * P; ++r) {
    for (std::size_t k = 0; k < K; ++k) sources[r * K + k] = r * K + k;
  }
  return ops::group_mean(tape, x, std::move(sources), K, {B, P, d});
}

TargetGrid next_patch_targets(std::span<const TokenId> tokens, std::size_t batch, std::size_t K) {
  if (batch == 0 || K == 0 || tokens.size() % batch != 0) {
    throw ShapeError("next_patch_targets: token count not divisible by batch");
  }
  const std::size_t L = tokens.size() / batch;
  if (L % K != 0) throw ShapeError("next_patch_targets: sequence length not divisible by K");
  const std::size_t P = L / K;
  if (P < 2) throw ShapeError("next_patch_targets: need at least 2 patches to have a target");
  TargetGrid grid{batch, P - 1, K, std::vector<TokenId>(batch * (P - 1) * K)};
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i + 1 < P; ++i) {
      for (std::size_t k = 0; k < K; ++k) {
        grid.ids[(b * (P - 1) + i) * K + k] = tokens[b * L + (i + 1) * K + k];
      }
    }
  }
  return grid;
}

template <class T>
TensorPtr<T> shared_head_loss(Tape<T>& tape, const TensorPtr<T>& logits, const TargetGrid& targets) {
  if (logits->rank() != 3 || logits->dim(0) != targets.batch ||
      logits->dim(1) != targets.positions + 1) {
    throw ShapeError("shared_head_loss: logits " + shape_str(logits->shape()) +
                     " do not match targets for " + std::to_string(targets.positions) +
                     " positions");
  }
  const std::size_t P = logits->dim(1);
  std::vector<std::size_t> rows;
  rows.reserve(targets.batch * targets.positions);
  for (std::size_t b = 0; b < targets.batch; ++b) {
    for (std::size_t i = 0; i < targets.positions; ++i) rows.push_back(b * P + i);
  }
  return ops::cross_entropy(tape, logits, std::move(rows), targets.ids, targets.width);
}

template <class T>
TensorPtr<T> next_patch_loss(Tape<T>& tape, const TensorPtr<T>& logits,
                             std::span<const TokenId> tokens, std::size_t K) {
  if (logits->rank() != 3) throw ShapeError("next_patch_loss expects [batch, patches, V] logits");
  auto targets = next_patch_targets(tokens, logits->dim(0), K);
  return shared_head_loss(tape, logits, targets);
}

template <class T>
MixedPatches<T> mixup_patch(Tape<T>& tape, const TensorPtr<T>& x, std::span<const TokenId> tokens,
                            std::size_t K) {
  if (x->rank() != 3) throw ShapeError("mixup_patch expects [samples, seq, d]");
  const std::size_t N = x->dim(0), S = x->dim(1), d = x->dim(2);
  if (K == 0 || N % K != 0) throw ShapeError("mixup_patch: sample count not divisible by K");
  if (tokens.size() != N * S) throw ShapeError("mixup_patch: samples must have equal length");
  if (S < 2) throw ShapeError("mixup_patch: need at least 2 positions");
  const std::size_t M = N / K;
  std::vector<std::size_t> sources(M * S * K);
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t t = 0; t < S; ++t) {
      for (std::size_t k = 0; k < K; ++k) sources[(m * S + t) * K + k] = (m * K + k) * S + t;
    }
  }
  MixedPatches<T> out;
  out.embeddings = ops::group_mean(tape, x, std::move(sources), K, {M, S, d});
  out.targets = TargetGrid{M, S - 1, K, std::vector<TokenId>(M * (S - 1) * K)};
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t i = 0; i + 1 < S; ++i) {
      for (std::size_t k = 0; k < K; ++k) {
        out.targets.ids[(m * (S - 1) + i) * K + k] = tokens[(m * K + k) * S + i + 1];
      }
    }
  }
  return out;
}

template <class T>
TensorPtr<T> apply_input_proj(Tape<T>& tape, const TensorPtr<T>& x, const AuxProjections<T>& aux,
                              std::size_t K) {
  if (!aux.w_in) throw UsageError("input projection is not enabled");
  if (x->rank() != 3 || x->dim(1) % K != 0) {
    throw ShapeError("apply_input_proj: sequence length not divisible by K");
  }
  const std::size_t B = x->dim(0), P = x->dim(1) / K, d = x->dim(2);
  if (aux.w_in->shape() != Shape{K * d, d}) throw ShapeError("apply_input_proj: w_in must be [K*d, d]");
  // A patch's K token rows are contiguous, so the concatenation is a reshape.
  auto concat = ops::reshape(tape, x, {B, P, K * d});
  return ops::matmul(tape, concat, aux.w_in);
}

template <class T>
TensorPtr<T> apply_output_proj(Tape<T>& tape, const TensorPtr<T>& hidden,
                               const AuxProjections<T>& aux, const TensorPtr<T>& head,
                               std::size_t K) {
  if (!aux.w_out) throw UsageError("output projection is not enabled");
  if (hidden->rank() != 3) throw ShapeError("apply_output_proj expects [batch, patches, d]");
  const std::size_t B = hidden->dim(0), P = hidden->dim(1), d = hidden->dim(2);
  if (aux.w_out->shape() != Shape{d, K * d}) throw ShapeError("apply_output_proj: w_out must be [d, K*d]");
  auto expanded = ops::matmul(tape, hidden, aux.w_out);
  auto slices = ops::reshape(tape, expanded, {B, P, K, d});
  return ops::matmul(tape, slices, head);
}

template <class T>
TensorPtr<T> projected_patch_loss(Tape<T>& tape, const TensorPtr<T>& logits,
                                  std::span<const TokenId> tokens, std::size_t K) {
  if (logits->rank() != 4 || logits->dim(2) != K) {
    throw ShapeError("projected_patch_loss expects [batch, patches, K, V] logits");
  }
  const std::size_t B = logits->dim(0), P = logits->dim(1);
  auto grid = next_patch_targets(tokens, B, K);
  if (grid.positions + 1 != P) throw ShapeError("projected_patch_loss: token/patch count mismatch");
  std::vector<std::size_t> rows;
  rows.reserve(B * (P - 1) * K);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i + 1 < P; ++i) {
      for (std::size_t k = 0; k < K; ++k) rows.push_back((b * P + i) * K + k);
    }
  }
  return ops::cross_entropy(tape, logits, std::move(rows), grid.ids, 1);
}

template <class T>
TransformerParams<T> strip_aux(TransformerParams<T> params, AuxProjections<T> aux) {
  aux.w_in.reset();
  aux.w_out.reset();
  return params;
}

template <class T>
TensorPtr<T> token_level_loss(Tape<T>& tape, const TransformerParams<T>& params,
                              std::span<const TokenId> tokens, std::size_t rows, std::size_t seq) {
  if (tokens.size() != rows * seq) throw ShapeError("token_level_loss: token count mismatch");
  if (seq < 2) throw ShapeError("token_level_loss: sequence too short");
  auto emb = embed(tape, params, tokens, rows, seq);
  const auto positions = iota_positions(seq);
  auto logits = forward(tape, params, emb, positions);
  std::vector<std::size_t> idx;
  std::vector<TokenId> targets;
  idx.reserve(rows * (seq - 1));
  targets.reserve(rows * (seq - 1));
  for (std::size_t b = 0; b < rows; ++b) {
    for (std::size_t i = 0; i + 1 < seq; ++i) {
      idx.push_back(b * seq + i);
      targets.push_back(tokens[b * seq + i + 1]);
    }
  }
  return ops::cross_entropy(tape, logits, std::move(idx), std::move(targets), 1);
}

template <class T>
TensorPtr<T> patch_level_loss(Tape<T>& tape, const TransformerParams<T>& params,
                              const AuxProjections<T>& aux, const PatchConfig& patch,
                              std::span<const TokenId> tokens, std::size_t rows) {
  const std::size_t K = patch.patch_size;
  const std::size_t L = patch.block_length();
  if (tokens.size() != rows * L) {
    throw ShapeError("patch_level_loss: expected " + std::to_string(rows) + " x " +
                     std::to_string(L) + " tokens");
  }
  auto emb = embed(tape, params, tokens, rows, L);
  if (patch.strategy == PatchStrategy::mixup) {
    auto mixed = mixup_patch(tape, emb, tokens, K);
    const auto positions = iota_positions(L);
    auto logits = forward(tape, params, mixed.embeddings, positions);
    return shared_head_loss(tape, logits, mixed.targets);
  }
  auto patches = patch.input_proj ? apply_input_proj(tape, emb, aux, K) : patch_embed(tape, emb, K);
  const auto positions = iota_positions(L / K);
  auto hidden = forward_hidden(tape, params, patches, positions);
  if (patch.output_proj) {
    auto logits = apply_output_proj(tape, hidden, aux, params.head, K);
    return projected_patch_loss(tape, logits, tokens, K);
  }
  return next_patch_loss(tape, lm_head(tape, params, hidden), tokens, K);
}

#define PATCHLM_INSTANTIATE(T)                                                                    \
  template struct AuxProjections<T>;                                                              \
  template AuxProjections<T> init_aux<T>(const ModelConfig&, const PatchConfig&, std::uint64_t);  \
  template TensorPtr<T> patch_embed(Tape<T>&, const TensorPtr<T>&, std::size_t);                  \
  template TensorPtr<T> shared_head_loss(Tape<T>&, const TensorPtr<T>&, const TargetGrid&);       \
  template TensorPtr<T> next_patch_loss(Tape<T>&, const TensorPtr<T>&, std::span<const TokenId>,  \
                                        std::size_t);                                             \
  template MixedPatches<T> mixup_patch(Tape<T>&, const TensorPtr<T>&, std::span<const TokenId>,   \
                                       std::size_t);                                              \
  template TensorPtr<T> apply_input_proj(Tape<T>&, const TensorPtr<T>&,                           \
                                         const AuxProjections<T>&, std::size_t);                  \
  template TensorPtr<T> apply_output_proj(Tape<T>&, const TensorPtr<T>&,                          \
                                          const AuxProjections<T>&, const TensorPtr<T>&,          \
                                          std::size_t);                                           \
  template TensorPtr<T> projected_patch_loss(Tape<T>&, const TensorPtr<T>&,                       \
                                             std::span<const TokenId>, std::size_t);              \
  template TransformerParams<T> strip_aux(TransformerParams<T>, AuxProjections<T>);               \
  template TensorPtr<T> token_level_loss(Tape<T>&, const TransformerParams<T>&,                   \
                                         std::span<const TokenId>, std::size_t, std::size_t);     \
  template TensorPtr<T> patch_level_loss(Tape<T>&, const TransformerParams<T>&,                   \
                                         const AuxProjections<T>&, const PatchConfig&,            \
                                         std::span<const TokenId>, std::size_t);

PATCHLM_INSTANTIATE(float)
PATCHLM_INSTANTIATE(double)
#undef PATCHLM_INSTANTIATE

}  // namespace patchlm
