#pragma once

// Patch-level training: K consecutive token embeddings are averaged into one
// patch embedding, the backbone runs over the shorter patch sequence, and the
// single output head is scored against all K tokens of the next patch.

#include <span>
#include <string>
#include <vector>

#include "patchlm/autograd.hpp"
#include "patchlm/model.hpp"
#include "patchlm/tensor.hpp"

namespace patchlm {

enum class ContextMode { full, reduced };
enum class PatchStrategy { consecutive, mixup };

std::string to_string(ContextMode mode);
std::string to_string(PatchStrategy strategy);
ContextMode parse_context_mode(const std::string& text);
PatchStrategy parse_patch_strategy(const std::string& text);

struct PatchConfig {
  std::size_t patch_size = 4;          // K
  double lambda = 2.0 / 3.0;           // fraction of the step budget spent on patches
  std::size_t context_tokens = 2048;   // T, the token-stage context
  ContextMode context_mode = ContextMode::full;
  PatchStrategy strategy = PatchStrategy::consecutive;
  bool input_proj = false;
  bool output_proj = false;

  void validate() const;
  // Tokens per patch-stage sample: K*T (full), T (reduced), T per mixed sample (mixup).
  std::size_t block_length() const;
  // Patch positions the backbone sees per sample.
  std::size_t patches_per_sample() const;
  bool operator==(const PatchConfig&) const = default;
};

// targets[b][i][k], row-major.
struct TargetGrid {
  std::size_t batch = 0;
  std::size_t positions = 0;
  std::size_t width = 0;
  std::vector<TokenId> ids;

  TokenId at(std::size_t b, std::size_t i, std::size_t k) const {
    return ids[(b * positions + i) * width + k];
  }
};

// Ablation projections; present only during the patch stage and stored
// under the "aux." checkpoint prefix.
template <class T>
struct AuxProjections {
  TensorPtr<T> w_in;   // [K*d, d]
  TensorPtr<T> w_out;  // [d, K*d]

  bool empty() const { return !w_in && !w_out; }
  std::vector<NamedTensor<T>> named() const;
};

inline constexpr const char* kAuxPrefix = "aux.";

template <class T>
AuxProjections<T> init_aux(const ModelConfig& model, const PatchConfig& patch, std::uint64_t seed);

// [B, K*T, d] -> [B, T, d], each patch the mean of its K token embeddings.
template <class T>
TensorPtr<T> patch_embed(Tape<T>& tape, const TensorPtr<T>& token_embeddings, std::size_t K);

// tokens [B, K*T] -> targets [B, T-1, K]; patch i predicts the tokens of patch i+1.
TargetGrid next_patch_targets(std::span<const TokenId> tokens, std::size_t batch, std::size_t K);

// Mean over positions and target offsets of -log P(target | shared patch prediction).
// logits [B, P, V] with P - 1 == targets.positions.
template <class T>
TensorPtr<T> shared_head_loss(Tape<T>& tape, const TensorPtr<T>& logits, const TargetGrid& targets);

// logits [B, T, V] against tokens [B, K*T].
template <class T>
TensorPtr<T> next_patch_loss(Tape<T>& tape, const TensorPtr<T>& logits,
                             std::span<const TokenId> tokens, std::size_t K);

template <class T>
struct MixedPatches {
  TensorPtr<T> embeddings;  // [M, T, d]
  TargetGrid targets;       // [M, T-1, K]
};

// sample_embeddings [M*K, T, d] holds M groups of K samples; tokens [M*K, T].
// Position-wise mean within each group; targets are the K samples' next tokens.
template <class T>
MixedPatches<T> mixup_patch(Tape<T>& tape, const TensorPtr<T>& sample_embeddings,
                            std::span<const TokenId> tokens, std::size_t K);

// Concatenates each patch's K token embeddings and projects: [B, K*T, d] -> [B, T, d].
template <class T>
TensorPtr<T> apply_input_proj(Tape<T>& tape, const TensorPtr<T>& token_embeddings,
                              const AuxProjections<T>& aux, std::size_t K);

// hidden [B, T, d] -> logits [B, T, K, V] through w_out and the shared head.
template <class T>
TensorPtr<T> apply_output_proj(Tape<T>& tape, const TensorPtr<T>& hidden,
                               const AuxProjections<T>& aux, const TensorPtr<T>& head,
                               std::size_t K);

// Per-offset loss for [B, T, K, V] logits: offset k is scored only on token k.
template <class T>
TensorPtr<T> projected_patch_loss(Tape<T>& tape, const TensorPtr<T>& logits,
                                  std::span<const TokenId> tokens, std::size_t K);

// Drops the ablation projections; the backbone is returned untouched.
template <class T>
TransformerParams<T> strip_aux(TransformerParams<T> params, AuxProjections<T> aux);

// Standard next-token loss over tokens [rows, seq].
template <class T>
TensorPtr<T> token_level_loss(Tape<T>& tape, const TransformerParams<T>& params,
                              std::span<const TokenId> tokens, std::size_t rows, std::size_t seq);

// Patch-stage loss for tokens [rows, patch.block_length()] under the configured
// strategy and projections.
template <class T>
TensorPtr<T> patch_level_loss(Tape<T>& tape, const TransformerParams<T>& params,
                              const AuxProjections<T>& aux, const PatchConfig& patch,
                              std::span<const TokenId> tokens, std::size_t rows);

}  // namespace patchlm
