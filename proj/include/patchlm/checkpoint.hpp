#pragma once

// Binary checkpoint, all integers and floats little-endian:
//
//   magic "PLMC", u32 version
//   model:  u32 vocab, hidden, intermediate, layers, heads, max_context; f64 rope_base, rms_eps
//   patch:  u32 K; f64 lambda; u32 context_tokens; u8 context_mode, strategy, input_proj,
//           output_proj
//   u32 tensor_count, then per tensor:
//           u32 name_length, name bytes, u32 rank, u32 dims[rank], f32 data[prod(dims)]
//
// Ablation projections live under the "aux." name prefix.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "patchlm/model.hpp"
#include "patchlm/patching.hpp"

namespace patchlm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
  bool operator==(const CheckpointTensor&) const = default;
};

struct Checkpoint {
  ModelConfig model;
  PatchConfig patch;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const;
  bool has_aux() const;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
Checkpoint read_checkpoint(const std::filesystem::path& path);
std::string checkpoint_bytes(const Checkpoint& ckpt);

template <class T>
Checkpoint make_checkpoint(const TransformerParams<T>& params, const AuxProjections<T>& aux,
                           const PatchConfig& patch);

// Loads the backbone; "aux." tensors are ignored.
template <class T>
TransformerParams<T> load_params(const Checkpoint& ckpt);

template <class T>
AuxProjections<T> load_aux(const Checkpoint& ckpt);

// Removes every "aux."-prefixed tensor.
Checkpoint strip_aux(Checkpoint ckpt);

}  // namespace patchlm
