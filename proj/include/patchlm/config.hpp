#pragma once

// Run configuration read from `section.key = value` lines. `#` starts a
// comment; blank lines are ignored; unknown keys are errors.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "patchlm/data.hpp"
#include "patchlm/model.hpp"
#include "patchlm/patching.hpp"

namespace patchlm {

struct TrainConfig {
  std::uint64_t steps = 0;   // total budget N in optimizer steps
  double epochs = 0;         // alternative budget in passes over the training split
  std::size_t tokens_per_batch = 4096;
  double lr = 3e-4;
  std::uint64_t warmup = 2000;
  std::uint64_t token_warmup = 0;  // 0 = same as warmup
  double floor_fraction = 0.1;
  double weight_decay = 0.1;
  double clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  std::uint64_t seed = 1;
  std::uint64_t log_interval = 10;
  std::uint64_t eval_interval = 0;  // 0 = only at stage ends
  std::size_t eval_blocks = 64;     // cap on held-out blocks per evaluation
  std::uint64_t checkpoint_interval = 0;
  bool log_wall_clock = false;

  std::uint64_t effective_token_warmup() const { return token_warmup == 0 ? warmup : token_warmup; }
};

struct DataConfig {
  std::string path;  // empty = generate synthetic text
  TokenizerKind kind = TokenizerKind::byte;
  std::size_t eval_tokens = 65536;
  std::size_t synthetic_bytes = 0;
  std::uint64_t synthetic_seed = 7;
};

struct RunConfig {
  ModelConfig model;
  PatchConfig patch;
  TrainConfig train;
  DataConfig data;

  // Cross-section checks: divisibility of the batch, context fits, budget set.
  void validate() const;
  // Rows per batch for each stage.
  std::size_t token_rows() const;
  std::size_t patch_rows() const;
};

RunConfig parse_config(std::istream& in);
RunConfig parse_config_string(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
// Applies one `section.key = value` assignment.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

}  // namespace patchlm
