#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "patchlm/tensor.hpp"

namespace patchlm {

enum class TokenizerKind { byte, external };

std::string to_string(TokenizerKind kind);
TokenizerKind parse_tokenizer_kind(const std::string& text);

struct TokenizerSpec {
  TokenizerKind kind = TokenizerKind::byte;
  std::size_t vocab_size = 256;
};

// Byte tokenizer: one id per byte.
std::vector<TokenId> encode(std::string_view bytes);
std::string decode(std::span<const TokenId> ids);

struct Corpus {
  TokenizerSpec tokenizer;
  std::vector<TokenId> ids;
};

// External id stream: u32 magic "PLMI", u32 vocab size, then u32 ids (little-endian).
inline constexpr std::uint32_t kIdStreamMagic = 0x494d4c50;  // "PLMI"

void write_id_stream(std::ostream& out, std::span<const TokenId> ids, std::uint32_t vocab_size);
Corpus read_id_stream(std::istream& in);
Corpus load_corpus(const std::filesystem::path& path, TokenizerKind kind);

// Held-out tail of `eval_tokens` ids; the rest trains.
struct CorpusSplit {
  std::vector<TokenId> train;
  std::vector<TokenId> eval;
};
CorpusSplit split_corpus(std::span<const TokenId> ids, std::size_t eval_tokens);

// floor(n / L) disjoint contiguous blocks; the tail is dropped.
std::vector<std::vector<TokenId>> pack_blocks(std::span<const TokenId> ids, std::size_t block_length);

enum class Stage { patch, token };
std::string to_string(Stage stage);

struct Batch {
  Stage stage = Stage::token;
  std::size_t rows = 0;
  std::size_t block_length = 0;
  std::size_t epoch = 0;
  std::vector<TokenId> tokens;  // [rows, block_length]
};

// Fixed-length views over one shared token stream.
class BlockStream {
 public:
  BlockStream(std::shared_ptr<const std::vector<TokenId>> ids, std::size_t block_length,
              std::uint64_t seed);

  std::size_t block_length() const { return block_length_; }
  std::size_t block_count() const { return block_count_; }
  std::span<const TokenId> block(std::size_t index) const;
  // Deterministic permutation of block indices for (seed, epoch).
  std::vector<std::size_t> epoch_order(std::size_t epoch) const;

 private:
  std::shared_ptr<const std::vector<TokenId>> ids_;
  std::size_t block_length_;
  std::size_t block_count_;
  std::uint64_t seed_;
};

struct EpochMode {
  enum class Kind { single_pass, epochs, unbounded };
  Kind kind = Kind::single_pass;
  std::size_t count = 1;

  static EpochMode single_pass() { return {Kind::single_pass, 1}; }
  static EpochMode epochs(std::size_t n) { return {Kind::epochs, n}; }
  // Reshuffles and repeats for as long as batches are requested.
  static EpochMode unbounded() { return {Kind::unbounded, 0}; }
};

// Emits floor(blocks / rows) batches per epoch, each block at most once per epoch.
class BatchIterator {
 public:
  BatchIterator(BlockStream stream, std::size_t rows, EpochMode mode, Stage stage);

  std::optional<Batch> next();
  std::size_t batches_per_epoch() const { return per_epoch_; }
  std::size_t rows() const { return rows_; }
  const BlockStream& stream() const { return stream_; }

 private:
  BlockStream stream_;
  std::size_t rows_;
  EpochMode mode_;
  Stage stage_;
  std::size_t per_epoch_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

// Deterministic English-like text for desk-scale experiments: a Zipfian
// pseudo-word lexicon, topic-biased word choice, noun-verb preferences and
// sentence/paragraph structure.
std::string synthetic_text(std::size_t bytes, std::uint64_t seed);

}  // namespace patchlm
