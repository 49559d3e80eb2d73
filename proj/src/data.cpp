#include "patchlm/data.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

namespace patchlm {

std::string to_string(TokenizerKind kind) { return kind == TokenizerKind::byte ? "byte" : "external"; }

TokenizerKind parse_tokenizer_kind(const std::string& text) {
  if (text == "byte") return TokenizerKind::byte;
  if (text == "external") return TokenizerKind::external;
  throw ConfigError("unknown tokenizer kind '" + text + "' (expected byte|external)");
}

std::string to_string(Stage stage) { return stage == Stage::patch ? "patch" : "token"; }

std::vector<TokenId> encode(std::string_view bytes) {
  std::vector<TokenId> ids;
  ids.reserve(bytes.size());
  for (char c : bytes) ids.push_back(static_cast<unsigned char>(c));
  return ids;
}

std::string decode(std::span<const TokenId> ids) {
  std::string out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id >= 256) throw IndexError("byte id " + std::to_string(id) + " out of range");
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

void write_id_stream(std::ostream& out, std::span<const TokenId> ids, std::uint32_t vocab_size) {
  static_assert(std::endian::native == std::endian::little);
  for (TokenId id : ids) {
    if (id >= vocab_size) throw IndexError("id " + std::to_string(id) + " exceeds vocabulary");
  }
  const std::uint32_t header[2] = {kIdStreamMagic, vocab_size};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(ids.data()), std::streamsize(ids.size() * sizeof(TokenId)));
  if (!out) throw FormatError("failed writing id stream");
}

Corpus read_id_stream(std::istream& in) {
  std::uint32_t header[2];
  if (!in.read(reinterpret_cast<char*>(header), sizeof(header)) || header[0] != kIdStreamMagic) {
    throw FormatError("not an id stream (bad magic)");
  }
  if (header[1] == 0) throw FormatError("id stream declares an empty vocabulary");
  Corpus corpus{{TokenizerKind::external, header[1]}, {}};
  std::string rest{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (rest.size() % sizeof(TokenId) != 0) throw FormatError("id stream has a partial trailing id");
  corpus.ids.resize(rest.size() / sizeof(TokenId));
  std::copy_n(rest.data(), rest.size(), reinterpret_cast<char*>(corpus.ids.data()));
  for (TokenId id : corpus.ids) {
    if (id >= header[1]) throw IndexError("id " + std::to_string(id) + " exceeds declared vocabulary");
  }
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path, TokenizerKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open corpus " + path.string());
  if (kind == TokenizerKind::external) return read_id_stream(in);
  std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return Corpus{{TokenizerKind::byte, 256}, encode(bytes)};
}

CorpusSplit split_corpus(std::span<const TokenId> ids, std::size_t eval_tokens) {
  if (eval_tokens >= ids.size()) throw ConfigError("eval split larger than the corpus");
  const std::size_t cut = ids.size() - eval_tokens;
  return {{ids.begin(), ids.begin() + std::ptrdiff_t(cut)}, {ids.begin() + std::ptrdiff_t(cut), ids.end()}};
}

std::vector<std::vector<TokenId>> pack_blocks(std::span<const TokenId> ids, std::size_t block_length) {
  if (block_length == 0) throw ConfigError("block length must be at least 1");
  std::vector<std::vector<TokenId>> blocks;
  for (std::size_t j = 0; j + block_length <= ids.size(); j += block_length) {
    blocks.emplace_back(ids.begin() + std::ptrdiff_t(j), ids.begin() + std::ptrdiff_t(j + block_length));
  }
  return blocks;
}

BlockStream::BlockStream(std::shared_ptr<const std::vector<TokenId>> ids, std::size_t block_length,
                         std::uint64_t seed)
    : ids_(std::move(ids)), block_length_(block_length), seed_(seed) {
  if (!ids_) throw UsageError("BlockStream needs a token stream");
  if (block_length_ == 0) throw ConfigError("block length must be at least 1");
  block_count_ = ids_->size() / block_length_;
}

std::span<const TokenId> BlockStream::block(std::size_t index) const {
  if (index >= block_count_) throw IndexError("block index out of range");
  return std::span<const TokenId>(*ids_).subspan(index * block_length_, block_length_);
}

std::vector<std::size_t> BlockStream::epoch_order(std::size_t epoch) const {
  std::vector<std::size_t> order(block_count_);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  // Fisher-Yates written out so the order does not depend on the standard library.
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

BatchIterator::BatchIterator(BlockStream stream, std::size_t rows, EpochMode mode, Stage stage)
    : stream_(std::move(stream)), rows_(rows), mode_(mode), stage_(stage) {
  if (rows_ == 0) throw ConfigError("batch must contain at least one row");
  if (stream_.block_count() < rows_) {
    throw ConfigError("corpus holds " + std::to_string(stream_.block_count()) + " blocks of " +
                      std::to_string(stream_.block_length()) + " tokens, fewer than one batch of " +
                      std::to_string(rows_));
  }
  if (mode_.kind == EpochMode::Kind::epochs && mode_.count == 0) {
    throw ConfigError("epoch count must be at least 1");
  }
  per_epoch_ = stream_.block_count() / rows_;
  order_ = stream_.epoch_order(0);
}

std::optional<Batch> BatchIterator::next() {
  if (cursor_ == per_epoch_) {
    const bool more = mode_.kind == EpochMode::Kind::unbounded ||
                      (mode_.kind == EpochMode::Kind::epochs && epoch_ + 1 < mode_.count);
    if (!more) return std::nullopt;
    ++epoch_;
    cursor_ = 0;
    order_ = stream_.epoch_order(epoch_);
  }
  Batch batch{stage_, rows_, stream_.block_length(), epoch_, {}};
  batch.tokens.reserve(rows_ * stream_.block_length());
  for (std::size_t r = 0; r < rows_; ++r) {
    auto blk = stream_.block(order_[cursor_ * rows_ + r]);
    batch.tokens.insert(batch.tokens.end(), blk.begin(), blk.end());
  }
  ++cursor_;
  return batch;
}

}  // namespace patchlm
