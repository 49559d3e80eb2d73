#include <doctest.h>

#include <map>
#include <random>
#include <sstream>

#include "patchlm/data.hpp"

using namespace patchlm;

namespace {

std::shared_ptr<const std::vector<TokenId>> iota_ids(std::size_t n) {
  auto v = std::make_shared<std::vector<TokenId>>(n);
  for (std::size_t i = 0; i < n; ++i) (*v)[i] = TokenId(i);
  return v;
}

}  // namespace

TEST_SUITE("byte tokenizer") {
  TEST_CASE("AB encodes to 65 66") {
    CHECK(encode("AB") == std::vector<TokenId>{65, 66});
    CHECK(encode("").empty());
    CHECK(decode(std::vector<TokenId>{}).empty());
  }

  TEST_CASE("random byte strings round-trip") {
    std::mt19937 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      std::string s(rng() % 200, '\0');
      for (auto& c : s) c = char(rng() % 256);
      CHECK(decode(encode(s)) == s);
    }
  }

  TEST_CASE("ids past 255 cannot be decoded") {
    std::vector<TokenId> bad{65, 256};
    CHECK_THROWS_AS(decode(bad), IndexError);
  }
}

TEST_SUITE("id stream") {
  TEST_CASE("round trip and header layout") {
    std::vector<TokenId> ids{0, 31999, 7, 12};
    std::stringstream buf;
    write_id_stream(buf, ids, 32000);
    const std::string bytes = buf.str();
    CHECK(bytes.size() == 8 + 4 * ids.size());
    CHECK(bytes.substr(0, 4) == "PLMI");
    const auto c = read_id_stream(buf);
    CHECK(c.tokenizer.kind == TokenizerKind::external);
    CHECK(c.tokenizer.vocab_size == 32000);
    CHECK(c.ids == ids);
  }

  TEST_CASE("bad inputs") {
    std::stringstream junk("XXXXYYYY");
    CHECK_THROWS_AS(read_id_stream(junk), FormatError);
    std::vector<TokenId> ids{5};
    std::stringstream buf;
    CHECK_THROWS_AS(write_id_stream(buf, ids, 5), IndexError);
  }
}

TEST_SUITE("pack_blocks") {
  TEST_CASE("n=10, L=4 gives 2 blocks") {
    auto ids = *iota_ids(10);
    auto blocks = pack_blocks(ids, 4);
    REQUIRE(blocks.size() == 2);
    CHECK(blocks[0] == std::vector<TokenId>{0, 1, 2, 3});
    CHECK(blocks[1] == std::vector<TokenId>{4, 5, 6, 7});
  }

  TEST_CASE("n=L gives the input") {
    auto ids = *iota_ids(6);
    auto blocks = pack_blocks(ids, 6);
    REQUIRE(blocks.size() == 1);
    CHECK(blocks[0] == ids);
  }

  TEST_CASE("concatenated blocks equal the prefix") {
    auto ids = *iota_ids(103);
    for (std::size_t L : {1u, 5u, 17u, 103u}) {
      std::vector<TokenId> cat;
      for (const auto& b : pack_blocks(ids, L)) cat.insert(cat.end(), b.begin(), b.end());
      CHECK(cat == std::vector<TokenId>(ids.begin(), ids.begin() + std::ptrdiff_t(103 / L * L)));
    }
    CHECK_THROWS_AS(pack_blocks(ids, 0), ConfigError);
  }
}

TEST_SUITE("batch iteration") {
  TEST_CASE("single pass partitions the blocks") {
    BlockStream stream(iota_ids(10 * 4 + 3), 4, 11);
    BatchIterator it(stream, 3, EpochMode::single_pass(), Stage::token);
    std::map<TokenId, int> seen;
    std::size_t batches = 0;
    while (auto b = it.next()) {
      ++batches;
      CHECK(b->tokens.size() == 3 * 4);
      CHECK(b->stage == Stage::token);
      for (std::size_t r = 0; r < 3; ++r) {
        const TokenId first = b->tokens[r * 4];
        CHECK(first % 4 == 0);
        for (std::size_t j = 0; j < 4; ++j) CHECK(b->tokens[r * 4 + j] == first + j);
        seen[first]++;
      }
    }
    CHECK(batches == 3);  // floor(10 / 3)
    for (const auto& [k, n] : seen) CHECK(n == 1);
  }

  TEST_CASE("two epochs emit every block exactly twice with fresh shuffles") {
    BlockStream stream(iota_ids(12 * 5), 5, 4);
    BatchIterator it(stream, 4, EpochMode::epochs(2), Stage::patch);
    std::map<TokenId, int> seen;
    std::vector<TokenId> order0, order1;
    while (auto b = it.next()) {
      for (std::size_t r = 0; r < 4; ++r) {
        seen[b->tokens[r * 5]]++;
        (b->epoch == 0 ? order0 : order1).push_back(b->tokens[r * 5]);
      }
    }
    CHECK(seen.size() == 12);
    for (const auto& [k, n] : seen) CHECK(n == 2);
    CHECK(order0 != order1);
  }

  TEST_CASE("same seed gives the same order") {
    auto ids = iota_ids(400);
    BatchIterator a(BlockStream(ids, 8, 99), 5, EpochMode::unbounded(), Stage::token);
    BatchIterator b(BlockStream(ids, 8, 99), 5, EpochMode::unbounded(), Stage::token);
    BatchIterator c(BlockStream(ids, 8, 100), 5, EpochMode::unbounded(), Stage::token);
    bool differs = false;
    for (int i = 0; i < 25; ++i) {
      auto x = a.next(), y = b.next(), z = c.next();
      CHECK(x->tokens == y->tokens);
      differs |= x->tokens != z->tokens;
    }
    CHECK(differs);
  }

  TEST_CASE("token conservation") {
    BatchIterator it(BlockStream(iota_ids(1000), 16, 1), 4, EpochMode::epochs(3), Stage::token);
    std::size_t tokens = 0, batches = 0;
    while (auto b = it.next()) {
      tokens += b->tokens.size();
      ++batches;
    }
    CHECK(tokens == batches * 4 * 16);
    CHECK(batches == 3 * (1000 / 16 / 4));
  }

  TEST_CASE("corpus smaller than one batch is an error") {
    CHECK_THROWS_AS(BatchIterator(BlockStream(iota_ids(20), 8, 1), 3, EpochMode::single_pass(), Stage::token),
                    ConfigError);
  }
}

TEST_SUITE("corpus") {
  TEST_CASE("eval split takes the tail") {
    auto ids = *iota_ids(100);
    auto s = split_corpus(ids, 30);
    CHECK(s.train.size() == 70);
    CHECK(s.eval.front() == 70);
    CHECK_THROWS_AS(split_corpus(ids, 100), ConfigError);
  }

  TEST_CASE("synthetic text is deterministic printable text") {
    const auto a = synthetic_text(20000, 5), b = synthetic_text(20000, 5), c = synthetic_text(20000, 6);
    CHECK(a.size() == 20000);
    CHECK(a == b);
    CHECK(a != c);
    std::size_t spaces = 0;
    for (char ch : a) {
      CHECK(((ch >= 32 && ch < 127) || ch == '\n'));
      spaces += ch == ' ';
    }
    CHECK(spaces > 2000);
  }
}
