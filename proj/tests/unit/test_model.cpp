#include <doctest.h>

#include <cmath>

#include "patchlm/model.hpp"
#include "patchlm/ops.hpp"
#include "patchlm/patching.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace patchlm;

TEST_SUITE("model config") {
  TEST_CASE("param_count closed form") {
    ModelConfig unit{1, 1, 1, 1, 1, 4, 1e4, 1e-5};
    CHECK(param_count(unit) == 12);

    ModelConfig big{32000, 1024, 2752, 24, 16, 2048, 1e4, 1e-5};
    const double n = double(param_count(big));
    CHECK(n == doctest::Approx(3.69e8).epsilon(0.01));
    CHECK(std::abs(n - 370e6) / 370e6 < 0.02);

    ModelConfig c = fixtures::tiny_config(3, 16, 40, 2, 24);
    ModelConfig c2 = c;
    c2.n_layers = 6;
    const std::uint64_t per_layer = 4 * 16 * 16 + 3 * 16 * 24 + 2 * 16;
    CHECK(param_count(c2) - param_count(c) == 3 * per_layer);
  }

  TEST_CASE("validation") {
    auto c = fixtures::tiny_config();
    CHECK_NOTHROW(c.validate());
    c.n_heads = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = fixtures::tiny_config(1, 12, 11, 4);  // head_dim 3
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = fixtures::tiny_config();
    c.n_layers = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("config_diff names each differing field") {
    auto a = fixtures::tiny_config(), b = a;
    CHECK(config_diff(a, b).empty());
    b.hidden_size = 16;
    b.n_layers = 3;
    const auto d = config_diff(a, b);
    REQUIRE(d.size() == 2);
    CHECK(d[0].find("hidden_size") != std::string::npos);
    CHECK(d[1].find("n_layers") != std::string::npos);
  }
}

TEST_SUITE("init") {
  TEST_CASE("allocated elements equal param_count") {
    auto c = fixtures::tiny_config(2, 8, 11, 2, 12);
    auto p = init_params<float>(c, 1);
    CHECK(p.allocated_elements() == param_count(c));
    CHECK(p.named().size() == 2 + 9 * 2 + 1);
  }

  TEST_CASE("same seed gives identical parameters; norms are exactly one") {
    auto c = fixtures::tiny_config(2);
    auto a = init_params<float>(c, 42), b = init_params<float>(c, 42), other = init_params<float>(c, 43);
    const auto na = a.named(), nb = b.named(), no = other.named();
    bool any_diff = false;
    for (std::size_t i = 0; i < na.size(); ++i) {
      CHECK(na[i].first == nb[i].first);
      CHECK(std::equal(na[i].second->data().begin(), na[i].second->data().end(), nb[i].second->data().begin()));
      if (na[i].first.find("norm") != std::string::npos) {
        for (float v : na[i].second->data()) CHECK(v == 1.0f);
      } else {
        any_diff |= !std::equal(na[i].second->data().begin(), na[i].second->data().end(),
                                no[i].second->data().begin());
      }
    }
    CHECK(any_diff);
  }

  TEST_CASE("weights look like Normal(0, 0.02)") {
    ModelConfig c{256, 400, 8, 1, 4, 16, 1e4, 1e-5};
    auto p = init_params<double>(c, 9);
    const auto& w = *p.layers[0].wq;  // 160000 samples
    const double n = double(w.size());
    double mean = 0, sq = 0;
    for (double v : w.data()) mean += v;
    mean /= n;
    for (double v : w.data()) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / (n - 1));
    CHECK(std::abs(mean) < 3 * 0.02 / std::sqrt(n));
    CHECK(std::abs(sd - 0.02) < 3 * 0.02 / std::sqrt(2 * n));
  }
}

TEST_SUITE("forward") {
  TEST_CASE("B=1, S=1 gives [1,1,V]") {
    auto c = fixtures::tiny_config();
    auto p = init_params<float>(c, 1);
    Tape<float> tape;
    std::vector<TokenId> t{3};
    auto logits = forward(tape, p, embed(tape, p, t, 1, 1), iota_positions(1));
    CHECK(logits->shape() == Shape{1, 1, c.vocab_size});
  }

  TEST_CASE("sequence longer than max_context is rejected") {
    auto c = fixtures::tiny_config();
    c.max_context = 4;
    auto p = init_params<float>(c, 1);
    Tape<float> tape;
    auto tokens = fixtures::random_tokens(5, c.vocab_size, 1);
    CHECK_THROWS_AS(forward(tape, p, embed(tape, p, tokens, 1, 5), iota_positions(5)), ShapeError);
    std::vector<TokenId> bad{11};
    CHECK_THROWS_AS(embed(tape, p, bad, 1, 1), IndexError);
  }

  TEST_CASE("causality: future tokens never change earlier logits") {
    auto c = fixtures::tiny_config(3, 16, 20, 4, 24);
    auto p = init_params<float>(c, 5);
    fixtures::scale_weights(p, 20.0);
    auto tokens = fixtures::random_tokens(2 * 12, c.vocab_size, 2);
    auto run = [&](const std::vector<TokenId>& t) {
      Tape<float> tape;
      return forward(tape, p, embed(tape, p, t, 2, 12), iota_positions(12));
    };
    auto base = run(tokens);
    for (std::size_t i : {0u, 4u, 10u}) {
      auto changed = tokens;
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t s = i + 1; s < 12; ++s) changed[b * 12 + s] = (changed[b * 12 + s] + 7) % c.vocab_size;
      auto out = run(changed);
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t s = 0; s <= i; ++s)
          for (std::size_t v = 0; v < c.vocab_size; ++v) {
            const std::size_t at = (b * 12 + s) * c.vocab_size + v;
            CHECK((*out)[at] == (*base)[at]);
          }
    }
  }

  TEST_CASE("2-layer d=8 model matches the straight-line oracle") {
    auto c = fixtures::tiny_config(2, 8, 11, 2, 12);
    auto p = init_params<double>(c, 7);
    fixtures::scale_weights(p, 15.0);  // push activations out of the near-linear regime
    const std::size_t S = 6;
    auto tokens = fixtures::random_tokens(2 * S, c.vocab_size, 3);
    Tape<double> tape;
    auto emb = embed(tape, p, tokens, 2, S);
    auto logits = forward(tape, p, emb, iota_positions(S));
    const auto table = oracle::to_mat(*p.embedding);
    for (std::size_t b = 0; b < 2; ++b) {
      oracle::Mat x;
      for (std::size_t s = 0; s < S; ++s) x.push_back(table[tokens[b * S + s]]);
      const auto ref = oracle::transformer_logits(p, x);
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t v = 0; v < c.vocab_size; ++v) {
          CHECK(std::abs((*logits)[(b * S + s) * c.vocab_size + v] - ref[s][v]) < 1e-5);
        }
    }
  }

  TEST_CASE("same token twice embeds to identical rows") {
    auto c = fixtures::tiny_config();
    auto p = init_params<float>(c, 3);
    Tape<float> tape;
    std::vector<TokenId> t{4, 2, 4};
    auto e = embed(tape, p, t, 1, 3);
    for (std::size_t j = 0; j < c.hidden_size; ++j) CHECK((*e)[j] == (*e)[2 * c.hidden_size + j]);
  }

  TEST_CASE("activation observer sees every layer") {
    auto c = fixtures::tiny_config(3);
    auto p = init_params<float>(c, 3);
    Tape<float> tape;
    tape.set_enabled(false);
    auto tokens = fixtures::random_tokens(8, c.vocab_size, 1);
    std::vector<std::size_t> seen;
    forward_hidden<float>(tape, p, embed(tape, p, tokens, 2, 4), iota_positions(4),
                          [&](std::size_t layer, const Tensor<float>& s) {
                            seen.push_back(layer);
                            CHECK(s.size() == 8 * c.hidden_size);
                          });
    CHECK(seen == std::vector<std::size_t>{0, 1, 2});
  }
}
