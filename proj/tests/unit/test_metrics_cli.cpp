#include <doctest.h>

#include <cmath>
#include <sstream>

#include "patchlm/config.hpp"
#include "patchlm/metrics.hpp"
#include "support/fixtures.hpp"

using namespace patchlm;

TEST_SUITE("eval") {
  TEST_CASE("zero head gives ln V and perplexity V") {
    auto c = fixtures::tiny_config(2, 8, 256, 2, 12);
    auto p = init_params<float>(c, 1);
    for (auto& v : p.head->data()) v = 0;
    const auto ids = fixtures::random_tokens(200, 256, 3);
    const double nll = eval_nll<float>(p, ids, 16);
    CHECK(nll == doctest::Approx(std::log(256.0)).epsilon(1e-6));
    CHECK(perplexity(nll) == doctest::Approx(256.0).epsilon(1e-5));
    CHECK(perplexity(0) == 1.0);
  }

  TEST_CASE("deterministic and independent of batching") {
    auto c = fixtures::tiny_config(2, 16, 50, 2, 24);
    auto p = init_params<double>(c, 4);
    fixtures::scale_weights(p, 10.0);
    const auto ids = fixtures::random_tokens(500, 50, 3);
    const double a = eval_nll<double>(p, ids, 20);
    CHECK(a == eval_nll<double>(p, ids, 20));
    CHECK(a == doctest::Approx(eval_nll<double>(p, ids, 20, 0, 3)).epsilon(1e-12));
    CHECK(eval_nll<double>(p, ids, 20, 2) != a);
    CHECK_THROWS_AS(eval_nll<double>(p, std::span<const TokenId>(ids).first(10), 20), ConfigError);
  }
}

TEST_SUITE("activations") {
  TEST_CASE("fixture vector: 2 of 4 above 0.5") {
    std::vector<double> v{0.6, 0.4, -0.7, 0.0};
    CHECK(activated_percent<double>(v, 0.5) == doctest::Approx(50.0));
    std::vector<double> edge{0.5, -0.5, 0.5000001};
    CHECK(activated_percent<double>(edge, 0.5) == doctest::Approx(100.0 / 3));
    CHECK_THROWS_AS(activated_percent<double>(v, 0.0), ConfigError);
  }

  TEST_CASE("zeroed FFN output projection gives zero activation") {
    auto c = fixtures::tiny_config(2, 16, 40, 2, 24);
    auto p = init_params<float>(c, 2);
    for (auto& layer : p.layers)
      for (auto& v : layer.w2->data()) v = 0;
    const auto tokens = fixtures::random_tokens(2 * 4 * 8, 40, 1);
    const auto r = activation_rate<float>(p, tokens, 2, 4, 0.01);
    REQUIRE(r.percent.size() == 2);
    for (double v : r.percent) CHECK(v == 0.0);
  }

  TEST_CASE("rate decreases as the threshold rises") {
    auto c = fixtures::tiny_config(3, 16, 40, 2, 24);
    auto p = init_params<float>(c, 2);
    fixtures::scale_weights(p, 25.0);
    const auto tokens = fixtures::random_tokens(2 * 16, 40, 1);
    for (auto site : {ActivationSite::ffn_output, ActivationSite::post_residual}) {
      std::vector<double> prev(3, 101.0);
      for (double th : {0.01, 0.1, 0.5, 1.0, 5.0}) {
        const auto r = activation_rate<float>(p, tokens, 2, 1, th, site);
        for (std::size_t l = 0; l < 3; ++l) {
          CHECK(r.percent[l] <= prev[l]);
          CHECK(r.percent[l] >= 0.0);
          prev[l] = r.percent[l];
        }
      }
    }
    const auto report = format_activation_report(activation_rate<float>(p, tokens, 2, 2, 0.5));
    CHECK(report.find("layer") != std::string::npos);
  }
}

TEST_SUITE("config") {
  const char* kText = R"(
# desk run
model.vocab_size = 256
model.hidden_size = 64
model.intermediate_size = 172
model.n_layers = 2
model.n_heads = 4
model.max_context = 128

patch.K = 4
patch.lambda = 2/3
patch.context = 128
train.steps = 300
train.tokens_per_batch = 2048
train.lr = 1e-3
data.synthetic_bytes = 100000
)";

  TEST_CASE("parse and derived sizes") {
    const auto rc = parse_config_string(kText);
    CHECK(rc.model.hidden_size == 64);
    CHECK(rc.patch.patch_size == 4);
    CHECK(rc.patch.lambda == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(rc.train.steps == 300);
    CHECK(rc.train.lr == 1e-3);
    CHECK_NOTHROW(rc.validate());
    CHECK(rc.token_rows() == 16);
    CHECK(rc.patch_rows() == 4);
  }

  TEST_CASE("errors") {
    CHECK_THROWS_AS(parse_config_string("model.bogus = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_string("model.hidden_size = abc\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_string("no equals sign\n"), ConfigError);

    auto rc = parse_config_string(kText);
    rc.train.epochs = 2;
    CHECK_THROWS_AS(rc.validate(), ConfigError);  // both budgets
    rc = parse_config_string(kText);
    rc.train.tokens_per_batch = 2000;
    CHECK_THROWS_AS(rc.validate(), ConfigError);
    rc = parse_config_string(kText);
    rc.patch.context_tokens = 256;
    CHECK_THROWS_AS(rc.validate(), ConfigError);
    rc = parse_config_string(kText);
    rc.model.vocab_size = 300;
    CHECK_THROWS_AS(rc.validate(), ConfigError);
  }

  TEST_CASE("set_config_value overrides one key") {
    auto rc = parse_config_string(kText);
    set_config_value(rc, "patch.K", "2");
    set_config_value(rc, "patch.strategy", "mixup");
    set_config_value(rc, "train.log_wall_clock", "true");
    CHECK(rc.patch.patch_size == 2);
    CHECK(rc.patch.strategy == PatchStrategy::mixup);
    CHECK(rc.train.log_wall_clock);
  }
}
