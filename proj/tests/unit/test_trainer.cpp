#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "patchlm/metrics.hpp"
#include "patchlm/trainer.hpp"
#include "support/fixtures.hpp"

using namespace patchlm;

namespace {

RunConfig small_run(std::uint64_t steps, double lambda, std::size_t K = 2) {
  RunConfig rc;
  rc.model = fixtures::tiny_config(1, 16, 256, 2, 32);
  rc.model.max_context = 32;
  rc.patch.patch_size = K;
  rc.patch.lambda = lambda;
  rc.patch.context_tokens = 16;
  rc.train.steps = steps;
  rc.train.tokens_per_batch = 128;
  rc.train.lr = 3e-3;
  rc.train.warmup = 2;
  rc.train.log_interval = 1;
  rc.train.eval_blocks = 4;
  rc.data.synthetic_bytes = 20000;
  return rc;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("patchlm_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

bool same_params(const TransformerParams<float>& a, const TransformerParams<float>& b) {
  const auto na = a.named(), nb = b.named();
  if (na.size() != nb.size()) return false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    const auto x = na[i].second->data(), y = nb[i].second->data();
    if (na[i].first != nb[i].first || !std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("cost model") {
  TEST_CASE("cost ratio examples") {
    CHECK(cost_ratio(4, 2.0 / 3.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(cost_ratio(2, 0.75) == doctest::Approx(0.625).epsilon(1e-12));
    CHECK(cost_ratio(1, 0.5) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cost_ratio(8, 0.0) == 1.0);
  }

  TEST_CASE("flops estimate") {
    CHECK(flops_estimate(370e6, 360e9) == doctest::Approx(7.992e20).epsilon(1e-9));
    CHECK(flops_estimate(370e6, 0) == 0.0);
  }

  TEST_CASE("plan compute equals cost ratio times token-only compute") {
    for (std::size_t K : {1u, 2u, 4u, 8u})
      for (double lambda : {0.0, 0.25, 0.5, 2.0 / 3.0, 0.75}) {
        const auto plan = make_plan(6000, lambda, 4096, K);
        CHECK(plan.patch_steps + plan.token_steps == 6000);
        const double n = 1e6;
        CHECK(plan.compute_units(n) ==
              doctest::Approx(cost_ratio(K, lambda) * plan.token_only_compute_units(n)).epsilon(1e-9));
      }
    const auto p = make_plan(10, 2.0 / 3.0, 64, 4);
    CHECK(p.patch_steps == 6);
    CHECK(p.token_steps == 4);
    CHECK(make_plan(3, 1.0 / 3.0, 64, 4).patch_steps == 1);
    CHECK_FALSE(make_plan(10, 1.0, 64, 4).inference_compatible());
  }

  TEST_CASE("epoch plan") {
    auto [a, b] = epoch_plan(6, 2.0 / 3.0);
    CHECK(a == doctest::Approx(4));
    CHECK(b == doctest::Approx(2));
    auto [c, d] = epoch_plan(6, 0.0);
    CHECK(c == 0.0);
    CHECK(d == doctest::Approx(6));
    auto [e, f] = epoch_plan(6, 0.5);
    CHECK(e == doctest::Approx(3));
    CHECK(f == doctest::Approx(3));
    CHECK_THROWS_AS(epoch_plan(0.5, 0.5), ConfigError);
  }
}

TEST_SUITE("metrics log") {
  TEST_CASE("json line round trip") {
    MetricsRecord r;
    r.stage = Stage::patch;
    r.step = 12;
    r.stage_step = 12;
    r.tokens = 49152;
    r.compute_units = 1.5e12;
    r.loss = 3.25;
    r.lr = 1e-4;
    r.grad_norm = 0.75;
    const auto line = to_json_line(r);
    CHECK(line.find("\"stage\":\"patch\"") != std::string::npos);
    CHECK(line.find("wall_seconds") == std::string::npos);
    const auto back = parse_json_line(line);
    CHECK(back.event == "train");
    CHECK(back.stage == Stage::patch);
    CHECK(back.step == 12);
    CHECK(back.tokens == 49152);
    CHECK(back.loss == r.loss);
    CHECK(back.lr == r.lr);
    CHECK(back.grad_norm == r.grad_norm);
    CHECK_FALSE(back.wall_seconds);
    CHECK_THROWS_AS(parse_json_line("{not json"), FormatError);
    CHECK_THROWS_AS(parse_json_line("{\"event\":\"train\"}"), FormatError);
  }

  TEST_CASE("export curves writes one row per train record") {
    std::stringstream log;
    JsonlSink sink(log);
    for (std::uint64_t s = 1; s <= 4; ++s) {
      MetricsRecord r;
      r.step = s;
      r.loss = 1.0 / double(s);
      sink.write(r);
    }
    MetricsRecord e;
    e.event = "eval";
    sink.write(e);
    std::ostringstream csv;
    CHECK(export_curves(log, csv) == 4);
    std::istringstream lines(csv.str());
    std::string header;
    std::getline(lines, header);
    CHECK(header == "stage,step,tokens,compute_units,loss");
  }
}

TEST_SUITE("training") {
  TEST_CASE("zero-step stage leaves parameters unchanged") {
    auto rc = small_run(0, 0.5);
    auto params = init_params<float>(rc.model, 3);
    const auto before = params.clone();
    AuxProjections<float> aux;
    auto ids = std::make_shared<const std::vector<TokenId>>(fixtures::random_tokens(2000, 256, 1));
    BatchIterator it(BlockStream(ids, 16, 1), 8, EpochMode::unbounded(), Stage::token);
    RunState state;
    state.stage = Stage::token;
    state.optimizer.attach(params.tensors());
    run_stage(params, aux, rc.patch, 0, it, state, {});
    CHECK(same_params(params, before));
    CHECK(state.global_step == 0);
  }

  TEST_CASE("K=1 patch stage takes the same steps as token training") {
    auto rc = small_run(4, 0.5, 1);
    auto ids = std::make_shared<const std::vector<TokenId>>(fixtures::random_tokens(4000, 256, 2));
    auto run = [&](Stage stage) {
      auto params = init_params<float>(rc.model, 5);
      AuxProjections<float> aux;
      BatchIterator it(BlockStream(ids, 16, 9), 8, EpochMode::unbounded(), stage);
      RunState state;
      state.stage = stage;
      state.optimizer.attach(params.tensors());
      state.schedule = LrSchedule{1e-3, 2, 4, 0.1};
      run_stage(params, aux, rc.patch, 4, it, state, {});
      return params;
    };
    CHECK(same_params(run(Stage::patch), run(Stage::token)));
  }

  TEST_CASE("a small model overfits a 1k-token corpus") {
    auto rc = small_run(60, 0.0);
    rc.train.lr = 1e-2;
    rc.train.weight_decay = 0;
    rc.train.eval_blocks = 0;
    const auto text = synthetic_text(1024, 3);
    const auto ids = encode(text);
    MemorySink sink;
    TrainOptions opts;
    opts.sink = &sink;
    auto res = train_two_stage(rc, ids, ids, opts);
    REQUIRE(res.evals.size() == 2);
    CHECK(res.evals.front().nll == doctest::Approx(std::log(256.0)).epsilon(0.02));
    CHECK(res.evals.back().nll < 0.6 * res.evals.front().nll);
  }

  TEST_CASE("two-stage run: boundary, logs, checkpoints") {
    auto rc = small_run(9, 2.0 / 3.0);
    rc.train.checkpoint_interval = 3;
    const auto split = load_run_corpus([&] {
      auto c = rc;
      c.data.eval_tokens = 2000;
      return c;
    }());
    const auto dir = scratch_dir("two_stage");
    MemorySink sink;
    TrainOptions opts;
    opts.sink = &sink;
    opts.out_dir = dir;
    auto res = train_two_stage(rc, split.train, split.eval, opts);
    CHECK(res.plan.patch_steps == 6);
    CHECK(res.plan.token_steps == 3);
    CHECK(res.state.global_step == 9);

    std::size_t train_records = 0;
    std::uint64_t last_step = 0;
    for (const auto& r : sink.records) {
      if (r.event != "train") continue;
      ++train_records;
      CHECK(r.step == last_step + 1);
      CHECK(r.stage == (r.step <= 6 ? Stage::patch : Stage::token));
      CHECK(std::isfinite(r.loss));
      last_step = r.step;
    }
    CHECK(train_records == 9);
    // patch tokens count at 1/K
    const double n = double(param_count(rc.model));
    CHECK(res.state.compute_units ==
          doctest::Approx(6 * n * (6 * 128 / 2.0 + 3 * 128)).epsilon(1e-9));
    CHECK(res.state.compute_units == doctest::Approx(res.plan.compute_units(param_count(rc.model))));

    for (const char* name : {"patch_stage.plmc", "step_00000003.plmc", "step_00000006.plmc",
                             "step_00000009.plmc", "final.plmc"})
      CHECK(std::filesystem::exists(dir / name));
    auto final_params = load_params<float>(read_checkpoint(dir / "final.plmc"));
    CHECK(same_params(final_params, res.params));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("runs are deterministic") {
    auto rc = small_run(6, 0.5);
    const auto ids = encode(synthetic_text(8000, 1));
    auto log = [&] {
      std::ostringstream out;
      JsonlSink sink(out);
      TrainOptions opts;
      opts.sink = &sink;
      train_two_stage(rc, ids, {}, opts);
      return out.str();
    };
    const auto a = log();
    CHECK(!a.empty());
    CHECK(a == log());
  }

  TEST_CASE("non-finite loss aborts with a dump") {
    auto rc = small_run(4, 0.0);
    auto params = init_params<float>(rc.model, 1);
    params.head->data()[0] = std::numeric_limits<float>::quiet_NaN();
    AuxProjections<float> aux;
    auto ids = std::make_shared<const std::vector<TokenId>>(fixtures::random_tokens(2000, 256, 1));
    BatchIterator it(BlockStream(ids, 16, 1), 8, EpochMode::unbounded(), Stage::token);
    RunState state;
    state.stage = Stage::token;
    state.optimizer.attach(params.tensors());
    StageOptions so;
    so.dump_dir = scratch_dir("nan");
    try {
      run_stage(params, aux, rc.patch, 4, it, state, so);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("step 1") != std::string::npos);
      CHECK(msg.find("head") != std::string::npos);
    }
    CHECK(std::filesystem::exists(so.dump_dir / "nan_dump.plmc"));
    std::filesystem::remove_all(so.dump_dir);
  }

  TEST_CASE("block length mismatch is a shape error") {
    auto rc = small_run(1, 0.5);
    auto params = init_params<float>(rc.model, 1);
    AuxProjections<float> aux;
    auto ids = std::make_shared<const std::vector<TokenId>>(fixtures::random_tokens(2000, 256, 1));
    BatchIterator it(BlockStream(ids, 16, 1), 8, EpochMode::unbounded(), Stage::patch);
    RunState state;
    state.optimizer.attach(params.tensors());
    CHECK_THROWS_AS(run_stage(params, aux, rc.patch, 1, it, state, {}), ShapeError);
  }
}

TEST_SUITE("transfer") {
  TEST_CASE("parameters carry over exactly; aux and moments do not") {
    auto rc = small_run(10, 0.5);
    rc.patch.input_proj = rc.patch.output_proj = true;
    rc.train.token_warmup = 7;
    auto params = init_params<float>(rc.model, 8);
    auto aux = init_aux<float>(rc.model, rc.patch, 9);
    const auto ckpt = make_checkpoint(params, aux, rc.patch);
    auto t = transfer(ckpt, rc.model, rc.train, 5);
    CHECK(same_params(t.params, params));
    CHECK(t.optimizer.step_count() == 0);
    for (const auto& m : t.optimizer.first_moments())
      for (float v : m) CHECK(v == 0.0f);
    CHECK(t.optimizer.first_moments().size() == params.tensors().size());
    CHECK(t.schedule.warmup_steps == 7);
    CHECK(t.schedule.total_steps == 5);
    CHECK(t.schedule.lr_at(0) == 0.0);
  }

  TEST_CASE("architecture mismatch lists each field") {
    auto rc = small_run(10, 0.5);
    const auto ckpt = make_checkpoint(init_params<float>(rc.model, 1), AuxProjections<float>{}, rc.patch);
    auto other = rc.model;
    other.n_layers = 2;
    other.intermediate_size = 48;
    try {
      transfer(ckpt, other, rc.train, 5);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("n_layers") != std::string::npos);
      CHECK(msg.find("intermediate_size") != std::string::npos);
    }
  }

  TEST_CASE("transfer preserves the function at token level") {
    auto rc = small_run(10, 0.5);
    auto params = init_params<float>(rc.model, 2);
    const auto ids = encode(synthetic_text(3000, 2));
    const double before = eval_nll<float>(params, ids, 16);
    auto t = transfer(make_checkpoint(params, AuxProjections<float>{}, rc.patch), rc.model, rc.train, 5);
    CHECK(eval_nll<float>(t.params, ids, 16) == before);
  }
}
