// patchlm: train, evaluate and inspect patch-level language models.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "patchlm/checkpoint.hpp"
#include "patchlm/config.hpp"
#include "patchlm/metrics.hpp"
#include "patchlm/trainer.hpp"

namespace fs = std::filesystem;
using namespace patchlm;

namespace {

struct Args {
  std::string config;
  std::string checkpoint;
  std::string out;
  std::string log;
  std::optional<std::size_t> patch_size;
  std::optional<double> lambda;
  std::optional<std::uint64_t> seed;
  double threshold = 0.5;
  std::string site = "ffn_output";
  std::size_t rows = 8;
};

RunConfig config_with_overrides(const Args& a) {
  RunConfig c = load_config(a.config);
  if (a.patch_size) c.patch.patch_size = *a.patch_size;
  if (a.lambda) c.patch.lambda = *a.lambda;
  if (a.seed) c.train.seed = *a.seed;
  return c;
}

int cmd_train(const Args& a) {
  const RunConfig config = config_with_overrides(a);
  config.validate();
  const fs::path out = a.out.empty() ? fs::path("run") : fs::path(a.out);
  fs::create_directories(out);
  const auto split = load_run_corpus(config);
  std::ofstream log(out / "metrics.jsonl", std::ios::trunc);
  if (!log) throw FormatError("cannot write " + (out / "metrics.jsonl").string());
  JsonlSink sink(log);

  const TrainPlan plan = plan_for(config, split.train.size());
  std::printf("plan: %llu steps = %llu patch (K=%zu) + %llu token, %zu tokens/batch, cost ratio %.4g\n",
              static_cast<unsigned long long>(plan.total_steps),
              static_cast<unsigned long long>(plan.patch_steps), plan.patch_size,
              static_cast<unsigned long long>(plan.token_steps), plan.tokens_per_batch,
              cost_ratio(plan.patch_size, plan.lambda));
  if (!plan.inference_compatible()) {
    std::fprintf(stderr, "warning: lambda=1 leaves no token-level stage; the model is not trained for next-token decoding\n");
  }
  TrainOptions options;
  options.sink = &sink;
  options.out_dir = out;
  const auto result = train_two_stage(config, split.train, split.eval, options);
  for (const auto& e : result.evals) {
    std::printf("eval %-5s step %8llu  tokens %12llu  nll %.5f  ppl %.4f\n", to_string(e.stage).c_str(),
                static_cast<unsigned long long>(e.global_step), static_cast<unsigned long long>(e.tokens),
                e.nll, perplexity(e.nll));
  }
  std::printf("checkpoint: %s\n", (out / "final.plmc").string().c_str());
  return 0;
}

int cmd_eval(const Args& a) {
  const RunConfig config = config_with_overrides(a);
  const auto params = load_params<float>(read_checkpoint(a.checkpoint));
  const auto split = load_run_corpus(config);
  const double nll = eval_nll<float>(params, split.eval, config.patch.context_tokens, config.train.eval_blocks);
  std::printf("nll %.6f\nppl %.6f\n", nll, perplexity(nll));
  return 0;
}

int cmd_report_activations(const Args& a) {
  const RunConfig config = config_with_overrides(a);
  const auto params = load_params<float>(read_checkpoint(a.checkpoint));
  const auto split = load_run_corpus(config);
  const std::size_t K = config.patch.patch_size;
  const std::size_t L = K * config.patch.context_tokens;
  if (split.eval.size() < a.rows * L) {
    throw ConfigError("eval split holds fewer than " + std::to_string(a.rows) + " blocks of " + std::to_string(L));
  }
  if (a.site != "ffn_output" && a.site != "post_residual") {
    throw ConfigError("--site must be ffn_output or post_residual");
  }
  const auto site = a.site == "ffn_output" ? ActivationSite::ffn_output : ActivationSite::post_residual;
  const auto report = activation_rate<float>(params, std::span<const TokenId>(split.eval).first(a.rows * L),
                                             a.rows, K, a.threshold, site);
  std::fputs(format_activation_report(report).c_str(), stdout);
  return 0;
}

int cmd_cost(const Args& a) {
  std::size_t K = 4;
  double lambda = 2.0 / 3.0;
  std::optional<RunConfig> config;
  if (!a.config.empty()) {
    config = config_with_overrides(a);
    K = config->patch.patch_size;
    lambda = config->patch.lambda;
  } else {
    if (a.patch_size) K = *a.patch_size;
    if (a.lambda) lambda = *a.lambda;
  }
  std::printf("cost_ratio %.6g\n", cost_ratio(K, lambda));
  if (config && config->train.steps != 0) {
    const auto plan = make_plan(config->train.steps, lambda, config->train.tokens_per_batch, K);
    const auto n = param_count(config->model);
    std::printf("params %llu\n", static_cast<unsigned long long>(n));
    std::printf("patch_steps %llu\ntoken_steps %llu\n", static_cast<unsigned long long>(plan.patch_steps),
                static_cast<unsigned long long>(plan.token_steps));
    std::printf("flops_estimate %.6e\n", plan.compute_units(n));
    std::printf("flops_token_only %.6e\n", plan.token_only_compute_units(n));
  }
  return 0;
}

int cmd_export_curves(const Args& a) {
  std::ifstream in(a.log);
  if (!in) throw FormatError("cannot open " + a.log);
  std::size_t rows = 0;
  if (a.out.empty() || a.out == "-") {
    rows = export_curves(in, std::cout);
  } else {
    std::ofstream out(a.out, std::ios::trunc);
    if (!out) throw FormatError("cannot write " + a.out);
    rows = export_curves(in, out);
  }
  std::fprintf(stderr, "%zu rows\n", rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch-level language model training"};
  app.require_subcommand(1);
  Args a;

  auto* train = app.add_subcommand("train", "Run the two-stage plan from a config file");
  train->add_option("--config", a.config, "Config file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", a.out, "Output directory for logs and checkpoints");
  train->add_option("--seed", a.seed, "Override train.seed");
  train->add_option("--patch-size", a.patch_size, "Override patch.K");
  train->add_option("--lambda", a.lambda, "Override patch.lambda");

  auto* eval = app.add_subcommand("eval", "Print held-out NLL and perplexity of a checkpoint");
  eval->add_option("--config", a.config, "Config file (data section)")->required()->check(CLI::ExistingFile);
  eval->add_option("--checkpoint", a.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);

  auto* act = app.add_subcommand("report-activations", "Per-layer FFN activation percentages");
  act->add_option("--config", a.config, "Config file (data section)")->required()->check(CLI::ExistingFile);
  act->add_option("--checkpoint", a.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  act->add_option("--patch-size", a.patch_size, "Patch size K used to pool the input");
  act->add_option("--threshold", a.threshold, "Activation threshold (strict |v| > t)");
  act->add_option("--site", a.site, "ffn_output or post_residual");
  act->add_option("--rows", a.rows, "Evaluation blocks");

  auto* cost = app.add_subcommand("cost", "Print the cost ratio and compute estimate");
  cost->add_option("--config", a.config, "Config file")->check(CLI::ExistingFile);
  cost->add_option("--patch-size", a.patch_size, "Patch size K");
  cost->add_option("--lambda", a.lambda, "Fraction of steps spent on patches");

  auto* curves = app.add_subcommand("export-curves", "Convert a JSON-lines log to CSV");
  curves->add_option("--log", a.log, "metrics.jsonl")->required()->check(CLI::ExistingFile);
  curves->add_option("--out", a.out, "CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(a);
    if (*eval) return cmd_eval(a);
    if (*act) return cmd_report_activations(a);
    if (*cost) return cmd_cost(a);
    if (*curves) return cmd_export_curves(a);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
