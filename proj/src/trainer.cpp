#include "patchlm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "patchlm/metrics.hpp"

namespace patchlm {

using json = nlohmann::json;

double cost_ratio(std::size_t K, double lambda) {
  if (K == 0) throw ConfigError("patch size must be at least 1");
  if (!(lambda >= 0 && lambda <= 1)) throw ConfigError("lambda must lie in [0, 1]");
  return lambda / double(K) + 1.0 - lambda;
}

double flops_estimate(double n_params, double tokens) {
  if (n_params < 0 || tokens < 0) throw ConfigError("flops_estimate takes non-negative inputs");
  return 6.0 * n_params * tokens;
}

double TrainPlan::compute_units(std::uint64_t n_params) const {
  const double tpb = double(tokens_per_batch);
  return flops_estimate(double(n_params), double(patch_steps) * tpb / double(patch_size)) +
         flops_estimate(double(n_params), double(token_steps) * tpb);
}

double TrainPlan::token_only_compute_units(std::uint64_t n_params) const {
  return flops_estimate(double(n_params), double(total_steps) * double(tokens_per_batch));
}

namespace {

// N * lambda is computed in floating point; 2/3 of 3000 must give 2000, not 1999.
std::uint64_t floor_steps(double x) { return std::uint64_t(std::floor(x + 1e-9)); }

}  // namespace

TrainPlan make_plan(std::uint64_t total_steps, double lambda, std::size_t tokens_per_batch,
                    std::size_t K) {
  if (K == 0) throw ConfigError("patch size must be at least 1");
  if (!(lambda >= 0 && lambda <= 1)) throw ConfigError("lambda must lie in [0, 1]");
  TrainPlan plan;
  plan.total_steps = total_steps;
  plan.lambda = lambda;
  plan.patch_steps = std::min(total_steps, floor_steps(double(total_steps) * lambda));
  plan.token_steps = total_steps - plan.patch_steps;
  plan.tokens_per_batch = tokens_per_batch;
  plan.patch_size = K;
  return plan;
}

std::pair<double, double> epoch_plan(double epochs, double lambda) {
  if (!(epochs >= 1)) throw ConfigError("epoch budget must be at least 1");
  if (!(lambda >= 0 && lambda <= 1)) throw ConfigError("lambda must lie in [0, 1]");
  return {epochs * lambda, epochs * (1.0 - lambda)};
}

TrainPlan plan_for(const RunConfig& config, std::size_t train_tokens) {
  const auto& t = config.train;
  const auto& p = config.patch;
  if (t.steps != 0) return make_plan(t.steps, p.lambda, t.tokens_per_batch, p.patch_size);
  // Fractional epochs become partial passes by step count.
  const auto [patch_epochs, token_epochs] = epoch_plan(t.epochs, p.lambda);
  auto batches_per_epoch = [&](std::size_t block_length, std::size_t rows) {
    return double(train_tokens / block_length / rows);
  };
  TrainPlan plan;
  plan.lambda = p.lambda;
  plan.patch_size = p.patch_size;
  plan.tokens_per_batch = t.tokens_per_batch;
  plan.epochs = t.epochs;
  plan.patch_steps =
      p.lambda > 0 ? floor_steps(patch_epochs * batches_per_epoch(p.block_length(), config.patch_rows())) : 0;
  plan.token_steps = floor_steps(token_epochs * batches_per_epoch(p.context_tokens, config.token_rows()));
  plan.total_steps = plan.patch_steps + plan.token_steps;
  return plan;
}

std::string to_json_line(const MetricsRecord& r) {
  // ordered_json keeps the field order fixed so logs compare byte-for-byte.
  nlohmann::ordered_json j;
  j["event"] = r.event;
  j["stage"] = to_string(r.stage);
  j["step"] = r.step;
  j["stage_step"] = r.stage_step;
  j["tokens"] = r.tokens;
  j["compute_units"] = r.compute_units;
  j["loss"] = r.loss;
  j["lr"] = r.lr;
  j["grad_norm"] = r.grad_norm;
  if (r.wall_seconds) j["wall_seconds"] = *r.wall_seconds;
  return j.dump();
}

MetricsRecord parse_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad metrics line: ") + e.what());
  }
  MetricsRecord r;
  try {
    r.event = j.at("event").get<std::string>();
    const auto stage = j.at("stage").get<std::string>();
    if (stage != "patch" && stage != "token") throw FormatError("bad stage '" + stage + "'");
    r.stage = stage == "patch" ? Stage::patch : Stage::token;
    r.step = j.at("step").get<std::uint64_t>();
    r.stage_step = j.value("stage_step", std::uint64_t{0});
    r.tokens = j.at("tokens").get<std::uint64_t>();
    r.compute_units = j.at("compute_units").get<double>();
    r.loss = j.at("loss").get<double>();
    r.lr = j.value("lr", 0.0);
    r.grad_norm = j.value("grad_norm", 0.0);
    if (j.contains("wall_seconds")) r.wall_seconds = j["wall_seconds"].get<double>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad metrics record: ") + e.what());
  }
  return r;
}

void JsonlSink::write(const MetricsRecord& record) {
  out_ << to_json_line(record) << '\n';
  out_.flush();
}

std::size_t export_curves(std::istream& jsonl, std::ostream& csv) {
  csv << "stage,step,tokens,compute_units,loss\n";
  std::size_t rows = 0;
  std::string line;
  char buf[160];
  while (std::getline(jsonl, line)) {
    if (line.empty()) continue;
    const auto r = parse_json_line(line);
    if (r.event != "train") continue;
    std::snprintf(buf, sizeof(buf), "%s,%llu,%llu,%.17g,%.9g\n", to_string(r.stage).c_str(),
                  static_cast<unsigned long long>(r.step), static_cast<unsigned long long>(r.tokens),
                  r.compute_units, r.loss);
    csv << buf;
    ++rows;
  }
  return rows;
}

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::vector<TensorPtr<float>> trainable(const TransformerParams<float>& params,
                                        const AuxProjections<float>& aux) {
  auto list = params.tensors();
  for (const auto& [name, t] : aux.named()) list.push_back(t);
  return list;
}

[[noreturn]] void abort_non_finite(const TransformerParams<float>& params,
                                   const AuxProjections<float>& aux, const PatchConfig& patch,
                                   const RunState& state, double loss, double grad_norm, double lr,
                                   const std::filesystem::path& dump_dir) {
  std::ostringstream msg;
  msg << "non-finite training state in " << to_string(state.stage) << " stage at step "
      << state.stage_step + 1 << " (global " << state.global_step + 1 << "): loss=" << loss
      << " grad_norm=" << grad_norm << " lr=" << lr << " tokens=" << state.tokens;
  std::vector<std::string> bad;
  for (const auto& [name, t] : params.named()) {
    if (!t->all_finite()) bad.push_back(name);
  }
  for (const auto& [name, t] : aux.named()) {
    if (!t->all_finite()) bad.push_back(name);
  }
  if (!bad.empty()) {
    msg << "; non-finite parameters:";
    for (const auto& n : bad) msg << ' ' << n;
  }
  if (!dump_dir.empty()) {
    const auto path = dump_dir / "nan_dump.plmc";
    write_checkpoint(path, make_checkpoint(params, aux, patch));
    msg << "; state written to " << path.string();
  }
  throw NumericError(msg.str());
}

}  // namespace

void run_stage(TransformerParams<float>& params, AuxProjections<float>& aux,
               const PatchConfig& patch, std::uint64_t steps, BatchIterator& batches,
               RunState& state, const StageOptions& options) {
  const std::size_t divisor = state.stage == Stage::patch ? patch.patch_size : 1;
  const std::uint64_t n_params = param_count(params.config);
  const auto list = trainable(params, aux);
  Tape<float> tape;
  for (std::uint64_t s = 0; s < steps; ++s) {
    auto batch = batches.next();
    if (!batch) throw UsageError("batch iterator ran out before the planned step count");
    const std::size_t expected = state.stage == Stage::patch ? patch.block_length() : patch.context_tokens;
    if (batch->block_length != expected) {
      throw ShapeError("stage expects blocks of " + std::to_string(expected) + " tokens, iterator yields " +
                       std::to_string(batch->block_length));
    }
    for (const auto& t : list) t->zero_grad();
    auto loss = state.stage == Stage::patch
                    ? patch_level_loss(tape, params, aux, patch, batch->tokens, batch->rows)
                    : token_level_loss(tape, params, batch->tokens, batch->rows, batch->block_length);
    const double loss_value = loss->item();
    const double lr = state.schedule.lr_at(state.stage_step + 1);
    if (!std::isfinite(loss_value)) {
      tape.clear();
      abort_non_finite(params, aux, patch, state, loss_value, NAN, lr, options.dump_dir);
    }
    tape.backward(loss);
    const double grad_norm = clip_grad_global<float>(list, options.clip);
    if (!std::isfinite(grad_norm)) {
      abort_non_finite(params, aux, patch, state, loss_value, grad_norm, lr, options.dump_dir);
    }
    state.optimizer.step(list, lr);

    const std::uint64_t batch_tokens = batch->rows * batch->block_length;
    ++state.stage_step;
    ++state.global_step;
    state.tokens += batch_tokens;
    state.compute_units += flops_estimate(double(n_params), double(batch_tokens) / double(divisor));

    if (options.sink && state.global_step % options.log_interval == 0) {
      MetricsRecord rec;
      rec.stage = state.stage;
      rec.step = state.global_step;
      rec.stage_step = state.stage_step;
      rec.tokens = state.tokens;
      rec.compute_units = state.compute_units;
      rec.loss = loss_value;
      rec.lr = lr;
      rec.grad_norm = grad_norm;
      if (options.wall_start) rec.wall_seconds = now_seconds() - *options.wall_start;
      options.sink->write(rec);
    }
    if (options.after_step) options.after_step(state, params);
  }
  for (const auto& t : list) t->drop_grad();
}

TransferResult transfer(const Checkpoint& patch_checkpoint, const ModelConfig& expected,
                        const TrainConfig& train, std::uint64_t token_steps) {
  const auto diff = config_diff(expected, patch_checkpoint.model);
  if (!diff.empty()) {
    std::string msg = "checkpoint architecture does not match the token-level model:";
    for (const auto& line : diff) msg += "\n  " + line;
    throw ConfigError(msg);
  }
  const Checkpoint backbone = strip_aux(patch_checkpoint);
  TransferResult out{load_params<float>(backbone),
                     AdamW<float>(AdamWHyper{train.beta1, train.beta2, train.eps, train.weight_decay}),
                     LrSchedule{train.lr, train.effective_token_warmup(), token_steps, train.floor_fraction}};
  out.optimizer.attach(out.params.tensors());
  return out;
}

CorpusSplit load_run_corpus(const RunConfig& config) {
  Corpus corpus;
  if (!config.data.path.empty()) {
    corpus = load_corpus(config.data.path, config.data.kind);
  } else {
    corpus = Corpus{{TokenizerKind::byte, 256},
                    encode(synthetic_text(config.data.synthetic_bytes, config.data.synthetic_seed))};
  }
  if (corpus.tokenizer.vocab_size > config.model.vocab_size) {
    throw ConfigError("corpus vocabulary " + std::to_string(corpus.tokenizer.vocab_size) +
                      " exceeds model.vocab_size " + std::to_string(config.model.vocab_size));
  }
  return split_corpus(corpus.ids, config.data.eval_tokens);
}

TwoStageResult train_two_stage(const RunConfig& config, std::span<const TokenId> train_ids,
                               std::span<const TokenId> eval_ids, const TrainOptions& options) {
  config.validate();
  const auto& tc = config.train;
  const PatchConfig& patch = config.patch;
  const std::size_t T = patch.context_tokens;
  const std::optional<double> wall_start =
      tc.log_wall_clock ? std::optional<double>(now_seconds()) : std::nullopt;

  TwoStageResult result{plan_for(config, train_ids.size()), {}, {}, {}, {}};
  const TrainPlan& plan = result.plan;
  const AdamWHyper hyper{tc.beta1, tc.beta2, tc.eps, tc.weight_decay};
  auto ids = std::make_shared<const std::vector<TokenId>>(train_ids.begin(), train_ids.end());
  RunState& state = result.state;

  auto evaluate = [&](const TransformerParams<float>& params) {
    if (eval_ids.empty()) return;
    EvalPoint pt{state.stage, state.stage_step, state.global_step, state.tokens, state.compute_units,
                 eval_nll<float>(params, eval_ids, T, tc.eval_blocks)};
    result.evals.push_back(pt);
    if (options.sink) {
      MetricsRecord rec;
      rec.event = "eval";
      rec.stage = pt.stage;
      rec.step = pt.global_step;
      rec.stage_step = pt.stage_step;
      rec.tokens = pt.tokens;
      rec.compute_units = pt.compute_units;
      rec.loss = pt.nll;
      rec.lr = state.schedule.lr_at(state.stage_step);
      if (wall_start) rec.wall_seconds = now_seconds() - *wall_start;
      options.sink->write(rec);
    }
  };
  auto save = [&](const std::string& name, const TransformerParams<float>& params,
                  const AuxProjections<float>& aux) {
    if (options.out_dir.empty()) return;
    const auto path = options.out_dir / name;
    PatchConfig recorded = patch;
    if (aux.empty()) recorded.input_proj = recorded.output_proj = false;
    write_checkpoint(path, make_checkpoint(params, aux, recorded));
    result.checkpoints.push_back(path);
  };
  auto stage_options = [&](const AuxProjections<float>& aux) {
    StageOptions so;
    so.sink = options.sink;
    so.log_interval = tc.log_interval;
    so.clip = tc.clip;
    so.wall_start = wall_start;
    so.dump_dir = options.out_dir;
    so.after_step = [&, &aux = aux](const RunState& st, const TransformerParams<float>& p) {
      if (tc.checkpoint_interval != 0 && st.global_step % tc.checkpoint_interval == 0) {
        char name[40];
        std::snprintf(name, sizeof(name), "step_%08llu.plmc", static_cast<unsigned long long>(st.global_step));
        save(name, p, aux);
      }
      const bool interval_hit = tc.eval_interval != 0 && st.stage_step % tc.eval_interval == 0;
      const bool requested = st.stage == Stage::token &&
                             std::find(options.token_eval_steps.begin(), options.token_eval_steps.end(),
                                       st.stage_step) != options.token_eval_steps.end();
      const bool stage_end = st.stage_step == (st.stage == Stage::patch ? plan.patch_steps : plan.token_steps);
      if (interval_hit || requested || stage_end) evaluate(p);
      if (options.after_step) options.after_step(st, p);
    };
    return so;
  };

  TransformerParams<float> params = init_params<float>(config.model, tc.seed);

  if (plan.patch_steps > 0) {
    AuxProjections<float> aux = init_aux<float>(config.model, patch, tc.seed + 1);
    state.stage = Stage::patch;
    state.stage_step = 0;
    state.optimizer = AdamW<float>(hyper);
    state.optimizer.attach(trainable(params, aux));
    state.schedule = LrSchedule{tc.lr, tc.warmup, plan.patch_steps, tc.floor_fraction};
    if (tc.eval_interval != 0) evaluate(params);
    BatchIterator batches(BlockStream(ids, patch.block_length(), tc.seed), config.patch_rows(),
                          EpochMode::unbounded(), Stage::patch);
    run_stage(params, aux, patch, plan.patch_steps, batches, state, stage_options(aux));

    // Stage boundary: only the parameters cross over.
    const Checkpoint boundary = make_checkpoint(params, aux, patch);
    if (!options.out_dir.empty()) {
      const auto path = options.out_dir / "patch_stage.plmc";
      write_checkpoint(path, boundary);
      result.checkpoints.push_back(path);
    }
    auto moved = transfer(boundary, config.model, tc, plan.token_steps);
    params = std::move(moved.params);
    state.optimizer = std::move(moved.optimizer);
    state.schedule = moved.schedule;
  } else {
    state.optimizer = AdamW<float>(hyper);
    state.optimizer.attach(params.tensors());
    state.schedule = LrSchedule{tc.lr, tc.effective_token_warmup(), plan.token_steps, tc.floor_fraction};
  }

  state.stage = Stage::token;
  state.stage_step = 0;
  if (plan.token_steps > 0) {
    AuxProjections<float> none;
    evaluate(params);
    BatchIterator batches(BlockStream(ids, T, tc.seed + 1), config.token_rows(), EpochMode::unbounded(),
                          Stage::token);
    run_stage(params, none, patch, plan.token_steps, batches, state, stage_options(none));
  }
  save("final.plmc", params, {});
  result.params = std::move(params);
  return result;
}

}  // namespace patchlm
