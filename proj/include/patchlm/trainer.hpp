#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "patchlm/checkpoint.hpp"
#include "patchlm/config.hpp"
#include "patchlm/data.hpp"
#include "patchlm/model.hpp"
#include "patchlm/optim.hpp"
#include "patchlm/patching.hpp"

namespace patchlm {

// Total cost of the two-stage plan relative to token-level training: lambda/K + 1 - lambda.
double cost_ratio(std::size_t K, double lambda);

// C = 6 N D
double flops_estimate(double n_params, double tokens);

struct TrainPlan {
  std::uint64_t total_steps = 0;
  double lambda = 0;
  std::uint64_t patch_steps = 0;
  std::uint64_t token_steps = 0;
  std::size_t tokens_per_batch = 0;
  std::size_t patch_size = 1;
  std::optional<double> epochs;

  // A run that never trains at token level cannot be used for ordinary decoding.
  bool inference_compatible() const { return token_steps > 0; }
  // 6 N D, patch-stage tokens counted at 1/K.
  double compute_units(std::uint64_t n_params) const;
  // The same step budget spent entirely at token level.
  double token_only_compute_units(std::uint64_t n_params) const;
};

// patch_steps = floor(N * lambda); the remainder goes to the token stage.
TrainPlan make_plan(std::uint64_t total_steps, double lambda, std::size_t tokens_per_batch,
                    std::size_t K);

// (N * lambda, N * (1 - lambda)) epochs.
std::pair<double, double> epoch_plan(double epochs, double lambda);

// Resolves train.steps or train.epochs against a training split of `train_tokens` ids.
TrainPlan plan_for(const RunConfig& config, std::size_t train_tokens);

struct MetricsRecord {
  std::string event = "train";  // "train" or "eval"
  Stage stage = Stage::token;
  std::uint64_t step = 0;        // global optimizer steps completed
  std::uint64_t stage_step = 0;  // steps completed in this stage
  std::uint64_t tokens = 0;
  double compute_units = 0;
  double loss = 0;               // training loss, or eval NLL for eval records
  double lr = 0;
  double grad_norm = 0;
  std::optional<double> wall_seconds;
};

std::string to_json_line(const MetricsRecord& record);
MetricsRecord parse_json_line(const std::string& line);

class MetricsSink {
 public:
  virtual ~MetricsSink() = default;
  virtual void write(const MetricsRecord& record) = 0;
};

class JsonlSink : public MetricsSink {
 public:
  explicit JsonlSink(std::ostream& out) : out_(out) {}
  void write(const MetricsRecord& record) override;

 private:
  std::ostream& out_;
};

class MemorySink : public MetricsSink {
 public:
  void write(const MetricsRecord& record) override { records.push_back(record); }
  std::vector<MetricsRecord> records;
};

// JSON-lines log -> CSV `stage,step,tokens,compute_units,loss` over the train
// records. Returns the number of data rows written.
std::size_t export_curves(std::istream& jsonl, std::ostream& csv);

struct RunState {
  Stage stage = Stage::patch;
  std::uint64_t stage_step = 0;
  std::uint64_t global_step = 0;
  AdamW<float> optimizer;
  LrSchedule schedule;
  std::uint64_t tokens = 0;
  double compute_units = 0;
};

using StepHook = std::function<void(const RunState&, const TransformerParams<float>&)>;

struct StageOptions {
  MetricsSink* sink = nullptr;
  std::uint64_t log_interval = 1;
  double clip = 1.0;
  StepHook after_step;  // called after every optimizer step
  std::optional<double> wall_start;  // steady-clock seconds; logged when set
  std::filesystem::path dump_dir;    // NaN dumps go here when non-empty
};

// Runs `steps` optimizer steps of one stage, drawing batches from `batches`.
// Patch stage: embed -> patch -> forward -> next-patch loss; token stage:
// embed -> forward -> next-token loss. Then backward, clip, AdamW with lr_at.
// A non-finite loss or gradient throws NumericError after dumping the state.
void run_stage(TransformerParams<float>& params, AuxProjections<float>& aux,
               const PatchConfig& patch, std::uint64_t steps, BatchIterator& batches,
               RunState& state, const StageOptions& options);

struct TransferResult {
  TransformerParams<float> params;
  AdamW<float> optimizer;
  LrSchedule schedule;
};

// Parameters only: aux projections dropped, optimizer moments zero, schedule
// at step 0 with a fresh warmup over `token_steps`. Refuses a checkpoint whose
// architecture differs from `expected`, listing each differing field.
TransferResult transfer(const Checkpoint& patch_checkpoint, const ModelConfig& expected,
                        const TrainConfig& train, std::uint64_t token_steps);

struct EvalPoint {
  Stage stage = Stage::token;
  std::uint64_t stage_step = 0;
  std::uint64_t global_step = 0;
  std::uint64_t tokens = 0;
  double compute_units = 0;
  double nll = 0;
};

struct TrainOptions {
  MetricsSink* sink = nullptr;
  std::filesystem::path out_dir;  // checkpoints; nothing written when empty
  std::vector<std::uint64_t> token_eval_steps;  // extra evaluations by token-stage step
  StepHook after_step;
};

struct TwoStageResult {
  TrainPlan plan;
  TransformerParams<float> params;
  RunState state;
  std::vector<EvalPoint> evals;
  std::vector<std::filesystem::path> checkpoints;
};

// Patch stage for floor(N * lambda) steps, transfer, token stage for the rest.
TwoStageResult train_two_stage(const RunConfig& config, std::span<const TokenId> train_ids,
                               std::span<const TokenId> eval_ids, const TrainOptions& options);

// Loads data.path or generates synthetic text, then splits off the eval tail.
CorpusSplit load_run_corpus(const RunConfig& config);

}  // namespace patchlm
