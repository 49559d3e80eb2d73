#include "patchlm/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "patchlm/ops.hpp"
#include "patchlm/patching.hpp"

namespace patchlm {

template <class T>
double eval_nll(const TransformerParams<T>& params, std::span<const TokenId> ids,
                std::size_t block_length, std::size_t max_blocks, std::size_t batch_rows) {
  if (block_length < 2) throw ConfigError("eval block length must be at least 2");
  if (batch_rows == 0) throw ConfigError("eval batch must hold at least one block");
  std::size_t blocks = ids.size() / block_length;
  if (max_blocks != 0) blocks = std::min(blocks, max_blocks);
  if (blocks == 0) throw ConfigError("empty evaluation set");

  Tape<T> tape;
  tape.set_enabled(false);
  double total = 0;
  const std::size_t per_block = block_length - 1;
  for (std::size_t first = 0; first < blocks; first += batch_rows) {
    const std::size_t rows = std::min(batch_rows, blocks - first);
    auto tokens = ids.subspan(first * block_length, rows * block_length);
    auto emb = embed(tape, params, tokens, rows, block_length);
    const auto positions = iota_positions(block_length);
    auto logits = forward(tape, params, emb, positions);
    auto grid = next_patch_targets(tokens, rows, 1);
    const double mean = shared_head_loss(tape, logits, grid)->item();
    total += mean * double(rows * per_block);
  }
  return total / double(blocks * per_block);
}

double perplexity(double nll) {
  if (nll < 0) throw ConfigError("perplexity of a negative NLL");
  return std::exp(nll);
}

template <class T>
double activated_percent(std::span<const T> values, double threshold) {
  if (!(threshold > 0)) throw ConfigError("activation threshold must be positive");
  if (values.empty()) return 0.0;
  std::size_t hits = 0;
  for (T v : values) hits += std::abs(double(v)) > threshold ? 1 : 0;
  return 100.0 * double(hits) / double(values.size());
}

template <class T>
ActivationReport activation_rate(const TransformerParams<T>& params, std::span<const TokenId> tokens,
                                 std::size_t rows, std::size_t K, double threshold,
                                 ActivationSite site) {
  if (!(threshold > 0)) throw ConfigError("activation threshold must be positive");
  if (K == 0) throw ConfigError("patch size must be at least 1");
  if (rows == 0 || tokens.size() % rows != 0) throw ShapeError("activation batch is not [rows, L]");
  const std::size_t L = tokens.size() / rows;
  if (L % K != 0) throw ShapeError("activation batch length is not a multiple of K");

  ActivationReport report{threshold, K, site, std::vector<double>(params.layers.size(), 0.0)};
  Tape<T> tape;
  tape.set_enabled(false);
  auto x = embed(tape, params, tokens, rows, L);
  if (K > 1) x = patch_embed(tape, x, K);
  const auto positions = iota_positions(L / K);
  forward_hidden<T>(
      tape, params, x, positions,
      [&](std::size_t layer, const Tensor<T>& signal) {
        report.percent[layer] = activated_percent<T>(signal.data(), threshold);
      },
      site);
  return report;
}

std::string format_activation_report(const ActivationReport& report) {
  std::ostringstream out;
  out << "layer  activated%  (K=" << report.patch_size << ", |v| > " << report.threshold << ", "
      << (report.site == ActivationSite::ffn_output ? "ffn output" : "post residual") << ")\n";
  char line[64];
  for (std::size_t i = 0; i < report.percent.size(); ++i) {
    std::snprintf(line, sizeof(line), "%5zu  %10.4f\n", i, report.percent[i]);
    out << line;
  }
  return out.str();
}

#define PATCHLM_INSTANTIATE(T)                                                                      \
  template double eval_nll<T>(const TransformerParams<T>&, std::span<const TokenId>, std::size_t,   \
                              std::size_t, std::size_t);                                            \
  template double activated_percent<T>(std::span<const T>, double);                                 \
  template ActivationReport activation_rate<T>(const TransformerParams<T>&,                         \
                                               std::span<const TokenId>, std::size_t, std::size_t,  \
                                               double, ActivationSite);

PATCHLM_INSTANTIATE(float)
PATCHLM_INSTANTIATE(double)
#undef PATCHLM_INSTANTIATE

}  // namespace patchlm
