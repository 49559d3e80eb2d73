#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "patchlm/data.hpp"
#include "patchlm/model.hpp"

namespace patchlm {

// Mean next-token NLL over every non-initial position of the floor(n / T)
// blocks packed from `ids` (at most max_blocks of them, 0 = all). No gradient
// is recorded; blocks are evaluated `batch_rows` at a time and summed in order.
template <class T>
double eval_nll(const TransformerParams<T>& params, std::span<const TokenId> ids,
                std::size_t block_length, std::size_t max_blocks = 0, std::size_t batch_rows = 8);

double perplexity(double nll);

struct ActivationReport {
  double threshold = 0.5;
  std::size_t patch_size = 1;
  ActivationSite site = ActivationSite::ffn_output;
  std::vector<double> percent;  // one entry per layer, in [0, 100]
};

// Percentage of values with |v| > threshold (strict).
template <class T>
double activated_percent(std::span<const T> values, double threshold);

// Runs the model over tokens [rows, K * positions]; for K > 1 the K-token
// groups are mean-pooled into patches first. Counts FFN signals per layer
// across all neuron-position pairs of the batch.
template <class T>
ActivationReport activation_rate(const TransformerParams<T>& params, std::span<const TokenId> tokens,
                                 std::size_t rows, std::size_t K, double threshold,
                                 ActivationSite site = ActivationSite::ffn_output);

std::string format_activation_report(const ActivationReport& report);

}  // namespace patchlm
