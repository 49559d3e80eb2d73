// Reference (serial loops) vs fast (Eigen + OpenMP) kernels at training shapes.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "patchlm/kernels.hpp"

using namespace patchlm;
using namespace patchlm::kernels;

namespace {

std::vector<float> random_vec(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> d(0.f, 1.f);
  std::vector<float> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <bool Fast>
void BM_Gemm(benchmark::State& state) {
  const std::size_t m = std::size_t(state.range(0)), k = 128, n = std::size_t(state.range(1));
  auto a = random_vec(m * k, 1), b = random_vec(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    MatrixView<const float> av{a.data(), m, k, k}, bv{b.data(), k, n, n};
    if constexpr (Fast) {
      fast::gemm<float>(av, Trans::no, bv, Trans::no, view<float>(c, m, n), 1.f, 0.f);
    } else {
      reference::gemm<float>(av, Trans::no, bv, Trans::no, view<float>(c, m, n), 1.f, 0.f);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] =
      benchmark::Counter(2.0 * double(m * k * n), benchmark::Counter::kIsIterationInvariantRate,
                         benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Gemm<false>)->Name("gemm/reference")->Args({1024, 128})->Args({1024, 344})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gemm<true>)->Name("gemm/fast")->Args({1024, 128})->Args({1024, 344})->Args({4096, 256})->Unit(benchmark::kMillisecond);

template <bool Fast>
void BM_Attention(benchmark::State& state) {
  AttentionDims dims{4, std::size_t(state.range(0)), 4, 32};
  const std::size_t n = dims.batch * dims.seq * dims.width();
  auto q = random_vec(n, 3), k = random_vec(n, 4), v = random_vec(n, 5);
  std::vector<float> out(n), probs(dims.batch * dims.heads * dims.seq * dims.seq);
  for (auto _ : state) {
    if constexpr (Fast) {
      fast::causal_attention<float>(q, k, v, dims, probs, out);
    } else {
      reference::causal_attention<float>(q, k, v, dims, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_Attention<false>)->Name("attention/reference")->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Attention<true>)->Name("attention/fast")->Arg(256)->Unit(benchmark::kMillisecond);

template <bool Fast>
void BM_RmsNorm(benchmark::State& state) {
  const std::size_t rows = 4096, d = 128;
  auto x = random_vec(rows * d, 6);
  std::vector<float> w(d, 1.f), out(rows * d), inv(rows);
  for (auto _ : state) {
    if constexpr (Fast) {
      fast::rmsnorm<float>(x, w, 1e-5f, out, inv);
    } else {
      reference::rmsnorm<float>(x, w, 1e-5f, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_RmsNorm<false>)->Name("rmsnorm/reference");
BENCHMARK(BM_RmsNorm<true>)->Name("rmsnorm/fast");

template <bool Fast>
void BM_Rope(benchmark::State& state) {
  const std::size_t batch = 16, seq = 256, heads = 4, dh = 32;
  auto x = random_vec(batch * seq * heads * dh, 7);
  std::vector<float> out(x.size());
  std::vector<std::size_t> pos(seq);
  for (std::size_t i = 0; i < seq; ++i) pos[i] = i;
  for (auto _ : state) {
    if constexpr (Fast) {
      fast::rope<float>(x, seq, heads, dh, pos, 1e4, out, 1, false);
    } else {
      reference::rope<float>(x, seq, heads, dh, pos, 1e4, out);
    }
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_Rope<false>)->Name("rope/reference");
BENCHMARK(BM_Rope<true>)->Name("rope/fast");

template <bool Fast>
void BM_CrossEntropy(benchmark::State& state) {
  const std::size_t rows = 1024, V = 256, width = std::size_t(state.range(0));
  auto logits = random_vec(rows * V, 8);
  std::vector<std::size_t> sel(rows);
  std::vector<TokenId> targets(rows * width);
  for (std::size_t i = 0; i < rows; ++i) sel[i] = i;
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = TokenId((i * 37) % V);
  std::vector<float> lse(rows);
  MatrixView<const float> lv{logits.data(), rows, V, V};
  for (auto _ : state) {
    double s = Fast ? fast::cross_entropy_sum<float>(lv, sel, targets, width, lse)
                    : reference::cross_entropy_sum<float>(lv, sel, targets, width);
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_CrossEntropy<false>)->Name("cross_entropy/reference")->Arg(1)->Arg(4);
BENCHMARK(BM_CrossEntropy<true>)->Name("cross_entropy/fast")->Arg(1)->Arg(4);

}  // namespace

BENCHMARK_MAIN();
