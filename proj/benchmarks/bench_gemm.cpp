#include <benchmark/benchmark.h>

#include <bipoint/binarize.hpp>
#include <bipoint/harness.hpp>
#include <bipoint/model.hpp>
#include <bipoint/rng.hpp>

using namespace bipoint;

namespace {

std::vector<double> pm1(std::size_t n, std::uint64_t seed) {
  Xoshiro256 rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.coin() ? 1.0 : -1.0;
  return v;
}

void BM_XnorGemm(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const BitMatrix a = BitMatrix::pack(pm1(n * n, 1), n, n);
  const BitMatrix wt = BitMatrix::pack(pm1(n * n, 2), n, n);
  for (auto _ : st) benchmark::DoNotOptimize(xnor_gemm(a, wt));
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * n * n * n));
}

template <void (*Gemm)(const float*, const float*, float*, std::size_t, std::size_t, std::size_t)>
void BM_FloatGemm(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto av = pm1(n * n, 1), bv = pm1(n * n, 2);
  std::vector<float> a(av.begin(), av.end()), b(bv.begin(), bv.end()), c(n * n);
  for (auto _ : st) {
    Gemm(a.data(), b.data(), c.data(), n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * n * n * n));
}

void BM_Pack(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto v = pm1(n * n, 3);
  for (auto _ : st) benchmark::DoNotOptimize(BitMatrix::pack(v, n, n));
}

// deploy-style bi-linear layer: pack activations, xnor, scale
void BM_BiLinearForward(benchmark::State& st) {
  const auto rows = static_cast<std::size_t>(st.range(0));
  Xoshiro256 rng(4);
  BiLinearLayer layer(128, 1024, rng, true);
  std::vector<double> xv(rows * 128);
  for (auto& x : xv) x = rng.normal();
  const Tensor x = Tensor::from_values({rows, 128}, xv);
  layer.lsr_init(x);
  layer.set_mode(LayerMode::Deploy);
  NoGradGuard ng;
  for (auto _ : st) benchmark::DoNotOptimize(layer.forward(x));
}

}  // namespace

BENCHMARK(BM_XnorGemm)->Arg(256)->Arg(512)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FloatGemm<naive_gemm_f32>)->Name("BM_NaiveGemmF32")->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FloatGemm<blocked_gemm_f32>)->Name("BM_BlockedGemmF32")->Arg(256)->Arg(512)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Pack)->Arg(256)->Arg(1024);
BENCHMARK(BM_BiLinearForward)->Arg(1024)->Arg(16384)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
