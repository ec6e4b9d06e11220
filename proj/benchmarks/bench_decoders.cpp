#include <benchmark/benchmark.h>

#include <map>

#include "gdmae/autograd.hpp"
#include "gdmae/bench.hpp"

using namespace gdmae;

namespace {

constexpr std::array<std::size_t, 3> kDims{128, 256, 256};
constexpr std::size_t kWidth = 128;

const BenchScene& scene(std::size_t tokens) {
  static std::map<std::size_t, BenchScene> cache;
  auto it = cache.find(tokens);
  if (it == cache.end()) it = cache.emplace(tokens, make_bench_scene(tokens, kDims, 0.75, 0)).first;
  return it->second;
}

void BM_GenerativePrepared(benchmark::State& state) {
  const auto& s = scene(static_cast<std::size_t>(state.range(0)));
  Rng rng(1);
  const GenerativeDecoder dec(kDims, kWidth, 0, rng);
  const PreparedGenerativeDecoder prepared(dec, s.extents);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(prepared.decode(s.enc, s.masked));
}

void BM_GenerativeLazy(benchmark::State& state) {
  const auto& s = scene(static_cast<std::size_t>(state.range(0)));
  Rng rng(1);
  const GenerativeDecoder dec(kDims, kWidth, 0, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(dec.decode(s.enc, s.masked, s.extents));
}

void BM_Baseline(benchmark::State& state) {
  const auto& s = scene(static_cast<std::size_t>(state.range(0)));
  Rng rng(1);
  const BaselineDecoder dec(kDims, kWidth, 0, 1, 8, 8, 2, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(dec.decode(s.enc, s.visible, s.masked, s.extents[0]));
}

}  // namespace

BENCHMARK(BM_GenerativePrepared)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GenerativeLazy)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Baseline)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
