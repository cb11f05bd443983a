// Microbenchmarks for the hot paths: discount arithmetic, memory retrieval
// scaling, and whole-day simulation throughput in both execution modes.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <string>
#include <vector>

#include "townsim/economy.hpp"
#include "townsim/engine.hpp"
#include "townsim/memory.hpp"
#include "townsim/rng.hpp"
#include "townsim/world.hpp"

namespace {

using namespace townsim;

void bm_final_price(benchmark::State& state) {
  std::uint64_t x = 9;
  for (auto _ : state) {
    x = splitmix64(x);
    const Cents base = static_cast<Cents>(x % 100000);
    const double rate = static_cast<double>(x % 100) / 100.0;
    benchmark::DoNotOptimize(final_price(base, rate));
  }
}
BENCHMARK(bm_final_price);

void bm_retrieve(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  MemoryStream stream("Bench Agent");
  std::uint64_t x = 7;
  for (int i = 0; i < n; ++i) {
    MemoryEntry e;
    e.at = SimTime{1 + i / 24, i % 24};
    x = splitmix64(x);
    e.kind = static_cast<MemoryKind>(x % 4);
    e.content = "entry " + std::to_string(i);
    if (e.kind == MemoryKind::purchase) e.structured["location"] = "Shop " + std::to_string(x % 8);
    stream.ingest(std::move(e), SimTime{1 + i / 24, i % 24}, 24);
  }
  RetrievalQuery q;
  q.now = SimTime{1 + n / 24, 12};
  MemoryConfig cfg;
  const std::map<std::string, double> rel;
  for (auto _ : state) {
    benchmark::DoNotOptimize(stream.retrieve(q, cfg, 24, rel));
  }
  state.SetComplexityN(n);
}
BENCHMARK(bm_retrieve)->RangeMultiplier(4)->Range(64, 16384)->Complexity();

void bm_reference_day(benchmark::State& state) {
  const Scenario scenario = load_scenario(std::string(TOWNSIM_SCENARIO_DIR) + "/reference.json");
  RunOptions opt;
  opt.days = 1;
  opt.mode = state.range(0) == 0 ? RunMode::deterministic : RunMode::parallel;
  for (auto _ : state) {
    benchmark::DoNotOptimize(run_simulation(scenario, opt));
  }
}
BENCHMARK(bm_reference_day)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
