// Serial vs OpenMP CTA execution of the same grid. Both must leave the
// same memory behind; a mismatch aborts the benchmark.

#include <benchmark/benchmark.h>

#include <random>

#include "rig.hpp"

using namespace gpusim;

namespace {

struct Workload {
  gpusim_test::Rig rig = gpusim_test::Rig::from_corpus("control_flow.ptx");
  uint32_t ctas;

  explicit Workload(uint32_t n) : ctas(n) {
    const uint64_t elems = uint64_t{n} * 128;
    rig.buffer("in", elems * 4);
    rig.buffer("out", elems * 4);
    std::mt19937 rng(7);
    std::vector<uint32_t> in(elems);
    for (auto& v : in) v = rng();
    rig.fill("in", in);
  }

  KernelEnv env() { return rig.env("divergent_loop", {ctas, 1, 1}, {128, 1, 1}, {std::string("in"), std::string("out")}); }
};

void BM_grid_serial(benchmark::State& state) {
  Workload w(static_cast<uint32_t>(state.range(0)));
  uint64_t committed = 0;
  for (auto _ : state) committed = run_grid_serial(w.env()).committed;
  state.counters["warp_insts"] = benchmark::Counter(double(committed), benchmark::Counter::kIsIterationInvariantRate);
}

void BM_grid_openmp(benchmark::State& state) {
  Workload w(static_cast<uint32_t>(state.range(0)));
  Workload check(static_cast<uint32_t>(state.range(0)));
  run_grid_serial(check.env());
  uint64_t committed = 0;
  for (auto _ : state) committed = run_grid(w.env()).committed;
  if (w.rig.read<uint32_t>("out") != check.rig.read<uint32_t>("out")) state.SkipWithError("parallel grid differs from serial");
  state.counters["warp_insts"] = benchmark::Counter(double(committed), benchmark::Counter::kIsIterationInvariantRate);
}

}  // namespace

BENCHMARK(BM_grid_serial)->Arg(8)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_grid_openmp)->Arg(8)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
