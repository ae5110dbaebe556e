#include <doctest.h>

#include <bit>
#include <numeric>

#include "gpusim/core/grid.hpp"
#include "rig.hpp"

using namespace gpusim;
using gpusim_test::Rig;

namespace {

const char* kHeader = ".version 6.0\n.target sm_61\n.address_size 64\n";

TypedValue u32(uint32_t v) { return TypedValue::from_bits(Tag::u32, v); }

const char* kStoreConst = R"(
.visible .entry store_const(.param .u64 out)
{
  .reg .u64 %rd<2>;
  ld.param.u64 %rd1, [out];
  st.global.u32 [%rd1], 1234;
  exit;
}
)";

const char* kBlockIdx = R"(
.visible .entry block_idx(.param .u64 out)
{
  .reg .u32 %r<2>;
  .reg .u64 %rd<4>;
  mov.u32 %r1, %ctaid.x;
  ld.param.u64 %rd1, [out];
  mul.wide.u32 %rd2, %r1, 4;
  add.u64 %rd3, %rd1, %rd2;
  st.global.u32 [%rd3], %r1;
  exit;
}
)";

// lanes 16..31 take the branch
const char* kDiamond = R"(
.visible .entry diamond(.param .u64 out)
{
  .reg .u32 %r<4>;
  .reg .pred %p<2>;
  .reg .u64 %rd<4>;
  mov.u32 %r1, %tid.x;
  setp.ge.u32 %p1, %r1, 16;
  @%p1 bra THEN;
  mov.u32 %r2, 7;
  bra.uni JOIN;
THEN:
  mov.u32 %r2, 9;
JOIN:
  ld.param.u64 %rd1, [out];
  mul.wide.u32 %rd2, %r1, 4;
  add.u64 %rd3, %rd1, %rd2;
  st.global.u32 [%rd3], %r2;
  exit;
}
)";

const char* kUniform = R"(
.visible .entry uniform(.param .u64 out)
{
  .reg .u32 %r<4>;
  .reg .pred %p<2>;
  .reg .u64 %rd<2>;
  mov.u32 %r1, %ntid.x;
  setp.eq.u32 %p1, %r1, 32;
  @%p1 bra SKIP;
  mov.u32 %r1, 0;
SKIP:
  ld.param.u64 %rd1, [out];
  exit;
}
)";

const char* kBarrier = R"(
.visible .entry barrier(.param .u64 out)
{
  .reg .u32 %r<2>;
  mov.u32 %r1, %tid.x;
  bar.sync 0;
  add.u32 %r1, %r1, 1;
  exit;
}
)";

const char* kFaulty = R"(
.visible .entry faulty(.param .u64 out)
{
  .reg .u32 %r<4>;
  .reg .u64 %rd<2>;
  mov.u32 %r1, %tid.x;
  mov.u32 %r2, %ctaid.x;
  sub.u32 %r3, %r1, 5;
  div.u32 %r3, %r2, %r3;
  exit;
}
)";

const char* kUnwritten = R"(
.visible .entry unwritten()
{
  .reg .u32 %r<4>;
  add.u32 %r1, %r2, 1;
  exit;
}
)";

std::string src(const char* body) { return std::string(kHeader) + body; }

}  // namespace

TEST_CASE("one thread stores a constant") {
  Rig rig(src(kStoreConst));
  rig.buffer("out", 4);
  const auto env = rig.env("store_const", {1, 1, 1}, {1, 1, 1}, {std::string("out")});
  const GridResult g = run_grid(env);
  CHECK(rig.read<uint32_t>("out")[0] == 1234);
  CHECK(g.committed == 3);
  CHECK(g.ctas.size() == 1);
}

TEST_CASE("two CTAs write their block index") {
  Rig rig(src(kBlockIdx));
  rig.buffer("out", 8);
  run_grid(rig.env("block_idx", {2, 1, 1}, {1, 1, 1}, {std::string("out")}));
  CHECK(rig.read<uint32_t>("out") == std::vector<uint32_t>{0, 1});
}

TEST_CASE("vector add over 1024 elements, 4 CTAs of 256") {
  Rig rig = Rig::from_corpus("vecadd.ptx");
  const uint32_t n = 1024;
  std::vector<float> a(n), b(n);
  for (uint32_t i = 0; i < n; ++i) {
    a[i] = static_cast<float>(i) * 0.25f;
    b[i] = 1000.0f - static_cast<float>(i) / 3.0f;
  }
  for (auto name : {"a", "b", "c"}) rig.buffer(name, 4 * n);
  rig.fill("a", a);
  rig.fill("b", b);
  run_grid(rig.env("vec_add", {4, 1, 1}, {256, 1, 1}, {std::string("a"), std::string("b"), std::string("c"), u32(n)}));
  const auto c = rig.read<float>("c");
  for (uint32_t i = 0; i < n; ++i) REQUIRE(std::bit_cast<uint32_t>(c[i]) == std::bit_cast<uint32_t>(a[i] + b[i]));
}

TEST_CASE("diamond divergence pushes disjoint entries and reconverges") {
  Rig rig(src(kDiamond));
  rig.buffer("out", 128);
  const auto env = rig.env("diamond", {1, 1, 1}, {32, 1, 1}, {std::string("out")});
  CtaState cta = make_cta(env, 0);
  WarpState& w = cta.warps[0];
  StepResult r;
  step_warp(cta, w, env, r);  // mov
  step_warp(cta, w, env, r);  // setp
  REQUIRE(w.stack.size() == 1);
  step_warp(cta, w, env, r);  // @%p1 bra
  CHECK(r.exec_mask == 0xFFFF0000u);
  REQUIRE(w.stack.size() == 3);
  const SimtEntry& taken = w.stack[2];
  const SimtEntry& not_taken = w.stack[1];
  CHECK(taken.mask == 0xFFFF0000u);
  CHECK(not_taken.mask == 0x0000FFFFu);
  CHECK((taken.mask & not_taken.mask) == 0);
  CHECK((taken.mask | not_taken.mask) == w.stack[0].mask);
  CHECK(taken.rpc == not_taken.rpc);
  CHECK(w.stack[0].pc == taken.rpc);
  const int join = taken.rpc;
  // run until the warp is back at the join with the full mask
  int guard = 0;
  while (!(w.stack.size() == 1 && w.pc() == join) && guard++ < 20) step_warp(cta, w, env, r);
  CHECK(w.stack.size() == 1);
  CHECK(w.active_mask() == 0xFFFFFFFFu);
  run_cta(cta, env);
  const auto out = rig.read<uint32_t>("out");
  for (uint32_t i = 0; i < 32; ++i) CHECK(out[i] == (i >= 16 ? 9u : 7u));
}

TEST_CASE("uniform branch does not touch the stack") {
  Rig rig(src(kUniform));
  rig.buffer("out", 4);
  const auto env = rig.env("uniform", {1, 1, 1}, {32, 1, 1}, {std::string("out")});
  CtaState cta = make_cta(env, 0);
  WarpState& w = cta.warps[0];
  StepResult r;
  step_warp(cta, w, env, r);
  step_warp(cta, w, env, r);
  step_warp(cta, w, env, r);
  CHECK(w.stack.size() == 1);
  CHECK(w.pc() == 4);
}

TEST_CASE("partial warps only run existing lanes") {
  Rig rig(src(kBlockIdx));
  rig.buffer("out", 4);
  const auto env = rig.env("block_idx", {1, 1, 1}, {40, 1, 1}, {std::string("out")});
  CtaState cta = make_cta(env, 0);
  REQUIRE(cta.warps.size() == 2);
  CHECK(cta.warps[1].active_mask() == 0xFFu);
}

TEST_CASE("bar.sync waits for every warp") {
  Rig rig(src(kBarrier));
  rig.buffer("out", 4);
  const auto env = rig.env("barrier", {1, 1, 1}, {64, 1, 1}, {std::string("out")});
  CtaState cta = make_cta(env, 0);
  StepResult r;
  step_warp(cta, cta.warps[0], env, r);
  const uint64_t before = cta.committed;
  step_warp(cta, cta.warps[0], env, r);
  CHECK(r.kind == StepResult::Kind::barrier_wait);
  CHECK(cta.committed == before);
  CHECK(cta.warps[0].at_barrier);
  CHECK(!release_barrier(cta));
  step_warp(cta, cta.warps[1], env, r);
  step_warp(cta, cta.warps[1], env, r);
  CHECK(r.kind == StepResult::Kind::barrier_wait);
  CHECK(release_barrier(cta));
  step_warp(cta, cta.warps[0], env, r);
  CHECK(r.kind == StepResult::Kind::committed);
  CHECK(cta.warps[0].pc() == 2);
  CHECK(run_cta(cta, env) == CtaRunStatus::completed);
  CHECK(cta.committed == 2 * 4);
}

TEST_CASE("a barrier after a warp exits is a deadlock, not a hang") {
  Rig rig = Rig::from_corpus("deadlock.ptx");
  rig.buffer("out", 256);
  const auto env = rig.env("early_exit_barrier", {1, 1, 1}, {64, 1, 1}, {std::string("out")});
  try {
    run_grid_serial(env);
    FAIL("expected a deadlock");
  } catch (const DeadlockError& e) {
    const std::string what = e.what();
    CHECK(what.find("bar.sync") != std::string::npos);
    CHECK(what.find("warp 0: waiting") != std::string::npos);
    CHECK(what.find("warp 1: exited") != std::string::npos);
  }
}

TEST_CASE("machine faults carry full context") {
  Rig rig(src(kFaulty));
  rig.buffer("out", 4);
  const auto env = rig.env("faulty", {3, 1, 1}, {32, 1, 1}, {std::string("out")});
  try {
    run_grid(env);
    FAIL("expected a fault");
  } catch (const MachineFault& f) {
    const auto& r = f.record();
    CHECK(r.kind == FaultKind::divide_by_zero);
    CHECK(r.kernel == "faulty");
    CHECK(r.module_id == "rig.ptx");
    CHECK(r.instruction == 3);
    CHECK(r.opcode_text.find("div.u32") != std::string::npos);
    CHECK(r.block_idx == Dim3{0, 0, 0});
    CHECK(r.thread_idx == Dim3{5, 0, 0});
  }
  Rig rig2(src(kUnwritten));
  try {
    run_grid_serial(rig2.env("unwritten", {1, 1, 1}, {1, 1, 1}, {}));
    FAIL("expected a fault");
  } catch (const MachineFault& f) {
    CHECK(f.record().kind == FaultKind::unwritten_register);
  }
}

TEST_CASE("launch validation") {
  Rig rig(src(kStoreConst));
  rig.buffer("out", 4);
  auto env = rig.env("store_const", {1, 1, 1}, {1, 1, 1}, {std::string("out")});
  env.grid = {0, 1, 1};
  CHECK_THROWS_AS(run_grid(env), LaunchError);
  env.grid = {1, 1, 1};
  env.block = {2048, 1, 1};
  CHECK_THROWS_AS(run_grid(env), LaunchError);
  env.block = {1, 1, 1};
  env.params = std::span<const uint8_t>(rig.params).first(4);
  CHECK_THROWS_AS(run_grid(env), LaunchError);
}

TEST_CASE("serial and parallel grids agree, traces are deterministic") {
  auto run = [](bool parallel, std::vector<std::tuple<uint64_t, uint32_t, int, uint32_t>>* trace) {
    Rig rig = Rig::from_corpus("control_flow.ptx");
    const uint32_t n = 512;
    std::vector<uint32_t> in(n);
    for (uint32_t i = 0; i < n; ++i) in[i] = i * 2654435761u;
    rig.buffer("in", 4 * n);
    rig.buffer("out", 4 * n);
    rig.fill("in", in);
    const auto env = rig.env("loop_break", {4, 1, 1}, {128, 1, 1}, {std::string("in"), std::string("out")});
    if (parallel) {
      run_grid(env);
    } else {
      StepObserver obs = [&](const CtaState& c, const WarpState& w, const StepResult& r) {
        trace->emplace_back(c.linear_id, w.id, r.pc, r.exec_mask);
      };
      run_grid_serial(env, &obs);
    }
    return rig.mem;
  };
  std::vector<std::tuple<uint64_t, uint32_t, int, uint32_t>> t1, t2;
  const DeviceMemory a = run(false, &t1);
  const DeviceMemory b = run(false, &t2);
  const DeviceMemory c = run(true, nullptr);
  CHECK(!t1.empty());
  CHECK(t1 == t2);
  CHECK(a == b);
  CHECK(a == c);
}

TEST_CASE("child masks partition the parent at every divergence and are restored at reconvergence") {
  Rig rig = Rig::from_corpus("control_flow.ptx");
  const uint32_t n = 256;
  std::vector<uint32_t> in(n);
  for (uint32_t i = 0; i < n; ++i) in[i] = (i * 7919u) ^ (i << 3);
  rig.buffer("in", 4 * n);
  rig.buffer("out", 4 * n);
  rig.fill("in", in);
  for (const char* k : {"diamond_select", "nested_diamond", "divergent_loop", "loop_break", "early_exit", "switch_chain"}) {
    CAPTURE(k);
    const auto env = rig.env(k, {2, 1, 1}, {128, 1, 1}, {std::string("in"), std::string("out")});
    struct Pending {
      size_t depth;
      int rpc;
      uint32_t mask;
    };
    std::map<std::pair<uint64_t, uint32_t>, std::vector<Pending>> pending;
    std::map<std::pair<uint64_t, uint32_t>, std::vector<SimtEntry>> last;
    uint64_t divergences = 0, reconvergences = 0;
    StepObserver obs = [&](const CtaState& c, const WarpState& w, const StepResult& r) {
      const auto key = std::make_pair(c.linear_id, w.id);
      // the stack as this step saw it, after the same normalization step_warp applies
      std::vector<SimtEntry> pre = last.contains(key) ? last[key] : std::vector<SimtEntry>{{0, kNoReconvergence, ~0u}};
      while (!pre.empty() && ((pre.back().mask & ~w.exited) == 0 || pre.back().pc == pre.back().rpc)) pre.pop_back();
      auto& open = pending[key];
      if (r.cls == OpClass::branch && r.exec_mask != 0 && r.exec_mask != r.active_mask) {
        ++divergences;
        const size_t p = pre.size();
        const int rpc = env.kernel->reconv_pc[static_cast<size_t>(r.pc)];
        const bool parked = rpc != kNoReconvergence && w.stack.size() >= p && w.stack[p - 1].pc == rpc;
        uint32_t seen = 0;
        for (size_t i = parked ? p : p - 1; i < w.stack.size(); ++i) {
          const uint32_t m = w.stack[i].mask & ~w.exited;
          REQUIRE((m & seen) == 0);
          REQUIRE((m & ~r.active_mask) == 0);
          seen |= m;
        }
        if (parked) {
          REQUIRE((w.stack[p - 1].mask & r.active_mask) == r.active_mask);
          open.push_back({p, rpc, r.active_mask});
        }
      }
      while (!open.empty() && open.back().depth > w.stack.size()) open.pop_back();
      if (!open.empty() && open.back().depth == w.stack.size() && w.pc() == open.back().rpc) {
        ++reconvergences;
        REQUIRE(w.active_mask() == (open.back().mask & ~w.exited));
        open.pop_back();
      }
      last[key] = w.stack;
    };
    run_grid_serial(env, &obs);
    CHECK(divergences > 0);
    if (std::string(k) != "early_exit") CHECK(reconvergences > 0);
  }
}
