#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gpusim/core/fault.hpp"
#include "gpusim/mem/device_memory.hpp"
#include "gpusim/mem/texture.hpp"
#include "gpusim/ptx/module.hpp"

namespace gpusim {

constexpr unsigned kWarpSize = 32;

struct ThreadContext {
  Dim3 tid;
  std::vector<std::optional<TypedValue>> regs;  // unset = never written
  std::vector<uint8_t> local;

  friend bool operator==(const ThreadContext&, const ThreadContext&) = default;
};

struct SimtEntry {
  int pc = 0;
  int rpc = kNoReconvergence;
  uint32_t mask = 0;
  friend bool operator==(const SimtEntry&, const SimtEntry&) = default;
};

struct WarpState {
  uint32_t id = 0;
  uint32_t exited = 0;  // lanes that executed exit (or never existed)
  std::vector<SimtEntry> stack;
  bool at_barrier = false;    // parked on bar.sync
  bool barrier_pass = false;  // released; the next bar.sync step commits
  uint64_t committed = 0;

  bool done() const { return stack.empty(); }
  uint32_t active_mask() const { return stack.empty() ? 0 : stack.back().mask & ~exited; }
  int pc() const { return stack.empty() ? -1 : stack.back().pc; }

  friend bool operator==(const WarpState&, const WarpState&) = default;
};

struct CtaState {
  Dim3 ctaid;
  uint64_t linear_id = 0;
  std::vector<WarpState> warps;
  std::vector<ThreadContext> threads;
  std::vector<uint8_t> shared;
  uint64_t committed = 0;
  uint32_t rr_cursor = 0;  // functional scheduler position

  bool done() const;
  // No warp is parked at, or holding a release for, a barrier.
  bool at_safe_point() const;

  friend bool operator==(const CtaState&, const CtaState&) = default;
};

// Everything a kernel execution reads besides the CTA state itself.
struct KernelEnv {
  const KernelObject* kernel = nullptr;
  std::string module_id;
  DeviceMemory* global = nullptr;
  const TextureRegistry* textures = nullptr;
  std::span<const uint8_t> params;
  const std::map<std::string, uint64_t>* symbols = nullptr;  // module globals -> device address
  Dim3 grid;
  Dim3 block;
  InjectedFault fault = InjectedFault::none;
};

Dim3 cta_coords(uint64_t linear, const Dim3& grid);
CtaState make_cta(const KernelEnv& env, uint64_t linear_id);

struct StepResult {
  enum class Kind : uint8_t { committed, barrier_wait, idle };
  Kind kind = Kind::idle;
  int pc = -1;
  OpClass cls = OpClass::alu;
  uint32_t active_mask = 0;  // lanes on the stack top when issued
  uint32_t exec_mask = 0;    // lanes whose guard passed
  bool is_store = false;
  uint8_t access_bytes = 0;
  std::vector<uint64_t> global_addrs;  // one per executing lane for global/tex/atom traffic
};

// Executes one instruction for the warp. Machine faults are thrown as
// MachineFault with full context.
void step_warp(CtaState& cta, WarpState& warp, const KernelEnv& env, StepResult& out);

// When every warp of the CTA is parked at the barrier, hands each one a
// release token and returns true.
bool release_barrier(CtaState& cta);

std::string barrier_deadlock_report(const KernelEnv& env, const CtaState& cta);

}  // namespace gpusim
