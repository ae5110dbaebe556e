#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "gpusim/core/warp.hpp"

namespace gpusim {

enum class CtaRunStatus : uint8_t { completed, frozen };

// Called after every committed step in functional mode.
using StepObserver = std::function<void(const CtaState&, const WarpState&, const StepResult&)>;

// Runs a CTA with warps interleaved round-robin at barrier granularity.
// With a budget, stops at the first safe point where the CTA has committed
// at least `budget` instructions. Throws DeadlockError when every live warp
// waits on a barrier that can never be released.
CtaRunStatus run_cta(CtaState& cta, const KernelEnv& env, std::optional<uint64_t> budget = std::nullopt,
                     const StepObserver* observer = nullptr);

struct CtaOutcome {
  Dim3 ctaid;
  uint64_t committed = 0;
  bool completed = false;
  friend bool operator==(const CtaOutcome&, const CtaOutcome&) = default;
};

struct GridResult {
  std::vector<CtaOutcome> ctas;  // row-major block order
  uint64_t committed = 0;
  friend bool operator==(const GridResult&, const GridResult&) = default;
};

// Row-major CTA order, one at a time. The reference for run_grid.
GridResult run_grid_serial(const KernelEnv& env, const StepObserver* observer = nullptr);

// CTAs in parallel (OpenMP). Results equal run_grid_serial for race-free
// kernels; on a fault, the lowest faulting CTA's fault is rethrown.
GridResult run_grid(const KernelEnv& env);

// Checks dims and parameter buffer size against the kernel signature.
void validate_launch(const KernelEnv& env);

}  // namespace gpusim
