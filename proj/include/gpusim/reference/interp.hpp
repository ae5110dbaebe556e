#pragma once

#include <cstdint>

#include "gpusim/core/warp.hpp"

namespace gpusim {

// Slow scalar executor: every thread runs on its own, to completion or to
// the next bar.sync, in thread order. There are no warps, no SIMT stack,
// no masks. Stands in for hardware in the diff workflow and is the oracle
// for SIMT equivalence.
//
// A barrier releases once every thread that has not exited is waiting.
// Arithmetic goes through the same ops layer as the SIMT core (which is
// checked against its own brute-force oracles); operand decoding, control
// flow, memory access and logging are separate code.
struct ReferenceResult {
  uint64_t threads = 0;
  uint64_t instructions = 0;  // per-thread dynamic count, summed
  uint64_t max_thread_instructions = 0;
};

ReferenceResult run_reference(const KernelEnv& env);

}  // namespace gpusim
