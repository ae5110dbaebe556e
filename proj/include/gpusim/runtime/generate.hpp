#pragma once

#include <cstdint>
#include <string>

namespace gpusim {

// A random multi-stream workload over the vec_add kernel: launches and
// device copies on several streams, events recorded and waited on across
// them, occasional syncs. Waits only name events that were already
// recorded, so the result never deadlocks. Same seed, same text.
std::string random_stream_manifest(uint64_t seed, const std::string& vecadd_ptx, unsigned ops = 40);

}  // namespace gpusim
