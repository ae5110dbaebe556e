#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gpusim/core/warp.hpp"
#include "gpusim/stats/timeline.hpp"

namespace gpusim {

struct TimingConfig {
  uint32_t n_cores = 28;
  uint32_t issue_width = 2;
  uint32_t max_ctas_per_core = 8;
  uint32_t max_threads_per_core = 2048;

  // latencies by opcode class, cycles until the warp may issue again
  uint32_t lat_alu = 4;
  uint32_t lat_mul = 6;
  uint32_t lat_div = 20;
  uint32_t lat_shared = 24;
  uint32_t lat_local = 24;
  uint32_t lat_param = 4;
  uint32_t lat_branch = 4;

  uint32_t n_banks = 24;
  uint32_t interleave_bytes = 256;
  uint32_t segment_bytes = 128;  // coalescing unit, one DRAM command each
  uint32_t mem_latency = 120;    // added to bank service for load replies
  uint32_t bank_busy_cycles = 2;

  uint64_t watchdog_horizon = 200000;
  bool watchdog = true;

  void validate() const;  // throws ConfigError
  TimelineShape shape() const { return {n_cores, n_banks, issue_width}; }
  friend bool operator==(const TimingConfig&, const TimingConfig&) = default;
};

// JSON with any subset of the fields above; latencies may also be given as
// {"latency": {"alu": 4, ...}}. Unknown keys are rejected.
TimingConfig parse_timing_config(const std::string& json_text);
TimingConfig load_timing_config(const std::filesystem::path& path);
std::string timing_config_json(const TimingConfig& c);

// One CTA to run: fresh by linear id, or restored from a checkpoint.
struct CtaWork {
  uint64_t linear_id = 0;
  std::optional<CtaState> restored;
};

struct KernelTiming {
  uint64_t start_cycle = 0;
  uint64_t cycles = 0;
  uint64_t committed = 0;
  uint64_t requests = 0;  // DRAM commands enqueued
  std::vector<uint64_t> bank_commands;
};

// In-order SIMT cores with loose round-robin warp scheduling and a banked
// DRAM without caches. Instructions execute functionally at issue; timing
// only decides when a warp may issue next.
class TimingEngine {
 public:
  explicit TimingEngine(TimingConfig cfg, Timeline* timeline = nullptr);

  // Runs the CTAs in list order to completion, including DRAM drain.
  // Throws DeadlockError with a stall report when nothing commits for
  // watchdog_horizon cycles while warps are resident.
  KernelTiming run_kernel(const KernelEnv& env, std::vector<CtaWork> work);

  uint64_t cycle() const { return cycle_; }
  const TimingConfig& config() const { return cfg_; }

 private:
  TimingConfig cfg_;
  Timeline* timeline_;
  uint64_t cycle_ = 0;
};

std::vector<CtaWork> fresh_work(uint64_t first, uint64_t last);  // [first, last)

}  // namespace gpusim
