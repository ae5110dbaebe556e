#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gpusim/diff/log.hpp"
#include "gpusim/runtime/session.hpp"

namespace gpusim {

// "functional", "functional-serial", "reference", "performance", optionally
// followed by "+fault" (e.g. "functional+bfe_sign_fill"). Throws ConfigError.
ExecutorConfig parse_executor(std::string_view spec);
std::string executor_name(const ExecutorConfig& e);

struct InstrumentedKernel {
  KernelObject kernel;  // original plus a trailing u64 log parameter
  uint32_t capacity = 0;
  uint32_t log_param_offset = 0;
};

// Records needed when every thread runs at most `budget` instructions.
uint64_t log_capacity_bound(const KernelObject& k, uint64_t threads, uint64_t budget);

// Marks every register-writing instruction as a log site. Throws
// ConfigError when capacity is below log_capacity_bound.
InstrumentedKernel instrument(const KernelObject& k, uint64_t threads, uint64_t budget, uint32_t capacity);

struct InstrumentedRun {
  std::vector<LogRecord> log;  // buffer order
  std::optional<std::string> fault;  // the kernel stopped on a machine fault
  DeviceMemory memory;              // final state, log buffer removed
};

// Runs one kernel instrumented on a copy of `pre`. The budget comes from a
// reference run of the same launch.
InstrumentedRun run_instrumented(const ExecutorConfig& exec, const KernelEnv& env, const DeviceMemory& pre);

// Runs a kernel on whatever memory the env points at.
void run_kernel_with(const ExecutorConfig& exec, KernelEnv env);

struct DivergenceReport {
  enum class Level : uint8_t { match, call, kernel, instruction };
  Level level = Level::match;

  int call = -1;  // index of the `call` marker, -1 before the first
  std::string call_name;
  std::string detail;  // what differed at the coarsest level

  uint64_t kernel_ordinal = 0;  // launch ordinal in the whole run
  std::string kernel;

  int instruction = -1;
  std::string opcode;  // e.g. "bfe"
  std::string instruction_text;
  Dim3 cta{0, 0, 0}, thread{0, 0, 0};
  uint32_t thread_linear = 0;
  std::string reg;
  std::optional<LogRecord> expected;  // from executor B
  std::optional<LogRecord> actual;    // from executor A

  std::string text() const;
  std::string json() const;
};

std::string_view level_name(DivergenceReport::Level l);

// The three-step localization: first failing call, first failing kernel
// in it, first differing register write in that kernel. B is trusted.
// Throws ConfigError when only one executor accepts the workload.
DivergenceReport compare_runs(const Manifest& m, const ExecutorConfig& a, const ExecutorConfig& b);

// Writes a standalone manifest (plus module and data files) under out_dir
// that reproduces the kernel-th launch (1-based) inside call `call`, with
// checks on every buffer the kernel changed. Returns the manifest path.
// Throws CaptureError for double-pointer parameters, RangeError when the
// run never reaches the launch.
std::filesystem::path extract_kernel_harness(const Manifest& m, int call, uint64_t kernel,
                                             const std::filesystem::path& out_dir);

}  // namespace gpusim
