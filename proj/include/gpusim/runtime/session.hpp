#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gpusim/core/grid.hpp"
#include "gpusim/runtime/manifest.hpp"
#include "gpusim/runtime/streams.hpp"
#include "gpusim/stats/timeline.hpp"
#include "gpusim/timing/engine.hpp"

namespace gpusim {

enum class ExecMode : uint8_t {
  functional,         // SIMT core, CTAs in parallel
  functional_serial,  // SIMT core, CTAs one by one
  reference,          // per-thread scalar interpreter
  performance,        // SIMT core under the timing engine
};

std::string_view exec_mode_name(ExecMode m);
ExecMode parse_exec_mode(std::string_view s);  // throws ConfigError

struct ExecutorConfig {
  ExecMode mode = ExecMode::functional;
  InjectedFault fault = InjectedFault::none;
  TimingConfig timing;
};

// Result of comparing a buffer with its oracle file.
struct CheckResult {
  std::string buffer;
  std::string oracle;
  int line = 0;
  bool passed = false;
  std::string summary;  // first differing offsets when failed
};

// Everything a launch needs, resolved against the session state.
struct LaunchContext {
  uint64_t ordinal = 0;  // 1-based, execution order
  size_t directive = 0;
  int call = -1;         // index of the enclosing `call` marker, -1 before any
  const Launch* launch = nullptr;
  std::string module;
  const KernelObject* kernel = nullptr;
  std::vector<uint8_t> params;
  KernelEnv env;  // points into the session
};

// Lets checkpoint/diff stop a run from inside a hook.
class StopRun : public std::exception {
 public:
  const char* what() const noexcept override { return "run stopped"; }
};

// Interprets a manifest against one device. Not thread-safe; one session
// per run.
class Session {
 public:
  Session(const Manifest& m, ExecutorConfig exec);
  ~Session();

  // Runs every directive and the final implicit sync. Returns false when a
  // hook stopped the run.
  bool run();

  struct Hooks {
    // Return true when the hook executed (or skipped) the kernel itself.
    std::function<bool(Session&, LaunchContext&)> before_launch;
    std::function<void(Session&, const LaunchContext&)> after_launch;
    // Runs before directive i, after any sync the directive implies.
    std::function<void(Session&, size_t)> before_directive;
    std::function<void(Session&)> at_end;
  };
  Hooks hooks;

  // Output directory for dump directives; unset means dumps are skipped.
  std::optional<std::filesystem::path> dump_dir;

  const Manifest& manifest() const { return manifest_; }
  const ExecutorConfig& exec() const { return exec_; }
  DeviceMemory& memory() { return mem_; }
  const DeviceMemory& memory() const { return mem_; }
  TextureRegistry& textures() { return textures_; }
  const std::map<std::string, std::vector<uint8_t>>& host_buffers() const { return host_; }
  const std::map<std::string, PtxModule>& modules() const { return modules_; }
  const std::map<std::string, std::string>& module_paths() const { return module_paths_; }
  const std::map<std::string, std::map<std::string, uint64_t>>& symbols() const { return symbols_; }
  const StreamScheduler& streams() const { return streams_; }
  const std::vector<CheckResult>& checks() const { return checks_; }
  bool checks_passed() const;
  uint64_t launches_executed() const { return launches_; }
  uint64_t committed() const { return committed_; }
  int current_call() const { return call_; }
  size_t cursor() const { return cursor_; }  // index of the directive being processed

  // Performance mode state.
  Timeline& timeline() { return *timeline_; }
  const Timeline& timeline() const { return *timeline_; }
  TimingEngine& engine() { return *engine_; }
  const TimingEngine& engine() const { return *engine_; }
  const std::vector<KernelTiming>& kernel_timings() const { return timings_; }

  // Runs a kernel with this session's executor; used by hooks that replace
  // the default launch path.
  void execute_kernel(const KernelEnv& env);
  // Same, for an explicit CTA list (checkpoint resume). Reference mode has
  // no CTA state and rejects restored work.
  void execute_ctas(const KernelEnv& env, std::vector<CtaWork> work);

  // Reads or writes a named buffer, host or device.
  std::vector<uint8_t> buffer_bytes(const std::string& name) const;

 private:
  void directive(size_t i);
  void issue_launch(size_t i, const Launch& l);
  void run_command(const StreamCommand& c);
  void sync();
  uint64_t resolve_device(const BufRef& r, uint64_t len, const std::string& what) const;

  const Manifest& manifest_;
  ExecutorConfig exec_;
  DeviceMemory mem_;
  TextureRegistry textures_;
  std::map<std::string, std::vector<uint8_t>> host_;
  std::map<std::string, PtxModule> modules_;
  std::map<std::string, std::string> module_paths_;
  std::map<std::string, std::map<std::string, uint64_t>> symbols_;
  StreamScheduler streams_;
  std::vector<size_t> payload_directive_;  // stream payload -> directive index
  std::vector<int> payload_call_;
  std::vector<std::vector<uint8_t>> payload_params_;  // packed at issue time
  std::vector<CheckResult> checks_;
  std::unique_ptr<Timeline> timeline_;
  std::unique_ptr<TimingEngine> engine_;
  std::vector<KernelTiming> timings_;
  uint64_t launches_ = 0;
  uint64_t committed_ = 0;
  int call_ = -1;
  size_t cursor_ = 0;
};

// Packs launch arguments per the kernel signature. Throws LaunchError on
// size or type mismatches.
std::vector<uint8_t> pack_params(const KernelObject& k, const Launch& l,
                                 const std::function<uint64_t(const BufRef&)>& address_of);

// "3 bytes differ, first at offset 12: expected 0x01, got 0x00"
std::string describe_first_difference(std::span<const uint8_t> expected, std::span<const uint8_t> actual);

}  // namespace gpusim
