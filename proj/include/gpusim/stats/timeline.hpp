#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace gpusim {

struct BankCounters {
  uint32_t reads = 0;
  uint32_t writes = 0;
  bool pending = false;  // queue non-empty or bank busy this cycle
  friend bool operator==(const BankCounters&, const BankCounters&) = default;
};

constexpr size_t kIssueClasses = 33;  // W0 (idle) .. W32

struct StatSample {
  uint64_t cycle = 0;
  std::vector<uint32_t> per_shader;   // committed instructions per core
  std::vector<BankCounters> per_bank;
  std::array<uint32_t, kIssueClasses> breakdown{};

  uint64_t global_ipc() const;
  friend bool operator==(const StatSample&, const StatSample&) = default;
};

struct TimelineShape {
  uint32_t n_cores = 1;
  uint32_t n_banks = 1;
  uint32_t issue_width = 1;
  friend bool operator==(const TimelineShape&, const TimelineShape&) = default;
};

// Append-only per-cycle samples, stored as a compact byte stream:
// varint cycle delta, then sparse (index, value) lists for shaders, banks
// and issue classes. A million mostly-idle cycles fit in a few MB.
class Timeline {
 public:
  explicit Timeline(TimelineShape shape = {});

  // Throws RangeError on a non-increasing cycle and Error when the sample
  // breaks a per-cycle invariant (shape, breakdown sum, per-core bound).
  void record(const StatSample& s);

  const TimelineShape& shape() const { return shape_; }
  uint64_t size() const { return count_; }
  bool empty() const { return count_ == 0; }
  uint64_t first_cycle() const { return first_; }
  uint64_t last_cycle() const { return last_; }
  uint64_t total_committed() const { return committed_; }
  size_t storage_bytes() const { return bytes_.capacity(); }

  // Decodes samples in order into a reused buffer.
  void for_each(const std::function<void(const StatSample&)>& fn) const;

  std::vector<uint8_t> serialize() const;
  static Timeline deserialize(std::span<const uint8_t> bytes);

  friend bool operator==(const Timeline&, const Timeline&) = default;

 private:
  TimelineShape shape_;
  std::vector<uint8_t> bytes_;
  uint64_t count_ = 0;
  uint64_t first_ = 0;
  uint64_t last_ = 0;
  uint64_t committed_ = 0;
};

// Per-window aggregates, one column per window.
struct ViewTables {
  std::vector<uint64_t> window_end;  // last cycle of each window
  std::vector<uint64_t> window_len;  // cycles covered
  std::vector<double> gipc;
  std::vector<std::vector<double>> sipc;       // [core][window]
  std::vector<std::vector<double>> dram_eff;   // [bank][window]
  std::vector<std::vector<double>> dram_util;  // [bank][window]
  std::vector<std::vector<double>> breakdown;  // [class][window], mean slots per cycle
};

// Window w covers cycles [first + w*window, first + (w+1)*window); the last
// window may be shorter.
ViewTables aggregate(const Timeline& t, uint64_t window);

// Writes gipc.csv, sipc.csv, dram_eff.csv, dram_util.csv and
// warp_breakdown.csv into out_dir. Throws ConfigError when out_dir cannot
// be written.
void export_views(const Timeline& t, uint64_t window, const std::filesystem::path& out_dir);

double dram_efficiency(uint64_t commands, uint64_t pending_cycles);
double dram_utilization(uint64_t commands, uint64_t total_cycles);

}  // namespace gpusim
