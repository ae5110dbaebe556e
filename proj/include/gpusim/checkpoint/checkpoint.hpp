#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gpusim/runtime/session.hpp"

namespace gpusim {

// x: 1-based launch ordinal. M: 1-based CTA index in kernel x. t: number of
// CTAs frozen mid-flight starting at M. y: committed instructions per
// frozen CTA.
struct CheckpointPosition {
  uint64_t x = 1, M = 1, t = 0, y = 0;
  friend bool operator==(const CheckpointPosition&, const CheckpointPosition&) = default;
};

// "2,3,2,10" or "x=2,M=3,t=2,y=10". Throws ConfigError.
CheckpointPosition parse_position(std::string_view s);
std::string format_position(const CheckpointPosition& p);

using MemoryImage = std::map<uint64_t, Allocation>;

struct InflightCta {
  uint64_t linear_id = 0;
  std::optional<CtaState> state;  // unset: finished within the y budget
  friend bool operator==(const InflightCta&, const InflightCta&) = default;
};

struct CheckpointBundle {
  static constexpr uint16_t kVersion = 1;

  std::array<uint8_t, 32> manifest_hash{};
  CheckpointPosition position;
  std::vector<MemoryImage> kernel_images;  // after each kernel < x
  MemoryImage pre_kernel;                  // when kernel x starts
  MemoryImage frozen;                      // at the freeze
  uint64_t kernel_ctas = 0;                // CTA count of kernel x
  std::vector<InflightCta> inflight;       // CTAs M .. M+t-1
  StreamScheduler::State streams;
  uint64_t cursor = 0;  // directive being processed when kernel x ran

  friend bool operator==(const CheckpointBundle&, const CheckpointBundle&) = default;
};

std::vector<uint8_t> encode_bundle(const CheckpointBundle& b);
// Throws BundleError on bad magic, version, truncation or checksum.
CheckpointBundle decode_bundle(std::span<const uint8_t> bytes);
CheckpointBundle load_bundle(const std::filesystem::path& p);

// Runs the manifest functionally up to the position and captures the
// bundle. Throws RangeError when the position is past the workload.
CheckpointBundle checkpoint_run(const Manifest& m, const CheckpointPosition& pos);

// Makes a session skip everything before the checkpoint and continue from
// it. The bundle must outlive the session. Throws BundleError when the
// manifest does not hash to the bundle's.
void install_resume(Session& s, const CheckpointBundle& b);

}  // namespace gpusim
