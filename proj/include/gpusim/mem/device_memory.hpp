#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "gpusim/typed_value.hpp"

namespace gpusim {

// Raised by address resolution; the executors attach thread context.
struct MemoryFaultInfo {
  uint64_t address = 0;
  uint64_t length = 0;
  std::string reason;
};

class MemoryAccessFault : public std::exception {
 public:
  explicit MemoryAccessFault(MemoryFaultInfo info) : info_(std::move(info)) {}
  const char* what() const noexcept override { return info_.reason.c_str(); }
  const MemoryFaultInfo& info() const { return info_; }

 private:
  MemoryFaultInfo info_;
};

struct Allocation {
  std::string name;
  uint64_t base = 0;
  std::vector<uint8_t> bytes;

  uint64_t end() const { return base + bytes.size(); }
  friend bool operator==(const Allocation&, const Allocation&) = default;
};

// Flat 64-bit device address space made of disjoint, bounds-checked
// allocations. Copyable: a copy is a full snapshot.
class DeviceMemory {
 public:
  static constexpr uint64_t kBaseAddress = 0x10000000;
  static constexpr uint64_t kAlignment = 256;

  // Returns the base address. Names must be unique among live allocations.
  uint64_t allocate(const std::string& name, uint64_t size);
  void free(uint64_t base);

  const Allocation& resolve(uint64_t address, uint64_t length) const;
  Allocation& resolve(uint64_t address, uint64_t length);
  const Allocation* find(const std::string& name) const;
  Allocation* find(const std::string& name);
  bool contains(uint64_t address) const;

  void read(uint64_t address, std::span<uint8_t> out) const;
  void write(uint64_t address, std::span<const uint8_t> in);
  TypedValue load(uint64_t address, Tag tag) const;
  void store(uint64_t address, const TypedValue& v);
  // Returns the previous value. Safe against concurrent callers.
  uint32_t atomic_add_u32(uint64_t address, uint32_t value);

  const std::map<uint64_t, Allocation>& allocations() const { return allocs_; }
  uint64_t bytes_allocated() const;

  // Replaces contents allocation by allocation; the layout (names, bases,
  // sizes) must match.
  void restore_contents(const DeviceMemory& image) { restore_contents(image.allocs_); }
  void restore_contents(const std::map<uint64_t, Allocation>& image);

  friend bool operator==(const DeviceMemory&, const DeviceMemory&) = default;

 private:
  std::map<uint64_t, Allocation> allocs_;
  uint64_t next_base_ = kBaseAddress;
};

// Host or device side of a copy.
struct DevicePtr {
  uint64_t address = 0;
};
using MemRef = std::variant<std::span<uint8_t>, DevicePtr>;

enum class CopyDirection { host_to_device, device_to_host, device_to_device };

// Byte-exact copy. Zero-length copies are no-ops; overlapping
// device-to-device ranges are rejected. Throws MemoryError.
void memcpy(DeviceMemory& mem, CopyDirection dir, const MemRef& src, const MemRef& dst, uint64_t len);

// Little-endian scalar helpers shared by the executors and file formats.
TypedValue load_le(std::span<const uint8_t> bytes, Tag tag);
void store_le(std::span<uint8_t> bytes, const TypedValue& v);

}  // namespace gpusim
