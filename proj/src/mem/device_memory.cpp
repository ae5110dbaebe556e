#include "gpusim/mem/device_memory.hpp"

#include <atomic>
#include <cstring>
#include <sstream>

#include "gpusim/error.hpp"

namespace gpusim {

namespace {

std::string hex(uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

[[noreturn]] void fault(uint64_t address, uint64_t length, const std::string& why) {
  throw MemoryAccessFault({address, length, why + " at " + hex(address) + " (" + std::to_string(length) + " bytes)"});
}

}  // namespace

uint64_t DeviceMemory::allocate(const std::string& name, uint64_t size) {
  if (find(name)) throw MemoryError("allocation '" + name + "' already exists");
  const uint64_t base = next_base_;
  Allocation a;
  a.name = name;
  a.base = base;
  a.bytes.assign(size, 0);
  allocs_.emplace(base, std::move(a));
  // leave a guard gap so off-by-one accesses fault instead of landing in a neighbor
  const uint64_t span = std::max<uint64_t>(size, 1) + kAlignment;
  next_base_ = (base + span + kAlignment - 1) / kAlignment * kAlignment;
  return base;
}

void DeviceMemory::free(uint64_t base) {
  if (allocs_.erase(base) == 0) throw MemoryError("free of unknown allocation " + hex(base));
}

const Allocation& DeviceMemory::resolve(uint64_t address, uint64_t length) const {
  auto it = allocs_.upper_bound(address);
  if (it == allocs_.begin()) fault(address, length, "access outside any allocation");
  --it;
  const Allocation& a = it->second;
  if (address < a.base || address - a.base > a.bytes.size() || length > a.bytes.size() - (address - a.base)) {
    if (address >= a.base && address < a.end())
      fault(address, length, "out-of-bounds access to '" + a.name + "'");
    fault(address, length, "access outside any allocation");
  }
  return a;
}

Allocation& DeviceMemory::resolve(uint64_t address, uint64_t length) {
  return const_cast<Allocation&>(static_cast<const DeviceMemory&>(*this).resolve(address, length));
}

const Allocation* DeviceMemory::find(const std::string& name) const {
  for (const auto& [base, a] : allocs_)
    if (a.name == name) return &a;
  return nullptr;
}

Allocation* DeviceMemory::find(const std::string& name) {
  for (auto& [base, a] : allocs_)
    if (a.name == name) return &a;
  return nullptr;
}

bool DeviceMemory::contains(uint64_t address) const {
  auto it = allocs_.upper_bound(address);
  if (it == allocs_.begin()) return false;
  --it;
  return address < it->second.end();
}

void DeviceMemory::read(uint64_t address, std::span<uint8_t> out) const {
  if (out.empty()) return;
  const Allocation& a = resolve(address, out.size());
  std::memcpy(out.data(), a.bytes.data() + (address - a.base), out.size());
}

void DeviceMemory::write(uint64_t address, std::span<const uint8_t> in) {
  if (in.empty()) return;
  Allocation& a = resolve(address, in.size());
  std::memcpy(a.bytes.data() + (address - a.base), in.data(), in.size());
}

TypedValue DeviceMemory::load(uint64_t address, Tag tag) const {
  const unsigned n = width_bytes(tag);
  if (address % n != 0) fault(address, n, "misaligned load");
  const Allocation& a = resolve(address, n);
  return load_le(std::span<const uint8_t>(a.bytes).subspan(address - a.base, n), tag);
}

void DeviceMemory::store(uint64_t address, const TypedValue& v) {
  const unsigned n = width_bytes(v.tag);
  if (address % n != 0) fault(address, n, "misaligned store");
  Allocation& a = resolve(address, n);
  store_le(std::span<uint8_t>(a.bytes).subspan(address - a.base, n), v);
}

uint32_t DeviceMemory::atomic_add_u32(uint64_t address, uint32_t value) {
  if (address % 4 != 0) fault(address, 4, "misaligned atomic");
  Allocation& a = resolve(address, 4);
  auto* p = reinterpret_cast<uint32_t*>(a.bytes.data() + (address - a.base));
  std::atomic_ref<uint32_t> ref(*p);
  return ref.fetch_add(value, std::memory_order_relaxed);
}

uint64_t DeviceMemory::bytes_allocated() const {
  uint64_t n = 0;
  for (const auto& [base, a] : allocs_) n += a.bytes.size();
  return n;
}

void DeviceMemory::restore_contents(const std::map<uint64_t, Allocation>& image) {
  if (image.size() != allocs_.size()) throw MemoryError("memory image layout mismatch (allocation count)");
  auto it = allocs_.begin();
  for (const auto& [base, a] : image) {
    if (it->first != base || it->second.name != a.name || it->second.bytes.size() != a.bytes.size())
      throw MemoryError("memory image layout mismatch at '" + a.name + "'");
    it->second.bytes = a.bytes;
    ++it;
  }
}

void memcpy(DeviceMemory& mem, CopyDirection dir, const MemRef& src, const MemRef& dst, uint64_t len) {
  if (len == 0) return;
  const bool src_host = std::holds_alternative<std::span<uint8_t>>(src);
  const bool dst_host = std::holds_alternative<std::span<uint8_t>>(dst);
  const bool ok = (dir == CopyDirection::host_to_device && src_host && !dst_host) ||
                  (dir == CopyDirection::device_to_host && !src_host && dst_host) ||
                  (dir == CopyDirection::device_to_device && !src_host && !dst_host);
  if (!ok) throw MemoryError("memcpy operands do not match the copy direction");
  try {
    switch (dir) {
      case CopyDirection::host_to_device: {
        auto s = std::get<std::span<uint8_t>>(src);
        if (s.size() < len) throw MemoryError("memcpy: host source shorter than copy length");
        mem.write(std::get<DevicePtr>(dst).address, s.first(len));
        break;
      }
      case CopyDirection::device_to_host: {
        auto d = std::get<std::span<uint8_t>>(dst);
        if (d.size() < len) throw MemoryError("memcpy: host destination shorter than copy length");
        mem.read(std::get<DevicePtr>(src).address, d.first(len));
        break;
      }
      case CopyDirection::device_to_device: {
        const uint64_t s = std::get<DevicePtr>(src).address;
        const uint64_t d = std::get<DevicePtr>(dst).address;
        const Allocation& sa = mem.resolve(s, len);
        mem.resolve(d, len);
        if (s < d + len && d < s + len) throw MemoryError("memcpy: overlapping device-to-device ranges in '" + sa.name + "'");
        std::vector<uint8_t> tmp(len);
        mem.read(s, tmp);
        mem.write(d, tmp);
        break;
      }
    }
  } catch (const MemoryAccessFault& f) {
    throw MemoryError("memcpy: " + f.info().reason);
  }
}

TypedValue load_le(std::span<const uint8_t> bytes, Tag tag) {
  uint64_t v = 0;
  const unsigned n = width_bytes(tag);
  for (unsigned i = 0; i < n; ++i) v |= uint64_t{bytes[i]} << (8 * i);
  return TypedValue::from_bits(tag, v);
}

void store_le(std::span<uint8_t> bytes, const TypedValue& v) {
  const unsigned n = width_bytes(v.tag);
  for (unsigned i = 0; i < n; ++i) bytes[i] = static_cast<uint8_t>(v.bits >> (8 * i));
}

}  // namespace gpusim
