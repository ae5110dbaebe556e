#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gpusim/mem/device_memory.hpp"

namespace gpusim {

// Register-write log. The buffer starts with a 16-byte header
// (u32 cursor, u32 capacity, 8 reserved bytes) followed by 20-byte records:
// u32 thread linear id, u32 instruction index, u16 register id, u16 tag,
// u64 value bits. Little-endian throughout.
constexpr uint64_t kLogHeaderBytes = 16;
constexpr uint64_t kLogRecordBytes = 20;

struct LogRecord {
  uint32_t thread = 0;
  uint32_t instruction = 0;
  uint16_t reg = 0;
  uint16_t tag = 0;
  uint64_t bits = 0;
  friend bool operator==(const LogRecord&, const LogRecord&) = default;
};

uint64_t log_buffer_bytes(uint32_t capacity);
void init_log_header(DeviceMemory& mem, uint64_t base, uint32_t capacity);

// Claims a slot with an atomic cursor bump and writes the record.
// Throws OpFault(log_overflow) past capacity.
void append_log_record(DeviceMemory& mem, uint64_t base, const LogRecord& r);

void encode_log_record(const LogRecord& r, std::span<uint8_t, kLogRecordBytes> out);
LogRecord decode_log_record(std::span<const uint8_t, kLogRecordBytes> in);

// Records in buffer order; the cursor bounds the count.
std::vector<LogRecord> read_log(std::span<const uint8_t> buffer);
// Same, as a raw file of back-to-back records without the header.
std::vector<uint8_t> log_records_file(const std::vector<LogRecord>& records);
std::vector<LogRecord> parse_log_records_file(std::span<const uint8_t> bytes);

}  // namespace gpusim
