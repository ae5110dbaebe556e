#include "gpusim/diff/log.hpp"

#include "gpusim/core/fault.hpp"
#include "gpusim/error.hpp"

namespace gpusim {

namespace {

template <typename T>
void put(std::span<uint8_t> out, size_t at, T v) {
  for (size_t i = 0; i < sizeof(T); ++i) out[at + i] = static_cast<uint8_t>(static_cast<uint64_t>(v) >> (8 * i));
}

template <typename T>
T get(std::span<const uint8_t> in, size_t at) {
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= uint64_t{in[at + i]} << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

uint64_t log_buffer_bytes(uint32_t capacity) { return kLogHeaderBytes + kLogRecordBytes * capacity; }

void init_log_header(DeviceMemory& mem, uint64_t base, uint32_t capacity) {
  std::vector<uint8_t> h(kLogHeaderBytes, 0);
  put<uint32_t>(h, 4, capacity);
  mem.write(base, h);
}

void append_log_record(DeviceMemory& mem, uint64_t base, const LogRecord& r) {
  const uint32_t slot = mem.atomic_add_u32(base, 1);
  const uint32_t capacity = mem.load(base + 4, Tag::u32).u();
  if (slot >= capacity)
    throw OpFault(FaultKind::log_overflow, "register-write log full (capacity " + std::to_string(capacity) + ")");
  std::array<uint8_t, kLogRecordBytes> buf{};
  encode_log_record(r, buf);
  mem.write(base + kLogHeaderBytes + uint64_t{slot} * kLogRecordBytes, buf);
}

void encode_log_record(const LogRecord& r, std::span<uint8_t, kLogRecordBytes> out) {
  put<uint32_t>(out, 0, r.thread);
  put<uint32_t>(out, 4, r.instruction);
  put<uint16_t>(out, 8, r.reg);
  put<uint16_t>(out, 10, r.tag);
  put<uint64_t>(out, 12, r.bits);
}

LogRecord decode_log_record(std::span<const uint8_t, kLogRecordBytes> in) {
  return {get<uint32_t>(in, 0), get<uint32_t>(in, 4), get<uint16_t>(in, 8), get<uint16_t>(in, 10), get<uint64_t>(in, 12)};
}

std::vector<LogRecord> read_log(std::span<const uint8_t> buffer) {
  if (buffer.size() < kLogHeaderBytes) throw Error("log buffer shorter than its header");
  const uint32_t cursor = get<uint32_t>(buffer, 0);
  const uint32_t capacity = get<uint32_t>(buffer, 4);
  const uint32_t n = std::min(cursor, capacity);
  if (buffer.size() < log_buffer_bytes(n)) throw Error("log buffer truncated");
  std::vector<LogRecord> out;
  out.reserve(n);
  for (uint32_t i = 0; i < n; ++i)
    out.push_back(decode_log_record(buffer.subspan(kLogHeaderBytes + uint64_t{i} * kLogRecordBytes).first<kLogRecordBytes>()));
  return out;
}

std::vector<uint8_t> log_records_file(const std::vector<LogRecord>& records) {
  std::vector<uint8_t> out(records.size() * kLogRecordBytes);
  for (size_t i = 0; i < records.size(); ++i)
    encode_log_record(records[i], std::span<uint8_t>(out).subspan(i * kLogRecordBytes).first<kLogRecordBytes>());
  return out;
}

std::vector<LogRecord> parse_log_records_file(std::span<const uint8_t> bytes) {
  if (bytes.size() % kLogRecordBytes != 0) throw Error("log file size is not a multiple of the record size");
  std::vector<LogRecord> out;
  for (size_t i = 0; i < bytes.size(); i += kLogRecordBytes) out.push_back(decode_log_record(bytes.subspan(i).first<kLogRecordBytes>()));
  return out;
}

}  // namespace gpusim
