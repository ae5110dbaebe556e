#pragma once

#include <cstdint>
#include <string>

#include "gpusim/error.hpp"

namespace gpusim {

struct Dim3 {
  uint32_t x = 1, y = 1, z = 1;

  uint64_t count() const { return uint64_t{x} * y * z; }
  friend bool operator==(const Dim3&, const Dim3&) = default;
};

std::string to_string(const Dim3& d);

enum class FaultKind : uint8_t {
  divide_by_zero,
  out_of_bounds,
  misaligned,
  unwritten_register,
  type_mismatch,
  unbound_texture,
  bad_address_space,
  log_overflow,
};

std::string_view fault_kind_name(FaultKind k);

// Structured diagnostic attached to every machine fault.
struct MachineFaultRecord {
  std::string kernel;
  std::string module_id;
  int instruction = -1;
  std::string opcode_text;
  Dim3 block_idx;
  Dim3 thread_idx;
  FaultKind kind = FaultKind::type_mismatch;
  std::string detail;

  std::string describe() const;
};

class MachineFault : public Error {
 public:
  explicit MachineFault(MachineFaultRecord r) : Error(r.describe()), record_(std::move(r)) {}
  const MachineFaultRecord& record() const { return record_; }

 private:
  MachineFaultRecord record_;
};

// Thrown by the ops layer before the executor knows which thread it is.
class OpFault : public std::exception {
 public:
  OpFault(FaultKind kind, std::string detail) : kind_(kind), detail_(std::move(detail)) {}
  const char* what() const noexcept override { return detail_.c_str(); }
  FaultKind kind() const { return kind_; }
  const std::string& detail() const { return detail_; }

 private:
  FaultKind kind_;
  std::string detail_;
};

// Barrier deadlock, circular stream waits, timing watchdog.
class DeadlockError : public Error {
 public:
  using Error::Error;
};

// Deliberate semantic bugs used to exercise the divergence localizer.
enum class InjectedFault : uint8_t {
  none,
  bfe_sign_fill,     // signed bfe zero-fills instead of sign-extending
  union_rem,         // rem computed on 64-bit sign-extended operands
  brev_off_by_one,   // reversed bits land one position too high
  cvt_truncation,    // f32 -> f16 truncates instead of rounding
  predication_leak,  // guarded-off lanes still write their destination
};

std::string_view injected_fault_name(InjectedFault f);
InjectedFault parse_injected_fault(std::string_view s);  // throws ConfigError

}  // namespace gpusim
