#include "gpusim/core/fault.hpp"

namespace gpusim {

std::string to_string(const Dim3& d) {
  return "(" + std::to_string(d.x) + "," + std::to_string(d.y) + "," + std::to_string(d.z) + ")";
}

std::string_view fault_kind_name(FaultKind k) {
  switch (k) {
    case FaultKind::divide_by_zero: return "divide-by-zero";
    case FaultKind::out_of_bounds: return "out-of-bounds";
    case FaultKind::misaligned: return "misaligned";
    case FaultKind::unwritten_register: return "unwritten-register";
    case FaultKind::type_mismatch: return "type-mismatch";
    case FaultKind::unbound_texture: return "unbound-texture";
    case FaultKind::bad_address_space: return "bad-address-space";
    case FaultKind::log_overflow: return "log-overflow";
  }
  return "?";
}

std::string MachineFaultRecord::describe() const {
  return "machine fault [" + std::string(fault_kind_name(kind)) + "] in " + module_id + ":" + kernel + " at instruction " +
         std::to_string(instruction) + " (" + opcode_text + "), block " + to_string(block_idx) + " thread " +
         to_string(thread_idx) + (detail.empty() ? "" : ": " + detail);
}

std::string_view injected_fault_name(InjectedFault f) {
  switch (f) {
    case InjectedFault::none: return "none";
    case InjectedFault::bfe_sign_fill: return "bfe_sign_fill";
    case InjectedFault::union_rem: return "union_rem";
    case InjectedFault::brev_off_by_one: return "brev_off_by_one";
    case InjectedFault::cvt_truncation: return "cvt_truncation";
    case InjectedFault::predication_leak: return "predication_leak";
  }
  return "?";
}

InjectedFault parse_injected_fault(std::string_view s) {
  for (auto f : {InjectedFault::none, InjectedFault::bfe_sign_fill, InjectedFault::union_rem, InjectedFault::brev_off_by_one,
                 InjectedFault::cvt_truncation, InjectedFault::predication_leak})
    if (injected_fault_name(f) == s) return f;
  throw ConfigError("unknown fault '" + std::string(s) + "'");
}

}  // namespace gpusim
