#include "gpusim/ptx/module.hpp"

#include <array>

namespace gpusim {

std::string_view opcode_name(Opcode op) {
  switch (op) {
    case Opcode::mov: return "mov";
    case Opcode::ld: return "ld";
    case Opcode::st: return "st";
    case Opcode::add: return "add";
    case Opcode::sub: return "sub";
    case Opcode::mul: return "mul";
    case Opcode::mad: return "mad";
    case Opcode::fma: return "fma";
    case Opcode::div: return "div";
    case Opcode::rem: return "rem";
    case Opcode::brev: return "brev";
    case Opcode::bfe: return "bfe";
    case Opcode::cvt: return "cvt";
    case Opcode::setp: return "setp";
    case Opcode::selp: return "selp";
    case Opcode::bra: return "bra";
    case Opcode::bar: return "bar";
    case Opcode::tex: return "tex";
    case Opcode::atom: return "atom";
    case Opcode::exit: return "exit";
    case Opcode::ret: return "ret";
  }
  return "?";
}

std::string_view space_name(Space s) {
  switch (s) {
    case Space::none: return "";
    case Space::global: return "global";
    case Space::shared: return "shared";
    case Space::local: return "local";
    case Space::param: return "param";
  }
  return "";
}

std::string_view cmp_name(CmpOp c) {
  switch (c) {
    case CmpOp::none: return "";
    case CmpOp::eq: return "eq";
    case CmpOp::ne: return "ne";
    case CmpOp::lt: return "lt";
    case CmpOp::le: return "le";
    case CmpOp::gt: return "gt";
    case CmpOp::ge: return "ge";
  }
  return "";
}

std::string_view rounding_name(Rounding r) {
  switch (r) {
    case Rounding::none: return "";
    case Rounding::rn: return "rn";
    case Rounding::rz: return "rz";
    case Rounding::rm: return "rm";
    case Rounding::rp: return "rp";
    case Rounding::rni: return "rni";
    case Rounding::rzi: return "rzi";
    case Rounding::rmi: return "rmi";
    case Rounding::rpi: return "rpi";
  }
  return "";
}

namespace {
constexpr std::array<std::string_view, 13> kSpecialNames = {
    "%tid.x",   "%tid.y",   "%tid.z",   "%ntid.x",   "%ntid.y",   "%ntid.z", "%ctaid.x",
    "%ctaid.y", "%ctaid.z", "%nctaid.x", "%nctaid.y", "%nctaid.z", "%laneid"};
}

std::string_view special_reg_name(SpecialReg r) { return kSpecialNames[static_cast<size_t>(r)]; }

std::optional<SpecialReg> parse_special_reg(std::string_view s) {
  for (size_t i = 0; i < kSpecialNames.size(); ++i)
    if (kSpecialNames[i] == s) return static_cast<SpecialReg>(i);
  return std::nullopt;
}

OpClass op_class(const Instruction& in) {
  switch (in.opcode) {
    case Opcode::mul:
    case Opcode::mad:
    case Opcode::fma:
      return OpClass::mul;
    case Opcode::div:
    case Opcode::rem:
      return OpClass::div;
    case Opcode::ld:
    case Opcode::st:
      switch (in.space) {
        case Space::shared: return OpClass::mem_shared;
        case Space::local: return OpClass::mem_local;
        case Space::param: return OpClass::mem_param;
        default: return OpClass::mem_global;
      }
    case Opcode::tex: return OpClass::tex;
    case Opcode::atom: return OpClass::atomic;
    case Opcode::bra: return OpClass::branch;
    case Opcode::bar: return OpClass::barrier;
    case Opcode::exit:
    case Opcode::ret:
      return OpClass::exit;
    default:
      return OpClass::alu;
  }
}

uint32_t KernelObject::param_bytes() const {
  uint32_t end = 0;
  for (const auto& p : params) end = std::max(end, p.offset + width_bytes(p.type));
  return end;
}

const KernelParam* KernelObject::find_param(std::string_view n) const {
  for (const auto& p : params)
    if (p.name == n) return &p;
  return nullptr;
}

const VarDecl* KernelObject::find_shared(std::string_view n) const {
  for (const auto& v : shared_vars)
    if (v.name == n) return &v;
  return nullptr;
}

const VarDecl* KernelObject::find_local(std::string_view n) const {
  for (const auto& v : local_vars)
    if (v.name == n) return &v;
  return nullptr;
}

const KernelObject* PtxModule::find_kernel(std::string_view n) const {
  auto it = kernels.find(std::string(n));
  return it == kernels.end() ? nullptr : &it->second;
}

}  // namespace gpusim
