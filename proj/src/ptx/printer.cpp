#include <cinttypes>
#include <cstdio>
#include <sstream>

#include "gpusim/ptx/parser.hpp"

namespace gpusim {

namespace {

std::string imm_text(const Immediate& imm) {
  char buf[64];
  switch (imm.kind) {
    case Immediate::Kind::integer:
      if (static_cast<int64_t>(imm.bits) < 0) std::snprintf(buf, sizeof buf, "%" PRId64, static_cast<int64_t>(imm.bits));
      else std::snprintf(buf, sizeof buf, "%" PRIu64, imm.bits);
      return buf;
    case Immediate::Kind::float_decimal: {
      std::snprintf(buf, sizeof buf, "%.17g", imm.value);
      std::string s = buf;
      if (s.find_first_of(".e") == std::string::npos) s += ".0";
      return s;
    }
    case Immediate::Kind::float_bits32:
      std::snprintf(buf, sizeof buf, "0f%08" PRIX32, static_cast<uint32_t>(imm.bits));
      return buf;
    case Immediate::Kind::float_bits64:
      std::snprintf(buf, sizeof buf, "0d%016" PRIX64, imm.bits);
      return buf;
  }
  return "0";
}

std::string type_suffix(Tag t) { return "." + std::string(tag_name(t)); }

std::string operand_text(const KernelObject& k, const Operand& op) {
  return std::visit(
      [&](const auto& o) -> std::string {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, RegOperand>) {
          return k.reg_names[o.reg];
        } else if constexpr (std::is_same_v<T, Immediate>) {
          return imm_text(o);
        } else if constexpr (std::is_same_v<T, SpecialOperand>) {
          return std::string(special_reg_name(o.reg));
        } else if constexpr (std::is_same_v<T, SymbolOperand>) {
          return o.name;
        } else {
          std::string s = "[";
          if (std::holds_alternative<RegId>(o.base)) s += k.reg_names[std::get<RegId>(o.base)];
          else s += std::get<std::string>(o.base);
          if (o.offset > 0) s += "+" + std::to_string(o.offset);
          else if (o.offset < 0) s += "-" + std::to_string(-o.offset);
          return s + "]";
        }
      },
      op);
}

}  // namespace

std::string print_instruction(const KernelObject& k, const Instruction& in) {
  std::ostringstream os;
  if (in.guard) os << "@" << (in.guard->negate ? "!" : "") << k.reg_names[in.guard->reg] << " ";
  os << opcode_name(in.opcode);
  auto dst = [&](size_t i) { return k.reg_names[in.dsts[i]]; };
  auto src = [&](size_t i) { return operand_text(k, in.srcs[i]); };
  switch (in.opcode) {
    case Opcode::mov:
      os << type_suffix(in.type) << " " << dst(0) << ", " << src(0);
      break;
    case Opcode::ld:
      os << "." << space_name(in.space) << type_suffix(in.type) << " " << dst(0) << ", " << src(0);
      break;
    case Opcode::st:
      os << "." << space_name(in.space) << type_suffix(in.type) << " " << src(0) << ", " << src(1);
      break;
    case Opcode::add:
    case Opcode::sub:
    case Opcode::div:
    case Opcode::rem:
      if (in.rounding == Rounding::rn) os << ".rn";
      os << type_suffix(in.type) << " " << dst(0) << ", " << src(0) << ", " << src(1);
      break;
    case Opcode::mul:
    case Opcode::mad:
    case Opcode::fma:
      if (in.mul_mode == MulMode::lo) os << ".lo";
      else if (in.mul_mode == MulMode::hi) os << ".hi";
      else if (in.mul_mode == MulMode::wide) os << ".wide";
      if (in.rounding == Rounding::rn) os << ".rn";
      os << type_suffix(in.type) << " " << dst(0) << ", " << src(0) << ", " << src(1);
      if (in.opcode != Opcode::mul) os << ", " << src(2);
      break;
    case Opcode::brev:
      os << (in.type == Tag::u32 ? ".b32" : ".b64") << " " << dst(0) << ", " << src(0);
      break;
    case Opcode::bfe:
      os << type_suffix(in.type) << " " << dst(0) << ", " << src(0) << ", " << src(1) << ", " << src(2);
      break;
    case Opcode::cvt:
      if (in.rounding != Rounding::none) os << "." << rounding_name(in.rounding);
      os << type_suffix(in.type) << type_suffix(in.src_type) << " " << dst(0) << ", " << src(0);
      break;
    case Opcode::setp:
      os << "." << cmp_name(in.cmp) << type_suffix(in.type) << " " << dst(0) << ", " << src(0) << ", " << src(1);
      break;
    case Opcode::selp:
      os << type_suffix(in.type) << " " << dst(0) << ", " << src(0) << ", " << src(1) << ", " << src(2);
      break;
    case Opcode::bra:
      if (in.uniform) os << ".uni";
      os << " " << in.target_label;
      break;
    case Opcode::bar:
      os << ".sync 0";
      break;
    case Opcode::tex: {
      os << (in.geom == TexGeom::d1 ? ".1d" : ".2d") << ".v4" << type_suffix(in.type) << type_suffix(in.src_type) << " {";
      for (size_t i = 0; i < in.dsts.size(); ++i) os << (i ? ", " : "") << dst(i);
      os << "}, [" << in.texref << ", {";
      for (size_t i = 0; i < in.srcs.size(); ++i) os << (i ? ", " : "") << src(i);
      os << "}]";
      break;
    }
    case Opcode::atom:
      os << ".global.add" << type_suffix(in.type) << " " << dst(0) << ", " << src(0) << ", " << src(1);
      break;
    case Opcode::exit:
    case Opcode::ret:
      break;
  }
  os << ";";
  return os.str();
}

std::string print_module(const PtxModule& m) {
  std::ostringstream os;
  os << "// " << m.source_name << "\n";
  os << ".version 6.0\n.target sm_61\n.address_size 64\n\n";
  for (const auto& t : m.texref_decls) os << ".tex .u64 " << t << ";\n";
  for (const auto& [name, g] : m.globals) {
    os << ".global .align " << g.align << " " << type_suffix(g.elem_type) << " " << name << "[" << g.count << "]";
    if (g.init) os << " = " << imm_text(*g.init);
    os << ";\n";
  }
  for (const auto& [name, k] : m.kernels) {
    os << "\n.visible .entry " << name << "(";
    for (size_t i = 0; i < k.params.size(); ++i) {
      const auto& p = k.params[i];
      os << (i ? ",\n" : "\n") << "    .param .align " << p.align << " " << type_suffix(p.type);
      if (p.kind == ParamKind::pointer) os << " .ptr.global";
      else if (p.kind == ParamKind::pointer_to_pointer) os << " .ptr.global.ptr";
      os << " " << p.name;
    }
    os << "\n)\n{\n";
    for (const auto& [reg, ty] : k.reg_decl_types) os << "    .reg " << (ty == Tag::pred ? std::string(".pred") : type_suffix(ty)) << " " << reg << ";\n";
    for (const auto& v : k.shared_vars)
      os << "    .shared .align " << v.align << " " << type_suffix(v.elem_type) << " " << v.name << "[" << v.count << "];\n";
    for (const auto& v : k.local_vars)
      os << "    .local .align " << v.align << " " << type_suffix(v.elem_type) << " " << v.name << "[" << v.count << "];\n";
    for (size_t i = 0; i < k.instructions.size(); ++i) {
      auto it = k.labels.find(static_cast<int>(i));
      if (it != k.labels.end())
        for (const auto& l : it->second) os << l << ":\n";
      os << "    " << print_instruction(k, k.instructions[i]) << "\n";
    }
    os << "}\n";
  }
  return os.str();
}

}  // namespace gpusim
