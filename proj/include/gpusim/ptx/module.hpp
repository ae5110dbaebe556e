#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "gpusim/typed_value.hpp"

namespace gpusim {

// Per-kernel dense register index.
using RegId = uint32_t;

enum class Opcode : uint8_t {
  mov,
  ld,
  st,
  add,
  sub,
  mul,
  mad,
  fma,
  div,
  rem,
  brev,
  bfe,
  cvt,
  setp,
  selp,
  bra,
  bar,
  tex,
  atom,
  exit,
  ret,
};

std::string_view opcode_name(Opcode op);

enum class Space : uint8_t { none, global, shared, local, param };
enum class MulMode : uint8_t { none, lo, hi, wide };
enum class CmpOp : uint8_t { none, eq, ne, lt, le, gt, ge };
enum class Rounding : uint8_t { none, rn, rz, rm, rp, rni, rzi, rmi, rpi };
enum class TexGeom : uint8_t { none, d1, d2 };

std::string_view space_name(Space s);
std::string_view cmp_name(CmpOp c);
std::string_view rounding_name(Rounding r);

enum class SpecialReg : uint8_t {
  tid_x, tid_y, tid_z,
  ntid_x, ntid_y, ntid_z,
  ctaid_x, ctaid_y, ctaid_z,
  nctaid_x, nctaid_y, nctaid_z,
  laneid,
};

std::string_view special_reg_name(SpecialReg r);
std::optional<SpecialReg> parse_special_reg(std::string_view s);

struct RegOperand {
  RegId reg = 0;
  friend bool operator==(const RegOperand&, const RegOperand&) = default;
};

// Literal as written. Integers keep their two's-complement bits; decimal
// floats keep the double; 0f/0d hex floats keep the exact bits.
struct Immediate {
  enum class Kind : uint8_t { integer, float_decimal, float_bits32, float_bits64 };
  Kind kind = Kind::integer;
  uint64_t bits = 0;
  double value = 0.0;
  friend bool operator==(const Immediate&, const Immediate&) = default;
};

struct SpecialOperand {
  SpecialReg reg = SpecialReg::tid_x;
  friend bool operator==(const SpecialOperand&, const SpecialOperand&) = default;
};

// Address of a named variable (global, shared, local or param symbol).
struct SymbolOperand {
  std::string name;
  friend bool operator==(const SymbolOperand&, const SymbolOperand&) = default;
};

// [reg+off] or [symbol+off]
struct AddressOperand {
  std::variant<RegId, std::string> base;
  int64_t offset = 0;
  friend bool operator==(const AddressOperand&, const AddressOperand&) = default;
};

using Operand = std::variant<RegOperand, Immediate, SpecialOperand, SymbolOperand, AddressOperand>;

struct Guard {
  RegId reg = 0;
  bool negate = false;
  friend bool operator==(const Guard&, const Guard&) = default;
};

struct Instruction {
  Opcode opcode = Opcode::exit;
  Tag type = Tag::u32;      // type suffix (destination type for cvt)
  Tag src_type = Tag::u32;  // cvt source type, tex coordinate type
  Space space = Space::none;
  MulMode mul_mode = MulMode::none;
  CmpOp cmp = CmpOp::none;
  Rounding rounding = Rounding::none;
  TexGeom geom = TexGeom::none;
  bool uniform = false;  // bra.uni
  std::vector<RegId> dsts;
  std::vector<Operand> srcs;
  std::optional<Guard> guard;
  int target = -1;          // branch target instruction index
  std::string target_label;
  std::string texref;       // tex: texture name

  bool writes_register() const { return !dsts.empty(); }

  friend bool operator==(const Instruction&, const Instruction&) = default;
};

// Latency / accounting class used by the timing model and diff reports.
enum class OpClass : uint8_t { alu, mul, div, mem_global, mem_shared, mem_local, mem_param, tex, atomic, branch, barrier, exit };
OpClass op_class(const Instruction& in);

enum class ParamKind : uint8_t { scalar, pointer, pointer_to_pointer };

struct KernelParam {
  std::string name;
  Tag type = Tag::u64;
  ParamKind kind = ParamKind::scalar;
  uint32_t align = 8;
  uint32_t offset = 0;  // byte offset in the packed parameter buffer
  friend bool operator==(const KernelParam&, const KernelParam&) = default;
};

struct VarDecl {
  std::string name;
  Tag elem_type = Tag::u32;
  uint32_t count = 1;
  uint32_t align = 1;
  uint32_t offset = 0;  // within the shared window / local frame
  friend bool operator==(const VarDecl&, const VarDecl&) = default;
};

struct BasicBlock {
  int first = 0;
  int last = 0;  // inclusive
  std::vector<int> succs;  // kExitBlock for the virtual exit
  friend bool operator==(const BasicBlock&, const BasicBlock&) = default;
};

constexpr int kExitBlock = -1;
constexpr int kNoReconvergence = -1;

// Diff-debug register-write instrumentation attached to a kernel copy.
struct Instrumentation {
  uint32_t log_param_offset = 0;
  std::vector<bool> write_sites;  // per instruction
  friend bool operator==(const Instrumentation&, const Instrumentation&) = default;
};

struct KernelObject {
  std::string name;
  std::vector<KernelParam> params;
  std::vector<Instruction> instructions;
  std::vector<std::string> reg_names;           // RegId -> name
  std::map<std::string, Tag> reg_decl_types;    // from .reg declarations
  std::vector<VarDecl> shared_vars;
  std::vector<VarDecl> local_vars;
  std::map<int, std::vector<std::string>> labels;  // instruction index -> labels
  uint32_t shared_bytes = 0;
  uint32_t local_bytes_per_thread = 0;

  std::vector<BasicBlock> blocks;
  std::vector<int> block_of;                    // instruction -> block
  std::map<int, int> ipdom;                     // block -> ipdom block (kExitBlock allowed)
  std::vector<int> reconv_pc;                   // branch instruction -> reconvergence pc

  std::optional<Instrumentation> instrumentation;

  uint32_t param_bytes() const;
  const KernelParam* find_param(std::string_view n) const;
  const VarDecl* find_shared(std::string_view n) const;
  const VarDecl* find_local(std::string_view n) const;
  uint32_t register_count() const { return static_cast<uint32_t>(reg_names.size()); }

  friend bool operator==(const KernelObject&, const KernelObject&) = default;
};

struct GlobalDecl {
  std::string name;
  Tag elem_type = Tag::u32;
  uint32_t count = 1;
  uint32_t align = 1;
  std::optional<Immediate> init;  // scalar initializer only
  uint64_t size_bytes() const { return uint64_t{count} * width_bytes(elem_type); }
  friend bool operator==(const GlobalDecl&, const GlobalDecl&) = default;
};

struct PtxModule {
  std::string module_id;
  std::string source_name;
  std::map<std::string, KernelObject> kernels;
  std::map<std::string, GlobalDecl> globals;
  std::vector<std::string> texref_decls;

  const KernelObject* find_kernel(std::string_view n) const;

  friend bool operator==(const PtxModule&, const PtxModule&) = default;
};

}  // namespace gpusim
