#include "gpusim/reference/interp.hpp"

#include <algorithm>
#include <bit>

#include "gpusim/core/grid.hpp"
#include "gpusim/core/ops.hpp"
#include "gpusim/diff/log.hpp"
#include "gpusim/ptx/parser.hpp"

namespace gpusim {

namespace {

struct Thread {
  Dim3 tid;
  uint32_t linear = 0;
  int pc = 0;
  bool exited = false;
  bool waiting = false;  // parked on bar.sync
  uint64_t executed = 0;
  std::vector<std::optional<TypedValue>> regs;
  std::vector<uint8_t> local;
};

struct Cta {
  Dim3 ctaid;
  uint64_t linear = 0;
  std::vector<Thread> threads;
  std::vector<uint8_t> shared;
};

// Host-order literal decoding, written out again on purpose rather than
// shared with the SIMT core.
TypedValue literal(const Immediate& imm, Tag want) {
  using K = Immediate::Kind;
  if (imm.kind == K::integer) {
    const auto v = static_cast<int64_t>(imm.bits);
    if (want == Tag::f32) return TypedValue::from_f32(static_cast<float>(v));
    if (want == Tag::f64) return TypedValue::from_f64(static_cast<double>(v));
    return TypedValue::from_bits(want, imm.bits);
  }
  double d = imm.value;
  if (imm.kind == K::float_bits32) d = std::bit_cast<float>(static_cast<uint32_t>(imm.bits));
  if (imm.kind == K::float_bits64) d = std::bit_cast<double>(imm.bits);
  if (want == Tag::f32)
    return imm.kind == K::float_bits32 ? TypedValue::from_bits(Tag::f32, imm.bits) : TypedValue::from_f32(static_cast<float>(d));
  if (want == Tag::f64) return imm.kind == K::float_bits64 ? TypedValue::from_bits(Tag::f64, imm.bits) : TypedValue::from_f64(d);
  throw OpFault(FaultKind::type_mismatch, "float literal used as ." + std::string(tag_name(want)));
}

class Interp {
 public:
  explicit Interp(const KernelEnv& env) : env_(env), k_(*env.kernel) {}

  ReferenceResult run() {
    ReferenceResult res;
    const uint64_t n = env_.grid.count();
    for (uint64_t c = 0; c < n; ++c) run_cta(c, res);
    return res;
  }

 private:
  void run_cta(uint64_t linear, ReferenceResult& res) {
    Cta cta;
    cta.linear = linear;
    cta.ctaid = cta_coords(linear, env_.grid);
    cta.shared.assign(k_.shared_bytes, 0);
    const Dim3 b = env_.block;
    for (uint32_t z = 0; z < b.z; ++z)
      for (uint32_t y = 0; y < b.y; ++y)
        for (uint32_t x = 0; x < b.x; ++x) {
          Thread t;
          t.tid = {x, y, z};
          t.linear = x + y * b.x + z * b.x * b.y;
          t.regs.assign(k_.register_count(), std::nullopt);
          t.local.assign(k_.local_bytes_per_thread, 0);
          cta.threads.push_back(std::move(t));
        }
    res.threads += cta.threads.size();

    while (true) {
      for (auto& t : cta.threads) {
        while (!t.exited && !t.waiting) {
          step(cta, t);
          ++res.instructions;
          ++t.executed;
        }
        res.max_thread_instructions = std::max(res.max_thread_instructions, t.executed);
      }
      size_t waiting = 0;
      for (const auto& t : cta.threads) waiting += t.waiting;
      if (waiting == 0) return;
      // same rule as the SIMT core: a warp with every lane exited never
      // arrives, so the barrier can't complete
      for (size_t w = 0; w < cta.threads.size(); w += 32) {
        const size_t end = std::min(cta.threads.size(), w + 32);
        if (std::all_of(cta.threads.begin() + static_cast<std::ptrdiff_t>(w),
                        cta.threads.begin() + static_cast<std::ptrdiff_t>(end),
                        [](const Thread& t) { return t.exited; }))
          throw DeadlockError("barrier deadlock in " + k_.name + " cta " + to_string(cta.ctaid) + ": warp " +
                              std::to_string(w / 32) + " exited while " + std::to_string(waiting) +
                              " threads wait at bar.sync");
      }
      for (auto& t : cta.threads)
        if (t.waiting) {
          t.waiting = false;
          ++t.pc;
        }
    }
  }

  [[noreturn]] void fault(const Cta& cta, const Thread& t, int pc, FaultKind kind, const std::string& detail) const {
    MachineFaultRecord r;
    r.kernel = k_.name;
    r.module_id = env_.module_id;
    r.instruction = pc;
    r.opcode_text = print_instruction(k_, k_.instructions[static_cast<size_t>(pc)]);
    r.block_idx = cta.ctaid;
    r.thread_idx = t.tid;
    r.kind = kind;
    r.detail = detail;
    throw MachineFault(std::move(r));
  }

  void step(Cta& cta, Thread& t) {
    const int pc = t.pc;
    if (pc < 0 || pc >= static_cast<int>(k_.instructions.size())) fault(cta, t, 0, FaultKind::bad_address_space, "pc out of range");
    const Instruction& in = k_.instructions[static_cast<size_t>(pc)];
    try {
      if (in.guard) {
        const bool p = get(t, in.guard->reg, Tag::pred).pred();
        if (p == in.guard->negate) {
          ++t.pc;
          return;
        }
      }
      switch (in.opcode) {
        case Opcode::bra:
          t.pc = in.target;
          return;
        case Opcode::bar:
          t.waiting = true;  // pc advances on release
          return;
        case Opcode::exit:
        case Opcode::ret:
          t.exited = true;
          return;
        default:
          execute(cta, t, in);
          if (k_.instrumentation && k_.instrumentation->write_sites[static_cast<size_t>(pc)]) log(cta, t, in, pc);
          ++t.pc;
      }
    } catch (const OpFault& f) {
      fault(cta, t, pc, f.kind(), f.detail());
    } catch (const MemoryAccessFault& f) {
      fault(cta, t, pc, f.info().reason.starts_with("misaligned") ? FaultKind::misaligned : FaultKind::out_of_bounds,
            f.info().reason);
    }
  }

  TypedValue get(const Thread& t, RegId r, Tag want) const {
    const auto& v = t.regs.at(r);
    if (!v) throw OpFault(FaultKind::unwritten_register, "register " + k_.reg_names[r] + " read before any write");
    return coerce(*v, want);
  }

  uint32_t special(const Cta& cta, const Thread& t, SpecialReg s) const {
    const Dim3& b = env_.block;
    const Dim3& g = env_.grid;
    switch (s) {
      case SpecialReg::tid_x: return t.tid.x;
      case SpecialReg::tid_y: return t.tid.y;
      case SpecialReg::tid_z: return t.tid.z;
      case SpecialReg::ntid_x: return b.x;
      case SpecialReg::ntid_y: return b.y;
      case SpecialReg::ntid_z: return b.z;
      case SpecialReg::ctaid_x: return cta.ctaid.x;
      case SpecialReg::ctaid_y: return cta.ctaid.y;
      case SpecialReg::ctaid_z: return cta.ctaid.z;
      case SpecialReg::nctaid_x: return g.x;
      case SpecialReg::nctaid_y: return g.y;
      case SpecialReg::nctaid_z: return g.z;
      case SpecialReg::laneid: return t.linear % kWarpSize;
    }
    return 0;
  }

  // Where a named variable lives. Order matters only when names collide.
  std::pair<Space, uint64_t> locate(const std::string& name, Space hint) const {
    const bool any = hint == Space::none;
    if (any || hint == Space::shared)
      if (const VarDecl* v = k_.find_shared(name)) return {Space::shared, v->offset};
    if (any || hint == Space::local)
      if (const VarDecl* v = k_.find_local(name)) return {Space::local, v->offset};
    if ((any || hint == Space::global) && env_.symbols)
      if (auto it = env_.symbols->find(name); it != env_.symbols->end()) return {Space::global, it->second};
    if (any || hint == Space::param)
      if (const KernelParam* p = k_.find_param(name)) return {Space::param, p->offset};
    throw OpFault(FaultKind::bad_address_space, "symbol '" + name + "' not found in " + std::string(space_name(hint)) + " space");
  }

  TypedValue operand(const Cta& cta, const Thread& t, const Operand& op, Tag want) const {
    return std::visit(
        [&](const auto& o) -> TypedValue {
          using T = std::decay_t<decltype(o)>;
          if constexpr (std::is_same_v<T, RegOperand>) return get(t, o.reg, want);
          else if constexpr (std::is_same_v<T, Immediate>) return literal(o, want);
          else if constexpr (std::is_same_v<T, SpecialOperand>)
            return coerce(TypedValue::from_bits(Tag::u32, special(cta, t, o.reg)), want);
          else if constexpr (std::is_same_v<T, SymbolOperand>) return TypedValue::from_bits(want, locate(o.name, Space::none).second);
          else throw OpFault(FaultKind::type_mismatch, "address operand used as a value");
        },
        op);
  }

  uint64_t effective(const Thread& t, const Operand& op, Space space) const {
    const auto& a = std::get<AddressOperand>(op);
    const uint64_t base = std::holds_alternative<RegId>(a.base) ? get(t, std::get<RegId>(a.base), Tag::u64).bits
                                                                 : locate(std::get<std::string>(a.base), space).second;
    return base + static_cast<uint64_t>(a.offset);
  }

  // Byte window of a CTA- or thread-private space.
  std::span<uint8_t> window(Cta& cta, Thread& t, Space s, uint64_t addr, unsigned n) {
    std::span<uint8_t> all;
    if (s == Space::shared) all = cta.shared;
    else if (s == Space::local) all = t.local;
    else if (s == Space::param) all = std::span<uint8_t>(const_cast<uint8_t*>(env_.params.data()), env_.params.size());
    else throw OpFault(FaultKind::bad_address_space, "no state space");
    if (addr % n) throw OpFault(FaultKind::misaligned, "misaligned " + std::string(space_name(s)) + " access at " + std::to_string(addr));
    if (addr + n > all.size())
      throw OpFault(FaultKind::out_of_bounds, std::string(space_name(s)) + " access at offset " + std::to_string(addr) +
                                                  " outside " + std::to_string(all.size()) + " bytes");
    return all.subspan(addr, n);
  }

  void execute(Cta& cta, Thread& t, const Instruction& in) {
    const Tag ty = in.type;
    auto src = [&](size_t i, Tag want) { return operand(cta, t, in.srcs.at(i), want); };
    auto set = [&](size_t i, TypedValue v) { t.regs.at(in.dsts.at(i)) = v; };
    switch (in.opcode) {
      case Opcode::mov: set(0, src(0, ty)); break;
      case Opcode::ld: {
        const uint64_t a = effective(t, in.srcs[0], in.space);
        if (in.space == Space::global) set(0, env_.global->load(a, ty));
        else set(0, load_le(window(cta, t, in.space, a, width_bytes(ty)), ty));
        break;
      }
      case Opcode::st: {
        const uint64_t a = effective(t, in.srcs[0], in.space);
        const TypedValue v = src(1, ty);
        if (in.space == Space::param) throw OpFault(FaultKind::bad_address_space, "store to param space");
        if (in.space == Space::global) env_.global->store(a, v);
        else store_le(window(cta, t, in.space, a, width_bytes(ty)), v);
        break;
      }
      case Opcode::add: set(0, exec_add(src(0, ty), src(1, ty), ty)); break;
      case Opcode::sub: set(0, exec_sub(src(0, ty), src(1, ty), ty)); break;
      case Opcode::mul: set(0, exec_mul(src(0, ty), src(1, ty), ty, in.mul_mode)); break;
      case Opcode::mad:
        set(0, exec_mad(src(0, ty), src(1, ty), src(2, in.mul_mode == MulMode::wide ? wide_tag(ty) : ty), ty, in.mul_mode));
        break;
      case Opcode::fma: set(0, exec_fma(src(0, ty), src(1, ty), src(2, ty), ty)); break;
      case Opcode::div: set(0, exec_div(src(0, ty), src(1, ty), ty)); break;
      case Opcode::rem: set(0, exec_rem(src(0, ty), src(1, ty), ty)); break;
      case Opcode::brev: set(0, exec_brev(src(0, ty), ty)); break;
      case Opcode::bfe: set(0, exec_bfe(src(0, ty), src(1, Tag::u32), src(2, Tag::u32), ty)); break;
      case Opcode::cvt: set(0, exec_cvt(src(0, in.src_type), in.src_type, ty, in.rounding)); break;
      case Opcode::setp: set(0, exec_setp(src(0, ty), src(1, ty), ty, in.cmp)); break;
      case Opcode::selp: set(0, exec_selp(src(0, ty), src(1, ty), src(2, Tag::pred), ty)); break;
      case Opcode::tex: {
        if (!env_.textures) throw OpFault(FaultKind::unbound_texture, "no texture registry");
        const auto x = static_cast<int32_t>(src(0, Tag::s32).s());
        const auto y = in.geom == TexGeom::d2 ? static_cast<int32_t>(src(1, Tag::s32).s()) : 0;
        const auto texel = env_.textures->fetch(in.texref, x, y, *env_.global);
        for (size_t i = 0; i < in.dsts.size(); ++i) set(i, TypedValue::from_bits(ty, texel[i]));
        break;
      }
      case Opcode::atom: {
        const uint64_t a = effective(t, in.srcs[0], Space::global);
        const uint32_t old = env_.global->atomic_add_u32(a, static_cast<uint32_t>(src(1, ty).bits));
        set(0, TypedValue::from_bits(ty, old));
        break;
      }
      default: break;
    }
  }

  void log(const Cta& cta, const Thread& t, const Instruction& in, int pc) {
    const uint64_t base = load_le(env_.params.subspan(k_.instrumentation->log_param_offset, 8), Tag::u64).u();
    const auto gtid = static_cast<uint32_t>(cta.linear * env_.block.count() + t.linear);
    for (RegId d : in.dsts) {
      const TypedValue v = *t.regs[d];
      append_log_record(*env_.global, base,
                        {gtid, static_cast<uint32_t>(pc), static_cast<uint16_t>(d), static_cast<uint16_t>(v.tag), v.bits});
    }
  }

  const KernelEnv& env_;
  const KernelObject& k_;
};

}  // namespace

ReferenceResult run_reference(const KernelEnv& env) {
  validate_launch(env);
  return Interp(env).run();
}

}  // namespace gpusim
