#include "gpusim/core/warp.hpp"

#include <bit>
#include <cmath>

#include "gpusim/core/ops.hpp"
#include "gpusim/diff/log.hpp"
#include "gpusim/ptx/parser.hpp"

namespace gpusim {

namespace {

uint32_t tid_linear(const Dim3& t, const Dim3& b) { return t.x + t.y * b.x + t.z * b.x * b.y; }

Dim3 tid_coords(uint32_t linear, const Dim3& b) {
  return {linear % b.x, (linear / b.x) % b.y, linear / (b.x * b.y)};
}

void normalize(WarpState& w) {
  while (!w.stack.empty()) {
    const SimtEntry& top = w.stack.back();
    if ((top.mask & ~w.exited) == 0 || top.pc == top.rpc) w.stack.pop_back();
    else break;
  }
}

TypedValue imm_value(const Immediate& imm, Tag want) {
  switch (imm.kind) {
    case Immediate::Kind::integer:
      if (want == Tag::f32) return TypedValue::from_f32(static_cast<float>(static_cast<int64_t>(imm.bits)));
      if (want == Tag::f64) return TypedValue::from_f64(static_cast<double>(static_cast<int64_t>(imm.bits)));
      return TypedValue::from_bits(want, imm.bits);
    case Immediate::Kind::float_decimal:
      if (want == Tag::f32) return TypedValue::from_f32(static_cast<float>(imm.value));
      if (want == Tag::f64) return TypedValue::from_f64(imm.value);
      break;
    case Immediate::Kind::float_bits32:
      if (want == Tag::f32) return TypedValue::from_bits(Tag::f32, imm.bits);
      if (want == Tag::f64) return TypedValue::from_f64(std::bit_cast<float>(static_cast<uint32_t>(imm.bits)));
      break;
    case Immediate::Kind::float_bits64:
      if (want == Tag::f64) return TypedValue::from_bits(Tag::f64, imm.bits);
      if (want == Tag::f32) return TypedValue::from_f32(static_cast<float>(std::bit_cast<double>(imm.bits)));
      break;
  }
  throw OpFault(FaultKind::type_mismatch, "float literal used as ." + std::string(tag_name(want)));
}

class Exec {
 public:
  Exec(CtaState& cta, WarpState& warp, const KernelEnv& env, int pc)
      : cta_(cta), warp_(warp), env_(env), k_(*env.kernel), in_(k_.instructions[static_cast<size_t>(pc)]), pc_(pc) {}

  [[noreturn]] void raise(unsigned lane, FaultKind kind, const std::string& detail) const {
    MachineFaultRecord r;
    r.kernel = k_.name;
    r.module_id = env_.module_id;
    r.instruction = pc_;
    r.opcode_text = print_instruction(k_, in_);
    r.block_idx = cta_.ctaid;
    r.thread_idx = thread(lane).tid;
    r.kind = kind;
    r.detail = detail;
    throw MachineFault(std::move(r));
  }

  ThreadContext& thread(unsigned lane) const { return cta_.threads[warp_.id * kWarpSize + lane]; }

  bool guard_passes(unsigned lane) const {
    if (!in_.guard) return true;
    const TypedValue p = coerce(reg(thread(lane), in_.guard->reg), Tag::pred);
    return p.pred() != in_.guard->negate;
  }

  // Executes the instruction for one lane.
  void run_lane(unsigned lane, StepResult& out) {
    ThreadContext& t = thread(lane);
    const Tag ty = in_.type;
    auto src = [&](size_t i, Tag want) { return value(in_.srcs[i], want, t, lane); };
    auto write = [&](size_t i, TypedValue v) { t.regs[in_.dsts[i]] = v; };

    switch (in_.opcode) {
      case Opcode::mov:
        write(0, src(0, ty));
        break;
      case Opcode::ld: {
        const uint64_t a = address(in_.srcs[0], in_.space, t);
        if (in_.space == Space::global) out.global_addrs.push_back(a);
        write(0, load(in_.space, a, ty, t));
        break;
      }
      case Opcode::st: {
        const uint64_t a = address(in_.srcs[0], in_.space, t);
        const TypedValue v = src(1, ty);
        if (in_.space == Space::global) out.global_addrs.push_back(a);
        store(in_.space, a, v, t);
        break;
      }
      case Opcode::add: write(0, exec_add(src(0, ty), src(1, ty), ty)); break;
      case Opcode::sub: write(0, exec_sub(src(0, ty), src(1, ty), ty)); break;
      case Opcode::mul: write(0, exec_mul(src(0, ty), src(1, ty), ty, in_.mul_mode)); break;
      case Opcode::mad: {
        const Tag ct = in_.mul_mode == MulMode::wide ? wide_tag(ty) : ty;
        write(0, exec_mad(src(0, ty), src(1, ty), src(2, ct), ty, in_.mul_mode));
        break;
      }
      case Opcode::fma: write(0, exec_fma(src(0, ty), src(1, ty), src(2, ty), ty)); break;
      case Opcode::div: write(0, exec_div(src(0, ty), src(1, ty), ty)); break;
      case Opcode::rem: write(0, exec_rem(src(0, ty), src(1, ty), ty, env_.fault)); break;
      case Opcode::brev: write(0, exec_brev(src(0, ty), ty, env_.fault)); break;
      case Opcode::bfe: write(0, exec_bfe(src(0, ty), src(1, Tag::u32), src(2, Tag::u32), ty, env_.fault)); break;
      case Opcode::cvt:
        write(0, exec_cvt(src(0, in_.src_type), in_.src_type, ty, in_.rounding, env_.fault));
        break;
      case Opcode::setp: write(0, exec_setp(src(0, ty), src(1, ty), ty, in_.cmp)); break;
      case Opcode::selp: write(0, exec_selp(src(0, ty), src(1, ty), src(2, Tag::pred), ty)); break;
      case Opcode::tex: {
        const int32_t x = static_cast<int32_t>(src(0, Tag::s32).s());
        const int32_t y = in_.geom == TexGeom::d2 ? static_cast<int32_t>(src(1, Tag::s32).s()) : 0;
        uint64_t texel = 0;
        const auto raw = env_.textures ? env_.textures->fetch(in_.texref, x, y, *env_.global, &texel)
                                       : throw OpFault(FaultKind::unbound_texture, "no texture registry");
        out.global_addrs.push_back(texel);
        for (size_t i = 0; i < 4; ++i) write(i, TypedValue::from_bits(ty, raw[i]));
        break;
      }
      case Opcode::atom: {
        const uint64_t a = address(in_.srcs[0], Space::global, t);
        const TypedValue v = src(1, ty);
        out.global_addrs.push_back(a);
        const uint32_t old = env_.global->atomic_add_u32(a, static_cast<uint32_t>(v.bits));
        write(0, TypedValue::from_bits(ty, old));
        break;
      }
      case Opcode::bra:
      case Opcode::bar:
      case Opcode::exit:
      case Opcode::ret:
        break;
    }
  }

  void log_writes(unsigned lane) {
    const uint64_t base = load_le(env_.params.subspan(k_.instrumentation->log_param_offset, 8), Tag::u64).u();
    const ThreadContext& t = thread(lane);
    const uint32_t gtid = static_cast<uint32_t>(cta_.linear_id * env_.block.count() + tid_linear(t.tid, env_.block));
    for (RegId d : in_.dsts) {
      const TypedValue v = *t.regs[d];
      append_log_record(*env_.global, base,
                        {gtid, static_cast<uint32_t>(pc_), static_cast<uint16_t>(d), static_cast<uint16_t>(v.tag), v.bits});
    }
  }

 private:
  TypedValue reg(const ThreadContext& t, RegId r) const {
    if (!t.regs[r]) throw OpFault(FaultKind::unwritten_register, "register " + k_.reg_names[r] + " read before any write");
    return *t.regs[r];
  }

  uint32_t special(SpecialReg s, const ThreadContext& t, unsigned lane) const {
    switch (s) {
      case SpecialReg::tid_x: return t.tid.x;
      case SpecialReg::tid_y: return t.tid.y;
      case SpecialReg::tid_z: return t.tid.z;
      case SpecialReg::ntid_x: return env_.block.x;
      case SpecialReg::ntid_y: return env_.block.y;
      case SpecialReg::ntid_z: return env_.block.z;
      case SpecialReg::ctaid_x: return cta_.ctaid.x;
      case SpecialReg::ctaid_y: return cta_.ctaid.y;
      case SpecialReg::ctaid_z: return cta_.ctaid.z;
      case SpecialReg::nctaid_x: return env_.grid.x;
      case SpecialReg::nctaid_y: return env_.grid.y;
      case SpecialReg::nctaid_z: return env_.grid.z;
      case SpecialReg::laneid: return lane;
    }
    return 0;
  }

  uint64_t symbol(const std::string& name, Space space) const {
    if (space == Space::none || space == Space::shared)
      if (const VarDecl* v = k_.find_shared(name)) return v->offset;
    if (space == Space::none || space == Space::local)
      if (const VarDecl* v = k_.find_local(name)) return v->offset;
    if (space == Space::none || space == Space::global)
      if (env_.symbols)
        if (auto it = env_.symbols->find(name); it != env_.symbols->end()) return it->second;
    if (space == Space::none || space == Space::param)
      if (const KernelParam* p = k_.find_param(name)) return p->offset;
    throw OpFault(FaultKind::bad_address_space,
                  "symbol '" + name + "' is not visible in the " + std::string(space_name(space)) + " space");
  }

  TypedValue value(const Operand& op, Tag want, const ThreadContext& t, unsigned lane) const {
    if (auto* r = std::get_if<RegOperand>(&op)) return coerce(reg(t, r->reg), want);
    if (auto* i = std::get_if<Immediate>(&op)) return imm_value(*i, want);
    if (auto* s = std::get_if<SpecialOperand>(&op)) return coerce(TypedValue::from_bits(Tag::u32, special(s->reg, t, lane)), want);
    if (auto* s = std::get_if<SymbolOperand>(&op)) return TypedValue::from_bits(want, symbol(s->name, Space::none));
    throw OpFault(FaultKind::type_mismatch, "address operand used as a value");
  }

  uint64_t address(const Operand& op, Space space, const ThreadContext& t) const {
    const auto& a = std::get<AddressOperand>(op);
    uint64_t base;
    if (std::holds_alternative<RegId>(a.base)) base = reg(t, std::get<RegId>(a.base)).bits;
    else base = symbol(std::get<std::string>(a.base), space);
    return base + static_cast<uint64_t>(a.offset);
  }

  static void check_window(uint64_t addr, unsigned n, size_t size, Space s) {
    if (addr % n != 0) throw OpFault(FaultKind::misaligned, "misaligned " + std::string(space_name(s)) + " access at " + std::to_string(addr));
    if (addr > size || n > size - addr)
      throw OpFault(FaultKind::out_of_bounds, std::string(space_name(s)) + " access at offset " + std::to_string(addr) +
                                                  " outside " + std::to_string(size) + " bytes");
  }

  TypedValue load(Space s, uint64_t addr, Tag ty, const ThreadContext& t) const {
    const unsigned n = width_bytes(ty);
    switch (s) {
      case Space::global: return env_.global->load(addr, ty);
      case Space::shared:
        check_window(addr, n, cta_.shared.size(), s);
        return load_le(std::span<const uint8_t>(cta_.shared).subspan(addr, n), ty);
      case Space::local:
        check_window(addr, n, t.local.size(), s);
        return load_le(std::span<const uint8_t>(t.local).subspan(addr, n), ty);
      case Space::param:
        check_window(addr, n, env_.params.size(), s);
        return load_le(env_.params.subspan(addr, n), ty);
      case Space::none: break;
    }
    throw OpFault(FaultKind::bad_address_space, "load without a state space");
  }

  void store(Space s, uint64_t addr, TypedValue v, ThreadContext& t) const {
    const unsigned n = width_bytes(v.tag);
    switch (s) {
      case Space::global: env_.global->store(addr, v); return;
      case Space::shared:
        check_window(addr, n, cta_.shared.size(), s);
        store_le(std::span<uint8_t>(cta_.shared).subspan(addr, n), v);
        return;
      case Space::local:
        check_window(addr, n, t.local.size(), s);
        store_le(std::span<uint8_t>(t.local).subspan(addr, n), v);
        return;
      default: break;
    }
    throw OpFault(FaultKind::bad_address_space, "store to a read-only or missing state space");
  }

  CtaState& cta_;
  WarpState& warp_;
  const KernelEnv& env_;
  const KernelObject& k_;
  const Instruction& in_;
  int pc_;
};

bool leaks(const Instruction& in) {
  switch (in.opcode) {
    case Opcode::ld:
    case Opcode::st:
    case Opcode::tex:
    case Opcode::atom:
    case Opcode::bra:
    case Opcode::bar:
    case Opcode::exit:
    case Opcode::ret:
      return false;
    default:
      return true;
  }
}

}  // namespace

bool CtaState::done() const {
  for (const auto& w : warps)
    if (!w.done()) return false;
  return true;
}

bool CtaState::at_safe_point() const {
  for (const auto& w : warps)
    if (w.at_barrier || w.barrier_pass) return false;
  return true;
}

Dim3 cta_coords(uint64_t linear, const Dim3& grid) {
  return {static_cast<uint32_t>(linear % grid.x), static_cast<uint32_t>((linear / grid.x) % grid.y),
          static_cast<uint32_t>(linear / (uint64_t{grid.x} * grid.y))};
}

CtaState make_cta(const KernelEnv& env, uint64_t linear_id) {
  const KernelObject& k = *env.kernel;
  CtaState c;
  c.ctaid = cta_coords(linear_id, env.grid);
  c.linear_id = linear_id;
  const uint32_t n = static_cast<uint32_t>(env.block.count());
  c.threads.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    c.threads[i].tid = tid_coords(i, env.block);
    c.threads[i].regs.assign(k.register_count(), std::nullopt);
    c.threads[i].local.assign(k.local_bytes_per_thread, 0);
  }
  const uint32_t nw = (n + kWarpSize - 1) / kWarpSize;
  for (uint32_t w = 0; w < nw; ++w) {
    WarpState ws;
    ws.id = w;
    const uint32_t lanes = std::min(kWarpSize, n - w * kWarpSize);
    const uint32_t mask = lanes == 32 ? ~0u : (1u << lanes) - 1;
    ws.exited = ~mask;
    ws.stack.push_back({0, kNoReconvergence, mask});
    c.warps.push_back(std::move(ws));
  }
  c.shared.assign(k.shared_bytes, 0);
  return c;
}

void step_warp(CtaState& cta, WarpState& warp, const KernelEnv& env, StepResult& out) {
  out.kind = StepResult::Kind::idle;
  out.global_addrs.clear();
  out.is_store = false;
  out.access_bytes = 0;
  normalize(warp);
  if (warp.done()) return;

  SimtEntry& top = warp.stack.back();
  const int pc = top.pc;
  const KernelObject& k = *env.kernel;
  const Instruction& in = k.instructions[static_cast<size_t>(pc)];
  const uint32_t active = top.mask & ~warp.exited;
  out.pc = pc;
  out.cls = op_class(in);
  out.active_mask = active;

  if (in.opcode == Opcode::bar) {
    if (!warp.barrier_pass) {
      warp.at_barrier = true;
      out.kind = StepResult::Kind::barrier_wait;
      out.exec_mask = 0;
      return;
    }
    warp.barrier_pass = false;
    top.pc = pc + 1;
    out.exec_mask = active;
  } else {
    Exec ex(cta, warp, env, pc);
    uint32_t exec = 0;
    for (unsigned lane = 0; lane < kWarpSize; ++lane) {
      if (!(active >> lane & 1)) continue;
      try {
        if (ex.guard_passes(lane)) exec |= 1u << lane;
      } catch (const OpFault& f) {
        ex.raise(lane, f.kind(), f.detail());
      }
    }
    out.exec_mask = exec;
    uint32_t wrote = exec;
    for (unsigned lane = 0; lane < kWarpSize; ++lane) {
      if (!(exec >> lane & 1)) continue;
      try {
        ex.run_lane(lane, out);
      } catch (const OpFault& f) {
        ex.raise(lane, f.kind(), f.detail());
      } catch (const MemoryAccessFault& f) {
        ex.raise(lane, f.info().reason.starts_with("misaligned") ? FaultKind::misaligned : FaultKind::out_of_bounds,
                 f.info().reason);
      }
    }
    if (env.fault == InjectedFault::predication_leak && in.guard && leaks(in)) {
      // guarded-off lanes write anyway, whenever they can
      for (unsigned lane = 0; lane < kWarpSize; ++lane) {
        if (!(active >> lane & 1) || (exec >> lane & 1)) continue;
        try {
          ex.run_lane(lane, out);
          wrote |= 1u << lane;
        } catch (const OpFault&) {
        }
      }
    }
    if (k.instrumentation && !in.dsts.empty() && k.instrumentation->write_sites[static_cast<size_t>(pc)]) {
      for (unsigned lane = 0; lane < kWarpSize; ++lane) {
        if (!(wrote >> lane & 1)) continue;
        try {
          ex.log_writes(lane);
        } catch (const OpFault& f) {
          ex.raise(lane, f.kind(), f.detail());
        } catch (const MemoryAccessFault& f) {
          ex.raise(lane, FaultKind::out_of_bounds, "register-write log: " + f.info().reason);
        }
      }
    }

    if (in.opcode == Opcode::st || in.opcode == Opcode::atom) out.is_store = in.opcode == Opcode::st;
    if (!out.global_addrs.empty()) out.access_bytes = static_cast<uint8_t>(in.opcode == Opcode::tex ? 4 : width_bytes(in.type));

    // control flow; `top` is still valid since nothing was pushed yet
    if (in.opcode == Opcode::bra) {
      const uint32_t taken = exec;
      if (taken == active) {
        top.pc = in.target;
      } else if (taken == 0) {
        top.pc = pc + 1;
      } else {
        const int rpc = k.reconv_pc[static_cast<size_t>(pc)];
        const uint32_t not_taken = active & ~taken;
        if (rpc != kNoReconvergence) {
          top.pc = rpc;
          warp.stack.push_back({pc + 1, rpc, not_taken});
          warp.stack.push_back({in.target, rpc, taken});
        } else {
          // paths only meet again at exit (or at an enclosing reconvergence point)
          const int outer = top.rpc;
          top = {pc + 1, outer, not_taken};
          warp.stack.push_back({in.target, outer, taken});
        }
      }
    } else if (in.opcode == Opcode::exit || in.opcode == Opcode::ret) {
      warp.exited |= exec;
      top.pc = pc + 1;
    } else {
      top.pc = pc + 1;
    }
  }

  ++warp.committed;
  ++cta.committed;
  out.kind = StepResult::Kind::committed;
  normalize(warp);
}

bool release_barrier(CtaState& cta) {
  for (const auto& w : cta.warps)
    if (w.done() || !w.at_barrier) return false;
  for (auto& w : cta.warps) {
    w.at_barrier = false;
    w.barrier_pass = true;
  }
  return true;
}

std::string barrier_deadlock_report(const KernelEnv& env, const CtaState& cta) {
  std::string r = "barrier deadlock in " + env.module_id + ":" + env.kernel->name + " block " + to_string(cta.ctaid) + "\n";
  for (const auto& w : cta.warps) {
    r += "  warp " + std::to_string(w.id) + ": ";
    if (w.done()) r += "exited (never arrives)";
    else if (w.at_barrier) r += "waiting at bar.sync, instruction " + std::to_string(w.pc());
    else r += "running at instruction " + std::to_string(w.pc());
    r += "\n";
  }
  return r;
}

}  // namespace gpusim
