#include "gpusim/core/ops.hpp"

#include <cmath>

namespace gpusim {

namespace {

using u128 = unsigned __int128;
using s128 = __int128;

void need(const TypedValue& v, Tag ty, const char* op) {
  if (v.tag != ty)
    throw OpFault(FaultKind::type_mismatch, std::string(op) + ": operand is ." + std::string(tag_name(v.tag)) +
                                                ", instruction wants ." + std::string(tag_name(ty)));
}

[[noreturn]] void bad_type(Tag ty, const char* op) {
  throw OpFault(FaultKind::type_mismatch, std::string(op) + " does not support ." + std::string(tag_name(ty)));
}

TypedValue int_result(Tag ty, uint64_t raw) { return TypedValue::from_bits(ty, raw); }

// Full product of two same-tag integers, exact in 128 bits.
s128 full_product(const TypedValue& a, const TypedValue& b) {
  if (is_signed_int(a.tag)) return s128{a.s()} * s128{b.s()};
  return static_cast<s128>(u128{a.u()} * u128{b.u()});
}

uint64_t product_bits(const TypedValue& a, const TypedValue& b, MulMode mode) {
  const unsigned w = width_bits(a.tag);
  const auto p = static_cast<u128>(full_product(a, b));
  // lo and wide both keep the low bits; wide only exists for w <= 32
  return static_cast<uint64_t>(mode == MulMode::hi ? p >> w : p);
}

}  // namespace

Tag wide_tag(Tag t) {
  switch (t) {
    case Tag::u16: return Tag::u32;
    case Tag::s16: return Tag::s32;
    case Tag::u32: return Tag::u64;
    case Tag::s32: return Tag::s64;
    default: bad_type(t, "wide");
  }
}

TypedValue coerce(TypedValue v, Tag want) {
  if (v.tag == want) return v;
  if ((v.tag == Tag::pred) != (want == Tag::pred) || width_bits(v.tag) != width_bits(want))
    throw OpFault(FaultKind::type_mismatch,
                  "." + std::string(tag_name(v.tag)) + " value used as ." + std::string(tag_name(want)));
  return TypedValue::from_bits(want, v.bits);
}

TypedValue exec_add(TypedValue a, TypedValue b, Tag ty) {
  need(a, ty, "add");
  need(b, ty, "add");
  if (is_int(ty)) return int_result(ty, a.u() + b.u());
  if (ty == Tag::f32) return TypedValue::from_f32(a.f32() + b.f32());
  if (ty == Tag::f64) return TypedValue::from_f64(a.f64() + b.f64());
  bad_type(ty, "add");
}

TypedValue exec_sub(TypedValue a, TypedValue b, Tag ty) {
  need(a, ty, "sub");
  need(b, ty, "sub");
  if (is_int(ty)) return int_result(ty, a.u() - b.u());
  if (ty == Tag::f32) return TypedValue::from_f32(a.f32() - b.f32());
  if (ty == Tag::f64) return TypedValue::from_f64(a.f64() - b.f64());
  bad_type(ty, "sub");
}

TypedValue exec_mul(TypedValue a, TypedValue b, Tag ty, MulMode mode) {
  need(a, ty, "mul");
  need(b, ty, "mul");
  if (is_int(ty)) {
    if (mode == MulMode::wide) return int_result(wide_tag(ty), product_bits(a, b, mode));
    return int_result(ty, product_bits(a, b, mode));
  }
  if (ty == Tag::f32) return TypedValue::from_f32(a.f32() * b.f32());
  if (ty == Tag::f64) return TypedValue::from_f64(a.f64() * b.f64());
  bad_type(ty, "mul");
}

TypedValue exec_mad(TypedValue a, TypedValue b, TypedValue c, Tag ty, MulMode mode) {
  if (is_int(ty)) {
    const TypedValue p = exec_mul(a, b, ty, mode);
    return exec_add(p, c, p.tag);
  }
  need(a, ty, "mad");
  need(b, ty, "mad");
  need(c, ty, "mad");
  if (ty == Tag::f32) {
    volatile float p = a.f32() * b.f32();
    return TypedValue::from_f32(p + c.f32());
  }
  if (ty == Tag::f64) {
    volatile double p = a.f64() * b.f64();
    return TypedValue::from_f64(p + c.f64());
  }
  bad_type(ty, "mad");
}

TypedValue exec_fma(TypedValue a, TypedValue b, TypedValue c, Tag ty) {
  need(a, ty, "fma");
  need(b, ty, "fma");
  need(c, ty, "fma");
  if (ty == Tag::f32) return TypedValue::from_f32(std::fma(a.f32(), b.f32(), c.f32()));
  if (ty == Tag::f64) return TypedValue::from_f64(std::fma(a.f64(), b.f64(), c.f64()));
  bad_type(ty, "fma");
}

TypedValue exec_div(TypedValue a, TypedValue b, Tag ty) {
  need(a, ty, "div");
  need(b, ty, "div");
  if (is_int(ty)) {
    if (b.u() == 0) throw OpFault(FaultKind::divide_by_zero, "integer division by zero");
    if (is_signed_int(ty)) {
      // widen so INT_MIN / -1 wraps instead of trapping
      const s128 q = s128{a.s()} / s128{b.s()};
      return int_result(ty, static_cast<uint64_t>(q));
    }
    return int_result(ty, a.u() / b.u());
  }
  if (ty == Tag::f32) return TypedValue::from_f32(a.f32() / b.f32());
  if (ty == Tag::f64) return TypedValue::from_f64(a.f64() / b.f64());
  bad_type(ty, "div");
}

TypedValue exec_rem(TypedValue a, TypedValue b, Tag ty, InjectedFault fault) {
  need(a, ty, "rem");
  need(b, ty, "rem");
  if (!is_int(ty)) bad_type(ty, "rem");
  if (b.u() == 0) throw OpFault(FaultKind::divide_by_zero, "integer remainder by zero");
  if (fault == InjectedFault::union_rem) {
    // the untyped implementation: everything through one 64-bit field
    const uint64_t x = static_cast<uint64_t>(a.s());
    const uint64_t y = static_cast<uint64_t>(b.s());
    return int_result(ty, x % y);
  }
  if (is_signed_int(ty)) {
    const s128 r = s128{a.s()} % s128{b.s()};
    return int_result(ty, static_cast<uint64_t>(r));
  }
  return int_result(ty, a.u() % b.u());
}

TypedValue exec_brev(TypedValue a, Tag ty, InjectedFault fault) {
  need(a, ty, "brev");
  if (ty != Tag::u32 && ty != Tag::u64) bad_type(ty, "brev");
  const unsigned w = width_bits(ty);
  uint64_t r = 0;
  uint64_t x = a.u();
  for (unsigned i = 0; i < w; ++i, x >>= 1) r = (r << 1) | (x & 1);
  if (fault == InjectedFault::brev_off_by_one) r <<= 1;
  return int_result(ty, r);
}

TypedValue exec_bfe(TypedValue a, TypedValue b, TypedValue c, Tag ty, InjectedFault fault) {
  need(a, ty, "bfe");
  need(b, Tag::u32, "bfe");
  need(c, Tag::u32, "bfe");
  if (ty != Tag::u32 && ty != Tag::s32 && ty != Tag::u64 && ty != Tag::s64) bad_type(ty, "bfe");
  const unsigned w = width_bits(ty);
  const unsigned pos = static_cast<unsigned>(b.u() & 0xff);
  const unsigned len = static_cast<unsigned>(c.u() & 0xff);
  const bool sign_fill = is_signed_int(ty) && fault != InjectedFault::bfe_sign_fill;

  // bits actually available inside the operand
  const unsigned avail = pos >= w ? 0 : std::min(len, w - pos);
  uint64_t field = avail == 0 ? 0 : (a.u() >> pos) & width_mask(avail);
  if (sign_fill && len > 0) {
    // sign bit is the last extracted bit, or a's msb when the field runs past it
    const unsigned sbit_pos = std::min(pos + len - 1, w - 1);
    const bool sbit = (a.u() >> sbit_pos) & 1;
    if (sbit) field |= ~width_mask(avail);
  }
  return int_result(ty, field);
}

TypedValue exec_cvt(TypedValue a, Tag from, Tag to, Rounding rnd, InjectedFault fault) {
  need(a, from, "cvt");
  if (is_int(from) && is_int(to)) {
    const uint64_t v = is_signed_int(from) ? static_cast<uint64_t>(a.s()) : a.u();
    return int_result(to, v);
  }
  if (from == Tag::f32 && to == Tag::f16) {
    const uint16_t h = fault == InjectedFault::cvt_truncation ? f32_to_f16_rz(a.f32()) : f32_to_f16_rne(a.f32());
    return TypedValue::from_bits(Tag::f16, h);
  }
  if (from == Tag::f16 && to == Tag::f32) return TypedValue::from_f32(f16_to_f32(static_cast<uint16_t>(a.bits)));
  if (is_int(from) && to == Tag::f32) {
    if (is_signed_int(from)) return TypedValue::from_f32(static_cast<float>(a.s()));
    return TypedValue::from_f32(static_cast<float>(a.u()));
  }
  if (from == Tag::f32 && is_int(to)) {
    const float f = a.f32();
    if (std::isnan(f)) return int_result(to, 0);
    double r;
    switch (rnd) {
      case Rounding::rni: r = std::nearbyint(static_cast<double>(f)); break;
      case Rounding::rzi: r = std::trunc(static_cast<double>(f)); break;
      case Rounding::rmi: r = std::floor(static_cast<double>(f)); break;
      case Rounding::rpi: r = std::ceil(static_cast<double>(f)); break;
      default: throw OpFault(FaultKind::type_mismatch, "cvt from float to integer needs an integer rounding mode");
    }
    // saturate into the destination range
    const unsigned w = width_bits(to);
    if (is_signed_int(to)) {
      const double lo = -std::ldexp(1.0, static_cast<int>(w - 1));
      const double hi = std::ldexp(1.0, static_cast<int>(w - 1));
      if (r < lo) return int_result(to, uint64_t{1} << (w - 1));
      if (r >= hi) return int_result(to, width_mask(w - 1));
      return int_result(to, static_cast<uint64_t>(static_cast<int64_t>(r)));
    }
    if (r <= 0) return int_result(to, 0);
    if (r >= std::ldexp(1.0, static_cast<int>(w))) return int_result(to, width_mask(w));
    return int_result(to, static_cast<uint64_t>(r));
  }
  throw OpFault(FaultKind::type_mismatch,
                "unsupported conversion ." + std::string(tag_name(to)) + "." + std::string(tag_name(from)));
}

TypedValue exec_setp(TypedValue a, TypedValue b, Tag ty, CmpOp cmp) {
  need(a, ty, "setp");
  need(b, ty, "setp");
  int order;  // -1, 0, 1; 2 = unordered
  if (is_signed_int(ty)) {
    order = a.s() < b.s() ? -1 : a.s() > b.s() ? 1 : 0;
  } else if (is_unsigned_int(ty)) {
    order = a.u() < b.u() ? -1 : a.u() > b.u() ? 1 : 0;
  } else if (ty == Tag::f32 || ty == Tag::f64) {
    const double x = ty == Tag::f32 ? a.f32() : a.f64();
    const double y = ty == Tag::f32 ? b.f32() : b.f64();
    order = std::isnan(x) || std::isnan(y) ? 2 : x < y ? -1 : x > y ? 1 : 0;
  } else {
    bad_type(ty, "setp");
  }
  if (order == 2) return TypedValue::from_pred(false);
  bool r = false;
  switch (cmp) {
    case CmpOp::eq: r = order == 0; break;
    case CmpOp::ne: r = order != 0; break;
    case CmpOp::lt: r = order < 0; break;
    case CmpOp::le: r = order <= 0; break;
    case CmpOp::gt: r = order > 0; break;
    case CmpOp::ge: r = order >= 0; break;
    case CmpOp::none: bad_type(ty, "setp");
  }
  return TypedValue::from_pred(r);
}

TypedValue exec_selp(TypedValue a, TypedValue b, TypedValue p, Tag ty) {
  need(a, ty, "selp");
  need(b, ty, "selp");
  need(p, Tag::pred, "selp");
  return p.pred() ? a : b;
}

}  // namespace gpusim
