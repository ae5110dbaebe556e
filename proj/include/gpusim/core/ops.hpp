#pragma once

#include "gpusim/core/fault.hpp"
#include "gpusim/ptx/module.hpp"
#include "gpusim/typed_value.hpp"

namespace gpusim {

// Typed scalar semantics. Operands must already carry the instruction's
// tag (see coerce); a mismatch raises OpFault(type_mismatch). Results
// carry the instruction's result tag.

TypedValue exec_add(TypedValue a, TypedValue b, Tag ty);
TypedValue exec_sub(TypedValue a, TypedValue b, Tag ty);
TypedValue exec_mul(TypedValue a, TypedValue b, Tag ty, MulMode mode);
// Float mad is a multiply then an add, each rounded; never fused.
TypedValue exec_mad(TypedValue a, TypedValue b, TypedValue c, Tag ty, MulMode mode);
TypedValue exec_fma(TypedValue a, TypedValue b, TypedValue c, Tag ty);
TypedValue exec_div(TypedValue a, TypedValue b, Tag ty);
TypedValue exec_rem(TypedValue a, TypedValue b, Tag ty, InjectedFault fault = InjectedFault::none);
TypedValue exec_brev(TypedValue a, Tag ty, InjectedFault fault = InjectedFault::none);
TypedValue exec_bfe(TypedValue a, TypedValue b, TypedValue c, Tag ty, InjectedFault fault = InjectedFault::none);
TypedValue exec_cvt(TypedValue a, Tag from, Tag to, Rounding rnd = Rounding::none,
                    InjectedFault fault = InjectedFault::none);
TypedValue exec_setp(TypedValue a, TypedValue b, Tag ty, CmpOp cmp);
TypedValue exec_selp(TypedValue a, TypedValue b, TypedValue p, Tag ty);

// Same-width values are reinterpreted under the wanted tag; anything else
// is a type mismatch.
TypedValue coerce(TypedValue v, Tag want);

// The result tag of a mul/mad in the given mode (wide doubles the width).
Tag wide_tag(Tag t);

}  // namespace gpusim
