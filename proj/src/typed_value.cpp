#include "gpusim/typed_value.hpp"

#include <cstring>

namespace gpusim {

std::string_view tag_name(Tag t) {
  switch (t) {
    case Tag::u16: return "u16";
    case Tag::s16: return "s16";
    case Tag::u32: return "u32";
    case Tag::s32: return "s32";
    case Tag::u64: return "u64";
    case Tag::s64: return "s64";
    case Tag::f16: return "f16";
    case Tag::f32: return "f32";
    case Tag::f64: return "f64";
    case Tag::pred: return "pred";
  }
  return "?";
}

std::optional<Tag> parse_tag(std::string_view s) {
  if (s == "u16" || s == "b16") return Tag::u16;
  if (s == "s16") return Tag::s16;
  if (s == "u32" || s == "b32") return Tag::u32;
  if (s == "s32") return Tag::s32;
  if (s == "u64" || s == "b64") return Tag::u64;
  if (s == "s64") return Tag::s64;
  if (s == "f16") return Tag::f16;
  if (s == "f32") return Tag::f32;
  if (s == "f64") return Tag::f64;
  if (s == "pred") return Tag::pred;
  return std::nullopt;
}

std::optional<Tag> tag_from_code(uint16_t code) {
  if (code > static_cast<uint16_t>(Tag::pred)) return std::nullopt;
  return static_cast<Tag>(code);
}

namespace {

uint16_t f32_to_f16(float f, bool round_nearest) {
  const uint32_t x = std::bit_cast<uint32_t>(f);
  const uint16_t sign = static_cast<uint16_t>((x >> 16) & 0x8000u);
  const uint32_t exp = (x >> 23) & 0xFFu;
  uint32_t mant = x & 0x7FFFFFu;

  if (exp == 0xFF) {
    if (mant == 0) return sign | 0x7C00u;
    // quiet NaN, keep the top payload bits
    return static_cast<uint16_t>(sign | 0x7E00u | (mant >> 13));
  }

  const int e = static_cast<int>(exp) - 127 + 15;
  if (e >= 0x1F) {
    // overflow: RNE goes to inf, RZ saturates at max finite
    return round_nearest ? (sign | 0x7C00u) : (sign | 0x7BFFu);
  }

  if (e <= 0) {
    // subnormal (or zero) in f16
    if (e < -10) return sign;  // below half the smallest subnormal
    mant |= 0x800000u;         // implicit leading one
    const unsigned shift = static_cast<unsigned>(14 - e);
    uint32_t half = mant >> shift;
    if (round_nearest) {
      const uint32_t rem = mant & ((1u << shift) - 1);
      const uint32_t midpoint = 1u << (shift - 1);
      if (rem > midpoint || (rem == midpoint && (half & 1u))) ++half;
    }
    return static_cast<uint16_t>(sign | half);
  }

  uint32_t half = (static_cast<uint32_t>(e) << 10) | (mant >> 13);
  if (round_nearest) {
    const uint32_t rem = mant & 0x1FFFu;
    if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) ++half;  // may carry into inf
  }
  return static_cast<uint16_t>(sign | half);
}

}  // namespace

uint16_t f32_to_f16_rne(float f) { return f32_to_f16(f, true); }
uint16_t f32_to_f16_rz(float f) { return f32_to_f16(f, false); }

float f16_to_f32(uint16_t h) {
  const uint32_t sign = static_cast<uint32_t>(h & 0x8000u) << 16;
  const uint32_t exp = (h >> 10) & 0x1Fu;
  uint32_t mant = h & 0x3FFu;
  uint32_t out;
  if (exp == 0x1F) {
    out = sign | 0x7F800000u | (mant << 13);
  } else if (exp == 0) {
    if (mant == 0) {
      out = sign;
    } else {
      int e = -1;
      do {
        ++e;
        mant <<= 1;
      } while ((mant & 0x400u) == 0);
      mant &= 0x3FFu;
      out = sign | (static_cast<uint32_t>(127 - 15 - e) << 23) | (mant << 13);
    }
  } else {
    out = sign | ((exp - 15 + 127) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(out);
}

}  // namespace gpusim
