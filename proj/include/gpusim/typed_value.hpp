#pragma once

#include <bit>
#include <cstdint>
#include <optional>
#include <string_view>

namespace gpusim {

// Register value kinds. The numeric codes are part of the diff-debug log
// wire format and must not be reordered.
enum class Tag : uint16_t {
  u16 = 0,
  s16 = 1,
  u32 = 2,
  s32 = 3,
  u64 = 4,
  s64 = 5,
  f16 = 6,
  f32 = 7,
  f64 = 8,
  pred = 9,
};

constexpr unsigned width_bits(Tag t) {
  switch (t) {
    case Tag::u16:
    case Tag::s16:
    case Tag::f16:
      return 16;
    case Tag::u32:
    case Tag::s32:
    case Tag::f32:
      return 32;
    case Tag::u64:
    case Tag::s64:
    case Tag::f64:
      return 64;
    case Tag::pred:
      return 1;
  }
  return 0;
}

constexpr unsigned width_bytes(Tag t) { return t == Tag::pred ? 1 : width_bits(t) / 8; }

constexpr bool is_signed_int(Tag t) { return t == Tag::s16 || t == Tag::s32 || t == Tag::s64; }
constexpr bool is_unsigned_int(Tag t) { return t == Tag::u16 || t == Tag::u32 || t == Tag::u64; }
constexpr bool is_int(Tag t) { return is_signed_int(t) || is_unsigned_int(t); }
constexpr bool is_float(Tag t) { return t == Tag::f16 || t == Tag::f32 || t == Tag::f64; }

constexpr uint64_t width_mask(unsigned bits) {
  return bits >= 64 ? ~uint64_t{0} : ((uint64_t{1} << bits) - 1);
}

std::string_view tag_name(Tag t);

// Accepts the canonical names plus the PTX bit-size aliases b16/b32/b64,
// which map to the unsigned tag of the same width.
std::optional<Tag> parse_tag(std::string_view s);

std::optional<Tag> tag_from_code(uint16_t code);

// A scalar register value. `bits` holds exactly width_bits(tag) meaningful
// bits; everything above is zero.
struct TypedValue {
  Tag tag = Tag::u32;
  uint64_t bits = 0;

  static constexpr TypedValue from_bits(Tag t, uint64_t raw) {
    return TypedValue{t, raw & width_mask(width_bits(t))};
  }
  static constexpr TypedValue from_int(Tag t, int64_t v) {
    return from_bits(t, static_cast<uint64_t>(v));
  }
  static TypedValue from_f32(float f) { return {Tag::f32, std::bit_cast<uint32_t>(f)}; }
  static TypedValue from_f64(double d) { return {Tag::f64, std::bit_cast<uint64_t>(d)}; }
  static constexpr TypedValue from_pred(bool b) { return {Tag::pred, b ? 1u : 0u}; }

  constexpr uint64_t u() const { return bits; }
  // Sign-extended from the tag width.
  constexpr int64_t s() const {
    const unsigned w = width_bits(tag);
    if (w >= 64) return static_cast<int64_t>(bits);
    const uint64_t sign = uint64_t{1} << (w - 1);
    return static_cast<int64_t>((bits ^ sign) - sign);
  }
  float f32() const { return std::bit_cast<float>(static_cast<uint32_t>(bits)); }
  double f64() const { return std::bit_cast<double>(bits); }
  constexpr bool pred() const { return bits != 0; }

  friend constexpr bool operator==(const TypedValue&, const TypedValue&) = default;
};

// IEEE binary16 conversions. f32 -> f16 rounds to nearest, ties to even.
uint16_t f32_to_f16_rne(float f);
// Rounds toward zero; only used by the fault-injection build.
uint16_t f32_to_f16_rz(float f);
float f16_to_f32(uint16_t h);

}  // namespace gpusim
