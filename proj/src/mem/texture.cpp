#include "gpusim/mem/texture.hpp"

#include <algorithm>

#include "gpusim/core/fault.hpp"
#include "gpusim/error.hpp"

namespace gpusim {

ChannelFormat parse_channel_format(std::string_view s) {
  ChannelFormat f;
  if (s.size() != 5 || s.substr(1, 2) != "32" || s[3] != 'x')
    throw ConfigError("bad channel format '" + std::string(s) + "' (want f32x1, u32x4, ...)");
  switch (s[0]) {
    case 'f': f.kind = ChannelKind::float_; break;
    case 's': f.kind = ChannelKind::signed_int; break;
    case 'u': f.kind = ChannelKind::unsigned_int; break;
    default: throw ConfigError("bad channel kind in '" + std::string(s) + "'");
  }
  if (s[4] != '1' && s[4] != '2' && s[4] != '4') throw ConfigError("component count must be 1, 2 or 4 in '" + std::string(s) + "'");
  f.components = static_cast<uint8_t>(s[4] - '0');
  return f;
}

std::string format_name(const ChannelFormat& f) {
  const char k = f.kind == ChannelKind::float_ ? 'f' : f.kind == ChannelKind::signed_int ? 's' : 'u';
  return std::string(1, k) + std::to_string(f.bits) + "x" + std::to_string(f.components);
}

void TextureRegistry::register_texture(const std::string& name, TexrefId texref) {
  by_name_[name].texrefs.insert(texref);
}

void TextureRegistry::bind_texture_to_array(TexrefId texref, const CudaArrayDesc& array, TextureInfo info, TextureAttr attr) {
  bool found = false;
  for (auto& [name, e] : by_name_)
    if (e.texrefs.contains(texref)) {
      // a bind over an existing binding is an implicit unbind first
      e.binding = TextureBinding{array, info, attr};
      found = true;
    }
  if (!found) throw BindingError("texref " + std::to_string(texref) + " is not registered under any texture name");
}

void TextureRegistry::unbind_texture(TexrefId texref) {
  bool found = false;
  for (auto& [name, e] : by_name_)
    if (e.texrefs.contains(texref)) {
      e.binding.reset();
      found = true;
    }
  if (!found) throw BindingError("texref " + std::to_string(texref) + " is not registered under any texture name");
}

const TextureRegistry::Entry* TextureRegistry::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : &it->second;
}

std::array<uint32_t, 4> TextureRegistry::fetch(const std::string& name, int32_t x, int32_t y, const DeviceMemory& mem,
                                               uint64_t* texel_address) const {
  const Entry* e = find(name);
  if (!e || !e->binding) throw OpFault(FaultKind::unbound_texture, "texture '" + name + "' is not bound");
  const CudaArrayDesc& a = e->binding->array;
  const int64_t cx = std::clamp<int64_t>(x, 0, int64_t{a.width} - 1);
  const int64_t cy = std::clamp<int64_t>(y, 0, int64_t{a.height} - 1);
  const uint64_t texel = static_cast<uint64_t>(cy) * a.width + static_cast<uint64_t>(cx);
  std::array<uint32_t, 4> out{};
  std::array<uint8_t, 16> raw{};
  const uint32_t n = a.format.texel_bytes();
  if (texel_address) *texel_address = a.backing + texel * n;
  try {
    mem.read(a.backing + texel * n, std::span<uint8_t>(raw.data(), n));
  } catch (const MemoryAccessFault& f) {
    throw OpFault(FaultKind::out_of_bounds, "texture '" + name + "' backing: " + f.info().reason);
  }
  for (unsigned c = 0; c < a.format.components; ++c)
    out[c] = uint32_t{raw[4 * c]} | uint32_t{raw[4 * c + 1]} << 8 | uint32_t{raw[4 * c + 2]} << 16 | uint32_t{raw[4 * c + 3]} << 24;
  return out;
}

}  // namespace gpusim
