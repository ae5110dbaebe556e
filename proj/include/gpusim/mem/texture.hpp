#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "gpusim/mem/device_memory.hpp"

namespace gpusim {

enum class ChannelKind : uint8_t { float_, signed_int, unsigned_int };

// Only 32-bit components are modeled.
struct ChannelFormat {
  uint8_t bits = 32;
  uint8_t components = 1;
  ChannelKind kind = ChannelKind::float_;

  uint32_t texel_bytes() const { return uint32_t{bits} / 8 * components; }
  friend bool operator==(const ChannelFormat&, const ChannelFormat&) = default;
};

// Parses "f32x1", "u32x4", "s32x2", ...
ChannelFormat parse_channel_format(std::string_view s);
std::string format_name(const ChannelFormat& f);

struct CudaArrayDesc {
  std::string name;
  uint32_t width = 0;
  uint32_t height = 1;
  ChannelFormat format;
  uint64_t backing = 0;  // device address of width*height texels

  uint64_t byte_size() const { return uint64_t{width} * height * format.texel_bytes(); }
  friend bool operator==(const CudaArrayDesc&, const CudaArrayDesc&) = default;
};

// Sampling descriptors. Point sampling and clamp-to-edge are the only modes.
struct TextureInfo {
  bool normalized_coords = false;
  friend bool operator==(const TextureInfo&, const TextureInfo&) = default;
};
struct TextureAttr {
  bool clamp = true;
  friend bool operator==(const TextureAttr&, const TextureAttr&) = default;
};

struct TextureBinding {
  CudaArrayDesc array;
  TextureInfo info;
  TextureAttr attr;
  friend bool operator==(const TextureBinding&, const TextureBinding&) = default;
};

using TexrefId = uint32_t;

// Textures are looked up by name. Any number of texrefs may be registered
// under one name; binding through any of them replaces the name's binding.
class TextureRegistry {
 public:
  struct Entry {
    std::set<TexrefId> texrefs;
    std::optional<TextureBinding> binding;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  void register_texture(const std::string& name, TexrefId texref);
  // Throws BindingError when the texref was never registered.
  void bind_texture_to_array(TexrefId texref, const CudaArrayDesc& array, TextureInfo info = {}, TextureAttr attr = {});
  void unbind_texture(TexrefId texref);

  const Entry* find(const std::string& name) const;
  const std::map<std::string, Entry>& entries() const { return by_name_; }

  // Raw component bits of the clamped texel; missing components read 0.
  // Throws OpFault(unbound_texture) for unknown or unbound names.
  std::array<uint32_t, 4> fetch(const std::string& name, int32_t x, int32_t y, const DeviceMemory& mem,
                                uint64_t* texel_address = nullptr) const;

  friend bool operator==(const TextureRegistry&, const TextureRegistry&) = default;

 private:
  std::map<std::string, Entry> by_name_;
};

}  // namespace gpusim
