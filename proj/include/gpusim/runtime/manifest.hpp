#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "gpusim/core/fault.hpp"
#include "gpusim/mem/device_memory.hpp"
#include "gpusim/mem/texture.hpp"

namespace gpusim {

// A workload manifest: one directive per line, '#' starts a comment.
// See docs/manifest.md for the grammar.

struct BufRef {
  std::string name;
  uint64_t offset = 0;
  friend bool operator==(const BufRef&, const BufRef&) = default;
};

struct LoadModule {
  std::string alias;
  std::string path;  // relative to the manifest directory
};

struct Alloc {
  std::string name;
  uint64_t size = 0;
  bool host = false;
};

struct InitPattern {
  enum class Kind : uint8_t { iota, constant, random };
  Kind kind = Kind::constant;
  Tag type = Tag::u32;
  std::string a, b, c;  // start/step, value, seed/lo/hi as written
};

struct Init {
  enum class Kind : uint8_t { bytes, file, pattern };
  std::string name;
  Kind kind = Kind::bytes;
  std::vector<uint8_t> bytes;
  std::string path;
  InitPattern pattern;
};

struct Memcpy {
  CopyDirection dir = CopyDirection::host_to_device;
  BufRef src, dst;
  uint64_t len = 0;
  uint32_t stream = 0;
};

enum class LaunchStyle : uint8_t { runtime, driver };

// One kernel argument: a buffer address (plus offset) or a typed scalar.
// Runtime-style arguments carry an explicit byte offset.
struct LaunchArg {
  std::optional<uint32_t> at;
  std::optional<BufRef> buffer;
  TypedValue value;
};

struct Launch {
  std::string module;
  std::string kernel;
  Dim3 grid, block;
  std::vector<LaunchArg> args;
  uint32_t stream = 0;
  LaunchStyle style = LaunchStyle::driver;
};

struct RecordEvent {
  std::string event;
  uint32_t stream = 0;
};

struct WaitEvent {
  std::string event;
  uint32_t stream = 0;
};

struct Sync {};

struct Dump {
  std::string name;
  std::string path;  // relative to <out>/dumps
};

struct Check {
  std::string name;
  std::string path;  // oracle file, relative to the manifest directory
};

struct RegisterTexture {
  std::string name;
  TexrefId texref = 0;
};

struct BindTexture {
  TexrefId texref = 0;
  std::string buffer;
  uint32_t width = 0, height = 1;
  ChannelFormat format;
};

struct UnbindTexture {
  TexrefId texref = 0;
};

// Marks the start of a host API call; the diff workflow compares state
// call by call.
struct CallMarker {
  std::string name;
};

using DirectiveBody = std::variant<LoadModule, Alloc, Init, Memcpy, Launch, RecordEvent, WaitEvent, Sync, Dump, Check,
                                   RegisterTexture, BindTexture, UnbindTexture, CallMarker>;

struct Directive {
  int line = 0;
  std::string text;
  DirectiveBody body;
};

struct Manifest {
  std::string source_name;
  std::filesystem::path base_dir;
  std::string text;
  std::vector<Directive> directives;

  std::filesystem::path resolve(const std::string& rel) const;
};

// Throws ManifestError with the line number.
Manifest parse_manifest(const std::string& text, const std::string& source_name, const std::filesystem::path& base_dir);
Manifest load_manifest(const std::filesystem::path& path);

// SHA-256 over the manifest text and every file it references.
std::array<uint8_t, 32> manifest_hash(const Manifest& m);
std::string hex(std::span<const uint8_t> bytes);

// Expands an init directive to exactly `size` bytes.
std::vector<uint8_t> init_bytes(const Manifest& m, const Init& init, uint64_t size);

// Scalar literal as written in a manifest ("u32:7", "f32:1.5").
TypedValue parse_scalar(Tag t, const std::string& text);

std::vector<uint8_t> read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, std::span<const uint8_t> bytes);

}  // namespace gpusim
