#include "gpusim/runtime/manifest.hpp"

#include <openssl/evp.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "gpusim/error.hpp"

namespace gpusim {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

class LineParser {
 public:
  LineParser(const std::string& source, int line, std::vector<std::string> words)
      : source_(source), line_(line), words_(std::move(words)) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw ManifestError(source_ + ":" + std::to_string(line_) + ": " + msg);
  }

  size_t size() const { return words_.size(); }
  const std::string& word(size_t i) const {
    if (i >= words_.size()) fail("'" + words_[0] + "' needs more arguments");
    return words_[i];
  }

  uint64_t number(const std::string& s) const {
    uint64_t v = 0;
    const char* b = s.data();
    const char* e = b + s.size();
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
      b += 2;
      base = 16;
    }
    auto [p, ec] = std::from_chars(b, e, v, base);
    if (ec != std::errc() || p != e || b == e) fail("expected a number, got '" + s + "'");
    return v;
  }

  uint32_t u32(const std::string& s) const {
    const uint64_t v = number(s);
    if (v > 0xFFFFFFFFu) fail("value out of range: " + s);
    return static_cast<uint32_t>(v);
  }

  BufRef bufref(const std::string& s) const {
    const auto plus = s.find('+');
    if (plus == std::string::npos) return {s, 0};
    if (plus == 0) fail("missing buffer name in '" + s + "'");
    return {s.substr(0, plus), number(s.substr(plus + 1))};
  }

  Dim3 dim3(const std::string& s) const {
    const auto parts = split(s, ',');
    if (parts.empty() || parts.size() > 3) fail("expected x[,y[,z]], got '" + s + "'");
    Dim3 d;
    d.x = u32(parts[0]);
    if (parts.size() > 1) d.y = u32(parts[1]);
    if (parts.size() > 2) d.z = u32(parts[2]);
    return d;
  }

  Tag tag(const std::string& s) const {
    auto t = parse_tag(s);
    if (!t || *t == Tag::pred) fail("unknown type '" + s + "'");
    return *t;
  }

  // key=value options after the positional words
  std::map<std::string, std::string> options(size_t from, const std::set<std::string>& allowed) const {
    std::map<std::string, std::string> out;
    for (size_t i = from; i < words_.size(); ++i) {
      const auto eq = words_[i].find('=');
      if (eq == std::string::npos) fail("unexpected argument '" + words_[i] + "'");
      const std::string k = words_[i].substr(0, eq);
      if (!allowed.contains(k)) fail("unknown option '" + k + "'");
      out[k] = words_[i].substr(eq + 1);
    }
    return out;
  }

  void exact(size_t n) const {
    if (words_.size() != n) fail("'" + words_[0] + "' takes " + std::to_string(n - 1) + " arguments");
  }

  LaunchArg arg(const std::string& tok, bool runtime) const {
    LaunchArg a;
    std::string body = tok;
    if (runtime) {
      if (body.empty() || body[0] != '@') fail("runtime-style arguments need an explicit @offset: '" + tok + "'");
      const auto colon = body.find(':');
      if (colon == std::string::npos) fail("expected @offset:value, got '" + tok + "'");
      a.at = u32(body.substr(1, colon - 1));
      body = body.substr(colon + 1);
    } else if (!body.empty() && body[0] == '@') {
      fail("driver-style arguments are packed by signature; drop '@' in '" + tok + "'");
    }
    const auto colon = body.find(':');
    if (colon != std::string::npos) {
      if (auto t = parse_tag(body.substr(0, colon)); t && *t != Tag::pred) {
        try {
          a.value = parse_scalar(*t, body.substr(colon + 1));
        } catch (const ManifestError& e) {
          fail(e.what());
        }
        return a;
      }
    }
    a.buffer = bufref(body);
    a.value = TypedValue::from_bits(Tag::u64, 0);
    return a;
  }

 private:
  const std::string& source_;
  int line_;
  std::vector<std::string> words_;
};

DirectiveBody parse_line(const LineParser& p) {
  const std::string& op = p.word(0);
  if (op == "load_module") {
    p.exact(3);
    return LoadModule{p.word(1), p.word(2)};
  }
  if (op == "alloc") {
    if (p.size() != 3 && p.size() != 4) p.fail("usage: alloc NAME SIZE [host]");
    if (p.size() == 4 && p.word(3) != "host") p.fail("expected 'host', got '" + p.word(3) + "'");
    return Alloc{p.word(1), p.number(p.word(2)), p.size() == 4};
  }
  if (op == "init") {
    Init in;
    in.name = p.word(1);
    const std::string& kind = p.word(2);
    if (kind == "bytes") {
      p.exact(4);
      in.kind = Init::Kind::bytes;
      const std::string& h = p.word(3);
      if (h.size() % 2) p.fail("hex byte string has odd length");
      for (size_t i = 0; i < h.size(); i += 2) {
        uint8_t b = 0;
        auto [q, ec] = std::from_chars(h.data() + i, h.data() + i + 2, b, 16);
        if (ec != std::errc() || q != h.data() + i + 2) p.fail("bad hex byte '" + h.substr(i, 2) + "'");
        in.bytes.push_back(b);
      }
    } else if (kind == "file") {
      p.exact(4);
      in.kind = Init::Kind::file;
      in.path = p.word(3);
    } else if (kind == "pattern") {
      in.kind = Init::Kind::pattern;
      const std::string& pk = p.word(3);
      in.pattern.type = p.tag(p.word(4));
      if (pk == "iota") {
        p.exact(7);
        in.pattern.kind = InitPattern::Kind::iota;
      } else if (pk == "const") {
        p.exact(6);
        in.pattern.kind = InitPattern::Kind::constant;
      } else if (pk == "random") {
        p.exact(8);
        in.pattern.kind = InitPattern::Kind::random;
      } else {
        p.fail("unknown pattern '" + pk + "' (iota, const, random)");
      }
      in.pattern.a = p.word(5);
      if (p.size() > 6) in.pattern.b = p.word(6);
      if (p.size() > 7) in.pattern.c = p.word(7);
      // validate the literals now rather than at run time
      try {
        if (in.pattern.kind == InitPattern::Kind::random) {
          p.number(in.pattern.a);
          parse_scalar(in.pattern.type, in.pattern.b);
          parse_scalar(in.pattern.type, in.pattern.c);
        } else {
          parse_scalar(in.pattern.type, in.pattern.a);
          if (!in.pattern.b.empty()) parse_scalar(in.pattern.type, in.pattern.b);
        }
      } catch (const ManifestError& e) {
        p.fail(e.what());
      }
    } else {
      p.fail("unknown init kind '" + kind + "' (bytes, file, pattern)");
    }
    return in;
  }
  if (op == "memcpy") {
    Memcpy m;
    const std::string& d = p.word(1);
    if (d == "h2d") m.dir = CopyDirection::host_to_device;
    else if (d == "d2h") m.dir = CopyDirection::device_to_host;
    else if (d == "d2d") m.dir = CopyDirection::device_to_device;
    else p.fail("unknown copy direction '" + d + "' (h2d, d2h, d2d)");
    m.src = p.bufref(p.word(2));
    m.dst = p.bufref(p.word(3));
    m.len = p.number(p.word(4));
    const auto o = p.options(5, {"stream"});
    if (o.contains("stream")) m.stream = p.u32(o.at("stream"));
    return m;
  }
  if (op == "launch") {
    Launch l;
    l.module = p.word(1);
    l.kernel = p.word(2);
    const auto o = p.options(3, {"grid", "block", "args", "stream", "style"});
    if (!o.contains("grid") || !o.contains("block")) p.fail("launch needs grid= and block=");
    l.grid = p.dim3(o.at("grid"));
    l.block = p.dim3(o.at("block"));
    if (o.contains("stream")) l.stream = p.u32(o.at("stream"));
    if (o.contains("style")) {
      if (o.at("style") == "runtime") l.style = LaunchStyle::runtime;
      else if (o.at("style") == "driver") l.style = LaunchStyle::driver;
      else p.fail("style must be runtime or driver");
    }
    if (o.contains("args") && !o.at("args").empty())
      for (const auto& tok : split(o.at("args"), ',')) l.args.push_back(p.arg(tok, l.style == LaunchStyle::runtime));
    return l;
  }
  if (op == "record_event") {
    p.exact(3);
    return RecordEvent{p.word(1), p.u32(p.word(2))};
  }
  if (op == "wait_event") {
    p.exact(3);
    return WaitEvent{p.word(1), p.u32(p.word(2))};
  }
  if (op == "sync") {
    p.exact(1);
    return Sync{};
  }
  if (op == "dump") {
    p.exact(3);
    return Dump{p.word(1), p.word(2)};
  }
  if (op == "check") {
    p.exact(3);
    return Check{p.word(1), p.word(2)};
  }
  if (op == "register_texture") {
    p.exact(3);
    return RegisterTexture{p.word(1), p.u32(p.word(2))};
  }
  if (op == "bind_texture") {
    BindTexture b;
    b.texref = p.u32(p.word(1));
    b.buffer = p.word(2);
    const auto o = p.options(3, {"width", "height", "format"});
    if (!o.contains("width")) p.fail("bind_texture needs width=");
    b.width = p.u32(o.at("width"));
    if (o.contains("height")) b.height = p.u32(o.at("height"));
    try {
      b.format = parse_channel_format(o.contains("format") ? o.at("format") : "f32x1");
    } catch (const ConfigError& e) {
      p.fail(e.what());
    }
    return b;
  }
  if (op == "unbind_texture") {
    p.exact(2);
    return UnbindTexture{p.u32(p.word(1))};
  }
  if (op == "call") {
    p.exact(2);
    return CallMarker{p.word(1)};
  }
  p.fail("unknown directive '" + op + "'");
}

}  // namespace

std::filesystem::path Manifest::resolve(const std::string& rel) const {
  const std::filesystem::path p(rel);
  return p.is_absolute() ? p : base_dir / p;
}

TypedValue parse_scalar(Tag t, const std::string& text) {
  auto bad = [&] { return ManifestError("bad ." + std::string(tag_name(t)) + " literal '" + text + "'"); };
  if (text.empty()) throw bad();
  if (t == Tag::f32 || t == Tag::f64) {
    char* end = nullptr;
    const double d = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size()) throw bad();
    return t == Tag::f32 ? TypedValue::from_f32(static_cast<float>(d)) : TypedValue::from_f64(d);
  }
  std::string s = text;
  bool neg = false;
  if (s[0] == '-') {
    neg = true;
    s = s.substr(1);
  }
  int base = 10;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    s = s.substr(2);
    base = 16;
  }
  uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) throw bad();
  if (neg && is_unsigned_int(t)) throw bad();
  const uint64_t raw = neg ? ~v + 1 : v;
  if (t == Tag::f16) return TypedValue::from_bits(Tag::f16, raw);  // raw half bits
  const unsigned w = width_bits(t);
  if (w < 64) {
    if (neg ? v > (uint64_t{1} << (w - 1)) : (is_signed_int(t) && base == 10 ? v >= (uint64_t{1} << (w - 1)) : v > width_mask(w)))
      throw bad();
  }
  return TypedValue::from_bits(t, raw);
}

Manifest parse_manifest(const std::string& text, const std::string& source_name, const std::filesystem::path& base_dir) {
  Manifest m;
  m.source_name = source_name;
  m.base_dir = base_dir;
  m.text = text;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ws(line);
    std::vector<std::string> words;
    for (std::string w; ws >> w;) words.push_back(w);
    if (words.empty()) continue;
    LineParser p(source_name, n, words);
    Directive d;
    d.line = n;
    d.text = line;
    d.body = parse_line(p);
    m.directives.push_back(std::move(d));
  }
  return m;
}

std::vector<uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& p, std::span<const uint8_t> bytes) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("cannot write " + p.string());
}

Manifest load_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_manifest(std::string(bytes.begin(), bytes.end()), path.filename().string(),
                        path.has_parent_path() ? path.parent_path() : std::filesystem::path("."));
}

std::string hex(std::span<const uint8_t> bytes) {
  static const char* d = "0123456789abcdef";
  std::string s;
  for (uint8_t b : bytes) {
    s += d[b >> 4];
    s += d[b & 15];
  }
  return s;
}

std::array<uint8_t, 32> manifest_hash(const Manifest& m) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  auto feed = [&](std::span<const uint8_t> b) {
    const uint64_t n = b.size();
    EVP_DigestUpdate(ctx, &n, sizeof n);
    EVP_DigestUpdate(ctx, b.data(), b.size());
  };
  feed({reinterpret_cast<const uint8_t*>(m.text.data()), m.text.size()});
  for (const auto& d : m.directives) {
    std::string rel;
    if (auto* lm = std::get_if<LoadModule>(&d.body)) rel = lm->path;
    else if (auto* in = std::get_if<Init>(&d.body); in && in->kind == Init::Kind::file) rel = in->path;
    else if (auto* c = std::get_if<Check>(&d.body)) rel = c->path;
    if (rel.empty()) continue;
    std::vector<uint8_t> content;
    try {
      content = read_file(m.resolve(rel));
    } catch (const ConfigError&) {
      // missing files hash as empty; the run itself reports them
    }
    feed(content);
  }
  std::array<uint8_t, 32> out{};
  unsigned len = 0;
  EVP_DigestFinal_ex(ctx, out.data(), &len);
  EVP_MD_CTX_free(ctx);
  return out;
}

std::vector<uint8_t> init_bytes(const Manifest& m, const Init& init, uint64_t size) {
  std::vector<uint8_t> out(size, 0);
  switch (init.kind) {
    case Init::Kind::bytes:
    case Init::Kind::file: {
      const auto src = init.kind == Init::Kind::bytes ? init.bytes : read_file(m.resolve(init.path));
      if (src.size() > size)
        throw ManifestError("init of '" + init.name + "' has " + std::to_string(src.size()) + " bytes for a " +
                            std::to_string(size) + "-byte buffer");
      std::copy(src.begin(), src.end(), out.begin());
      return out;
    }
    case Init::Kind::pattern:
      break;
  }
  const InitPattern& p = init.pattern;
  const Tag t = p.type;
  const unsigned w = width_bytes(t);
  const uint64_t n = size / w;
  auto put = [&](uint64_t i, TypedValue v) { store_le(std::span<uint8_t>(out).subspan(i * w, w), v); };
  const bool fp = t == Tag::f32 || t == Tag::f64;
  auto from_double = [&](double d) { return t == Tag::f32 ? TypedValue::from_f32(static_cast<float>(d)) : TypedValue::from_f64(d); };
  auto as_double = [&](const TypedValue& v) { return t == Tag::f32 ? double{v.f32()} : v.f64(); };
  switch (p.kind) {
    case InitPattern::Kind::constant: {
      const TypedValue v = parse_scalar(t, p.a);
      for (uint64_t i = 0; i < n; ++i) put(i, v);
      break;
    }
    case InitPattern::Kind::iota: {
      const TypedValue start = parse_scalar(t, p.a), step = parse_scalar(t, p.b);
      for (uint64_t i = 0; i < n; ++i) {
        if (fp) put(i, from_double(as_double(start) + static_cast<double>(i) * as_double(step)));
        else put(i, TypedValue::from_bits(t, start.bits + i * step.bits));
      }
      break;
    }
    case InitPattern::Kind::random: {
      // raw generator bits only, so the stream is the same everywhere
      std::mt19937_64 rng(std::stoull(p.a, nullptr, 0));
      const TypedValue lo = parse_scalar(t, p.b), hi = parse_scalar(t, p.c);
      for (uint64_t i = 0; i < n; ++i) {
        const uint64_t r = rng();
        if (fp) {
          const double u = static_cast<double>(r >> 11) * 0x1p-53;
          put(i, from_double(as_double(lo) + (as_double(hi) - as_double(lo)) * u));
        } else if (is_signed_int(t)) {
          const auto span = static_cast<uint64_t>(hi.s() - lo.s()) + 1;
          put(i, TypedValue::from_int(t, lo.s() + static_cast<int64_t>(span ? r % span : r)));
        } else {
          const uint64_t span = hi.u() - lo.u() + 1;
          put(i, TypedValue::from_bits(t, lo.u() + (span ? r % span : r)));
        }
      }
      break;
    }
  }
  return out;
}

}  // namespace gpusim
