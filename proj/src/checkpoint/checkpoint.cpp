#include "gpusim/checkpoint/checkpoint.hpp"

#include <zlib.h>

#include <charconv>
#include <cstring>

#include "gpusim/core/grid.hpp"

namespace gpusim {

namespace {

constexpr char kMagic[4] = {'P', 'S', 'C', 'K'};

enum SectionId : uint32_t {
  kKernelImage = 1,  // one per kernel before x, in launch order
  kPreKernel = 2,
  kFrozen = 3,
  kInflight = 4,
  kStreams = 5,
};

uint32_t crc(std::span<const uint8_t> b) {
  return static_cast<uint32_t>(crc32(crc32(0L, Z_NULL, 0), b.data(), static_cast<uInt>(b.size())));
}

class Writer {
 public:
  std::vector<uint8_t> out;

  template <class T>
  void put(T v) {
    static_assert(std::is_integral_v<T>);
    for (size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<uint8_t>(static_cast<uint64_t>(v) >> (8 * i)));
  }
  void bytes(std::span<const uint8_t> b) {
    put<uint64_t>(b.size());
    out.insert(out.end(), b.begin(), b.end());
  }
  void str(const std::string& s) { bytes({reinterpret_cast<const uint8_t*>(s.data()), s.size()}); }
};

class Reader {
 public:
  Reader(std::span<const uint8_t> b, std::string what) : b_(b), what_(std::move(what)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= uint64_t{b_[pos_ + i]} << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  std::vector<uint8_t> bytes() {
    const auto n = get<uint64_t>();
    need(n);
    std::vector<uint8_t> v(b_.begin() + pos_, b_.begin() + pos_ + n);
    pos_ += n;
    return v;
  }
  std::string str() {
    auto v = bytes();
    return {v.begin(), v.end()};
  }
  // Element counts are bounded by the bytes left, so a corrupt count
  // cannot trigger a huge allocation.
  uint64_t count(uint64_t min_elem_bytes) {
    const auto n = get<uint64_t>();
    if (n > (b_.size() - pos_) / std::max<uint64_t>(min_elem_bytes, 1)) fail("count " + std::to_string(n) + " too large");
    return n;
  }
  bool flag() {
    const auto v = get<uint8_t>();
    if (v > 1) fail("bad flag byte");
    return v == 1;
  }
  void finish() const {
    if (pos_ != b_.size()) fail(std::to_string(b_.size() - pos_) + " trailing bytes");
  }
  [[noreturn]] void fail(const std::string& why) const { throw BundleError("bundle " + what_ + ": " + why); }

 private:
  void need(uint64_t n) const {
    if (n > b_.size() - pos_) fail("truncated");
  }
  std::span<const uint8_t> b_;
  std::string what_;
  size_t pos_ = 0;
};

void put_dim(Writer& w, const Dim3& d) {
  w.put(d.x);
  w.put(d.y);
  w.put(d.z);
}
Dim3 get_dim(Reader& r) {
  Dim3 d;
  d.x = r.get<uint32_t>();
  d.y = r.get<uint32_t>();
  d.z = r.get<uint32_t>();
  return d;
}

std::vector<uint8_t> encode_image(const MemoryImage& img) {
  Writer w;
  w.put<uint64_t>(img.size());
  for (const auto& [base, a] : img) {
    w.str(a.name);
    w.put(a.base);
    w.bytes(a.bytes);
  }
  return w.out;
}

MemoryImage decode_image(std::span<const uint8_t> b) {
  Reader r(b, "memory image");
  MemoryImage img;
  const auto n = r.count(24);
  for (uint64_t i = 0; i < n; ++i) {
    Allocation a;
    a.name = r.str();
    a.base = r.get<uint64_t>();
    a.bytes = r.bytes();
    if (!img.emplace(a.base, a).second) r.fail("duplicate base address");
  }
  r.finish();
  return img;
}

void put_cta(Writer& w, const CtaState& c) {
  put_dim(w, c.ctaid);
  w.put(c.linear_id);
  w.put<uint64_t>(c.warps.size());
  for (const auto& wp : c.warps) {
    w.put(wp.id);
    w.put(wp.exited);
    w.put<uint64_t>(wp.stack.size());
    for (const auto& e : wp.stack) {
      w.put<int32_t>(e.pc);
      w.put<int32_t>(e.rpc);
      w.put(e.mask);
    }
    w.put<uint8_t>(wp.at_barrier);
    w.put<uint8_t>(wp.barrier_pass);
    w.put(wp.committed);
  }
  w.put<uint64_t>(c.threads.size());
  for (const auto& t : c.threads) {
    put_dim(w, t.tid);
    w.put<uint64_t>(t.regs.size());
    for (const auto& r : t.regs) {
      w.put<uint8_t>(r.has_value());
      if (r) {
        w.put(static_cast<uint16_t>(r->tag));
        w.put(r->bits);
      }
    }
    w.bytes(t.local);
  }
  w.bytes(c.shared);
  w.put(c.committed);
  w.put(c.rr_cursor);
}

CtaState get_cta(Reader& r) {
  CtaState c;
  c.ctaid = get_dim(r);
  c.linear_id = r.get<uint64_t>();
  c.warps.resize(r.count(26));
  for (auto& wp : c.warps) {
    wp.id = r.get<uint32_t>();
    wp.exited = r.get<uint32_t>();
    wp.stack.resize(r.count(12));
    for (auto& e : wp.stack) {
      e.pc = r.get<int32_t>();
      e.rpc = r.get<int32_t>();
      e.mask = r.get<uint32_t>();
    }
    wp.at_barrier = r.flag();
    wp.barrier_pass = r.flag();
    wp.committed = r.get<uint64_t>();
  }
  c.threads.resize(r.count(28));
  for (auto& t : c.threads) {
    t.tid = get_dim(r);
    t.regs.resize(r.count(1));
    for (auto& reg : t.regs) {
      if (!r.flag()) continue;
      const auto tag = r.get<uint16_t>();
      if (tag > static_cast<uint16_t>(Tag::pred)) r.fail("bad register tag " + std::to_string(tag));
      reg = TypedValue{static_cast<Tag>(tag), r.get<uint64_t>()};
    }
    t.local = r.bytes();
  }
  c.shared = r.bytes();
  c.committed = r.get<uint64_t>();
  c.rr_cursor = r.get<uint32_t>();
  return c;
}

std::vector<uint8_t> encode_inflight(const CheckpointBundle& b) {
  Writer w;
  w.put(b.kernel_ctas);
  w.put<uint64_t>(b.inflight.size());
  for (const auto& f : b.inflight) {
    w.put(f.linear_id);
    w.put<uint8_t>(f.state.has_value());
    if (f.state) put_cta(w, *f.state);
  }
  return w.out;
}

std::vector<uint8_t> encode_streams(const CheckpointBundle& b) {
  Writer w;
  const auto& s = b.streams;
  w.put(b.cursor);
  w.put(s.next_seq);
  w.put<uint64_t>(s.pending.size());
  for (const auto& c : s.pending) {
    w.put(c.seq);
    w.put(c.stream);
    w.put(static_cast<uint8_t>(c.kind));
    w.str(c.event);
    w.put<uint8_t>(c.waits_for.has_value());
    w.put(c.waits_for.value_or(0));
    w.put<uint64_t>(c.payload);
  }
  w.put<uint64_t>(s.last_record.size());
  for (const auto& [e, seq] : s.last_record) {
    w.str(e);
    w.put(seq);
  }
  w.put<uint64_t>(s.unbound.size());
  for (const auto& [e, seqs] : s.unbound) {
    w.str(e);
    w.put<uint64_t>(seqs.size());
    for (auto q : seqs) w.put(q);
  }
  w.put(s.completed);
  return w.out;
}

void decode_streams(std::span<const uint8_t> bytes, CheckpointBundle& b) {
  Reader r(bytes, "stream section");
  auto& s = b.streams;
  b.cursor = r.get<uint64_t>();
  s.next_seq = r.get<uint64_t>();
  s.pending.resize(r.count(38));
  for (auto& c : s.pending) {
    c.seq = r.get<uint64_t>();
    c.stream = r.get<uint32_t>();
    const auto k = r.get<uint8_t>();
    if (k > static_cast<uint8_t>(CommandKind::wait)) r.fail("bad command kind");
    c.kind = static_cast<CommandKind>(k);
    c.event = r.str();
    const bool has = r.flag();
    const auto q = r.get<uint64_t>();
    if (has) c.waits_for = q;
    else if (q != 0) r.fail("stray wait binding");
    c.payload = r.get<uint64_t>();
  }
  for (auto n = r.count(16); n > 0; --n) {
    auto e = r.str();
    s.last_record[e] = r.get<uint64_t>();
  }
  for (auto n = r.count(16); n > 0; --n) {
    auto e = r.str();
    auto& v = s.unbound[e];
    v.resize(r.count(8));
    for (auto& q : v) q = r.get<uint64_t>();
  }
  s.completed = r.get<uint64_t>();
  r.finish();
}

// size of everything before the payloads
constexpr size_t header_bytes(size_t sections) { return 4 + 2 + 32 + 4 * 8 + 4 + sections * 24 + 4; }

}  // namespace

CheckpointPosition parse_position(std::string_view s) {
  const std::string text(s);
  CheckpointPosition p;
  uint64_t* fields[] = {&p.x, &p.M, &p.t, &p.y};
  const char* names[] = {"x", "M", "t", "y"};
  size_t i = 0, start = 0;
  for (; start <= text.size() && i < 4; ++i) {
    auto end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    std::string tok = text.substr(start, end - start);
    if (auto eq = tok.find('='); eq != std::string::npos) {
      if (tok.substr(0, eq) != names[i])
        throw ConfigError("checkpoint position '" + text + "': expected " + names[i] + "= in field " + std::to_string(i + 1));
      tok = tok.substr(eq + 1);
    }
    auto [q, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), *fields[i]);
    if (ec != std::errc() || q != tok.data() + tok.size() || tok.empty())
      throw ConfigError("checkpoint position '" + text + "': bad value for " + names[i]);
    start = end + 1;
  }
  if (i != 4 || start <= text.size()) throw ConfigError("checkpoint position '" + text + "': expected x,M,t,y");
  if (p.x < 1 || p.M < 1) throw ConfigError("checkpoint position '" + text + "': x and M are 1-based");
  return p;
}

std::string format_position(const CheckpointPosition& p) {
  return "x=" + std::to_string(p.x) + ",M=" + std::to_string(p.M) + ",t=" + std::to_string(p.t) + ",y=" + std::to_string(p.y);
}

std::vector<uint8_t> encode_bundle(const CheckpointBundle& b) {
  std::vector<std::pair<uint32_t, std::vector<uint8_t>>> sections;
  for (const auto& img : b.kernel_images) sections.emplace_back(kKernelImage, encode_image(img));
  sections.emplace_back(kPreKernel, encode_image(b.pre_kernel));
  sections.emplace_back(kFrozen, encode_image(b.frozen));
  sections.emplace_back(kInflight, encode_inflight(b));
  sections.emplace_back(kStreams, encode_streams(b));

  Writer w;
  w.out.insert(w.out.end(), kMagic, kMagic + 4);
  w.put(CheckpointBundle::kVersion);
  w.out.insert(w.out.end(), b.manifest_hash.begin(), b.manifest_hash.end());
  w.put(b.position.x);
  w.put(b.position.M);
  w.put(b.position.t);
  w.put(b.position.y);
  w.put<uint32_t>(static_cast<uint32_t>(sections.size()));
  uint64_t offset = header_bytes(sections.size());
  for (const auto& [id, data] : sections) {
    w.put(id);
    w.put(offset);
    w.put<uint64_t>(data.size());
    w.put(crc(data));
    offset += data.size();
  }
  w.put(crc(w.out));  // covers magic through the section table
  for (const auto& [id, data] : sections) w.out.insert(w.out.end(), data.begin(), data.end());
  return w.out;
}

CheckpointBundle decode_bundle(std::span<const uint8_t> bytes) {
  Reader h(bytes, "header");
  char magic[4];
  for (auto& c : magic) c = static_cast<char>(h.get<uint8_t>());
  if (std::memcmp(magic, kMagic, 4) != 0) throw BundleError("not a checkpoint bundle (bad magic)");
  const auto version = h.get<uint16_t>();
  if (version != CheckpointBundle::kVersion)
    throw BundleError("bundle format version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(CheckpointBundle::kVersion) + ")");
  CheckpointBundle b;
  for (auto& x : b.manifest_hash) x = h.get<uint8_t>();
  b.position.x = h.get<uint64_t>();
  b.position.M = h.get<uint64_t>();
  b.position.t = h.get<uint64_t>();
  b.position.y = h.get<uint64_t>();
  const auto n = h.get<uint32_t>();
  if (n > bytes.size() / 24) throw BundleError("bundle header: section count " + std::to_string(n) + " too large");
  struct Entry {
    uint32_t id;
    uint64_t offset, length;
    uint32_t crc;
  };
  std::vector<Entry> table(n);
  for (auto& e : table) {
    e.id = h.get<uint32_t>();
    e.offset = h.get<uint64_t>();
    e.length = h.get<uint64_t>();
    e.crc = h.get<uint32_t>();
  }
  const size_t hdr = header_bytes(n);
  const auto header_crc = h.get<uint32_t>();
  if (header_crc != crc(bytes.first(hdr - 4))) throw BundleError("bundle header checksum mismatch (corrupt file)");

  // sections are contiguous, in table order, and fill the file exactly
  uint64_t expect = hdr;
  for (const auto& e : table) {
    if (e.offset != expect || e.length > bytes.size() - std::min<uint64_t>(e.offset, bytes.size()))
      throw BundleError("bundle section " + std::to_string(e.id) + " out of bounds (truncated or corrupt)");
    expect = e.offset + e.length;
  }
  if (expect != bytes.size()) throw BundleError("bundle has " + std::to_string(bytes.size() - expect) + " bytes past the last section");

  size_t i = 0;
  auto payload = [&](const Entry& e) {
    auto s = bytes.subspan(e.offset, e.length);
    if (crc(s) != e.crc) throw BundleError("bundle section " + std::to_string(e.id) + " checksum mismatch (corrupt file)");
    return s;
  };
  auto expect_id = [&](uint32_t id) -> const Entry& {
    if (i >= table.size() || table[i].id != id) throw BundleError("bundle section table out of order");
    return table[i++];
  };
  while (i < table.size() && table[i].id == kKernelImage) b.kernel_images.push_back(decode_image(payload(table[i++])));
  b.pre_kernel = decode_image(payload(expect_id(kPreKernel)));
  b.frozen = decode_image(payload(expect_id(kFrozen)));
  {
    Reader r(payload(expect_id(kInflight)), "in-flight section");
    b.kernel_ctas = r.get<uint64_t>();
    b.inflight.resize(r.count(9));
    for (auto& f : b.inflight) {
      f.linear_id = r.get<uint64_t>();
      if (r.flag()) f.state = get_cta(r);
    }
    r.finish();
  }
  decode_streams(payload(expect_id(kStreams)), b);
  if (i != table.size()) throw BundleError("bundle has unknown trailing sections");
  if (b.kernel_images.size() != b.position.x - 1)
    throw BundleError("bundle holds " + std::to_string(b.kernel_images.size()) + " kernel images for x=" + std::to_string(b.position.x));
  if (b.inflight.size() != b.position.t) throw BundleError("bundle in-flight count does not match t");
  return b;
}

CheckpointBundle load_bundle(const std::filesystem::path& p) {
  std::vector<uint8_t> bytes;
  try {
    bytes = read_file(p);
  } catch (const ManifestError& e) {
    throw BundleError(e.what());
  }
  return decode_bundle(bytes);
}

CheckpointBundle checkpoint_run(const Manifest& m, const CheckpointPosition& pos) {
  if (pos.x < 1 || pos.M < 1) throw RangeError("checkpoint position " + format_position(pos) + ": x and M are 1-based");
  ExecutorConfig exec;
  exec.mode = ExecMode::functional_serial;
  Session s(m, exec);
  CheckpointBundle b;
  b.manifest_hash = manifest_hash(m);
  b.position = pos;
  bool reached = false;

  s.hooks.after_launch = [&](Session& ss, const LaunchContext& ctx) {
    if (ctx.ordinal < pos.x) b.kernel_images.push_back(ss.memory().allocations());
  };
  s.hooks.before_launch = [&](Session& ss, LaunchContext& ctx) {
    if (ctx.ordinal < pos.x) return false;
    validate_launch(ctx.env);
    const uint64_t n = ctx.env.grid.count();
    const std::string where = "kernel " + std::to_string(pos.x) + " ('" + ctx.kernel->name + "')";
    if (pos.M > n) throw RangeError("M=" + std::to_string(pos.M) + " exceeds the " + std::to_string(n) + " CTAs of " + where);
    if (pos.t > n - pos.M + 1)
      throw RangeError("M+t-1=" + std::to_string(pos.M + pos.t - 1) + " exceeds the " + std::to_string(n) + " CTAs of " + where);
    reached = true;
    b.kernel_ctas = n;
    b.pre_kernel = ss.memory().allocations();
    for (uint64_t id = 0; id + 1 < pos.M; ++id) {
      CtaState c = make_cta(ctx.env, id);
      run_cta(c, ctx.env);
    }
    for (uint64_t id = pos.M - 1; id < pos.M - 1 + pos.t; ++id) {
      CtaState c = make_cta(ctx.env, id);
      InflightCta f{id, std::nullopt};
      if (run_cta(c, ctx.env, pos.y) == CtaRunStatus::frozen) f.state = std::move(c);
      b.inflight.push_back(std::move(f));
    }
    b.frozen = ss.memory().allocations();
    b.streams = ss.streams().state();
    b.cursor = ss.cursor();
    throw StopRun();
  };
  s.run();
  if (!reached)
    throw RangeError("x=" + std::to_string(pos.x) + " but the workload launches only " + std::to_string(s.launches_executed()) +
                     " kernel" + (s.launches_executed() == 1 ? "" : "s"));
  return b;
}

void install_resume(Session& s, const CheckpointBundle& b) {
  if (manifest_hash(s.manifest()) != b.manifest_hash)
    throw BundleError("manifest hash " + hex(manifest_hash(s.manifest())) + " does not match the bundle's " + hex(b.manifest_hash));
  if (s.exec().mode == ExecMode::reference) throw ConfigError("resume needs the functional or performance executor");
  const CheckpointPosition pos = b.position;
  s.hooks.before_launch = [&b, pos](Session& ss, LaunchContext& ctx) {
    auto restore = [&](const MemoryImage& img, const char* what) {
      try {
        ss.memory().restore_contents(img);
      } catch (const MemoryError& e) {
        throw BundleError(std::string(what) + " does not fit this run: " + e.what());
      }
    };
    if (ctx.ordinal < pos.x) {
      restore(b.kernel_images.at(ctx.ordinal - 1), "saved kernel image");
      return true;
    }
    if (ctx.ordinal > pos.x) return false;
    if (ss.memory().allocations() != b.pre_kernel)
      throw BundleError("replay reached kernel " + std::to_string(pos.x) + " with different memory than the checkpoint saw");
    if (ctx.env.grid.count() != b.kernel_ctas) throw BundleError("kernel " + std::to_string(pos.x) + " grid differs from the bundle");
    restore(b.frozen, "frozen image");
    std::vector<CtaWork> work;
    for (const auto& f : b.inflight)
      if (f.state) work.push_back(CtaWork{f.linear_id, *f.state});
    for (uint64_t id = pos.M - 1 + pos.t; id < b.kernel_ctas; ++id) work.push_back(CtaWork{id, std::nullopt});
    ss.execute_ctas(ctx.env, std::move(work));
    return true;
  };
}

}  // namespace gpusim
