#include "gpusim/runtime/session.hpp"

#include "gpusim/ptx/parser.hpp"
#include "gpusim/reference/interp.hpp"

namespace gpusim {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

std::string hex_byte(uint8_t b) {
  static const char* d = "0123456789abcdef";
  return std::string("0x") + d[b >> 4] + d[b & 15];
}

}  // namespace

std::string_view exec_mode_name(ExecMode m) {
  switch (m) {
    case ExecMode::functional: return "functional";
    case ExecMode::functional_serial: return "functional-serial";
    case ExecMode::reference: return "reference";
    case ExecMode::performance: return "performance";
  }
  return "?";
}

ExecMode parse_exec_mode(std::string_view s) {
  for (auto m : {ExecMode::functional, ExecMode::functional_serial, ExecMode::reference, ExecMode::performance})
    if (exec_mode_name(m) == s) return m;
  throw ConfigError("unknown mode '" + std::string(s) + "' (functional, functional-serial, reference, performance)");
}

std::string describe_first_difference(std::span<const uint8_t> expected, std::span<const uint8_t> actual) {
  std::string out;
  if (expected.size() != actual.size())
    out = "size differs: expected " + std::to_string(expected.size()) + " bytes, got " + std::to_string(actual.size()) + "; ";
  const size_t n = std::min(expected.size(), actual.size());
  size_t count = 0, first = n;
  for (size_t i = 0; i < n; ++i)
    if (expected[i] != actual[i]) {
      if (first == n) first = i;
      ++count;
    }
  if (count == 0) return out.empty() ? "identical" : out.substr(0, out.size() - 2);
  out += std::to_string(count) + " bytes differ, first at offset " + std::to_string(first) + ": expected " +
         hex_byte(expected[first]) + ", got " + hex_byte(actual[first]);
  return out;
}

std::vector<uint8_t> pack_params(const KernelObject& k, const Launch& l, const std::function<uint64_t(const BufRef&)>& address_of) {
  const std::string who = "launch of '" + k.name + "'";
  std::vector<uint8_t> out(k.param_bytes(), 0);
  auto value_of = [&](const LaunchArg& a) {
    return a.buffer ? TypedValue::from_bits(Tag::u64, address_of(*a.buffer)) : a.value;
  };
  auto place = [&](const KernelParam& p, const TypedValue& v) {
    if (width_bytes(v.tag) != width_bytes(p.type))
      throw LaunchError(who + ": parameter '" + p.name + "' is ." + std::string(tag_name(p.type)) + ", argument is " +
                        std::to_string(width_bytes(v.tag)) + " bytes");
    store_le(std::span<uint8_t>(out).subspan(p.offset, width_bytes(v.tag)), v);
  };
  if (l.style == LaunchStyle::driver) {
    if (l.args.size() != k.params.size())
      throw LaunchError(who + ": " + std::to_string(k.params.size()) + " parameters, " + std::to_string(l.args.size()) +
                        " arguments given");
    for (size_t i = 0; i < l.args.size(); ++i) place(k.params[i], value_of(l.args[i]));
    return out;
  }
  // runtime style: every parameter set exactly once, at its own offset
  std::vector<bool> seen(k.params.size(), false);
  for (const auto& a : l.args) {
    const TypedValue v = value_of(a);
    const uint64_t end = uint64_t{*a.at} + width_bytes(v.tag);
    if (end > out.size())
      throw LaunchError(who + ": argument at offset " + std::to_string(*a.at) + " ends at byte " + std::to_string(end) +
                        ", parameter block is " + std::to_string(out.size()) + " bytes");
    size_t i = 0;
    while (i < k.params.size() && k.params[i].offset != *a.at) ++i;
    if (i == k.params.size()) throw LaunchError(who + ": no parameter starts at offset " + std::to_string(*a.at));
    if (seen[i]) throw LaunchError(who + ": parameter '" + k.params[i].name + "' set twice");
    seen[i] = true;
    place(k.params[i], v);
  }
  for (size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) throw LaunchError(who + ": parameter '" + k.params[i].name + "' not set");
  return out;
}

Session::Session(const Manifest& m, ExecutorConfig exec) : manifest_(m), exec_(exec) {
  exec_.timing.validate();
  timeline_ = std::make_unique<Timeline>(exec_.timing.shape());
  engine_ = std::make_unique<TimingEngine>(exec_.timing, timeline_.get());
}

Session::~Session() = default;

bool Session::checks_passed() const {
  for (const auto& c : checks_)
    if (!c.passed) return false;
  return true;
}

bool Session::run() {
  try {
    for (size_t i = 0; i < manifest_.directives.size(); ++i) {
      cursor_ = i;
      directive(i);
    }
    cursor_ = manifest_.directives.size();
    sync();
    if (hooks.at_end) hooks.at_end(*this);
  } catch (const StopRun&) {
    return false;
  }
  return true;
}

void Session::sync() {
  streams_.drain([this](const StreamCommand& c) { run_command(c); });
}

std::vector<uint8_t> Session::buffer_bytes(const std::string& name) const {
  if (auto it = host_.find(name); it != host_.end()) return it->second;
  if (const Allocation* a = mem_.find(name)) return a->bytes;
  throw ManifestError("unknown buffer '" + name + "'");
}

uint64_t Session::resolve_device(const BufRef& r, uint64_t len, const std::string& what) const {
  const Allocation* a = mem_.find(r.name);
  if (!a) {
    if (host_.contains(r.name)) throw ManifestError(what + ": '" + r.name + "' is a host buffer");
    throw ManifestError(what + ": unknown device buffer '" + r.name + "'");
  }
  if (r.offset > a->bytes.size() || len > a->bytes.size() - r.offset)
    throw MemoryError(what + ": range " + std::to_string(r.offset) + "+" + std::to_string(len) + " outside '" + r.name + "' (" +
                      std::to_string(a->bytes.size()) + " bytes)");
  return a->base + r.offset;
}

void Session::directive(size_t i) {
  const Directive& d = manifest_.directives[i];
  const std::string at = manifest_.source_name + ":" + std::to_string(d.line);
  try {
    const bool stream_ordered = std::holds_alternative<Memcpy>(d.body) || std::holds_alternative<Launch>(d.body) ||
                                std::holds_alternative<RecordEvent>(d.body) || std::holds_alternative<WaitEvent>(d.body);
    if (!stream_ordered) sync();  // host-side directives see a quiet device
    if (hooks.before_directive) hooks.before_directive(*this, i);

    auto enqueue = [&](uint32_t stream, CommandKind kind, std::string event = {}) {
      payload_directive_.push_back(i);
      payload_call_.push_back(call_);
      payload_params_.emplace_back();
      streams_.enqueue(stream, kind, std::move(event), payload_directive_.size() - 1);
    };

    std::visit(overloaded{
                   [&](const LoadModule& lm) {
                     if (modules_.contains(lm.alias)) throw ManifestError("module alias '" + lm.alias + "' already loaded");
                     const auto bytes = read_file(manifest_.resolve(lm.path));
                     PtxModule mod = parse_module(std::string(bytes.begin(), bytes.end()), lm.alias);
                     mod.source_name = lm.path;
                     auto& syms = symbols_[lm.alias];
                     for (const auto& [name, g] : mod.globals) {
                       const uint64_t a = mem_.allocate(lm.alias + "::" + name, std::max<uint64_t>(g.size_bytes(), 1));
                       if (g.init) mem_.store(a, TypedValue::from_bits(g.elem_type, g.init->bits));
                       syms[name] = a;
                     }
                     module_paths_[lm.alias] = lm.path;
                     modules_.emplace(lm.alias, std::move(mod));
                   },
                   [&](const Alloc& a) {
                     if (host_.contains(a.name) || mem_.find(a.name)) throw ManifestError("buffer '" + a.name + "' already exists");
                     if (a.host) host_[a.name].assign(a.size, 0);
                     else mem_.allocate(a.name, a.size);
                   },
                   [&](const Init& in) {
                     if (auto it = host_.find(in.name); it != host_.end()) {
                       it->second = init_bytes(manifest_, in, it->second.size());
                     } else if (Allocation* a = mem_.find(in.name)) {
                       a->bytes = init_bytes(manifest_, in, a->bytes.size());
                     } else {
                       throw ManifestError("init of unknown buffer '" + in.name + "'");
                     }
                   },
                   [&](const Memcpy& m) {
                     // validate now so errors point at the directive
                     if (m.dir != CopyDirection::host_to_device) resolve_device(m.src, m.len, "memcpy source");
                     if (m.dir != CopyDirection::device_to_host) resolve_device(m.dst, m.len, "memcpy destination");
                     for (const BufRef* h : {m.dir == CopyDirection::host_to_device ? &m.src : nullptr,
                                             m.dir == CopyDirection::device_to_host ? &m.dst : nullptr}) {
                       if (!h) continue;
                       auto it = host_.find(h->name);
                       if (it == host_.end()) throw ManifestError("memcpy: '" + h->name + "' is not a host buffer");
                       if (h->offset > it->second.size() || m.len > it->second.size() - h->offset)
                         throw MemoryError("memcpy: range outside host buffer '" + h->name + "'");
                     }
                     enqueue(m.stream, CommandKind::memcpy);
                   },
                   [&](const Launch& l) { issue_launch(i, l); },
                   [&](const RecordEvent& r) { enqueue(r.stream, CommandKind::record, r.event); },
                   [&](const WaitEvent& w) { enqueue(w.stream, CommandKind::wait, w.event); },
                   [&](const Sync&) {},
                   [&](const Dump& dm) {
                     const auto bytes = buffer_bytes(dm.name);
                     if (dump_dir) write_file(*dump_dir / dm.path, bytes);
                   },
                   [&](const Check& c) {
                     CheckResult r;
                     r.buffer = c.name;
                     r.oracle = c.path;
                     r.line = d.line;
                     const auto actual = buffer_bytes(c.name);
                     const auto expected = read_file(manifest_.resolve(c.path));
                     r.passed = actual == expected;
                     r.summary = r.passed ? "ok" : describe_first_difference(expected, actual);
                     checks_.push_back(std::move(r));
                   },
                   [&](const RegisterTexture& t) { textures_.register_texture(t.name, t.texref); },
                   [&](const BindTexture& b) {
                     const Allocation* a = mem_.find(b.buffer);
                     if (!a) throw ManifestError("bind_texture: unknown device buffer '" + b.buffer + "'");
                     CudaArrayDesc arr;
                     arr.name = b.buffer;
                     arr.width = b.width;
                     arr.height = b.height;
                     arr.format = b.format;
                     arr.backing = a->base;
                     if (arr.byte_size() > a->bytes.size())
                       throw ManifestError("bind_texture: " + std::to_string(arr.byte_size()) + "-byte array does not fit in '" + b.buffer + "'");
                     textures_.bind_texture_to_array(b.texref, arr);
                   },
                   [&](const UnbindTexture& u) { textures_.unbind_texture(u.texref); },
                   [&](const CallMarker&) { ++call_; },
               },
               d.body);
  } catch (const ManifestError& e) {
    const std::string w = e.what();
    if (w.starts_with(manifest_.source_name + ":")) throw;
    throw ManifestError(at + ": " + w);
  } catch (const MemoryError& e) {
    throw MemoryError(at + ": " + e.what());
  } catch (const LaunchError& e) {
    throw LaunchError(at + ": " + e.what());
  } catch (const BindingError& e) {
    throw BindingError(at + ": " + e.what());
  }
}

void Session::issue_launch(size_t i, const Launch& l) {
  auto mit = modules_.find(l.module);
  if (mit == modules_.end()) throw LaunchError("unknown module '" + l.module + "'");
  const KernelObject* k = mit->second.find_kernel(l.kernel);
  if (!k) throw LaunchError("module '" + l.module + "' has no kernel '" + l.kernel + "'");
  if (l.grid.count() == 0 || l.block.count() == 0) throw LaunchError("launch dimensions must be positive");
  auto params = pack_params(*k, l, [&](const BufRef& r) { return resolve_device(r, 0, "kernel argument"); });
  payload_directive_.push_back(i);
  payload_call_.push_back(call_);
  payload_params_.push_back(std::move(params));
  streams_.enqueue(l.stream, CommandKind::launch, {}, payload_directive_.size() - 1);
}

void Session::run_command(const StreamCommand& c) {
  const size_t di = payload_directive_.at(c.payload);
  const Directive& d = manifest_.directives[di];
  if (c.kind == CommandKind::memcpy) {
    const Memcpy& m = std::get<Memcpy>(d.body);
    auto ref = [&](const BufRef& r, bool host) -> MemRef {
      if (host) return std::span<uint8_t>(host_.at(r.name)).subspan(r.offset);
      return DevicePtr{mem_.find(r.name)->base + r.offset};
    };
    memcpy(mem_, m.dir, ref(m.src, m.dir == CopyDirection::host_to_device), ref(m.dst, m.dir == CopyDirection::device_to_host), m.len);
    return;
  }
  if (c.kind != CommandKind::launch) return;  // events carry no work

  const Launch& l = std::get<Launch>(d.body);
  LaunchContext ctx;
  ctx.ordinal = ++launches_;
  ctx.directive = di;
  ctx.call = payload_call_.at(c.payload);
  ctx.launch = &l;
  ctx.module = l.module;
  ctx.kernel = modules_.at(l.module).find_kernel(l.kernel);
  ctx.params = payload_params_.at(c.payload);
  ctx.env.kernel = ctx.kernel;
  ctx.env.module_id = l.module;
  ctx.env.global = &mem_;
  ctx.env.textures = &textures_;
  ctx.env.params = ctx.params;
  ctx.env.symbols = &symbols_.at(l.module);
  ctx.env.grid = l.grid;
  ctx.env.block = l.block;
  ctx.env.fault = exec_.fault;

  const bool handled = hooks.before_launch && hooks.before_launch(*this, ctx);
  if (!handled) execute_kernel(ctx.env);
  if (hooks.after_launch) hooks.after_launch(*this, ctx);
}

void Session::execute_ctas(const KernelEnv& env, std::vector<CtaWork> work) {
  if (exec_.mode == ExecMode::performance) {
    timings_.push_back(engine_->run_kernel(env, std::move(work)));
    committed_ += timings_.back().committed;
    return;
  }
  if (exec_.mode == ExecMode::reference)
    throw ConfigError("the reference executor cannot continue saved CTA state");
  validate_launch(env);
  for (auto& w : work) {
    CtaState cta = w.restored ? std::move(*w.restored) : make_cta(env, w.linear_id);
    const uint64_t before = cta.committed;
    run_cta(cta, env);
    committed_ += cta.committed - before;
  }
}

void Session::execute_kernel(const KernelEnv& env) {
  switch (exec_.mode) {
    case ExecMode::functional: committed_ += run_grid(env).committed; break;
    case ExecMode::functional_serial: committed_ += run_grid_serial(env).committed; break;
    case ExecMode::reference: committed_ += run_reference(env).instructions; break;
    case ExecMode::performance: {
      timings_.push_back(engine_->run_kernel(env, fresh_work(0, env.grid.count())));
      committed_ += timings_.back().committed;
      break;
    }
  }
}

}  // namespace gpusim
