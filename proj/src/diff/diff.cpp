#include "gpusim/diff/diff.hpp"

#include <json.hpp>

#include <algorithm>
#include <climits>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "gpusim/ptx/parser.hpp"
#include "gpusim/reference/interp.hpp"

namespace gpusim {

namespace {

constexpr const char* kLogName = "__difflog";

std::string hex64(uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

bool is_execution_failure(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const MachineFault&) {
    return true;
  } catch (const DeadlockError&) {
    return true;
  } catch (...) {
    return false;
  }
}

std::string what_of(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const std::exception& x) {
    return x.what();
  }
  return "unknown error";
}

using Buffers = std::map<std::string, std::vector<uint8_t>>;

struct CallSnapshot {
  int call = -1;
  Buffers buffers;
};

struct RunTrace {
  std::vector<CallSnapshot> calls;
  std::exception_ptr error;
  int error_call = -1;
};

// Which call each directive belongs to, and the buffers checked in it.
struct CallLayout {
  std::vector<std::string> names;                 // by call index
  std::map<int, std::vector<std::string>> checked;  // call -> check buffers
};

CallLayout layout_of(const Manifest& m) {
  CallLayout l;
  int call = -1;
  for (const auto& d : m.directives) {
    if (auto* c = std::get_if<CallMarker>(&d.body)) {
      ++call;
      l.names.push_back(c->name);
    } else if (auto* k = std::get_if<Check>(&d.body)) {
      l.checked[call].push_back(k->name);
    }
  }
  return l;
}

Buffers snapshot(const Session& s, const CallLayout& l) {
  Buffers out;
  if (auto it = l.checked.find(s.current_call()); it != l.checked.end()) {
    for (const auto& n : it->second) out[n] = s.buffer_bytes(n);
    return out;
  }
  for (const auto& [base, a] : s.memory().allocations()) out[a.name] = a.bytes;
  for (const auto& [name, b] : s.host_buffers()) out[name] = b;
  return out;
}

RunTrace trace_run(const Manifest& m, const ExecutorConfig& e, const CallLayout& l) {
  RunTrace t;
  Session s(m, e);
  auto take = [&](Session& ss) { t.calls.push_back({ss.current_call(), snapshot(ss, l)}); };
  s.hooks.before_directive = [&](Session& ss, size_t i) {
    if (std::holds_alternative<CallMarker>(ss.manifest().directives[i].body)) take(ss);
  };
  s.hooks.at_end = take;
  try {
    s.run();
  } catch (...) {
    t.error = std::current_exception();
    t.error_call = s.current_call();
  }
  return t;
}

struct KernelCapture {
  uint64_t ordinal = 0;
  std::string module;
  KernelObject kernel;
  std::vector<uint8_t> params;
  Dim3 grid, block;
  std::map<std::string, uint64_t> symbols;
  TextureRegistry textures;
  DeviceMemory pre, post;

  // env over `mem`; pointers stay valid while this capture lives
  KernelEnv env(DeviceMemory& mem) const {
    KernelEnv e;
    e.kernel = &kernel;
    e.module_id = module;
    e.global = &mem;
    e.textures = &textures;
    e.params = params;
    e.symbols = &symbols;
    e.grid = grid;
    e.block = block;
    return e;
  }
};

std::vector<KernelCapture> capture_call(const Manifest& m, const ExecutorConfig& b, int call) {
  std::vector<KernelCapture> caps;
  Session s(m, b);
  s.hooks.before_launch = [&](Session& ss, LaunchContext& ctx) {
    if (ctx.call != call) return false;
    KernelCapture c;
    c.ordinal = ctx.ordinal;
    c.module = ctx.module;
    c.kernel = *ctx.kernel;
    c.params = ctx.params;
    c.grid = ctx.env.grid;
    c.block = ctx.env.block;
    c.symbols = *ctx.env.symbols;
    c.textures = ss.textures();
    c.pre = ss.memory();
    caps.push_back(std::move(c));
    return false;
  };
  s.hooks.after_launch = [&](Session& ss, const LaunchContext& ctx) {
    if (ctx.call == call) caps.back().post = ss.memory();
  };
  s.hooks.before_directive = [&](Session& ss, size_t i) {
    if (std::holds_alternative<CallMarker>(ss.manifest().directives[i].body) && ss.current_call() == call) throw StopRun();
  };
  s.run();
  return caps;
}

// First allocation that differs, described from the expected side.
std::string first_memory_difference(const DeviceMemory& expected, const DeviceMemory& actual) {
  for (const auto& [base, a] : expected.allocations()) {
    const Allocation* b = actual.find(a.name);
    if (!b) return "'" + a.name + "' missing";
    if (a.bytes != b->bytes) return "'" + a.name + "': " + describe_first_difference(a.bytes, b->bytes);
  }
  return "allocation layout differs";
}

}  // namespace

ExecutorConfig parse_executor(std::string_view spec) {
  ExecutorConfig e;
  const auto plus = spec.find('+');
  e.mode = parse_exec_mode(spec.substr(0, plus));
  if (plus != std::string_view::npos) {
    e.fault = parse_injected_fault(spec.substr(plus + 1));
    if (e.mode == ExecMode::reference) throw ConfigError("faults are injected into the SIMT core, not the reference executor");
  }
  return e;
}

std::string executor_name(const ExecutorConfig& e) {
  std::string s(exec_mode_name(e.mode));
  if (e.fault != InjectedFault::none) s += "+" + std::string(injected_fault_name(e.fault));
  return s;
}

uint64_t log_capacity_bound(const KernelObject& k, uint64_t threads, uint64_t budget) {
  size_t dsts = 1;
  for (const auto& in : k.instructions) dsts = std::max(dsts, in.dsts.size());
  return threads * budget * dsts;
}

InstrumentedKernel instrument(const KernelObject& k, uint64_t threads, uint64_t budget, uint32_t capacity) {
  const uint64_t need = log_capacity_bound(k, threads, budget);
  if (capacity < need)
    throw ConfigError("log capacity " + std::to_string(capacity) + " is below the " + std::to_string(need) + " records that " +
                      std::to_string(threads) + " threads x " + std::to_string(budget) + " instructions can write");
  InstrumentedKernel ik;
  ik.kernel = k;
  ik.capacity = capacity;
  ik.log_param_offset = (k.param_bytes() + 7) / 8 * 8;
  KernelParam p;
  p.name = kLogName;
  p.type = Tag::u64;
  p.kind = ParamKind::pointer;
  p.align = 8;
  p.offset = ik.log_param_offset;
  ik.kernel.params.push_back(p);
  Instrumentation ins;
  ins.log_param_offset = ik.log_param_offset;
  for (const auto& in : k.instructions) ins.write_sites.push_back(in.writes_register());
  ik.kernel.instrumentation = std::move(ins);
  return ik;
}

void run_kernel_with(const ExecutorConfig& exec, KernelEnv env) {
  env.fault = exec.fault;
  switch (exec.mode) {
    case ExecMode::functional: run_grid(env); break;
    case ExecMode::functional_serial: run_grid_serial(env); break;
    case ExecMode::reference: run_reference(env); break;
    case ExecMode::performance: {
      TimingEngine engine(exec.timing);
      engine.run_kernel(env, fresh_work(0, env.grid.count()));
      break;
    }
  }
}

InstrumentedRun run_instrumented(const ExecutorConfig& exec, const KernelEnv& env, const DeviceMemory& pre) {
  // per-thread budget from an uninstrumented reference pass
  DeviceMemory scratch = pre;
  KernelEnv probe = env;
  probe.global = &scratch;
  probe.fault = InjectedFault::none;
  const ReferenceResult rr = run_reference(probe);

  const uint64_t threads = env.grid.count() * env.block.count();
  const uint64_t bound = log_capacity_bound(*env.kernel, threads, rr.max_thread_instructions);
  // headroom for an executor that runs longer than the reference
  const uint64_t want = 2 * bound + 64;
  if (want > UINT32_MAX) throw ConfigError("kernel '" + env.kernel->name + "' needs " + std::to_string(want) + " log records; too many to instrument");
  const InstrumentedKernel ik = instrument(*env.kernel, threads, rr.max_thread_instructions, static_cast<uint32_t>(want));

  InstrumentedRun out{{}, std::nullopt, pre};
  const uint64_t base = out.memory.allocate(kLogName, log_buffer_bytes(ik.capacity));
  init_log_header(out.memory, base, ik.capacity);
  std::vector<uint8_t> params(env.params.begin(), env.params.end());
  params.resize(ik.log_param_offset + 8, 0);
  store_le(std::span<uint8_t>(params).subspan(ik.log_param_offset, 8), TypedValue::from_bits(Tag::u64, base));

  KernelEnv ie = env;
  ie.kernel = &ik.kernel;
  ie.global = &out.memory;
  ie.params = params;
  try {
    run_kernel_with(exec, ie);
  } catch (const MachineFault& f) {
    out.fault = f.what();
  } catch (const DeadlockError& d) {
    out.fault = d.what();
  }
  out.log = read_log(out.memory.find(kLogName)->bytes);
  out.memory.free(base);
  // same layout as pre, allocator cursor included
  DeviceMemory clean = pre;
  clean.restore_contents(out.memory.allocations());
  out.memory = std::move(clean);
  return out;
}

std::string_view level_name(DivergenceReport::Level l) {
  switch (l) {
    case DivergenceReport::Level::match: return "match";
    case DivergenceReport::Level::call: return "call";
    case DivergenceReport::Level::kernel: return "kernel";
    case DivergenceReport::Level::instruction: return "instruction";
  }
  return "?";
}

std::string DivergenceReport::text() const {
  std::ostringstream os;
  os << "level: " << level_name(level) << "\n";
  if (level == Level::match) return os.str();
  os << "call: " << call << (call_name.empty() ? "" : " (" + call_name + ")") << "\n";
  if (!detail.empty()) os << "detail: " << detail << "\n";
  if (level == Level::call) return os.str();
  os << "kernel: " << kernel << " (launch " << kernel_ordinal << ")\n";
  if (level == Level::kernel) return os.str();
  os << "instruction: " << instruction << ": " << instruction_text << "\n";
  os << "opcode: " << opcode << "\n";
  os << "cta: " << to_string(cta) << " thread: " << to_string(thread) << " (linear " << thread_linear << ")\n";
  os << "register: " << reg << "\n";
  auto rec = [](const std::optional<LogRecord>& r) {
    if (!r) return std::string("(no write)");
    return hex64(r->bits) + " ." + std::string(tag_name(static_cast<Tag>(r->tag)));
  };
  os << "expected: " << rec(expected) << "\n";
  os << "actual: " << rec(actual) << "\n";
  return os.str();
}

std::string DivergenceReport::json() const {
  nlohmann::ordered_json j;
  j["level"] = level_name(level);
  if (level != Level::match) {
    j["call"] = call;
    j["call_name"] = call_name;
    j["detail"] = detail;
  }
  if (level == Level::kernel || level == Level::instruction) {
    j["kernel"] = kernel;
    j["kernel_ordinal"] = kernel_ordinal;
  }
  if (level == Level::instruction) {
    j["instruction"] = instruction;
    j["opcode"] = opcode;
    j["instruction_text"] = instruction_text;
    j["cta"] = {cta.x, cta.y, cta.z};
    j["thread"] = {thread.x, thread.y, thread.z};
    j["thread_linear"] = thread_linear;
    j["register"] = reg;
    auto rec = [](const std::optional<LogRecord>& r) -> nlohmann::ordered_json {
      if (!r) return nullptr;
      return {{"tag", tag_name(static_cast<Tag>(r->tag))}, {"bits", hex64(r->bits)}};
    };
    j["expected"] = rec(expected);
    j["actual"] = rec(actual);
  }
  return j.dump(2) + "\n";
}

DivergenceReport compare_runs(const Manifest& m, const ExecutorConfig& a, const ExecutorConfig& b) {
  DivergenceReport rep;
  const CallLayout layout = layout_of(m);
  auto name_of = [&](int c) { return c >= 0 && c < static_cast<int>(layout.names.size()) ? layout.names[c] : std::string(); };

  // step 1: call-end state
  const RunTrace tb = trace_run(m, b, layout);
  const RunTrace ta = trace_run(m, a, layout);
  if (tb.error && !is_execution_failure(tb.error))
    throw ConfigError("executor B (" + executor_name(b) + ") rejects the workload: " + what_of(tb.error));
  if (ta.error && !is_execution_failure(ta.error))
    throw ConfigError("executor A (" + executor_name(a) + ") rejects the workload: " + what_of(ta.error));
  if (tb.error) throw ConfigError("executor B (" + executor_name(b) + ") failed, it cannot serve as the reference: " + what_of(tb.error));

  std::optional<int> failing;
  for (size_t i = 0; i < tb.calls.size(); ++i) {
    if (i >= ta.calls.size()) {
      failing = ta.error_call;
      rep.detail = "executor A stopped: " + what_of(ta.error);
      break;
    }
    if (ta.calls[i].buffers != tb.calls[i].buffers) {
      failing = tb.calls[i].call;
      for (const auto& [name, bytes] : tb.calls[i].buffers) {
        auto it = ta.calls[i].buffers.find(name);
        if (it == ta.calls[i].buffers.end()) {
          rep.detail = "buffer '" + name + "' missing";
          break;
        }
        if (it->second != bytes) {
          rep.detail = "buffer '" + name + "': " + describe_first_difference(bytes, it->second);
          break;
        }
      }
      break;
    }
  }
  if (!failing) return rep;  // match
  rep.level = DivergenceReport::Level::call;
  rep.call = *failing;
  rep.call_name = name_of(*failing);

  // step 2: replay the call's kernels from B's state, one at a time
  const std::vector<KernelCapture> caps = capture_call(m, b, *failing);
  const KernelCapture* bad = nullptr;
  for (const auto& c : caps) {
    DeviceMemory mem = c.pre;
    std::string why;
    try {
      run_kernel_with(a, c.env(mem));
      if (mem.allocations() != c.post.allocations()) why = first_memory_difference(c.post, mem);
    } catch (const MachineFault& f) {
      why = f.what();
    } catch (const DeadlockError& d) {
      why = d.what();
    }
    if (!why.empty()) {
      bad = &c;
      rep.detail = why;
      break;
    }
  }
  if (!bad) {
    rep.detail += rep.detail.empty() ? "" : "; ";
    rep.detail += "every kernel of the call matches when replayed from B's state";
    return rep;
  }
  rep.level = DivergenceReport::Level::kernel;
  rep.kernel = bad->kernel.name;
  rep.kernel_ordinal = bad->ordinal;

  // step 3: register-write logs of the failing kernel
  DeviceMemory mb = bad->pre;
  const InstrumentedRun rb = run_instrumented(b, bad->env(mb), bad->pre);
  const InstrumentedRun ra = run_instrumented(a, bad->env(mb), bad->pre);

  using Seq = std::vector<std::pair<size_t, LogRecord>>;
  std::map<uint32_t, Seq> by_a, by_b;
  for (size_t i = 0; i < ra.log.size(); ++i) by_a[ra.log[i].thread].push_back({i, ra.log[i]});
  for (size_t i = 0; i < rb.log.size(); ++i) by_b[rb.log[i].thread].push_back({i, rb.log[i]});
  std::set<uint32_t> threads;
  for (const auto& [t, s] : by_a) threads.insert(t);
  for (const auto& [t, s] : by_b) threads.insert(t);

  struct Hit {
    size_t pos_a = SIZE_MAX, pos_b = SIZE_MAX;
    std::optional<LogRecord> a, b;
    uint32_t thread = 0;
  };
  std::optional<Hit> best;
  static const Seq empty;
  for (uint32_t t : threads) {
    const Seq& sa = by_a.count(t) ? by_a.at(t) : empty;
    const Seq& sb = by_b.count(t) ? by_b.at(t) : empty;
    size_t i = 0;
    while (i < sa.size() && i < sb.size() && sa[i].second == sb[i].second) ++i;
    if (i == sa.size() && i == sb.size()) continue;
    Hit h;
    h.thread = t;
    if (i < sa.size()) h.pos_a = sa[i].first, h.a = sa[i].second;
    if (i < sb.size()) h.pos_b = sb[i].first, h.b = sb[i].second;
    if (!best || std::tie(h.pos_a, h.pos_b) < std::tie(best->pos_a, best->pos_b)) best = h;
  }
  if (!best) {
    if (ra.fault) rep.detail = "register writes agree until executor A stops: " + *ra.fault;
    else rep.detail = "register writes agree; memory differs at " + first_memory_difference(rb.memory, ra.memory);
    return rep;
  }

  const LogRecord& site = best->a ? *best->a : *best->b;
  const KernelObject& k = bad->kernel;
  rep.level = DivergenceReport::Level::instruction;
  rep.instruction = static_cast<int>(site.instruction);
  if (site.instruction < k.instructions.size()) {
    const Instruction& in = k.instructions[site.instruction];
    rep.opcode = std::string(opcode_name(in.opcode));
    rep.instruction_text = print_instruction(k, in);
  }
  rep.reg = site.reg < k.reg_names.size() ? k.reg_names[site.reg] : "r" + std::to_string(site.reg);
  rep.thread_linear = best->thread;
  const uint64_t per_cta = bad->block.count();
  rep.cta = cta_coords(best->thread / per_cta, bad->grid);
  rep.thread = cta_coords(best->thread % per_cta, bad->block);
  rep.expected = best->b;
  rep.actual = best->a;
  return rep;
}

std::filesystem::path extract_kernel_harness(const Manifest& m, int call, uint64_t kernel, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  ExecutorConfig exec;
  exec.mode = ExecMode::functional_serial;
  Session s(m, exec);
  uint64_t seen = 0;
  bool done = false;
  fs::path manifest_path = out_dir / "harness.manifest";

  s.hooks.before_launch = [&](Session& ss, LaunchContext& ctx) {
    if (ctx.call != call || ++seen != kernel) return false;
    const KernelObject& k = *ctx.kernel;
    for (const auto& p : k.params)
      if (p.kind == ParamKind::pointer_to_pointer)
        throw CaptureError("kernel '" + k.name + "' takes double-pointer parameter '" + p.name +
                           "'; the buffers it points into cannot be captured");

    fs::create_directories(out_dir / "data");
    fs::create_directories(out_dir / "expected");
    const std::string module_file = ctx.module + ".ptx";
    fs::copy_file(m.resolve(ss.module_paths().at(ctx.module)), out_dir / module_file, fs::copy_options::overwrite_existing);

    std::ostringstream mf;
    mf << "# standalone replay of " << k.name << " (launch " << ctx.ordinal << " of " << m.source_name << ")\n";
    mf << "load_module " << ctx.module << " " << module_file << "\n";
    const DeviceMemory pre = ss.memory();
    auto file_name = [](std::string n) {
      std::replace(n.begin(), n.end(), ':', '_');
      return n + ".bin";
    };
    for (const auto& [base, a] : pre.allocations()) {
      const bool global = a.name.find("::") != std::string::npos;
      if (!global) mf << "alloc " << a.name << " " << a.bytes.size() << "\n";
      if (std::any_of(a.bytes.begin(), a.bytes.end(), [](uint8_t b) { return b != 0; }) || global) {
        write_file(out_dir / "data" / file_name(a.name), a.bytes);
        mf << "init " << a.name << " file data/" << file_name(a.name) << "\n";
      }
    }
    // textures: one registration per handle, one binding per name
    for (const auto& [name, e] : ss.textures().entries()) {
      for (TexrefId id : e.texrefs) mf << "register_texture " << name << " " << id << "\n";
      if (!e.binding || e.texrefs.empty()) continue;
      const auto& arr = e.binding->array;
      const auto& owner = pre.resolve(arr.backing, 1);
      if (owner.base != arr.backing) throw CaptureError("texture '" + name + "' is bound inside an allocation");
      mf << "bind_texture " << *e.texrefs.begin() << " " << owner.name << " width=" << arr.width << " height=" << arr.height
         << " format=" << format_name(arr.format) << "\n";
    }

    // arguments, in signature order; values that land in an allocation become buffer references
    mf << "launch " << ctx.module << " " << k.name << " grid=" << ctx.env.grid.x << "," << ctx.env.grid.y << "," << ctx.env.grid.z
       << " block=" << ctx.env.block.x << "," << ctx.env.block.y << "," << ctx.env.block.z << " style=driver args=";
    for (size_t i = 0; i < k.params.size(); ++i) {
      const auto& p = k.params[i];
      const TypedValue v = load_le(std::span<const uint8_t>(ctx.params).subspan(p.offset, width_bytes(p.type)), p.type);
      if (i) mf << ",";
      if (width_bytes(p.type) == 8 && pre.contains(v.u())) {
        const Allocation& a = pre.resolve(v.u(), 1);
        if (a.name.find("::") != std::string::npos)
          throw CaptureError("parameter '" + p.name + "' points at module global '" + a.name + "'");
        mf << a.name;
        if (v.u() != a.base) mf << "+" << (v.u() - a.base);
      } else if (p.type == Tag::f32 || p.type == Tag::f64) {
        char buf[48];  // hex float: exact through strtod
        std::snprintf(buf, sizeof buf, "%a", p.type == Tag::f32 ? double{v.f32()} : v.f64());
        mf << tag_name(p.type) << ":" << buf;
      } else {
        mf << tag_name(p.type) << ":" << (is_signed_int(p.type) ? std::to_string(v.s()) : std::to_string(v.u()));
      }
    }
    mf << "\nsync\n";

    ss.execute_kernel(ctx.env);
    for (const auto& [base, a] : ss.memory().allocations()) {
      if (pre.allocations().at(base).bytes == a.bytes) continue;
      write_file(out_dir / "expected" / file_name(a.name), a.bytes);
      mf << "check " << a.name << " expected/" << file_name(a.name) << "\n";
    }
    const std::string text = mf.str();
    write_file(manifest_path, std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(text.data()), text.size()));
    done = true;
    throw StopRun();
  };
  s.run();
  if (!done)
    throw RangeError("the run has " + std::to_string(seen) + " launch" + (seen == 1 ? "" : "es") + " in call " + std::to_string(call) +
                     "; kernel " + std::to_string(kernel) + " requested");
  return manifest_path;
}

}  // namespace gpusim
