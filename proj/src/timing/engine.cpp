#include "gpusim/timing/engine.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <deque>
#include <memory>
#include <queue>

#include "gpusim/core/grid.hpp"
#include "gpusim/runtime/manifest.hpp"

namespace gpusim {

namespace {

using json = nlohmann::json;

struct Field {
  const char* name;
  uint32_t TimingConfig::*u32 = nullptr;
};

const std::vector<Field>& u32_fields() {
  static const std::vector<Field> f = {
      {"n_cores", &TimingConfig::n_cores},
      {"issue_width", &TimingConfig::issue_width},
      {"max_ctas_per_core", &TimingConfig::max_ctas_per_core},
      {"max_threads_per_core", &TimingConfig::max_threads_per_core},
      {"n_banks", &TimingConfig::n_banks},
      {"interleave_bytes", &TimingConfig::interleave_bytes},
      {"segment_bytes", &TimingConfig::segment_bytes},
      {"mem_latency", &TimingConfig::mem_latency},
      {"bank_busy_cycles", &TimingConfig::bank_busy_cycles},
  };
  return f;
}

const std::vector<Field>& latency_fields() {
  static const std::vector<Field> f = {
      {"alu", &TimingConfig::lat_alu},       {"mul", &TimingConfig::lat_mul},     {"div", &TimingConfig::lat_div},
      {"shared", &TimingConfig::lat_shared}, {"local", &TimingConfig::lat_local}, {"param", &TimingConfig::lat_param},
      {"branch", &TimingConfig::lat_branch},
  };
  return f;
}

uint32_t as_u32(const json& v, const std::string& key) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<int64_t>() >= 0))
    throw ConfigError("timing config: '" + key + "' must be a non-negative integer");
  const auto x = v.get<uint64_t>();
  if (x > 0xFFFFFFFFu) throw ConfigError("timing config: '" + key + "' is too large");
  return static_cast<uint32_t>(x);
}

enum class Stall : uint8_t { none, data_hazard, memory, barrier };

struct WarpTiming {
  uint64_t ready = 0;
  uint32_t outstanding = 0;  // load replies still to come
};

struct Resident {
  CtaState cta;
  std::vector<WarpTiming> warps;
};

struct Core {
  std::vector<std::unique_ptr<Resident>> ctas;
  std::vector<std::pair<Resident*, uint32_t>> warps;  // flattened, dispatch order
  uint32_t threads = 0;
  size_t rr = 0;

  void rebuild() {
    warps.clear();
    for (auto& r : ctas)
      for (uint32_t w = 0; w < r->cta.warps.size(); ++w) warps.emplace_back(r.get(), w);
    if (rr >= warps.size()) rr = 0;
  }
};

struct Request {
  WarpTiming* warp = nullptr;  // null for stores: nobody waits
  bool write = false;
  uint64_t address = 0;
};

struct Bank {
  std::deque<Request> queue;
  uint64_t busy_until = 0;
};

struct Reply {
  uint64_t at;
  uint64_t order;  // FIFO among equal times
  WarpTiming* warp;
  bool operator>(const Reply& o) const { return at != o.at ? at > o.at : order > o.order; }
};

}  // namespace

void TimingConfig::validate() const {
  if (n_cores == 0 || issue_width == 0 || max_ctas_per_core == 0 || max_threads_per_core == 0)
    throw ConfigError("timing config: core counts and capacities must be positive");
  if (n_banks == 0 || interleave_bytes == 0 || segment_bytes == 0) throw ConfigError("timing config: DRAM geometry must be positive");
  if (issue_width > kWarpSize * 64) throw ConfigError("timing config: issue_width is unreasonably large");
  for (const auto& f : latency_fields())
    if (this->*f.u32 < 1) throw ConfigError(std::string("timing config: latency '") + f.name + "' must be at least 1");
  if (mem_latency < 1 || bank_busy_cycles < 1) throw ConfigError("timing config: memory latencies must be at least 1");
  if (watchdog && watchdog_horizon == 0) throw ConfigError("timing config: watchdog horizon 0 is invalid");
}

TimingConfig parse_timing_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("timing config: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("timing config must be a JSON object");
  TimingConfig c;
  for (const auto& [key, v] : j.items()) {
    bool known = false;
    for (const auto& f : u32_fields())
      if (key == f.name) {
        c.*f.u32 = as_u32(v, key);
        known = true;
      }
    if (key == "latency") {
      if (!v.is_object()) throw ConfigError("timing config: 'latency' must be an object");
      for (const auto& [lk, lv] : v.items()) {
        bool hit = false;
        for (const auto& f : latency_fields())
          if (lk == f.name) {
            c.*f.u32 = as_u32(lv, "latency." + lk);
            hit = true;
          }
        if (!hit) throw ConfigError("timing config: unknown latency class '" + lk + "'");
      }
      known = true;
    } else if (key == "watchdog_horizon") {
      if (!v.is_number_integer() || v.get<int64_t>() < 0) throw ConfigError("timing config: 'watchdog_horizon' must be a non-negative integer");
      c.watchdog_horizon = v.get<uint64_t>();
      known = true;
    } else if (key == "watchdog") {
      if (!v.is_boolean()) throw ConfigError("timing config: 'watchdog' must be true or false");
      c.watchdog = v.get<bool>();
      known = true;
    }
    if (!known) throw ConfigError("timing config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

TimingConfig load_timing_config(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_timing_config(std::string(bytes.begin(), bytes.end()));
}

std::string timing_config_json(const TimingConfig& c) {
  json j = json::object();
  for (const auto& f : u32_fields()) j[f.name] = c.*f.u32;
  json lat = json::object();
  for (const auto& f : latency_fields()) lat[f.name] = c.*f.u32;
  j["latency"] = lat;
  j["watchdog_horizon"] = c.watchdog_horizon;
  j["watchdog"] = c.watchdog;
  return j.dump(2);
}

std::vector<CtaWork> fresh_work(uint64_t first, uint64_t last) {
  std::vector<CtaWork> w;
  for (uint64_t i = first; i < last; ++i) w.push_back({i, std::nullopt});
  return w;
}

TimingEngine::TimingEngine(TimingConfig cfg, Timeline* timeline) : cfg_(cfg), timeline_(timeline) {
  cfg_.validate();
  if (timeline_ && !(timeline_->shape() == cfg_.shape())) throw ConfigError("timeline shape does not match the timing config");
}

KernelTiming TimingEngine::run_kernel(const KernelEnv& env, std::vector<CtaWork> work) {
  validate_launch(env);
  const uint32_t block_threads = static_cast<uint32_t>(env.block.count());
  if (block_threads > cfg_.max_threads_per_core)
    throw LaunchError("a " + std::to_string(block_threads) + "-thread block does not fit on a core (max_threads_per_core " +
                      std::to_string(cfg_.max_threads_per_core) + ")");

  std::vector<Core> cores(cfg_.n_cores);
  std::vector<Bank> banks(cfg_.n_banks);
  std::priority_queue<Reply, std::vector<Reply>, std::greater<>> replies;
  uint64_t reply_order = 0;

  KernelTiming kt;
  kt.start_cycle = cycle_;
  kt.bank_commands.assign(cfg_.n_banks, 0);
  size_t next_work = 0;
  size_t dispatch_core = 0;
  uint64_t resident = 0;
  uint64_t last_commit = cycle_;

  StatSample s;
  s.per_shader.assign(cfg_.n_cores, 0);
  s.per_bank.assign(cfg_.n_banks, {});
  StepResult r;
  std::vector<uint64_t> segs;

  auto latency = [&](OpClass c) -> uint32_t {
    switch (c) {
      case OpClass::alu: return cfg_.lat_alu;
      case OpClass::mul: return cfg_.lat_mul;
      case OpClass::div: return cfg_.lat_div;
      case OpClass::mem_shared: return cfg_.lat_shared;
      case OpClass::mem_local: return cfg_.lat_local;
      case OpClass::mem_param: return cfg_.lat_param;
      case OpClass::branch:
      case OpClass::barrier:
      case OpClass::exit: return cfg_.lat_branch;
      default: return cfg_.lat_alu;
    }
  };

  auto stall_report = [&] {
    std::string rep = "timing watchdog: no instruction committed for " + std::to_string(cycle_ - last_commit) +
                      " cycles (kernel " + env.module_id + ":" + env.kernel->name + ", cycle " + std::to_string(cycle_) + ")\n";
    for (size_t c = 0; c < cores.size(); ++c)
      for (const auto& res : cores[c].ctas)
        for (uint32_t w = 0; w < res->cta.warps.size(); ++w) {
          const WarpState& ws = res->cta.warps[w];
          const WarpTiming& wt = res->warps[w];
          rep += "  core " + std::to_string(c) + " block " + to_string(res->cta.ctaid) + " warp " + std::to_string(w) + ": ";
          if (ws.done()) rep += "exited (never arrives at the barrier)";
          else if (ws.at_barrier) rep += "barrier: waiting at bar.sync, instruction " + std::to_string(ws.pc());
          else if (wt.outstanding) rep += "memory: " + std::to_string(wt.outstanding) + " load replies outstanding";
          else if (wt.ready > cycle_) rep += "data-hazard until cycle " + std::to_string(wt.ready);
          else rep += "ready at instruction " + std::to_string(ws.pc());
          rep += "\n";
        }
    for (size_t b = 0; b < banks.size(); ++b) {
      rep += "  bank " + std::to_string(b) + ": " + std::to_string(banks[b].queue.size()) + " queued";
      if (!banks[b].queue.empty()) {
        const Request& h = banks[b].queue.front();
        rep += ", head " + std::string(h.write ? "write" : "read") + " at address " + std::to_string(h.address);
      }
      rep += "\n";
    }
    return rep;
  };

  while (true) {
    const uint64_t now = cycle_;

    while (!replies.empty() && replies.top().at <= now) {
      WarpTiming* w = replies.top().warp;
      replies.pop();
      if (--w->outstanding == 0) w->ready = std::max(w->ready, now);
    }

    // fill free CTA slots, round-robin over cores
    while (next_work < work.size()) {
      bool placed = false;
      for (size_t i = 0; i < cores.size() && !placed; ++i) {
        Core& core = cores[(dispatch_core + i) % cores.size()];
        if (core.ctas.size() >= cfg_.max_ctas_per_core || core.threads + block_threads > cfg_.max_threads_per_core) continue;
        auto res = std::make_unique<Resident>();
        CtaWork& wk = work[next_work];
        res->cta = wk.restored ? std::move(*wk.restored) : make_cta(env, wk.linear_id);
        res->warps.assign(res->cta.warps.size(), WarpTiming{now, 0});
        core.ctas.push_back(std::move(res));
        core.threads += block_threads;
        core.rebuild();
        dispatch_core = (dispatch_core + i + 1) % cores.size();
        ++next_work;
        ++resident;
        placed = true;
      }
      if (!placed) break;
    }

    std::fill(s.per_shader.begin(), s.per_shader.end(), 0);
    s.breakdown.fill(0);
    s.cycle = now;
    for (size_t c = 0; c < cores.size(); ++c) {
      Core& core = cores[c];
      uint32_t used = 0;
      const size_t n = core.warps.size();
      size_t last = n;
      for (size_t i = 0; i < n && used < cfg_.issue_width; ++i) {
        const size_t idx = (core.rr + i) % n;
        auto [res, wi] = core.warps[idx];
        WarpState& ws = res->cta.warps[wi];
        WarpTiming& wt = res->warps[wi];
        if (ws.done() || ws.at_barrier || wt.outstanding || wt.ready > now) continue;
        step_warp(res->cta, ws, env, r);
        if (r.kind == StepResult::Kind::barrier_wait) {
          // parking takes no issue slot
          release_barrier(res->cta);
          continue;
        }
        if (r.kind != StepResult::Kind::committed) continue;
        ++used;
        last = idx;
        ++s.breakdown[static_cast<size_t>(std::popcount(r.active_mask))];
        ++s.per_shader[c];
        const bool dram = (r.cls == OpClass::mem_global || r.cls == OpClass::tex || r.cls == OpClass::atomic) && !r.global_addrs.empty();
        if (!dram) {
          wt.ready = now + latency(r.cls);
          continue;
        }
        segs.clear();
        for (uint64_t a : r.global_addrs) segs.push_back(a / cfg_.segment_bytes * cfg_.segment_bytes);
        std::sort(segs.begin(), segs.end());
        segs.erase(std::unique(segs.begin(), segs.end()), segs.end());
        const bool waits = !r.is_store;
        const bool write = r.is_store || r.cls == OpClass::atomic;
        for (uint64_t a : segs) {
          banks[(a / cfg_.interleave_bytes) % cfg_.n_banks].queue.push_back({waits ? &wt : nullptr, write, a});
          ++kt.requests;
        }
        if (waits) wt.outstanding = static_cast<uint32_t>(segs.size());
        wt.ready = now + (waits ? 1 : cfg_.lat_alu);
      }
      s.breakdown[0] += cfg_.issue_width - used;
      if (last != n) core.rr = (last + 1) % n;
    }

    for (size_t b = 0; b < banks.size(); ++b) {
      Bank& bank = banks[b];
      BankCounters& bc = s.per_bank[b];
      bc = {0, 0, !bank.queue.empty() || bank.busy_until > now};
      if (bank.busy_until <= now && !bank.queue.empty()) {
        const Request q = bank.queue.front();
        bank.queue.pop_front();
        bank.busy_until = now + cfg_.bank_busy_cycles;
        (q.write ? bc.writes : bc.reads) = 1;
        ++kt.bank_commands[b];
        if (q.warp) replies.push({now + cfg_.bank_busy_cycles + cfg_.mem_latency, reply_order++, q.warp});
      }
    }

    // retire finished CTAs
    for (Core& core : cores) {
      const size_t before = core.ctas.size();
      std::erase_if(core.ctas, [&](const std::unique_ptr<Resident>& res) {
        if (!res->cta.done()) return false;
        for (const auto& w : res->warps)
          if (w.outstanding) return false;
        return true;
      });
      if (core.ctas.size() != before) {
        resident -= before - core.ctas.size();
        core.threads = static_cast<uint32_t>(core.ctas.size()) * block_threads;
        core.rebuild();
      }
    }

    const uint64_t committed = s.global_ipc();
    kt.committed += committed;
    if (committed) last_commit = now;
    if (timeline_) timeline_->record(s);
    ++cycle_;

    bool drained = next_work == work.size() && resident == 0 && replies.empty();
    for (const Bank& b : banks) drained = drained && b.queue.empty() && b.busy_until <= cycle_;
    if (drained) break;
    if (cfg_.watchdog && resident > 0 && cycle_ - last_commit > cfg_.watchdog_horizon) throw DeadlockError(stall_report());
  }
  kt.cycles = cycle_ - kt.start_cycle;
  return kt;
}

}  // namespace gpusim
