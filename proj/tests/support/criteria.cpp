#include "criteria.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstring>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <unistd.h>

#include "corpus.hpp"
#include "gpusim/diff/diff.hpp"
#include "gpusim/runtime/generate.hpp"
#include "suites.hpp"

namespace gpusim_test {

using namespace gpusim;
namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(cell);
    rows.push_back(std::move(row));
  }
  return rows;
}

fs::path scratch_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("gpusim_" + tag + "_" + std::to_string(::getpid()));
  fs::create_directories(p);
  return p;
}

// kernel shape flags used to show the equivalence corpus covers what it should
struct Coverage {
  bool diamond = false, loop = false, barrier = false, texture = false;
};

void note_kernel(const KernelObject& k, Coverage& c) {
  for (size_t i = 0; i < k.instructions.size(); ++i) {
    const auto& in = k.instructions[i];
    if (in.opcode == Opcode::bra && in.guard && !in.uniform) {
      if (in.target <= static_cast<int>(i)) c.loop = true;
      else c.diamond = true;
    }
    if (in.opcode == Opcode::bar) c.barrier = true;
    if (in.opcode == Opcode::tex) c.texture = true;
  }
}

}  // namespace

Outcome outcome_of(const Session& s) {
  Outcome o;
  for (const auto& [base, a] : s.memory().allocations()) o.device[a.name] = a.bytes;
  o.host = s.host_buffers();
  o.committed = s.committed();
  return o;
}

Outcome run_outcome(const Manifest& m, ExecMode mode) {
  ExecutorConfig e;
  e.mode = mode;
  Session s(m, e);
  s.run();
  return outcome_of(s);
}

std::string first_mismatch(const Outcome& a, const Outcome& b) {
  auto side = [](const char* what, const auto& x, const auto& y) -> std::string {
    for (const auto& [name, bytes] : x) {
      auto it = y.find(name);
      if (it == y.end()) return std::string(what) + " '" + name + "' missing on one side";
      if (it->second != bytes) return std::string(what) + " '" + name + "': " + describe_first_difference(bytes, it->second);
    }
    if (x.size() != y.size()) return std::string(what) + " buffer sets differ";
    return {};
  };
  if (auto d = side("device", a.device, b.device); !d.empty()) return d;
  return side("host", a.host, b.host);
}

Manifest corpus_manifest(const std::string& name) { return load_manifest(corpus_path(name + ".manifest")); }

std::vector<std::string> runnable_manifests() {
  std::vector<std::string> out;
  for (const auto& f : corpus_files(".manifest")) {
    const std::string stem = fs::path(f).stem().string();
    if (stem == "barrier_deadlock" || stem == "circular_wait") continue;
    out.push_back(stem);
  }
  return out;
}

Outcome checkpoint_resume(const Manifest& m, const CheckpointPosition& pos, ExecMode mode) {
  const CheckpointBundle b = decode_bundle(encode_bundle(checkpoint_run(m, pos)));
  ExecutorConfig e;
  e.mode = mode;
  Session s(m, e);
  install_resume(s, b);
  s.run();
  return outcome_of(s);
}

std::vector<CheckpointPosition> conv_positions() {
  // kernel boundaries, mid-CTA freezes, the last CTA, and a budget
  // larger than any CTA needs
  std::vector<CheckpointPosition> p = {
      {1, 1, 0, 0},  {1, 9, 0, 0},  {2, 1, 0, 0},  {3, 16, 0, 0}, {4, 1, 0, 0},    {1, 1, 1, 1},
      {1, 3, 2, 10}, {2, 3, 2, 10}, {3, 7, 4, 33}, {4, 16, 1, 5}, {2, 1, 16, 100}, {4, 5, 3, 100000},
  };
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 12; ++i) {
    CheckpointPosition q;
    q.x = 1 + rng() % 4;
    q.M = 1 + rng() % 16;
    q.t = rng() % (17 - q.M);
    q.y = rng() % 200;
    p.push_back(q);
  }
  return p;
}

std::string check_stream_order(const std::vector<Completion>& log, size_t expected_commands) {
  if (log.size() != expected_commands)
    return std::to_string(log.size()) + " completions for " + std::to_string(expected_commands) + " commands";

  std::map<uint32_t, uint64_t> last_seq;
  std::map<uint64_t, size_t> position;  // seq -> completion index
  for (size_t i = 0; i < log.size(); ++i) {
    const auto& c = log[i];
    if (position.contains(c.seq)) return "seq " + std::to_string(c.seq) + " completed twice";
    position[c.seq] = i;
    auto it = last_seq.find(c.stream);
    if (it != last_seq.end() && it->second >= c.seq)
      return "stream " + std::to_string(c.stream) + " ran seq " + std::to_string(c.seq) + " after " + std::to_string(it->second);
    last_seq[c.stream] = c.seq;
  }

  // issue order is seq order; a wait binds to the latest earlier record of
  // its event, else the first later one
  std::vector<Completion> issued = log;
  std::sort(issued.begin(), issued.end(), [](const Completion& a, const Completion& b) { return a.seq < b.seq; });
  for (size_t i = 0; i < issued.size(); ++i) {
    const auto& w = issued[i];
    if (w.kind != CommandKind::wait) continue;
    std::optional<uint64_t> bound;
    for (size_t j = i; j-- > 0;)
      if (issued[j].kind == CommandKind::record && issued[j].event == w.event) {
        bound = issued[j].seq;
        break;
      }
    if (!bound)
      for (size_t j = i + 1; j < issued.size(); ++j)
        if (issued[j].kind == CommandKind::record && issued[j].event == w.event) {
          bound = issued[j].seq;
          break;
        }
    if (!bound) return "wait seq " + std::to_string(w.seq) + " on '" + w.event + "' has no record to bind to";
    if (w.waited_on != bound)
      return "wait seq " + std::to_string(w.seq) + " bound to " + (w.waited_on ? std::to_string(*w.waited_on) : "nothing") +
             ", expected " + std::to_string(*bound);
    if (position.at(*bound) > position.at(w.seq))
      return "wait seq " + std::to_string(w.seq) + " completed before record seq " + std::to_string(*bound);
  }
  return {};
}

std::vector<double> bank_utilization(const std::string& manifest) {
  const Manifest m = corpus_manifest(manifest);
  ExecutorConfig e;
  e.mode = ExecMode::performance;
  Session s(m, e);
  s.run();
  const Timeline& t = s.timeline();
  const ViewTables v = aggregate(t, t.last_cycle() - t.first_cycle() + 1);
  std::vector<double> util;
  for (const auto& bank : v.dram_util) util.push_back(bank.at(0));
  return util;
}

Verdict instruction_semantics() {
  constexpr uint64_t n = uint64_t{1} << 16;
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::pair<std::string, SuiteResult>> runs;
  for (const char* t : {"u32", "s32", "u64", "s64"}) runs.emplace_back(std::string("bfe.") + t, bfe_suite(t, n, 101));
  for (const char* t : {"b32", "b64"}) runs.emplace_back(std::string("brev.") + t, brev_suite(t, n, 202));
  for (const char* t : {"u32", "s32", "u64", "s64"}) runs.emplace_back(std::string("rem.") + t, rem_suite(t, n, 303));
  runs.emplace_back("cvt", cvt_suite(n, 404));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  Verdict v{true, {}};
  uint64_t total = 0;
  for (const auto& [name, r] : runs) {
    total += r.cases;
    if (!r.ok() || r.cases < n) {
      v.pass = false;
      v.detail = name + ": " + std::to_string(r.failures) + "/" + std::to_string(r.cases) + " failed, first " + r.first_failure;
      return v;
    }
  }
  v.pass = secs < 60;
  v.detail = std::to_string(runs.size()) + " suites, " + std::to_string(total) + " cases, 0 mismatches, " + fmt(secs) + " s";
  return v;
}

Verdict simt_equivalence() {
  std::set<std::string> kernels;
  Coverage cov;
  for (const auto& name : runnable_manifests()) {
    const Manifest m = corpus_manifest(name);
    ExecutorConfig fe;
    fe.mode = ExecMode::functional;
    Session f(m, fe);
    f.hooks.after_launch = [&](Session& s, const LaunchContext& ctx) {
      kernels.insert(s.module_paths().at(ctx.module) + ":" + ctx.kernel->name);
      note_kernel(*ctx.kernel, cov);
    };
    f.run();
    const Outcome a = outcome_of(f);
    const Outcome b = run_outcome(m, ExecMode::reference);
    if (auto d = first_mismatch(b, a); !d.empty()) return {false, name + ": " + d};
  }
  const bool covered = cov.diamond && cov.loop && cov.barrier && cov.texture;
  return {kernels.size() >= 20 && covered,
          std::to_string(kernels.size()) + " kernels bit-exact vs reference" + (covered ? "" : " (missing a kernel shape)")};
}

Verdict checkpoint_transparency() {
  const auto start = std::chrono::steady_clock::now();
  const Manifest m = corpus_manifest("conv");
  const Outcome base = run_outcome(m, ExecMode::functional);
  const auto positions = conv_positions();
  size_t frozen = 0, boundaries = 0;
  for (const auto& p : positions) {
    (p.t == 0 ? boundaries : frozen)++;
    for (ExecMode mode : {ExecMode::functional, ExecMode::performance}) {
      const Outcome r = checkpoint_resume(m, p, mode);
      if (auto d = first_mismatch(base, r); !d.empty())
        return {false, format_position(p) + " resumed in " + std::string(exec_mode_name(mode)) + ": " + d};
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {positions.size() >= 10 && boundaries > 0 && frozen > 0 && secs < 300,
          std::to_string(positions.size()) + " positions (" + std::to_string(boundaries) + " at t=0), functional and performance resume, " +
              fmt(secs) + " s"};
}

Verdict timing_agreement() {
  size_t n = 0;
  for (const auto& name : runnable_manifests()) {
    const Manifest m = corpus_manifest(name);
    const Outcome f = run_outcome(m, ExecMode::functional);
    const Outcome p = run_outcome(m, ExecMode::performance);
    if (auto d = first_mismatch(f, p); !d.empty()) return {false, name + ": " + d};
    if (f.committed != p.committed) return {false, name + ": committed counts differ"};
    ++n;
  }
  return {n > 0, std::to_string(n) + " workloads, final memory identical"};
}

Verdict texture_semantics() {
  // registry scenarios
  {
    DeviceMemory mem;
    TextureRegistry reg;
    auto array = [&](const std::string& name, float first) {
      CudaArrayDesc a;
      a.name = name;
      a.width = 4;
      a.height = 1;
      a.format = parse_channel_format("f32x1");
      a.backing = mem.allocate(name, a.byte_size());
      for (uint32_t i = 0; i < 4; ++i) mem.store(a.backing + 4 * i, TypedValue::from_f32(first + static_cast<float>(i)));
      return a;
    };
    auto at = [&](const std::string& n, int x) { return std::bit_cast<float>(reg.fetch(n, x, 0, mem)[0]); };
    const auto a = array("A", 1), b = array("B", 10), c = array("C", 100);
    reg.register_texture("shared", 1);
    reg.register_texture("shared", 2);  // second texref for the same name
    if (reg.find("shared")->texrefs.size() != 2) return {false, "registering twice lost a texref"};
    reg.bind_texture_to_array(1, a);
    if (at("shared", 2) != 3.0f) return {false, "fetch through name after bind via texref 1"};
    reg.bind_texture_to_array(2, b);
    if (at("shared", 2) != 12.0f) return {false, "bind via the second texref did not win"};
    reg.bind_texture_to_array(2, c);  // rebind without unbind
    if (at("shared", 0) != 100.0f) return {false, "rebinding the same texref did not replace the array"};
  }

  // the corpus workload, checked against oracles computed here
  const Manifest m = corpus_manifest("textures");
  for (ExecMode mode : {ExecMode::functional, ExecMode::reference, ExecMode::performance}) {
    const Outcome o = run_outcome(m, mode);
    auto floats = [&](const std::string& n) {
      const auto& bytes = o.device.at(n);
      std::vector<float> v(bytes.size() / 4);
      std::memcpy(v.data(), bytes.data(), v.size() * 4);
      return v;
    };
    const auto lut_b = floats("lut_b");  // 32 texels of two floats, bound last
    const auto img = floats("img");
    const auto gathered = floats("gathered");
    const auto boxed = floats("boxed");
    std::vector<int32_t> idx(128);
    std::memcpy(idx.data(), o.device.at("idx").data(), 512);
    for (int i = 0; i < 128; ++i) {
      const int x = std::clamp(idx[static_cast<size_t>(i)], 0, 31);
      const float want = lut_b[static_cast<size_t>(2 * x)] + lut_b[static_cast<size_t>(2 * x + 1)];
      if (std::bit_cast<uint32_t>(want) != std::bit_cast<uint32_t>(gathered[static_cast<size_t>(i)]))
        return {false, std::string(exec_mode_name(mode)) + ": gathered[" + std::to_string(i) + "] " +
                           fmt(gathered[static_cast<size_t>(i)]) + ", want " + fmt(want)};
    }
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        float sum = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            sum += img[static_cast<size_t>(std::clamp(y + dy, 0, 15) * 16 + std::clamp(x + dx, 0, 15))];
        const float want = sum / 9.0f;
        const float got = boxed[static_cast<size_t>(y * 16 + x)];
        if (std::bit_cast<uint32_t>(want) != std::bit_cast<uint32_t>(got))
          return {false, std::string(exec_mode_name(mode)) + ": boxed(" + std::to_string(x) + "," + std::to_string(y) + ")"};
      }
  }
  return {true, "register-twice, rebind, shared-name registry checks; 1D gather and 2D box fetches match oracles in 3 modes"};
}

Verdict stream_ordering() {
  constexpr uint64_t kSeeds = 128;
  size_t commands = 0, waits = 0;
  for (uint64_t seed = 1; seed <= kSeeds; ++seed) {
    const Manifest m = parse_manifest(random_stream_manifest(seed, "vecadd.ptx", 60), "streams_" + std::to_string(seed),
                                      corpus_dir());
    size_t expected = 0;
    for (const auto& d : m.directives)
      if (std::holds_alternative<Launch>(d.body) || std::holds_alternative<Memcpy>(d.body) ||
          std::holds_alternative<RecordEvent>(d.body) || std::holds_alternative<WaitEvent>(d.body))
        ++expected;
    ExecutorConfig e;
    Session s(m, e);
    s.run();
    const auto& log = s.streams().completions();
    if (auto d = check_stream_order(log, expected); !d.empty()) return {false, "seed " + std::to_string(seed) + ": " + d};
    commands += log.size();
    for (const auto& c : log) waits += c.kind == CommandKind::wait;
  }

  // the circular wait must be reported, not hang; run it on a detached
  // thread so a hang can't take the runner with it
  auto done = std::make_shared<std::promise<std::string>>();
  auto result = done->get_future();
  std::thread([done] {
    try {
      const Manifest m = corpus_manifest("circular_wait");
      ExecutorConfig e;
      Session s(m, e);
      s.run();
      done->set_value("completed without a deadlock report");
    } catch (const DeadlockError&) {
      done->set_value("");
    } catch (const std::exception& ex) {
      done->set_value(std::string("unexpected error: ") + ex.what());
    }
  }).detach();
  if (result.wait_for(std::chrono::seconds(10)) != std::future_status::ready) return {false, "circular wait hung past 10 s"};
  if (auto err = result.get(); !err.empty()) return {false, "circular wait " + err};
  return {true, std::to_string(kSeeds) + " seeded manifests, " + std::to_string(commands) + " commands, " + std::to_string(waits) +
                    " waits ordered; circular wait reported as deadlock"};
}

Verdict bank_camping() {
  auto ratio = [](const std::vector<double>& u, bool against_others) {
    const auto hot = std::max_element(u.begin(), u.end());
    std::vector<double> rest;
    for (auto it = u.begin(); it != u.end(); ++it)
      if (!against_others || it != hot) rest.push_back(*it);
    const double med = median(rest);
    return med == 0 ? (*hot > 0 ? INFINITY : 0.0) : *hot / med;
  };
  const auto camp = bank_utilization("camp");
  const auto flat = bank_utilization("unit_stride");
  const double camp_ratio = ratio(camp, true);
  const double flat_ratio = ratio(flat, false);
  return {camp_ratio >= 10 && flat_ratio <= 2,
          "strided hot/median(others) = " + fmt(camp_ratio) + ", unit stride max/median = " + fmt(flat_ratio)};
}

Verdict stats_invariants() {
  const fs::path dir = scratch_dir("stats");
  size_t checked = 0;
  double worst = 0;
  for (const auto& name : runnable_manifests()) {
    const Manifest m = corpus_manifest(name);
    ExecutorConfig e;
    e.mode = ExecMode::performance;
    Session s(m, e);
    s.run();
    const Timeline& t = s.timeline();
    const double slots = double(e.timing.n_cores) * e.timing.issue_width;
    for (uint64_t window : {1ull, 7ull, 100ull, 500ull}) {
      const ViewTables v = aggregate(t, window);
      for (size_t w = 0; w < v.window_end.size(); ++w) {
        double col = 0;
        for (const auto& cls : v.breakdown) col += cls[w];
        if (std::abs(col - slots) > 1e-9 * slots)
          return {false, name + ": breakdown window " + std::to_string(w) + " sums to " + fmt(col)};
      }
      double sum = 0;
      for (size_t w = 0; w < v.gipc.size(); ++w) sum += v.gipc[w] * double(v.window_len[w]);
      const double err = std::abs(sum - double(s.committed())) / std::max(1.0, double(s.committed()));
      worst = std::max(worst, err);
      if (err > 1e-3) return {false, name + ": gipc integrates to " + fmt(sum) + ", committed " + std::to_string(s.committed())};
    }

    // the exported files, read back as text
    export_views(t, 500, dir);
    const auto gipc = read_csv(dir / "gipc.csv");
    const auto brk = read_csv(dir / "warp_breakdown.csv");
    double sum = 0;
    uint64_t prev = t.first_cycle() - 1;
    for (size_t c = 1; c < gipc.at(0).size(); ++c) {
      const uint64_t end = std::stoull(gipc[0][c]);
      sum += std::stod(gipc.at(1).at(c)) * double(end - prev);
      prev = end;
      double col = 0;
      for (size_t r = 1; r < brk.size(); ++r) col += std::stod(brk[r].at(c));
      if (std::abs(col - slots) > 1e-3 * slots) return {false, name + ": warp_breakdown.csv column " + std::to_string(c)};
    }
    const double err = std::abs(sum - double(s.committed())) / std::max(1.0, double(s.committed()));
    worst = std::max(worst, err);
    if (err > 1e-3) return {false, name + ": gipc.csv integrates to " + fmt(sum)};
    ++checked;
  }
  fs::remove_all(dir);
  return {checked > 0, std::to_string(checked) + " workloads x 4 windows plus CSVs; worst gipc error " + fmt(worst * 100) + "%"};
}

Verdict diff_localization() {
  const Manifest m = corpus_manifest("faults");
  struct Case {
    InjectedFault fault;
    std::string opcode;
  };
  const std::vector<Case> cases = {{InjectedFault::bfe_sign_fill, "bfe"},
                                   {InjectedFault::union_rem, "rem"},
                                   {InjectedFault::brev_off_by_one, "brev"},
                                   {InjectedFault::cvt_truncation, "cvt"},
                                   {InjectedFault::predication_leak, "@"}};
  ExecutorConfig ref;
  ref.mode = ExecMode::reference;
  std::string named;
  for (const auto& c : cases) {
    ExecutorConfig a;
    a.mode = ExecMode::functional;
    a.fault = c.fault;
    const DivergenceReport r = compare_runs(m, a, ref);
    const std::string fault = std::string(injected_fault_name(c.fault));
    if (r.level != DivergenceReport::Level::instruction) return {false, fault + ": stopped at level " + std::string(level_name(r.level))};
    // a predication leak shows up on whatever guarded instruction ran
    const bool ok = c.opcode == "@" ? r.instruction_text.starts_with("@") : r.opcode == c.opcode;
    if (!ok) return {false, fault + ": named '" + r.instruction_text + "'"};
    if (!named.empty()) named += ", ";
    named += fault + "->" + r.opcode;
  }
  ExecutorConfig clean;
  if (compare_runs(m, clean, ref).level != DivergenceReport::Level::match) return {false, "clean executor did not match"};
  return {true, named + "; clean executor matches"};
}

}  // namespace gpusim_test
