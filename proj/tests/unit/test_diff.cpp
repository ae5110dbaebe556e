#include <doctest.h>

#include <filesystem>
#include <map>

#include "criteria.hpp"
#include "gpusim/diff/diff.hpp"
#include "gpusim/error.hpp"
#include "rig.hpp"
#include <json.hpp>

using namespace gpusim;
namespace fs = std::filesystem;

namespace {

const char* kStraight = R"(.version 6.0
.target sm_61
.address_size 64

.visible .entry three(.param .u64 out)
{
    .reg .u32 %r<4>;
    mov.u32 %r1, 7;
    add.u32 %r2, %r1, 1;
    mul.lo.u32 %r3, %r2, 2;
    exit;
}

.visible .entry guarded(.param .u64 out)
{
    .reg .u32 %r<4>;
    .reg .pred %p<2>;
    .reg .u64 %rd<2>;
    mov.u32 %r1, %tid.x;
    setp.eq.u32 %p1, %r1, 0;
    @%p1 mov.u32 %r2, 5;
    @!%p1 mov.u32 %r3, 6;
    exit;
}
)";

fs::path fresh_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("gpusim_diff_" + tag);
  fs::remove_all(p);
  return p;
}

ExecutorConfig mode(ExecMode m, InjectedFault f = InjectedFault::none) {
  ExecutorConfig e;
  e.mode = m;
  e.fault = f;
  return e;
}

}  // namespace

TEST_CASE("log records use the 20-byte wire format") {
  const LogRecord r{0x01020304, 17, 3, 5, 0x1122334455667788ull};
  std::array<uint8_t, kLogRecordBytes> buf{};
  encode_log_record(r, buf);
  CHECK(buf[0] == 0x04);
  CHECK(buf[4] == 17);
  CHECK(buf[8] == 3);
  CHECK(buf[10] == 5);
  CHECK(buf[12] == 0x88);
  CHECK(decode_log_record(buf) == r);
  const std::vector<LogRecord> many = {r, {1, 2, 3, 4, 5}};
  const auto file = log_records_file(many);
  CHECK(file.size() == 40);
  CHECK(parse_log_records_file(file) == many);
}

TEST_CASE("three register writes in one thread give three records in order") {
  gpusim_test::Rig rig(kStraight);
  rig.buffer("out", 16);
  const KernelEnv env = rig.env("three", {1, 1, 1}, {1, 1, 1}, {std::string("out")});
  for (ExecMode m : {ExecMode::functional, ExecMode::reference, ExecMode::performance}) {
    const auto run = run_instrumented(mode(m), env, rig.mem);
    REQUIRE(run.log.size() == 3);
    CHECK(run.log[0].instruction == 0);
    CHECK(run.log[0].bits == 7);
    CHECK(run.log[1].bits == 8);
    CHECK(run.log[2].bits == 16);
    CHECK(!run.fault);
    CHECK(run.memory == rig.mem);
  }
}

TEST_CASE("predicated-off instructions leave no record") {
  gpusim_test::Rig rig(kStraight);
  rig.buffer("out", 16);
  const KernelEnv env = rig.env("guarded", {1, 1, 1}, {4, 1, 1}, {std::string("out")});
  const auto run = run_instrumented(mode(ExecMode::functional), env, rig.mem);
  // per thread: mov, setp, then exactly one of the two guarded movs
  CHECK(run.log.size() == 4 * 3);
  std::map<uint32_t, std::vector<uint32_t>> per_thread;
  for (const auto& r : run.log) per_thread[r.thread].push_back(r.instruction);
  CHECK(per_thread[0] == std::vector<uint32_t>{0, 1, 2});
  for (uint32_t t = 1; t < 4; ++t) CHECK(per_thread[t] == std::vector<uint32_t>{0, 1, 3});
}

TEST_CASE("capacity below the bound is rejected") {
  gpusim_test::Rig rig(kStraight);
  const KernelObject& k = rig.module.kernels.at("three");
  const uint64_t bound = log_capacity_bound(k, 32, 4);
  CHECK(bound >= 32 * 3);
  CHECK_THROWS_AS(instrument(k, 32, 4, static_cast<uint32_t>(bound - 1)), ConfigError);
  const auto ik = instrument(k, 32, 4, static_cast<uint32_t>(bound));
  CHECK(ik.kernel.params.size() == k.params.size() + 1);
  CHECK(ik.log_param_offset % 8 == 0);
}

TEST_CASE("instrumentation is transparent on every corpus kernel, logs keep program order") {
  size_t kernels = 0;
  for (const auto& name : gpusim_test::runnable_manifests()) {
    const Manifest m = gpusim_test::corpus_manifest(name);
    ExecutorConfig e;
    Session s(m, e);
    s.hooks.before_launch = [&](Session& ss, LaunchContext& ctx) {
      CAPTURE(name);
      CAPTURE(ctx.kernel->name);
      const DeviceMemory pre = ss.memory();
      DeviceMemory plain = pre;
      KernelEnv env = ctx.env;
      env.global = &plain;
      run_kernel_with(e, env);
      const auto a = run_instrumented(mode(ExecMode::functional), ctx.env, pre);
      const auto b = run_instrumented(mode(ExecMode::reference), ctx.env, pre);
      CHECK(a.memory == plain);
      CHECK(b.memory == plain);
      // same per-thread sequences whatever the interleaving
      std::map<uint32_t, std::vector<LogRecord>> ta, tb;
      for (const auto& r : a.log) ta[r.thread].push_back(r);
      for (const auto& r : b.log) tb[r.thread].push_back(r);
      CHECK(ta == tb);
      ++kernels;
      return false;
    };
    s.run();
  }
  CHECK(kernels >= 20);
}

TEST_CASE("executor specs") {
  CHECK(parse_executor("functional").mode == ExecMode::functional);
  const auto e = parse_executor("functional+bfe_sign_fill");
  CHECK(e.fault == InjectedFault::bfe_sign_fill);
  CHECK(executor_name(e) == "functional+bfe_sign_fill");
  CHECK_THROWS_AS(parse_executor("gpu"), ConfigError);
  CHECK_THROWS_AS(parse_executor("functional+nothing"), ConfigError);
}

TEST_CASE("each injected fault is localized to its instruction class") {
  const auto v = gpusim_test::diff_localization();
  INFO(v.detail);
  CHECK(v.pass);
}

TEST_CASE("bfe report carries the sign bits") {
  const Manifest m = gpusim_test::corpus_manifest("faults");
  const auto r = compare_runs(m, mode(ExecMode::functional, InjectedFault::bfe_sign_fill), mode(ExecMode::reference));
  REQUIRE(r.level == DivergenceReport::Level::instruction);
  CHECK(r.instruction_text.find("bfe.s32") != std::string::npos);
  REQUIRE(r.expected);
  REQUIRE(r.actual);
  // the reference sign-extends, the broken executor doesn't: they differ in the high bits only
  const uint64_t diff = r.expected->bits ^ r.actual->bits;
  CHECK(diff != 0);
  CHECK((diff & 0xFF) == 0);
  const auto j = nlohmann::json::parse(r.json());
  CHECK(j.at("level") == "instruction");
  CHECK(j.at("opcode") == "bfe");
  CHECK(r.text().find("bfe.s32") != std::string::npos);
}

TEST_CASE("a rem on high-bit operands is where union-style rem shows") {
  const Manifest m = gpusim_test::corpus_manifest("faults");
  const auto r = compare_runs(m, mode(ExecMode::functional, InjectedFault::union_rem), mode(ExecMode::reference));
  CHECK(r.opcode == "rem");
  CHECK(r.call_name == "rem");
}

TEST_CASE("identical executors match, invalid workloads are config errors") {
  const Manifest conv = gpusim_test::corpus_manifest("conv");
  CHECK(compare_runs(conv, mode(ExecMode::functional), mode(ExecMode::reference)).level == DivergenceReport::Level::match);
  CHECK(compare_runs(conv, mode(ExecMode::performance), mode(ExecMode::functional_serial)).level ==
        DivergenceReport::Level::match);
  const Manifest dl = gpusim_test::corpus_manifest("barrier_deadlock");
  CHECK_THROWS_AS(compare_runs(dl, mode(ExecMode::functional), mode(ExecMode::reference)), ConfigError);
}

TEST_CASE("a fault in a later call is found at that call") {
  const Manifest m = gpusim_test::corpus_manifest("faults");
  const auto r = compare_runs(m, mode(ExecMode::functional, InjectedFault::cvt_truncation), mode(ExecMode::reference));
  CHECK(r.call == 3);
  CHECK(r.kernel == "fault_cvt");
  CHECK(r.kernel_ordinal == 4);
}

TEST_CASE("extracted kernel replays its outputs in isolation") {
  const Manifest conv = gpusim_test::corpus_manifest("conv");
  for (uint64_t k : {1u, 2u}) {
    CAPTURE(k);
    const fs::path dir = fresh_dir("conv" + std::to_string(k));
    const fs::path p = extract_kernel_harness(conv, 0, k, dir);
    const Manifest h = load_manifest(p);
    size_t launches = 0, checks = 0;
    for (const auto& d : h.directives) {
      launches += std::holds_alternative<Launch>(d.body);
      checks += std::holds_alternative<Check>(d.body);
    }
    CHECK(launches == 1);
    CHECK(checks >= 1);
    for (ExecMode m : {ExecMode::functional, ExecMode::reference}) {
      Session s(h, mode(m));
      s.run();
      CHECK(s.checks_passed());
    }
    fs::remove_all(dir);
  }
}

TEST_CASE("extracting the only kernel of a workload") {
  const Manifest v = gpusim_test::corpus_manifest("vecadd");
  const fs::path dir = fresh_dir("vecadd");
  const Manifest h = load_manifest(extract_kernel_harness(v, 0, 1, dir));
  Session s(h, mode(ExecMode::functional));
  s.run();
  CHECK(s.checks_passed());
  const auto orig = gpusim_test::run_outcome(v, ExecMode::functional);
  CHECK(s.buffer_bytes("c") == orig.device.at("c"));
  fs::remove_all(dir);
}

TEST_CASE("extraction limits") {
  const fs::path dir = fresh_dir("limits");
  CHECK_THROWS_AS(extract_kernel_harness(gpusim_test::corpus_manifest("double_ptr"), -1, 1, dir), CaptureError);
  CHECK_THROWS_AS(extract_kernel_harness(gpusim_test::corpus_manifest("conv"), 0, 9, dir), RangeError);
  CHECK_THROWS_AS(extract_kernel_harness(gpusim_test::corpus_manifest("conv"), 7, 1, dir), RangeError);
  fs::remove_all(dir);
}
