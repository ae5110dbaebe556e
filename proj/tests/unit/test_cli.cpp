#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "corpus.hpp"
#include "gpusim/cli/cli.hpp"

using namespace gpusim;
using gpusim_test::corpus_path;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("gpusim_cli_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int cli(std::vector<std::string> args) { return run_cli(args); }

std::string slurp(const fs::path& p) { return gpusim_test::read_text(p.string()); }

// every regular file under dir, relative path -> contents
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

}  // namespace

TEST_CASE("run: success, check failure, deadlocks") {
  const fs::path out = scratch("run");
  CHECK(cli({"run", "--manifest", corpus_path("vecadd.manifest"), "--out", (out / "ok").string()}) == kExitOk);
  CHECK(fs::exists(out / "ok" / "dumps" / "c.bin"));
  const auto inv = nlohmann::json::parse(slurp(out / "ok" / "invocation.json"));
  CHECK(inv.at("command") == "run");
  CHECK(inv.at("exit_code") == 0);
  CHECK(inv.at("manifest_sha256").get<std::string>().size() == 64);

  CHECK(cli({"run", "--manifest", corpus_path("vecadd_bad.manifest"), "--out", (out / "bad").string()}) == kExitCheckFailed);
  CHECK(cli({"run", "--manifest", corpus_path("circular_wait.manifest"), "--out", (out / "cw").string()}) == kExitDeadlock);
  CHECK(cli({"run", "--manifest", corpus_path("barrier_deadlock.manifest"), "--out", (out / "bd").string()}) == kExitDeadlock);
  CHECK(nlohmann::json::parse(slurp(out / "cw" / "invocation.json")).at("exit_code") == kExitDeadlock);
}

TEST_CASE("run: machine fault and usage errors") {
  const fs::path out = scratch("fault");
  // 64 threads over 16-float buffers
  std::ofstream(out / "oob.manifest") << "load_module va " << corpus_path("vecadd.ptx") << "\n"
                                      << "alloc a 64\nalloc b 64\nalloc c 64\n"
                                      << "launch va vec_add grid=1,1,1 block=64,1,1 args=a,b,c,u32:64\nsync\n";
  CHECK(cli({"run", "--manifest", (out / "oob.manifest").string(), "--out", (out / "o").string()}) == kExitMachineFault);
  CHECK(cli({"run", "--manifest", (out / "oob.manifest").string(), "--mode", "reference", "--out", (out / "r").string()}) ==
        kExitMachineFault);

  CHECK(cli({"run", "--out", (out / "x").string()}) == kExitUsage);
  CHECK(cli({"run", "--manifest", (out / "missing.manifest").string()}) == kExitUsage);
  CHECK(cli({"run", "--manifest", corpus_path("vecadd.manifest"), "--mode", "turbo", "--out", (out / "y").string()}) ==
        kExitUsage);
  CHECK(cli({"frobnicate"}) == kExitUsage);
  CHECK(cli({}) == kExitUsage);
  std::ofstream(out / "bad.manifest") << "alloc a\n";
  CHECK(cli({"run", "--manifest", (out / "bad.manifest").string(), "--out", (out / "z").string()}) == kExitUsage);
  std::ofstream(out / "cfg.json") << R"({"n_cores": 0})";
  CHECK(cli({"run", "--manifest", corpus_path("vecadd.manifest"), "--mode", "performance", "--config",
             (out / "cfg.json").string(), "--out", (out / "w").string()}) == kExitUsage);
}

TEST_CASE("performance run writes the five views, stats re-exports them") {
  const fs::path out = scratch("perf");
  REQUIRE(cli({"run", "--manifest", corpus_path("conv.manifest"), "--mode", "performance", "--window", "250", "--out",
               (out / "p").string()}) == kExitOk);
  for (const char* f : {"gipc.csv", "sipc.csv", "dram_eff.csv", "dram_util.csv", "warp_breakdown.csv", "timeline.bin"})
    CHECK(fs::exists(out / "p" / "stats" / f));
  REQUIRE(cli({"stats", "--timeline", (out / "p" / "stats" / "timeline.bin").string(), "--window", "250", "--out",
               (out / "s").string()}) == kExitOk);
  for (const char* f : {"gipc.csv", "sipc.csv", "dram_eff.csv", "dram_util.csv", "warp_breakdown.csv"})
    CHECK(slurp(out / "p" / "stats" / f) == slurp(out / "s" / "stats" / f));
}

TEST_CASE("checkpoint and resume through the command line") {
  const fs::path out = scratch("ck");
  REQUIRE(cli({"run", "--manifest", corpus_path("vecadd.manifest"), "--checkpoint", "x=1,M=1,t=0,y=0", "--out",
               (out / "a").string()}) == kExitOk);
  const fs::path bundle = out / "a" / "bundle.psck";
  REQUIRE(fs::exists(bundle));
  CHECK(cli({"resume", "--resume", bundle.string(), "--manifest", corpus_path("vecadd.manifest"), "--mode", "performance",
             "--out", (out / "b").string()}) == kExitOk);
  CHECK(fs::exists(out / "b" / "stats" / "gipc.csv"));

  REQUIRE(cli({"run", "--manifest", corpus_path("conv.manifest"), "--checkpoint", "3,5,2,17", "--out", (out / "c").string()}) ==
          kExitOk);
  REQUIRE(cli({"run", "--manifest", corpus_path("conv.manifest"), "--out", (out / "straight").string()}) == kExitOk);
  REQUIRE(cli({"resume", "--resume", (out / "c" / "bundle.psck").string(), "--manifest", corpus_path("conv.manifest"), "--out",
               (out / "d").string()}) == kExitOk);
  CHECK(tree(out / "d" / "dumps") == tree(out / "straight" / "dumps"));

  CHECK(cli({"run", "--manifest", corpus_path("conv.manifest"), "--checkpoint", "9,1,0,0", "--out", (out / "e").string()}) ==
        kExitCheckpoint);
  CHECK(cli({"resume", "--resume", bundle.string(), "--manifest", corpus_path("conv.manifest"), "--out",
             (out / "f").string()}) == kExitCheckpoint);
  std::string bytes = slurp(bundle);
  bytes[bytes.size() / 2] ^= 0x10;
  std::ofstream(out / "corrupt.psck", std::ios::binary) << bytes;
  CHECK(cli({"resume", "--resume", (out / "corrupt.psck").string(), "--manifest", corpus_path("vecadd.manifest"), "--out",
             (out / "g").string()}) == kExitCheckpoint);
}

TEST_CASE("diff writes a report and exits by outcome") {
  const fs::path out = scratch("diff");
  CHECK(cli({"diff", "--manifest", corpus_path("faults.manifest"), "--exec-a", "functional+brev_off_by_one", "--exec-b",
             "reference", "--out", (out / "a").string()}) == kExitDivergence);
  CHECK(slurp(out / "a" / "report.txt").find("brev.b32") != std::string::npos);
  CHECK(nlohmann::json::parse(slurp(out / "a" / "report.json")).at("opcode") == "brev");
  CHECK(cli({"diff", "--manifest", corpus_path("faults.manifest"), "--exec-a", "functional", "--exec-b", "reference", "--out",
             (out / "b").string()}) == kExitOk);
  CHECK(slurp(out / "b" / "report.txt").find("match") != std::string::npos);
  CHECK(cli({"diff", "--manifest", corpus_path("faults.manifest"), "--exec-a", "hardware", "--exec-b", "reference", "--out",
             (out / "c").string()}) == kExitUsage);
  CHECK(cli({"diff", "--manifest", corpus_path("faults.manifest"), "--exec-b", "reference", "--out", (out / "d").string()}) ==
        kExitUsage);
}

TEST_CASE("instrument, extract and generate") {
  const fs::path out = scratch("tools");
  CHECK(cli({"instrument", "--manifest", corpus_path("vecadd.manifest"), "--kernel", "1", "--out", (out / "i").string()}) ==
        kExitOk);
  const auto log = slurp(out / "i" / "logs" / "launch_1_vec_add.log");
  CHECK(!log.empty());
  CHECK(log.size() % 20 == 0);

  REQUIRE(cli({"extract", "--manifest", corpus_path("conv.manifest"), "--call", "2", "--kernel", "1", "--out",
               (out / "x").string()}) == kExitOk);
  CHECK(cli({"run", "--manifest", (out / "x" / "harness.manifest").string(), "--out", (out / "xr").string()}) == kExitOk);
  CHECK(cli({"extract", "--manifest", corpus_path("double_ptr.manifest"), "--call", "-1", "--kernel", "1", "--out",
             (out / "dp").string()}) == kExitUsage);

  REQUIRE(cli({"generate", "--seed", "4", "--manifest", "vecadd.ptx", "--out", (out / "g1").string()}) == kExitOk);
  REQUIRE(cli({"generate", "--seed", "4", "--manifest", "vecadd.ptx", "--out", (out / "g2").string()}) == kExitOk);
  CHECK(slurp(out / "g1" / "streams_4.manifest") == slurp(out / "g2" / "streams_4.manifest"));
}

TEST_CASE("replaying an invocation reproduces its outputs byte for byte") {
  const fs::path out = scratch("replay");
  for (const std::vector<std::string>& args :
       {std::vector<std::string>{"run", "--manifest", corpus_path("conv.manifest"), "--mode", "performance"},
        std::vector<std::string>{"run", "--manifest", corpus_path("textures.manifest")},
        std::vector<std::string>{"diff", "--manifest", corpus_path("faults.manifest"), "--exec-a", "functional+cvt_truncation",
                                 "--exec-b", "reference"}}) {
    auto first = args;
    first.push_back("--out");
    first.push_back((out / "first").string());
    const int code = cli(first);
    CHECK(cli({"replay", "--invocation", (out / "first" / "invocation.json").string(), "--out", (out / "again").string()}) ==
          code);
    auto a = tree(out / "first"), b = tree(out / "again");
    const auto ia = nlohmann::json::parse(a.at("invocation.json")), ib = nlohmann::json::parse(b.at("invocation.json"));
    a.erase("invocation.json");
    b.erase("invocation.json");
    CHECK(a == b);
    CHECK(ia.at("exit_code") == ib.at("exit_code"));
    CHECK(ia.at("manifest_sha256") == ib.at("manifest_sha256"));
    fs::remove_all(out / "first");
    fs::remove_all(out / "again");
  }
}
