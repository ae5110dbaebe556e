#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "criteria.hpp"
#include "gpusim/error.hpp"
#include "gpusim/stats/timeline.hpp"
#include "gpusim/timing/engine.hpp"

using namespace gpusim;

namespace {

StatSample sample(const TimelineShape& sh, uint64_t cycle, std::vector<uint32_t> shaders, std::vector<BankCounters> banks) {
  StatSample s;
  s.cycle = cycle;
  s.per_shader = std::move(shaders);
  s.per_bank = std::move(banks);
  // each committed instruction uses one slot; put them in W32
  uint32_t used = 0;
  for (auto v : s.per_shader) used += v;
  s.breakdown[32] = used;
  s.breakdown[0] = sh.n_cores * sh.issue_width - used;
  return s;
}

// random but valid samples on a sparse cycle axis
Timeline random_timeline(uint64_t seed, TimelineShape sh, int n) {
  std::mt19937_64 rng(seed);
  Timeline t(sh);
  uint64_t cycle = rng() % 5;
  for (int i = 0; i < n; ++i) {
    std::vector<uint32_t> shaders(sh.n_cores);
    for (auto& v : shaders) v = static_cast<uint32_t>(rng() % (sh.issue_width + 1));
    std::vector<BankCounters> banks(sh.n_banks);
    for (auto& b : banks) {
      b.pending = rng() % 2;
      if (b.pending && rng() % 2) (rng() % 2 ? b.reads : b.writes) = 1;
    }
    t.record(sample(sh, cycle, shaders, banks));
    cycle += 1 + (rng() % 4 == 0 ? rng() % 50 : 0);
  }
  return t;
}

}  // namespace

TEST_CASE("timeline rejects samples that break per-cycle invariants") {
  const TimelineShape sh{2, 2, 1};
  Timeline t(sh);
  t.record(sample(sh, 5, {1, 0}, {{}, {}}));
  CHECK_THROWS_AS(t.record(sample(sh, 5, {0, 0}, {{}, {}})), RangeError);
  CHECK_THROWS_AS(t.record(sample(sh, 4, {0, 0}, {{}, {}})), RangeError);
  auto bad = sample(sh, 6, {1, 1}, {{}, {}});
  bad.breakdown[0] += 1;
  CHECK_THROWS(t.record(bad));
  CHECK_THROWS(t.record(sample(sh, 7, {1}, {{}, {}})));
  CHECK_THROWS(t.record(sample(sh, 8, {2, 0}, {{}, {}})));  // over issue width
  CHECK(t.size() == 1);
}

TEST_CASE("timeline round-trips through bytes") {
  const Timeline t = random_timeline(3, {4, 3, 2}, 5000);
  const auto bytes = t.serialize();
  const Timeline back = Timeline::deserialize(bytes);
  CHECK(back == t);
  std::vector<StatSample> a, b;
  t.for_each([&](const StatSample& s) { a.push_back(s); });
  back.for_each([&](const StatSample& s) { b.push_back(s); });
  CHECK(a == b);
  CHECK(a.size() == 5000);
  auto bad = bytes;
  bad.resize(bad.size() / 2);
  CHECK_THROWS(Timeline::deserialize(bad));
}

TEST_CASE("idle cycles are cheap to store") {
  const TimelineShape sh{28, 24, 2};
  Timeline t(sh);
  for (uint64_t c = 0; c < 200000; ++c) t.record(sample(sh, c, std::vector<uint32_t>(28), std::vector<BankCounters>(24)));
  CHECK(t.storage_bytes() < 200000 * 8);
}

TEST_CASE("window aggregates match a direct recount") {
  const TimelineShape sh{3, 2, 2};
  const Timeline t = random_timeline(11, sh, 3000);
  std::vector<StatSample> all;
  t.for_each([&](const StatSample& s) { all.push_back(s); });
  for (uint64_t window : {1ull, 3ull, 64ull, 1000ull}) {
    CAPTURE(window);
    const ViewTables v = aggregate(t, window);
    const uint64_t first = t.first_cycle();
    const size_t nw = (t.last_cycle() - first) / window + 1;
    REQUIRE(v.gipc.size() == nw);
    std::vector<double> committed(nw, 0), w32(nw, 0);
    std::vector<std::vector<double>> cmds(sh.n_banks, std::vector<double>(nw, 0)), pend = cmds;
    for (const auto& s : all) {
      const size_t w = (s.cycle - first) / window;
      for (auto v : s.per_shader) committed[w] += v;
      w32[w] += s.breakdown[32];
      for (size_t b = 0; b < sh.n_banks; ++b) {
        cmds[b][w] += s.per_bank[b].reads + s.per_bank[b].writes;
        pend[b][w] += s.per_bank[b].pending;
      }
    }
    for (size_t w = 0; w < nw; ++w) {
      const uint64_t len = std::min(window, t.last_cycle() + 1 - (first + w * window));
      CHECK(v.window_len[w] == len);
      CHECK(v.window_end[w] == first + w * window + len - 1);
      CHECK(v.gipc[w] == doctest::Approx(committed[w] / double(len)));
      CHECK(v.breakdown[32][w] == doctest::Approx(w32[w] / double(len)));
      double col = 0;
      for (const auto& cls : v.breakdown) col += cls[w];
      // cycles with no sample are idle: every slot counts as W0
      CHECK(col == doctest::Approx(double(sh.n_cores * sh.issue_width)));
      for (size_t b = 0; b < sh.n_banks; ++b) {
        CHECK(v.dram_util[b][w] == doctest::Approx(2 * cmds[b][w] / double(len)));
        CHECK(v.dram_eff[b][w] == doctest::Approx(pend[b][w] ? 2 * cmds[b][w] / pend[b][w] : 0.0));
      }
    }
  }
  CHECK_THROWS_AS(aggregate(t, 0), ConfigError);
}

TEST_CASE("dram efficiency and utilization formulas") {
  CHECK(dram_efficiency(5, 10) == 1.0);
  CHECK(dram_efficiency(0, 0) == 0.0);
  CHECK(dram_utilization(5, 20) == 0.5);
  CHECK(dram_utilization(1, 0) == 0.0);
}

TEST_CASE("exported views have the five files and matching headers") {
  const Timeline t = random_timeline(5, {2, 2, 1}, 400);
  const auto dir = std::filesystem::temp_directory_path() / "gpusim_views_test";
  std::filesystem::remove_all(dir);
  export_views(t, 50, dir);
  for (const char* f : {"gipc.csv", "sipc.csv", "dram_eff.csv", "dram_util.csv", "warp_breakdown.csv"})
    CHECK(std::filesystem::exists(dir / f));
  std::filesystem::remove_all(dir);
}

TEST_CASE("timing config parsing") {
  const TimingConfig c = parse_timing_config(R"({"n_cores": 4, "latency": {"alu": 7}, "n_banks": 8})");
  CHECK(c.n_cores == 4);
  CHECK(c.lat_alu == 7);
  CHECK(c.n_banks == 8);
  CHECK(parse_timing_config(timing_config_json(c)) == c);
  CHECK_THROWS_AS(parse_timing_config(R"({"n_cores": 0})"), ConfigError);
  CHECK_THROWS_AS(parse_timing_config(R"({"warp_size": 64})"), ConfigError);
  CHECK_THROWS_AS(parse_timing_config("{"), ConfigError);
}

TEST_CASE("performance runs are deterministic and agree with functional memory") {
  for (const auto& name : gpusim_test::runnable_manifests()) {
    CAPTURE(name);
    const Manifest m = gpusim_test::corpus_manifest(name);
    ExecutorConfig e;
    e.mode = ExecMode::performance;
    Session a(m, e), b(m, e);
    a.run();
    b.run();
    CHECK(a.timeline() == b.timeline());
    CHECK(a.engine().cycle() == b.engine().cycle());
    const auto f = gpusim_test::run_outcome(m, ExecMode::functional);
    CHECK(gpusim_test::first_mismatch(f, gpusim_test::outcome_of(a)) == "");
    CHECK(a.timeline().total_committed() == f.committed);
  }
}

TEST_CASE("a smaller machine takes longer but computes the same") {
  const Manifest m = gpusim_test::corpus_manifest("conv");
  ExecutorConfig big, small;
  big.mode = small.mode = ExecMode::performance;
  small.timing.n_cores = 2;
  small.timing.issue_width = 1;
  Session a(m, big), b(m, small);
  a.run();
  b.run();
  CHECK(b.engine().cycle() > a.engine().cycle());
  CHECK(gpusim_test::outcome_of(a) == gpusim_test::outcome_of(b));
}

TEST_CASE("strided kernel camps on one bank, unit stride spreads") {
  const auto camp = gpusim_test::bank_utilization("camp");
  const auto flat = gpusim_test::bank_utilization("unit_stride");
  const auto hot = std::max_element(camp.begin(), camp.end());
  CHECK(*hot > 0.5);
  for (auto it = camp.begin(); it != camp.end(); ++it)
    if (it != hot) CHECK(*it * 10 <= *hot);
  const auto [lo, hi] = std::minmax_element(flat.begin(), flat.end());
  CHECK(*lo > 0);
  CHECK(*hi <= 2 * *lo);
}

TEST_CASE("stats invariants over the corpus") {
  const auto v = gpusim_test::stats_invariants();
  INFO(v.detail);
  CHECK(v.pass);
}
