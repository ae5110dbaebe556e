#include <doctest.h>

#include <functional>
#include <set>

#include "corpus.hpp"
#include "gpusim/error.hpp"
#include "gpusim/ptx/cfg.hpp"
#include "gpusim/ptx/parser.hpp"

using namespace gpusim;

namespace {

const char* kHeader = ".version 6.0\n.target sm_61\n.address_size 64\n";

std::string with_header(const std::string& body) { return kHeader + body; }

const char* kDiamond = R"(
.visible .entry diamond(.param .u64 out)
{
  .reg .u32 %r<4>;
  .reg .pred %p<2>;
  .reg .u64 %rd<4>;
  mov.u32 %r1, %tid.x;
  setp.lt.u32 %p1, %r1, 16;
  @%p1 bra THEN;
  mov.u32 %r2, 7;
  bra.uni JOIN;
THEN:
  mov.u32 %r2, 9;
JOIN:
  ld.param.u64 %rd1, [out];
  mul.wide.u32 %rd2, %r1, 4;
  add.u64 %rd3, %rd1, %rd2;
  st.global.u32 [%rd3], %r2;
  exit;
}
)";

const char* kLoop = R"(
.visible .entry loop(.param .u64 out)
{
  .reg .u32 %r<4>;
  .reg .pred %p<2>;
  .reg .u64 %rd<2>;
  mov.u32 %r1, 0;
  mov.u32 %r2, 0;
HEAD:
  add.u32 %r2, %r2, %r1;
  add.u32 %r1, %r1, 1;
  setp.lt.u32 %p1, %r1, 10;
  @%p1 bra HEAD;
  ld.param.u64 %rd1, [out];
  st.global.u32 [%rd1], %r2;
  exit;
}
)";

// Post-dominance by brute force: d post-dominates b iff deleting d cuts
// every path from b to the exit.
std::map<int, int> brute_force_ipdom(const KernelObject& k) {
  const int nb = static_cast<int>(k.blocks.size());
  auto reaches_exit_without = [&](int from, int removed) {
    std::set<int> seen;
    std::function<bool(int)> go = [&](int b) -> bool {
      if (b == kExitBlock) return true;
      if (b == removed || seen.contains(b)) return false;
      seen.insert(b);
      for (int s : k.blocks[static_cast<size_t>(b)].succs)
        if (go(s)) return true;
      return false;
    };
    return go(from);
  };
  auto postdoms = [&](int b) {
    std::set<int> p;
    for (int d = 0; d < nb; ++d)
      if (d != b && !reaches_exit_without(b, d)) p.insert(d);
    return p;
  };
  std::map<int, int> out;
  for (int b = 0; b < nb; ++b) {
    if (k.blocks[static_cast<size_t>(b)].succs.size() < 2) continue;
    const auto p = postdoms(b);
    int ip = kExitBlock;
    for (int d : p) {
      // the closest one is post-dominated by all the others
      const auto pd = postdoms(d);
      bool closest = true;
      for (int e : p)
        if (e != d && !pd.contains(e)) closest = false;
      if (closest) ip = d;
    }
    out[b] = ip;
  }
  return out;
}

}  // namespace

TEST_CASE("smallest legal kernel") {
  const auto m = parse_module(with_header(".visible .entry k()\n{\n  exit;\n}\n"), "min.ptx");
  REQUIRE(m.kernels.size() == 1);
  const KernelObject& k = m.kernels.at("k");
  CHECK(k.instructions.size() == 1);
  CHECK(k.instructions[0].opcode == Opcode::exit);
  CHECK(k.ipdom.empty());
  CHECK(m.module_id == "min.ptx");
}

TEST_CASE("same kernel name in two modules") {
  const std::string a = with_header(".visible .entry k(.param .u32 x)\n{\n  exit;\n}\n");
  const std::string b = with_header(".visible .entry k()\n{\n  ret;\n}\n.global .u32 k_data;\n");
  PtxModule ma = parse_module(a, "a.ptx");
  const PtxModule mb = parse_module(b, "b.ptx");
  REQUIRE(ma.find_kernel("k"));
  REQUIRE(mb.find_kernel("k"));
  CHECK(ma.find_kernel("k")->params.size() == 1);
  CHECK(mb.find_kernel("k")->params.empty());

  // mutating one module's kernel leaves the other untouched
  const KernelObject before = *mb.find_kernel("k");
  ma.kernels.at("k").instructions[0].opcode = Opcode::ret;
  ma.kernels.at("k").name = "changed";
  CHECK(*mb.find_kernel("k") == before);
}

TEST_CASE("duplicate names within one module are rejected") {
  const std::string src = with_header(".visible .entry k()\n{\n exit;\n}\n.visible .entry k()\n{\n exit;\n}\n");
  CHECK_THROWS_AS(parse_module(src, "dup.ptx"), ParseError);
}

TEST_CASE("brace initializers are reported as unsupported") {
  const std::string src = with_header(".global .align 4 .u32 foo.v4 {1,2,3,4};\n");
  // the canonical form of the construct
  const std::string src2 = with_header(".global .v4 .u32 foo = {1, 2, 3, 4};\n");
  CHECK_THROWS(parse_module(src, "b.ptx"));
  try {
    parse_module(src2, "b2.ptx");
    FAIL("expected an error");
  } catch (const BraceInitializerError& e) {
    CHECK(e.line() == 4);
    CHECK(std::string(e.what()).find("brace") != std::string::npos);
  }
}

TEST_CASE("parse errors carry position and opcode") {
  try {
    parse_module(with_header(".visible .entry k()\n{\n  vote.all.pred %p1, %p2;\n  exit;\n}\n"), "u.ptx");
    FAIL("expected an error");
  } catch (const UnsupportedOpcodeError& e) {
    CHECK(e.opcode() == "vote.all.pred");
    CHECK(e.line() == 6);
    CHECK(e.column() == 3);
  }
  try {
    parse_module(with_header(".visible .entry k()\n{\n  exit\n}\n"), "s.ptx");
    FAIL("expected an error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 7);
  }
  CHECK_THROWS_AS(parse_module(with_header(".visible .entry k()\n{\n .reg .u32 %r1;\n add.u32 %r1, %r1, 1.5;\n exit;\n}\n"), "f.ptx"),
                  ParseError);
  CHECK_THROWS_AS(parse_module(with_header(".visible .entry k()\n{\n add.u32 %r1, %r1, 1;\n exit;\n}\n"), "r.ptx"),
                  ParseError);
}

TEST_CASE("straight-line kernel has no ipdom entries") {
  const auto m = parse_module(with_header(R"(
.visible .entry k(.param .u64 out)
{
  .reg .u64 %rd<2>;
  .reg .u32 %r<2>;
  ld.param.u64 %rd1, [out];
  mov.u32 %r1, 5;
  st.global.u32 [%rd1], %r1;
  exit;
}
)"), "s.ptx");
  CHECK(m.kernels.at("k").ipdom.empty());
  CHECK(m.kernels.at("k").blocks.size() == 1);
}

TEST_CASE("diamond reconverges at the join block") {
  const auto m = parse_module(with_header(kDiamond), "d.ptx");
  const KernelObject& k = m.kernels.at("diamond");
  REQUIRE(k.blocks.size() == 4);
  const auto oracle = brute_force_ipdom(k);
  CHECK(k.ipdom == oracle);
  REQUIRE(k.ipdom.contains(0));
  const int join = k.ipdom.at(0);
  CHECK(k.blocks[static_cast<size_t>(join)].first == k.labels.begin()->first + 1);
  CHECK(k.reconv_pc[2] == k.blocks[static_cast<size_t>(join)].first);
}

TEST_CASE("single-exit loop reconverges at the loop exit") {
  const auto m = parse_module(with_header(kLoop), "l.ptx");
  const KernelObject& k = m.kernels.at("loop");
  const auto oracle = brute_force_ipdom(k);
  CHECK(k.ipdom == oracle);
  const int header = k.block_of[2];
  REQUIRE(k.ipdom.contains(header));
  CHECK(k.blocks[static_cast<size_t>(k.ipdom.at(header))].first == 6);
}

TEST_CASE("structural errors") {
  SUBCASE("no exit on any path") {
    CHECK_THROWS_AS(parse_module(with_header(".visible .entry k()\n{\nL:\n  bra.uni L;\n}\n"), "x.ptx"), StructuralError);
  }
  SUBCASE("falls off the end") {
    CHECK_THROWS_AS(parse_module(with_header(".visible .entry k()\n{\n .reg .u32 %r1;\n mov.u32 %r1, 1;\n}\n"), "x.ptx"),
                    StructuralError);
  }
  SUBCASE("irreducible loop") {
    const char* src = R"(
.visible .entry k()
{
  .reg .pred %p1;
  .reg .u32 %r1;
  mov.u32 %r1, %tid.x;
  setp.eq.u32 %p1, %r1, 0;
  @%p1 bra B;
A:
  @%p1 bra B;
  exit;
B:
  @%p1 bra A;
  exit;
}
)";
    CHECK_THROWS_AS(parse_module(with_header(src), "x.ptx"), StructuralError);
  }
}

TEST_CASE("corpus kernels: ipdom matches brute force, parse is deterministic, print round-trips") {
  const auto files = gpusim_test::corpus_ptx_files();
  size_t kernels = 0;
  for (const auto& f : files) {
    CAPTURE(f);
    const std::string src = gpusim_test::read_text(f);
    const PtxModule m1 = parse_module(src, f);
    const PtxModule m2 = parse_module(src, f);
    CHECK(m1 == m2);
    kernels += m1.kernels.size();
    for (const auto& [name, k] : m1.kernels) {
      CAPTURE(name);
      CHECK(k.ipdom == brute_force_ipdom(k));
      for (const auto& [b, ip] : k.ipdom) CHECK(k.blocks[static_cast<size_t>(b)].succs.size() >= 2);
      for (const auto& in : k.instructions)
        if (in.opcode == Opcode::bra) CHECK((in.target >= 0 && in.target < static_cast<int>(k.instructions.size())));
    }
    const std::string printed = print_module(m1);
    const PtxModule m3 = parse_module(printed, f);
    CHECK(m3 == m1);
    CHECK(print_module(m3) == printed);
  }
  CHECK(kernels >= 20);
}
