#include "gpusim/ptx/cfg.hpp"

#include <algorithm>
#include <set>

#include "gpusim/error.hpp"

namespace gpusim {

namespace {

bool ends_block(const Instruction& in) {
  return in.opcode == Opcode::bra || in.opcode == Opcode::exit || in.opcode == Opcode::ret;
}

using BitSet = std::vector<bool>;

BitSet intersect(const BitSet& a, const BitSet& b) {
  BitSet r(a.size());
  for (size_t i = 0; i < a.size(); ++i) r[i] = a[i] && b[i];
  return r;
}

}  // namespace

void build_cfg(KernelObject& k) {
  const int n = static_cast<int>(k.instructions.size());
  std::set<int> leaders{0};
  for (int i = 0; i < n; ++i) {
    const auto& in = k.instructions[static_cast<size_t>(i)];
    if (in.opcode == Opcode::bra) {
      if (in.target < 0 || in.target >= n)
        throw StructuralError("kernel '" + k.name + "': branch at " + std::to_string(i) + " has invalid target");
      leaders.insert(in.target);
    }
    if (ends_block(in) && i + 1 < n) leaders.insert(i + 1);
  }

  k.blocks.clear();
  k.block_of.assign(static_cast<size_t>(n), 0);
  std::vector<int> starts(leaders.begin(), leaders.end());
  for (size_t b = 0; b < starts.size(); ++b) {
    BasicBlock bb;
    bb.first = starts[b];
    bb.last = (b + 1 < starts.size() ? starts[b + 1] : n) - 1;
    for (int i = bb.first; i <= bb.last; ++i) k.block_of[static_cast<size_t>(i)] = static_cast<int>(b);
    k.blocks.push_back(bb);
  }

  for (auto& bb : k.blocks) {
    const auto& in = k.instructions[static_cast<size_t>(bb.last)];
    const bool guarded = in.guard.has_value();
    auto fallthrough = [&]() {
      if (bb.last + 1 >= n)
        throw StructuralError("kernel '" + k.name + "': control falls off the end after instruction " +
                              std::to_string(bb.last));
      return k.block_of[static_cast<size_t>(bb.last + 1)];
    };
    if (in.opcode == Opcode::bra) {
      bb.succs.push_back(k.block_of[static_cast<size_t>(in.target)]);
      if (guarded) bb.succs.push_back(fallthrough());
    } else if (in.opcode == Opcode::exit || in.opcode == Opcode::ret) {
      bb.succs.push_back(kExitBlock);
      if (guarded) bb.succs.push_back(fallthrough());
    } else {
      bb.succs.push_back(fallthrough());
    }
    std::sort(bb.succs.begin(), bb.succs.end());
    bb.succs.erase(std::unique(bb.succs.begin(), bb.succs.end()), bb.succs.end());
  }
}

void compute_ipdom(KernelObject& k) {
  build_cfg(k);
  const int nb = static_cast<int>(k.blocks.size());
  const int exit_node = nb;
  auto node = [&](int s) { return s == kExitBlock ? exit_node : s; };

  // reachability from entry
  std::vector<bool> reachable(static_cast<size_t>(nb), false);
  std::vector<int> stack{0};
  reachable[0] = true;
  while (!stack.empty()) {
    const int b = stack.back();
    stack.pop_back();
    for (int s : k.blocks[static_cast<size_t>(b)].succs)
      if (s != kExitBlock && !reachable[static_cast<size_t>(s)]) {
        reachable[static_cast<size_t>(s)] = true;
        stack.push_back(s);
      }
  }

  // every reachable block must be able to reach the exit
  std::vector<std::vector<int>> preds(static_cast<size_t>(nb + 1));
  for (int b = 0; b < nb; ++b)
    for (int s : k.blocks[static_cast<size_t>(b)].succs) preds[static_cast<size_t>(node(s))].push_back(b);
  std::vector<bool> reaches_exit(static_cast<size_t>(nb + 1), false);
  reaches_exit[static_cast<size_t>(exit_node)] = true;
  stack = {exit_node};
  while (!stack.empty()) {
    const int b = stack.back();
    stack.pop_back();
    for (int p : preds[static_cast<size_t>(b)])
      if (!reaches_exit[static_cast<size_t>(p)]) {
        reaches_exit[static_cast<size_t>(p)] = true;
        stack.push_back(p);
      }
  }
  for (int b = 0; b < nb; ++b)
    if (reachable[static_cast<size_t>(b)] && !reaches_exit[static_cast<size_t>(b)])
      throw StructuralError("kernel '" + k.name + "': block at instruction " +
                            std::to_string(k.blocks[static_cast<size_t>(b)].first) + " cannot reach an exit");

  // Reducibility: with back edges (targets dominating their source) removed,
  // the reachable graph must be acyclic.
  std::vector<BitSet> dom(static_cast<size_t>(nb), BitSet(static_cast<size_t>(nb), true));
  dom[0] = BitSet(static_cast<size_t>(nb), false);
  dom[0][0] = true;
  for (bool changed = true; changed;) {
    changed = false;
    for (int b = 1; b < nb; ++b) {
      if (!reachable[static_cast<size_t>(b)]) continue;
      BitSet d(static_cast<size_t>(nb), true);
      bool any = false;
      for (int p : preds[static_cast<size_t>(b)]) {
        if (!reachable[static_cast<size_t>(p)]) continue;
        d = intersect(d, dom[static_cast<size_t>(p)]);
        any = true;
      }
      if (!any) d.assign(static_cast<size_t>(nb), false);
      d[static_cast<size_t>(b)] = true;
      if (d != dom[static_cast<size_t>(b)]) {
        dom[static_cast<size_t>(b)] = std::move(d);
        changed = true;
      }
    }
  }
  {
    std::vector<int> color(static_cast<size_t>(nb), 0);  // 0 white, 1 grey, 2 black
    std::vector<std::pair<int, size_t>> dfs{{0, 0}};
    color[0] = 1;
    while (!dfs.empty()) {
      auto& [b, i] = dfs.back();
      const auto& succs = k.blocks[static_cast<size_t>(b)].succs;
      if (i == succs.size()) {
        color[static_cast<size_t>(b)] = 2;
        dfs.pop_back();
        continue;
      }
      const int s = succs[i++];
      if (s == kExitBlock) continue;
      if (dom[static_cast<size_t>(b)][static_cast<size_t>(s)]) continue;  // back edge
      if (color[static_cast<size_t>(s)] == 1)
        throw StructuralError("kernel '" + k.name + "': irreducible control flow at instruction " +
                              std::to_string(k.blocks[static_cast<size_t>(s)].first));
      if (color[static_cast<size_t>(s)] == 0) {
        color[static_cast<size_t>(s)] = 1;
        dfs.emplace_back(s, 0);
      }
    }
  }

  // post-dominator sets over blocks + virtual exit
  const size_t total = static_cast<size_t>(nb + 1);
  std::vector<BitSet> pdom(total, BitSet(total, true));
  pdom[static_cast<size_t>(exit_node)] = BitSet(total, false);
  pdom[static_cast<size_t>(exit_node)][static_cast<size_t>(exit_node)] = true;
  for (bool changed = true; changed;) {
    changed = false;
    for (int b = nb - 1; b >= 0; --b) {
      if (!reaches_exit[static_cast<size_t>(b)]) continue;
      BitSet d(total, true);
      for (int s : k.blocks[static_cast<size_t>(b)].succs) d = intersect(d, pdom[static_cast<size_t>(node(s))]);
      d[static_cast<size_t>(b)] = true;
      if (d != pdom[static_cast<size_t>(b)]) {
        pdom[static_cast<size_t>(b)] = std::move(d);
        changed = true;
      }
    }
  }

  k.ipdom.clear();
  k.reconv_pc.assign(k.instructions.size(), kNoReconvergence);
  for (int b = 0; b < nb; ++b) {
    const auto& bb = k.blocks[static_cast<size_t>(b)];
    if (bb.succs.size() < 2 || !reaches_exit[static_cast<size_t>(b)]) continue;
    BitSet strict = pdom[static_cast<size_t>(b)];
    strict[static_cast<size_t>(b)] = false;
    int ip = -2;
    for (size_t d = 0; d < total; ++d)
      if (strict[d] && pdom[d] == strict) {
        ip = static_cast<int>(d);
        break;
      }
    if (ip == -2) throw StructuralError("kernel '" + k.name + "': no immediate post-dominator");
    k.ipdom[b] = ip == exit_node ? kExitBlock : ip;
    k.reconv_pc[static_cast<size_t>(bb.last)] =
        ip == exit_node ? kNoReconvergence : k.blocks[static_cast<size_t>(ip)].first;
  }
}

KernelObject with_ipdom(KernelObject kernel) {
  compute_ipdom(kernel);
  return kernel;
}

}  // namespace gpusim
