#include "gpusim/stats/timeline.hpp"

#include <cstdio>
#include <fstream>

#include "gpusim/error.hpp"

namespace gpusim {

namespace {

void put_varint(std::vector<uint8_t>& out, uint64_t v) {
  while (v >= 0x80) {
    out.push_back(static_cast<uint8_t>(v | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<uint8_t>(v));
}

uint64_t get_varint(std::span<const uint8_t> in, size_t& pos) {
  uint64_t v = 0;
  for (int shift = 0; shift < 64; shift += 7) {
    if (pos >= in.size()) throw Error("timeline stream truncated");
    const uint8_t b = in[pos++];
    v |= uint64_t{b & 0x7Fu} << shift;
    if (!(b & 0x80)) return v;
  }
  throw Error("timeline varint too long");
}

constexpr uint32_t kMagic = 0x4C4D4954;  // "TIML"

}  // namespace

uint64_t StatSample::global_ipc() const {
  uint64_t s = 0;
  for (uint32_t c : per_shader) s += c;
  return s;
}

Timeline::Timeline(TimelineShape shape) : shape_(shape) {}

void Timeline::record(const StatSample& s) {
  if (count_ > 0 && s.cycle <= last_)
    throw RangeError("sample cycle " + std::to_string(s.cycle) + " is not after " + std::to_string(last_));
  if (s.per_shader.size() != shape_.n_cores || s.per_bank.size() != shape_.n_banks)
    throw Error("sample shape does not match the timeline");
  uint64_t slots = 0;
  for (uint32_t b : s.breakdown) slots += b;
  if (slots != uint64_t{shape_.n_cores} * shape_.issue_width)
    throw Error("issue breakdown sums to " + std::to_string(slots) + " at cycle " + std::to_string(s.cycle));
  for (uint32_t c : s.per_shader)
    if (c > shape_.issue_width) throw Error("core committed more than issue_width at cycle " + std::to_string(s.cycle));

  put_varint(bytes_, count_ == 0 ? s.cycle : s.cycle - last_ - 1);
  auto sparse = [&](size_t n, auto nonzero, auto emit) {
    size_t k = 0;
    for (size_t i = 0; i < n; ++i) k += nonzero(i);
    put_varint(bytes_, k);
    size_t prev = 0;
    for (size_t i = 0; i < n; ++i)
      if (nonzero(i)) {
        put_varint(bytes_, i - prev);
        prev = i;
        emit(i);
      }
  };
  sparse(s.per_shader.size(), [&](size_t i) { return s.per_shader[i] != 0; }, [&](size_t i) { put_varint(bytes_, s.per_shader[i]); });
  sparse(
      s.per_bank.size(), [&](size_t i) { const auto& b = s.per_bank[i]; return b.reads || b.writes || b.pending; },
      [&](size_t i) {
        put_varint(bytes_, uint64_t{s.per_bank[i].reads} << 1 | s.per_bank[i].pending);
        put_varint(bytes_, s.per_bank[i].writes);
      });
  // W0 is implied by the slot total
  sparse(kIssueClasses - 1, [&](size_t i) { return s.breakdown[i + 1] != 0; }, [&](size_t i) { put_varint(bytes_, s.breakdown[i + 1]); });

  if (count_ == 0) first_ = s.cycle;
  last_ = s.cycle;
  ++count_;
  committed_ += s.global_ipc();
}

void Timeline::for_each(const std::function<void(const StatSample&)>& fn) const {
  StatSample s;
  s.per_shader.assign(shape_.n_cores, 0);
  s.per_bank.assign(shape_.n_banks, {});
  const uint64_t slots = uint64_t{shape_.n_cores} * shape_.issue_width;
  size_t pos = 0;
  std::span<const uint8_t> in(bytes_);
  for (uint64_t n = 0; n < count_; ++n) {
    const uint64_t d = get_varint(in, pos);
    s.cycle = n == 0 ? d : s.cycle + d + 1;
    std::fill(s.per_shader.begin(), s.per_shader.end(), 0);
    std::fill(s.per_bank.begin(), s.per_bank.end(), BankCounters{});
    s.breakdown.fill(0);
    auto sparse = [&](size_t limit, auto take) {
      const uint64_t k = get_varint(in, pos);
      size_t idx = 0;
      for (uint64_t j = 0; j < k; ++j) {
        idx += get_varint(in, pos);
        if (idx >= limit) throw Error("timeline index out of range");
        take(idx);
      }
    };
    sparse(s.per_shader.size(), [&](size_t i) { s.per_shader[i] = static_cast<uint32_t>(get_varint(in, pos)); });
    sparse(s.per_bank.size(), [&](size_t i) {
      const uint64_t rp = get_varint(in, pos);
      s.per_bank[i] = {static_cast<uint32_t>(rp >> 1), static_cast<uint32_t>(get_varint(in, pos)), (rp & 1) != 0};
    });
    sparse(kIssueClasses - 1, [&](size_t i) { s.breakdown[i + 1] = static_cast<uint32_t>(get_varint(in, pos)); });
    uint64_t used = 0;
    for (size_t k = 1; k < kIssueClasses; ++k) used += s.breakdown[k];
    s.breakdown[0] = static_cast<uint32_t>(slots - used);
    fn(s);
  }
}

std::vector<uint8_t> Timeline::serialize() const {
  std::vector<uint8_t> out;
  put_varint(out, kMagic);
  for (uint64_t v : {uint64_t{shape_.n_cores}, uint64_t{shape_.n_banks}, uint64_t{shape_.issue_width}, count_, first_, last_, committed_,
                     uint64_t{bytes_.size()}})
    put_varint(out, v);
  out.insert(out.end(), bytes_.begin(), bytes_.end());
  return out;
}

Timeline Timeline::deserialize(std::span<const uint8_t> in) {
  size_t pos = 0;
  if (get_varint(in, pos) != kMagic) throw Error("not a timeline file");
  TimelineShape shape;
  shape.n_cores = static_cast<uint32_t>(get_varint(in, pos));
  shape.n_banks = static_cast<uint32_t>(get_varint(in, pos));
  shape.issue_width = static_cast<uint32_t>(get_varint(in, pos));
  Timeline t(shape);
  t.count_ = get_varint(in, pos);
  t.first_ = get_varint(in, pos);
  t.last_ = get_varint(in, pos);
  t.committed_ = get_varint(in, pos);
  const uint64_t n = get_varint(in, pos);
  if (in.size() - pos != n) throw Error("timeline payload length mismatch");
  t.bytes_.assign(in.begin() + static_cast<std::ptrdiff_t>(pos), in.end());
  return t;
}

double dram_efficiency(uint64_t commands, uint64_t pending_cycles) {
  return pending_cycles == 0 ? 0.0 : 2.0 * static_cast<double>(commands) / static_cast<double>(pending_cycles);
}

double dram_utilization(uint64_t commands, uint64_t total_cycles) {
  return total_cycles == 0 ? 0.0 : 2.0 * static_cast<double>(commands) / static_cast<double>(total_cycles);
}

ViewTables aggregate(const Timeline& t, uint64_t window) {
  if (window == 0) throw ConfigError("window must be at least 1 cycle");
  if (t.empty()) throw ConfigError("timeline is empty");
  const TimelineShape& sh = t.shape();
  const uint64_t span = t.last_cycle() - t.first_cycle() + 1;
  const uint64_t nw = (span + window - 1) / window;
  ViewTables v;
  v.window_end.resize(nw);
  v.window_len.resize(nw);
  for (uint64_t w = 0; w < nw; ++w) {
    v.window_end[w] = std::min(t.first_cycle() + (w + 1) * window - 1, t.last_cycle());
    v.window_len[w] = v.window_end[w] - (t.first_cycle() + w * window) + 1;
  }
  // raw sums first, divided once at the end
  std::vector<uint64_t> committed(nw, 0);
  std::vector<std::vector<uint64_t>> core(sh.n_cores, std::vector<uint64_t>(nw, 0));
  std::vector<std::vector<uint64_t>> cmds(sh.n_banks, std::vector<uint64_t>(nw, 0));
  std::vector<std::vector<uint64_t>> pend(sh.n_banks, std::vector<uint64_t>(nw, 0));
  std::vector<std::vector<uint64_t>> cls(kIssueClasses, std::vector<uint64_t>(nw, 0));
  std::vector<uint64_t> seen(nw, 0);
  t.for_each([&](const StatSample& s) {
    const uint64_t w = (s.cycle - t.first_cycle()) / window;
    ++seen[w];
    for (uint32_t c = 0; c < sh.n_cores; ++c) {
      core[c][w] += s.per_shader[c];
      committed[w] += s.per_shader[c];
    }
    for (uint32_t b = 0; b < sh.n_banks; ++b) {
      cmds[b][w] += s.per_bank[b].reads + s.per_bank[b].writes;
      pend[b][w] += s.per_bank[b].pending;
    }
    for (size_t k = 0; k < kIssueClasses; ++k) cls[k][w] += s.breakdown[k];
  });
  // cycles with no sample were idle: every slot is W0
  const uint64_t slots = uint64_t{sh.n_cores} * sh.issue_width;
  for (uint64_t w = 0; w < nw; ++w) cls[0][w] += (v.window_len[w] - seen[w]) * slots;

  auto per_cycle = [&](uint64_t x, uint64_t w) { return static_cast<double>(x) / static_cast<double>(v.window_len[w]); };
  v.gipc.resize(nw);
  v.sipc.assign(sh.n_cores, std::vector<double>(nw));
  v.dram_eff.assign(sh.n_banks, std::vector<double>(nw));
  v.dram_util.assign(sh.n_banks, std::vector<double>(nw));
  v.breakdown.assign(kIssueClasses, std::vector<double>(nw));
  for (uint64_t w = 0; w < nw; ++w) {
    v.gipc[w] = per_cycle(committed[w], w);
    for (uint32_t c = 0; c < sh.n_cores; ++c) v.sipc[c][w] = per_cycle(core[c][w], w);
    for (uint32_t b = 0; b < sh.n_banks; ++b) {
      v.dram_eff[b][w] = dram_efficiency(cmds[b][w], pend[b][w]);
      v.dram_util[b][w] = dram_utilization(cmds[b][w], v.window_len[w]);
    }
    for (size_t k = 0; k < kIssueClasses; ++k) v.breakdown[k][w] = per_cycle(cls[k][w], w);
  }
  return v;
}

namespace {

std::string cell(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

void write_table(const std::filesystem::path& p, const std::string& corner, const std::vector<uint64_t>& ends,
                 const std::vector<std::string>& labels, const std::vector<const std::vector<double>*>& rows) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + p.string());
  out << corner;
  for (uint64_t e : ends) out << ',' << e;
  out << '\n';
  for (size_t r = 0; r < rows.size(); ++r) {
    out << labels[r];
    for (double x : *rows[r]) out << ',' << cell(x);
    out << '\n';
  }
  if (!out) throw ConfigError("cannot write " + p.string());
}

}  // namespace

void export_views(const Timeline& t, uint64_t window, const std::filesystem::path& out_dir) {
  const ViewTables v = aggregate(t, window);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw ConfigError("cannot create " + out_dir.string() + ": " + ec.message());

  write_table(out_dir / "gipc.csv", "metric", v.window_end, {"gipc"}, {&v.gipc});

  std::vector<std::string> labels;
  std::vector<const std::vector<double>*> rows;
  for (size_t c = 0; c < v.sipc.size(); ++c) {
    labels.push_back("shader" + std::to_string(c));
    rows.push_back(&v.sipc[c]);
  }
  write_table(out_dir / "sipc.csv", "shader", v.window_end, labels, rows);

  labels.clear();
  rows.clear();
  for (size_t b = 0; b < v.dram_eff.size(); ++b) {
    labels.push_back("bank" + std::to_string(b));
    rows.push_back(&v.dram_eff[b]);
  }
  write_table(out_dir / "dram_eff.csv", "bank", v.window_end, labels, rows);
  for (size_t b = 0; b < v.dram_util.size(); ++b) rows[b] = &v.dram_util[b];
  write_table(out_dir / "dram_util.csv", "bank", v.window_end, labels, rows);

  labels.clear();
  rows.clear();
  for (size_t k = 0; k < kIssueClasses; ++k) {
    labels.push_back("W" + std::to_string(k));
    rows.push_back(&v.breakdown[k]);
  }
  write_table(out_dir / "warp_breakdown.csv", "class", v.window_end, labels, rows);
}

}  // namespace gpusim
