#include "gpusim/runtime/streams.hpp"

#include <algorithm>

#include "gpusim/core/fault.hpp"

namespace gpusim {

std::string_view command_kind_name(CommandKind k) {
  switch (k) {
    case CommandKind::memcpy: return "memcpy";
    case CommandKind::launch: return "launch";
    case CommandKind::record: return "record_event";
    case CommandKind::wait: return "wait_event";
  }
  return "?";
}

uint64_t StreamScheduler::enqueue(uint32_t stream, CommandKind kind, std::string event, size_t payload) {
  StreamCommand c;
  c.seq = next_seq_++;
  c.stream = stream;
  c.kind = kind;
  c.event = std::move(event);
  c.payload = payload;
  if (kind == CommandKind::wait) {
    if (auto it = last_record_.find(c.event); it != last_record_.end()) c.waits_for = it->second;
    else unbound_[c.event].push_back(c.seq);
  } else if (kind == CommandKind::record) {
    last_record_[c.event] = c.seq;
    record_done_[c.seq] = false;
    // earlier waits on a never-recorded event take this record
    if (auto it = unbound_.find(c.event); it != unbound_.end()) {
      for (uint64_t w : it->second)
        for (auto& [s, q] : queues_)
          for (auto& cmd : q)
            if (cmd.seq == w) cmd.waits_for = c.seq;
      unbound_.erase(it);
    }
  }
  queues_[stream].push_back(std::move(c));
  return next_seq_ - 1;
}

bool StreamScheduler::idle() const {
  for (const auto& [s, q] : queues_)
    if (!q.empty()) return false;
  return true;
}

void StreamScheduler::drain(const Executor& exec) {
  while (true) {
    std::deque<StreamCommand>* best = nullptr;
    bool pending = false;
    for (auto& [s, q] : queues_) {
      if (q.empty()) continue;
      pending = true;
      const StreamCommand& head = q.front();
      if (head.kind == CommandKind::wait && (!head.waits_for || !record_done_.at(*head.waits_for))) continue;
      if (!best || head.seq < best->front().seq) best = &q;
    }
    if (!pending) return;
    if (!best) {
      std::string report = "stream deadlock: no queued command can make progress\n";
      for (const auto& [s, q] : queues_) {
        if (q.empty()) continue;
        const StreamCommand& h = q.front();
        report += "  stream " + std::to_string(s) + ": " + std::string(command_kind_name(h.kind)) + " '" + h.event + "' (command " +
                  std::to_string(h.seq) + ") ";
        report += h.waits_for ? "waits for record command " + std::to_string(*h.waits_for) : "waits for a record never issued";
        report += ", " + std::to_string(q.size()) + " queued\n";
      }
      throw DeadlockError(report);
    }
    const StreamCommand cmd = best->front();
    exec(cmd);  // may throw; the command stays queued
    best->pop_front();
    if (cmd.kind == CommandKind::record) record_done_[cmd.seq] = true;
    log_.push_back({cmd.seq, cmd.stream, cmd.kind, cmd.event, cmd.waits_for});
  }
}

StreamScheduler::State StreamScheduler::state() const {
  State s;
  s.next_seq = next_seq_;
  for (const auto& [id, q] : queues_)
    for (const auto& c : q) s.pending.push_back(c);
  std::sort(s.pending.begin(), s.pending.end(), [](const auto& a, const auto& b) { return a.seq < b.seq; });
  s.last_record = last_record_;
  s.unbound = unbound_;
  s.completed = log_.size();
  return s;
}

}  // namespace gpusim
