#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace gpusim {

enum class CommandKind : uint8_t { memcpy, launch, record, wait };

std::string_view command_kind_name(CommandKind k);

// A queued stream command. `seq` is the global issue number (logical
// timestamp); `payload` indexes whatever the owner keeps per command.
struct StreamCommand {
  uint64_t seq = 0;
  uint32_t stream = 0;
  CommandKind kind = CommandKind::memcpy;
  std::string event;
  std::optional<uint64_t> waits_for;  // seq of the record a wait is bound to
  size_t payload = 0;

  friend bool operator==(const StreamCommand&, const StreamCommand&) = default;
};

struct Completion {
  uint64_t seq = 0;
  uint32_t stream = 0;
  CommandKind kind = CommandKind::memcpy;
  std::string event;
  std::optional<uint64_t> waited_on;
  friend bool operator==(const Completion&, const Completion&) = default;
};

// Streams and events with lazy execution. Commands queue until drain();
// then the ready stream head with the smallest sequence number runs,
// repeatedly. A wait binds at issue time to the latest record of its event
// issued before it, or, if the event was never recorded, to the next record
// issued afterwards. It is ready once that record has completed.
class StreamScheduler {
 public:
  using Executor = std::function<void(const StreamCommand&)>;

  uint64_t enqueue(uint32_t stream, CommandKind kind, std::string event = {}, size_t payload = 0);

  // Runs everything queued. Throws DeadlockError naming the blocked
  // streams when pending commands can make no progress.
  void drain(const Executor& exec);

  bool idle() const;
  const std::vector<Completion>& completions() const { return log_; }

  // Checkpoint support: queue contents and event bookkeeping.
  struct State {
    uint64_t next_seq = 1;
    std::vector<StreamCommand> pending;                       // in issue order
    std::map<std::string, uint64_t> last_record;              // event -> seq of its latest record
    std::map<std::string, std::vector<uint64_t>> unbound;     // event -> waits bound to a future record
    uint64_t completed = 0;
    friend bool operator==(const State&, const State&) = default;
  };
  State state() const;

 private:
  std::map<uint32_t, std::deque<StreamCommand>> queues_;
  std::map<std::string, uint64_t> last_record_;
  std::map<std::string, std::vector<uint64_t>> unbound_;
  std::map<uint64_t, bool> record_done_;
  uint64_t next_seq_ = 1;
  std::vector<Completion> log_;
};

}  // namespace gpusim
