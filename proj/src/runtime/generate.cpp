#include "gpusim/runtime/generate.hpp"

#include <random>
#include <sstream>
#include <vector>

namespace gpusim {

std::string random_stream_manifest(uint64_t seed, const std::string& vecadd_ptx, unsigned ops) {
  std::mt19937_64 rng(seed);
  auto pick = [&](uint64_t n) { return rng() % n; };
  constexpr unsigned kBuffers = 6, kElems = 256;
  const unsigned streams = 2 + static_cast<unsigned>(pick(3));

  std::ostringstream os;
  os << "# generated, seed " << seed << "\n";
  os << "load_module va " << vecadd_ptx << "\n";
  for (unsigned b = 0; b < kBuffers; ++b) {
    os << "alloc buf" << b << " " << kElems * 4 << "\n";
    os << "init buf" << b << " pattern iota f32 " << b << " 0.5\n";
  }
  std::vector<std::string> recorded;
  unsigned events = 0;
  for (unsigned i = 0; i < ops; ++i) {
    const unsigned s = static_cast<unsigned>(pick(streams));
    switch (pick(20)) {
      case 0:
      case 1:
      case 2:
      case 3:
      case 4:
      case 5: {
        os << "launch va vec_add grid=2,1,1 block=128,1,1 args=buf" << pick(kBuffers) << ",buf" << pick(kBuffers) << ",buf"
           << pick(kBuffers) << ",u32:" << kElems << " stream=" << s << "\n";
        break;
      }
      case 6:
      case 7:
      case 8:
      case 9: {
        // distinct buffers: overlapping device copies are rejected
        const uint64_t len = 4 * (1 + pick(kElems / 2));
        const uint64_t src = pick(kBuffers), dst = (src + 1 + pick(kBuffers - 1)) % kBuffers;
        os << "memcpy d2d buf" << src << "+" << 4 * pick(kElems / 2) << " buf" << dst << "+" << 4 * pick(kElems / 2) << " "
           << len << " stream=" << s << "\n";
        break;
      }
      case 10:
      case 11:
      case 12:
      case 13: {
        // sometimes re-record an old event so waits bind to the latest one
        std::string e = (!recorded.empty() && pick(3) == 0) ? recorded[pick(recorded.size())] : "e" + std::to_string(events++);
        os << "record_event " << e << " " << s << "\n";
        recorded.push_back(e);
        break;
      }
      case 14:
      case 15:
      case 16:
      case 17:
      case 18: {
        if (recorded.empty()) break;
        os << "wait_event " << recorded[pick(recorded.size())] << " " << s << "\n";
        break;
      }
      default:
        os << "sync\n";
    }
  }
  os << "sync\n";
  return os.str();
}

}  // namespace gpusim
