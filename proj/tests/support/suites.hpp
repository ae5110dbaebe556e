#pragma once

// Randomized oracle comparisons shared by the unit tests and the
// acceptance runner.

#include <cstdint>
#include <string>

namespace gpusim_test {

struct SuiteResult {
  uint64_t cases = 0;
  uint64_t failures = 0;
  std::string first_failure;

  bool ok() const { return cases > 0 && failures == 0; }
  void fail(std::string what) {
    if (failures++ == 0) first_failure = std::move(what);
  }
};

SuiteResult bfe_suite(const char* type, uint64_t n, uint64_t seed);
SuiteResult brev_suite(const char* type, uint64_t n, uint64_t seed);
SuiteResult rem_suite(const char* type, uint64_t n, uint64_t seed);
// f32->f16 rounding, exhaustive f16->f32, and integer narrowing/widening.
SuiteResult cvt_suite(uint64_t n, uint64_t seed);

}  // namespace gpusim_test
