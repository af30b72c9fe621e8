#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace procrisk {

struct CriterionResult {
  int id = 0;
  std::string title;
  bool passed = false;
  std::string detail;  // deterministic measurements
  double seconds = 0.0;
};

inline constexpr int kCriterionCount = 12;

/// Criteria 1-11. Criterion 12 (byte-identical suite reports) needs two
/// process runs and is checked by the caller.
CriterionResult run_criterion(int id, std::uint64_t seed, unsigned workers = 1);
std::vector<CriterionResult> run_acceptance(std::uint64_t seed, unsigned workers = 1);

}  // namespace procrisk
