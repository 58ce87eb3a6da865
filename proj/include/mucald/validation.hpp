#pragma once
// Built-in validation suites: finite-difference gradient checks over every
// layer and composite model, and brute-force cross-checks of the metrics.

#include <cstdint>
#include <string>
#include <vector>

namespace mucald {

struct CheckResult {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool pass() const { return error < tolerance; }
};

inline constexpr double kGradTolerance = 1e-5;
inline constexpr double kOracleTolerance = 1e-9;

// Layers, CRDM end to end, the DACA dual path and the composite objective on a
// 2-client 8x8 micro configuration.
std::vector<CheckResult> grad_check_suite(std::uint64_t seed);

// Every segmentation and reconstruction metric against direct brute-force
// evaluation on `cases` random 16x16 inputs; error is the largest |delta|.
std::vector<CheckResult> metrics_oracle_suite(std::uint64_t seed, std::size_t cases = 20);

bool all_pass(const std::vector<CheckResult>& results);

// Fixed-width table, one row per check.
std::string format_results(const std::vector<CheckResult>& results);

}  // namespace mucald
