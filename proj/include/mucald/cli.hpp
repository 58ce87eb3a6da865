#pragma once
// Command-line front end. Commands: run, discover-graph, attack, grad-check,
// metrics-oracle, report.
//
// Exit codes: 0 success, 1 a validation suite found a violation, 2 usage,
// configuration, data or missing-artifact error, 3 run aborted mid-training.

#include <iosfwd>
#include <string>
#include <vector>

#include "mucald/tensor.hpp"

namespace mucald {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitAbort = 3;

// `args` excludes the program name.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Numeric CSV, one sample per row. A first row with no numeric cell is taken
// as column names. Throws DataError naming the 1-based line of the first bad
// row; fewer than 2 columns or no data rows is also an error.
Tensor read_feature_csv(std::istream& in, std::vector<std::string>* names);

}  // namespace mucald
