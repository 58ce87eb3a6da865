#pragma once
// Limited-memory BFGS with optional non-negativity bounds per variable
// (projected two-loop direction on the free set, projected Armijo search).

#include <functional>
#include <vector>

namespace mucald {

struct LbfgsOptions {
  int max_iters = 300;
  int memory = 10;
  double pgtol = 1e-7;   // stop when the projected gradient inf-norm falls below
  double ftol = 1e-14;   // or when the relative decrease stalls
};

struct LbfgsResult {
  double value = 0.0;
  int iterations = 0;
};

// `fg` returns f(x) and writes the gradient into its second argument.
// Variables with nonneg[i] == true are constrained to [0, inf).
LbfgsResult minimize_lbfgs(const std::function<double(const std::vector<double>&,
                                                      std::vector<double>&)>& fg,
                           std::vector<double>& x, const std::vector<bool>& nonneg,
                           const LbfgsOptions& opts = {});

}  // namespace mucald
