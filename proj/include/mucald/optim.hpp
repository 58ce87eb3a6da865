#pragma once

#include <cstdint>
#include <vector>

#include "mucald/nn.hpp"

namespace mucald {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// One bias-corrected Adam update over `params`; gradients are zeroed after.
// Throws NumericError naming the parameter if any gradient is non-finite.
void adam_step(const std::vector<ParamRef>& params, OptimizerState& state);

// Convenience owner of a parameter list and its optimizer state.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<ParamRef> params, AdamConfig config = {});

  void step() { adam_step(params_, state_); }
  void zero_grad() { zero_grads(params_); }
  const OptimizerState& state() const { return state_; }
  const std::vector<ParamRef>& params() const { return params_; }

 private:
  std::vector<ParamRef> params_;
  OptimizerState state_;
};

}  // namespace mucald
