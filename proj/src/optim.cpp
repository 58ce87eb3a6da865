#include "mucald/optim.hpp"

#include <cmath>

#include "mucald/errors.hpp"

namespace mucald {

void adam_step(const std::vector<ParamRef>& params, OptimizerState& state) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = *params[i].tensor;
    t.ensure_grad();
    for (double g : t.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient in parameter '" + params[i].name + "'");
      }
    }
    if (state.m[i].size() != t.size()) {
      state.m[i].assign(t.size(), 0.0);
      state.v[i].assign(t.size(), 0.0);
    }
  }

  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].tensor;
    auto g = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
      g[j] = 0.0;
    }
  }
}

Adam::Adam(std::vector<ParamRef> params, AdamConfig config) : params_(std::move(params)) {
  state_.config = config;
  for (auto& p : params_) p.tensor->ensure_grad();
}

}  // namespace mucald
