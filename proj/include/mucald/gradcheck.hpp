#pragma once
// Central finite-difference validation of analytic gradients.
//
// Errors are normwise: ||analytic - numeric||_2 / max(||analytic||_2,
// ||numeric||_2), evaluated per probed tensor and maximised. A backward pass
// with a flipped sign therefore scores exactly 2.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mucald/nn.hpp"

namespace mucald {

// A tensor whose entries are perturbed, paired with the analytic gradient of
// the scalar loss with respect to it.
struct GradProbe {
  std::string name;
  std::span<double> values;
  std::vector<double> analytic;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst;  // probe name with the largest error
};

// `loss` must be a pure function of the probed values. At most `max_entries`
// entries per probe are perturbed (evenly strided) to bound runtime;
// 0 means all.
GradCheckReport check_gradients(const std::function<double()>& loss,
                                std::vector<GradProbe>& probes, double eps,
                                std::size_t max_entries = 0);

// Layer-level check: loss = sum_i r_i * layer(probe)_i with fixed pseudo-random
// weights r. Compares input and parameter gradients.
double grad_check(Layer& layer, const Tensor& probe, double eps = 1e-6,
                  std::size_t max_entries = 0);

// Generic form over separate forward/backward callables and parameter list.
double grad_check(const std::function<Tensor(const Tensor&)>& forward,
                  const std::function<Tensor(const Tensor&)>& backward,
                  const std::vector<ParamRef>& params, const Tensor& probe,
                  double eps = 1e-6, std::size_t max_entries = 0);

// One probe per parameter, using the gradients currently accumulated on it.
std::vector<GradProbe> param_probes(const std::vector<ParamRef>& params);

double relative_error(std::span<const double> analytic, std::span<const double> numeric);

}  // namespace mucald
