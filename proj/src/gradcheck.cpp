#include "mucald/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "mucald/errors.hpp"

namespace mucald {

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (!std::isfinite(analytic[i])) return std::numeric_limits<double>::infinity();
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(std::max(na, nn));
  if (denom < 1e-12) return std::sqrt(diff) < 1e-10 ? 0.0 : std::sqrt(diff) / 1e-12;
  return std::sqrt(diff) / denom;
}

std::vector<GradProbe> param_probes(const std::vector<ParamRef>& params) {
  std::vector<GradProbe> probes;
  for (const auto& p : params) {
    p.tensor->ensure_grad();
    probes.push_back({p.name, p.tensor->values(),
                      std::vector<double>(p.tensor->grad().begin(), p.tensor->grad().end())});
  }
  return probes;
}

GradCheckReport check_gradients(const std::function<double()>& loss,
                                std::vector<GradProbe>& probes, double eps,
                                std::size_t max_entries) {
  if (eps < 1e-8 || eps > 1e-4) throw ConfigError("grad_check.eps must lie in [1e-8, 1e-4]");
  GradCheckReport report;
  for (auto& probe : probes) {
    const std::size_t n = probe.values.size();
    const std::size_t stride =
        (max_entries == 0 || n <= max_entries) ? 1 : (n + max_entries - 1) / max_entries;
    std::vector<double> analytic, numeric;
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = probe.values[i];
      probe.values[i] = saved + eps;
      const double lp = loss();
      probe.values[i] = saved - eps;
      const double lm = loss();
      probe.values[i] = saved;
      numeric.push_back((lp - lm) / (2.0 * eps));
      analytic.push_back(probe.analytic[i]);
    }
    const double err = relative_error(analytic, numeric);
    if (report.worst.empty() || err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst = probe.name;
    }
  }
  return report;
}

double grad_check(const std::function<Tensor(const Tensor&)>& forward,
                  const std::function<Tensor(const Tensor&)>& backward,
                  const std::vector<ParamRef>& params, const Tensor& probe, double eps,
                  std::size_t max_entries) {
  Tensor x = probe;
  Tensor y = forward(x);
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor weights(y.shape());
  for (double& w : weights.values()) w = dist(rng);

  for (const auto& p : params) {
    p.tensor->ensure_grad();
    p.tensor->zero_grad();
  }
  Tensor dx = backward(weights);

  std::vector<GradProbe> probes;
  probes.push_back({"input", x.values(), dx.storage()});
  for (const auto& p : params) {
    probes.push_back({p.name, p.tensor->values(),
                      std::vector<double>(p.tensor->grad().begin(), p.tensor->grad().end())});
  }
  auto loss = [&]() {
    Tensor out = forward(x);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += weights[i] * out[i];
    return s;
  };
  const double err = check_gradients(loss, probes, eps, max_entries).max_relative_error;
  for (const auto& p : params) p.tensor->zero_grad();
  return err;
}

double grad_check(Layer& layer, const Tensor& probe, double eps, std::size_t max_entries) {
  return grad_check([&](const Tensor& x) { return layer.forward(x); },
                    [&](const Tensor& g) { return layer.backward(g); }, layer.parameters(),
                    probe, eps, max_entries);
}

}  // namespace mucald
