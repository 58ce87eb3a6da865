#include "mucald/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace mucald {
namespace {

double dotv(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

LbfgsResult minimize_lbfgs(
    const std::function<double(const std::vector<double>&, std::vector<double>&)>& fg,
    std::vector<double>& x, const std::vector<bool>& nonneg, const LbfgsOptions& opts) {
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i)
    if (nonneg[i] && x[i] < 0.0) x[i] = 0.0;

  std::vector<double> g(n), g_new(n), d(n), x_new(n);
  double f = fg(x, g);
  std::deque<std::vector<double>> s_hist, y_hist;
  std::deque<double> rho_hist;
  LbfgsResult res;

  auto is_active = [&](std::size_t i, const std::vector<double>& grad) {
    return nonneg[i] && x[i] <= 0.0 && grad[i] > 0.0;
  };

  for (int it = 0; it < opts.max_iters; ++it) {
    double pg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double step = nonneg[i] ? std::max(x[i] - g[i], 0.0) - x[i] : -g[i];
      pg = std::max(pg, std::abs(step));
    }
    if (pg < opts.pgtol) break;

    // Two-loop recursion restricted to the free variables.
    for (std::size_t i = 0; i < n; ++i) d[i] = is_active(i, g) ? 0.0 : -g[i];
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      double a = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (!is_active(i, g)) a += s_hist[k][i] * d[i];
      a *= rho_hist[k];
      alpha[k] = a;
      for (std::size_t i = 0; i < n; ++i)
        if (!is_active(i, g)) d[i] -= a * y_hist[k][i];
    }
    if (!s_hist.empty()) {
      const double gamma = dotv(s_hist.back(), y_hist.back()) /
                           dotv(y_hist.back(), y_hist.back());
      for (double& v : d) v *= gamma;
    }
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      double b = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (!is_active(i, g)) b += y_hist[k][i] * d[i];
      b *= rho_hist[k];
      for (std::size_t i = 0; i < n; ++i)
        if (!is_active(i, g)) d[i] += s_hist[k][i] * (alpha[k] - b);
    }
    for (std::size_t i = 0; i < n; ++i)
      if (is_active(i, g)) d[i] = 0.0;

    double gd = dotv(g, d);
    if (!(gd < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      for (std::size_t i = 0; i < n; ++i) d[i] = is_active(i, g) ? 0.0 : -g[i];
      gd = dotv(g, d);
      if (!(gd < 0.0)) break;
    }

    // First iteration without curvature: scale to a unit-length trial step.
    double t = 1.0;
    if (s_hist.empty()) {
      const double dn = std::sqrt(dotv(d, d));
      if (dn > 0.0) t = std::min(1.0, 1.0 / dn);
    }
    double f_new = f;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t i = 0; i < n; ++i) {
        x_new[i] = x[i] + t * d[i];
        if (nonneg[i] && x_new[i] < 0.0) x_new[i] = 0.0;
      }
      f_new = fg(x_new, g_new);
      double decrease = 0.0;
      for (std::size_t i = 0; i < n; ++i) decrease += g[i] * (x_new[i] - x[i]);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * decrease) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;

    std::vector<double> s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = x_new[i] - x[i];
      y[i] = g_new[i] - g[i];
    }
    const double sy = dotv(s, y);
    if (sy > 1e-12 * std::max(1.0, dotv(y, y))) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opts.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    const double rel = (f - f_new) / std::max({std::abs(f), std::abs(f_new), 1.0});
    x.swap(x_new);
    g.swap(g_new);
    f = f_new;
    res.iterations = it + 1;
    if (rel <= opts.ftol) break;
  }
  res.value = f;
  return res;
}

}  // namespace mucald
