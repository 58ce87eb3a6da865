#include "mucald/causal_discovery.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <memory>
#include <queue>
#include <random>

#include "json.hpp"
#include "mucald/errors.hpp"
#include "mucald/kernels.hpp"
#include "mucald/lbfgs.hpp"

namespace mucald {
namespace {

constexpr std::size_t kMaxExpDim = 64;
constexpr int kTaylorTerms = 16;
// Gradient assigned to pinned variables so the projection keeps them at 0.
constexpr double kPinnedGradient = 1.0;

void require_square(const Tensor& m, const char* who) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1)) {
    throw DimensionError(std::string(who) + ": square matrix required, got " +
                         shape_str(m.shape()));
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0);
  Tensor c({n, n});
  kernels::gemm_nn(n, n, n, a.data(), n, b.data(), n, c.data(), n);
  return c;
}

double one_norm(const Tensor& m) {
  const std::size_t n = m.dim(0);
  double best = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < n; ++i) col += std::abs(m.at(i, j));
    best = std::max(best, col);
  }
  return best;
}

Tensor hadamard_square(const Tensor& w) {
  Tensor s(w.shape());
  for (std::size_t i = 0; i < w.size(); ++i) s[i] = w[i] * w[i];
  return s;
}

// h and dh/dA for the adjacency-of-squares A (A = W o W in the linear case).
double h_from_squares(const Tensor& a, Tensor* dh_da) {
  Tensor e = matrix_exp(a);
  const std::size_t d = a.dim(0);
  double tr = 0.0;
  for (std::size_t i = 0; i < d; ++i) tr += e.at(i, i);
  if (dh_da) {
    *dh_da = Tensor({d, d});
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) dh_da->at(i, j) = e.at(j, i);
  }
  return tr - static_cast<double>(d);
}

Tensor centered(const Tensor& x) {
  Tensor c = x;
  const std::size_t n = x.dim(0), d = x.dim(1);
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += x.at(i, j);
    m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) c.at(i, j) -= m;
  }
  return c;
}

// ------------------------------------------------------------ problems

// Interface shared by the linear and MLP score functions: a flat parameter
// vector, its bounds, the adjacency it implies and the smooth objective.
class NotearsProblem {
 public:
  virtual ~NotearsProblem() = default;
  virtual std::size_t size() const = 0;
  virtual std::vector<bool> nonneg() const = 0;
  virtual std::vector<double> initial(std::mt19937_64& rng) const = 0;
  // Weighted adjacency (non-negative for the MLP variant).
  virtual Tensor adjacency(const std::vector<double>& p) const = 0;
  // Score + L1 + ridge, without the constraint terms. Adds d/dp into grad.
  virtual double score(const std::vector<double>& p, std::vector<double>& grad) const = 0;
  // h(p) and dh/dp added into grad scaled by `scale`.
  virtual double constraint(const std::vector<double>& p, std::vector<double>* grad,
                            double scale) const = 0;
  virtual void pin(std::vector<double>& grad) const = 0;
};

class LinearProblem final : public NotearsProblem {
 public:
  LinearProblem(const Tensor& x, double lambda1)
      : x_(x), n_(x.dim(0)), d_(x.dim(1)), lambda1_(lambda1) {}

  std::size_t size() const override { return 2 * d_ * d_; }
  std::vector<bool> nonneg() const override { return std::vector<bool>(size(), true); }
  std::vector<double> initial(std::mt19937_64&) const override {
    return std::vector<double>(size(), 0.0);
  }

  Tensor adjacency(const std::vector<double>& p) const override {
    Tensor w({d_, d_});
    for (std::size_t i = 0; i < d_ * d_; ++i) w[i] = p[i] - p[d_ * d_ + i];
    return w;
  }

  double score(const std::vector<double>& p, std::vector<double>& grad) const override {
    const Tensor w = adjacency(p);
    // R = X - XW
    Tensor r = x_;
    Tensor xw({n_, d_});
    kernels::gemm_nn(n_, d_, d_, x_.data(), d_, w.data(), d_, xw.data(), d_);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= xw[i];
    double loss = 0.0;
    for (double v : r.values()) loss += v * v;
    loss *= 0.5 / static_cast<double>(n_);
    // dL/dW = -X^T R / n
    Tensor gw({d_, d_});
    kernels::gemm_tn(d_, d_, n_, x_.data(), d_, r.data(), d_, gw.data(), d_);
    const double inv_n = -1.0 / static_cast<double>(n_);
    double l1 = 0.0;
    for (std::size_t i = 0; i < d_ * d_; ++i) {
      grad[i] += gw[i] * inv_n + lambda1_;
      grad[d_ * d_ + i] += -gw[i] * inv_n + lambda1_;
      l1 += p[i] + p[d_ * d_ + i];
    }
    return loss + lambda1_ * l1;
  }

  double constraint(const std::vector<double>& p, std::vector<double>* grad,
                    double scale) const override {
    const Tensor w = adjacency(p);
    Tensor dh_da;
    const double h = h_from_squares(hadamard_square(w), grad ? &dh_da : nullptr);
    if (grad) {
      for (std::size_t i = 0; i < d_ * d_; ++i) {
        const double g = scale * dh_da[i] * 2.0 * w[i];
        (*grad)[i] += g;
        (*grad)[d_ * d_ + i] -= g;
      }
    }
    return h;
  }

  void pin(std::vector<double>& grad) const override {
    for (std::size_t i = 0; i < d_; ++i) {
      grad[i * d_ + i] = kPinnedGradient;
      grad[d_ * d_ + i * d_ + i] = kPinnedGradient;
    }
  }

 private:
  Tensor x_;
  std::size_t n_, d_;
  double lambda1_;
};

// One sigmoid hidden layer of width m per node. Layout of the flat vector:
//   w1_pos [d*m, d] | w1_neg [d*m, d] | b1 [d*m] | v [d, m] | c [d]
// Row (j*m + k) of w1 holds the weights from every input into unit k of
// node j's network; the self-input column j is pinned to zero.
class MlpProblem final : public NotearsProblem {
 public:
  MlpProblem(const Tensor& x, double lambda1, double lambda2, std::size_t hidden)
      : x_(x), n_(x.dim(0)), d_(x.dim(1)), m_(hidden), lambda1_(lambda1), lambda2_(lambda2) {}

  std::size_t w1_size() const { return d_ * m_ * d_; }
  std::size_t off_neg() const { return w1_size(); }
  std::size_t off_b1() const { return 2 * w1_size(); }
  std::size_t off_v() const { return off_b1() + d_ * m_; }
  std::size_t off_c() const { return off_v() + d_ * m_; }
  std::size_t size() const override { return off_c() + d_; }

  std::vector<bool> nonneg() const override {
    std::vector<bool> nn(size(), false);
    std::fill(nn.begin(), nn.begin() + static_cast<std::ptrdiff_t>(2 * w1_size()), true);
    return nn;
  }

  std::vector<double> initial(std::mt19937_64& rng) const override {
    std::vector<double> p(size(), 0.0);
    std::uniform_real_distribution<double> u1(0.0, 1.0 / std::sqrt(static_cast<double>(d_)));
    std::uniform_real_distribution<double> u2(-1.0 / std::sqrt(static_cast<double>(m_)),
                                              1.0 / std::sqrt(static_cast<double>(m_)));
    for (std::size_t i = 0; i < 2 * w1_size(); ++i) p[i] = u1(rng);
    for (std::size_t i = 0; i < d_ * m_; ++i) p[off_v() + i] = u2(rng);
    for (std::size_t j = 0; j < d_; ++j)
      for (std::size_t k = 0; k < m_; ++k) {
        p[(j * m_ + k) * d_ + j] = 0.0;
        p[off_neg() + (j * m_ + k) * d_ + j] = 0.0;
      }
    return p;
  }

  Tensor squares(const std::vector<double>& p) const {
    Tensor a({d_, d_});
    for (std::size_t j = 0; j < d_; ++j)
      for (std::size_t k = 0; k < m_; ++k)
        for (std::size_t i = 0; i < d_; ++i) {
          const std::size_t idx = (j * m_ + k) * d_ + i;
          const double w = p[idx] - p[off_neg() + idx];
          a.at(i, j) += w * w;
        }
    return a;
  }

  Tensor adjacency(const std::vector<double>& p) const override {
    Tensor a = squares(p);
    for (double& v : a.values()) v = std::sqrt(v);
    return a;
  }

  double score(const std::vector<double>& p, std::vector<double>& grad) const override {
    const std::size_t dm = d_ * m_;
    std::vector<double> w1(w1_size());
    for (std::size_t i = 0; i < w1.size(); ++i) w1[i] = p[i] - p[off_neg() + i];

    // A = X W1^T + b1, H = sigmoid(A)
    std::vector<double> h(n_ * dm, 0.0);
    kernels::gemm_nt(n_, dm, d_, x_.data(), d_, w1.data(), d_, h.data(), dm);
    for (std::size_t s = 0; s < n_; ++s)
      for (std::size_t u = 0; u < dm; ++u) {
        const double a = h[s * dm + u] + p[off_b1() + u];
        h[s * dm + u] = 1.0 / (1.0 + std::exp(-a));
      }

    double loss = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n_);
    std::vector<double> da(n_ * dm, 0.0);
    for (std::size_t s = 0; s < n_; ++s) {
      for (std::size_t j = 0; j < d_; ++j) {
        double out = p[off_c() + j];
        const double* hs = h.data() + s * dm + j * m_;
        const double* v = p.data() + off_v() + j * m_;
        for (std::size_t k = 0; k < m_; ++k) out += v[k] * hs[k];
        const double r = out - x_.at(s, j);
        loss += r * r;
        const double gr = r * inv_n;
        grad[off_c() + j] += gr;
        for (std::size_t k = 0; k < m_; ++k) {
          grad[off_v() + j * m_ + k] += gr * hs[k];
          da[s * dm + j * m_ + k] = gr * v[k] * hs[k] * (1.0 - hs[k]);
        }
      }
    }
    loss *= 0.5 * inv_n;

    std::vector<double> gw1(w1_size(), 0.0);
    kernels::gemm_tn(dm, d_, n_, da.data(), dm, x_.data(), d_, gw1.data(), d_);
    for (std::size_t s = 0; s < n_; ++s)
      for (std::size_t u = 0; u < dm; ++u) grad[off_b1() + u] += da[s * dm + u];

    double ridge = 0.0, l1 = 0.0;
    for (std::size_t i = 0; i < w1_size(); ++i) {
      ridge += w1[i] * w1[i];
      l1 += p[i] + p[off_neg() + i];
      const double g = gw1[i] + lambda2_ * w1[i];
      grad[i] += g + lambda1_;
      grad[off_neg() + i] += -g + lambda1_;
    }
    for (std::size_t i = 0; i < dm; ++i) {
      const double v = p[off_v() + i];
      ridge += v * v;
      grad[off_v() + i] += lambda2_ * v;
    }
    return loss + 0.5 * lambda2_ * ridge + lambda1_ * l1;
  }

  double constraint(const std::vector<double>& p, std::vector<double>* grad,
                    double scale) const override {
    Tensor dh_da;
    const double h = h_from_squares(squares(p), grad ? &dh_da : nullptr);
    if (grad) {
      for (std::size_t j = 0; j < d_; ++j)
        for (std::size_t k = 0; k < m_; ++k)
          for (std::size_t i = 0; i < d_; ++i) {
            const std::size_t idx = (j * m_ + k) * d_ + i;
            const double w = p[idx] - p[off_neg() + idx];
            const double g = scale * dh_da.at(i, j) * 2.0 * w;
            (*grad)[idx] += g;
            (*grad)[off_neg() + idx] -= g;
          }
    }
    return h;
  }

  void pin(std::vector<double>& grad) const override {
    for (std::size_t j = 0; j < d_; ++j)
      for (std::size_t k = 0; k < m_; ++k) {
        grad[(j * m_ + k) * d_ + j] = kPinnedGradient;
        grad[off_neg() + (j * m_ + k) * d_ + j] = kPinnedGradient;
      }
  }

 private:
  Tensor x_;
  std::size_t n_, d_, m_;
  double lambda1_, lambda2_;
};

bool reaches(const Tensor& w, std::size_t from, std::size_t to) {
  const std::size_t d = w.dim(0);
  std::vector<bool> seen(d, false);
  std::vector<std::size_t> stack{from};
  while (!stack.empty()) {
    const std::size_t u = stack.back();
    stack.pop_back();
    if (u == to) return true;
    if (seen[u]) continue;
    seen[u] = true;
    for (std::size_t v = 0; v < d; ++v)
      if (w.at(u, v) != 0.0 && !seen[v]) stack.push_back(v);
  }
  return false;
}

}  // namespace

void NotearsConfig::validate() const {
  if (!(rho_init > 0.0)) throw ConfigError("notears.rho_init must be > 0");
  if (!(rho_max >= rho_init)) throw ConfigError("notears.rho_max must be >= rho_init");
  if (!(h_tolerance > 0.0)) throw ConfigError("notears.h_tolerance must be > 0");
  if (!(threshold > 0.0)) throw ConfigError("notears.threshold must be > 0");
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("notears.lambda1/lambda2 must be >= 0");
  if (inner_steps < 1 || max_outer_iters < 1) {
    throw ConfigError("notears.inner_steps and max_outer_iters must be >= 1");
  }
  if (hidden < 1) throw ConfigError("notears.hidden must be >= 1");
}

std::vector<std::size_t> CausalGraph::parents(std::size_t node) const {
  std::vector<std::size_t> out;
  for (const auto& e : edges)
    if (e.dst == node) out.push_back(e.src);
  std::sort(out.begin(), out.end());
  return out;
}

Tensor matrix_exp(const Tensor& m) {
  require_square(m, "matrix_exp");
  const std::size_t d = m.dim(0);
  if (d > kMaxExpDim) {
    throw DimensionError("matrix_exp: d = " + std::to_string(d) + " exceeds limit " +
                         std::to_string(kMaxExpDim));
  }
  for (double v : m.values())
    if (!std::isfinite(v)) throw NumericError("matrix_exp: non-finite entry");
  int s = 0;
  const double norm = one_norm(m);
  while (norm / std::ldexp(1.0, s) >= 0.5) ++s;
  Tensor a = m;
  const double scale = std::ldexp(1.0, -s);
  for (double& v : a.values()) v *= scale;

  Tensor result({d, d});
  for (std::size_t i = 0; i < d; ++i) result.at(i, i) = 1.0;
  Tensor term = result;
  for (int k = 1; k <= kTaylorTerms; ++k) {
    term = matmul(term, a);
    for (double& v : term.values()) v /= static_cast<double>(k);
    for (std::size_t i = 0; i < result.size(); ++i) result[i] += term[i];
  }
  for (int i = 0; i < s; ++i) result = matmul(result, result);
  return result;
}

double notears_h(const Tensor& w) {
  require_square(w, "notears_h");
  return h_from_squares(hadamard_square(w), nullptr);
}

Tensor notears_h_grad(const Tensor& w) {
  require_square(w, "notears_h_grad");
  Tensor dh_da;
  h_from_squares(hadamard_square(w), &dh_da);
  for (std::size_t i = 0; i < w.size(); ++i) dh_da[i] *= 2.0 * w[i];
  return dh_da;
}

bool is_dag(const Tensor& w) {
  const std::size_t d = w.dim(0);
  for (std::size_t i = 0; i < d; ++i) {
    if (w.at(i, i) != 0.0) return false;
    for (std::size_t j = 0; j < d; ++j)
      if (i != j && w.at(i, j) != 0.0 && reaches(w, j, i)) return false;
  }
  return true;
}

void break_cycles(Tensor& w) {
  const std::size_t d = w.dim(0);
  for (std::size_t i = 0; i < d; ++i) w.at(i, i) = 0.0;
  while (true) {
    double weakest = 0.0;
    std::size_t bi = d, bj = d;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        if (w.at(i, j) == 0.0 || !reaches(w, j, i)) continue;
        if (bi == d || std::abs(w.at(i, j)) < weakest) {
          weakest = std::abs(w.at(i, j));
          bi = i;
          bj = j;
        }
      }
    if (bi == d) return;
    w.at(bi, bj) = 0.0;
  }
}

std::vector<std::size_t> topological_order(std::size_t d, const std::vector<Edge>& edges) {
  std::vector<std::size_t> indeg(d, 0);
  for (const auto& e : edges) {
    if (e.src >= d || e.dst >= d) throw ConfigError("graph: edge endpoint out of range");
    indeg[e.dst]++;
  }
  // Min-index first so the order is canonical.
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < d; ++i)
    if (indeg[i] == 0) ready.push(i);
  std::vector<std::size_t> order;
  while (!ready.empty()) {
    const std::size_t u = ready.top();
    ready.pop();
    order.push_back(u);
    for (const auto& e : edges)
      if (e.src == u && --indeg[e.dst] == 0) ready.push(e.dst);
  }
  if (order.size() != d) throw ConfigError("graph: edge list contains a cycle");
  return order;
}

std::vector<Edge> top_k_edges(const CausalGraph& graph, std::size_t k) {
  std::vector<Edge> all;
  const std::size_t d = graph.d;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      if (graph.weights.at(i, j) != 0.0) all.push_back({i, j, graph.weights.at(i, j)});
  std::stable_sort(all.begin(), all.end(), [](const Edge& a, const Edge& b) {
    const double wa = std::abs(a.weight), wb = std::abs(b.weight);
    if (wa != wb) return wa > wb;
    if (a.src != b.src) return a.src < b.src;
    return a.dst < b.dst;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

CausalGraph fit_notears(const Tensor& x_raw, const NotearsConfig& cfg, NotearsVariant variant,
                        std::vector<std::string> names) {
  cfg.validate();
  if (x_raw.rank() != 2 || x_raw.dim(1) < 1) {
    throw DimensionError("fit_notears: data must be [n, d], got " + shape_str(x_raw.shape()));
  }
  const std::size_t n = x_raw.dim(0), d = x_raw.dim(1);
  if (n < 10 * d) {
    std::cerr << "warning: fit_notears with n=" << n << " < 10*d=" << 10 * d << "\n";
  }
  if (names.empty()) {
    for (std::size_t j = 0; j < d; ++j) names.push_back("x" + std::to_string(j));
  }
  if (names.size() != d) throw DimensionError("fit_notears: names/columns mismatch");

  const Tensor x = centered(x_raw);
  std::unique_ptr<NotearsProblem> problem;
  if (variant == NotearsVariant::kLinear) {
    problem = std::make_unique<LinearProblem>(x, cfg.lambda1);
  } else {
    problem = std::make_unique<MlpProblem>(x, cfg.lambda1, cfg.lambda2, cfg.hidden);
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<double> params = problem->initial(rng);
  const std::vector<bool> nonneg = problem->nonneg();
  double rho = cfg.rho_init, alpha = cfg.alpha_init;
  double h = std::numeric_limits<double>::infinity();
  LbfgsOptions opts;
  opts.max_iters = cfg.inner_steps;

  for (int outer = 0; outer < cfg.max_outer_iters; ++outer) {
    std::vector<double> candidate;
    double h_new = h;
    while (rho < cfg.rho_max) {
      candidate = params;
      auto fg = [&](const std::vector<double>& p, std::vector<double>& g) {
        std::fill(g.begin(), g.end(), 0.0);
        double f = problem->score(p, g);
        const double hv = problem->constraint(p, nullptr, 0.0);
        problem->constraint(p, &g, rho * hv + alpha);
        problem->pin(g);
        return f + 0.5 * rho * hv * hv + alpha * hv;
      };
      minimize_lbfgs(fg, candidate, nonneg, opts);
      h_new = problem->constraint(candidate, nullptr, 0.0);
      if (h_new > cfg.progress_rate * h) {
        rho *= 10.0;
      } else {
        break;
      }
    }
    if (!candidate.empty()) params = std::move(candidate);
    h = h_new;
    alpha += rho * h;
    if (h <= cfg.h_tolerance || rho >= cfg.rho_max) break;
  }

  CausalGraph g;
  g.d = d;
  g.names = std::move(names);
  g.threshold = cfg.threshold;
  g.converged = h <= cfg.h_tolerance;
  g.weights = problem->adjacency(params);
  for (double& v : g.weights.values())
    if (std::abs(v) < cfg.threshold) v = 0.0;
  break_cycles(g.weights);
  g.h_value = notears_h(g.weights);
  g.edges = top_k_edges(g, cfg.top_k);
  return g;
}

void write_graph_json(std::ostream& out, const CausalGraph& g) {
  nlohmann::json j;
  j["names"] = g.names;
  j["d"] = g.d;
  j["W"] = g.weights.storage();
  j["threshold"] = g.threshold;
  j["converged"] = g.converged;
  j["h"] = g.h_value;
  j["edges"] = nlohmann::json::array();
  for (const auto& e : g.edges) {
    j["edges"].push_back({{"src", e.src}, {"dst", e.dst}, {"weight", e.weight}});
  }
  out << j.dump(2) << "\n";
}

CausalGraph read_graph_json(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("graph json: ") + e.what());
  }
  CausalGraph g;
  try {
    g.names = j.at("names").get<std::vector<std::string>>();
    g.d = g.names.size();
    auto w = j.at("W").get<std::vector<double>>();
    if (w.size() != g.d * g.d) throw ConfigError("graph json: W must have d*d entries");
    g.weights = Tensor({g.d, g.d}, std::move(w));
    g.threshold = j.at("threshold").get<double>();
    g.converged = j.value("converged", true);
    for (const auto& e : j.at("edges")) {
      g.edges.push_back({e.at("src").get<std::size_t>(), e.at("dst").get<std::size_t>(),
                         e.at("weight").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("graph json: ") + e.what());
  }
  topological_order(g.d, g.edges);
  g.h_value = notears_h(g.weights);
  return g;
}

}  // namespace mucald
