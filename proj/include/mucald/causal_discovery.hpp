#pragma once
// Continuous DAG structure learning with the trace-exponential acyclicity
// constraint, solved by an augmented-Lagrangian outer loop around a
// bound-constrained L-BFGS inner solver.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mucald/tensor.hpp"

namespace mucald {

struct Edge {
  std::size_t src;
  std::size_t dst;
  double weight;
  bool operator==(const Edge&) const = default;
};

struct CausalGraph {
  std::size_t d = 0;
  std::vector<std::string> names;
  Tensor weights;  // [d, d]; weights.at(i, j) is the strength of edge i -> j
  double threshold = 0.0;
  std::vector<Edge> edges;  // top-k by |weight|
  bool converged = true;
  double h_value = 0.0;

  // Parents of `node` among the selected top-k edges.
  std::vector<std::size_t> parents(std::size_t node) const;
};

enum class NotearsVariant { kLinear, kMlp };

struct NotearsConfig {
  double lambda1 = 0.01;
  double lambda2 = 0.01;  // MLP only: ridge on network weights
  double rho_init = 1.0;
  double rho_max = 1e16;
  double alpha_init = 0.0;
  double h_tolerance = 1e-8;
  double progress_rate = 0.25;  // rho escalates unless h shrinks by this factor
  int max_outer_iters = 100;
  int inner_steps = 300;
  double threshold = 0.3;
  std::size_t top_k = 3;
  std::size_t hidden = 10;  // MLP only
  std::uint64_t seed = 0;

  void validate() const;
};

// Scaling and squaring with a 16-term Taylor series. Throws DimensionError for
// non-square input or d > 64.
Tensor matrix_exp(const Tensor& m);

// tr(exp(W o W)) - d
double notears_h(const Tensor& w);
// exp(W o W)^T o 2W
Tensor notears_h_grad(const Tensor& w);

// X: [n, d]. Columns are centered internally; scaling is the caller's choice.
CausalGraph fit_notears(const Tensor& x, const NotearsConfig& cfg, NotearsVariant variant,
                        std::vector<std::string> names = {});

// k largest |weight| edges; ties by (src, dst) ascending; no padding.
std::vector<Edge> top_k_edges(const CausalGraph& graph, std::size_t k);

// Removes the weakest edge on any directed cycle until the support is acyclic.
void break_cycles(Tensor& w);
bool is_dag(const Tensor& w);
// Kahn order over the selected edge list; throws ConfigError on a cycle.
std::vector<std::size_t> topological_order(std::size_t d, const std::vector<Edge>& edges);

void write_graph_json(std::ostream& out, const CausalGraph& g);
CausalGraph read_graph_json(std::istream& in);

}  // namespace mucald
