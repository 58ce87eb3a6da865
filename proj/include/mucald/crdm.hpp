#pragma once
// Causal representation and diffusion at one split point: an exogenous
// encoder, a graph-constrained neural SCM with a proxy head, forward
// diffusion of the activation and a causally conditioned x0-denoiser.

#include <cstdint>
#include <vector>

#include "mucald/causal_discovery.hpp"
#include "mucald/nn.hpp"
#include "mucald/tensor.hpp"

namespace mucald {

// ------------------------------------------------------------ diffusion

struct DiffusionSchedule {
  int steps = 0;  // T
  double offset = 0.008;
  std::vector<double> alpha_bar;  // T + 1 entries, alpha_bar[0] == 1
  std::vector<double> beta;       // beta[0] unused (0); clipped to <= 0.999
};

// Throws ConfigError for T < 1.
DiffusionSchedule cosine_schedule(int steps, double offset = 0.008);

// sqrt(ab[t]) z + sqrt(1 - ab[t]) noise
Tensor forward_diffuse(const Tensor& z, int t, const Tensor& noise, const DiffusionSchedule& s);

// Mean over the batch of 0.5 * sum_j (mu^2 + exp(logvar) - logvar - 1).
// Rows are the batch axis. Optional outputs receive d/dmu and d/dlogvar.
double kl_standard_normal(const Tensor& mu, const Tensor& logvar, Tensor* dmu = nullptr,
                          Tensor* dlogvar = nullptr);

// Sinusoidal embedding of a timestep, `dim` even.
std::vector<double> timestep_embedding(int t, std::size_t dim);

// ------------------------------------------------------------ components

struct ExoOutput {
  Tensor u;       // [B, d_u]
  Tensor mu;      // [B, d_u]
  Tensor logvar;  // [B, d_u], clamped to [-10, 10]
  Tensor eps;     // [B, d_u], zero in eval mode
};

// Spatial mean pool followed by a two-layer MLP producing (mu, logvar).
class ExogenousEncoder {
 public:
  ExogenousEncoder(std::size_t channels, std::size_t hidden, std::size_t d_u, Rng& rng);

  // Training mode samples u = mu + sigma * eps with eps drawn from `rng`;
  // eval mode returns u = mu.
  ExoOutput forward(const Tensor& z, bool train, Rng& rng);
  // Gradients w.r.t. u, mu and logvar (the latter two from the KL term).
  Tensor backward(const Tensor& du, const Tensor& dmu, const Tensor& dlogvar);
  std::vector<ParamRef> parameters() { return net_.parameters(); }
  std::size_t d_u() const { return d_u_; }

 private:
  Sequential net_;
  std::size_t d_u_;
  Tensor raw_logvar_;
  ExoOutput last_;
};

// One scalar latent per graph node, computed in topological order from the
// node's parents and its contiguous slice of u.
class NeuralScm {
 public:
  NeuralScm(std::size_t nodes, std::vector<Edge> edges, std::size_t d_u, std::size_t hidden,
            std::size_t proxy_dim, Rng& rng);

  struct Output {
    Tensor z_causal;    // [B, nodes]
    Tensor proxy_pred;  // [B, proxy_dim]
  };
  Output forward(const Tensor& u);
  // Returns d/du given gradients on z_causal and the proxy prediction.
  Tensor backward(const Tensor& dz_causal, const Tensor& dproxy);
  std::vector<ParamRef> parameters();

  std::size_t nodes() const { return nodes_; }
  const std::vector<std::size_t>& order() const { return order_; }
  const std::vector<std::size_t>& parents(std::size_t node) const { return parents_[node]; }
  // [offset, length) of node's u slice.
  std::pair<std::size_t, std::size_t> slice(std::size_t node) const { return slices_[node]; }
  // Evaluation order override for tests; must be a topological order.
  void set_order(std::vector<std::size_t> order);

 private:
  std::size_t nodes_, d_u_;
  std::vector<std::vector<std::size_t>> parents_;
  std::vector<std::pair<std::size_t, std::size_t>> slices_;
  std::vector<std::size_t> order_;
  std::vector<Sequential> node_nets_;
  Linear proxy_head_;
  std::size_t batch_ = 0;
};

// z_den = skip * z_noisy + net(concat(z_noisy, z_causal, emb(t))) with the
// last convolution zero-initialised, so an untrained denoiser is the skip.
class Denoiser {
 public:
  Denoiser(std::size_t channels, std::size_t causal_dim, std::size_t hidden,
           std::size_t time_dim, Rng& rng);

  Tensor forward(const Tensor& z_noisy, int t, double skip, const Tensor& z_causal);
  struct Grads {
    Tensor z_noisy;
    Tensor z_causal;
  };
  Grads backward(const Tensor& dz_den);
  std::vector<ParamRef> parameters() { return net_.parameters(); }

 private:
  std::size_t channels_, causal_dim_, time_dim_;
  Sequential net_;
  double skip_ = 1.0;
};

// ------------------------------------------------------------ split module

struct CrdmConfig {
  std::size_t channels = 16;
  std::size_t d_u = 16;
  std::size_t enc_hidden = 32;
  std::size_t scm_hidden = 8;
  std::size_t proxy_dim = 8;
  std::size_t den_hidden = 16;
  std::size_t time_dim = 8;
  bool diffusion = true;      // false: wire = z, no denoiser
  bool forward_noise = true;  // false: z_noisy = z (t forced to 0)
};

struct AuxWeights {
  double proxy = 0.0;
  double diff = 0.0;
  double klu = 0.0;
  double klz = 0.0;
};

struct ProxyBatch {
  Tensor target;            // [B, proxy_dim], normalized
  std::vector<bool> valid;  // false for empty-region samples
};

struct CrdmStep {
  Tensor wire;     // payload crossing the split
  Tensor z_noisy;  // empty when diffusion is off
  int t = 0;
  double proxy = 0.0, diff = 0.0, klu = 0.0, klz = 0.0;
};

// Mean squared error over valid rows; writes d/dpred when `grad` is set.
double proxy_mse(const Tensor& pred, const ProxyBatch& target, Tensor* grad);

class Crdm {
 public:
  // `graph_nodes` latent nodes constrained by `edges` (top-k of the discovered
  // graph); an empty edge list gives independent nodes.
  Crdm(const CrdmConfig& cfg, std::size_t graph_nodes, std::vector<Edge> edges, Rng& rng);

  // `t` is ignored when forward noise is disabled. Noise and the exogenous
  // sample are drawn from `rng`.
  CrdmStep forward(const Tensor& z, const ProxyBatch& proxy, int t, bool train,
                   const DiffusionSchedule& sched, Rng& rng);
  // Gradient w.r.t. z given d/dwire, including the weighted auxiliary terms.
  Tensor backward(const Tensor& d_wire, const AuxWeights& w);

  std::vector<ParamRef> parameters();
  const CrdmConfig& config() const { return cfg_; }
  NeuralScm& scm() { return scm_; }
  ExogenousEncoder& encoder() { return encoder_; }
  Denoiser& denoiser() { return denoiser_; }

 private:
  CrdmConfig cfg_;
  ExogenousEncoder encoder_;
  NeuralScm scm_;
  Denoiser denoiser_;

  // forward cache
  Tensor z_;
  Tensor z_den_;
  ExoOutput exo_;
  NeuralScm::Output scm_out_;
  ProxyBatch proxy_;
  double sqrt_ab_ = 1.0;
};

}  // namespace mucald
