#pragma once
// One client's view of the split network:
//   x -> FE -> [CRDM-1] -> frame -> SS -> [CRDM-2] -> frame -> BE -> softmax
// with optional client-identity discriminators on both frames.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mucald/config.hpp"
#include "mucald/crdm.hpp"
#include "mucald/daca.hpp"
#include "mucald/frame.hpp"
#include "mucald/nn.hpp"
#include "mucald/objective.hpp"
#include "mucald/optim.hpp"

namespace mucald {

// Every client uses a head of this width so that heads can be averaged in the
// baseline; softmax and loss see only the client's first C channels.
inline constexpr std::size_t kMaxClasses = 5;

struct ModelSpec {
  std::size_t in_channels = 1;
  std::size_t clients = 1;  // discriminator outputs
  ModelConfig widths;
  CrdmConfig crdm;  // channels is overwritten per split
  std::size_t graph_nodes = 8;
  std::vector<Edge> edges;
  bool use_crdm = true;
  bool use_daca = true;

  static ModelSpec from_config(const RunConfig& cfg, std::size_t proxy_dim,
                               std::vector<Edge> edges);
};

// Independent initialisation streams, so partitions shared between two
// configurations start identical under the same seed.
struct InitSeeds {
  std::uint64_t fe = 1, ss = 2, be = 3, crdm1 = 4, crdm2 = 5, disc1 = 6, disc2 = 7;
  static InitSeeds derive(std::uint64_t run_seed, std::size_t client);
};

struct Batch {
  Tensor images;                     // [B, C_in, S, S]
  std::vector<std::uint8_t> labels;  // [B, S, S] row-major
  std::size_t classes = 2;           // the client's class count
  ProxyBatch proxy;                  // [B, proxy_dim]
  std::uint8_t client = 0;
};

struct StepOptions {
  LossWeights weights;           // effective weights for this epoch
  double alpha = 0.0;            // gradient reversal strength
  bool train = true;             // exogenous sampling; eval uses u = mu
  int t1 = -1, t2 = -1;          // diffusion timesteps; -1 draws from [1, t_max]
  int t_max = 50;
  std::uint64_t noise_seed = 0;  // seeds all draws of this step
  std::uint32_t round = 0;       // frame header
  bool quantize = true;          // float32 frame round trip at the splits
};

// Activations observed at one split point.
struct SplitTrace {
  Tensor clean;  // input of the CRDM (or the wire itself without CRDM)
  Tensor noisy;  // empty without forward diffusion
  Tensor wire;   // what crosses the split, before quantization
  int t = 0;
};

struct StepResult {
  LossBreakdown loss;     // components and weighted total
  double ce1 = 0.0, ce2 = 0.0;  // discriminator cross-entropies
  double acc1 = 0.0, acc2 = 0.0;
  Tensor probs;           // [B, C, S, S]
  SplitTrace s1, s2;
};

class ClientModel {
 public:
  ClientModel(const ModelSpec& spec, const InitSeeds& seeds);
  ClientModel(const ClientModel&) = delete;
  ClientModel& operator=(const ClientModel&) = delete;

  // Forward pass; with `backward` set, accumulates gradients of the
  // composite objective (discriminators receive their plain cross-entropy
  // gradient, everything upstream the reversed one).
  StepResult run(const Batch& batch, const StepOptions& opts, const DiffusionSchedule& sched,
                 bool backward);

  // Partition parameter lists (empty when the partition is absent).
  std::vector<ParamRef> fe_params() { return fe_.parameters(); }
  std::vector<ParamRef> ss_params() { return ss_.parameters(); }
  std::vector<ParamRef> be_params() { return be_.parameters(); }
  std::vector<ParamRef> crdm1_params();
  std::vector<ParamRef> crdm2_params();
  std::vector<ParamRef> disc1_params();
  std::vector<ParamRef> disc2_params();
  std::vector<ParamRef> all_params();
  std::vector<ParamRef> upstream_params();       // everything but discriminators
  std::vector<ParamRef> discriminator_params();

  // Shared set for the given method, in a fixed order.
  std::vector<ParamRef> shared_params(Method m);
  std::vector<ParamRef> local_params(Method m);

  // Frames of the last run() at each split (encoded), for abort diagnostics.
  const std::vector<std::string>& last_frames() const { return last_frames_; }

  const ModelSpec& spec() const { return spec_; }

 private:
  Tensor transmit(const Tensor& wire, const StepOptions& opts, std::uint8_t client,
                  std::uint8_t split, int t);

  ModelSpec spec_;
  Sequential fe_{"fe"}, ss_{"ss"}, be_{"be"};
  ActivationLayer softmax_{"softmax", Activation::kSoftmaxChannel};
  std::optional<Crdm> crdm1_, crdm2_;
  std::optional<DomainDiscriminator> disc1_, disc2_;
  std::vector<std::string> last_frames_;
};

// Adam state per partition.
struct ClientOptimizers {
  Adam fe, ss, be, crdm1, crdm2, disc1, disc2;
  ClientOptimizers(ClientModel& m, double lr);
  void step();
};

// Flattened mean soft-dice loss per sample (for membership inference).
std::vector<double> per_sample_dice_loss(const Tensor& probs, const std::vector<std::uint8_t>& labels);

// Argmax over channels of [B, C, H, W] probabilities, row-major [B, H, W].
std::vector<std::uint8_t> argmax_labels(const Tensor& probs);

}  // namespace mucald
