#pragma once
// Domain-adversarial alignment at a split point: a client-identity
// discriminator behind a gradient reversal layer.

#include <cstdint>
#include <vector>

#include "mucald/nn.hpp"

namespace mucald {

struct GrlConfig {
  double alpha_max = 1.0;
  void validate() const;
};

// Pool + two-layer MLP over the split payload, one logit per client.
class DomainDiscriminator {
 public:
  DomainDiscriminator(std::size_t channels, std::size_t hidden, std::size_t clients, Rng& rng);

  Tensor forward(const Tensor& z);  // [B, K]
  Tensor backward(const Tensor& dlogits);
  std::vector<ParamRef> parameters() { return net_.parameters(); }
  std::size_t clients() const { return clients_; }

 private:
  Sequential net_;
  std::size_t clients_;
};

// Mean softmax cross-entropy over rows; `dlogits` receives the gradient.
double cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels,
                     Tensor* dlogits = nullptr);

struct AdversarialResult {
  double loss = 0.0;      // discriminator cross-entropy
  double accuracy = 0.0;  // discriminator accuracy on the batch
  Tensor upstream;        // -alpha * lambda_adv * dCE/dz, to add to the wire gradient
};

// One discriminator forward/backward on the payload. Discriminator parameter
// gradients accumulate with the plain cross-entropy gradient; the returned
// upstream gradient has passed through a GRL of strength alpha and is scaled
// by lambda_adv.
AdversarialResult adversarial_loss(DomainDiscriminator& disc, const Tensor& z_wire,
                                   const std::vector<std::size_t>& client_ids, double alpha,
                                   double lambda_adv);

}  // namespace mucald
