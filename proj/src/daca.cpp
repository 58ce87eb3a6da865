#include "mucald/daca.hpp"

#include <algorithm>
#include <cmath>

#include "mucald/errors.hpp"

namespace mucald {

void GrlConfig::validate() const {
  if (!(alpha_max >= 0.0)) throw ConfigError("daca.alpha_max must be >= 0");
}

DomainDiscriminator::DomainDiscriminator(std::size_t channels, std::size_t hidden,
                                         std::size_t clients, Rng& rng)
    : net_("disc"), clients_(clients) {
  if (clients == 0) throw ConfigError("discriminator: at least one client required");
  net_.emplace<GlobalMeanPool>("disc.pool");
  net_.emplace<RowNormalize>("disc.norm");
  net_.emplace<Linear>("disc.fc1", channels, hidden, rng);
  net_.emplace<ActivationLayer>("disc.relu", Activation::kRelu);
  net_.emplace<Linear>("disc.fc2", hidden, clients, rng);
}

Tensor DomainDiscriminator::forward(const Tensor& z) { return net_.forward(z); }

Tensor DomainDiscriminator::backward(const Tensor& dlogits) { return net_.backward(dlogits); }

double cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels,
                     Tensor* dlogits) {
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  if (labels.size() != b) throw DimensionError("cross_entropy: labels / batch mismatch");
  if (dlogits) *dlogits = Tensor(logits.shape());
  double loss = 0.0;
  for (std::size_t n = 0; n < b; ++n) {
    if (labels[n] >= k) {
      throw ConfigError("cross_entropy: label " + std::to_string(labels[n]) + " >= " +
                        std::to_string(k) + " classes");
    }
    double m = logits.at(n, 0);
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, logits.at(n, j));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(logits.at(n, j) - m);
    const double lse = m + std::log(z);
    loss += lse - logits.at(n, labels[n]);
    if (dlogits) {
      for (std::size_t j = 0; j < k; ++j) {
        const double p = std::exp(logits.at(n, j) - lse);
        dlogits->at(n, j) = (p - (j == labels[n] ? 1.0 : 0.0)) / static_cast<double>(b);
      }
    }
  }
  return loss / static_cast<double>(b);
}

AdversarialResult adversarial_loss(DomainDiscriminator& disc, const Tensor& z_wire,
                                   const std::vector<std::size_t>& client_ids, double alpha,
                                   double lambda_adv) {
  GradientReversal grl("grl", 0.0);
  grl.set_alpha(alpha);
  AdversarialResult r;
  const Tensor logits = disc.forward(grl.forward(z_wire));
  Tensor dlogits;
  r.loss = cross_entropy(logits, client_ids, &dlogits);
  std::size_t correct = 0;
  for (std::size_t n = 0; n < logits.dim(0); ++n) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.dim(1); ++j)
      if (logits.at(n, j) > logits.at(n, best)) best = j;
    correct += best == client_ids[n] ? 1 : 0;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(logits.dim(0));
  r.upstream = grl.backward(disc.backward(dlogits));
  for (double& v : r.upstream.values()) v *= lambda_adv;
  return r;
}

}  // namespace mucald
