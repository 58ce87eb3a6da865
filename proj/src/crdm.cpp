#include "mucald/crdm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "mucald/errors.hpp"

namespace mucald {
namespace {

constexpr double kLogvarMin = -10.0;
constexpr double kLogvarMax = 10.0;

Tensor broadcast_rows(const Tensor& rows, std::size_t h, std::size_t w) {
  const std::size_t b = rows.dim(0), c = rows.dim(1);
  Tensor out({b, c, h, w});
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t k = 0; k < c; ++k) {
      double* dst = out.data() + ((n * c + k) * h) * w;
      std::fill(dst, dst + h * w, rows.at(n, k));
    }
  return out;
}

Tensor sum_spatial(const Tensor& t) {
  const std::size_t b = t.dim(0), c = t.dim(1), hw = t.dim(2) * t.dim(3);
  Tensor out({b, c});
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t k = 0; k < c; ++k) {
      const double* src = t.data() + (n * c + k) * hw;
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += src[i];
      out.at(n, k) = s;
    }
  return out;
}

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite values in ") + what);
}

}  // namespace

// ------------------------------------------------------------ diffusion

DiffusionSchedule cosine_schedule(int steps, double offset) {
  if (steps < 1) throw ConfigError("diffusion.steps must be >= 1");
  DiffusionSchedule s;
  s.steps = steps;
  s.offset = offset;
  auto f = [&](int t) {
    const double c = std::cos((static_cast<double>(t) / steps + offset) / (1.0 + offset) *
                              std::numbers::pi / 2.0);
    return c * c;
  };
  const double f0 = f(0);
  s.alpha_bar.resize(static_cast<std::size_t>(steps) + 1);
  s.beta.assign(static_cast<std::size_t>(steps) + 1, 0.0);
  for (int t = 0; t <= steps; ++t) s.alpha_bar[t] = f(t) / f0;
  s.alpha_bar[0] = 1.0;
  for (int t = 1; t <= steps; ++t) {
    s.beta[t] = std::min(1.0 - s.alpha_bar[t] / s.alpha_bar[t - 1], 0.999);
  }
  return s;
}

Tensor forward_diffuse(const Tensor& z, int t, const Tensor& noise, const DiffusionSchedule& s) {
  require_same_shape(z, noise, "forward_diffuse");
  if (t < 0 || t > s.steps) {
    throw ConfigError("forward_diffuse: t = " + std::to_string(t) + " outside [0, " +
                      std::to_string(s.steps) + "]");
  }
  if (t == 0) return z;
  const double a = std::sqrt(s.alpha_bar[t]), b = std::sqrt(1.0 - s.alpha_bar[t]);
  Tensor out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = a * z[i] + b * noise[i];
  return out;
}

double kl_standard_normal(const Tensor& mu, const Tensor& logvar, Tensor* dmu, Tensor* dlogvar) {
  require_same_shape(mu, logvar, "kl_standard_normal");
  const double batch = static_cast<double>(mu.dim(0));
  double kl = 0.0;
  if (dmu) *dmu = Tensor(mu.shape());
  if (dlogvar) *dlogvar = Tensor(mu.shape());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double e = std::exp(logvar[i]);
    kl += mu[i] * mu[i] + e - logvar[i] - 1.0;
    if (dmu) (*dmu)[i] = mu[i] / batch;
    if (dlogvar) (*dlogvar)[i] = 0.5 * (e - 1.0) / batch;
  }
  return 0.5 * kl / batch;
}

std::vector<double> timestep_embedding(int t, std::size_t dim) {
  std::vector<double> emb(dim, 0.0);
  const std::size_t half = dim / 2;
  for (std::size_t k = 0; k < half; ++k) {
    const double freq =
        std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    emb[k] = std::sin(t * freq);
    emb[half + k] = std::cos(t * freq);
  }
  return emb;
}

// ------------------------------------------------------------ encoder

ExogenousEncoder::ExogenousEncoder(std::size_t channels, std::size_t hidden, std::size_t d_u,
                                   Rng& rng)
    : net_("exo"), d_u_(d_u) {
  net_.emplace<GlobalMeanPool>("exo.pool");
  net_.emplace<Linear>("exo.fc1", channels, hidden, rng);
  net_.emplace<ActivationLayer>("exo.relu", Activation::kRelu);
  net_.emplace<Linear>("exo.fc2", hidden, 2 * d_u, rng);
}

ExoOutput ExogenousEncoder::forward(const Tensor& z, bool train, Rng& rng) {
  const Tensor h = net_.forward(z);
  require_finite(h, "exogenous encoder output");
  const std::size_t b = h.dim(0);
  ExoOutput out{Tensor({b, d_u_}), Tensor({b, d_u_}), Tensor({b, d_u_}), Tensor({b, d_u_})};
  raw_logvar_ = Tensor({b, d_u_});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t j = 0; j < d_u_; ++j) {
      const double mu = h.at(n, j);
      const double raw = h.at(n, d_u_ + j);
      const double lv = std::clamp(raw, kLogvarMin, kLogvarMax);
      out.mu.at(n, j) = mu;
      out.logvar.at(n, j) = lv;
      raw_logvar_.at(n, j) = raw;
      const double eps = train ? normal(rng) : 0.0;
      out.eps.at(n, j) = eps;
      out.u.at(n, j) = mu + std::exp(0.5 * lv) * eps;
    }
  }
  last_ = out;
  return out;
}

Tensor ExogenousEncoder::backward(const Tensor& du, const Tensor& dmu, const Tensor& dlogvar) {
  const std::size_t b = du.dim(0);
  Tensor dh({b, 2 * d_u_});
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t j = 0; j < d_u_; ++j) {
      dh.at(n, j) = du.at(n, j) + dmu.at(n, j);
      const double raw = raw_logvar_.at(n, j);
      const bool clamped = raw < kLogvarMin || raw > kLogvarMax;
      const double lv = last_.logvar.at(n, j);
      const double dlv =
          dlogvar.at(n, j) + du.at(n, j) * last_.eps.at(n, j) * 0.5 * std::exp(0.5 * lv);
      dh.at(n, d_u_ + j) = clamped ? 0.0 : dlv;
    }
  }
  return net_.backward(dh);
}

// ------------------------------------------------------------ SCM

NeuralScm::NeuralScm(std::size_t nodes, std::vector<Edge> edges, std::size_t d_u,
                     std::size_t hidden, std::size_t proxy_dim, Rng& rng)
    : nodes_(nodes),
      d_u_(d_u),
      parents_(nodes),
      proxy_head_("scm.proxy", nodes, proxy_dim, rng) {
  if (nodes == 0) throw ConfigError("scm: at least one node required");
  if (d_u < nodes) {
    throw ConfigError("scm: d_u (" + std::to_string(d_u) + ") must be >= node count (" +
                      std::to_string(nodes) + ")");
  }
  order_ = topological_order(nodes, edges);
  for (const auto& e : edges) parents_[e.dst].push_back(e.src);
  for (auto& p : parents_) {
    std::sort(p.begin(), p.end());
    p.erase(std::unique(p.begin(), p.end()), p.end());
  }
  const std::size_t base = d_u / nodes, extra = d_u % nodes;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < nodes; ++i) {
    const std::size_t len = base + (i < extra ? 1 : 0);
    slices_.emplace_back(offset, len);
    offset += len;
  }
  for (std::size_t i = 0; i < nodes; ++i) {
    const std::string tag = "scm.node" + std::to_string(i);
    Sequential net(tag);
    net.emplace<Linear>(tag + ".fc1", parents_[i].size() + slices_[i].second, hidden, rng);
    net.emplace<ActivationLayer>(tag + ".tanh", Activation::kTanh);
    net.emplace<Linear>(tag + ".fc2", hidden, 1, rng);
    node_nets_.push_back(std::move(net));
  }
}

void NeuralScm::set_order(std::vector<std::size_t> order) {
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < nodes_; ++i)
    for (std::size_t p : parents_[i]) edges.push_back({p, i, 1.0});
  if (order.size() != nodes_) throw ConfigError("scm: order must list every node");
  std::vector<std::size_t> pos(nodes_, nodes_);
  for (std::size_t k = 0; k < order.size(); ++k) pos.at(order[k]) = k;
  for (const auto& e : edges)
    if (pos[e.src] >= pos[e.dst]) throw ConfigError("scm: order is not topological");
  order_ = std::move(order);
}

NeuralScm::Output NeuralScm::forward(const Tensor& u) {
  if (u.rank() != 2 || u.dim(1) != d_u_) {
    throw DimensionError("scm: u must be [B, " + std::to_string(d_u_) + "], got " +
                         shape_str(u.shape()));
  }
  batch_ = u.dim(0);
  Output out{Tensor({batch_, nodes_}), Tensor()};
  for (std::size_t node : order_) {
    const auto& pa = parents_[node];
    const auto [off, len] = slices_[node];
    Tensor in({batch_, pa.size() + len});
    for (std::size_t n = 0; n < batch_; ++n) {
      for (std::size_t k = 0; k < pa.size(); ++k) in.at(n, k) = out.z_causal.at(n, pa[k]);
      for (std::size_t k = 0; k < len; ++k) in.at(n, pa.size() + k) = u.at(n, off + k);
    }
    const Tensor y = node_nets_[node].forward(in);
    for (std::size_t n = 0; n < batch_; ++n) out.z_causal.at(n, node) = y[n];
  }
  out.proxy_pred = proxy_head_.forward(out.z_causal);
  return out;
}

Tensor NeuralScm::backward(const Tensor& dz_causal, const Tensor& dproxy) {
  Tensor dz = proxy_head_.backward(dproxy);
  for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += dz_causal[i];
  Tensor du({batch_, d_u_});
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    const std::size_t node = *it;
    const auto& pa = parents_[node];
    const auto [off, len] = slices_[node];
    Tensor dy({batch_, 1});
    for (std::size_t n = 0; n < batch_; ++n) dy[n] = dz.at(n, node);
    const Tensor din = node_nets_[node].backward(dy);
    for (std::size_t n = 0; n < batch_; ++n) {
      for (std::size_t k = 0; k < pa.size(); ++k) dz.at(n, pa[k]) += din.at(n, k);
      for (std::size_t k = 0; k < len; ++k) du.at(n, off + k) += din.at(n, pa.size() + k);
    }
  }
  return du;
}

std::vector<ParamRef> NeuralScm::parameters() {
  std::vector<ParamRef> out;
  for (auto& net : node_nets_) {
    auto p = net.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  auto head = proxy_head_.parameters();
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

// ------------------------------------------------------------ denoiser

Denoiser::Denoiser(std::size_t channels, std::size_t causal_dim, std::size_t hidden,
                   std::size_t time_dim, Rng& rng)
    : channels_(channels), causal_dim_(causal_dim), time_dim_(time_dim), net_("den") {
  if (time_dim % 2 != 0) throw ConfigError("diffusion.time_dim must be even");
  net_.emplace<Conv2d>("den.conv1", channels + causal_dim + time_dim, hidden, 3, rng);
  net_.emplace<ActivationLayer>("den.relu", Activation::kRelu);
  auto& out = net_.emplace<Conv2d>("den.conv2", hidden, channels, 3, rng);
  out.params().weights.fill(0.0);
  out.params().bias.fill(0.0);
}

Tensor Denoiser::forward(const Tensor& z_noisy, int t, double skip, const Tensor& z_causal) {
  if (z_noisy.rank() != 4 || z_noisy.dim(1) != channels_) {
    throw DimensionError("denoiser: expected [B, " + std::to_string(channels_) +
                         ", H, W], got " + shape_str(z_noisy.shape()));
  }
  const std::size_t b = z_noisy.dim(0), h = z_noisy.dim(2), w = z_noisy.dim(3);
  if (z_causal.rank() != 2 || z_causal.dim(0) != b || z_causal.dim(1) != causal_dim_) {
    throw DimensionError("denoiser: z_causal shape " + shape_str(z_causal.shape()));
  }
  skip_ = skip;
  const auto emb = timestep_embedding(t, time_dim_);
  Tensor emb_rows({b, time_dim_});
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t k = 0; k < time_dim_; ++k) emb_rows.at(n, k) = emb[k];
  const Tensor zc = broadcast_rows(z_causal, h, w);
  const Tensor te = broadcast_rows(emb_rows, h, w);
  Tensor out = net_.forward(concat_channels({&z_noisy, &zc, &te}));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += skip * z_noisy[i];
  return out;
}

Denoiser::Grads Denoiser::backward(const Tensor& dz_den) {
  const Tensor din = net_.backward(dz_den);
  auto parts = split_channels(din, {channels_, causal_dim_, time_dim_});
  Grads g{std::move(parts[0]), sum_spatial(parts[1])};
  for (std::size_t i = 0; i < g.z_noisy.size(); ++i) g.z_noisy[i] += skip_ * dz_den[i];
  return g;
}

// ------------------------------------------------------------ module

double proxy_mse(const Tensor& pred, const ProxyBatch& target, Tensor* grad) {
  require_same_shape(pred, target.target, "proxy_mse");
  const std::size_t b = pred.dim(0), d = pred.dim(1);
  if (target.valid.size() != b) throw DimensionError("proxy_mse: valid flags / batch mismatch");
  std::size_t rows = 0;
  for (bool v : target.valid) rows += v ? 1 : 0;
  if (grad) *grad = Tensor(pred.shape());
  if (rows == 0) return 0.0;
  const double denom = static_cast<double>(rows * d);
  double loss = 0.0;
  for (std::size_t n = 0; n < b; ++n) {
    if (!target.valid[n]) continue;
    for (std::size_t j = 0; j < d; ++j) {
      const double r = pred.at(n, j) - target.target.at(n, j);
      loss += r * r;
      if (grad) grad->at(n, j) = 2.0 * r / denom;
    }
  }
  return loss / denom;
}

Crdm::Crdm(const CrdmConfig& cfg, std::size_t graph_nodes, std::vector<Edge> edges, Rng& rng)
    : cfg_(cfg),
      encoder_(cfg.channels, cfg.enc_hidden, cfg.d_u, rng),
      scm_(graph_nodes, std::move(edges), cfg.d_u, cfg.scm_hidden, cfg.proxy_dim, rng),
      denoiser_(cfg.channels, graph_nodes, cfg.den_hidden, cfg.time_dim, rng) {}

std::vector<ParamRef> Crdm::parameters() {
  std::vector<ParamRef> out = encoder_.parameters();
  auto s = scm_.parameters();
  out.insert(out.end(), s.begin(), s.end());
  auto d = denoiser_.parameters();
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

CrdmStep Crdm::forward(const Tensor& z, const ProxyBatch& proxy, int t, bool train,
                       const DiffusionSchedule& sched, Rng& rng) {
  CrdmStep step;
  z_ = z;
  proxy_ = proxy;
  exo_ = encoder_.forward(z, train, rng);
  scm_out_ = scm_.forward(exo_.u);
  step.proxy = proxy_mse(scm_out_.proxy_pred, proxy, nullptr);
  step.klu = kl_standard_normal(exo_.mu, exo_.logvar);
  double zz = 0.0;
  for (double v : scm_out_.z_causal.values()) zz += v * v;
  step.klz = 0.5 * zz / static_cast<double>(z.dim(0));

  if (!cfg_.diffusion) {
    step.wire = z;
    z_den_ = Tensor();
    return step;
  }
  const int tt = cfg_.forward_noise ? t : 0;
  step.t = tt;
  sqrt_ab_ = std::sqrt(sched.alpha_bar.at(static_cast<std::size_t>(tt)));
  if (tt == 0) {
    step.z_noisy = z;
  } else {
    Tensor noise(z.shape());
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : noise.values()) v = normal(rng);
    step.z_noisy = forward_diffuse(z, tt, noise, sched);
  }
  z_den_ = denoiser_.forward(step.z_noisy, tt, sqrt_ab_, scm_out_.z_causal);
  require_finite(z_den_, "denoiser output");
  double diff = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) diff += (z_den_[i] - z[i]) * (z_den_[i] - z[i]);
  step.diff = diff / static_cast<double>(z.size());
  step.wire = z_den_;
  return step;
}

Tensor Crdm::backward(const Tensor& d_wire, const AuxWeights& w) {
  const std::size_t b = z_.dim(0);
  Tensor dz(z_.shape());
  Tensor dz_causal({b, scm_.nodes()});

  if (cfg_.diffusion) {
    Tensor dden = d_wire;
    const double scale = 2.0 * w.diff / static_cast<double>(z_.size());
    for (std::size_t i = 0; i < dden.size(); ++i) {
      const double g = scale * (z_den_[i] - z_[i]);
      dden[i] += g;
      dz[i] -= g;
    }
    const auto g = denoiser_.backward(dden);
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += sqrt_ab_ * g.z_noisy[i];
    dz_causal = g.z_causal;
  } else {
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += d_wire[i];
  }

  for (std::size_t i = 0; i < dz_causal.size(); ++i) {
    dz_causal[i] += w.klz * scm_out_.z_causal[i] / static_cast<double>(b);
  }
  Tensor dproxy;
  proxy_mse(scm_out_.proxy_pred, proxy_, &dproxy);
  for (double& v : dproxy.values()) v *= w.proxy;
  const Tensor du = scm_.backward(dz_causal, dproxy);

  Tensor dmu, dlv;
  kl_standard_normal(exo_.mu, exo_.logvar, &dmu, &dlv);
  for (double& v : dmu.values()) v *= w.klu;
  for (double& v : dlv.values()) v *= w.klu;
  const Tensor dz_enc = encoder_.backward(du, dmu, dlv);
  for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += dz_enc[i];
  return dz;
}

}  // namespace mucald
