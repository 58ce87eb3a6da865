#include "mucald/split_model.hpp"

#include <algorithm>
#include <random>

#include "mucald/errors.hpp"

namespace mucald {
namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix(a ^ splitmix(b)); }

void append(std::vector<ParamRef>& out, const std::vector<ParamRef>& more) {
  out.insert(out.end(), more.begin(), more.end());
}

void add_into(Tensor& dst, const Tensor& src) {
  require_same_shape(dst, src, "gradient sum");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

ModelSpec ModelSpec::from_config(const RunConfig& cfg, std::size_t proxy_dim,
                                 std::vector<Edge> edges) {
  ModelSpec s;
  s.clients = cfg.clients;
  s.widths = cfg.model;
  s.crdm.d_u = cfg.model.d_u;
  s.crdm.enc_hidden = cfg.model.enc_hidden;
  s.crdm.scm_hidden = cfg.model.scm_hidden;
  s.crdm.proxy_dim = proxy_dim;
  s.crdm.den_hidden = cfg.model.den_hidden;
  s.crdm.time_dim = cfg.model.time_dim;
  s.crdm.diffusion = cfg.diffusion_enabled();
  s.crdm.forward_noise = cfg.forward_noise();
  s.graph_nodes = proxy_dim;
  if (cfg.causal_edges()) s.edges = std::move(edges);
  s.use_crdm = cfg.crdm_enabled();
  s.use_daca = cfg.daca_enabled();
  return s;
}

InitSeeds InitSeeds::derive(std::uint64_t run_seed, std::size_t client) {
  const std::uint64_t per_client = mix(run_seed, 0x1000 + client);
  InitSeeds s;
  s.fe = mix(per_client, 1);
  s.be = mix(per_client, 3);
  s.ss = mix(run_seed, 2);
  s.crdm1 = mix(run_seed, 4);
  s.crdm2 = mix(run_seed, 5);
  s.disc1 = mix(run_seed, 6);
  s.disc2 = mix(run_seed, 7);
  return s;
}

ClientModel::ClientModel(const ModelSpec& spec, const InitSeeds& seeds) : spec_(spec) {
  const auto& w = spec.widths;
  {
    Rng rng(seeds.fe);
    fe_.emplace<Conv2d>("fe.conv1", spec.in_channels, w.fe_width1, 3, rng);
    fe_.emplace<ActivationLayer>("fe.relu1", Activation::kRelu);
    fe_.emplace<AvgPool2>("fe.pool");
    fe_.emplace<Conv2d>("fe.conv2", w.fe_width1, w.fe_width2, 3, rng);
    fe_.emplace<ActivationLayer>("fe.relu2", Activation::kRelu);
  }
  {
    Rng rng(seeds.ss);
    ss_.emplace<Conv2d>("ss.conv1", w.fe_width2, w.ss_width, 3, rng);
    ss_.emplace<ActivationLayer>("ss.relu1", Activation::kRelu);
    ss_.emplace<Conv2d>("ss.conv2", w.ss_width, w.ss_width, 3, rng);
    ss_.emplace<ActivationLayer>("ss.relu2", Activation::kRelu);
  }
  {
    Rng rng(seeds.be);
    be_.emplace<Upsample2>("be.up");
    be_.emplace<Conv2d>("be.conv1", w.ss_width, w.be_width, 3, rng);
    be_.emplace<ActivationLayer>("be.relu1", Activation::kRelu);
    be_.emplace<Conv2d>("be.conv2", w.be_width, w.be_width, 3, rng);
    be_.emplace<ActivationLayer>("be.relu2", Activation::kRelu);
    be_.emplace<Conv2d>("be.head", w.be_width, kMaxClasses, 1, rng);
  }
  if (spec.use_crdm) {
    CrdmConfig c1 = spec.crdm, c2 = spec.crdm;
    c1.channels = w.fe_width2;
    c2.channels = w.ss_width;
    Rng r1(seeds.crdm1), r2(seeds.crdm2);
    crdm1_.emplace(c1, spec.graph_nodes, spec.edges, r1);
    crdm2_.emplace(c2, spec.graph_nodes, spec.edges, r2);
  }
  if (spec.use_daca) {
    Rng r1(seeds.disc1), r2(seeds.disc2);
    disc1_.emplace(w.fe_width2, w.disc_hidden, spec.clients, r1);
    disc2_.emplace(w.ss_width, w.disc_hidden, spec.clients, r2);
  }
}

std::vector<ParamRef> ClientModel::crdm1_params() {
  return crdm1_ ? crdm1_->parameters() : std::vector<ParamRef>{};
}
std::vector<ParamRef> ClientModel::crdm2_params() {
  return crdm2_ ? crdm2_->parameters() : std::vector<ParamRef>{};
}
std::vector<ParamRef> ClientModel::disc1_params() {
  return disc1_ ? disc1_->parameters() : std::vector<ParamRef>{};
}
std::vector<ParamRef> ClientModel::disc2_params() {
  return disc2_ ? disc2_->parameters() : std::vector<ParamRef>{};
}

std::vector<ParamRef> ClientModel::upstream_params() {
  std::vector<ParamRef> out = fe_params();
  append(out, crdm1_params());
  append(out, ss_params());
  append(out, crdm2_params());
  append(out, be_params());
  return out;
}

std::vector<ParamRef> ClientModel::discriminator_params() {
  std::vector<ParamRef> out = disc1_params();
  append(out, disc2_params());
  return out;
}

std::vector<ParamRef> ClientModel::all_params() {
  std::vector<ParamRef> out = upstream_params();
  append(out, discriminator_params());
  return out;
}

std::vector<ParamRef> ClientModel::shared_params(Method m) {
  std::vector<ParamRef> out;
  if (m == Method::kBaseline) {
    out = fe_params();
    append(out, ss_params());
    append(out, be_params());
    return out;
  }
  out = ss_params();
  append(out, crdm1_params());
  append(out, crdm2_params());
  append(out, disc1_params());
  append(out, disc2_params());
  return out;
}

std::vector<ParamRef> ClientModel::local_params(Method m) {
  if (m == Method::kBaseline) {
    std::vector<ParamRef> out = crdm1_params();
    append(out, crdm2_params());
    append(out, disc1_params());
    append(out, disc2_params());
    return out;
  }
  std::vector<ParamRef> out = fe_params();
  append(out, be_params());
  return out;
}

Tensor ClientModel::transmit(const Tensor& wire, const StepOptions& opts, std::uint8_t client,
                             std::uint8_t split, int t) {
  if (!opts.quantize) return wire;
  const std::string bytes = encode_frame(
      make_frame(opts.round, client, split, static_cast<std::uint16_t>(t), wire));
  Tensor rx = frame_tensor(decode_frame(bytes));
  last_frames_.push_back(bytes);
  return rx;
}

StepResult ClientModel::run(const Batch& batch, const StepOptions& opts,
                            const DiffusionSchedule& sched, bool backward) {
  const std::size_t b = batch.images.dim(0), classes = batch.classes;
  if (classes < 2 || classes > kMaxClasses) {
    throw ConfigError("batch.classes: must be in [2, " + std::to_string(kMaxClasses) + "]");
  }
  if (batch.labels.size() != b * batch.images.dim(2) * batch.images.dim(3)) {
    throw DimensionError("batch labels do not match the image batch");
  }
  Rng rng(opts.noise_seed);
  std::uniform_int_distribution<int> pick_t(1, std::max(1, opts.t_max));
  const int t1 = opts.t1 >= 0 ? opts.t1 : pick_t(rng);
  const int t2 = opts.t2 >= 0 ? opts.t2 : pick_t(rng);
  const std::vector<std::size_t> ids(b, batch.client);
  last_frames_.clear();
  StepResult r;
  const LossWeights& w = opts.weights;

  auto split_forward = [&](std::optional<Crdm>& crdm, const Tensor& z, int t, SplitTrace& trace,
                           CrdmStep& step) {
    trace.clean = z;
    if (crdm) {
      step = crdm->forward(z, batch.proxy, t, opts.train, sched, rng);
      trace.noisy = step.z_noisy;
      trace.wire = step.wire;
      trace.t = step.t;
    } else {
      trace.wire = z;
    }
  };
  auto discriminate = [&](std::optional<DomainDiscriminator>& disc, const Tensor& rx, double& ce,
                          double& acc) {
    AdversarialResult a;
    if (!disc) return a;
    if (backward) {
      a = adversarial_loss(*disc, rx, ids, opts.alpha, w.adv);
    } else {
      Tensor logits = disc->forward(rx);
      a.loss = cross_entropy(logits, ids);
    }
    ce = a.loss;
    acc = a.accuracy;
    return a;
  };

  CrdmStep c1, c2;
  split_forward(crdm1_, fe_.forward(batch.images), t1, r.s1, c1);
  const Tensor rx1 = transmit(r.s1.wire, opts, batch.client, 1, r.s1.t);
  const AdversarialResult a1 = discriminate(disc1_, rx1, r.ce1, r.acc1);

  split_forward(crdm2_, ss_.forward(rx1), t2, r.s2, c2);
  const Tensor rx2 = transmit(r.s2.wire, opts, batch.client, 2, r.s2.t);
  const AdversarialResult a2 = discriminate(disc2_, rx2, r.ce2, r.acc2);

  const Tensor logits = be_.forward(rx2);
  const bool sliced = classes < kMaxClasses;
  const Tensor head = sliced ? split_channels(logits, {classes, kMaxClasses - classes})[0] : logits;
  r.probs = softmax_.forward(head);
  Tensor dprobs;
  LossBreakdown parts;
  parts.seg = soft_dice_loss(r.probs, batch.labels, backward ? &dprobs : nullptr);
  parts.proxy1 = c1.proxy;
  parts.proxy2 = c2.proxy;
  parts.diff1 = c1.diff;
  parts.diff2 = c2.diff;
  parts.klu = c1.klu + c2.klu;
  parts.klz = c1.klz + c2.klz;
  parts.adv1 = r.ce1;
  parts.adv2 = r.ce2;
  r.loss = total_loss(parts, w);
  if (!backward) return r;

  for (double& v : dprobs.values()) v *= w.seg;
  Tensor dhead = softmax_.backward(dprobs);
  if (sliced) {
    const Tensor rest({b, kMaxClasses - classes, logits.dim(2), logits.dim(3)});
    dhead = concat_channels({&dhead, &rest});
  }
  const AuxWeights aux{w.proxy, w.diff, w.klu, w.klz};
  Tensor d_rx2 = be_.backward(dhead);
  if (disc2_) add_into(d_rx2, a2.upstream);
  const Tensor dh = crdm2_ ? crdm2_->backward(d_rx2, aux) : d_rx2;
  Tensor d_rx1 = ss_.backward(dh);
  if (disc1_) add_into(d_rx1, a1.upstream);
  const Tensor dz1 = crdm1_ ? crdm1_->backward(d_rx1, aux) : d_rx1;
  fe_.backward(dz1);
  return r;
}

ClientOptimizers::ClientOptimizers(ClientModel& m, double lr)
    : fe(m.fe_params(), AdamConfig{lr}),
      ss(m.ss_params(), AdamConfig{lr}),
      be(m.be_params(), AdamConfig{lr}),
      crdm1(m.crdm1_params(), AdamConfig{lr}),
      crdm2(m.crdm2_params(), AdamConfig{lr}),
      disc1(m.disc1_params(), AdamConfig{lr}),
      disc2(m.disc2_params(), AdamConfig{lr}) {}

void ClientOptimizers::step() {
  for (Adam* a : {&fe, &ss, &be, &crdm1, &crdm2, &disc1, &disc2}) a->step();
}

std::vector<double> per_sample_dice_loss(const Tensor& probs,
                                         const std::vector<std::uint8_t>& labels) {
  const std::size_t b = probs.dim(0), c = probs.dim(1), hw = probs.dim(2) * probs.dim(3);
  if (labels.size() != b * hw) throw DimensionError("per_sample_dice_loss: label count");
  std::vector<double> out(b);
  for (std::size_t n = 0; n < b; ++n) {
    Tensor one({1, c, probs.dim(2), probs.dim(3)});
    std::copy(probs.data() + n * c * hw, probs.data() + (n + 1) * c * hw, one.data());
    const std::vector<std::uint8_t> lab(labels.begin() + static_cast<std::ptrdiff_t>(n * hw),
                                        labels.begin() + static_cast<std::ptrdiff_t>((n + 1) * hw));
    out[n] = soft_dice_loss(one, lab);
  }
  return out;
}

std::vector<std::uint8_t> argmax_labels(const Tensor& probs) {
  const std::size_t b = probs.dim(0), c = probs.dim(1), hw = probs.dim(2) * probs.dim(3);
  std::vector<std::uint8_t> out(b * hw);
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t p = 0; p < hw; ++p) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c; ++k) {
        if (probs[(n * c + k) * hw + p] > probs[(n * c + best) * hw + p]) best = k;
      }
      out[n * hw + p] = static_cast<std::uint8_t>(best);
    }
  return out;
}

}  // namespace mucald
