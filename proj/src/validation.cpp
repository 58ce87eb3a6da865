#include "mucald/validation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "mucald/crdm.hpp"
#include "mucald/daca.hpp"
#include "mucald/gradcheck.hpp"
#include "mucald/metrics.hpp"
#include "mucald/objective.hpp"
#include "mucald/runtime.hpp"

namespace mucald {
namespace {

constexpr double kEps = 1e-6;

Tensor randn(Shape shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = g(rng);
  return t;
}

Tensor uniform_like(const Tensor& t, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor w(t.shape());
  for (double& v : w.values()) v = u(rng);
  return w;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void perturb(const std::vector<ParamRef>& params, Rng& rng) {
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (const auto& p : params)
    for (double& v : p.tensor->values()) v += u(rng);
}

// |x| >= 0.1 so no probe crosses the ReLU kink.
Tensor away_from_kink(Shape shape, Rng& rng) {
  Tensor t = randn(std::move(shape), rng);
  for (double& v : t.values())
    if (std::abs(v) < 0.1) v = v < 0 ? -0.1 - std::abs(v) : 0.1 + v;
  return t;
}

void layer_checks(std::uint64_t seed, std::vector<CheckResult>& out) {
  Rng rng(seed);
  auto add = [&](std::string name, double err) {
    out.push_back({"layer." + std::move(name), err, kGradTolerance});
  };
  Linear lin("lin", 4, 3, rng);
  add("linear", grad_check(lin, randn({5, 4}, rng)));
  Conv2d conv("conv", 2, 3, 3, rng);
  add("conv3x3", grad_check(conv, randn({2, 2, 5, 4}, rng)));
  Conv2d point("conv1x1", 3, 2, 1, rng);
  add("conv1x1", grad_check(point, randn({2, 3, 4, 4}, rng)));
  const Tensor x4 = randn({2, 3, 4, 4}, rng);
  ActivationLayer sig("sig", Activation::kSigmoid), th("tanh", Activation::kTanh),
      soft("softmax", Activation::kSoftmaxChannel), relu("relu", Activation::kRelu);
  add("sigmoid", grad_check(sig, x4));
  add("tanh", grad_check(th, x4));
  add("softmax", grad_check(soft, x4));
  add("relu", grad_check(relu, away_from_kink({2, 3, 4, 4}, rng)));
  AvgPool2 pool("pool");
  add("avgpool", grad_check(pool, x4));
  Upsample2 up("up");
  add("upsample", grad_check(up, x4));
  GlobalMeanPool gmp("gmp");
  add("global_mean_pool", grad_check(gmp, x4));
  RowNormalize norm("norm");
  add("row_normalize", grad_check(norm, randn({3, 5}, rng)));
  Sequential seq("seq");
  seq.emplace<Conv2d>("seq.conv", 3, 4, 3, rng);
  seq.emplace<ActivationLayer>("seq.tanh", Activation::kTanh);
  seq.emplace<AvgPool2>("seq.pool");
  seq.emplace<Upsample2>("seq.up");
  seq.emplace<ActivationLayer>("seq.sm", Activation::kSoftmaxChannel);
  add("sequential", grad_check(seq, x4));
}

void crdm_checks(std::uint64_t seed, std::vector<CheckResult>& out) {
  Rng rng(seed ^ 0xC4D3ULL);
  {
    NeuralScm scm(4, {{0, 1, 1.0}, {1, 3, 1.0}, {0, 2, 1.0}, {2, 3, 1.0}}, 9, 5, 3, rng);
    Tensor u = randn({3, 9}, rng);
    const Tensor rz = uniform_like(Tensor({3, 4}), rng), rp = uniform_like(Tensor({3, 3}), rng);
    auto loss = [&] {
      auto o = scm.forward(u);
      return dot(rz, o.z_causal) + dot(rp, o.proxy_pred);
    };
    zero_grads(scm.parameters());
    scm.forward(u);
    const Tensor du = scm.backward(rz, rp);
    auto probes = param_probes(scm.parameters());
    probes.push_back({"u", u.values(), du.storage()});
    out.push_back({"crdm.scm", check_gradients(loss, probes, kEps).max_relative_error,
                   kGradTolerance});
  }
  const auto sched = cosine_schedule(100);
  CrdmConfig cfg;
  cfg.channels = 4;
  cfg.d_u = 6;
  cfg.enc_hidden = 6;
  cfg.scm_hidden = 4;
  cfg.proxy_dim = 3;
  cfg.den_hidden = 5;
  cfg.time_dim = 4;
  Crdm crdm(cfg, 3, {{0, 1, 0.9}, {1, 2, 0.5}}, rng);
  perturb(crdm.denoiser().parameters(), rng);
  Tensor z = randn({3, 4, 4, 4}, rng);
  ProxyBatch proxy{randn({3, 3}, rng), {true, false, true}};
  const AuxWeights w{0.7, 0.5, 0.3, 0.2};
  const Tensor r = uniform_like(z, rng);
  const std::uint64_t noise = rng();
  auto loss = [&] {
    Rng nrng(noise);
    auto s = crdm.forward(z, proxy, 25, true, sched, nrng);
    return dot(r, s.wire) + w.proxy * s.proxy + w.diff * s.diff + w.klu * s.klu + w.klz * s.klz;
  };
  zero_grads(crdm.parameters());
  Rng nrng(noise);
  crdm.forward(z, proxy, 25, true, sched, nrng);
  const Tensor dz = crdm.backward(r, w);
  auto probes = param_probes(crdm.parameters());
  probes.push_back({"z", z.values(), dz.storage()});
  out.push_back({"crdm.end_to_end", check_gradients(loss, probes, kEps).max_relative_error,
                 kGradTolerance});
}

void daca_checks(std::uint64_t seed, std::vector<CheckResult>& out) {
  Rng rng(seed ^ 0xDACAULL);
  DomainDiscriminator disc(3, 8, 4, rng);
  Tensor z = randn({5, 3, 4, 4}, rng);
  const std::vector<std::size_t> labels = {0, 1, 2, 3, 1};
  auto ce = [&] { return cross_entropy(disc.forward(z), labels); };

  zero_grads(disc.parameters());
  Tensor dl;
  cross_entropy(disc.forward(z), labels, &dl);
  const Tensor dz = disc.backward(dl);
  auto probes = param_probes(disc.parameters());
  probes.push_back({"z", z.values(), dz.storage()});
  out.push_back({"daca.discriminator", check_gradients(ce, probes, kEps).max_relative_error,
                 kGradTolerance});

  // Upstream path: the reversed gradient divided by -alpha*lambda must be dCE/dz.
  const double alpha = 0.6, lambda = 0.7;
  zero_grads(disc.parameters());
  const auto adv = adversarial_loss(disc, z, labels, alpha, lambda);
  std::vector<double> unreversed(adv.upstream.size());
  for (std::size_t i = 0; i < unreversed.size(); ++i)
    unreversed[i] = adv.upstream[i] / (-alpha * lambda);
  std::vector<GradProbe> up{{"z", z.values(), unreversed}};
  double err = check_gradients(ce, up, kEps).max_relative_error;
  // Discriminator path: its parameters see the plain cross-entropy gradient.
  auto dp = param_probes(disc.parameters());
  err = std::max(err, check_gradients(ce, dp, kEps).max_relative_error);
  out.push_back({"daca.dual_path", err, kGradTolerance});
}

void dice_check(std::uint64_t seed, std::vector<CheckResult>& out) {
  Rng rng(seed ^ 0xD1CEULL);
  Tensor probs = activation(randn({2, 3, 3, 3}, rng), Activation::kSoftmaxChannel);
  std::vector<std::uint8_t> lab(18);
  for (auto& l : lab) l = static_cast<std::uint8_t>(rng() % 3);
  Tensor grad;
  soft_dice_loss(probs, lab, &grad);
  std::vector<GradProbe> probes{{"probs", probs.values(), grad.storage()}};
  out.push_back({"objective.soft_dice",
                 check_gradients([&] { return soft_dice_loss(probs, lab); }, probes, kEps)
                     .max_relative_error,
                 kGradTolerance});
}

void composite_check(std::uint64_t seed, std::vector<CheckResult>& out) {
  RunConfig cfg;
  cfg.clients = 2;
  cfg.model.fe_width1 = 2;
  cfg.model.fe_width2 = 3;
  cfg.model.ss_width = 3;
  cfg.model.be_width = 2;
  cfg.model.d_u = 4;
  cfg.model.enc_hidden = 4;
  cfg.model.scm_hidden = 3;
  cfg.model.den_hidden = 4;
  cfg.model.time_dim = 4;
  cfg.model.disc_hidden = 4;
  cfg.proxy_features = {"area", "perimeter", "mean_intensity"};
  const ModelSpec spec = ModelSpec::from_config(cfg, 3, {{0, 1, 0.5}, {1, 2, -0.4}});
  ClientModel model(spec, InitSeeds::derive(seed, 1));

  Rng rng(seed ^ 0xC0DEULL);
  const std::size_t b = 2, s = 8, classes = 2;
  Batch batch;
  batch.images = randn({b, 1, s, s}, rng);
  batch.labels.resize(b * s * s);
  for (auto& l : batch.labels) l = static_cast<std::uint8_t>(rng() % classes);
  batch.classes = classes;
  batch.client = 1;
  batch.proxy.target = randn({b, 3}, rng);
  batch.proxy.valid.assign(b, true);

  const auto sched = cosine_schedule(100, 0.008);
  StepOptions o;
  o.weights = LossWeights{1.0, 0.3, 0.2, 0.05, 0.05, 0.7};
  o.alpha = 0.6;
  o.t1 = 7;
  o.t2 = 12;
  o.noise_seed = rng();
  o.quantize = false;
  zero_grads(model.all_params());
  model.run(batch, o, sched, true);
  auto upstream = param_probes(model.upstream_params());
  auto disc = param_probes(model.discriminator_params());
  // Upstream parameters see the reversed adversarial term; discriminators
  // their own cross-entropy.
  const double lam = o.weights.adv, a = o.alpha;
  const auto up = check_gradients(
      [&] {
        const auto r = model.run(batch, o, sched, false);
        return r.loss.total - (1.0 + a) * lam * (r.ce1 + r.ce2);
      },
      upstream, kEps, 12);
  const auto dn = check_gradients(
      [&] {
        const auto r = model.run(batch, o, sched, false);
        return r.ce1 + r.ce2;
      },
      disc, kEps);
  out.push_back({"composite.upstream", up.max_relative_error, kGradTolerance});
  out.push_back({"composite.discriminators", dn.max_relative_error, kGradTolerance});
}

// ----------------------------------------------------------- metric oracles

struct Brute {
  double dice = 0, iou_wb = 0, iou_nb = 0, precision = 0, recall = 0, f1 = 0, hd95 = 0, assd = 0;
};

double brute_percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double rank = q * static_cast<double>(v.size() - 1);
  const double lo = std::floor(rank);
  const auto i = static_cast<std::size_t>(lo);
  if (i + 1 >= v.size()) return v.back();
  return (1.0 - (rank - lo)) * v[i] + (rank - lo) * v[i + 1];
}

std::vector<std::pair<int, int>> brute_boundary(const LabelMap& m, int cls) {
  std::vector<std::pair<int, int>> out;
  const int h = static_cast<int>(m.height), w = static_cast<int>(m.width);
  const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (m.at(y, x) != cls) continue;
      int inside = 0;
      for (int k = 0; k < 4; ++k) {
        const int yy = y + dy[k], xx = x + dx[k];
        if (yy >= 0 && yy < h && xx >= 0 && xx < w && m.at(yy, xx) == cls) ++inside;
      }
      if (inside < 4) out.emplace_back(y, x);
    }
  return out;
}

// Every directed nearest-neighbour distance by exhaustive pair search.
std::vector<double> all_pairs(const std::vector<std::pair<int, int>>& a,
                              const std::vector<std::pair<int, int>>& b) {
  std::vector<double> d;
  auto nearest = [](std::pair<int, int> p, const std::vector<std::pair<int, int>>& set) {
    double best = 1e300;
    for (auto q : set)
      best = std::min(best, std::hypot(double(p.first - q.first), double(p.second - q.second)));
    return best;
  };
  for (auto p : a) d.push_back(nearest(p, b));
  for (auto p : b) d.push_back(nearest(p, a));
  return d;
}

Brute brute_seg(const LabelMap& pred, const LabelMap& truth, std::size_t classes) {
  Brute r;
  double iou_all = 0, n_all = 0, iou_fg = 0, dice = 0, f1 = 0, n_fg = 0;
  double prec = 0, n_prec = 0, rec = 0, n_rec = 0, hsum = 0, asum = 0, n_dist = 0;
  const double diag = std::hypot(double(pred.height), double(pred.width));
  for (std::size_t k = 0; k < classes; ++k) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool p = pred.labels[i] == k, t = truth.labels[i] == k;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    if (tp + fp + fn > 0) {
      iou_all += tp / (tp + fp + fn);
      ++n_all;
    }
    if (k == 0) continue;
    const double pr = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double rc = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    if (tp + fp > 0) prec += pr, ++n_prec;
    if (tp + fn > 0) rec += rc, ++n_rec;
    if (tp + fp + fn == 0) continue;
    iou_fg += tp / (tp + fp + fn);
    dice += 2 * tp / (2 * tp + fp + fn);
    f1 += pr + rc > 0 ? 2 * pr * rc / (pr + rc) : 0.0;
    ++n_fg;
    const auto a = brute_boundary(pred, static_cast<int>(k));
    const auto b = brute_boundary(truth, static_cast<int>(k));
    if (a.empty() || b.empty()) {
      hsum += diag;
      asum += diag;
    } else {
      const auto d = all_pairs(a, b);
      hsum += brute_percentile(d, 0.95);
      double s = 0;
      for (double v : d) s += v;
      asum += s / static_cast<double>(d.size());
    }
    ++n_dist;
  }
  auto mean = [](double s, double n) { return n > 0 ? s / n : 0.0; };
  r.iou_wb = mean(iou_all, n_all);
  r.iou_nb = mean(iou_fg, n_fg);
  r.dice = mean(dice, n_fg);
  r.f1 = mean(f1, n_fg);
  r.precision = mean(prec, n_prec);
  r.recall = mean(rec, n_rec);
  r.hd95 = mean(hsum, n_dist);
  r.assd = mean(asum, n_dist);
  return r;
}

double brute_psnr(const std::vector<double>& x, const std::vector<double>& y) {
  double lo = x[0], hi = x[0], se = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    lo = std::min(lo, x[i]);
    hi = std::max(hi, x[i]);
    se += (x[i] - y[i]) * (x[i] - y[i]);
  }
  const double peak = std::max(hi - lo, 1e-6), m = se / static_cast<double>(x.size());
  if (m == 0) return kPsnrCap;
  return std::min(kPsnrCap, 20.0 * std::log10(peak) - 10.0 * std::log10(m));
}

// Moments from raw sums, E[xy] - E[x]E[y].
double brute_ssim(const std::vector<double>& x, const std::vector<double>& y, std::size_t n) {
  const double range = std::max(*std::max_element(x.begin(), x.end()) -
                                    *std::min_element(x.begin(), x.end()),
                                1e-6);
  const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
  const std::size_t win = n < 7 ? n : 7;
  double total = 0;
  std::size_t windows = 0;
  for (std::size_t r = 0; r + win <= n; ++r)
    for (std::size_t c = 0; c + win <= n; ++c) {
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      for (std::size_t i = r; i < r + win; ++i)
        for (std::size_t j = c; j < c + win; ++j) {
          const double a = x[i * n + j], b = y[i * n + j];
          sx += a, sy += b, sxx += a * a, syy += b * b, sxy += a * b;
        }
      const double m = static_cast<double>(win * win);
      const double mx = sx / m, my = sy / m;
      const double vx = sxx / m - mx * mx, vy = syy / m - my * my, cxy = sxy / m - mx * my;
      total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++windows;
    }
  return total / static_cast<double>(windows);
}

// Blobs of random classes over background, optionally with speckle.
LabelMap random_mask(std::size_t n, std::size_t classes, Rng& rng) {
  LabelMap m(n, n);
  const std::size_t blobs = rng() % 5;
  for (std::size_t b = 0; b < blobs; ++b) {
    const auto cls = static_cast<std::uint8_t>(1 + rng() % (classes - 1));
    const double cy = double(rng() % n), cx = double(rng() % n), r = 1.0 + double(rng() % 6);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x)
        if (std::hypot(double(y) - cy, double(x) - cx) <= r) m.at(y, x) = cls;
  }
  if (rng() % 2) {
    for (int s = 0; s < 6; ++s) m.labels[rng() % m.size()] = static_cast<std::uint8_t>(rng() % classes);
  }
  return m;
}

}  // namespace

std::vector<CheckResult> grad_check_suite(std::uint64_t seed) {
  std::vector<CheckResult> out;
  layer_checks(seed, out);
  crdm_checks(seed, out);
  daca_checks(seed, out);
  dice_check(seed, out);
  composite_check(seed, out);
  return out;
}

std::vector<CheckResult> metrics_oracle_suite(std::uint64_t seed, std::size_t cases) {
  static const char* names[] = {"Dice",   "IoU_WB", "IoU_NB", "Precision", "Recall",
                                "F1",     "HD95",   "ASSD",   "PSNR",      "SSIM"};
  std::vector<double> worst(10, 0.0);
  Rng rng(seed);
  std::normal_distribution<double> g;
  const std::size_t n = 16;
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t classes = 2 + rng() % 4;
    const LabelMap truth = random_mask(n, classes, rng);
    // Half the cases predict a perturbed copy of the truth.
    LabelMap pred = random_mask(n, classes, rng);
    if (c % 2 == 0) {
      pred = truth;
      for (int s = 0; s < 20; ++s) pred.labels[rng() % pred.size()] = static_cast<std::uint8_t>(rng() % classes);
    }
    const SegMetrics m = seg_metrics(pred, truth, classes);
    const Brute b = brute_seg(pred, truth, classes);
    const double got[8] = {m.dice, m.iou_wb, m.iou_nb, m.precision, m.recall, m.f1, m.hd95, m.assd};
    const double want[8] = {b.dice, b.iou_wb, b.iou_nb, b.precision, b.recall, b.f1, b.hd95, b.assd};
    for (int i = 0; i < 8; ++i) worst[i] = std::max(worst[i], std::abs(got[i] - want[i]));

    Tensor x({1, n, n}), y({1, n, n});
    const double noise = 0.02 + 0.5 * std::uniform_real_distribution<double>()(rng);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] = g(rng);
      y[i] = x[i] + noise * g(rng);
    }
    const std::vector<double> xv(x.values().begin(), x.values().end()),
        yv(y.values().begin(), y.values().end());
    const ReconMetrics r = recon_metrics(x, y);
    worst[8] = std::max(worst[8], std::abs(r.psnr - brute_psnr(xv, yv)));
    worst[9] = std::max(worst[9], std::abs(r.ssim - brute_ssim(xv, yv, n)));
  }
  std::vector<CheckResult> out;
  for (int i = 0; i < 10; ++i) out.push_back({std::string("metric.") + names[i], worst[i], kOracleTolerance});
  return out;
}

bool all_pass(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.pass(); });
}

std::string format_results(const std::vector<CheckResult>& results) {
  std::string s;
  char line[160];
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-28s %.3e  (< %.0e)  %s\n", r.name.c_str(), r.error,
                  r.tolerance, r.pass() ? "ok" : "FAIL");
    s += line;
  }
  return s;
}

}  // namespace mucald
