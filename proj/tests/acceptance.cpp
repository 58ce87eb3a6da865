// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. Arguments select a subset, e.g. `acceptance 4 10`.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "mucald/causal_discovery.hpp"
#include "mucald/cli.hpp"
#include "mucald/crdm.hpp"
#include "mucald/errors.hpp"
#include "mucald/frame.hpp"
#include "mucald/gradcheck.hpp"
#include "mucald/privacy.hpp"
#include "mucald/runtime.hpp"
#include "mucald/validation.hpp"

using namespace mucald;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string f(const char* spec, double v) {
  char b[64];
  std::snprintf(b, sizeof b, spec, v);
  return b;
}

fs::path work_dir() {
  static const fs::path p = [] {
    auto d = fs::temp_directory_path() / "mucald_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string worst_of(const std::vector<CheckResult>& r) {
  const auto it = std::max_element(r.begin(), r.end(), [](const auto& a, const auto& b) {
    return a.error / a.tolerance < b.error / b.tolerance;
  });
  return it->name + " " + f("%.2e", it->error);
}

// ------------------------------------------------------------ 1, 2

Outcome gradients() {
  const auto t0 = Clock::now();
  const auto r = grad_check_suite(1);
  const double secs = since(t0);
  std::printf("%s", format_results(r).c_str());
  return {all_pass(r) && secs < 60.0,
          std::to_string(r.size()) + " checks, worst " + worst_of(r) + ", " + f("%.1f s", secs)};
}

Outcome metric_oracles() {
  const auto t0 = Clock::now();
  const auto r = metrics_oracle_suite(7, 20);
  const double secs = since(t0);
  std::printf("%s", format_results(r).c_str());
  return {all_pass(r) && secs < 30.0, "20 cases, worst " + worst_of(r) + ", " + f("%.2f s", secs)};
}

// ------------------------------------------------------------ 3

ModelSpec small_spec(std::size_t clients) {
  RunConfig cfg;
  cfg.clients = clients;
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
  return ModelSpec::from_config(cfg, 3, {{0, 1, 0.5}});
}

Outcome fedavg_contract() {
  Rng rng(31);
  std::normal_distribution<double> g;
  double worst = 0.0;
  // Hand-computed weighted means on random sets.
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + rng() % 6, n = 1 + rng() % 12;
    std::vector<std::vector<double>> sets(k, std::vector<double>(n));
    std::vector<double> w(k);
    for (auto& s : sets)
      for (auto& v : s) v = g(rng);
    for (auto& v : w) v = 0.5 + static_cast<double>(rng() % 50);
    const auto got = fedavg(sets, w);
    const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      double num = 0.0;
      for (std::size_t i = 0; i < k; ++i) num += w[i] * sets[i][j];
      worst = std::max(worst, std::abs(got[j] - num / wsum));
    }
  }

  // Three aggregation rounds on real client models with simulated local
  // updates: local partitions untouched, shared copies equal the weighted mean.
  bool local_ok = true, shared_ok = true;
  const std::size_t K = 3;
  const ModelSpec spec = small_spec(K);
  std::vector<std::unique_ptr<ClientModel>> models;
  std::vector<ClientModel*> ptrs;
  for (std::size_t k = 0; k < K; ++k) {
    models.push_back(std::make_unique<ClientModel>(spec, InitSeeds::derive(5, k)));
    ptrs.push_back(models.back().get());
  }
  const std::vector<double> weights = {200, 150, 120};
  for (int round = 0; round < 3; ++round) {
    std::vector<std::vector<double>> shared;
    std::vector<std::uint64_t> fe, be;
    for (auto* m : ptrs) {
      for (const auto& p : m->all_params())
        for (double& v : p.tensor->values()) v += 0.01 * g(rng);
      shared.push_back(flatten_params(m->shared_params(Method::kMucald)));
      fe.push_back(param_hash(m->fe_params()));
      be.push_back(param_hash(m->be_params()));
    }
    const auto rep = aggregate_round(ptrs, weights, Method::kMucald);
    for (std::size_t k = 0; k < K; ++k) {
      local_ok &= param_hash(ptrs[k]->fe_params()) == fe[k] && param_hash(ptrs[k]->be_params()) == be[k];
      shared_ok &= rep.shared_hash[k] == rep.shared_hash[0];
      const auto after = flatten_params(ptrs[k]->shared_params(Method::kMucald));
      for (std::size_t j = 0; j < after.size(); ++j) {
        double num = 0.0;
        for (std::size_t i = 0; i < K; ++i) num += weights[i] * shared[i][j];
        worst = std::max(worst, std::abs(after[j] - num / 470.0));
      }
    }
  }

  // A real 3-round run: every round's broadcast hashes agree across clients.
  RunConfig cfg;
  cfg.clients = 3;
  cfg.rounds = 3;
  cfg.local_epochs = 1;
  cfg.image_size = 16;
  cfg.train = 16;
  cfg.val = 8;
  cfg.test = 8;
  cfg.steps_per_epoch = 2;
  cfg.seed = 3;
  cfg.intercept_clients.clear();
  int rounds_seen = 0;
  RunOptions opt;
  opt.on_round = [&](const RoundReport& r) {
    ++rounds_seen;
    for (const auto& c : r.clients) shared_ok &= c.shared_hash == r.checksum;
  };
  run(cfg, opt);
  return {worst < 1e-12 && local_ok && shared_ok && rounds_seen == 3,
          "max |fedavg - hand| " + f("%.1e", worst) + ", FE/BE unchanged: " +
              (local_ok ? "yes" : "no") + ", shared hashes equal over 3+3 rounds: " +
              (shared_ok ? "yes" : "no")};
}

// ------------------------------------------------------------ 4

Outcome schedule() {
  const auto s = cosine_schedule(100);
  bool mono = true;
  for (int t = 1; t <= 100; ++t) mono &= s.alpha_bar[t] < s.alpha_bar[t - 1];
  Rng rng(8);
  std::normal_distribution<double> g;
  double worst = 0.0;
  for (int t : {1, 10, 25, 50, 75, 100}) {
    Tensor z({10000}), noise({10000});
    for (double& v : z.values()) v = g(rng);
    for (double& v : noise.values()) v = g(rng);
    const Tensor zt = forward_diffuse(z, t, noise, s);
    double m = 0.0, var = 0.0;
    for (double v : zt.values()) m += v;
    m /= 1e4;
    for (double v : zt.values()) var += (v - m) * (v - m);
    var /= 1e4;
    worst = std::max(worst, std::abs(var - 1.0));
  }
  const bool ok = s.alpha_bar[0] == 1.0 && mono && s.alpha_bar[100] < 0.01 && worst <= 0.05;
  return {ok, "alpha_bar[0] = " + f("%g", s.alpha_bar[0]) + ", strictly decreasing: " +
                  (mono ? "yes" : "no") + ", alpha_bar[100] = " + f("%.2e", s.alpha_bar[100]) +
                  ", max |var - 1| = " + f("%.4f", worst)};
}

// ------------------------------------------------------------ 5

Outcome causal_discovery() {
  const auto t0 = Clock::now();
  int exact = 0;
  double h_max = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(1000 + seed);
    std::normal_distribution<double> g;
    std::array<std::size_t, 3> col = {0, 1, 2};
    std::shuffle(col.begin(), col.end(), rng);
    Tensor x({500, 3});
    for (std::size_t i = 0; i < 500; ++i) {
      const double a = g(rng), b = a + 0.1 * g(rng), c = b + 0.1 * g(rng);
      x.at(i, col[0]) = a;
      x.at(i, col[1]) = b;
      x.at(i, col[2]) = c;
    }
    NotearsConfig cfg;
    cfg.seed = seed;
    const CausalGraph gr = fit_notears(x, cfg, NotearsVariant::kLinear);
    std::set<std::pair<std::size_t, std::size_t>> got;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        if (gr.weights.at(i, j) != 0.0) got.insert({i, j});
    const std::set<std::pair<std::size_t, std::size_t>> want = {{col[0], col[1]}, {col[1], col[2]}};
    exact += got == want;
    h_max = std::max(h_max, notears_h(gr.weights));
  }
  // h and its gradient against central differences.
  double fd_worst = 0.0;
  Rng rng(77);
  std::normal_distribution<double> g(0.0, 0.5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 2 + rng() % 5;
    Tensor w({d, d});
    for (double& v : w.values()) v = g(rng);
    const Tensor grad = notears_h_grad(w);
    const double eps = 1e-6;
    std::vector<double> num(w.size()), ana(grad.values().begin(), grad.values().end());
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w[i];
      w[i] = keep + eps;
      const double hp = notears_h(w);
      w[i] = keep - eps;
      const double hm = notears_h(w);
      w[i] = keep;
      num[i] = (hp - hm) / (2 * eps);
    }
    fd_worst = std::max(fd_worst, relative_error(ana, num));
    // h itself against the series definition tr(sum_k (W o W)^k / k!) - d.
    Tensor a({d, d}), term({d, d});
    for (std::size_t i = 0; i < w.size(); ++i) a[i] = w[i] * w[i];
    for (std::size_t i = 0; i < d; ++i) term.at(i, i) = 1.0;
    double tr = 0.0;
    for (int k = 1; k < 60; ++k) {
      Tensor next({d, d});
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
          double s = 0.0;
          for (std::size_t l = 0; l < d; ++l) s += term.at(i, l) * a.at(l, j);
          next.at(i, j) = s / k;
        }
      term = next;
      for (std::size_t i = 0; i < d; ++i) tr += term.at(i, i);
    }
    const double h = notears_h(w);
    fd_worst = std::max(fd_worst, std::abs(h - tr) / std::max(1.0, std::abs(tr)));
  }
  const double secs = since(t0);
  return {exact >= 18 && h_max < 1e-8 && fd_worst < 1e-6 && secs < 120.0,
          "exact edge set in " + std::to_string(exact) + "/20 seeds, max h " + f("%.1e", h_max) +
              ", h/grad check " + f("%.1e", fd_worst) + ", " + f("%.1f s", secs)};
}

// ------------------------------------------------------------ 6, 7, 8

RunConfig desk_config(std::uint64_t seed) {
  RunConfig c;
  c.clients = 5;
  c.rounds = 12;
  c.local_epochs = 5;
  c.steps_per_epoch = 20;
  c.image_size = 16;
  c.seed = seed;
  c.intercept_clients.clear();
  return c;
}

// Per-round client-mean validation IoU N/B.
using Curve = std::vector<double>;

Curve train_curve(RunConfig cfg, const fs::path& out = {}) {
  Curve curve;
  RunOptions opt;
  opt.out_dir = out;
  const auto t0 = Clock::now();
  opt.on_round = [&](const RoundReport& r) {
    curve.push_back(r.mean_iou_nb());
    std::printf("  %s/%s seed %llu round %2d IoU_NB %.4f  (%.0f s)\n",
                std::string(method_name(cfg.method)).c_str(),
                std::string(ablation_name(cfg.ablation)).c_str(),
                static_cast<unsigned long long>(cfg.seed), r.round, r.mean_iou_nb(), since(t0));
    std::fflush(stdout);
  };
  run(cfg, opt);
  return curve;
}

double tail_std(const Curve& c, std::size_t from) {
  const std::size_t n = c.size() - from;
  double m = 0.0, v = 0.0;
  for (std::size_t i = from; i < c.size(); ++i) m += c[i];
  m /= static_cast<double>(n);
  for (std::size_t i = from; i < c.size(); ++i) v += (c[i] - m) * (c[i] - m);
  return std::sqrt(v / static_cast<double>(n));
}

constexpr std::array<std::uint64_t, 3> kSeeds = {1, 2, 3};

struct DeskRuns {
  std::map<std::uint64_t, Curve> full, base;
  double seconds = 0.0;
  double full_seed1_seconds = 0.0;
  fs::path attack_run;  // full model, seed 1, with intercepts
};

DeskRuns& desk_runs() {
  static DeskRuns runs = [] {
    DeskRuns r;
    r.attack_run = work_dir() / "full_seed1";
    const auto t0 = Clock::now();
    for (auto seed : kSeeds) {
      RunConfig cfg = desk_config(seed);
      const auto ts = Clock::now();
      if (seed == 1) {
        cfg.intercept_clients = {0};
        r.full[seed] = train_curve(cfg, r.attack_run);
        r.full_seed1_seconds = since(ts);
      } else {
        r.full[seed] = train_curve(cfg);
      }
      cfg = desk_config(seed);
      cfg.method = Method::kBaseline;
      r.base[seed] = train_curve(cfg);
    }
    r.seconds = since(t0);
    return r;
  }();
  return runs;
}

Outcome stability() {
  auto& r = desk_runs();
  double full_final = 0.0, base_final = 0.0;
  int stabler = 0;
  std::string per_seed;
  for (auto seed : kSeeds) {
    full_final += r.full[seed].back() / kSeeds.size();
    base_final += r.base[seed].back() / kSeeds.size();
    const double sf = tail_std(r.full[seed], 6), sb = tail_std(r.base[seed], 6);
    stabler += sf < sb;
    per_seed += " seed " + std::to_string(seed) + ": final " + f("%.3f", r.full[seed].back()) +
                " vs " + f("%.3f", r.base[seed].back()) + ", std " + f("%.4f", sf) + " vs " +
                f("%.4f", sb) + ";";
  }
  const bool ok = full_final >= base_final + 0.10 && stabler >= 2 && r.seconds < 1200.0;
  return {ok, "IoU_NB full " + f("%.3f", full_final) + " vs baseline " + f("%.3f", base_final) +
                  " (need +0.10), lower rounds 7-12 std in " + std::to_string(stabler) +
                  "/3 seeds, " + f("%.0f s", r.seconds) + ";" + per_seed};
}

Outcome privacy() {
  auto& r = desk_runs();
  const auto t0 = Clock::now();
  bool ok = true;
  std::string detail;
  for (int split : {1, 2}) {
    AttackConfig cfg;
    cfg.seed = 11;
    const AttackReport on = attack_run(r.attack_run, 0, split, true, cfg);
    const AttackReport off = attack_run(r.attack_run, 0, split, false, cfg);
    const double gap = off.attack.mean.psnr - on.attack.mean.psnr;
    const bool fid = on.fidelity.mean.psnr > on.raw_noisy.mean.psnr;
    ok &= gap >= 3.0 && fid;
    detail += " split " + std::to_string(split) + ": attack PSNR on " +
              f("%.2f", on.attack.mean.psnr) + " / off " + f("%.2f", off.attack.mean.psnr) +
              " (gap " + f("%.2f", gap) + " dB), fidelity " + f("%.2f", on.fidelity.mean.psnr) +
              " vs raw-noisy " + f("%.2f", on.raw_noisy.mean.psnr) + ";";
  }
  const double secs = since(t0) + r.full_seed1_seconds;
  ok &= secs < 600.0;
  return {ok, f("%.0f s incl. the training run;", secs) + detail};
}

Outcome ablations() {
  auto& r = desk_runs();
  int ordered = 0;
  std::string detail;
  for (auto seed : kSeeds) {
    RunConfig cfg = desk_config(seed);
    cfg.ablation = Ablation::kNoDiffusion;
    const double nd = train_curve(cfg).back();
    cfg.ablation = Ablation::kNoForwardNoise;
    const double nf = train_curve(cfg).back();
    const double full = r.full[seed].back();
    ordered += nd < full && nf < full;
    detail += " seed " + std::to_string(seed) + ": full " + f("%.3f", full) + ", no-diffusion " +
              f("%.3f", nd) + ", no-forward-noise " + f("%.3f", nf) + ";";
  }
  return {ordered >= 2, "both ablations below full in " + std::to_string(ordered) + "/3 seeds;" + detail};
}

// ------------------------------------------------------------ 9, 10

Outcome determinism() {
  const fs::path dir = work_dir() / "determinism";
  fs::create_directories(dir);
  RunConfig c;
  c.clients = 3;
  c.rounds = 2;
  c.local_epochs = 2;
  c.image_size = 16;
  c.train = 24;
  c.val = 8;
  c.test = 8;
  c.steps_per_epoch = 3;
  c.seed = 21;
  {
    std::ofstream out(dir / "run.ini");
    write_config(out, c);
  }
  std::ostringstream sink;
  for (const char* o : {"a", "b"}) {
    const int code = cli_main({"run", "--config", (dir / "run.ini").string(), "--seed", "21",
                               "--out", (dir / o).string()},
                              sink, sink);
    if (code != 0) return {false, std::string("run exited with ") + std::to_string(code)};
  }
  const std::string a = slurp(dir / "a" / "metrics.csv"), b = slurp(dir / "b" / "metrics.csv");
  return {!a.empty() && a == b,
          "metrics.csv " + std::to_string(a.size()) + " bytes, identical: " + (a == b ? "yes" : "no")};
}

Outcome frame_codec() {
  Rng rng(2024);
  int identical = 0;
  for (int i = 0; i < 1000; ++i) {
    ActivationFrame fr;
    fr.round = static_cast<std::uint32_t>(rng());
    fr.client = static_cast<std::uint8_t>(rng());
    fr.split = static_cast<std::uint8_t>(1 + rng() % 2);
    fr.timestep = static_cast<std::uint16_t>(rng());
    std::size_t n = 1;
    for (std::size_t r = 0, rank = 1 + rng() % 4; r < rank; ++r) {
      fr.dims.push_back(static_cast<std::uint32_t>(1 + rng() % 6));
      n *= fr.dims.back();
    }
    for (std::size_t j = 0; j < n; ++j) {
      const auto bits = static_cast<std::uint32_t>(rng());
      float v;
      std::memcpy(&v, &bits, 4);
      fr.payload.push_back(v);
    }
    const std::string bytes = encode_frame(fr);
    const ActivationFrame back = decode_frame(bytes);
    // Bitwise payload comparison so NaN patterns count too.
    const bool same = back.round == fr.round && back.client == fr.client &&
                      back.split == fr.split && back.timestep == fr.timestep &&
                      back.dims == fr.dims && back.payload.size() == fr.payload.size() &&
                      std::memcmp(back.payload.data(), fr.payload.data(), 4 * n) == 0 &&
                      encode_frame(back) == bytes;
    identical += same;
  }
  ActivationFrame fr = make_frame(3, 1, 2, 25, Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  const std::string good = encode_frame(fr);
  std::string bad = good;
  bad[1] = '?';
  std::string magic_msg;
  try {
    decode_frame(bad);
  } catch (const FrameError& e) {
    magic_msg = e.what();
  }
  int truncations = 0;
  for (std::size_t n = 0; n < good.size(); ++n) {
    try {
      decode_frame(good.substr(0, n));
    } catch (const FrameError&) {
      ++truncations;
    }
  }
  const bool ok = identical == 1000 && magic_msg.find("magic") != std::string::npos &&
                  truncations == static_cast<int>(good.size());
  return {ok, std::to_string(identical) + "/1000 bit-identical, bad magic: '" + magic_msg +
                  "', truncations rejected " + std::to_string(truncations) + "/" +
                  std::to_string(good.size())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Outcome()>>> all = {
      {1, gradients},        {2, metric_oracles}, {3, fedavg_contract}, {4, schedule},
      {5, causal_discovery}, {6, stability},      {7, privacy},         {8, ablations},
      {9, determinism},      {10, frame_codec}};
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  std::vector<std::string> lines;
  bool all_ok = true;
  for (const auto& [id, fn] : all) {
    if (!wanted.empty() && !wanted.count(id)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all_ok &= o.pass;
    char head[32];
    std::snprintf(head, sizeof head, "%s criterion %d: ", o.pass ? "PASS" : "FAIL", id);
    lines.push_back(head + o.detail);
    std::printf("%s\n", lines.back().c_str());
    std::fflush(stdout);
  }
  std::printf("\n==== acceptance summary ====\n");
  for (const auto& l : lines) std::printf("%s\n", l.c_str());
  fs::remove_all(work_dir());
  return all_ok ? 0 : 1;
}
