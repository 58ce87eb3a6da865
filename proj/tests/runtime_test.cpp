#include "mucald/runtime.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "mucald/errors.hpp"
#include "mucald/frame.hpp"
#include "mucald/gradcheck.hpp"

using namespace mucald;

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mucald_runtime_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

ActivationFrame random_frame(Rng& rng) {
  ActivationFrame f;
  f.round = static_cast<std::uint32_t>(rng());
  f.client = static_cast<std::uint8_t>(rng());
  f.split = static_cast<std::uint8_t>(1 + rng() % 2);
  f.timestep = static_cast<std::uint16_t>(rng());
  const std::size_t rank = 1 + rng() % 4;
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    f.dims.push_back(static_cast<std::uint32_t>(1 + rng() % 5));
    n *= f.dims.back();
  }
  // Arbitrary bit patterns, NaNs excluded so operator== is meaningful.
  for (std::size_t i = 0; i < n; ++i) {
    float v;
    do {
      const auto bits = static_cast<std::uint32_t>(rng());
      std::memcpy(&v, &bits, 4);
    } while (std::isnan(v));
    f.payload.push_back(v);
  }
  return f;
}

RunConfig tiny_config() {
  RunConfig c;
  c.rounds = 2;
  c.local_epochs = 2;
  c.clients = 2;
  c.batch_size = 4;
  c.image_size = 16;
  c.train = 8;
  c.val = 4;
  c.test = 4;
  c.steps_per_epoch = 1;
  c.warmup_epochs = 1;
  c.rampup_epochs = 1;
  c.seed = 11;
  c.notears.max_outer_iters = 4;
  c.notears.inner_steps = 30;
  return c;
}

Batch random_batch(std::size_t b, std::size_t s, std::size_t classes, std::size_t proxy_dim,
                   std::uint8_t client, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  Batch batch;
  batch.images = Tensor({b, 1, s, s});
  for (double& v : batch.images.values()) v = g(rng);
  batch.labels.resize(b * s * s);
  for (auto& l : batch.labels) l = static_cast<std::uint8_t>(rng() % classes);
  batch.classes = classes;
  batch.client = client;
  batch.proxy.target = Tensor({b, proxy_dim});
  for (double& v : batch.proxy.target.values()) v = g(rng);
  batch.proxy.valid.assign(b, true);
  return batch;
}

ModelSpec micro_spec() {
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
  return ModelSpec::from_config(cfg, 3, {{0, 1, 0.5}, {1, 2, -0.4}});
}

}  // namespace

// ------------------------------------------------------------ frame codec

TEST(Frame, TwoByTwoLayout) {
  const ActivationFrame f{kFrameVersion, 7, 3, 2, 25, {2, 2}, {1.f, 2.f, 3.f, 4.f}};
  const std::string bytes = encode_frame(f);
  EXPECT_EQ(frame_header_size(2), 23u);
  ASSERT_EQ(bytes.size(), 23u + 16u);
  EXPECT_EQ(bytes.substr(0, 4), "MCSF");
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 7);  // round, little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes[10]), 3);
  EXPECT_EQ(static_cast<unsigned char>(bytes[11]), 2);
  EXPECT_EQ(static_cast<unsigned char>(bytes[14]), 2);  // rank
  float first;
  std::memcpy(&first, bytes.data() + 23, 4);
  EXPECT_EQ(first, 1.f);
  EXPECT_EQ(decode_frame(bytes), f);
}

TEST(Frame, RandomRoundTripsAreBitIdentical) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const auto f = random_frame(rng);
    const std::string bytes = encode_frame(f);
    const auto g = decode_frame(bytes);
    ASSERT_EQ(g, f);
    ASSERT_EQ(encode_frame(g), bytes);
  }
}

TEST(Frame, StreamDecodeAdvancesOffset) {
  Rng rng(8);
  std::vector<ActivationFrame> frames;
  std::string log;
  for (int i = 0; i < 20; ++i) {
    frames.push_back(random_frame(rng));
    log += encode_frame(frames.back());
  }
  std::size_t off = 0;
  for (const auto& f : frames) EXPECT_EQ(decode_frame(log, off), f);
  EXPECT_EQ(off, log.size());
}

TEST(Frame, RejectsCorruption) {
  Rng rng(9);
  const std::string good = encode_frame(random_frame(rng));
  std::string bad = good;
  bad[0] = 'X';
  try {
    decode_frame(bad);
    FAIL() << "bad magic accepted";
  } catch (const FrameError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
  for (std::size_t n = 0; n < good.size(); ++n) {
    EXPECT_THROW(decode_frame(good.substr(0, n)), FrameError) << "prefix " << n;
  }
  EXPECT_THROW(decode_frame(good + "x"), FrameError);
  std::string version = good;
  version[4] = 9;
  EXPECT_THROW(decode_frame(version), FrameError);
  std::string split = good;
  split[11] = 3;
  EXPECT_THROW(decode_frame(split), FrameError);
}

TEST(Frame, EncodeValidatesFields) {
  ActivationFrame f{kFrameVersion, 0, 0, 1, 0, {2, 3}, {1.f}};
  EXPECT_THROW(encode_frame(f), DimensionError);
  f.payload.assign(6, 0.f);
  f.split = 0;
  EXPECT_THROW(encode_frame(f), ConfigError);
}

TEST(Frame, TensorHelpers) {
  Tensor t({2, 3});
  const double vals[] = {0.1, -2.0, 1e-3, 3.0, 4.5, 1.0 / 3.0};
  std::copy(std::begin(vals), std::end(vals), t.data());
  const auto f = make_frame(4, 1, 2, 9, t);
  EXPECT_EQ(f.dims, (std::vector<std::uint32_t>{2, 3}));
  const Tensor back = frame_tensor(f);
  const Tensor q = quantize_f32(t);
  for (std::size_t i = 0; i < t.size(); ++i) {
    EXPECT_EQ(back[i], static_cast<double>(static_cast<float>(t[i])));
    EXPECT_EQ(q[i], back[i]);
  }
}

// ------------------------------------------------------------ config

TEST(Config, WriteParseRoundTrip) {
  RunConfig c = tiny_config();
  c.method = Method::kMucald;
  c.ablation = Ablation::kNoForwardNoise;
  c.loss.proxy = 0.37;
  c.lr = 2.5e-4;
  c.intercept_clients = {0, 1};
  c.proxy_features = {"area", "entropy"};
  c.model.d_u = 4;
  std::ostringstream a;
  write_config(a, c);
  std::istringstream in(a.str());
  const RunConfig d = parse_config(in);
  std::ostringstream b;
  write_config(b, d);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(d.ablation, Ablation::kNoForwardNoise);
  EXPECT_DOUBLE_EQ(d.loss.proxy, 0.37);
}

TEST(Config, RandomRoundTrips) {
  Rng rng(21);
  std::uniform_real_distribution<double> u(1e-6, 10.0);
  for (int i = 0; i < 50; ++i) {
    RunConfig c;
    c.rounds = 1 + static_cast<int>(rng() % 40);
    c.clients = 1 + rng() % 8;
    c.seed = rng();
    c.noise = u(rng);
    c.lr = u(rng) * 1e-3;
    c.loss.diff = u(rng);
    c.alpha_max = u(rng);
    c.method = rng() % 2 ? Method::kBaseline : Method::kMucald;
    if (c.method == Method::kMucald) c.ablation = static_cast<Ablation>(rng() % 6);
    std::ostringstream a;
    write_config(a, c);
    std::istringstream in(a.str());
    std::ostringstream b;
    write_config(b, parse_config(in));
    ASSERT_EQ(a.str(), b.str());
  }
}

TEST(Config, ErrorsNameTheField) {
  auto err = [](const std::string& text) {
    std::istringstream in(text);
    try {
      parse_config(in);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_EQ(err("[run]\nbogus = 1\n").rfind("run.bogus", 0), 0u);
  EXPECT_EQ(err("[run]\nrounds = 0\n").rfind("run.rounds", 0), 0u);
  EXPECT_EQ(err("[run]\nrounds = many\n").rfind("run.rounds", 0), 0u);
  EXPECT_NE(err("[run]\nrounds = 2\n[[broken\n").find("line 3"), std::string::npos);
  EXPECT_FALSE(err("[ablation]\nno_diffusion = true\ncrdm_only = true\n").empty());
  EXPECT_FALSE(err("[run]\nmethod = baseline\n[ablation]\nno_diffusion = true\n").empty());
  EXPECT_TRUE(err("[run]\nrounds = 3\n").empty());
}

TEST(Config, AblationNames) {
  for (int i = 0; i < 6; ++i) {
    const auto a = static_cast<Ablation>(i);
    EXPECT_EQ(parse_ablation(ablation_name(a)), a);
  }
  EXPECT_EQ(parse_ablation("no_forward_noise"), Ablation::kNoForwardNoise);
  EXPECT_THROW(parse_ablation("everything"), ConfigError);
}

// ------------------------------------------------------------ fedavg

TEST(FedAvg, Examples) {
  EXPECT_DOUBLE_EQ(fedavg({{0.0}, {1.0}}, {1, 3})[0], 0.75);
  EXPECT_EQ(fedavg({{1.5, -2.0}}, {7}), (std::vector<double>{1.5, -2.0}));
  EXPECT_EQ(fedavg({{0.3, 4.0}, {0.3, 4.0}, {0.3, 4.0}}, {1, 2, 5}),
            (std::vector<double>{0.3, 4.0}));
  EXPECT_THROW(fedavg({{1.0}, {1.0, 2.0}}, {1, 1}), DimensionError);
  EXPECT_THROW(fedavg({{1.0}, {2.0}}, {1, 0}), ConfigError);
  EXPECT_THROW(fedavg({}, {}), ConfigError);
}

TEST(FedAvg, PermutationInvariantAndMeanUnderEqualWeights) {
  Rng rng(4);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 1 + rng() % 6, n = 1 + rng() % 10;
    std::vector<std::vector<double>> sets(k, std::vector<double>(n));
    std::vector<double> w(k);
    for (auto& s : sets)
      for (auto& v : s) v = g(rng);
    for (auto& v : w) v = 1.0 + static_cast<double>(rng() % 100);
    const auto ref = fedavg(sets, w);
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<double>> ps;
    std::vector<double> pw;
    for (auto i : perm) {
      ps.push_back(sets[i]);
      pw.push_back(w[i]);
    }
    const auto got = fedavg(ps, pw);
    const auto eq = fedavg(sets, std::vector<double>(k, 2.5));
    for (std::size_t j = 0; j < n; ++j) {
      EXPECT_NEAR(got[j], ref[j], 1e-12);
      double mean = 0.0;
      for (const auto& s : sets) mean += s[j];
      EXPECT_NEAR(eq[j], mean / static_cast<double>(k), 1e-12);
    }
  }
}

// ------------------------------------------------------------ aggregation

TEST(Aggregation, SharedScalarsAverageAndLocalHashesHold) {
  const ModelSpec spec = micro_spec();
  ClientModel a(spec, InitSeeds::derive(1, 0)), b(spec, InitSeeds::derive(1, 1));
  a.ss_params()[0].tensor->values()[0] = 0.0;
  b.ss_params()[0].tensor->values()[0] = 2.0;
  const auto fe_a = param_hash(a.fe_params()), be_b = param_hash(b.be_params());
  const auto rep = aggregate_round({&a, &b}, {5, 5}, Method::kMucald);
  EXPECT_EQ(a.ss_params()[0].tensor->values()[0], 1.0);
  EXPECT_EQ(b.ss_params()[0].tensor->values()[0], 1.0);
  EXPECT_EQ(param_hash(a.fe_params()), fe_a);
  EXPECT_EQ(param_hash(b.be_params()), be_b);
  EXPECT_EQ(rep.shared_hash[0], rep.shared_hash[1]);
  EXPECT_EQ(rep.checksum(), param_hash(b.shared_params(Method::kMucald)));
  EXPECT_NE(param_hash(a.fe_params()), param_hash(b.fe_params()));
}

TEST(Aggregation, BaselineSharesFeAndBe) {
  const ModelSpec spec = micro_spec();
  ClientModel a(spec, InitSeeds::derive(1, 0)), b(spec, InitSeeds::derive(1, 1));
  aggregate_round({&a, &b}, {1, 3}, Method::kBaseline);
  EXPECT_EQ(param_hash(a.fe_params()), param_hash(b.fe_params()));
  EXPECT_EQ(param_hash(a.be_params()), param_hash(b.be_params()));
}

TEST(Aggregation, MissingClientFails) {
  const ModelSpec spec = micro_spec();
  ClientModel a(spec, InitSeeds::derive(1, 0));
  EXPECT_THROW(aggregate_round({&a, nullptr}, {1, 1}, Method::kMucald), StateError);
}

// ------------------------------------------------------------ client step

TEST(ClientStep, BaselineAndMucaldShareBackboneInit) {
  RunConfig m = tiny_config();
  RunConfig base = m;
  base.method = Method::kBaseline;
  ClientModel mm(ModelSpec::from_config(m, 8, {}), InitSeeds::derive(3, 1));
  ClientModel bm(ModelSpec::from_config(base, 8, {}), InitSeeds::derive(3, 1));
  EXPECT_EQ(param_hash(mm.fe_params()), param_hash(bm.fe_params()));
  EXPECT_EQ(param_hash(mm.ss_params()), param_hash(bm.ss_params()));
  EXPECT_EQ(param_hash(mm.be_params()), param_hash(bm.be_params()));
  EXPECT_TRUE(bm.crdm1_params().empty());
  EXPECT_TRUE(bm.disc2_params().empty());
}

TEST(ClientStep, CompositeGradientCheck) {
  const ModelSpec spec = micro_spec();
  ClientModel model(spec, InitSeeds::derive(2, 1));
  const auto sched = cosine_schedule(100, 0.008);
  const Batch batch = random_batch(2, 8, 2, 3, 1, 17);
  StepOptions o;
  o.weights = LossWeights{1.0, 0.3, 0.2, 0.05, 0.05, 0.7};
  o.alpha = 0.6;
  o.t1 = 7;
  o.t2 = 12;
  o.noise_seed = 99;
  o.quantize = false;
  zero_grads(model.all_params());
  model.run(batch, o, sched, true);
  auto upstream = param_probes(model.upstream_params());
  auto disc = param_probes(model.discriminator_params());
  // Upstream sees the reversed adversarial term, discriminators their own CE.
  const double lam = o.weights.adv, a = o.alpha;
  const auto up = check_gradients(
      [&] {
        const auto r = model.run(batch, o, sched, false);
        return r.loss.total - (1.0 + a) * lam * (r.ce1 + r.ce2);
      },
      upstream, 1e-6, 12);
  const auto dn = check_gradients(
      [&] {
        const auto r = model.run(batch, o, sched, false);
        return r.ce1 + r.ce2;
      },
      disc, 1e-6);
  EXPECT_LT(up.max_relative_error, 1e-5) << up.worst;
  EXPECT_LT(dn.max_relative_error, 1e-5) << dn.worst;
}

TEST(ClientStep, OverfitsOneBatch) {
  RunConfig cfg = tiny_config();
  cfg.clients = 5;
  ClientData data = prepare_client(cfg, 1);
  ClientModel model(ModelSpec::from_config(cfg, 8, {}), InitSeeds::derive(5, 0));
  ClientOptimizers opt(model, 3e-3);
  const auto sched = cosine_schedule(100, 0.008);
  const Batch batch = make_batch(data, SplitKind::kTrain, {0, 1, 2, 3}, nullptr);
  StepOptions o;
  o.t1 = o.t2 = 5;
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 50; ++step) {
    o.noise_seed = static_cast<std::uint64_t>(step);
    const auto r = model.run(batch, o, sched, true);
    opt.step();
    if (step == 0) first = r.loss.seg;
    last = r.loss.seg;
  }
  EXPECT_LT(last, first);
  EXPECT_LT(last, 0.1);
}

TEST(ClientStep, NoDiffusionHasZeroDiffusionLoss) {
  RunConfig cfg = tiny_config();
  cfg.ablation = Ablation::kNoDiffusion;
  ClientData data = prepare_client(cfg, 0);
  ClientModel model(ModelSpec::from_config(cfg, 8, {}), InitSeeds::derive(5, 0));
  const auto r = model.run(make_batch(data, SplitKind::kTrain, {0, 1}, nullptr), StepOptions{},
                           cosine_schedule(100, 0.008), true);
  EXPECT_EQ(r.loss.diff1, 0.0);
  EXPECT_EQ(r.loss.diff2, 0.0);
  for (std::size_t i = 0; i < r.s1.wire.size(); ++i) ASSERT_EQ(r.s1.wire[i], r.s1.clean[i]);
}

TEST(ClientStep, QuantizedWireKeepsFrames) {
  RunConfig cfg = tiny_config();
  ClientData data = prepare_client(cfg, 1);
  ClientModel model(ModelSpec::from_config(cfg, 8, {}), InitSeeds::derive(5, 1));
  StepOptions o;
  o.round = 4;
  model.run(make_batch(data, SplitKind::kVal, {0, 1}, nullptr), o, cosine_schedule(100, 0.008),
            false);
  ASSERT_EQ(model.last_frames().size(), 2u);
  const auto f = decode_frame(model.last_frames()[1]);
  EXPECT_EQ(f.round, 4u);
  EXPECT_EQ(f.client, 1u);
  EXPECT_EQ(f.split, 2u);
}

// ------------------------------------------------------------ client data

TEST(ClientData, AugmentedBatchesRecomputeProxies) {
  RunConfig cfg = tiny_config();
  const ClientData c = prepare_client(cfg, 0);
  ASSERT_EQ(c.train_proxy.size(), cfg.train);
  Rng rng(3);
  const Batch plain = make_batch(c, SplitKind::kTrain, {0, 1, 2}, nullptr);
  const Batch aug = make_batch(c, SplitKind::kTrain, {0, 1, 2}, &rng);
  EXPECT_EQ(plain.images.shape(), aug.images.shape());
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(plain.proxy.target.at(i, 0), c.train_proxy[i].values[0]);
    // Area is invariant under dihedral transforms.
    EXPECT_NEAR(aug.proxy.target.at(i, 0), plain.proxy.target.at(i, 0), 1e-12);
  }
}

TEST(ClientData, UnionGraphIsAcyclic) {
  CausalGraph a, b;
  for (CausalGraph* g : {&a, &b}) {
    g->d = 3;
    g->names = {"x", "y", "z"};
    g->weights = Tensor({3, 3});
  }
  a.edges = {{0, 1, 0.9}, {1, 2, 0.5}};
  b.edges = {{2, 0, 0.2}, {0, 1, -0.4}};
  const CausalGraph u = union_graph({a, b});
  EXPECT_LT(u.h_value, 1e-12);
  ASSERT_EQ(u.edges.size(), 2u);
  EXPECT_EQ(u.edges[0].src, 0u);
  EXPECT_EQ(u.edges[0].dst, 1u);
  EXPECT_NEAR(u.edges[0].weight, 1.3, 1e-12);
}

TEST(ClientData, WorkerCountHonoursEnvironment) {
  RunConfig cfg = tiny_config();
  cfg.clients = 4;
  ::unsetenv("MUCALD_THREADS");
  EXPECT_EQ(worker_count(cfg), 4u);
  ::setenv("MUCALD_THREADS", "3", 1);
  EXPECT_EQ(worker_count(cfg), 3u);
  cfg.threads = 2;
  EXPECT_EQ(worker_count(cfg), 2u);
  ::unsetenv("MUCALD_THREADS");
}

// ------------------------------------------------------------ run

TEST(Run, SingleRoundSingleClientGivesOneReport) {
  RunConfig cfg = tiny_config();
  cfg.rounds = 1;
  cfg.local_epochs = 1;
  cfg.clients = 1;
  const auto res = run(cfg);
  ASSERT_EQ(res.rounds.size(), 1u);
  EXPECT_EQ(res.rounds[0].round, 1);
  ASSERT_EQ(res.rounds[0].clients.size(), 1u);
  EXPECT_GE(res.rounds[0].mean_iou_nb(), 0.0);
  EXPECT_LE(res.rounds[0].mean_iou_nb(), 1.0);
  EXPECT_EQ(res.test.size(), 1u);
}

TEST(Run, ArtifactsAndDeterminism) {
  RunConfig cfg = tiny_config();
  const auto d1 = temp_dir("a"), d2 = temp_dir("b");
  std::vector<std::uint64_t> seen;
  RunOptions o1{d1, [&](const RoundReport& r) { seen.push_back(r.checksum); }};
  const auto r1 = run(cfg, o1);
  cfg.threads = 1;  // thread count must not matter
  run(cfg, RunOptions{d2, {}});
  ASSERT_EQ(seen.size(), 2u);
  for (const auto& r : r1.rounds)
    for (const auto& c : r.clients) EXPECT_EQ(c.shared_hash, r.checksum);
  const std::string csv = read_file(d1 / "metrics.csv");
  EXPECT_EQ(csv, read_file(d2 / "metrics.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 2);
  EXPECT_EQ(csv.substr(0, csv.find('\n')).find("round,client,family"), 0u);
  for (const char* f : {"summary.json", "config.ini", "checkpoints/client0.mcsf",
                        "checkpoints/shared.mcsf", "graphs/client1.json", "graphs/shared.json"}) {
    EXPECT_TRUE(std::filesystem::exists(d1 / f)) << f;
  }
  const auto clean = read_file(d1 / "intercepts" / intercept_file(0, 1, "clean"));
  std::size_t off = 0, frames = 0;
  while (off < clean.size()) {
    const auto f = decode_frame(clean, off);
    EXPECT_EQ(f.client, 0u);
    EXPECT_EQ(f.split, 1u);
    ++frames;
  }
  EXPECT_EQ(frames, cfg.train + cfg.val + cfg.test);
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST(Run, NonFiniteLossAbortsWithContext) {
  RunConfig cfg = tiny_config();
  cfg.lr = 1e150;
  cfg.local_epochs = 3;
  const auto dir = temp_dir("abort");
  try {
    run(cfg, RunOptions{dir, {}});
    FAIL() << "expected an abort";
  } catch (const RunAbort& e) {
    EXPECT_EQ(e.round(), 1);
    EXPECT_NE(std::string(e.what()).find("client"), std::string::npos);
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "abort"));
  std::filesystem::remove_all(dir);
}
