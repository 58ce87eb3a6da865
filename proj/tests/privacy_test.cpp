#include "mucald/privacy.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "mucald/errors.hpp"

using namespace mucald;

namespace {

double brute_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double s = 0.0;
  for (double p : pos)
    for (double n : neg) s += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return s / static_cast<double>(pos.size() * neg.size());
}

RunConfig attack_run_config() {
  RunConfig c;
  c.clients = 1;
  c.rounds = 2;
  c.local_epochs = 1;
  c.image_size = 16;
  c.train = 100;
  c.val = 20;
  c.test = 40;
  c.steps_per_epoch = 15;
  c.warmup_epochs = 0;
  c.rampup_epochs = 0;
  c.seed = 4;
  c.notears.max_outer_iters = 4;
  c.notears.inner_steps = 30;
  return c;
}

// One finished run shared by the attack tests.
class AttackFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = std::filesystem::temp_directory_path() / "mucald_privacy_test_run";
    std::filesystem::remove_all(dir_);
    RunConfig cfg = attack_run_config();
    cfg.ablation = Ablation::kNoDiffusion;
    run(cfg, RunOptions{dir_, {}});
  }
  static void TearDownTestSuite() { std::filesystem::remove_all(dir_); }
  static std::filesystem::path dir_;
};
std::filesystem::path AttackFixture::dir_;

}  // namespace

TEST(Auc, Examples) {
  EXPECT_DOUBLE_EQ(auc({3, 4}, {1, 2}), 1.0);
  EXPECT_DOUBLE_EQ(auc({1, 2}, {3, 4}), 0.0);
  EXPECT_DOUBLE_EQ(auc({1, 1}, {1, 1}), 0.5);
  EXPECT_DOUBLE_EQ(auc({2}, {1, 2, 3}), 0.5);
  EXPECT_THROW(auc({}, {1}), DataError);
}

TEST(Auc, MatchesPairCountAndReflectsUnderNegation) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> p(1 + rng() % 20), n(1 + rng() % 20);
    for (auto& v : p) v = static_cast<double>(rng() % 7);
    for (auto& v : n) v = static_cast<double>(rng() % 7);
    const double a = auc(p, n);
    EXPECT_NEAR(a, brute_auc(p, n), 1e-12);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
    for (auto& v : p) v = -v;
    for (auto& v : n) v = -v;
    EXPECT_NEAR(auc(p, n), 1.0 - a, 1e-12);
  }
}

TEST(Summary, MeanAndPopulationStd) {
  const auto s = summarize({{1.0, 10.0, 0.5}, {3.0, 20.0, 0.7}});
  EXPECT_EQ(s.count, 2u);
  EXPECT_DOUBLE_EQ(s.mean.mse, 2.0);
  EXPECT_DOUBLE_EQ(s.std.psnr, 5.0);
  EXPECT_NEAR(s.std.ssim, 0.1, 1e-12);
}

TEST(MembershipInference, UntrainedModelHasNoSignal) {
  RunConfig cfg = attack_run_config();
  cfg.train = 200;
  cfg.test = 200;
  const ClientData data = prepare_client(cfg, 0);
  ClientModel model(ModelSpec::from_config(cfg, data.proxy_spec.size(), {}),
                    InitSeeds::derive(cfg.seed, 0));
  std::vector<std::size_t> idx(200);
  std::iota(idx.begin(), idx.end(), 0);
  const double a = membership_inference(model, data, idx, idx, cfg, 1);
  EXPECT_NEAR(a, 0.5, 0.05);
  EXPECT_THROW(membership_inference(model, data, {0, 1}, {0}, cfg, 1), DataError);
  EXPECT_THROW(membership_inference(model, data, {}, {}, cfg, 1), DataError);
}

TEST(MembershipInference, OverfitModelIsDetected) {
  RunConfig cfg = attack_run_config();
  cfg.method = Method::kBaseline;
  cfg.clients = 2;
  const ClientData data = prepare_client(cfg, 1);
  ClientModel model(ModelSpec::from_config(cfg, data.proxy_spec.size(), {}),
                    InitSeeds::derive(cfg.seed, 1));
  ClientOptimizers opt(model, 1e-3);
  const std::vector<std::size_t> members = {0, 1, 2, 3, 4, 5, 6, 7};
  const Batch batch = make_batch(data, SplitKind::kTrain, members, nullptr);
  const auto sched = cosine_schedule(100, 0.008);
  StepOptions o;
  o.quantize = false;
  for (int step = 0; step < 500; ++step) {
    model.run(batch, o, sched, true);
    opt.step();
  }
  const double a = membership_inference(model, data, members, {0, 1, 2, 3, 4, 5, 6, 7}, cfg, 1);
  EXPECT_GT(a, 0.8);
}

TEST_F(AttackFixture, InterceptLogsPairWithDataset) {
  const auto log = read_intercepts(dir_, 0, 1, "clean");
  EXPECT_EQ(log.frames.size(), 160u);
  EXPECT_EQ(log.image_ids.size(), 160u);
  for (const auto& f : log.frames) EXPECT_EQ(f.split, 1u);
  EXPECT_THROW(read_intercepts(dir_, 3, 1, "clean"), DataError);
}

TEST_F(AttackFixture, DecoderBeatsMeanImageAndShuffledControlCollapses) {
  AttackConfig cfg;
  cfg.seed = 2;
  std::vector<Tensor> recon;
  const AttackReport rep = attack_run(dir_, 0, 1, false, cfg, &recon);
  EXPECT_EQ(rep.train_count, 120u);
  EXPECT_EQ(rep.attack.count, 40u);
  EXPECT_EQ(recon.size(), 40u);
  EXPECT_GT(rep.attack.mean.psnr, rep.mean_image.mean.psnr);
  EXPECT_NEAR(rep.shuffled.mean.psnr, rep.mean_image.mean.psnr, 1.0);
  // Without diffusion the wire is the clean activation.
  EXPECT_EQ(rep.fidelity.mean.mse, 0.0);
  const auto j = nlohmann::json::parse(rep.to_json());
  EXPECT_EQ(j["obfuscation"], "off");
  EXPECT_TRUE(j.contains("denoiser_fidelity"));
}

TEST_F(AttackFixture, TooFewInterceptsIsAnError) {
  AttackConfig cfg;
  cfg.min_intercepts = 1000;
  EXPECT_THROW(attack_run(dir_, 0, 2, false, cfg), DataError);
}

TEST_F(AttackFixture, LoadsTrainedClient) {
  const LoadedClient lc = load_client(dir_, 0);
  EXPECT_EQ(lc.cfg.seed, attack_run_config().seed);
  EXPECT_EQ(lc.data.data.test.size(), 40u);
  EXPECT_THROW(load_client(dir_ / "nowhere", 0), ConfigError);
}
