#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mucald/checkpoint.hpp"
#include "mucald/errors.hpp"
#include "mucald/gradcheck.hpp"
#include "mucald/nn.hpp"
#include "mucald/optim.hpp"

namespace mucald {
namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : t.values()) v = d(rng);
  return t;
}

TEST(Linear, IdentityWeightsPassInputThrough) {
  Linear lin("id", LayerParams{Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2})});
  Tensor y = lin.forward(Tensor({1, 2}, {1, 2}));
  EXPECT_EQ(y.storage(), (std::vector<double>{1, 2}));
}

TEST(Linear, HandComputedAffineMap) {
  Linear lin("l", LayerParams{Tensor({2, 2}, {2, 0, 0, 3}), Tensor({2}, {1, 1})});
  Tensor y = lin.forward(Tensor({1, 2}, {1, 1}));
  EXPECT_EQ(y.storage(), (std::vector<double>{3, 4}));
}

TEST(Linear, OutputShapeContract) {
  Rng rng(1);
  Linear lin("l", 3, 5, rng);
  EXPECT_EQ(lin.forward(Tensor({4, 3})).shape(), (Shape{4, 5}));
}

TEST(Linear, ShapeMismatchNamesBothShapes) {
  Rng rng(1);
  Linear lin("l", 3, 5, rng);
  try {
    lin.forward(Tensor({4, 2}));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[4,2]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[3,5]"), std::string::npos);
  }
}

TEST(Linear, BackwardBeforeForwardIsStateError) {
  Rng rng(1);
  Linear lin("l", 3, 5, rng);
  EXPECT_THROW(lin.backward(Tensor({1, 5})), StateError);
}

TEST(Linear, ZeroUpstreamLeavesParamGradsUntouched) {
  Rng rng(2);
  Linear lin("l", 3, 2, rng);
  lin.forward(random_tensor({4, 3}, rng));
  Tensor dx = lin.backward(Tensor({4, 2}));
  for (double v : dx.values()) EXPECT_EQ(v, 0.0);
  for (double v : lin.params().weights.grad()) EXPECT_EQ(v, 0.0);
  for (double v : lin.params().bias.grad()) EXPECT_EQ(v, 0.0);
}

TEST(Linear, ScalarChainRule) {
  Linear lin("l", LayerParams{Tensor({1, 1}, {3}), Tensor({1})});
  lin.forward(Tensor({1, 1}, {2}));
  Tensor dx = lin.backward(Tensor({1, 1}, {1}));
  EXPECT_DOUBLE_EQ(lin.params().weights.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(dx[0], 3.0);
}

TEST(Linear, GradCheckBelowTolerance) {
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    Linear lin("l", 4, 3, rng);
    for (double& b : lin.params().bias.values()) b = 0.3;
    EXPECT_LT(grad_check(lin, random_tensor({5, 4}, rng)), 1e-7) << seed;
  }
}

TEST(Conv2d, IdentityKernelReproducesDelta) {
  Tensor w({1, 1, 3, 3});
  w[4] = 1.0;
  Conv2d conv("c", LayerParams{w, Tensor({1})});
  Tensor x({1, 1, 5, 5});
  x.at(0, 0, 2, 3) = 1.0;
  EXPECT_EQ(conv.forward(x).storage(), x.storage());
}

TEST(Conv2d, AllOnesHandConvolution) {
  Conv2d conv("c", LayerParams{Tensor({1, 1, 3, 3}, 1.0), Tensor({1})});
  Tensor y = conv.forward(Tensor({1, 1, 3, 3}, 1.0));
  EXPECT_DOUBLE_EQ(y.at(0, 0, 1, 1), 9.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 0), 4.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 1), 6.0);
}

TEST(Conv2d, ChannelMismatchIsDimensionError) {
  Rng rng(1);
  Conv2d conv("c", 2, 3, 3, rng);
  EXPECT_THROW(conv.forward(Tensor({1, 3, 4, 4})), DimensionError);
}

TEST(Conv2d, GradCheckBelowTolerance) {
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    Conv2d conv("c", 2, 3, 3, rng);
    EXPECT_LT(grad_check(conv, random_tensor({2, 2, 5, 4}, rng)), 1e-6) << seed;
    Conv2d pointwise("p", 3, 2, 1, rng);
    EXPECT_LT(grad_check(pointwise, random_tensor({2, 3, 4, 4}, rng)), 1e-6) << seed;
  }
}

TEST(Activation, Definitions) {
  Tensor r = activation(Tensor({2}, {-1, 2}), Activation::kRelu);
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], 2.0);
  EXPECT_EQ(activation(Tensor({1}, {0.0}), Activation::kSigmoid)[0], 0.5);
  Tensor s = activation(Tensor({1, 4, 1, 1}, 0.7), Activation::kSoftmaxChannel);
  for (double v : s.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Activation, SoftmaxSumsToOnePerPixel) {
  Rng rng(5);
  Tensor s = activation(random_tensor({3, 5, 4, 4}, rng, -30, 30), Activation::kSoftmaxChannel);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t h = 0; h < 4; ++h)
      for (std::size_t w = 0; w < 4; ++w) {
        double total = 0.0;
        for (std::size_t c = 0; c < 5; ++c) total += s.at(n, c, h, w);
        EXPECT_NEAR(total, 1.0, 1e-12);
      }
}

TEST(Activation, SoftmaxRequiresChannelAxis) {
  EXPECT_THROW(activation(Tensor({4}), Activation::kSoftmaxChannel), DimensionError);
}

TEST(Layers, EveryKindPassesGradCheckAtThreeSeeds) {
  for (std::uint64_t seed : {11, 12, 13}) {
    Rng rng(seed);
    Tensor x4 = random_tensor({2, 3, 4, 6}, rng);
    ActivationLayer sig("sig", Activation::kSigmoid), tanh_l("tanh", Activation::kTanh),
        soft("soft", Activation::kSoftmaxChannel), relu("relu", Activation::kRelu);
    AvgPool2 pool("pool");
    Upsample2 up("up");
    GlobalMeanPool gmp("gmp");
    EXPECT_LT(grad_check(sig, x4), 1e-6);
    EXPECT_LT(grad_check(tanh_l, x4), 1e-6);
    EXPECT_LT(grad_check(soft, x4), 1e-6);
    // Keep ReLU probes away from the kink.
    Tensor xr = x4;
    for (double& v : xr.values()) v += (v >= 0 ? 0.05 : -0.05);
    EXPECT_LT(grad_check(relu, xr), 1e-6);
    EXPECT_LT(grad_check(pool, x4), 1e-6);
    EXPECT_LT(grad_check(up, x4), 1e-6);
    EXPECT_LT(grad_check(gmp, x4), 1e-6);
    RowNormalize norm("norm");
    EXPECT_LT(grad_check(norm, random_tensor({3, 5}, rng)), 1e-6);
  }
}

TEST(RowNormalize, UnitRowsAndScaleInvariance) {
  Rng rng(4);
  const Tensor x = random_tensor({4, 6}, rng);
  Tensor big = x;
  for (double& v : big.values()) v *= 1e3;
  RowNormalize a("a"), b("b");
  const Tensor y = a.forward(x), z = b.forward(big);
  for (std::size_t n = 0; n < 4; ++n) {
    double s = 0.0;
    for (std::size_t j = 0; j < 6; ++j) s += y.at(n, j) * y.at(n, j);
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], z[i], 1e-6);
  // The input gradient is orthogonal to the row, so it cannot grow the norm.
  const Tensor g = random_tensor({4, 6}, rng);
  const Tensor dx = a.backward(g);
  for (std::size_t n = 0; n < 4; ++n) {
    double d = 0.0;
    for (std::size_t j = 0; j < 6; ++j) d += dx.at(n, j) * x.at(n, j);
    EXPECT_NEAR(d, 0.0, 1e-7);
  }
}

TEST(GradCheck, DetectsSignFlippedBackward) {
  Rng rng(4);
  Linear lin("l", 3, 3, rng);
  Tensor probe = random_tensor({2, 3}, rng);
  const double err = grad_check([&](const Tensor& x) { return lin.forward(x); },
                                [&](const Tensor& g) {
                                  Tensor dx = lin.backward(g);
                                  for (double& v : dx.values()) v = -v;
                                  for (auto& p : lin.parameters())
                                    for (double& v : p.tensor->grad()) v = -v;
                                  return dx;
                                },
                                lin.parameters(), probe);
  EXPECT_NEAR(err, 2.0, 1e-6);
}

TEST(GradCheck, NonFiniteAnalyticGradientIsInfinite) {
  Rng rng(4);
  Linear lin("l", 2, 2, rng);
  const double err = grad_check([&](const Tensor& x) { return lin.forward(x); },
                                [&](const Tensor& g) {
                                  Tensor dx = lin.backward(g);
                                  dx[0] = std::nan("");
                                  return dx;
                                },
                                lin.parameters(), random_tensor({1, 2}, rng));
  EXPECT_TRUE(std::isinf(err));
}

TEST(GradCheck, RejectsEpsOutsideRange) {
  Rng rng(4);
  Linear lin("l", 2, 2, rng);
  EXPECT_THROW(grad_check(lin, Tensor({1, 2}), 1e-2), ConfigError);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor p({3}, {1.0, -2.0, 0.5});
  p.ensure_grad();
  OptimizerState st;
  adam_step({{"p", &p}}, st);
  EXPECT_EQ(p.storage(), (std::vector<double>{1.0, -2.0, 0.5}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor p({1}, {0.0});
  p.ensure_grad();
  p.grad()[0] = 1.0;
  OptimizerState st;
  st.config.lr = 0.1;
  adam_step({{"p", &p}}, st);
  EXPECT_NEAR(p[0], -0.1, 1e-8);
  EXPECT_EQ(p.grad()[0], 0.0);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, IdenticalLayersStayIdentical) {
  Rng r1(9), r2(9);
  Linear a("a", 3, 2, r1), b("b", 3, 2, r2);
  Adam oa(a.parameters()), ob(b.parameters());
  Rng data(3);
  for (int s = 0; s < 5; ++s) {
    Tensor x = random_tensor({4, 3}, data);
    Tensor g = random_tensor({4, 2}, data);
    a.forward(x);
    a.backward(g);
    b.forward(x);
    b.backward(g);
    oa.step();
    ob.step();
  }
  EXPECT_EQ(a.params().weights.storage(), b.params().weights.storage());
}

TEST(Adam, NanGradientNamesTheLayer) {
  Tensor p({1});
  p.ensure_grad();
  p.grad()[0] = std::nan("");
  OptimizerState st;
  try {
    adam_step({{"encoder.fc1.weight", &p}}, st);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.fc1.weight"), std::string::npos);
  }
}

TEST(Params, FlattenRoundTripIsBitIdentical) {
  Rng rng(21);
  Sequential net("net");
  net.emplace<Conv2d>("c1", 2, 4, 3, rng);
  net.emplace<ActivationLayer>("r", Activation::kRelu);
  net.emplace<Linear>("fc", 4, 3, rng);
  auto params = net.parameters();
  auto flat = flatten_params(params);
  const auto before = param_hash(params);
  for (auto& p : params) p.tensor->fill(0.0);
  unflatten_params(params, flat);
  EXPECT_EQ(param_hash(params), before);
  EXPECT_EQ(flatten_params(params), flat);
}

TEST(Params, ForwardIsDeterministic) {
  Rng rng(22);
  Conv2d conv("c", 2, 3, 3, rng);
  Tensor x = random_tensor({2, 2, 6, 6}, rng);
  EXPECT_EQ(conv.forward(x).storage(), conv.forward(x).storage());
}

TEST(Checkpoint, RoundTripAndLayout) {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({1}, {-0.5});
  const std::string bytes = encode_checkpoint({&a, &b});
  // magic 4 + version 2 + (1 + 8 + 48) + (1 + 4 + 8)
  EXPECT_EQ(bytes.size(), 4u + 2 + 57 + 13);
  EXPECT_EQ(bytes.substr(0, 4), "MCSF");
  auto back = decode_checkpoint(bytes);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].shape(), a.shape());
  EXPECT_EQ(back[0].storage(), a.storage());
  EXPECT_EQ(back[1].storage(), b.storage());
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FrameError);
  EXPECT_THROW(decode_checkpoint("XCSF" + bytes.substr(4)), FrameError);
}

}  // namespace
}  // namespace mucald
