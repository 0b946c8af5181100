#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"

using namespace dsur;
using dsur::testing::relative_gap;

namespace {

std::vector<DenseLayer> random_net(Rng& rng, std::size_t depth, std::size_t max_width, std::size_t in) {
  std::vector<DenseLayer> layers;
  const Activation kinds[] = {Activation::ReLU, Activation::Linear, Activation::SoftPlus};
  for (std::size_t l = 0; l < depth; ++l) {
    const std::size_t out = 1 + rng.below(max_width);
    DenseLayer layer = glorot_layer(in, out, kinds[rng.below(3)], rng);
    for (auto& b : layer.bias.values()) b = rng.uniform(-0.5, 0.5);
    layers.push_back(std::move(layer));
    in = out;
  }
  return layers;
}

// Scalar objective sum_r sum_k c[r][k] * out[r][k].
double weighted_output(std::span<const DenseLayer> layers, const Tensor& x, const Tensor& c) {
  const Tensor out = forward(layers, x).output;
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += c[i] * out[i];
  return s;
}

bool near_kink(const ForwardCache& cache) {
  for (std::size_t l = 0; l < cache.pre.size(); ++l)
    for (double v : cache.pre[l].values())
      if (std::abs(v) < 1e-4) return true;
  return false;
}

}  // namespace

TEST(Activation, Definitions) {
  EXPECT_EQ(activate(Activation::ReLU, -2.0), 0.0);
  EXPECT_EQ(activate(Activation::ReLU, 3.0), 3.0);
  for (double x : {-7.5, 0.0, 2.25}) EXPECT_EQ(activate(Activation::Linear, x), x);
  EXPECT_NEAR(activate(Activation::SoftPlus, 0.0), std::numbers::ln2, 1e-15);
}

TEST(Activation, SoftPlusBounds) {
  for (double x = -50.0; x <= 50.0; x += 0.37) {
    const double y = softplus(x);
    EXPECT_GT(y, 0.0);
    EXPECT_GE(y, x);
    EXPECT_GE(y, 0.0);
  }
  EXPECT_TRUE(std::isfinite(softplus(1000.0)));
  EXPECT_NEAR(softplus(1000.0), 1000.0, 1e-12);
}

TEST(Activation, ReluGradientAtZeroIsZero) { EXPECT_EQ(activate_grad(Activation::ReLU, 0.0), 0.0); }

TEST(Activation, NamesRoundTrip) {
  for (auto a : {Activation::ReLU, Activation::Linear, Activation::SoftPlus})
    EXPECT_EQ(parse_activation(to_string(a)), a);
  EXPECT_THROW(parse_activation("tanh"), ConfigError);
}

TEST(Forward, IdentityNetwork) {
  const std::vector<DenseLayer> net{{Tensor::identity(2), Tensor({2}), Activation::Linear}};
  EXPECT_EQ(forward(net, Tensor::vector({1, 2})).output, Tensor::from_rows({{1, 2}}));
}

TEST(Forward, HandEvaluatedRelu) {
  const std::vector<DenseLayer> net{{Tensor::from_rows({{1, -1}}), Tensor::vector({-1}), Activation::ReLU}};
  const Tensor out = forward(net, Tensor::vector({2, 0})).output;
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], 1.0);
}

TEST(Forward, AllZeroMaskGivesActivationOfZero) {
  Rng rng(4);
  const auto net = random_net(rng, 3, 6, 4);
  DropoutMask mask;
  for (const auto& l : net) mask.layers.push_back({Tensor(l.weights.shape()), Tensor(l.bias.shape())});
  const Tensor out = forward(net, Tensor::vector({0.3, -1.0, 2.0, 0.5}), &mask).output;
  for (double v : out.values()) EXPECT_EQ(v, activate(net.back().activation, 0.0));
}

TEST(Forward, InputWidthMismatchThrows) {
  Rng rng(1);
  const auto net = random_net(rng, 2, 4, 3);
  EXPECT_THROW(forward(net, Tensor::vector({1, 2})), ShapeError);
}

TEST(Forward, MaskedEqualsUnmaskedWhenDroppedEntriesAreZero) {
  Rng rng(6);
  auto net = random_net(rng, 3, 8, 5);
  const std::vector<double> rates(net.size(), 0.3);
  const DropoutMask mask = sample_mask(rates, net, rng);
  const auto zeroed = apply_mask(net, mask);
  const Tensor x = dsur::testing::random_matrix(4, 5, rng);
  EXPECT_EQ(forward(zeroed, x, &mask).output, forward(zeroed, x).output);
}

TEST(Backward, SingleLinearLayerClosedForm) {
  const std::vector<DenseLayer> net{{Tensor::from_rows({{0.5, -2.0, 1.0}}), Tensor::vector({0.25}), Activation::Linear}};
  const Tensor x = Tensor::vector({3.0, -1.0, 4.0});
  const BackwardResult g = backward(forward(net, x), Tensor::from_rows({{1.0}}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(g.layers[0].weights[i], x[i]);
  EXPECT_EQ(g.layers[0].bias[0], 1.0);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(2);
  const auto net = random_net(rng, 3, 6, 4);
  const ForwardCache cache = forward(net, dsur::testing::random_matrix(3, 4, rng));
  const BackwardResult g = backward(cache, Tensor(cache.output.shape()));
  for (const auto& l : g.layers) {
    for (double v : l.weights.values()) EXPECT_EQ(v, 0.0);
    for (double v : l.bias.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Backward, WithoutCacheIsUsageError) {
  EXPECT_THROW(backward(ForwardCache{}, Tensor::from_rows({{1.0}})), UsageError);
}

TEST(Backward, FiniteDifferencesOnRandomNetworks) {
  Rng rng(2024);
  const double h = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t depth = 1 + rng.below(3), in = 1 + rng.below(8);
    auto net = random_net(rng, depth, 8, in);
    const Tensor x = dsur::testing::random_matrix(3, in, rng, -2.0, 2.0);
    const ForwardCache cache = forward(net, x);
    if (near_kink(cache)) continue;
    const Tensor c = dsur::testing::random_matrix(3, cache.output.cols(), rng);
    const BackwardResult g = backward(cache, c);
    for (std::size_t l = 0; l < net.size(); ++l) {
      for (Tensor* param : {&net[l].weights, &net[l].bias}) {
        const Tensor& analytic = param == &net[l].weights ? g.layers[l].weights : g.layers[l].bias;
        for (std::size_t i = 0; i < param->size(); ++i) {
          const double keep = (*param)[i];
          (*param)[i] = keep + h;
          const double up = weighted_output(net, x, c);
          (*param)[i] = keep - h;
          const double down = weighted_output(net, x, c);
          (*param)[i] = keep;
          const double numeric = (up - down) / (2 * h);
          EXPECT_LT(relative_gap(analytic[i], numeric), 1e-4)
              << "trial " << trial << " layer " << l << " entry " << i;
          ++checked;
        }
      }
    }
  }
  EXPECT_GT(checked, 200);
}

TEST(Backward, MaskedGradientsVanishOnDroppedEntries) {
  Rng rng(12);
  const auto net = random_net(rng, 3, 6, 4);
  const DropoutMask mask = sample_mask(std::vector<double>(3, 0.5), net, rng);
  const ForwardCache cache = forward(net, dsur::testing::random_matrix(5, 4, rng), &mask);
  const BackwardResult g = backward(cache, Tensor(cache.output.shape(), 1.0));
  for (std::size_t l = 0; l < net.size(); ++l) {
    for (std::size_t i = 0; i < mask.layers[l].weights.size(); ++i)
      if (mask.layers[l].weights[i] == 0.0) EXPECT_EQ(g.layers[l].weights[i], 0.0);
    for (std::size_t i = 0; i < mask.layers[l].bias.size(); ++i)
      if (mask.layers[l].bias[i] == 0.0) EXPECT_EQ(g.layers[l].bias[i], 0.0);
  }
}

TEST(LearningRate, Schedule) {
  AdamConfig cfg;
  EXPECT_EQ(lr_at(cfg, 0), 1e-2);
  EXPECT_NEAR(lr_at(cfg, 10000), 9.7e-3, 1e-15);
  EXPECT_NEAR(lr_at(cfg, 5000), 1e-2 * std::sqrt(0.97), 1e-15);
  cfg.decay_rate = 1.0;
  for (std::uint64_t s : {0, 1, 12345, 1000000}) EXPECT_EQ(lr_at(cfg, s), 1e-2);
}

TEST(LearningRate, StaircaseHoldsWithinInterval) {
  AdamConfig cfg;
  cfg.staircase = true;
  EXPECT_EQ(lr_at(cfg, 9999), 1e-2);
  EXPECT_NEAR(lr_at(cfg, 10000), 9.7e-3, 1e-15);
  EXPECT_NEAR(lr_at(cfg, 19999), 9.7e-3, 1e-15);
}

TEST(LearningRate, NonIncreasing) {
  AdamConfig cfg;
  double prev = lr_at(cfg, 0);
  for (std::uint64_t s = 1; s < 100000; s += 997) {
    const double cur = lr_at(cfg, s);
    EXPECT_LE(cur, prev);
    prev = cur;
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor w = Tensor::vector({1.0, -2.0});
  std::vector<Tensor*> params{&w};
  const std::vector<Tensor> grads{Tensor({2})};
  AdamState st{AdamConfig{}, {}, {}, 0};
  adam_step(params, grads, st);
  EXPECT_EQ(w, Tensor::vector({1.0, -2.0}));
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor w = Tensor::vector({0.0});
  std::vector<Tensor*> params{&w};
  AdamState st{AdamConfig{}, {}, {}, 0};
  adam_step(params, std::vector<Tensor>{Tensor::vector({1.0})}, st);
  // m_hat = v_hat = 1, so the step is lr / (1 + eps).
  EXPECT_NEAR(w[0], -1e-2 / (1.0 + 1e-8), 1e-18);
}

TEST(Adam, DescendsScalarQuadratic) {
  Tensor w = Tensor::vector({1.0});
  std::vector<Tensor*> params{&w};
  AdamState st{AdamConfig{}, {}, {}, 0};
  double prev = 1.0;
  for (int step = 0; step < 100; ++step) {
    adam_step(params, std::vector<Tensor>{Tensor::vector({2.0 * w[0]})}, st);
    if (step >= 5) EXPECT_LT(std::abs(w[0]), prev) << "step " << step;
    prev = std::abs(w[0]);
  }
  EXPECT_LT(std::abs(w[0]), 0.5);
  EXPECT_EQ(st.step, 100u);
}

TEST(Adam, MatchesHandCodedReference) {
  // f(a, b) = 3 (a - 1)^2 + 0.5 (b + 2)^2 + a b
  auto grad = [](double a, double b) { return std::pair{6.0 * (a - 1.0) + b, (b + 2.0) + a}; };
  Tensor w = Tensor::vector({0.5, 0.5});
  std::vector<Tensor*> params{&w};
  AdamConfig cfg;
  cfg.decay_steps = 50;
  cfg.decay_rate = 0.9;
  AdamState st{cfg, {}, {}, 0};

  double a = 0.5, b = 0.5, ma = 0, mb = 0, va = 0, vb = 0;
  for (int t = 1; t <= 200; ++t) {
    const auto [ga, gb] = grad(a, b);
    ma = 0.9 * ma + 0.1 * ga;
    mb = 0.9 * mb + 0.1 * gb;
    va = 0.999 * va + 0.001 * ga * ga;
    vb = 0.999 * vb + 0.001 * gb * gb;
    const double lr = 1e-2 * std::pow(0.9, (t - 1) / 50.0);
    const double c1 = 1.0 - std::pow(0.9, t), c2 = 1.0 - std::pow(0.999, t);
    a -= lr * (ma / c1) / (std::sqrt(va / c2) + 1e-8);
    b -= lr * (mb / c1) / (std::sqrt(vb / c2) + 1e-8);

    const auto [g0, g1] = grad(w[0], w[1]);
    adam_step(params, std::vector<Tensor>{Tensor::vector({g0, g1})}, st);
    ASSERT_NEAR(w[0], a, 1e-10) << "step " << t;
    ASSERT_NEAR(w[1], b, 1e-10) << "step " << t;
  }
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  Tensor w0 = Tensor::vector({1.0}), w1 = Tensor::vector({1.0, 2.0});
  std::vector<Tensor*> params{&w0, &w1};
  AdamState st{AdamConfig{}, {}, {}, 0};
  try {
    adam_step(params, std::vector<Tensor>{Tensor::vector({0.1}), Tensor::vector({0.0, NAN})}, st);
    FAIL() << "expected a numeric error";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("parameter 1"), std::string::npos) << e.what();
  }
  EXPECT_EQ(w0[0], 1.0);
  EXPECT_EQ(st.step, 0u);
}

TEST(Adam, ShapeMismatchThrows) {
  Tensor w = Tensor::vector({1.0});
  std::vector<Tensor*> params{&w};
  AdamState st{AdamConfig{}, {}, {}, 0};
  EXPECT_THROW(adam_step(params, std::vector<Tensor>{Tensor::vector({1.0, 2.0})}, st), ShapeError);
}

TEST(DropoutMask, ZeroRateKeepsEverything) {
  Rng rng(1);
  const auto net = random_net(rng, 3, 8, 4);
  const DropoutMask m = sample_mask(std::vector<double>(3, 0.0), net, rng);
  for (const auto& l : m.layers) {
    for (double v : l.weights.values()) EXPECT_EQ(v, 1.0);
    for (double v : l.bias.values()) EXPECT_EQ(v, 1.0);
  }
}

TEST(DropoutMask, KeepFrequency) {
  Rng rng(99);
  const std::vector<DenseLayer> net{glorot_layer(400, 250, Activation::ReLU, rng)};
  const DropoutMask m = sample_mask(std::vector<double>{0.1}, net, rng);
  double ones = 0, total = 0;
  for (double v : m.layers[0].weights.values()) {
    ASSERT_TRUE(v == 0.0 || v == 1.0);
    ones += v;
    ++total;
  }
  EXPECT_EQ(total, 100000);
  EXPECT_NEAR(ones / total, 0.9, 0.01);
}

TEST(DropoutMask, SameSeedSameMask) {
  Rng build_rng(5);
  const auto net = random_net(build_rng, 3, 8, 4);
  Rng a(77), b(77);
  const std::vector<double> rates(3, 0.2);
  const DropoutMask ma = sample_mask(rates, net, a), mb = sample_mask(rates, net, b);
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_EQ(ma.layers[l].weights, mb.layers[l].weights);
    EXPECT_EQ(ma.layers[l].bias, mb.layers[l].bias);
  }
}

TEST(DropoutMask, InvalidRateIsConfigError) {
  Rng rng(1);
  const auto net = random_net(rng, 1, 3, 2);
  EXPECT_THROW(sample_mask(std::vector<double>{1.0}, net, rng), ConfigError);
  EXPECT_THROW(sample_mask(std::vector<double>{-0.1}, net, rng), ConfigError);
}
