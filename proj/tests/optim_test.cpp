#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dforest/optim.hpp"

namespace dforest {
namespace {

std::vector<std::vector<double>> gradient_sequence(std::size_t steps, std::size_t n,
                                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<double>> seq(steps, std::vector<double>(n));
  for (auto& g : seq)
    for (auto& v : g) v = unit(rng) * std::exp(unit(rng));
  return seq;
}

TEST(Sgd, ClosedFormStep) {
  Optimizer opt({OptimizerKind::sgd, 0.1});
  std::vector<double> theta{1.0};
  std::vector<double> g{0.5};
  opt.step(theta, g);
  EXPECT_EQ(theta[0], 1.0 - 0.1 * 0.5);
  EXPECT_DOUBLE_EQ(theta[0], 0.95);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Sgd, ZeroGradientIsNoop) {
  Optimizer opt({OptimizerKind::sgd, 0.1});
  std::vector<double> theta{1.5, -2.0};
  opt.step(theta, std::vector<double>{0.0, 0.0});
  EXPECT_EQ(theta, (std::vector<double>{1.5, -2.0}));
}

TEST(Adam, FirstStepHasLearningRateMagnitude) {
  for (double g : {1e-3, 0.5, -7.0, 300.0}) {
    Optimizer opt({OptimizerKind::adam});
    std::vector<double> theta{0.25};
    opt.step(theta, std::vector<double>{g});
    const double expect = 0.002 * std::abs(g) / (std::abs(g) + 1e-8);
    EXPECT_NEAR(std::abs(theta[0] - 0.25), expect, 1e-15);
    EXPECT_NEAR(std::abs(theta[0] - 0.25), 0.002, 1e-7);
    EXPECT_EQ(std::signbit(theta[0] - 0.25), g > 0);
  }
}

TEST(Adam, ZeroGradientWithZeroMomentsIsNoop) {
  for (auto kind : {OptimizerKind::adam, OptimizerKind::qhadam}) {
    Optimizer opt({kind});
    std::vector<double> theta{1.0, -3.0};
    opt.step(theta, std::vector<double>{0.0, 0.0});
    EXPECT_EQ(theta, (std::vector<double>{1.0, -3.0}));
  }
}

TEST(QhAdam, UnitNuMatchesAdamTrajectory) {
  const auto seq = gradient_sequence(100, 7, 3);
  OptimizerConfig adam_cfg{OptimizerKind::adam, 0.01};
  OptimizerConfig qh_cfg{OptimizerKind::qhadam, 0.01};
  qh_cfg.nu1 = qh_cfg.nu2 = 1.0;
  Optimizer adam(adam_cfg), qh(qh_cfg);
  std::vector<double> a(7, 0.5), b(7, 0.5);
  for (const auto& g : seq) {
    adam.step(a, g);
    qh.step(b, g);
    for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(QhAdam, SecondStepMatchesHandComputation) {
  OptimizerConfig cfg{OptimizerKind::qhadam, 0.01};
  Optimizer opt(cfg);
  std::vector<double> theta{0.0};
  const double g1 = 0.4, g2 = -1.3;
  opt.step(theta, std::vector<double>{g1});
  opt.step(theta, std::vector<double>{g2});
  double m = 0.1 * g1, v = 0.001 * g1 * g1;
  const double step1 = 0.01 * ((0.3 * g1 + 0.7 * (m / 0.1)) / (std::sqrt(v / 0.001) + 1e-8));
  m = 0.9 * m + 0.1 * g2;
  v = 0.999 * v + 0.001 * g2 * g2;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  const double step2 = 0.01 * (0.3 * g2 + 0.7 * mh) / (std::sqrt(vh) + 1e-8);
  EXPECT_NEAR(theta[0], -step1 - step2, 1e-14);
}

TEST(Optimizer, IdenticalRunsAreBitIdentical) {
  const auto seq = gradient_sequence(50, 5, 8);
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam, OptimizerKind::qhadam}) {
    Optimizer a({kind}), b({kind});
    std::vector<double> x(5, 1.0), y(5, 1.0);
    for (const auto& g : seq) {
      a.step(x, g);
      b.step(y, g);
    }
    EXPECT_EQ(x, y);
  }
}

TEST(Optimizer, NonFiniteGradientAbortsWithoutUpdating) {
  Optimizer opt({OptimizerKind::qhadam});
  std::vector<double> theta{1.0, 2.0};
  EXPECT_THROW(opt.step(theta, std::vector<double>{0.1, NAN}), Error);
  EXPECT_THROW(opt.step(theta, std::vector<double>{INFINITY, 0.1}), Error);
  EXPECT_EQ(theta, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(opt.steps(), 0u);
}

TEST(Optimizer, DecoupledWeightDecay) {
  OptimizerConfig cfg{OptimizerKind::sgd, 0.1};
  cfg.weight_decay = 0.5;
  Optimizer opt(cfg);
  std::vector<double> theta{2.0};
  opt.step(theta, std::vector<double>{1.0});
  EXPECT_DOUBLE_EQ(theta[0], 2.0 * (1 - 0.05) - 0.1);
}

TEST(Optimizer, ParameterGroupsShareOneState) {
  ModelShape shape{4, 2, 3, 1, 2, GateKind::sigmoid};
  auto params = initialize_parameters(shape, 1);
  auto grads = GradientBuffer::like(params);
  for_each_group(grads.values, [](ParamGroup, std::size_t, std::span<double> s) {
    for (auto& v : s) v = 1.0;
  });
  auto before = params;
  Optimizer opt({OptimizerKind::sgd, 0.5});
  opt.step(params, grads);
  std::vector<double> a, b;
  for_each_group(before, [&](ParamGroup, std::size_t, std::span<const double> s) {
    a.insert(a.end(), s.begin(), s.end());
  });
  for_each_group(params, [&](ParamGroup, std::size_t, std::span<const double> s) {
    b.insert(b.end(), s.begin(), s.end());
  });
  ASSERT_EQ(a.size(), parameter_count(params));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(b[i], a[i] - 0.5);
}

TEST(OptimizerConfig, DefaultsAndValidation) {
  OptimizerConfig c;
  EXPECT_EQ(c.kind, OptimizerKind::qhadam);
  EXPECT_EQ(c.learning_rate, 0.002);
  EXPECT_EQ(c.beta1, 0.9);
  EXPECT_EQ(c.beta2, 0.999);
  EXPECT_EQ(c.epsilon, 1e-8);
  EXPECT_EQ(c.nu1, 0.7);
  EXPECT_EQ(c.nu2, 1.0);
  EXPECT_EQ(c.weight_decay, 0.0);
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_THROW(parse_optimizer_kind("rmsprop"), Error);
}

}  // namespace
}  // namespace dforest
