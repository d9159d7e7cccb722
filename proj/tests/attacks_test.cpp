#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dflnet/attacks.hpp"

using dflnet::AttackFamily;
using dflnet::AttackSpec;
using dflnet::Shape;
using T = dflnet::Tensor<double>;
using Target = dflnet::Target<double>;

namespace {

// Two-class linear model with rows w_0 = (1, 0), w_1 = (0, 1) on inputs N x 2.
Target linear_target() {
  static const T w(Shape{2, 2}, {1, 0, 0, 1});
  Target t;
  t.logits = [](const T& x) { return dflnet::matmul(x, dflnet::transpose(w)); };
  t.loss = [](const T& x, std::span<const int> y) {
    return dflnet::neg(dflnet::sum(dflnet::pick(dflnet::log_softmax(dflnet::matmul(x, dflnet::transpose(w)), 1), y)));
  };
  return t;
}

// Loss sum(a * x) with a fixed direction: the gradient never changes.
Target constant_gradient_target(const T& a) {
  Target t;
  t.logits = [](const T& x) { return dflnet::reshape(dflnet::sum(x, 1, true), Shape{x.dim(0), 1}); };
  t.loss = [a](const T& x, std::span<const int>) { return dflnet::sum(dflnet::mul(x, a)); };
  return t;
}

AttackSpec spec(AttackFamily f, double eps, int iters = 10) {
  AttackSpec s;
  s.family = f;
  s.epsilon = eps;
  s.iterations = iters;
  return s;
}

T random_unit(Shape s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  T t(std::move(s));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

dflnet::Model<double> small_model(std::uint64_t seed) {
  dflnet::Model<double> m(dflnet::micro_resnet(2, {1, 6, 6}), true, 3, seed);
  std::mt19937_64 rng(seed);
  m.forward_train(random_unit({8, 1, 6, 6}, rng));
  return m;
}

}  // namespace

TEST(Fgsm, ClosedFormLinearModel) {
  T x(Shape{1, 2}, {0.5, 0.5});
  std::vector<int> y{0};
  const auto adv = dflnet::fgsm(linear_target(), x, y, spec(AttackFamily::fgsm, 0.1));
  EXPECT_EQ(adv.x_adv[0], 0.4);
  EXPECT_EQ(adv.x_adv[1], 0.6);
}

TEST(Fgsm, ZeroEpsilonIsIdentity) {
  std::mt19937_64 rng(1);
  T x = random_unit({3, 2}, rng);
  std::vector<int> y{0, 1, 0};
  EXPECT_EQ(dflnet::fgsm(linear_target(), x, y, spec(AttackFamily::fgsm, 0.0)).x_adv.vec(), x.vec());
}

TEST(Fgsm, ZeroGradientPixelUnchanged) {
  T a(Shape{1, 3}, {1.0, 0.0, -1.0});
  T x(Shape{1, 3}, {0.5, 0.5, 0.5});
  std::vector<int> y{0};
  const auto adv = dflnet::fgsm(constant_gradient_target(a), x, y, spec(AttackFamily::fgsm, 0.2));
  EXPECT_EQ(adv.x_adv.vec(), (std::vector<double>{0.7, 0.5, 0.3}));
}

TEST(Reductions, AreBitwise) {
  auto model = small_model(3);
  const auto target = dflnet::ce_target(model);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    T x = random_unit({4, 1, 6, 6}, rng);
    std::vector<int> y{0, 1, 2, trial % 3};
    const double eps = 0.05 + 0.1 * trial;
    const auto f = dflnet::fgsm(target, x, y, spec(AttackFamily::fgsm, eps));

    auto b1 = spec(AttackFamily::bim, eps, 1);
    b1.step = eps;
    EXPECT_EQ(dflnet::bim(target, x, y, b1).x_adv.vec(), f.x_adv.vec());

    auto p1 = spec(AttackFamily::pgd, eps, 1);
    p1.step = eps;
    p1.random_start = false;
    EXPECT_EQ(dflnet::pgd(target, x, y, p1).x_adv.vec(), f.x_adv.vec());

    auto b = spec(AttackFamily::bim, eps, 7);
    auto m = spec(AttackFamily::mim, eps, 7);
    m.decay = 0.0;
    EXPECT_EQ(dflnet::mim(target, x, y, m).x_adv.vec(), dflnet::bim(target, x, y, b).x_adv.vec());
  }
}

TEST(Budget, LinfFamiliesStayInBallAndRange) {
  auto model = small_model(5);
  const auto target = dflnet::ce_target(model);
  std::mt19937_64 rng(6);
  for (AttackFamily f : {AttackFamily::fgsm, AttackFamily::bim, AttackFamily::mim, AttackFamily::pgd})
    for (double eps : {0.0, 0.01, 0.3, 0.8}) {
      T x = random_unit({3, 1, 6, 6}, rng);
      std::vector<int> y{0, 1, 2};
      auto s = spec(f, eps, 4);
      s.seed = 17;
      const auto adv = dflnet::generate(target, x, y, s);
      for (std::size_t i = 0; i < x.numel(); ++i) {
        EXPECT_LE(std::abs(adv.x_adv[i] - x[i]), eps + 1e-6);
        EXPECT_GE(adv.x_adv[i], 0.0);
        EXPECT_LE(adv.x_adv[i], 1.0);
      }
      for (double d : adv.linf) EXPECT_LE(d, eps + 1e-6);
    }
}

TEST(Mim, ConstantDirectionKeepsSignPattern) {
  std::mt19937_64 rng(7);
  T a = random_unit({2, 5}, rng);
  for (auto& v : a.data()) v -= 0.5;
  T x = random_unit({2, 5}, rng);
  std::vector<int> y{0, 0};
  auto m = spec(AttackFamily::mim, 0.2, 6);
  m.decay = 1.0;
  const auto target = constant_gradient_target(a);
  EXPECT_EQ(dflnet::mim(target, x, y, m).x_adv.vec(), dflnet::bim(target, x, y, spec(AttackFamily::bim, 0.2, 6)).x_adv.vec());
}

TEST(Mim, ZeroGradientTakesNoStep) {
  T a(Shape{1, 3}, 0.0);
  T x(Shape{1, 3}, {0.1, 0.5, 0.9});
  std::vector<int> y{0};
  EXPECT_EQ(dflnet::mim(constant_gradient_target(a), x, y, spec(AttackFamily::mim, 0.3)).x_adv.vec(), x.vec());
}

TEST(Bim, IncreasesConvexSurrogateLoss) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    T c = random_unit({2, 4}, rng);
    Target t;
    t.logits = [](const T& x) { return x; };
    t.loss = [c](const T& x, std::span<const int>) {
      T d = dflnet::sub(x, c);
      return dflnet::sum(dflnet::mul(d, d));
    };
    T x = random_unit({2, 4}, rng);
    std::vector<int> y{0, 0};
    const auto adv = dflnet::bim(t, x, y, spec(AttackFamily::bim, 0.1, 5));
    double before = 0, after = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      before += (x[i] - c[i]) * (x[i] - c[i]);
      after += (adv.x_adv[i] - c[i]) * (adv.x_adv[i] - c[i]);
    }
    EXPECT_GE(after, before);
  }
}

TEST(Pgd, FixedSeedIsDeterministic) {
  auto model = small_model(9);
  const auto target = dflnet::ce_target(model);
  std::mt19937_64 rng(10);
  T x = random_unit({3, 1, 6, 6}, rng);
  std::vector<int> y{2, 1, 0};
  auto s = spec(AttackFamily::pgd, 0.3);
  s.seed = 99;
  const auto a = dflnet::pgd(target, x, y, s);
  const auto b = dflnet::pgd(target, x, y, s);
  EXPECT_EQ(a.x_adv.vec(), b.x_adv.vec());
  s.seed = 100;
  EXPECT_NE(dflnet::pgd(target, x, y, s).x_adv.vec(), a.x_adv.vec());
}

TEST(Attacks, DoNotChangeParameters) {
  auto model = small_model(11);
  std::vector<std::vector<double>> before;
  for (const auto& p : model.state()) before.push_back(p.value.vec());
  const auto target = dflnet::ce_target(model);
  std::mt19937_64 rng(12);
  T x = random_unit({2, 1, 6, 6}, rng);
  std::vector<int> y{0, 1};
  for (AttackFamily f : {AttackFamily::fgsm, AttackFamily::bim, AttackFamily::mim, AttackFamily::pgd, AttackFamily::cw}) {
    auto s = spec(f, 0.2, 3);
    s.cw_steps = 5;
    dflnet::generate(target, x, y, s);
  }
  const auto after = model.state();
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(after[i].value.vec(), before[i]) << after[i].name;
    EXPECT_FALSE(after[i].value.has_grad()) << after[i].name;
  }
}

TEST(Generate, NoneReturnsCleanBatch) {
  std::mt19937_64 rng(13);
  T x = random_unit({3, 2}, rng);
  std::vector<int> y{0, 1, 1};
  const auto adv = dflnet::generate(linear_target(), x, y, spec(AttackFamily::none, 0.3));
  EXPECT_EQ(adv.x_adv.vec(), x.vec());
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(adv.linf[i], 0.0);
    EXPECT_EQ(adv.l2[i], 0.0);
  }
}

TEST(Generate, SuccessMatchesRecomputedPredictions) {
  auto model = small_model(14);
  const auto target = dflnet::ce_target(model);
  std::mt19937_64 rng(15);
  T x = random_unit({6, 1, 6, 6}, rng);
  std::vector<int> y{0, 1, 2, 0, 1, 2};
  const auto adv = dflnet::generate(target, x, y, spec(AttackFamily::pgd, 0.3));
  const T logits = model.forward_logits(adv.x_adv);
  for (std::size_t i = 0; i < 6; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k)
      if (logits[i * 3 + k] > logits[i * 3 + best]) best = k;
    EXPECT_EQ(adv.predictions[i], static_cast<int>(best));
    EXPECT_EQ(adv.success[i] != 0, static_cast<int>(best) != y[i]);
    double linf = 0, l2 = 0;
    for (std::size_t p = 0; p < 36; ++p) {
      const double d = adv.x_adv[i * 36 + p] - x[i * 36 + p];
      linf = std::max(linf, std::abs(d));
      l2 += d * d;
    }
    EXPECT_DOUBLE_EQ(adv.linf[i], linf);
    EXPECT_NEAR(adv.l2[i], std::sqrt(l2), 1e-12);
  }
}

TEST(Generate, ExampleDoesNotDependOnBatchCompanions) {
  auto model = small_model(16);
  const auto target = dflnet::ce_target(model);
  std::mt19937_64 rng(17);
  T x = random_unit({4, 1, 6, 6}, rng);
  std::vector<int> y{0, 1, 2, 1};
  auto s = spec(AttackFamily::bim, 0.3, 5);
  const auto all = dflnet::bim(target, x, y, s);
  T first(Shape{1, 1, 6, 6}, std::vector<double>(x.vec().begin(), x.vec().begin() + 36));
  const auto one = dflnet::bim(target, first, std::span<const int>(y).first(1), s);
  EXPECT_EQ(one.x_adv.vec(), std::vector<double>(all.x_adv.vec().begin(), all.x_adv.vec().begin() + 36));
}

TEST(Cw, ZeroLearningRateKeepsInput) {
  std::mt19937_64 rng(18);
  T x = random_unit({2, 2}, rng);
  std::vector<int> y{0, 1};
  auto s = spec(AttackFamily::cw, 0.0);
  s.cw_lr = 0.0;
  s.cw_steps = 10;
  const auto adv = dflnet::cw(linear_target(), x, y, s);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(adv.x_adv[i], x[i], 1e-15);
}

TEST(Cw, DirectionAlignsWithClassDifference) {
  T x(Shape{1, 2}, {0.6, 0.4});
  std::vector<int> y{0};
  auto s = spec(AttackFamily::cw, 0.0);
  s.cw_c = 10;
  s.cw_steps = 200;
  s.cw_lr = 0.01;
  const auto adv = dflnet::cw(linear_target(), x, y, s);
  ASSERT_TRUE(adv.success[0]);
  const double d0 = adv.x_adv[0] - x[0], d1 = adv.x_adv[1] - x[1];
  // w_1 - w_0 = (-1, 1)
  const double cosine = (-d0 + d1) / (std::sqrt(2.0) * std::sqrt(d0 * d0 + d1 * d1));
  EXPECT_GE(cosine, 0.99);
}

TEST(Cw, MisclassifiedInputShrinksTowardClean) {
  T x(Shape{1, 2}, {0.3, 0.7});
  std::vector<int> y{0};  // already predicted as class 1
  auto s = spec(AttackFamily::cw, 0.0);
  s.cw_steps = 50;
  const auto adv = dflnet::cw(linear_target(), x, y, s);
  EXPECT_TRUE(adv.success[0]);
  EXPECT_LT(adv.l2[0], 1e-6);
}

TEST(AttackSpec, ValidatesAndDefaultsSteps) {
  EXPECT_DOUBLE_EQ(spec(AttackFamily::bim, 0.3, 10).step_size(), 0.03);
  EXPECT_DOUBLE_EQ(spec(AttackFamily::pgd, 0.3, 10).step_size(), 0.075);
  EXPECT_DOUBLE_EQ(spec(AttackFamily::fgsm, 0.3).step_size(), 0.3);
  EXPECT_THROW(spec(AttackFamily::fgsm, -0.1).validate(), dflnet::ConfigError);
  EXPECT_THROW(spec(AttackFamily::pgd, 0.1, 0).validate(), dflnet::ConfigError);
  EXPECT_THROW(dflnet::parse_attack_family("lbfgs"), dflnet::ConfigError);
  EXPECT_EQ(dflnet::parse_attack_family("mim"), AttackFamily::mim);
}
