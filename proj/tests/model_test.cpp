#include <gtest/gtest.h>

#include <random>

#include "dflnet/model.hpp"
#include "dflnet/pcl.hpp"

using dflnet::Shape;
using T = dflnet::Tensor<double>;
using Model = dflnet::Model<double>;

namespace {

T random_images(std::size_t n, const Shape& in, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  T x(Shape{n, in[0], in[1], in[2]});
  for (auto& v : x.data()) v = u(rng);
  return x;
}

T& param(const Model& m, const std::string& name) {
  for (auto& p : m.parameters())
    if (p.name == name) return const_cast<T&>(p.value);
  throw std::runtime_error("no parameter " + name);
}

void zero(T& t) {
  for (auto& v : t.data()) v = 0.0;
}

}  // namespace

TEST(Plan, HeadInputWithoutDfl) {
  const auto plan = dflnet::plan_architecture(dflnet::micro_resnet(3), false, 10);
  // 28 -> 14 -> 7, widths 8, 16, 32.
  EXPECT_EQ(plan.stage_channels, (std::vector<std::size_t>{8, 16, 32}));
  EXPECT_EQ(plan.stage_h, (std::vector<std::size_t>{28, 14, 7}));
  EXPECT_EQ(plan.feature_dim, 32u * 7 * 7);
  EXPECT_TRUE(plan.dfl_channels.empty());
}

TEST(Plan, DflChannelIdentityForAllConfigs) {
  for (std::size_t stages : {2, 3, 4})
    for (const Shape& in : {Shape{1, 28, 28}, Shape{3, 32, 32}, Shape{1, 16, 16}})
      for (std::size_t o : {0, 3}) {
        auto spec = dflnet::micro_resnet(stages, in);
        spec.dfl_channels = o;
        const auto plan = dflnet::plan_architecture(spec, true, 10);
        const std::size_t cm = plan.stage_channels.back();
        std::size_t expect = cm;
        for (std::size_t j = 0; j + 1 < stages; ++j) {
          EXPECT_EQ(plan.dfl_channels[j], o ? o : (cm + 1) / 2);
          expect += plan.dfl_channels[j];
        }
        EXPECT_EQ(plan.feature_channels, expect);
        EXPECT_EQ(plan.feature_dim, expect * plan.stage_h.back() * plan.stage_w.back());

        Model m(spec, true, 10, 1);
        const auto fwd = m.forward(random_images(2, in, 3));
        EXPECT_EQ(fwd.fused.shape(), (Shape{2, expect, plan.stage_h.back(), plan.stage_w.back()}));
        // Each pooled deconv block output has the last stage's spatial size.
        for (std::size_t j = 0; j + 1 < stages; ++j) {
          T d = m.deconv_blocks()[j].forward(fwd.maps[j]);
          EXPECT_EQ(d.dim(2), plan.stage_h.back());
          EXPECT_EQ(d.dim(3), plan.stage_w.back());
        }
      }
}

TEST(Plan, EveryMicroResnetUnifiesAtBuild) {
  // Halving only even sizes keeps every stage an integer multiple of the last.
  for (std::size_t stages : {2, 3, 4})
    for (const Shape& in : {Shape{1, 12, 12}, Shape{1, 6, 9}, Shape{1, 12, 20}, Shape{1, 7, 7}})
      EXPECT_NO_THROW(dflnet::plan_architecture(dflnet::micro_resnet(stages, in), true, 10));
  // A pool factor that is not an integer is rejected before any tensor exists.
  auto spec = dflnet::micro_resnet(2, {1, 9, 9});
  spec.blocks_per_stage = 0;
  EXPECT_THROW(dflnet::plan_architecture(spec, true, 10), dflnet::SpecError);
}

TEST(Plan, RejectsBadSpecs) {
  EXPECT_THROW(dflnet::plan_architecture(dflnet::micro_resnet(1), false, 10), dflnet::SpecError);
  EXPECT_THROW(dflnet::plan_architecture(dflnet::micro_resnet(3), false, 1), dflnet::SpecError);
  auto spec = dflnet::micro_resnet(3);
  spec.family = "vgg";
  EXPECT_THROW(dflnet::plan_architecture(spec, false, 10), dflnet::SpecError);
}

TEST(Model, SameSeedGivesIdenticalParameters) {
  Model a(dflnet::micro_resnet(3), true, 10, 42);
  Model b(dflnet::micro_resnet(3), true, 10, 42);
  Model c(dflnet::micro_resnet(3), true, 10, 43);
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  bool differs = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters()[i].name, b.parameters()[i].name);
    EXPECT_EQ(a.parameters()[i].value.vec(), b.parameters()[i].value.vec());
    differs |= a.parameters()[i].value.vec() != c.parameters()[i].value.vec();
  }
  EXPECT_TRUE(differs);
}

TEST(Model, FeatureDimensionMatchesPlan) {
  Model plain(dflnet::micro_resnet(3), false, 10, 0);
  Model dfl(dflnet::micro_resnet(3), true, 10, 0);
  T x = random_images(3, {1, 28, 28}, 1);
  EXPECT_EQ(plain.forward(x).features.shape(), (Shape{3, 32 * 7 * 7}));
  EXPECT_EQ(dfl.forward(x).features.shape(), (Shape{3, (32 + 16 + 16) * 7 * 7}));
  EXPECT_EQ(dfl.forward(x).logits.shape(), (Shape{3, 10}));
}

TEST(Model, ZeroDeconvKernelsGiveZeroDflBlock) {
  Model m(dflnet::micro_resnet(3), true, 10, 5);
  zero(param(m, "dfl.deconv1.weight"));
  zero(param(m, "dfl.deconv2.weight"));
  const auto fwd = m.forward(T(Shape{2, 1, 28, 28}, 0.0));
  const std::size_t hw = 7 * 7, trunk = 32 * hw, total = fwd.fused.dim(1) * hw;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = trunk; i < total; ++i) EXPECT_EQ(fwd.features[b * total + i], 0.0);
}

TEST(Model, TrunkUnaffectedByDfl) {
  Model plain(dflnet::micro_resnet(3), false, 10, 9);
  Model dfl(dflnet::micro_resnet(3), true, 10, 9);
  T x = random_images(2, {1, 28, 28}, 4);
  const auto a = plain.forward(x);
  const auto b = dfl.forward(x);
  for (std::size_t s = 0; s < 3; ++s) EXPECT_EQ(a.maps[s].vec(), b.maps[s].vec());
  // Without DFL no deconvolution parameters exist at all.
  for (const auto& p : plain.parameters()) EXPECT_EQ(p.name.find("dfl."), std::string::npos);
}

TEST(Model, HeadHasNoBias) {
  // logits = f W^T: f = [1, 0], W = [[2, 0], [0, 3]] gives [2, 0].
  T f(Shape{1, 2}, {1, 0});
  T w(Shape{2, 2}, {2, 0, 0, 3});
  EXPECT_EQ(dflnet::matmul(f, dflnet::transpose(w)).vec(), (std::vector<double>{2, 0}));

  Model m(dflnet::micro_resnet(2, {1, 8, 8}), false, 4, 0);
  zero(param(m, "head.weight"));
  const auto fwd = m.forward(random_images(2, {1, 8, 8}, 0));
  for (double v : fwd.logits.vec()) EXPECT_EQ(v, 0.0);
  T p = dflnet::softmax(fwd.logits, 1);
  for (double v : p.vec()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Model, LogitsEqualFeaturesTimesHead) {
  Model m(dflnet::micro_resnet(2, {1, 8, 8}), true, 3, 2);
  const auto fwd = m.forward(random_images(2, {1, 8, 8}, 6));
  const T& w = m.head_weight();
  const std::size_t d = m.feature_dim();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t k = 0; k < 3; ++k) {
      double s = 0;
      for (std::size_t i = 0; i < d; ++i) s += fwd.features[b * d + i] * w[k * d + i];
      EXPECT_NEAR(fwd.logits[b * 3 + k], s, 1e-12);
    }
}

TEST(Model, IdenticalInputsGiveIdenticalRows) {
  Model m(dflnet::micro_resnet(3), true, 10, 1);
  T one = random_images(1, {1, 28, 28}, 2);
  T x(Shape{3, 1, 28, 28});
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t i = 0; i < 784; ++i) x[b * 784 + i] = one[i];
  const T logits = m.forward_logits(x);
  for (std::size_t k = 0; k < 10; ++k) {
    EXPECT_EQ(logits[k], logits[10 + k]);
    EXPECT_EQ(logits[k], logits[20 + k]);
  }
}

TEST(Model, WrongInputShapeIsDimensionError) {
  Model m(dflnet::micro_resnet(2), false, 10, 0);
  EXPECT_THROW(m.forward(T(Shape{1, 3, 28, 28})), dflnet::DimensionError);
}

TEST(InputGradient, MatchesFiniteDifferences) {
  Model m(dflnet::micro_resnet(2, {1, 6, 6}), true, 3, 11);
  // Non-trivial running statistics so evaluation normalization is generic.
  m.forward_train(random_images(8, {1, 6, 6}, 1));
  const T x = random_images(2, {1, 6, 6}, 12);
  std::vector<int> y{1, 2};
  auto loss = [](const dflnet::Forward<double>& f, std::span<const int> lab) { return dflnet::ce_loss(f.logits, lab); };
  const T g = dflnet::input_gradient(m, x, loss, y);
  const double h = 1e-5;
  double worst = 0;
  dflnet::NoGradGuard guard;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    T up = x.detach(), down = x.detach();
    up[i] += h;
    down[i] -= h;
    const double fd = (loss(m.forward(up), y).item() - loss(m.forward(down), y).item()) / (2 * h);
    const double mag = std::max(std::abs(fd), std::abs(g[i]));
    if (mag > 1e-8) worst = std::max(worst, std::abs(fd - g[i]) / mag);
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(InputGradient, LeavesParametersUntouched) {
  Model m(dflnet::micro_resnet(2, {1, 6, 6}), false, 3, 1);
  const T x = random_images(2, {1, 6, 6}, 2);
  std::vector<int> y{0, 1};
  std::vector<std::vector<double>> before;
  for (const auto& p : m.parameters()) before.push_back(p.value.vec());
  dflnet::input_gradient(m, x, [](const auto& f, std::span<const int> lab) { return dflnet::ce_loss(f.logits, lab); },
                         y);
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(m.parameters()[i].value.vec(), before[i]);
    EXPECT_FALSE(m.parameters()[i].value.has_grad()) << m.parameters()[i].name;
  }
}

TEST(InputGradient, SumOfLogitsThroughZeroHeadIsZero) {
  Model m(dflnet::micro_resnet(2, {1, 6, 6}), false, 3, 1);
  zero(param(m, "head.weight"));
  std::vector<int> y{0};
  const T g = dflnet::input_gradient(m, random_images(1, {1, 6, 6}, 3),
                                     [](const auto& f, std::span<const int>) { return dflnet::sum(f.logits); }, y);
  for (double v : g.vec()) EXPECT_EQ(v, 0.0);
}

TEST(Dfl, SkipPathCarriesGradientToStageOne) {
  Model m(dflnet::micro_resnet(3, {1, 12, 12}), true, 4, 7);
  // Freeze the main path by zeroing the head columns that read the last stage.
  T& w = param(m, "head.weight");
  const std::size_t d = m.feature_dim();
  const std::size_t trunk = m.plan().stage_channels.back() * m.plan().stage_h.back() * m.plan().stage_w.back();
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t i = 0; i < trunk; ++i) w[k * d + i] = 0.0;
  T& kernel = param(m, "stage1.block0.conv_a.weight");
  std::vector<int> y{0, 1, 2, 3};
  const auto fwd = m.forward(random_images(4, {1, 12, 12}, 8));
  dflnet::backward(dflnet::ce_loss(fwd.logits, y), {kernel});
  ASSERT_TRUE(kernel.has_grad());
  double norm = 0;
  for (double v : kernel.grad()) norm += v * v;
  EXPECT_GT(norm, 0.0);

  // Without DFL the same freeze leaves stage one without gradient.
  Model plain(dflnet::micro_resnet(3, {1, 12, 12}), false, 4, 7);
  zero(param(plain, "head.weight"));
  T& k2 = param(plain, "stage1.block0.conv_a.weight");
  dflnet::backward(dflnet::ce_loss(plain.forward(random_images(4, {1, 12, 12}, 8)).logits, y), {k2});
  double n2 = 0;
  if (k2.has_grad())
    for (double v : k2.grad()) n2 += v * v;
  EXPECT_EQ(n2, 0.0);
}

TEST(Model, CloneIsIndependent) {
  Model a(dflnet::micro_resnet(2, {1, 8, 8}), true, 3, 1);
  Model b = a.clone();
  param(b, "head.weight")[0] += 1.0;
  EXPECT_NE(param(a, "head.weight")[0], param(b, "head.weight")[0]);
}

TEST(Model, CopyStateAcrossPrecisions) {
  dflnet::Model<float> f(dflnet::micro_resnet(2, {1, 8, 8}), true, 3, 1);
  Model d(dflnet::micro_resnet(2, {1, 8, 8}), true, 3, 99);
  dflnet::copy_state(f, d);
  for (std::size_t i = 0; i < f.parameters().size(); ++i)
    for (std::size_t k = 0; k < f.parameters()[i].value.numel(); ++k)
      EXPECT_EQ(static_cast<double>(f.parameters()[i].value[k]), d.parameters()[i].value[k]);
}
