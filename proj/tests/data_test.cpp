#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "dflnet/data.hpp"

namespace fs = std::filesystem;
using dflnet::Shape;
using Dataset = dflnet::Dataset<double>;

namespace {

const fs::path kFixtures = fs::path(DFLNET_SOURCE_DIR) / "tests" / "fixtures";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dflnet_data_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

dflnet::Target<double> model_target(const dflnet::Model<double>& m) { return dflnet::ce_target(m); }

}  // namespace

TEST(Mnist, FixtureRoundTripsExactPixels) {
  const Dataset ds = dflnet::load_mnist<double>(kFixtures / "mnist2");
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.images.shape(), (Shape{2, 1, 28, 28}));
  EXPECT_EQ(ds.labels, (std::vector<int>{3, 8}));
  EXPECT_EQ(ds.num_classes, 10u);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t r = 0; r < 28; ++r)
      for (std::size_t c = 0; c < 28; ++c) {
        const double want = static_cast<double>((37 * i + 11 * r + 3 * c) % 256) / 255.0;
        ASSERT_EQ(ds.images[(i * 28 + r) * 28 + c], want);
      }
}

TEST(Mnist, WriterReproducesFixtureBytes) {
  const Dataset ds = dflnet::load_mnist<double>(kFixtures / "mnist2");
  const fs::path dir = scratch("mnist_write");
  dflnet::write_mnist(dir, ds);
  for (const char* f : {"train-images-idx3-ubyte", "train-labels-idx1-ubyte"}) {
    EXPECT_EQ(read_bytes(dir / f), read_bytes(kFixtures / "mnist2" / f)) << f;
  }
  const Dataset again = dflnet::load_mnist<double>(dir);
  EXPECT_EQ(again.images.vec(), ds.images.vec());
  EXPECT_EQ(again.labels, ds.labels);
}

TEST(Mnist, BadMagicIsFormatErrorWithOffset) {
  try {
    dflnet::load_mnist<double>(kFixtures / "mnist_bad_magic");
    FAIL();
  } catch (const dflnet::FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("00000802"), std::string::npos) << msg;
    EXPECT_NE(msg.find("offset 0"), std::string::npos) << msg;
  }
}

TEST(Mnist, TruncatedFileIsLengthError) {
  const fs::path dir = scratch("mnist_trunc");
  auto img = read_bytes(kFixtures / "mnist2" / "train-images-idx3-ubyte");
  img.resize(img.size() - 1);
  write_bytes(dir / "train-images-idx3-ubyte", img);
  fs::copy_file(kFixtures / "mnist2" / "train-labels-idx1-ubyte", dir / "train-labels-idx1-ubyte");
  EXPECT_THROW(dflnet::load_mnist<double>(dir), dflnet::LengthError);

  img.resize(10);  // inside the header
  write_bytes(dir / "train-images-idx3-ubyte", img);
  EXPECT_THROW(dflnet::load_mnist<double>(dir), dflnet::LengthError);
}

TEST(Mnist, MissingDirectoryIsInputError) {
  EXPECT_THROW(dflnet::load_mnist<double>(kFixtures / "does_not_exist"), dflnet::InputError);
}

TEST(Mnist, OfficialFilesWhenPresent) {
  const char* env = std::getenv("DFLNET_MNIST_DIR");
  const fs::path dir = env ? fs::path(env) : fs::path(DFLNET_SOURCE_DIR) / "data" / "mnist";
  if (!fs::exists(dir / "train-images-idx3-ubyte")) GTEST_SKIP() << "official MNIST not available at " << dir;
  const auto ds = dflnet::load_mnist<float>(dir);
  EXPECT_EQ(ds.size(), 60000u);
  EXPECT_EQ(ds.num_classes, 10u);
}

TEST(Cifar, SingleRecordRoundTrip) {
  const auto ds = dflnet::load_cifar10_files<double>({kFixtures / "cifar_one.bin"}, dflnet::Split::train);
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.labels[0], 6);
  EXPECT_EQ(ds.images.shape(), (Shape{1, 3, 32, 32}));
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t c = 0; c < 32; ++c)
        ASSERT_EQ(ds.images[(ch * 32 + r) * 32 + c], static_cast<double>((5 * ch + 7 * r + 13 * c) % 256) / 255.0);

  const fs::path out = scratch("cifar_write") / "one.bin";
  dflnet::write_cifar10(out, ds);
  EXPECT_EQ(read_bytes(out), read_bytes(kFixtures / "cifar_one.bin"));
}

TEST(Cifar, EmptyAndShortFilesAreLengthErrors) {
  EXPECT_THROW(dflnet::load_cifar10_files<double>({kFixtures / "cifar_empty.bin"}, dflnet::Split::train),
               dflnet::LengthError);
  EXPECT_THROW(dflnet::load_cifar10_files<double>({kFixtures / "cifar_short.bin"}, dflnet::Split::train),
               dflnet::LengthError);
}

TEST(Cifar, DirectoryLayout) {
  const fs::path dir = scratch("cifar_dir");
  fs::copy_file(kFixtures / "cifar_one.bin", dir / "test_batch.bin");
  const auto ds = dflnet::load_cifar10<double>(dir, dflnet::Split::test);
  EXPECT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.split, dflnet::Split::test);
  EXPECT_THROW(dflnet::load_cifar10<double>(dir, dflnet::Split::train), dflnet::InputError);
}

TEST(Blobs, SeedDeterminesDataset) {
  const auto a = dflnet::synthetic_blobs<double>(4, 50, 12, 7);
  const auto b = dflnet::synthetic_blobs<double>(4, 50, 12, 7);
  const auto c = dflnet::synthetic_blobs<double>(4, 50, 12, 8);
  EXPECT_EQ(a.images.vec(), b.images.vec());
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.images.vec(), c.images.vec());
}

TEST(Blobs, LabelsBalancedAndPixelsInRange) {
  const auto ds = dflnet::synthetic_blobs<double>(7, 100, 10, 1);
  std::vector<int> count(7, 0);
  for (int l : ds.labels) ++count[static_cast<std::size_t>(l)];
  const auto [lo, hi] = std::minmax_element(count.begin(), count.end());
  EXPECT_LE(*hi - *lo, 1);
  for (double v : ds.images.vec()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Blobs, TwoClassesAreLinearlySeparable) {
  // Class-mean linear probe: w = mu_1 - mu_0, threshold at the midpoint.
  const auto ds = dflnet::synthetic_blobs<double>(2, 200, 16, 3);
  const std::size_t d = ds.image_numel();
  std::vector<double> mu0(d, 0), mu1(d, 0);
  double n0 = 0, n1 = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto& mu = ds.labels[i] ? mu1 : mu0;
    (ds.labels[i] ? n1 : n0) += 1;
    for (std::size_t p = 0; p < d; ++p) mu[p] += ds.images[i * d + p];
  }
  double bias = 0;
  std::vector<double> w(d);
  for (std::size_t p = 0; p < d; ++p) {
    mu0[p] /= n0;
    mu1[p] /= n1;
    w[p] = mu1[p] - mu0[p];
    bias -= w[p] * (mu0[p] + mu1[p]) / 2;
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double s = bias;
    for (std::size_t p = 0; p < d; ++p) s += w[p] * ds.images[i * d + p];
    correct += (s > 0) == (ds.labels[i] == 1);
  }
  EXPECT_EQ(correct, ds.size());
}

TEST(Batches, FinalPartialBatchKept) {
  const auto plan = dflnet::batch_indices(130, 64, 5);
  ASSERT_EQ(plan.size(), 3u);
  EXPECT_EQ(plan[0].size(), 64u);
  EXPECT_EQ(plan[1].size(), 64u);
  EXPECT_EQ(plan[2].size(), 2u);
}

TEST(Batches, SameSeedSameOrderAndEveryRowOnce) {
  const auto ds = dflnet::synthetic_blobs<double>(3, 130, 6, 2);
  std::vector<std::size_t> seen;
  std::vector<int> labels;
  for (const auto& b : dflnet::batches(ds, 64, 9)) {
    seen.insert(seen.end(), b.indices.begin(), b.indices.end());
    labels.insert(labels.end(), b.y.begin(), b.y.end());
    for (std::size_t i = 0; i < b.indices.size(); ++i) {
      const std::size_t per = ds.image_numel();
      for (std::size_t p = 0; p < per; ++p) ASSERT_EQ(b.x[i * per + p], ds.images[b.indices[i] * per + p]);
    }
  }
  EXPECT_EQ(dflnet::batch_indices(130, 64, 9), dflnet::batch_indices(130, 64, 9));
  EXPECT_NE(dflnet::batch_indices(130, 64, 9), dflnet::batch_indices(130, 64, 10));
  // Multiset equality with the dataset.
  std::vector<std::size_t> sorted = seen;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
  std::vector<int> want = ds.labels;
  std::sort(want.begin(), want.end());
  std::sort(labels.begin(), labels.end());
  EXPECT_EQ(labels, want);
}

TEST(Batches, ZeroBatchSizeIsConfigError) {
  EXPECT_THROW(dflnet::batch_indices(10, 0, 1), dflnet::ConfigError);
}

TEST(Sample, SeededSortedSubset) {
  const auto ds = dflnet::synthetic_blobs<double>(3, 60, 6, 2);
  const auto a = dflnet::sample(ds, 20, 4);
  const auto b = dflnet::sample(ds, 20, 4);
  EXPECT_EQ(a.size(), 20u);
  EXPECT_EQ(a.images.vec(), b.images.vec());
  EXPECT_EQ(dflnet::sample(ds, 0, 4).size(), 60u);
}

class PoisonTest : public ::testing::Test {
 protected:
  PoisonTest() : model(dflnet::micro_resnet(2, {1, 8, 8}), false, 3, 1) {
    ds = dflnet::synthetic_blobs<double>(3, 6, 8, 4);
    batch = dflnet::gather(ds, std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
  }

  dflnet::PoisonPolicy policy(dflnet::AttackFamily f, double fraction) const {
    dflnet::PoisonPolicy p;
    p.fraction = fraction;
    p.attack.family = f;
    p.attack.epsilon = 0.3;
    p.attack.iterations = 10;
    return p;
  }

  dflnet::Model<double> model;
  Dataset ds;
  dflnet::Batch<double> batch;
};

TEST_F(PoisonTest, FractionZeroLeavesBatch) {
  const auto out = dflnet::poison(batch, model_target(model), policy(dflnet::AttackFamily::pgd, 0.0));
  EXPECT_EQ(out.x.vec(), batch.x.vec());
  EXPECT_EQ(out.y, batch.y);
}

TEST_F(PoisonTest, FamilyNoneLeavesBatch) {
  const auto out = dflnet::poison(batch, model_target(model), policy(dflnet::AttackFamily::none, 1.0));
  EXPECT_EQ(out.x.vec(), batch.x.vec());
}

TEST_F(PoisonTest, PgdStaysInBudgetAndKeepsLabels) {
  const auto out = dflnet::poison(batch, model_target(model), policy(dflnet::AttackFamily::pgd, 1.0));
  EXPECT_EQ(out.y, batch.y);
  bool moved = false;
  for (std::size_t i = 0; i < out.x.numel(); ++i) {
    EXPECT_LE(std::abs(out.x[i] - batch.x[i]), 0.3 + 1e-6);
    moved |= out.x[i] != batch.x[i];
  }
  EXPECT_TRUE(moved);
}

TEST_F(PoisonTest, PartialFractionReplacesPrefixOnly) {
  const auto out = dflnet::poison(batch, model_target(model), policy(dflnet::AttackFamily::fgsm, 0.5));
  const std::size_t per = 64;
  for (std::size_t i = 3 * per; i < out.x.numel(); ++i) EXPECT_EQ(out.x[i], batch.x[i]);
  bool moved = false;
  for (std::size_t i = 0; i < 3 * per; ++i) moved |= out.x[i] != batch.x[i];
  EXPECT_TRUE(moved);
}

TEST_F(PoisonTest, FractionOutsideUnitIntervalIsConfigError) {
  EXPECT_THROW(dflnet::poison(batch, model_target(model), policy(dflnet::AttackFamily::fgsm, 1.5)), dflnet::ConfigError);
}
