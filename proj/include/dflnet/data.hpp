#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dflnet/attacks.hpp"

namespace dflnet {

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

template <typename T>
struct Dataset {
  Tensor<T> images;  // N x C x H x W, values in [0, 1]
  std::vector<int> labels;
  std::size_t num_classes = 0;
  Split split = Split::train;

  std::size_t size() const { return labels.size(); }
  Shape image_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }
  std::size_t image_numel() const { return shape_numel(image_shape()); }
};

template <typename T>
struct Batch {
  Tensor<T> x;
  std::vector<int> y;
  std::vector<std::size_t> indices;  // rows of the source dataset
};

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off, const std::string& what) {
  if (off + 4 > b.size()) throw LengthError(what + ": truncated header at offset " + std::to_string(off));
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

inline void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxImages {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;
};

// Big-endian IDX image file (magic 0x00000803).
inline IdxImages read_idx_images(const std::filesystem::path& path) {
  const auto b = detail::read_file(path);
  const std::string what = path.string();
  const auto magic = detail::read_be32(b, 0, what);
  if (magic != kIdxImageMagic) {
    throw FormatError(what + ": bad IDX image magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08x", magic);
      return std::string(buf);
    }() + " at offset 0");
  }
  IdxImages img;
  img.count = detail::read_be32(b, 4, what);
  img.rows = detail::read_be32(b, 8, what);
  img.cols = detail::read_be32(b, 12, what);
  const std::size_t need = std::size_t{img.count} * img.rows * img.cols;
  if (b.size() - 16 < need) {
    throw LengthError(what + ": expected " + std::to_string(need) + " pixel bytes after offset 16, found " +
                      std::to_string(b.size() - 16));
  }
  img.pixels.assign(b.begin() + 16, b.begin() + 16 + static_cast<std::ptrdiff_t>(need));
  return img;
}

inline std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
  const auto b = detail::read_file(path);
  const std::string what = path.string();
  const auto magic = detail::read_be32(b, 0, what);
  if (magic != kIdxLabelMagic) {
    throw FormatError(what + ": bad IDX label magic " + std::to_string(magic) + " at offset 0");
  }
  const std::size_t count = detail::read_be32(b, 4, what);
  if (b.size() - 8 < count) {
    throw LengthError(what + ": expected " + std::to_string(count) + " label bytes after offset 8, found " +
                      std::to_string(b.size() - 8));
  }
  return std::vector<std::uint8_t>(b.begin() + 8, b.begin() + 8 + static_cast<std::ptrdiff_t>(count));
}

inline void write_idx_images(const std::filesystem::path& path, const IdxImages& img) {
  std::vector<std::uint8_t> b;
  detail::put_be32(b, kIdxImageMagic);
  detail::put_be32(b, img.count);
  detail::put_be32(b, img.rows);
  detail::put_be32(b, img.cols);
  b.insert(b.end(), img.pixels.begin(), img.pixels.end());
  detail::write_file(path, b);
}

inline void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> b;
  detail::put_be32(b, kIdxLabelMagic);
  detail::put_be32(b, static_cast<std::uint32_t>(labels.size()));
  b.insert(b.end(), labels.begin(), labels.end());
  detail::write_file(path, b);
}

// dir/{train,t10k}-{images-idx3,labels-idx1}-ubyte
template <typename T>
Dataset<T> load_mnist(const std::filesystem::path& dir, Split split = Split::train) {
  const std::string prefix = split == Split::train ? "train" : "t10k";
  const IdxImages img = read_idx_images(dir / (prefix + "-images-idx3-ubyte"));
  const auto lab = read_idx_labels(dir / (prefix + "-labels-idx1-ubyte"));
  if (lab.size() != img.count) {
    throw FormatError("MNIST " + prefix + ": " + std::to_string(img.count) + " images but " +
                      std::to_string(lab.size()) + " labels");
  }
  Dataset<T> ds;
  ds.split = split;
  ds.num_classes = 10;
  ds.images = Tensor<T>(Shape{img.count, 1, img.rows, img.cols});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) ds.images[i] = static_cast<T>(img.pixels[i] / 255.0);
  for (auto l : lab) {
    if (l >= 10) throw FormatError("MNIST " + prefix + ": label " + std::to_string(l) + " out of range");
    ds.labels.push_back(l);
  }
  return ds;
}

inline constexpr std::size_t kCifarRecord = 3073;

// Concatenated CIFAR-10 binary records: 1 label byte + 3072 channel-major pixels.
template <typename T>
void append_cifar10_file(const std::filesystem::path& path, std::vector<T>& pixels, std::vector<int>& labels) {
  const auto b = detail::read_file(path);
  if (b.empty() || b.size() % kCifarRecord != 0) {
    throw LengthError(path.string() + ": size " + std::to_string(b.size()) + " is not a positive multiple of " +
                      std::to_string(kCifarRecord));
  }
  for (std::size_t off = 0; off < b.size(); off += kCifarRecord) {
    if (b[off] >= 10) throw FormatError(path.string() + ": label " + std::to_string(b[off]) + " at offset " + std::to_string(off));
    labels.push_back(b[off]);
    for (std::size_t p = 1; p < kCifarRecord; ++p) pixels.push_back(static_cast<T>(b[off + p] / 255.0));
  }
}

template <typename T>
Dataset<T> load_cifar10_files(const std::vector<std::filesystem::path>& files, Split split) {
  std::vector<T> pixels;
  std::vector<int> labels;
  for (const auto& f : files) append_cifar10_file(f, pixels, labels);
  Dataset<T> ds;
  ds.split = split;
  ds.num_classes = 10;
  ds.images = Tensor<T>(Shape{labels.size(), 3, 32, 32}, std::move(pixels));
  ds.labels = std::move(labels);
  return ds;
}

// dir/data_batch_{1..5}.bin for train, dir/test_batch.bin for test.
template <typename T>
Dataset<T> load_cifar10(const std::filesystem::path& dir, Split split = Split::train) {
  std::vector<std::filesystem::path> files;
  if (split == Split::train) {
    for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  } else {
    files.push_back(dir / "test_batch.bin");
  }
  return load_cifar10_files<T>(files, split);
}

template <typename T>
void write_cifar10(const std::filesystem::path& path, const Dataset<T>& ds) {
  if (ds.image_shape() != Shape{3, 32, 32}) throw DimensionError("CIFAR-10 writer needs 3x32x32 images");
  std::vector<std::uint8_t> b;
  const std::size_t per = 3072;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    b.push_back(static_cast<std::uint8_t>(ds.labels[i]));
    for (std::size_t p = 0; p < per; ++p) {
      b.push_back(static_cast<std::uint8_t>(std::lround(static_cast<double>(ds.images[i * per + p]) * 255.0)));
    }
  }
  detail::write_file(path, b);
}

// Writes a single-channel dataset as an IDX pair under dir with the MNIST names.
template <typename T>
void write_mnist(const std::filesystem::path& dir, const Dataset<T>& ds) {
  const Shape s = ds.image_shape();
  if (s.size() != 3 || s[0] != 1) throw DimensionError("IDX writer needs 1 x H x W images");
  const std::string prefix = ds.split == Split::train ? "train" : "t10k";
  IdxImages img;
  img.count = static_cast<std::uint32_t>(ds.size());
  img.rows = static_cast<std::uint32_t>(s[1]);
  img.cols = static_cast<std::uint32_t>(s[2]);
  for (T v : ds.images.data()) img.pixels.push_back(static_cast<std::uint8_t>(std::lround(static_cast<double>(v) * 255.0)));
  std::vector<std::uint8_t> lab(ds.labels.begin(), ds.labels.end());
  write_idx_images(dir / (prefix + "-images-idx3-ubyte"), img);
  write_idx_labels(dir / (prefix + "-labels-idx1-ubyte"), lab);
}

// Class-conditional images: a bright Gaussian blob whose centre is placed on
// a ring according to the class, plus pixel noise. Labels are i mod k, so
// classes are balanced within one.
template <typename T>
Dataset<T> synthetic_blobs(std::size_t k, std::size_t n, std::size_t image_size, std::uint64_t seed,
                           double noise = 0.05, std::size_t channels = 1) {
  if (k < 2) throw ConfigError("synthetic_blobs needs k >= 2");
  if (image_size < 4) throw ConfigError("synthetic_blobs needs image_size >= 4");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> pixel_noise(0.0, noise);
  Dataset<T> ds;
  ds.num_classes = k;
  ds.images = Tensor<T>(Shape{n, channels, image_size, image_size});
  const double c = (image_size - 1) / 2.0;
  const double radius = image_size / 4.0;
  const double sigma = image_size / 8.0;
  // Centre jitter is a tenth of the gap between neighbouring class centres so classes never overlap.
  const double gap = 2.0 * radius * std::sin(3.14159265358979323846 / static_cast<double>(k));
  std::normal_distribution<double> jitter(0.0, 0.1 * gap);
  const std::size_t per = channels * image_size * image_size;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % k);
    ds.labels.push_back(label);
    const double angle = 2.0 * 3.14159265358979323846 * label / static_cast<double>(k);
    const double cy = c + radius * std::sin(angle) + jitter(rng);
    const double cx = c + radius * std::cos(angle) + jitter(rng);
    for (std::size_t ch = 0; ch < channels; ++ch)
      for (std::size_t r = 0; r < image_size; ++r)
        for (std::size_t q = 0; q < image_size; ++q) {
          const double d2 = (r - cy) * (r - cy) + (q - cx) * (q - cx);
          const double v = std::exp(-d2 / (2 * sigma * sigma)) + pixel_noise(rng);
          ds.images[i * per + (ch * image_size + r) * image_size + q] = static_cast<T>(std::clamp(v, 0.0, 1.0));
        }
  }
  return ds;
}

template <typename T>
Batch<T> gather(const Dataset<T>& ds, std::span<const std::size_t> idx) {
  Shape shape = ds.images.shape();
  shape[0] = idx.size();
  const std::size_t per = ds.image_numel();
  Batch<T> b;
  b.x = Tensor<T>(shape);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(ds.images.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * per), per,
                b.x.data().begin() + static_cast<std::ptrdiff_t>(i * per));
    b.y.push_back(ds.labels[idx[i]]);
  }
  b.indices.assign(idx.begin(), idx.end());
  return b;
}

template <typename T>
Dataset<T> subset(const Dataset<T>& ds, std::span<const std::size_t> idx) {
  Batch<T> b = gather(ds, idx);
  Dataset<T> out;
  out.images = std::move(b.x);
  out.labels = std::move(b.y);
  out.num_classes = ds.num_classes;
  out.split = ds.split;
  return out;
}

// Seeded permutation of 0..n-1 (Fisher-Yates over mt19937_64).
inline std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

// Seeded random subset of `size` rows (all rows when size is 0 or too large).
template <typename T>
Dataset<T> sample(const Dataset<T>& ds, std::size_t size, std::uint64_t seed) {
  auto p = permutation(ds.size(), seed);
  if (size && size < p.size()) p.resize(size);
  std::sort(p.begin(), p.end());
  return subset(ds, std::span<const std::size_t>(p));
}

// Index batches of one epoch. The final partial batch is kept.
inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                           std::uint64_t shuffle_seed) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  const auto order = permutation(n, shuffle_seed);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return out;
}

// Lazily materialized batches of one epoch.
template <typename T>
class BatchRange {
 public:
  BatchRange(const Dataset<T>& ds, std::size_t batch_size, std::uint64_t shuffle_seed)
      : ds_(&ds), plan_(batch_indices(ds.size(), batch_size, shuffle_seed)) {}

  class iterator {
   public:
    using iterator_category = std::input_iterator_tag;
    using value_type = Batch<T>;
    using difference_type = std::ptrdiff_t;

    iterator(const BatchRange* r, std::size_t i) : r_(r), i_(i) {}
    Batch<T> operator*() const { return gather(*r_->ds_, std::span<const std::size_t>(r_->plan_[i_])); }
    iterator& operator++() {
      ++i_;
      return *this;
    }
    bool operator==(const iterator& o) const { return i_ == o.i_; }
    bool operator!=(const iterator& o) const { return i_ != o.i_; }

   private:
    const BatchRange* r_;
    std::size_t i_;
  };

  iterator begin() const { return {this, 0}; }
  iterator end() const { return {this, plan_.size()}; }
  std::size_t size() const { return plan_.size(); }

 private:
  const Dataset<T>* ds_;
  std::vector<std::vector<std::size_t>> plan_;
};

template <typename T>
BatchRange<T> batches(const Dataset<T>& ds, std::size_t batch_size, std::uint64_t shuffle_seed) {
  return BatchRange<T>(ds, batch_size, shuffle_seed);
}

enum class ApplyAt { train, eval, both };

struct PoisonPolicy {
  double fraction = 1.0;
  AttackSpec attack;
  ApplyAt apply_at = ApplyAt::train;
  // Generate the adversarial set once against the initial model instead of
  // regenerating from the current model every step.
  bool precomputed = false;

  void validate() const {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("poison fraction must be in [0, 1]");
    attack.validate();
  }
};

// Replaces the first floor(fraction * B) examples of the batch with their
// adversarial counterparts against `target`; labels are untouched.
template <typename T>
Batch<T> poison(const Batch<T>& batch, const Target<T>& target, const PoisonPolicy& policy) {
  policy.validate();
  const std::size_t b = batch.y.size();
  const auto count = static_cast<std::size_t>(std::floor(policy.fraction * static_cast<double>(b)));
  Batch<T> out{batch.x.detach(), batch.y, batch.indices};
  if (count == 0 || policy.attack.family == AttackFamily::none) return out;
  const std::size_t per = batch.x.numel() / b;
  Shape head_shape = batch.x.shape();
  head_shape[0] = count;
  Tensor<T> head(head_shape, std::vector<T>(batch.x.data().begin(),
                                            batch.x.data().begin() + static_cast<std::ptrdiff_t>(count * per)));
  const std::span<const int> head_y(batch.y.data(), count);
  const AdvBatch<T> adv = generate(target, head, head_y, policy.attack);
  std::copy(adv.x_adv.data().begin(), adv.x_adv.data().end(), out.x.data().begin());
  return out;
}

}  // namespace dflnet
