#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dflnet/conv.hpp"
#include "dflnet/ops.hpp"

namespace dflnet {

enum class LayerKind { conv_block, residual_block, deconv_block, pool, linear_head };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv_block: return "conv-block";
    case LayerKind::residual_block: return "residual-block";
    case LayerKind::deconv_block: return "deconv-block";
    case LayerKind::pool: return "pool";
    case LayerKind::linear_head: return "linear-head";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::conv_block;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  bool normalize = true;
  // Stage this layer belongs to (1-based); 0 for the stem and head.
  std::size_t stage = 0;
  // Output spatial size (rows, cols) after the layer.
  std::size_t out_h = 0;
  std::size_t out_w = 0;
};

// Desk-scale residual family. Stage i has base_width * 2^(i-1) channels;
// stages after the first halve the spatial size when it is even and keep it
// otherwise, so that every stage size is an integer multiple of the last.
struct BackboneSpec {
  std::string family = "micro-resnet";
  std::size_t stages = 3;
  std::size_t blocks_per_stage = 1;
  std::size_t base_width = 8;
  Shape input_shape{1, 28, 28};  // C x H x W
  // Output channels of each deconvolution block; 0 selects ceil(c_m / 2).
  std::size_t dfl_channels = 0;

  std::size_t stage_channels(std::size_t stage) const { return base_width << (stage - 1); }
};

inline BackboneSpec micro_resnet(std::size_t stages, Shape input_shape = {1, 28, 28}) {
  BackboneSpec s;
  s.stages = stages;
  s.input_shape = std::move(input_shape);
  return s;
}

struct ArchitecturePlan {
  std::vector<LayerSpec> layers;
  std::vector<std::size_t> stage_channels;   // c_i
  std::vector<std::size_t> stage_h;           // h_i
  std::vector<std::size_t> stage_w;           // w_i
  std::vector<std::size_t> dfl_channels;      // o_j, j = 1..m-1 (empty without DFL)
  std::size_t feature_channels = 0;           // c_m + sum o_j
  std::size_t feature_dim = 0;                // d
};

// Lays out the network and validates it. Any inconsistency, including a
// deconvolution block whose map cannot be max-pooled to the last stage's size
// by an integer factor, is reported here rather than at forward time.
inline ArchitecturePlan plan_architecture(const BackboneSpec& spec, bool dfl, std::size_t num_classes) {
  if (spec.family != "micro-resnet") throw SpecError("unknown backbone family '" + spec.family + "'");
  if (spec.stages < 2) throw SpecError("backbone needs at least 2 stages, got " + std::to_string(spec.stages));
  if (spec.blocks_per_stage < 1) throw SpecError("blocks_per_stage must be >= 1");
  if (spec.base_width < 1) throw SpecError("base_width must be >= 1");
  if (spec.input_shape.size() != 3 || shape_numel(spec.input_shape) == 0) {
    throw SpecError("input shape must be C x H x W, got " + shape_str(spec.input_shape));
  }
  if (num_classes < 2) throw SpecError("need at least 2 classes");

  ArchitecturePlan plan;
  std::size_t ch = spec.input_shape[0];
  std::size_t h = spec.input_shape[1];
  std::size_t w = spec.input_shape[2];
  const std::size_t c1 = spec.stage_channels(1);
  plan.layers.push_back({LayerKind::conv_block, ch, c1, 3, 1, 1, true, 0, h, w});
  ch = c1;
  for (std::size_t s = 1; s <= spec.stages; ++s) {
    const std::size_t cs = spec.stage_channels(s);
    for (std::size_t b = 0; b < spec.blocks_per_stage; ++b) {
      std::size_t stride = 1;
      if (s > 1 && b == 0 && h % 2 == 0 && w % 2 == 0) stride = 2;
      h = (h + 2 - 3) / stride + 1;
      w = (w + 2 - 3) / stride + 1;
      plan.layers.push_back({LayerKind::residual_block, ch, cs, 3, stride, 1, true, s, h, w});
      ch = cs;
    }
    plan.stage_channels.push_back(cs);
    plan.stage_h.push_back(h);
    plan.stage_w.push_back(w);
  }
  const std::size_t cm = plan.stage_channels.back();
  const std::size_t hm = plan.stage_h.back();
  const std::size_t wm = plan.stage_w.back();
  plan.feature_channels = cm;
  if (dfl) {
    const std::size_t o = spec.dfl_channels ? spec.dfl_channels : (cm + 1) / 2;
    for (std::size_t j = 1; j < spec.stages; ++j) {
      const std::size_t hj = plan.stage_h[j - 1];
      const std::size_t wj = plan.stage_w[j - 1];
      if (hj % hm != 0 || wj % wm != 0 || hj / hm != wj / wm) {
        throw SpecError("DFL: stage " + std::to_string(j) + " map " + std::to_string(hj) + "x" + std::to_string(wj) +
                        " cannot be max-pooled to " + std::to_string(hm) + "x" + std::to_string(wm) +
                        " by an integer factor");
      }
      const std::size_t factor = hj / hm;
      plan.layers.push_back({LayerKind::deconv_block, plan.stage_channels[j - 1], o, 1, 1, 0, false, j, hj, wj});
      if (factor > 1) plan.layers.push_back({LayerKind::pool, o, o, factor, factor, 0, false, j, hm, wm});
      plan.dfl_channels.push_back(o);
      plan.feature_channels += o;
    }
  }
  plan.feature_dim = plan.feature_channels * hm * wm;
  plan.layers.push_back({LayerKind::linear_head, plan.feature_dim, num_classes, 1, 1, 0, false, 0, 1, 1});

  // Channel chaining along the trunk; deconv blocks read their stage output.
  std::size_t prev = spec.input_shape[0];
  for (const auto& l : plan.layers) {
    if (l.kind == LayerKind::conv_block || l.kind == LayerKind::residual_block) {
      if (l.in_channels != prev) throw SpecError("inconsistent channel chain at a " + std::string(to_string(l.kind)));
      prev = l.out_channels;
    } else if (l.kind == LayerKind::deconv_block) {
      if (l.in_channels != plan.stage_channels[l.stage - 1]) throw SpecError("deconv block input channels mismatch");
    } else if (l.kind == LayerKind::linear_head) {
      if (l.in_channels != plan.feature_dim) throw SpecError("head input dimension mismatch");
    }
  }
  return plan;
}

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
};

// Batch normalization: training forwards standardize with the batch
// statistics and fold them into the running estimates; evaluation forwards use
// the running estimates, so an example is scored independently of its batch.
template <typename T>
struct ChannelNorm {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  Tensor<T> updates;  // scalar count, stored so checkpoints resume exactly
  T eps = T(1e-5);
  T momentum = T(0.1);

  explicit ChannelNorm(std::size_t channels = 0)
      : gamma(Shape{channels}, T(1)),
        beta(Shape{channels}, T(0)),
        running_mean(Shape{channels}, T(0)),
        running_var(Shape{channels}, T(1)),
        updates(Shape{1}, T(0)) {
    gamma.requires_grad(true);
    beta.requires_grad(true);
  }

  void update_stats(const Tensor<T>& x) {
    const std::size_t n = x.dim(0);
    const std::size_t c = x.dim(1);
    const std::size_t inner = x.numel() / (n * c);
    const auto& xv = x.vec();
    // Cumulative average for the first updates, then an exponential one.
    const T m = std::max(momentum, T(1) / (updates[0] + T(1)));
    for (std::size_t ch = 0; ch < c; ++ch) {
      T s = T(0);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < inner; ++i) s += xv[(b * c + ch) * inner + i];
      const T mu = s / static_cast<T>(n * inner);
      T v = T(0);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < inner; ++i) {
          const T d = xv[(b * c + ch) * inner + i] - mu;
          v += d * d;
        }
      v /= static_cast<T>(n * inner);
      running_mean[ch] = (T(1) - m) * running_mean[ch] + m * mu;
      running_var[ch] = (T(1) - m) * running_var[ch] + m * v;
    }
    updates[0] += T(1);
  }

  Tensor<T> forward_train(const Tensor<T>& x) {
    update_stats(x);
    return channel_affine(batch_standardize(x, eps), gamma, beta);
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    const std::size_t c = gamma.numel();
    Tensor<T> inv(Shape{c});
    Tensor<T> mu(Shape{c});
    for (std::size_t ch = 0; ch < c; ++ch) {
      inv[ch] = T(1) / std::sqrt(running_var[ch] + eps);
      mu[ch] = running_mean[ch];
    }
    const Tensor<T> s = mul(gamma, inv);
    return channel_affine(x, s, sub(beta, mul(s, mu)));
  }

  void collect(const std::string& prefix, std::vector<NamedTensor<T>>& params,
               std::vector<NamedTensor<T>>& buffers) const {
    params.push_back({prefix + ".gamma", gamma});
    params.push_back({prefix + ".beta", beta});
    buffers.push_back({prefix + ".running_mean", running_mean});
    buffers.push_back({prefix + ".running_var", running_var});
    buffers.push_back({prefix + ".updates", updates});
  }
};

template <typename T>
struct ConvNorm {
  Tensor<T> kernel;
  ChannelNorm<T> norm;
  std::size_t stride = 1;
  std::size_t padding = 1;

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    Tensor<T> y = conv2d(x, kernel, stride, padding);
    return train ? norm.forward_train(y) : norm.forward(y);
  }
};

namespace detail {

template <typename T>
Tensor<T> he_kernel(std::mt19937_64& rng, Shape shape, std::size_t fan_in) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor<T> k(std::move(shape));
  for (auto& v : k.data()) v = static_cast<T>(dist(rng));
  k.requires_grad(true);
  return k;
}

template <typename T>
ConvNorm<T> make_conv_norm(std::mt19937_64& rng, std::size_t in, std::size_t out, std::size_t kernel,
                           std::size_t stride, std::size_t padding) {
  ConvNorm<T> c;
  c.kernel = he_kernel<T>(rng, Shape{out, in, kernel, kernel}, in * kernel * kernel);
  c.norm = ChannelNorm<T>(out);
  c.stride = stride;
  c.padding = padding;
  return c;
}

}  // namespace detail

template <typename T>
struct ResidualBlock {
  ConvNorm<T> first;
  ConvNorm<T> second;
  std::optional<ConvNorm<T>> shortcut;

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    Tensor<T> h = relu(first.forward(x, train));
    h = second.forward(h, train);
    return relu(add(h, shortcut ? shortcut->forward(x, train) : x));
  }
};

// Transposed convolution + ReLU + max-pool down to the last stage's size.
template <typename T>
struct DeconvBlock {
  Tensor<T> kernel;  // C_j x o_j x k x k
  std::size_t pool = 1;

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> y = relu(deconv2d(x, kernel, 1, 0));
    return pool > 1 ? maxpool2d(y, pool, pool) : y;
  }
};

template <typename T>
struct Forward {
  Tensor<T> features;          // N x d
  std::vector<Tensor<T>> maps; // F_1 .. F_m
  Tensor<T> fused;             // N x (c_m + sum o_j) x h_m x w_m
  Tensor<T> logits;            // N x k
};

// Residual backbone, optional defensive feature layer, bias-free linear head.
template <typename T>
class Model {
 public:
  Model(BackboneSpec spec, bool dfl, std::size_t num_classes, std::uint64_t seed)
      : spec_(std::move(spec)), dfl_(dfl), num_classes_(num_classes), seed_(seed) {
    plan_ = plan_architecture(spec_, dfl_, num_classes_);
    // Independent streams: the trunk is bit-identical with and without DFL.
    std::mt19937_64 trunk_rng(seed);
    std::mt19937_64 dfl_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::mt19937_64 head_rng(seed ^ 0xc2b2ae3d27d4eb4fULL);

    input_norm_ = ChannelNorm<T>(spec_.input_shape[0]);
    for (const auto& l : plan_.layers) {
      switch (l.kind) {
        case LayerKind::conv_block:
          stem_ = detail::make_conv_norm<T>(trunk_rng, l.in_channels, l.out_channels, l.kernel, l.stride, l.padding);
          break;
        case LayerKind::residual_block: {
          ResidualBlock<T> b;
          b.first = detail::make_conv_norm<T>(trunk_rng, l.in_channels, l.out_channels, 3, l.stride, 1);
          b.second = detail::make_conv_norm<T>(trunk_rng, l.out_channels, l.out_channels, 3, 1, 1);
          if (l.stride != 1 || l.in_channels != l.out_channels) {
            b.shortcut = detail::make_conv_norm<T>(trunk_rng, l.in_channels, l.out_channels, 1, l.stride, 0);
          }
          if (stages_.size() < l.stage) stages_.emplace_back();
          stages_[l.stage - 1].push_back(std::move(b));
          break;
        }
        case LayerKind::deconv_block: {
          DeconvBlock<T> d;
          d.kernel = detail::he_kernel<T>(dfl_rng, Shape{l.in_channels, l.out_channels, l.kernel, l.kernel},
                                          l.in_channels * l.kernel * l.kernel);
          deconv_.push_back(std::move(d));
          break;
        }
        case LayerKind::pool:
          deconv_.back().pool = l.kernel;
          break;
        case LayerKind::linear_head: {
          const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_channels));
          std::uniform_real_distribution<double> u(-bound, bound);
          head_ = Tensor<T>(Shape{num_classes_, l.in_channels});
          for (auto& v : head_.data()) v = static_cast<T>(u(head_rng));
          head_.requires_grad(true);
          break;
        }
      }
    }
    collect();
  }

  // Parameters are tensor handles, so an implicit copy would alias storage.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  Model clone() const {
    Model m(spec_, dfl_, num_classes_, seed_);
    auto src = state();
    auto dst = m.state();
    for (std::size_t i = 0; i < src.size(); ++i) {
      std::copy(src[i].value.data().begin(), src[i].value.data().end(), dst[i].value.data().begin());
    }
    return m;
  }

  const BackboneSpec& spec() const { return spec_; }
  const ArchitecturePlan& plan() const { return plan_; }
  bool dfl_enabled() const { return dfl_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t feature_dim() const { return plan_.feature_dim; }
  std::uint64_t seed() const { return seed_; }

  // Trainable tensors in a stable order.
  const std::vector<NamedTensor<T>>& parameters() const { return params_; }
  // Running statistics: persisted, never trained.
  const std::vector<NamedTensor<T>>& buffers() const { return buffers_; }
  std::vector<NamedTensor<T>> state() const {
    auto all = params_;
    all.insert(all.end(), buffers_.begin(), buffers_.end());
    return all;
  }

  const Tensor<T>& head_weight() const { return head_; }
  const std::vector<DeconvBlock<T>>& deconv_blocks() const { return deconv_; }

  // Evaluation forward: pure, safe to call concurrently.
  Forward<T> forward(const Tensor<T>& x) const { return const_cast<Model*>(this)->run(x, false); }
  // Training forward: also refreshes the normalization statistics.
  Forward<T> forward_train(const Tensor<T>& x) { return run(x, true); }

  Tensor<T> forward_logits(const Tensor<T>& x) const { return forward(x).logits; }

 private:
  Forward<T> run(const Tensor<T>& x, bool train) {
    const auto& in = spec_.input_shape;
    if (x.ndim() != 4 || x.dim(1) != in[0] || x.dim(2) != in[1] || x.dim(3) != in[2]) {
      throw DimensionError("model expects N x " + std::to_string(in[0]) + " x " + std::to_string(in[1]) + " x " +
                           std::to_string(in[2]) + " input, got " + shape_str(x.shape()));
    }
    Forward<T> out;
    Tensor<T> h = relu(stem_.forward(train ? input_norm_.forward_train(x) : input_norm_.forward(x), train));
    for (auto& stage : stages_) {
      for (auto& block : stage) h = block.forward(h, train);
      out.maps.push_back(h);
    }
    if (dfl_) {
      std::vector<Tensor<T>> parts{out.maps.back()};
      for (std::size_t j = 0; j < deconv_.size(); ++j) parts.push_back(deconv_[j].forward(out.maps[j]));
      out.fused = concat(parts, 1);
    } else {
      out.fused = out.maps.back();
    }
    out.features = flatten(out.fused);
    out.logits = matmul(out.features, transpose(head_));
    return out;
  }

  void collect() {
    input_norm_.collect("input_norm", params_, buffers_);
    params_.push_back({"stem.conv.weight", stem_.kernel});
    stem_.norm.collect("stem.norm", params_, buffers_);
    for (std::size_t s = 0; s < stages_.size(); ++s)
      for (std::size_t b = 0; b < stages_[s].size(); ++b) {
        const std::string p = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
        auto& blk = stages_[s][b];
        params_.push_back({p + ".conv_a.weight", blk.first.kernel});
        blk.first.norm.collect(p + ".norm_a", params_, buffers_);
        params_.push_back({p + ".conv_b.weight", blk.second.kernel});
        blk.second.norm.collect(p + ".norm_b", params_, buffers_);
        if (blk.shortcut) {
          params_.push_back({p + ".shortcut.weight", blk.shortcut->kernel});
          blk.shortcut->norm.collect(p + ".shortcut_norm", params_, buffers_);
        }
      }
    for (std::size_t j = 0; j < deconv_.size(); ++j) {
      params_.push_back({"dfl.deconv" + std::to_string(j + 1) + ".weight", deconv_[j].kernel});
    }
    params_.push_back({"head.weight", head_});
  }

  BackboneSpec spec_;
  bool dfl_;
  std::size_t num_classes_;
  std::uint64_t seed_;
  ArchitecturePlan plan_;
  ChannelNorm<T> input_norm_;
  ConvNorm<T> stem_;
  std::vector<std::vector<ResidualBlock<T>>> stages_;
  std::vector<DeconvBlock<T>> deconv_;
  Tensor<T> head_;
  std::vector<NamedTensor<T>> params_;
  std::vector<NamedTensor<T>> buffers_;
};

template <typename T>
Model<T> build_model(const BackboneSpec& spec, bool dfl, std::size_t num_classes, std::uint64_t seed) {
  return Model<T>(spec, dfl, num_classes, seed);
}

// Gradient of a loss with respect to the input batch. Parameter gradients are
// neither computed nor stored.
template <typename T, typename LossFn>
Tensor<T> input_gradient(const Model<T>& model, const Tensor<T>& x, LossFn&& loss_fn, std::span<const int> labels) {
  Tensor<T> xi = x.detach();
  xi.requires_grad(true);
  Tensor<T> loss = loss_fn(model.forward(xi), labels);
  backward(loss, {xi});
  return Tensor<T>(x.shape(), std::vector<T>(xi.grad().begin(), xi.grad().end()));
}

// Copies parameter values between precisions (e.g. a float training model to
// a double model for gradient checks).
template <typename To, typename From>
void copy_state(const Model<From>& src, Model<To>& dst) {
  auto s = src.state();
  auto d = dst.state();
  if (s.size() != d.size()) throw SpecError("copy_state: models have different layouts");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i].value.shape() != d[i].value.shape()) throw SpecError("copy_state: shape mismatch at " + s[i].name);
    auto out = d[i].value.data();
    const auto in = s[i].value.data();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = static_cast<To>(in[k]);
  }
}

}  // namespace dflnet
