#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dflnet/model.hpp"
#include "dflnet/pcl.hpp"

namespace dflnet {

enum class AttackFamily { none, fgsm, bim, mim, pgd, cw };

inline const char* to_string(AttackFamily f) {
  switch (f) {
    case AttackFamily::none: return "none";
    case AttackFamily::fgsm: return "fgsm";
    case AttackFamily::bim: return "bim";
    case AttackFamily::mim: return "mim";
    case AttackFamily::pgd: return "pgd";
    case AttackFamily::cw: return "cw";
  }
  return "?";
}

inline AttackFamily parse_attack_family(const std::string& s) {
  for (auto f : {AttackFamily::none, AttackFamily::fgsm, AttackFamily::bim, AttackFamily::mim, AttackFamily::pgd,
                 AttackFamily::cw}) {
    if (s == to_string(f)) return f;
  }
  throw ConfigError("unknown attack family '" + s + "'");
}

struct AttackSpec {
  AttackFamily family = AttackFamily::none;
  double epsilon = 0.3;  // L-inf budget in pixel units
  int iterations = 10;
  std::optional<double> step;  // alpha; family default when unset
  double decay = 1.0;          // MIM momentum decay
  double cw_c = 0.1;
  int cw_steps = 100;
  double cw_lr = 0.01;
  bool random_start = true;  // PGD
  std::uint64_t seed = 0;

  // eps/T for BIM and MIM, 2.5*eps/T for PGD, eps for FGSM.
  double step_size() const {
    if (step) return *step;
    switch (family) {
      case AttackFamily::bim:
      case AttackFamily::mim: return epsilon / iterations;
      case AttackFamily::pgd: return 2.5 * epsilon / iterations;
      default: return epsilon;
    }
  }

  bool is_linf() const {
    return family == AttackFamily::fgsm || family == AttackFamily::bim || family == AttackFamily::mim ||
           family == AttackFamily::pgd;
  }

  void validate() const {
    if (!(epsilon >= 0)) throw ConfigError("attack epsilon must be >= 0");
    if (iterations < 1 && (family == AttackFamily::bim || family == AttackFamily::mim || family == AttackFamily::pgd)) {
      throw ConfigError("iterative attacks need iterations >= 1");
    }
    if (!(decay >= 0)) throw ConfigError("MIM decay must be >= 0");
    if (!(cw_c >= 0)) throw ConfigError("C&W constant c must be >= 0");
    if (family == AttackFamily::cw && cw_steps < 1) throw ConfigError("C&W needs cw_steps >= 1");
    if (step && !(*step >= 0)) throw ConfigError("attack step must be >= 0");
  }

  // Short label used in reports: fgsm, pgd-10, cw, ...
  std::string label() const {
    std::string s = to_string(family);
    if (family == AttackFamily::bim || family == AttackFamily::mim || family == AttackFamily::pgd) {
      s += "-" + std::to_string(iterations);
    }
    return s;
  }
};

template <typename T>
struct AdvBatch {
  Tensor<T> x_adv;
  Tensor<T> x_clean;
  std::vector<int> labels;
  std::vector<int> predictions;  // argmax of the logits at x_adv
  std::vector<std::uint8_t> success;  // prediction != label
  std::vector<double> linf;
  std::vector<double> l2;
};

// White-box view of a classifier: logits for success checks and C&W, and the
// scalar loss the L-inf attacks ascend. The loss is summed over the batch so
// each example's input gradient is independent of the batch it sits in.
template <typename T>
struct Target {
  std::function<Tensor<T>(const Tensor<T>&)> logits;
  std::function<Tensor<T>(const Tensor<T>&, std::span<const int>)> loss;
};

template <typename T>
Target<T> ce_target(const Model<T>& model) {
  return {[&model](const Tensor<T>& x) { return model.forward_logits(x); },
          [&model](const Tensor<T>& x, std::span<const int> y) {
            return neg(sum(pick(log_softmax(model.forward_logits(x), 1), y)));
          }};
}

template <typename T>
Target<T> pcl_target(const Model<T>& model, const CentroidBank<T>& bank, PclConfig cfg) {
  return {[&model](const Tensor<T>& x) { return model.forward_logits(x); },
          [&model, &bank, cfg](const Tensor<T>& x, std::span<const int> y) {
            auto fwd = model.forward(x);
            return scale(pcl_loss(fwd.features, fwd.logits, y, &bank, cfg).total, static_cast<T>(x.dim(0)));
          }};
}

namespace detail {

template <typename T>
std::vector<T> loss_gradient(const Target<T>& target, const Tensor<T>& x, std::span<const int> y) {
  Tensor<T> xi = x.detach();
  xi.requires_grad(true);
  Tensor<T> loss = target.loss(xi, y);
  backward(loss, {xi});
  return std::vector<T>(xi.grad().begin(), xi.grad().end());
}

template <typename T>
T sign(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

// Projection onto the eps-ball around x0 intersected with [0, 1].
template <typename T>
T project(T v, T x0, T eps) {
  v = std::min(std::max(v, x0 - eps), x0 + eps);
  return std::min(std::max(v, T(0)), T(1));
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  const std::size_t n = logits.dim(0);
  const std::size_t k = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits[i * k + j] > logits[i * k + best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

template <typename T>
AdvBatch<T> finish(const Target<T>& target, const Tensor<T>& x, std::span<const int> y, Tensor<T> x_adv) {
  AdvBatch<T> b;
  b.x_clean = x;
  b.labels.assign(y.begin(), y.end());
  {
    NoGradGuard guard;
    b.predictions = argmax_rows(target.logits(x_adv));
  }
  const std::size_t n = x.dim(0);
  const std::size_t per = n ? x.numel() / n : 0;
  for (std::size_t i = 0; i < n; ++i) {
    double li = 0;
    double l2 = 0;
    for (std::size_t p = 0; p < per; ++p) {
      const double d = static_cast<double>(x_adv[i * per + p]) - static_cast<double>(x[i * per + p]);
      li = std::max(li, std::abs(d));
      l2 += d * d;
    }
    b.linf.push_back(li);
    b.l2.push_back(std::sqrt(l2));
    b.success.push_back(b.predictions[i] != y[i] ? 1 : 0);
  }
  b.x_adv = std::move(x_adv);
  return b;
}

// Iterated signed steps with projection; `direction` turns the raw loss
// gradient into the vector whose sign is followed.
template <typename T, typename Direction>
Tensor<T> linf_iterate(const Target<T>& target, const Tensor<T>& x0, std::span<const int> y, Tensor<T> x, T eps,
                       T alpha, int iterations, Direction&& direction) {
  for (int t = 0; t < iterations; ++t) {
    const std::vector<T> raw = loss_gradient(target, x, y);
    const std::vector<T>& dir = direction(raw);
    Tensor<T> next(x.shape());
    for (std::size_t i = 0; i < next.numel(); ++i) next[i] = project(x[i] + alpha * sign(dir[i]), x0[i], eps);
    x = std::move(next);
  }
  return x;
}

}  // namespace detail

// x' = clip01(x + eps * sign(grad_x L)), sign(0) = 0.
template <typename T>
AdvBatch<T> fgsm(const Target<T>& target, const Tensor<T>& x, std::span<const int> y, const AttackSpec& spec) {
  spec.validate();
  const T eps = static_cast<T>(spec.epsilon);
  const std::vector<T> g = detail::loss_gradient(target, x, y);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = std::min(std::max(x[i] + eps * detail::sign(g[i]), T(0)), T(1));
  }
  return detail::finish(target, x, y, std::move(out));
}

template <typename T>
AdvBatch<T> bim(const Target<T>& target, const Tensor<T>& x, std::span<const int> y, const AttackSpec& spec) {
  spec.validate();
  Tensor<T> out = detail::linf_iterate(target, x, y, x.detach(), static_cast<T>(spec.epsilon),
                                       static_cast<T>(spec.step_size()), spec.iterations,
                                       [](const std::vector<T>& g) -> const std::vector<T>& { return g; });
  return detail::finish(target, x, y, std::move(out));
}

// Momentum iterative method: velocity <- decay * velocity + g / ||g||_1 per
// example (normalization skipped when ||g||_1 < 1e-12).
template <typename T>
AdvBatch<T> mim(const Target<T>& target, const Tensor<T>& x, std::span<const int> y, const AttackSpec& spec) {
  spec.validate();
  const std::size_t n = x.dim(0);
  const std::size_t per = n ? x.numel() / n : 0;
  const T mu = static_cast<T>(spec.decay);
  std::vector<T> velocity(x.numel(), T(0));
  auto direction = [&](const std::vector<T>& g) -> const std::vector<T>& {
    for (std::size_t i = 0; i < n; ++i) {
      T l1 = T(0);
      for (std::size_t p = 0; p < per; ++p) l1 += std::abs(g[i * per + p]);
      const bool normalize = static_cast<double>(l1) >= 1e-12;
      for (std::size_t p = 0; p < per; ++p) {
        const std::size_t k = i * per + p;
        velocity[k] = mu * velocity[k] + (normalize ? g[k] / l1 : g[k]);
      }
    }
    return velocity;
  };
  Tensor<T> out = detail::linf_iterate(target, x, y, x.detach(), static_cast<T>(spec.epsilon),
                                       static_cast<T>(spec.step_size()), spec.iterations, direction);
  return detail::finish(target, x, y, std::move(out));
}

template <typename T>
AdvBatch<T> pgd(const Target<T>& target, const Tensor<T>& x, std::span<const int> y, const AttackSpec& spec) {
  spec.validate();
  const T eps = static_cast<T>(spec.epsilon);
  Tensor<T> start = x.detach();
  if (spec.random_start && eps > T(0)) {
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> u(-spec.epsilon, spec.epsilon);
    for (std::size_t i = 0; i < start.numel(); ++i) {
      start[i] = detail::project(x[i] + static_cast<T>(u(rng)), x[i], eps);
    }
  }
  Tensor<T> out = detail::linf_iterate(target, x, y, std::move(start), eps, static_cast<T>(spec.step_size()),
                                       spec.iterations,
                                       [](const std::vector<T>& g) -> const std::vector<T>& { return g; });
  return detail::finish(target, x, y, std::move(out));
}

// Carlini-Wagner L2 with kappa = 0 and a fixed constant c. The candidate is
// x + (tanh(w) - tanh(w0)) / 2 with w0 = atanh(2x - 1), clipped to [0, 1];
// w is optimized with Adam. Returns, per example, the smallest-distortion
// misclassified iterate seen, otherwise the final iterate.
template <typename T>
AdvBatch<T> cw(const Target<T>& target, const Tensor<T>& x, std::span<const int> y, const AttackSpec& spec) {
  spec.validate();
  const std::size_t n = x.dim(0);
  const std::size_t per = n ? x.numel() / n : 0;
  const T c = static_cast<T>(spec.cw_c);
  const T lr = static_cast<T>(spec.cw_lr);

  Tensor<T> w(x.shape());
  for (std::size_t i = 0; i < w.numel(); ++i) {
    const T v = std::min(std::max(T(2) * x[i] - T(1), T(-1) + T(1e-6)), T(1) - T(1e-6));
    w[i] = std::atanh(v);
  }
  Tensor<T> tanh_w0(x.shape());
  for (std::size_t i = 0; i < w.numel(); ++i) tanh_w0[i] = std::tanh(w[i]);
  w.requires_grad(true);

  std::vector<T> m(w.numel(), T(0));
  std::vector<T> v(w.numel(), T(0));
  const T b1 = T(0.9), b2 = T(0.999), adam_eps = T(1e-8);

  Tensor<T> best(x.shape());
  std::copy(x.data().begin(), x.data().end(), best.data().begin());
  std::vector<double> best_l2(n, std::numeric_limits<double>::infinity());
  Tensor<T> current;

  auto candidate = [&]() { return clamp(add(x, scale(sub(tanh(w), tanh_w0), T(0.5))), T(0), T(1)); };
  auto record = [&](const Tensor<T>& xa, const Tensor<T>& logits) {
    const auto pred = detail::argmax_rows(logits);
    for (std::size_t i = 0; i < n; ++i) {
      if (pred[i] == y[i]) continue;
      double l2 = 0;
      for (std::size_t p = 0; p < per; ++p) {
        const double d = static_cast<double>(xa[i * per + p]) - static_cast<double>(x[i * per + p]);
        l2 += d * d;
      }
      if (l2 < best_l2[i]) {
        best_l2[i] = l2;
        std::copy_n(xa.data().begin() + static_cast<std::ptrdiff_t>(i * per), per,
                    best.data().begin() + static_cast<std::ptrdiff_t>(i * per));
      }
    }
  };

  for (int step = 0; step < spec.cw_steps; ++step) {
    w.zero_grad();
    Tensor<T> xa = candidate();
    Tensor<T> logits = target.logits(xa);
    record(xa, logits);
    Tensor<T> margin = relu(sub(pick(logits, y), max_other(logits, y)));
    Tensor<T> delta = sub(xa, x);
    Tensor<T> loss = add(sum(mul(delta, delta)), scale(sum(margin), c));
    backward(loss, {w});
    const auto g = w.grad();
    const T t = static_cast<T>(step + 1);
    for (std::size_t i = 0; i < w.numel(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T mh = m[i] / (T(1) - std::pow(b1, t));
      const T vh = v[i] / (T(1) - std::pow(b2, t));
      w[i] -= lr * mh / (std::sqrt(vh) + adam_eps);
    }
  }
  w.zero_grad();
  {
    NoGradGuard guard;
    current = candidate();
    record(current, target.logits(current));
  }
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor<T>& src = std::isfinite(best_l2[i]) ? best : current;
    std::copy_n(src.data().begin() + static_cast<std::ptrdiff_t>(i * per), per,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return detail::finish(target, x, y, std::move(out));
}

// Dispatch by family; "none" returns the clean batch.
template <typename T>
AdvBatch<T> generate(const Target<T>& target, const Tensor<T>& x, std::span<const int> y, const AttackSpec& spec) {
  switch (spec.family) {
    case AttackFamily::none: spec.validate(); return detail::finish(target, x, y, x.detach());
    case AttackFamily::fgsm: return fgsm(target, x, y, spec);
    case AttackFamily::bim: return bim(target, x, y, spec);
    case AttackFamily::mim: return mim(target, x, y, spec);
    case AttackFamily::pgd: return pgd(target, x, y, spec);
    case AttackFamily::cw: return cw(target, x, y, spec);
  }
  throw ConfigError("unknown attack family");
}

}  // namespace dflnet
