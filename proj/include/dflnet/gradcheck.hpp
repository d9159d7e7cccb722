#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dflnet/conv.hpp"
#include "dflnet/ops.hpp"
#include "dflnet/pcl.hpp"

namespace dflnet {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t checked = 0;  // entries above the magnitude floor
};

struct GradCheckOptions {
  double step = 1e-5;
  double floor = 1e-8;  // entries where both gradients are smaller are skipped
};

using GradFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Central differences against reverse mode for a scalar-valued function.
inline GradCheckResult check_gradients(const std::string& name, const GradFn& f, std::vector<Tensor<double>> inputs,
                                       const GradCheckOptions& opt = {}) {
  for (auto& x : inputs) {
    x = x.detach();
    x.requires_grad(true);
  }
  const Tensor<double> loss = f(inputs);
  if (loss.numel() != 1) throw ContractError("check_gradients: " + name + " is not scalar");
  backward(loss, std::span<const Tensor<double>>(inputs));

  GradCheckResult res{name, 0.0, 0};
  NoGradGuard guard;
  for (auto& x : inputs) {
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double v = x[i];
      x[i] = v + opt.step;
      const double up = f(inputs).item();
      x[i] = v - opt.step;
      const double down = f(inputs).item();
      x[i] = v;
      const double numeric = (up - down) / (2 * opt.step);
      const double mag = std::max(std::abs(numeric), std::abs(analytic[i]));
      if (mag <= opt.floor) continue;
      res.max_rel_err = std::max(res.max_rel_err, std::abs(numeric - analytic[i]) / mag);
      ++res.checked;
    }
  }
  return res;
}

namespace detail {

class GradInputs {
 public:
  explicit GradInputs(std::uint64_t seed) : rng_(seed) {}

  Tensor<double> normal(Shape s, double sd = 1.0) {
    std::normal_distribution<double> d(0.0, sd);
    Tensor<double> t(std::move(s));
    for (auto& v : t.data()) v = d(rng_);
    return t;
  }
  Tensor<double> uniform(Shape s, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    Tensor<double> t(std::move(s));
    for (auto& v : t.data()) v = d(rng_);
    return t;
  }
  // Values bounded away from zero, for kinks at the origin.
  Tensor<double> away_from_zero(Shape s, double gap = 0.05) {
    Tensor<double> t = normal(std::move(s));
    for (auto& v : t.data()) v = v < 0 ? v - gap : v + gap;
    return t;
  }
  std::vector<int> labels(std::size_t n, std::size_t k) {
    std::uniform_int_distribution<int> d(0, static_cast<int>(k) - 1);
    std::vector<int> y(n);
    for (auto& v : y) v = d(rng_);
    return y;
  }

 private:
  std::mt19937_64 rng_;
};

// Scalar probe sum(op(x) * R) with a fixed random R covers the whole Jacobian.
inline GradFn probe(std::function<Tensor<double>(const std::vector<Tensor<double>>&)> op, Tensor<double> weights) {
  return [op = std::move(op), weights = std::move(weights)](const std::vector<Tensor<double>>& in) {
    return sum(mul(op(in), weights));
  };
}

}  // namespace detail

// Every differentiable op plus the three loss terms on inputs drawn from `seed`.
inline std::vector<GradCheckResult> gradcheck_suite(std::uint64_t seed, const GradCheckOptions& opt = {}) {
  detail::GradInputs g(seed);
  std::vector<GradCheckResult> out;
  using V = std::vector<Tensor<double>>;
  auto run = [&](const std::string& name, std::function<Tensor<double>(const V&)> op, V inputs, Shape out_shape) {
    out.push_back(check_gradients(name, detail::probe(std::move(op), g.normal(std::move(out_shape))), std::move(inputs), opt));
  };
  auto run_scalar = [&](const std::string& name, GradFn f, V inputs) {
    out.push_back(check_gradients(name, f, std::move(inputs), opt));
  };

  run("add", [](const V& v) { return add(v[0], v[1]); }, {g.normal({3, 4}), g.normal({4})}, {3, 4});
  run("sub", [](const V& v) { return sub(v[0], v[1]); }, {g.normal({3, 1}), g.normal({3, 4})}, {3, 4});
  run("mul", [](const V& v) { return mul(v[0], v[1]); }, {g.normal({2, 3, 4}), g.normal({3, 1})}, {2, 3, 4});
  run("div", [](const V& v) { return div(v[0], v[1]); }, {g.normal({3, 4}), g.uniform({3, 4}, 0.5, 2.0)}, {3, 4});
  run("scale", [](const V& v) { return scale(v[0], 1.7); }, {g.normal({5})}, {5});
  run("add_scalar", [](const V& v) { return add_scalar(v[0], -0.3); }, {g.normal({5})}, {5});
  run("neg", [](const V& v) { return neg(v[0]); }, {g.normal({5})}, {5});
  run("relu", [](const V& v) { return relu(v[0]); }, {g.away_from_zero({4, 5})}, {4, 5});
  run("exp", [](const V& v) { return exp(v[0]); }, {g.normal({6})}, {6});
  run("log", [](const V& v) { return log(v[0]); }, {g.uniform({6}, 0.2, 3.0)}, {6});
  run("sqrt", [](const V& v) { return sqrt(v[0]); }, {g.uniform({6}, 0.2, 3.0)}, {6});
  run("tanh", [](const V& v) { return tanh(v[0]); }, {g.normal({6})}, {6});
  {
    // Keep inputs off the clamp bounds.
    Tensor<double> x = g.uniform({8}, -1.0, 2.0);
    for (auto& v : x.data())
      if (std::abs(v) < 0.02 || std::abs(v - 1) < 0.02) v += 0.05;
    run("clamp", [](const V& v) { return clamp(v[0], 0.0, 1.0); }, {x}, {8});
  }
  run("arccos", [](const V& v) { return arccos(v[0]); }, {g.uniform({6}, -0.9, 0.9)}, {6});
  run_scalar("sum", [](const V& v) { return mul(sum(v[0]), sum(v[0])); }, {g.normal({3, 4})});
  run_scalar("mean", [](const V& v) { return mul(mean(v[0]), mean(v[0])); }, {g.normal({3, 4})});
  run("sum_axis", [](const V& v) { return sum(v[0], 1); }, {g.normal({2, 3, 4})}, {2, 4});
  run("mean_axis", [](const V& v) { return mean(v[0], 0, true); }, {g.normal({3, 4})}, {1, 4});
  run("l2norm", [](const V& v) { return l2norm(v[0], 1); }, {g.normal({3, 5})}, {3});
  run("softmax", [](const V& v) { return softmax(v[0], 1); }, {g.normal({3, 4})}, {3, 4});
  run("log_softmax", [](const V& v) { return log_softmax(v[0], 1); }, {g.normal({3, 4})}, {3, 4});
  run("reshape", [](const V& v) { return reshape(v[0], Shape{6, 2}); }, {g.normal({3, 4})}, {6, 2});
  run("flatten", [](const V& v) { return flatten(v[0]); }, {g.normal({2, 3, 2})}, {2, 6});
  run("concat", [](const V& v) { return concat(std::vector<Tensor<double>>{v[0], v[1]}, 1); },
      {g.normal({2, 3, 2}), g.normal({2, 1, 2})}, {2, 4, 2});
  run("transpose", [](const V& v) { return transpose(v[0]); }, {g.normal({3, 4})}, {4, 3});
  run("matmul", [](const V& v) { return matmul(v[0], v[1]); }, {g.normal({3, 4}), g.normal({4, 2})}, {3, 2});
  {
    const auto idx = g.labels(5, 3);
    run("gather_rows", [idx](const V& v) { return gather_rows(v[0], idx); }, {g.normal({3, 4})}, {5, 4});
    const auto y = g.labels(4, 5);
    run("pick", [y](const V& v) { return pick(v[0], y); }, {g.normal({4, 5})}, {4});
    run("max_other", [y](const V& v) { return max_other(v[0], y); }, {g.normal({4, 5})}, {4});
  }
  run("channel_affine", [](const V& v) { return channel_affine(v[0], v[1], v[2]); },
      {g.normal({2, 3, 2, 2}), g.normal({3}), g.normal({3})}, {2, 3, 2, 2});
  run("batch_standardize", [](const V& v) { return batch_standardize(v[0]); }, {g.normal({3, 2, 2, 2})},
      {3, 2, 2, 2});
  run("conv2d", [](const V& v) { return conv2d(v[0], v[1], 2, 1); }, {g.normal({2, 2, 5, 5}), g.normal({3, 2, 3, 3})},
      {2, 3, 3, 3});
  run("conv2d_1x1", [](const V& v) { return conv2d(v[0], v[1]); }, {g.normal({1, 3, 3, 3}), g.normal({2, 3, 1, 1})},
      {1, 2, 3, 3});
  run("deconv2d", [](const V& v) { return deconv2d(v[0], v[1], 2, 1); },
      {g.normal({2, 2, 3, 3}), g.normal({2, 3, 3, 3})}, {2, 3, 5, 5});
  run("maxpool2d", [](const V& v) { return maxpool2d(v[0], 2, 2); }, {g.normal({2, 2, 4, 4})}, {2, 2, 2, 2});

  // Loss terms: 6 examples, 3 classes, 4-dimensional features.
  const auto y = g.labels(6, 3);
  run_scalar("ce_loss", [y](const V& v) { return ce_loss(v[0], y); }, {g.normal({6, 3}, 2.0)});
  run_scalar("intra_loss",
             [y](const V& v) { return intra_loss(v[0], y, CentroidBank<double>(v[1])); },
             {g.normal({6, 4}), g.normal({3, 4})});
  for (PclMode mode : {PclMode::literal, PclMode::separating}) {
    PclConfig cfg;
    cfg.mode = mode;
    cfg.margin = 2.5;
    run_scalar(std::string("inter_loss_") + to_string(mode),
               [y, cfg](const V& v) { return inter_loss(v[0], y, CentroidBank<double>(v[1]), cfg); },
               {g.normal({6, 4}), g.normal({3, 4})});
  }
  {
    PclConfig cfg;
    cfg.weight_intra = 0.7;
    cfg.weight_inter = 0.3;
    cfg.margin = 2.5;
    run_scalar("pcl_loss",
               [y, cfg](const V& v) {
                 CentroidBank<double> bank(v[2]);
                 return pcl_loss(v[0], v[1], y, &bank, cfg).total;
               },
               {g.normal({6, 4}), g.normal({6, 3}), g.normal({3, 4})});
  }
  return out;
}

struct GradCheckSummary {
  double max_rel_err = 0.0;
  std::string worst;
  std::size_t seeds = 0;
  std::size_t checks = 0;
};

inline GradCheckSummary run_gradcheck(std::size_t seeds, std::uint64_t first_seed = 0, const GradCheckOptions& opt = {}) {
  GradCheckSummary s;
  for (std::size_t i = 0; i < seeds; ++i) {
    for (const auto& r : gradcheck_suite(first_seed + i, opt)) {
      s.checks += r.checked;
      if (r.max_rel_err >= s.max_rel_err) {
        s.max_rel_err = r.max_rel_err;
        s.worst = r.name + " (seed " + std::to_string(first_seed + i) + ")";
      }
    }
    ++s.seeds;
  }
  return s;
}

}  // namespace dflnet
