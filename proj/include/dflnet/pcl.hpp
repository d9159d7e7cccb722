#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dflnet/ops.hpp"

namespace dflnet {

enum class PclMode {
  // The inter-class term exactly as printed: distances to other centroids
  // plus centroid angles, both minimized.
  literal,
  // Hinge on the distance to other centroids and the reflected angle
  // (pi - angle), so minimizing pushes features away from foreign centroids
  // and spreads the centroids apart.
  separating,
};

inline const char* to_string(PclMode m) { return m == PclMode::literal ? "literal" : "separating"; }

struct PclConfig {
  double weight_ce = 1.0;
  double weight_intra = 1.0;
  double weight_inter = 1.0;
  PclMode mode = PclMode::separating;
  double margin = 10.0;
  double clamp_delta = kArccosDelta;
  // Use the classifier head rows as the centroids instead of a separate bank.
  bool tie_centroids = false;

  void validate() const {
    if (weight_ce < 0 || weight_intra < 0 || weight_inter < 0) throw ConfigError("PCL weights must be >= 0");
    if (!(margin > 0)) throw ConfigError("PCL margin must be > 0");
    if (!(clamp_delta > 0 && clamp_delta < 1)) throw ConfigError("arccos clamp delta must be in (0, 1)");
  }
};

// One trainable centroid per class, rows of a k x d tensor.
template <typename T>
class CentroidBank {
 public:
  CentroidBank() = default;

  CentroidBank(std::size_t num_classes, std::size_t dim, std::uint64_t seed) : weights_(Shape{num_classes, dim}) {
    std::mt19937_64 rng(seed ^ 0x5851f42d4c957f2dULL);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : weights_.data()) v = static_cast<T>(dist(rng));
    weights_.requires_grad(true);
  }

  explicit CentroidBank(Tensor<T> weights) : weights_(std::move(weights)) {
    if (weights_.ndim() != 2) throw InputError("centroid bank must be k x d, got " + shape_str(weights_.shape()));
  }

  std::size_t num_classes() const { return weights_.dim(0); }
  std::size_t dim() const { return weights_.dim(1); }
  const Tensor<T>& weights() const { return weights_; }
  Tensor<T>& weights() { return weights_; }

  // Unit-normalized rows (no graph).
  Tensor<T> unit() const {
    NoGradGuard guard;
    Tensor<T> u = weights_.detach();
    const std::size_t d = dim();
    for (std::size_t r = 0; r < num_classes(); ++r) {
      T n = T(0);
      for (std::size_t c = 0; c < d; ++c) n += u[r * d + c] * u[r * d + c];
      n = std::sqrt(n);
      if (n > T(0))
        for (std::size_t c = 0; c < d; ++c) u[r * d + c] /= n;
    }
    return u;
  }

 private:
  Tensor<T> weights_;
};

// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> ce_loss(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.ndim() != 2) throw DimensionError("ce_loss: logits must be N x k, got " + shape_str(logits.shape()));
  check_labels(labels, logits.dim(0), logits.dim(1), "ce_loss");
  return neg(mean(pick(log_softmax(logits, 1), labels)));
}

namespace detail {

template <typename T>
void check_bank(const Tensor<T>& f, const CentroidBank<T>& bank, const char* op) {
  if (f.ndim() != 2 || f.dim(1) != bank.dim()) {
    throw InputError(std::string(op) + ": features " + shape_str(f.shape()) + " do not match centroid dimension " +
                     std::to_string(bank.dim()));
  }
}

}  // namespace detail

// Mean over the batch of ||f_i - c_{y_i}||_2.
template <typename T>
Tensor<T> intra_loss(const Tensor<T>& f, std::span<const int> labels, const CentroidBank<T>& bank) {
  detail::check_bank(f, bank, "intra_loss");
  check_labels(labels, f.dim(0), bank.num_classes(), "intra_loss");
  return mean(l2norm(sub(f, gather_rows(bank.weights(), labels)), 1));
}

// Pairwise centroid angles arccos(u_a . u_b) over unit-normalized rows, k x k.
template <typename T>
Tensor<T> centroid_angles(const CentroidBank<T>& bank, T delta = T(kArccosDelta)) {
  const Tensor<T>& w = bank.weights();
  const Tensor<T> unit = div(w, l2norm(w, 1, true));
  return arccos(matmul(unit, transpose(unit)), delta);
}

template <typename T>
Tensor<T> inter_loss(const Tensor<T>& f, std::span<const int> labels, const CentroidBank<T>& bank,
                     const PclConfig& cfg) {
  const std::size_t k = bank.num_classes();
  if (k < 2) throw ConfigError("inter_loss needs at least 2 classes");
  detail::check_bank(f, bank, "inter_loss");
  const std::size_t n = f.dim(0);
  const std::size_t d = f.dim(1);
  check_labels(labels, n, k, "inter_loss");

  // dist[i, j] = ||f_i - c_j||
  const Tensor<T> dist = l2norm(sub(reshape(f, Shape{n, 1, d}), reshape(bank.weights(), Shape{1, k, d})), 2);
  // angle[i, j] = angle between c_{y_i} and c_j
  const Tensor<T> angle = gather_rows(centroid_angles(bank, static_cast<T>(cfg.clamp_delta)), labels);

  Tensor<T> terms;
  if (cfg.mode == PclMode::literal) {
    terms = add(dist, angle);
  } else {
    terms = add(relu(neg(add_scalar(dist, static_cast<T>(-cfg.margin)))),
                neg(add_scalar(angle, static_cast<T>(-std::numbers::pi))));
  }
  Tensor<T> mask(Shape{n, k}, T(1));
  for (std::size_t i = 0; i < n; ++i) mask[i * k + static_cast<std::size_t>(labels[i])] = T(0);
  return scale(sum(mul(terms, mask)), T(1) / static_cast<T>(n * (k - 1)));
}

template <typename T>
struct PclTerms {
  Tensor<T> total;
  Tensor<T> ce;
  Tensor<T> intra;
  Tensor<T> inter;
};

// total = w_ce * CE + w_intra * intra + w_inter * inter. Terms with zero
// weight are skipped (reported as 0) so plain CE training needs no bank.
template <typename T>
PclTerms<T> pcl_loss(const Tensor<T>& f, const Tensor<T>& logits, std::span<const int> labels,
                     const CentroidBank<T>* bank, const PclConfig& cfg) {
  cfg.validate();
  PclTerms<T> out;
  out.ce = ce_loss(logits, labels);
  out.total = scale(out.ce, static_cast<T>(cfg.weight_ce));
  const bool regularized = cfg.weight_intra != 0.0 || cfg.weight_inter != 0.0;
  if (regularized && bank == nullptr) throw ConfigError("pcl_loss: regularized objective requires a centroid bank");
  if (regularized) {
    out.intra = intra_loss(f, labels, *bank);
    out.inter = inter_loss(f, labels, *bank, cfg);
    out.total = add(out.total, add(scale(out.intra, static_cast<T>(cfg.weight_intra)),
                                   scale(out.inter, static_cast<T>(cfg.weight_inter))));
  } else {
    out.intra = Tensor<T>::scalar(T(0));
    out.inter = Tensor<T>::scalar(T(0));
  }
  return out;
}

}  // namespace dflnet
