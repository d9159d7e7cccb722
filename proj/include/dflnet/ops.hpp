#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dflnet/errors.hpp"
#include "dflnet/tensor.hpp"

namespace dflnet {

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline Shape drop_axis(const Shape& shape, std::size_t axis, bool keepdim) {
  Shape out = shape;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return out;
}

// numpy-style right-aligned broadcasting.
inline Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> strides(r, 0);
  std::size_t stride = 1;
  for (std::size_t k = in.size(); k-- > 0;) {
    const std::size_t d = r - in.size() + k;
    strides[d] = in[k] == 1 ? 0 : stride;
    stride *= in[k];
  }
  return strides;
}

// Calls f(out_index, a_index, b_index) over every element of `out`.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  const std::size_t r = out.size();
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  const std::size_t n = shape_numel(out);
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// f(x) forward, d(x, y) = dy/dx.
template <typename T, typename F, typename D>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, D d) {
  const auto& xv = x.vec();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_result<T>(op, x.shape(), std::move(out), {x},
                        [d](const Node<T>& self, const std::vector<T>& g, std::span<const GradSlot<T>> gin) {
                          const auto& xin = self.in(0);
                          auto& gx = *gin[0];
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * d(xin[i], self.data[i]);
                        });
}

// f(a, b) forward; da(a, b) and db(a, b) are the partial derivatives.
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
  const auto& av = a.vec();
  const auto& bv = b.vec();
  if (a.shape() == b.shape()) {
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
    return make_result<T>(op, a.shape(), std::move(out), {a, b},
                          [da, db](const Node<T>& self, const std::vector<T>& g, std::span<const GradSlot<T>> gin) {
                            const auto& x = self.in(0);
                            const auto& y = self.in(1);
                            if (gin[0]) {
                              auto& gx = *gin[0];
                              for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * da(x[i], y[i]);
                            }
                            if (gin[1]) {
                              auto& gy = *gin[1];
                              for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * db(x[i], y[i]);
                            }
                          });
  }
  Shape shape = broadcast_shapes(a.shape(), b.shape(), op);
  std::vector<T> out(shape_numel(shape));
  for_each_broadcast(shape, a.shape(), b.shape(),
                     [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = f(av[ia], bv[ib]); });
  return make_result<T>(op, shape, std::move(out), {a, b},
                        [da, db](const Node<T>& self, const std::vector<T>& g, std::span<const GradSlot<T>> gin) {
                          const auto& x = self.in(0);
                          const auto& y = self.in(1);
                          for_each_broadcast(self.shape, self.in_shape(0), self.in_shape(1),
                                             [&](std::size_t i, std::size_t ia, std::size_t ib) {
                                               if (gin[0]) (*gin[0])[ia] += g[i] * da(x[ia], y[ib]);
                                               if (gin[1]) (*gin[1])[ib] += g[i] * db(x[ia], y[ib]);
                                             });
                        });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  for (T v : b.vec()) {
    if (v == T(0)) throw DomainError("div: zero divisor");
  }
  return detail::binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary<T>("scale", x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary<T>("add_scalar", x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  for (T v : x.vec()) {
    if (!(v > T(0))) throw DomainError("log: non-positive argument " + std::to_string(static_cast<double>(v)));
  }
  return detail::unary<T>("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  for (T v : x.vec()) {
    if (!(v >= T(0))) throw DomainError("sqrt: negative argument " + std::to_string(static_cast<double>(v)));
  }
  return detail::unary<T>(
      "sqrt", x, [](T v) { return std::sqrt(v); }, [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary<T>("tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

// Inclusive bounds: the derivative is 1 on [lo, hi] and 0 strictly outside.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return detail::unary<T>(
      "clamp", x, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

inline constexpr double kArccosDelta = 1e-6;

// arccos of the argument clamped to [-1+delta, 1-delta]. Inside the clamped
// region the derivative is zero.
template <typename T>
Tensor<T> arccos(const Tensor<T>& x, T delta = T(kArccosDelta)) {
  const T lo = T(-1) + delta;
  const T hi = T(1) - delta;
  return detail::unary<T>(
      "arccos", x, [lo, hi](T v) { return std::acos(std::min(std::max(v, lo), hi)); },
      [lo, hi](T v, T) { return (v > lo && v < hi) ? T(-1) / std::sqrt(T(1) - v * v) : T(0); });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.vec()) acc += v;
  return detail::make_result<T>("sum", Shape{}, {acc}, {x},
                                [](const detail::Node<T>&, const std::vector<T>& g, auto gin) {
                                  for (auto& v : *gin[0]) v += g[0];
                                });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis, bool keepdim = false) {
  const auto s = detail::split_axis(x.shape(), axis, "sum");
  const auto& xv = x.vec();
  std::vector<T> out(s.outer * s.inner, T(0));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xv[(o * s.len + l) * s.inner + i];
  return detail::make_result<T>("sum_axis", detail::drop_axis(x.shape(), axis, keepdim), std::move(out), {x},
                                [s](const detail::Node<T>&, const std::vector<T>& g, auto gin) {
                                  auto& gx = *gin[0];
                                  for (std::size_t o = 0; o < s.outer; ++o)
                                    for (std::size_t l = 0; l < s.len; ++l)
                                      for (std::size_t i = 0; i < s.inner; ++i)
                                        gx[(o * s.len + l) * s.inner + i] += g[o * s.inner + i];
                                });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis, bool keepdim = false) {
  const auto len = detail::split_axis(x.shape(), axis, "mean").len;
  return scale(sum(x, axis, keepdim), T(1) / static_cast<T>(len));
}

// Euclidean norm along an axis. The gradient at a zero vector is taken as 0.
template <typename T>
Tensor<T> l2norm(const Tensor<T>& x, std::size_t axis, bool keepdim = false) {
  const auto s = detail::split_axis(x.shape(), axis, "l2norm");
  const auto& xv = x.vec();
  std::vector<T> out(s.outer * s.inner, T(0));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const T v = xv[(o * s.len + l) * s.inner + i];
        out[o * s.inner + i] += v * v;
      }
  for (auto& v : out) v = std::sqrt(v);
  return detail::make_result<T>("l2norm", detail::drop_axis(x.shape(), axis, keepdim), std::move(out), {x},
                                [s](const detail::Node<T>& self, const std::vector<T>& g, auto gin) {
                                  auto& gx = *gin[0];
                                  const auto& xin = self.in(0);
                                  for (std::size_t o = 0; o < s.outer; ++o)
                                    for (std::size_t i = 0; i < s.inner; ++i) {
                                      const T n = self.data[o * s.inner + i];
                                      if (n == T(0)) continue;
                                      const T c = g[o * s.inner + i] / n;
                                      for (std::size_t l = 0; l < s.len; ++l) {
                                        const std::size_t k = (o * s.len + l) * s.inner + i;
                                        gx[k] += c * xin[k];
                                      }
                                    }
                                });
}

// Max-subtracted softmax along an axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis, "softmax");
  const auto& xv = x.vec();
  std::vector<T> out(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, xv[(o * s.len + l) * s.inner + i]);
      T z = T(0);
      for (std::size_t l = 0; l < s.len; ++l) {
        const std::size_t k = (o * s.len + l) * s.inner + i;
        out[k] = std::exp(xv[k] - mx);
        z += out[k];
      }
      for (std::size_t l = 0; l < s.len; ++l) out[(o * s.len + l) * s.inner + i] /= z;
    }
  return detail::make_result<T>("softmax", x.shape(), std::move(out), {x},
                                [s](const detail::Node<T>& self, const std::vector<T>& g, auto gin) {
                                  auto& gx = *gin[0];
                                  const auto& y = self.data;
                                  for (std::size_t o = 0; o < s.outer; ++o)
                                    for (std::size_t i = 0; i < s.inner; ++i) {
                                      T dot = T(0);
                                      for (std::size_t l = 0; l < s.len; ++l) {
                                        const std::size_t k = (o * s.len + l) * s.inner + i;
                                        dot += g[k] * y[k];
                                      }
                                      for (std::size_t l = 0; l < s.len; ++l) {
                                        const std::size_t k = (o * s.len + l) * s.inner + i;
                                        gx[k] += y[k] * (g[k] - dot);
                                      }
                                    }
                                });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis, "log_softmax");
  const auto& xv = x.vec();
  std::vector<T> out(xv.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, xv[(o * s.len + l) * s.inner + i]);
      T z = T(0);
      for (std::size_t l = 0; l < s.len; ++l) z += std::exp(xv[(o * s.len + l) * s.inner + i] - mx);
      const T lz = std::log(z) + mx;
      for (std::size_t l = 0; l < s.len; ++l) {
        const std::size_t k = (o * s.len + l) * s.inner + i;
        out[k] = xv[k] - lz;
      }
    }
  return detail::make_result<T>("log_softmax", x.shape(), std::move(out), {x},
                                [s](const detail::Node<T>& self, const std::vector<T>& g, auto gin) {
                                  auto& gx = *gin[0];
                                  const auto& y = self.data;
                                  for (std::size_t o = 0; o < s.outer; ++o)
                                    for (std::size_t i = 0; i < s.inner; ++i) {
                                      T gs = T(0);
                                      for (std::size_t l = 0; l < s.len; ++l) gs += g[(o * s.len + l) * s.inner + i];
                                      for (std::size_t l = 0; l < s.len; ++l) {
                                        const std::size_t k = (o * s.len + l) * s.inner + i;
                                        gx[k] += g[k] - std::exp(y[k]) * gs;
                                      }
                                    }
                                });
}

// ---------------------------------------------------------------------------
// Shape manipulation and indexing
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  return detail::make_result<T>("reshape", std::move(shape), x.vec(), {x},
                                [](const detail::Node<T>&, const std::vector<T>& g, auto gin) {
                                  auto& gx = *gin[0];
                                  for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                                });
}

// Keeps the leading (batch) dimension and flattens the rest.
template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  if (x.ndim() < 1) throw DimensionError("flatten: scalar input");
  return reshape(x, Shape{x.dim(0), x.numel() / std::max<std::size_t>(x.dim(0), 1)});
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw DimensionError("concat: axis out of range for shape " + shape_str(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == ref[d];
    if (!ok) throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(ref));
    out_shape[axis] += s[axis];
  }
  const auto whole = detail::split_axis(out_shape, axis, "concat");
  std::vector<T> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.shape()[axis];
    const auto& pv = p.vec();
    for (std::size_t o = 0; o < whole.outer; ++o) {
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * len * whole.inner), len * whole.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * whole.len + off) * whole.inner));
    }
    off += len;
  }
  return detail::make_result<T>("concat", out_shape, std::move(out), parts,
                                [whole, offsets, axis](const detail::Node<T>& self, const std::vector<T>& g, auto gin) {
                                  for (std::size_t p = 0; p < gin.size(); ++p) {
                                    if (!gin[p]) continue;
                                    auto& gp = *gin[p];
                                    const std::size_t len = self.in_shape(p)[axis];
                                    for (std::size_t o = 0; o < whole.outer; ++o)
                                      for (std::size_t k = 0; k < len * whole.inner; ++k)
                                        gp[o * len * whole.inner + k] +=
                                            g[(o * whole.len + offsets[p]) * whole.inner + k];
                                  }
                                });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.ndim() != 2) throw DimensionError("transpose: expected 2-d tensor, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0);
  const std::size_t c = x.dim(1);
  std::vector<T> out(x.numel());
  const auto& xv = x.vec();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  return detail::make_result<T>("transpose", Shape{c, r}, std::move(out), {x},
                                [r, c](const detail::Node<T>&, const std::vector<T>& g, auto gin) {
                                  auto& gx = *gin[0];
                                  for (std::size_t i = 0; i < r; ++i)
                                    for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
                                });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const auto n = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto m = static_cast<Eigen::Index>(b.dim(1));
  std::vector<T> out(static_cast<std::size_t>(n * m));
  detail::MatMap<T>(out.data(), n, m).noalias() =
      detail::ConstMatMap<T>(a.vec().data(), n, k) * detail::ConstMatMap<T>(b.vec().data(), k, m);
  return detail::make_result<T>(
      "matmul", Shape{a.dim(0), b.dim(1)}, std::move(out), {a, b},
      [n, k, m](const detail::Node<T>& self, const std::vector<T>& g, auto gin) {
        detail::ConstMatMap<T> gm(g.data(), n, m);
        if (gin[0]) {
          detail::MatMap<T>(gin[0]->data(), n, k).noalias() += gm * detail::ConstMatMap<T>(self.in(1).data(), k, m).transpose();
        }
        if (gin[1]) {
          detail::MatMap<T>(gin[1]->data(), k, m).noalias() += detail::ConstMatMap<T>(self.in(0).data(), n, k).transpose() * gm;
        }
      });
}

inline void check_labels(std::span<const int> labels, std::size_t rows, std::size_t classes, const char* op) {
  if (labels.size() != rows) {
    throw InputError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) +
                     " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw InputError(std::string(op) + ": label " + std::to_string(y) + " outside [0, " + std::to_string(classes) +
                       ")");
    }
  }
}

// Rows idx[i] of a 2-d tensor, stacked.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const int> idx) {
  if (x.ndim() != 2) throw DimensionError("gather_rows: expected 2-d tensor, got " + shape_str(x.shape()));
  const std::size_t cols = x.dim(1);
  check_labels(idx, idx.size(), x.dim(0), "gather_rows");
  std::vector<int> rows(idx.begin(), idx.end());
  std::vector<T> out(rows.size() * cols);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(x.vec().begin() + static_cast<std::ptrdiff_t>(rows[i] * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(i * cols));
  return detail::make_result<T>("gather_rows", Shape{rows.size(), cols}, std::move(out), {x},
                                [rows, cols](const detail::Node<T>&, const std::vector<T>& g, auto gin) {
                                  auto& gx = *gin[0];
                                  for (std::size_t i = 0; i < rows.size(); ++i)
                                    for (std::size_t c = 0; c < cols; ++c) gx[rows[i] * cols + c] += g[i * cols + c];
                                });
}

// out[i] = x[i, labels[i]].
template <typename T>
Tensor<T> pick(const Tensor<T>& x, std::span<const int> labels) {
  if (x.ndim() != 2) throw DimensionError("pick: expected 2-d tensor, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0);
  const std::size_t k = x.dim(1);
  check_labels(labels, n, k, "pick");
  std::vector<int> lab(labels.begin(), labels.end());
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x.vec()[i * k + lab[i]];
  return detail::make_result<T>("pick", Shape{n}, std::move(out), {x},
                                [lab, k](const detail::Node<T>&, const std::vector<T>& g, auto gin) {
                                  for (std::size_t i = 0; i < lab.size(); ++i) (*gin[0])[i * k + lab[i]] += g[i];
                                });
}

// out[i] = max_{j != labels[i]} x[i, j]; gradient routes to the first argmax.
template <typename T>
Tensor<T> max_other(const Tensor<T>& x, std::span<const int> labels) {
  if (x.ndim() != 2 || x.dim(1) < 2) throw DimensionError("max_other: expected N x k (k >= 2), got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0);
  const std::size_t k = x.dim(1);
  check_labels(labels, n, k, "max_other");
  std::vector<std::size_t> arg(n);
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = labels[i] == 0 ? 1 : 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (static_cast<int>(j) == labels[i]) continue;
      if (x.vec()[i * k + j] > x.vec()[i * k + best]) best = j;
    }
    arg[i] = best;
    out[i] = x.vec()[i * k + best];
  }
  return detail::make_result<T>("max_other", Shape{n}, std::move(out), {x},
                                [arg, k](const detail::Node<T>&, const std::vector<T>& g, auto gin) {
                                  for (std::size_t i = 0; i < arg.size(); ++i) (*gin[0])[i * k + arg[i]] += g[i];
                                });
}

// y[n, c, ...] = x[n, c, ...] * scale[c] + shift[c].
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift) {
  if (x.ndim() < 2 || scale.numel() != x.dim(1) || shift.numel() != x.dim(1)) {
    throw DimensionError("channel_affine: x " + shape_str(x.shape()) + ", scale " + shape_str(scale.shape()) +
                         ", shift " + shape_str(shift.shape()));
  }
  const std::size_t n = x.dim(0);
  const std::size_t c = x.dim(1);
  const std::size_t inner = x.numel() / std::max<std::size_t>(n * c, 1);
  const auto& xv = x.vec();
  const auto& sv = scale.vec();
  const auto& bv = shift.vec();
  std::vector<T> out(xv.size());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) out[base + i] = xv[base + i] * sv[ch] + bv[ch];
    }
  return detail::make_result<T>(
      "channel_affine", x.shape(), std::move(out), {x, scale, shift},
      [n, c, inner](const detail::Node<T>& self, const std::vector<T>& g, auto gin) {
        const auto& xin = self.in(0);
        const auto& sin = self.in(1);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t base = (b * c + ch) * inner;
            T gs = T(0);
            T gb = T(0);
            for (std::size_t i = 0; i < inner; ++i) {
              if (gin[0]) (*gin[0])[base + i] += g[base + i] * sin[ch];
              gs += g[base + i] * xin[base + i];
              gb += g[base + i];
            }
            if (gin[1]) (*gin[1])[ch] += gs;
            if (gin[2]) (*gin[2])[ch] += gb;
          }
      });
}

// Per-channel standardization with the statistics of this batch:
// y[n, c, ...] = (x - mean_c) / sqrt(var_c + eps), biased variance over (n, ...).
template <typename T>
Tensor<T> batch_standardize(const Tensor<T>& x, T eps = T(1e-5)) {
  if (x.ndim() < 2 || x.numel() == 0) throw DimensionError("batch_standardize: x " + shape_str(x.shape()));
  const std::size_t n = x.dim(0);
  const std::size_t c = x.dim(1);
  const std::size_t inner = x.numel() / (n * c);
  const auto m = static_cast<T>(n * inner);
  const auto& xv = x.vec();
  std::vector<T> out(xv.size());
  std::vector<T> invstd(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    T s = T(0);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < inner; ++i) s += xv[(b * c + ch) * inner + i];
    const T mu = s / m;
    T v = T(0);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < inner; ++i) {
        const T d = xv[(b * c + ch) * inner + i] - mu;
        v += d * d;
      }
    invstd[ch] = T(1) / std::sqrt(v / m + eps);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t k = (b * c + ch) * inner + i;
        out[k] = (xv[k] - mu) * invstd[ch];
      }
  }
  return detail::make_result<T>(
      "batch_standardize", x.shape(), std::move(out), {x},
      [n, c, inner, m, invstd = std::move(invstd)](const detail::Node<T>& self, const std::vector<T>& g, auto gin) {
        if (!gin[0]) return;
        const auto& y = self.data;
        for (std::size_t ch = 0; ch < c; ++ch) {
          T sg = T(0);
          T sgy = T(0);
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < inner; ++i) {
              const std::size_t k = (b * c + ch) * inner + i;
              sg += g[k];
              sgy += g[k] * y[k];
            }
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t i = 0; i < inner; ++i) {
              const std::size_t k = (b * c + ch) * inner + i;
              (*gin[0])[k] += invstd[ch] * (g[k] - sg / m - y[k] * sgy / m);
            }
        }
      });
}

}  // namespace dflnet
