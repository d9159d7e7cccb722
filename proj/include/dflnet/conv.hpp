#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dflnet/ops.hpp"

namespace dflnet {

// Geometry of one image. The image side is C x H x W, the column side
// out_h x out_w positions of a kh x kw window.
struct ConvGeometry {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t out_h = 0;
  std::size_t out_w = 0;

  std::size_t image_size() const { return channels * height * width; }
  std::size_t col_rows() const { return channels * kernel_h * kernel_w; }
  std::size_t col_cols() const { return out_h * out_w; }
};

namespace detail {

// Column matrix layout: row (c, i, j), column (oh, ow).
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* cols) {
  const std::size_t ncols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t i = 0; i < g.kernel_h; ++i)
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        T* dst = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * ncols;
        const T* plane = img + c * g.height * g.width;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + i) - static_cast<long>(g.padding);
          if (ih < 0 || ih >= static_cast<long>(g.height)) {
            for (std::size_t ow = 0; ow < g.out_w; ++ow) dst[oh * g.out_w + ow] = T(0);
            continue;
          }
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + j) - static_cast<long>(g.padding);
            dst[oh * g.out_w + ow] = (iw < 0 || iw >= static_cast<long>(g.width))
                                         ? T(0)
                                         : plane[static_cast<std::size_t>(ih) * g.width + static_cast<std::size_t>(iw)];
          }
        }
      }
}

// Adjoint of im2col: scatter-adds columns back into the image.
template <typename T>
void col2im(const T* cols, const ConvGeometry& g, T* img) {
  const std::size_t ncols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t i = 0; i < g.kernel_h; ++i)
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        const T* src = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * ncols;
        T* plane = img + c * g.height * g.width;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + i) - static_cast<long>(g.padding);
          if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow * g.stride + j) - static_cast<long>(g.padding);
            if (iw < 0 || iw >= static_cast<long>(g.width)) continue;
            plane[static_cast<std::size_t>(ih) * g.width + static_cast<std::size_t>(iw)] += src[oh * g.out_w + ow];
          }
        }
      }
}

inline void check_conv_args(const char* op, const Shape& x, const Shape& k, std::size_t x_channels_dim_of_k,
                            std::size_t stride) {
  if (x.size() != 4 || k.size() != 4) {
    throw DimensionError(std::string(op) + ": expected 4-d input and kernel, got " + shape_str(x) + " and " +
                         shape_str(k));
  }
  if (k[x_channels_dim_of_k] != x[1]) {
    throw DimensionError(std::string(op) + ": input " + shape_str(x) + " has " + std::to_string(x[1]) +
                         " channels but kernel " + shape_str(k) + " expects " +
                         std::to_string(k[x_channels_dim_of_k]));
  }
  if (stride < 1) throw DimensionError(std::string(op) + ": stride must be >= 1");
}

}  // namespace detail

// Cross-correlation. x: N x C x H x W, kernel: O x C x kh x kw.
// Each image is its own GEMM, so an example's output does not depend on its
// position in the batch.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride = 1, std::size_t padding = 0) {
  detail::check_conv_args("conv2d", x.shape(), kernel.shape(), 1, stride);
  const auto& ks = kernel.shape();
  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), ks[2], ks[3], stride, padding, 0, 0};
  if (g.kernel_h > g.height + 2 * padding || g.kernel_w > g.width + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_str(ks) + " larger than padded input " + shape_str(x.shape()) +
                         " (padding " + std::to_string(padding) + ")");
  }
  g.out_h = (g.height + 2 * padding - g.kernel_h) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kernel_w) / stride + 1;
  const std::size_t n = x.dim(0);
  const std::size_t out_c = ks[0];
  const auto rows = static_cast<Eigen::Index>(g.col_rows());
  const auto ncols = static_cast<Eigen::Index>(g.col_cols());
  const auto oc = static_cast<Eigen::Index>(out_c);
  const std::size_t out_size = out_c * g.col_cols();

  std::vector<T> cols(g.col_rows() * g.col_cols());
  std::vector<T> out(n * out_size);
  const detail::ConstMatMap<T> km(kernel.vec().data(), oc, rows);
  for (std::size_t b = 0; b < n; ++b) {
    detail::im2col(x.vec().data() + b * g.image_size(), g, cols.data());
    detail::MatMap<T>(out.data() + b * out_size, oc, ncols).noalias() =
        km * detail::ConstMatMap<T>(cols.data(), rows, ncols);
  }

  return detail::make_result<T>(
      "conv2d", Shape{n, out_c, g.out_h, g.out_w}, std::move(out), {x, kernel},
      [g, n, rows, ncols, oc, out_size](const detail::Node<T>& self, const std::vector<T>& grad, auto gin) {
        std::vector<T> cols(g.col_rows() * g.col_cols());
        const detail::ConstMatMap<T> km(self.in(1).data(), oc, rows);
        for (std::size_t b = 0; b < n; ++b) {
          const detail::ConstMatMap<T> gm(grad.data() + b * out_size, oc, ncols);
          if (gin[1]) {
            detail::im2col(self.in(0).data() + b * g.image_size(), g, cols.data());
            detail::MatMap<T>(gin[1]->data(), oc, rows).noalias() +=
                gm * detail::ConstMatMap<T>(cols.data(), rows, ncols).transpose();
          }
          if (gin[0]) {
            detail::MatMap<T>(cols.data(), rows, ncols).noalias() = km.transpose() * gm;
            detail::col2im(cols.data(), g, gin[0]->data() + b * g.image_size());
          }
        }
      });
}

// Transposed convolution, the adjoint of conv2d in its input.
// x: N x C x H x W, kernel: C x O x kh x kw, output H' = (H-1)*stride - 2*padding + kh.
template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride = 1, std::size_t padding = 0) {
  detail::check_conv_args("deconv2d", x.shape(), kernel.shape(), 0, stride);
  const auto& ks = kernel.shape();
  const std::size_t n = x.dim(0);
  const std::size_t in_c = x.dim(1);
  const std::size_t out_c = ks[1];
  const long oh = static_cast<long>((x.dim(2) - 1) * stride + ks[2]) - 2 * static_cast<long>(padding);
  const long ow = static_cast<long>((x.dim(3) - 1) * stride + ks[3]) - 2 * static_cast<long>(padding);
  if (oh < 1 || ow < 1) {
    throw DimensionError("deconv2d: kernel " + shape_str(ks) + " with padding " + std::to_string(padding) +
                         " yields empty output for input " + shape_str(x.shape()));
  }
  // Geometry of the equivalent forward convolution: image = this op's output.
  const ConvGeometry g{out_c, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), ks[2], ks[3],
                       stride, padding, x.dim(2), x.dim(3)};
  const auto rows = static_cast<Eigen::Index>(g.col_rows());
  const auto ncols = static_cast<Eigen::Index>(g.col_cols());
  const auto ic = static_cast<Eigen::Index>(in_c);
  const std::size_t in_size = in_c * g.col_cols();

  std::vector<T> cols(g.col_rows() * g.col_cols());
  std::vector<T> out(n * g.image_size(), T(0));
  const detail::ConstMatMap<T> km(kernel.vec().data(), ic, rows);
  for (std::size_t b = 0; b < n; ++b) {
    detail::MatMap<T>(cols.data(), rows, ncols).noalias() =
        km.transpose() * detail::ConstMatMap<T>(x.vec().data() + b * in_size, ic, ncols);
    detail::col2im(cols.data(), g, out.data() + b * g.image_size());
  }

  return detail::make_result<T>(
      "deconv2d", Shape{n, out_c, g.height, g.width}, std::move(out), {x, kernel},
      [g, n, rows, ncols, ic, in_size](const detail::Node<T>& self, const std::vector<T>& grad, auto gin) {
        std::vector<T> gcols(g.col_rows() * g.col_cols());
        const detail::ConstMatMap<T> km(self.in(1).data(), ic, rows);
        for (std::size_t b = 0; b < n; ++b) {
          detail::im2col(grad.data() + b * g.image_size(), g, gcols.data());
          const detail::ConstMatMap<T> gc(gcols.data(), rows, ncols);
          if (gin[0]) detail::MatMap<T>(gin[0]->data() + b * in_size, ic, ncols).noalias() += km * gc;
          if (gin[1]) {
            detail::MatMap<T>(gin[1]->data(), ic, rows).noalias() +=
                detail::ConstMatMap<T>(self.in(0).data() + b * in_size, ic, ncols) * gc.transpose();
          }
        }
      });
}

// Max over window x window patches. Backward routes to the first (row-major)
// maximal element of each window.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t window, std::size_t stride) {
  if (x.ndim() != 4) throw DimensionError("maxpool2d: expected 4-d input, got " + shape_str(x.shape()));
  if (window < 1 || stride < 1) throw DimensionError("maxpool2d: window and stride must be >= 1");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (window > h || window > w) {
    throw DimensionError("maxpool2d: window " + std::to_string(window) + " larger than input " + shape_str(x.shape()));
  }
  const std::size_t oh = (h - window) / stride + 1;
  const std::size_t ow = (w - window) / stride + 1;
  const auto& xv = x.vec();
  std::vector<T> out(n * c * oh * ow);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = base + i * stride * w + j * stride;
        for (std::size_t a = 0; a < window; ++a)
          for (std::size_t b = 0; b < window; ++b) {
            const std::size_t k = base + (i * stride + a) * w + j * stride + b;
            if (xv[k] > xv[best]) best = k;
          }
        const std::size_t o = (p * oh + i) * ow + j;
        out[o] = xv[best];
        arg[o] = best;
      }
  }
  return detail::make_result<T>("maxpool2d", Shape{n, c, oh, ow}, std::move(out), {x},
                                [arg](const detail::Node<T>&, const std::vector<T>& g, auto gin) {
                                  auto& gx = *gin[0];
                                  for (std::size_t o = 0; o < g.size(); ++o) gx[arg[o]] += g[o];
                                });
}

}  // namespace dflnet
