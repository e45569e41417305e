#include <algorithm>

#include <Eigen/Core>

#include "internal.hpp"

namespace rawdeblur::ad {

using detail::make_result;
using detail::parent_grad;

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

/// Geometry of one correlation: a C x H x W image seen through K x K windows.
struct Geometry {
  int channels, height, width, kernel, stride, padding, out_h, out_w;
  int rows() const { return channels * kernel * kernel; }
  int cols() const { return out_h * out_w; }
};

template <typename T>
void im2col(const T* img, const Geometry& g, T* cols) {
  const int ncols = g.cols();
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        T* row = cols + static_cast<std::ptrdiff_t>((c * g.kernel + ky) * g.kernel + kx) * ncols;
        const T* plane = img + static_cast<std::ptrdiff_t>(c) * g.height * g.width;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          T* dst = row + static_cast<std::ptrdiff_t>(oy) * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::ptrdiff_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
          }
        }
      }
}

// Accumulating inverse scatter of im2col.
template <typename T>
void col2im(const T* cols, const Geometry& g, T* img) {
  const int ncols = g.cols();
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        const T* row = cols + static_cast<std::ptrdiff_t>((c * g.kernel + ky) * g.kernel + kx) * ncols;
        T* plane = img + static_cast<std::ptrdiff_t>(c) * g.height * g.width;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          const T* src = row + static_cast<std::ptrdiff_t>(oy) * g.out_w;
          T* dst = plane + static_cast<std::ptrdiff_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
}

bool is_pointwise(const Geometry& g) { return g.kernel == 1 && g.stride == 1 && g.padding == 0; }

// A GEMM with a handful of output rows degenerates into an im2col copy that
// dwarfs the arithmetic; narrow stride-1 convs correlate directly instead.
bool use_direct(const Geometry& g, int cout) { return g.stride == 1 && cout <= 4 && !is_pointwise(g); }

// Visits every (input row, output row, valid column span) triple that one
// kernel tap (ky, kx) connects. fn(src_offset, dst_offset, length) in plane units.
template <typename Fn>
void for_each_tap_run(const Geometry& g, int ky, int kx, Fn&& fn) {
  const int x0 = std::max(0, g.padding - kx);
  const int x1 = std::min(g.out_w, g.width + g.padding - kx);
  if (x1 <= x0) return;
  for (int oy = 0; oy < g.out_h; ++oy) {
    const int iy = oy - g.padding + ky;
    if (iy < 0 || iy >= g.height) continue;
    fn(static_cast<std::ptrdiff_t>(iy) * g.width + x0 - g.padding + kx, static_cast<std::ptrdiff_t>(oy) * g.out_w + x0,
       x1 - x0);
  }
}

template <typename T>
void direct_forward(const T* img, const T* w, const Geometry& g, int cout, T* out) {
  const std::size_t in_plane = static_cast<std::size_t>(g.height) * g.width;
  const std::size_t out_plane = static_cast<std::size_t>(g.cols());
  for (int co = 0; co < cout; ++co) {
    T* o = out + co * out_plane;
    for (int c = 0; c < g.channels; ++c)
      for (int ky = 0; ky < g.kernel; ++ky)
        for (int kx = 0; kx < g.kernel; ++kx) {
          const T wv = w[((static_cast<std::size_t>(co) * g.channels + c) * g.kernel + ky) * g.kernel + kx];
          const T* src = img + c * in_plane;
          for_each_tap_run(g, ky, kx, [&](std::ptrdiff_t si, std::ptrdiff_t di, int len) {
            for (int i = 0; i < len; ++i) o[di + i] += wv * src[si + i];
          });
        }
  }
}

template <typename T>
void direct_backward(const T* img, const T* w, const T* gout, const Geometry& g, int cout, T* gx, T* gw) {
  const std::size_t in_plane = static_cast<std::size_t>(g.height) * g.width;
  const std::size_t out_plane = static_cast<std::size_t>(g.cols());
  for (int co = 0; co < cout; ++co) {
    const T* go = gout + co * out_plane;
    for (int c = 0; c < g.channels; ++c)
      for (int ky = 0; ky < g.kernel; ++ky)
        for (int kx = 0; kx < g.kernel; ++kx) {
          const std::size_t wi = ((static_cast<std::size_t>(co) * g.channels + c) * g.kernel + ky) * g.kernel + kx;
          const T wv = w[wi];
          const T* src = img + c * in_plane;
          T* dx = gx ? gx + c * in_plane : nullptr;
          T acc = 0;
          for_each_tap_run(g, ky, kx, [&](std::ptrdiff_t si, std::ptrdiff_t di, int len) {
            const Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> gv(go + di, len);
            if (gw) acc += gv.dot(Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(src + si, len));
            if (dx) Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(dx + si, len) += wv * gv;
          });
          if (gw) gw[wi] += acc;
        }
  }
}

std::string shapes_message(const char* op, const Shape& x, const Shape& w) {
  return std::string(op) + ": input " + x.str() + " incompatible with weight " + w.str();
}

template <typename T>
void check_bias(const Tensor<T>& bias, int channels, const char* op) {
  if (!bias.defined()) return;
  if (!(bias.shape() == Shape::nchw(1, channels, 1, 1)))
    throw ShapeError(std::string(op) + ": bias " + bias.shape().str() + " does not match " +
                     std::to_string(channels) + " output channels");
}

template <typename T>
void add_bias(std::vector<T>& out, const Tensor<T>& bias, int n, int c, std::size_t plane) {
  if (!bias.defined()) return;
  auto b = bias.data();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      T* p = out.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) p[k] += b[ch];
    }
}

template <typename T>
void accumulate_bias_grad(Node<T>& self, std::size_t bias_slot, int n, int c, std::size_t plane) {
  if (self.parents.size() <= bias_slot) return;
  auto* gb = parent_grad(self, bias_slot);
  if (!gb) return;
  for (int ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const T* p = self.grad.data() + (static_cast<std::size_t>(i) * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) acc += static_cast<double>(p[k]);
    }
    (*gb)[static_cast<std::size_t>(ch)] += static_cast<T>(acc);
  }
}

}  // namespace

int conv_output_extent(int in, int kernel, int stride, int padding) {
  if (stride < 1 || padding < 0 || kernel < 1) throw ShapeError("conv: invalid kernel/stride/padding");
  const int span = in + 2 * padding - kernel;
  if (span < 0) throw ShapeError("conv: kernel " + std::to_string(kernel) + " larger than padded input " +
                                 std::to_string(in + 2 * padding));
  return span / stride + 1;
}

int conv_transpose_output_extent(int in, int kernel, int stride, int padding, int output_padding) {
  if (stride < 1 || padding < 0 || kernel < 1 || output_padding < 0 || output_padding >= stride)
    throw ShapeError("conv_transpose: invalid kernel/stride/padding/output_padding");
  const int out = (in - 1) * stride - 2 * padding + kernel + output_padding;
  if (out < 1) throw ShapeError("conv_transpose: non-positive output extent");
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, ConvOptions opt) {
  const Shape xs = x.shape(), ws = weight.shape();
  if (xs.rank != 4 || ws.rank != 4 || ws.c() != xs.c() || ws.h() != ws.w())
    throw ShapeError(shapes_message("conv2d", xs, ws));
  check_bias(bias, ws.n(), "conv2d");
  const int cout = ws.n();
  Geometry g{xs.c(), xs.h(), xs.w(), ws.h(), opt.stride, opt.padding, 0, 0};
  g.out_h = conv_output_extent(xs.h(), g.kernel, g.stride, g.padding);
  g.out_w = conv_output_extent(xs.w(), g.kernel, g.stride, g.padding);
  const Shape so = Shape::nchw(xs.n(), cout, g.out_h, g.out_w);
  const std::size_t in_size = static_cast<std::size_t>(xs.c()) * xs.h() * xs.w();
  const std::size_t out_plane = static_cast<std::size_t>(g.cols());

  std::vector<T> out(so.numel());
  const bool direct = use_direct(g, cout);
  std::vector<T> cols(is_pointwise(g) || direct ? 0 : static_cast<std::size_t>(g.rows()) * g.cols());
  ConstMapMat<T> wm(weight.data().data(), cout, g.rows());
  for (int n = 0; n < xs.n(); ++n) {
    const T* img = x.data().data() + n * in_size;
    if (direct) {
      direct_forward(img, weight.data().data(), g, cout, out.data() + n * cout * out_plane);
      continue;
    }
    const T* cp = img;
    if (!is_pointwise(g)) {
      im2col(img, g, cols.data());
      cp = cols.data();
    }
    MapMat<T> om(out.data() + n * cout * out_plane, cout, g.cols());
    om.noalias() = wm * ConstMapMat<T>(cp, g.rows(), g.cols());
  }
  add_bias(out, bias, xs.n(), cout, out_plane);

  return make_result<T>(so, std::move(out), {&x, &weight, &bias}, "conv2d", [g, xs, cout, in_size, out_plane](Node<T>& self) {
    const T* xdata = self.parents[0]->value.data();
    const T* wdata = self.parents[1]->value.data();
    auto* gx = parent_grad(self, 0);
    auto* gw = parent_grad(self, 1);
    if (use_direct(g, cout)) {
      for (int n = 0; n < xs.n(); ++n)
        direct_backward(xdata + n * in_size, wdata, self.grad.data() + n * cout * out_plane, g, cout,
                        gx ? gx->data() + n * in_size : nullptr, gw ? gw->data() : nullptr);
      accumulate_bias_grad(self, 2, xs.n(), cout, out_plane);
      return;
    }
    std::vector<T> cols(is_pointwise(g) ? 0 : static_cast<std::size_t>(g.rows()) * g.cols());
    std::vector<T> dcols(gx && !is_pointwise(g) ? cols.size() : 0);
    ConstMapMat<T> wm(wdata, cout, g.rows());
    for (int n = 0; n < xs.n(); ++n) {
      ConstMapMat<T> gout(self.grad.data() + n * cout * out_plane, cout, g.cols());
      const T* img = xdata + n * in_size;
      if (gw) {
        const T* cp = img;
        if (!is_pointwise(g)) {
          im2col(img, g, cols.data());
          cp = cols.data();
        }
        MapMat<T>(gw->data(), cout, g.rows()).noalias() += gout * ConstMapMat<T>(cp, g.rows(), g.cols()).transpose();
      }
      if (gx) {
        if (is_pointwise(g)) {
          MapMat<T>(gx->data() + n * in_size, g.rows(), g.cols()).noalias() += wm.transpose() * gout;
        } else {
          MapMat<T>(dcols.data(), g.rows(), g.cols()).noalias() = wm.transpose() * gout;
          col2im(dcols.data(), g, gx->data() + n * in_size);
        }
      }
    }
    accumulate_bias_grad(self, 2, xs.n(), cout, out_plane);
  });
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, ConvOptions opt) {
  const Shape xs = x.shape(), ws = weight.shape();
  if (xs.rank != 4 || ws.rank != 4 || ws.n() != xs.c() || ws.h() != ws.w())
    throw ShapeError(shapes_message("conv_transpose2d", xs, ws));
  const int cin = xs.c(), cout = ws.c(), k = ws.h();
  check_bias(bias, cout, "conv_transpose2d");
  const int oh = conv_transpose_output_extent(xs.h(), k, opt.stride, opt.padding, opt.output_padding);
  const int ow = conv_transpose_output_extent(xs.w(), k, opt.stride, opt.padding, opt.output_padding);
  // The output grid plays the role of a conv2d input that correlates down to x's grid.
  const Geometry g{cout, oh, ow, k, opt.stride, opt.padding, xs.h(), xs.w()};
  const Shape so = Shape::nchw(xs.n(), cout, oh, ow);
  const std::size_t in_size = static_cast<std::size_t>(cin) * g.cols();
  const std::size_t out_size = static_cast<std::size_t>(cout) * oh * ow;

  std::vector<T> out(so.numel(), T(0));
  RowMat<T> cols(g.rows(), g.cols());
  ConstMapMat<T> wm(weight.data().data(), cin, g.rows());
  for (int n = 0; n < xs.n(); ++n) {
    cols.noalias() = wm.transpose() * ConstMapMat<T>(x.data().data() + n * in_size, cin, g.cols());
    col2im(cols.data(), g, out.data() + n * out_size);
  }
  add_bias(out, bias, xs.n(), cout, static_cast<std::size_t>(oh) * ow);

  return make_result<T>(so, std::move(out), {&x, &weight, &bias}, "conv_transpose2d",
                        [g, xs, cin, cout, in_size, out_size](Node<T>& self) {
                          const T* xdata = self.parents[0]->value.data();
                          const T* wdata = self.parents[1]->value.data();
                          auto* gx = parent_grad(self, 0);
                          auto* gw = parent_grad(self, 1);
                          std::vector<T> gcols(static_cast<std::size_t>(g.rows()) * g.cols());
                          ConstMapMat<T> wm(wdata, cin, g.rows());
                          for (int n = 0; n < xs.n(); ++n) {
                            im2col(self.grad.data() + n * out_size, g, gcols.data());
                            ConstMapMat<T> gc(gcols.data(), g.rows(), g.cols());
                            if (gx) MapMat<T>(gx->data() + n * in_size, cin, g.cols()).noalias() += wm * gc;
                            if (gw)
                              MapMat<T>(gw->data(), cin, g.rows()).noalias() +=
                                  ConstMapMat<T>(xdata + n * in_size, cin, g.cols()) * gc.transpose();
                          }
                          accumulate_bias_grad(self, 2, xs.n(), cout, static_cast<std::size_t>(g.height) * g.width);
                        });
}

template Tensor<float> conv2d<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, ConvOptions);
template Tensor<double> conv2d<double>(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                       ConvOptions);
template Tensor<float> conv_transpose2d<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                               ConvOptions);
template Tensor<double> conv_transpose2d<double>(const Tensor<double>&, const Tensor<double>&,
                                                 const Tensor<double>&, ConvOptions);

}  // namespace rawdeblur::ad
