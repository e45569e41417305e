#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "internal.hpp"

namespace rawdeblur::ad {

using detail::make_result;
using detail::parent_grad;
using detail::require_rank4;
using detail::require_same_shape;

std::string Shape::str() const {
  if (rank == 0) return "()";
  return "(" + std::to_string(dims[0]) + "," + std::to_string(dims[1]) + "," + std::to_string(dims[2]) + "," +
         std::to_string(dims[3]) + ")";
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->value.assign(shape.numel(), value);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from(const Shape& shape, std::vector<T> values, bool requires_grad) {
  if (values.size() != shape.numel())
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " + shape.str());
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item() on a tensor of shape " + shape().str());
  return node_->value[0];
}

namespace {
thread_local bool g_grad_enabled = true;
thread_local bool g_checked = false;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

CheckedModeGuard::CheckedModeGuard(bool on) : previous_(g_checked) { g_checked = on; }
CheckedModeGuard::~CheckedModeGuard() { g_checked = previous_; }
bool checked_mode() { return g_checked; }

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.shape().rank != 0) throw UsageError("backward() needs a scalar loss");
  if (!loss.requires_grad()) throw UsageError("backward(): loss does not depend on any tensor requiring grad");

  // Iterative post-order DFS; parents visited in recorded order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order)
    if (n->backward_fn) n->grad.assign(n->value.size(), T(0));
  loss.node()->grad_buffer()[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->backward_fn) continue;
    n->backward_fn(*n);
  }
  if (checked_mode())
    for (Node<T>* n : order)
      if (!n->backward_fn && !n->grad.empty()) detail::check_finite<T>(n->grad, "backward", "gradient");
}

// --- element-wise -----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  std::vector<T> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, "add", [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (auto* g = parent_grad(self, k))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, "sub", [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  std::vector<T> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, "mul", [](Node<T>& self) {
    const auto& va = self.parents[0]->value;
    const auto& vb = self.parents[1]->value;
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * vb[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * va[i];
  });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "div");
  std::vector<T> out(a.numel());
  auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, "div", [](Node<T>& self) {
    const auto& vb = self.parents[1]->value;
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] / vb[i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i] * self.value[i] / vb[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return make_result<T>(a.shape(), std::move(out), {&a}, "scale", [factor](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
  std::vector<T> out(a.numel());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + offset;
  return make_result<T>(a.shape(), std::move(out), {&a}, "add_scalar", [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
  return make_result<T>(x.shape(), std::move(out), {&x}, "relu", [](Node<T>& self) {
    const auto& xin = self.parents[0]->value;
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i)
        if (xin[i] > T(0)) (*g)[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xv[i];
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  return make_result<T>(x.shape(), std::move(out), {&x}, "sigmoid", [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) {
        const T s = self.value[i];
        (*g)[i] += self.grad[i] * s * (T(1) - s);
      }
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
  return make_result<T>(x.shape(), std::move(out), {&x}, "tanh", [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) {
        const T t = self.value[i];
        (*g)[i] += self.grad[i] * (T(1) - t * t);
      }
  });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  std::vector<T> out(x.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(xv[i], lo, hi);
  return make_result<T>(x.shape(), std::move(out), {&x}, "clamp", [lo, hi](Node<T>& self) {
    const auto& xin = self.parents[0]->value;
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i)
        if (xin[i] >= lo && xin[i] <= hi) (*g)[i] += self.grad[i];
  });
}

// --- structural ---------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank4(a.shape(), "concat_channels");
  require_rank4(b.shape(), "concat_channels");
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n() != sb.n() || sa.h() != sb.h() || sa.w() != sb.w())
    throw ShapeError("concat_channels: incompatible shapes " + sa.str() + " and " + sb.str());
  const Shape so = Shape::nchw(sa.n(), sa.c() + sb.c(), sa.h(), sa.w());
  const std::size_t plane = static_cast<std::size_t>(sa.h()) * sa.w();
  const std::size_t na = sa.c() * plane, nb = sb.c() * plane;
  std::vector<T> out(so.numel());
  auto av = a.data(), bv = b.data();
  for (int n = 0; n < sa.n(); ++n) {
    std::copy_n(av.begin() + n * na, na, out.begin() + n * (na + nb));
    std::copy_n(bv.begin() + n * nb, nb, out.begin() + n * (na + nb) + na);
  }
  return make_result<T>(so, std::move(out), {&a, &b}, "concat_channels", [na, nb](Node<T>& self) {
    const std::size_t batches = self.grad.size() / (na + nb);
    if (auto* g = parent_grad(self, 0))
      for (std::size_t n = 0; n < batches; ++n)
        for (std::size_t i = 0; i < na; ++i) (*g)[n * na + i] += self.grad[n * (na + nb) + i];
    if (auto* g = parent_grad(self, 1))
      for (std::size_t n = 0; n < batches; ++n)
        for (std::size_t i = 0; i < nb; ++i) (*g)[n * nb + i] += self.grad[n * (na + nb) + na + i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  return make_result<T>(Shape::scalar(), {static_cast<T>(acc)}, {&x}, "sum", [](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (auto& v : *g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  const double n = static_cast<double>(x.numel());
  return make_result<T>(Shape::scalar(), {static_cast<T>(acc / n)}, {&x}, "mean", [n](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      const T share = static_cast<T>(static_cast<double>(self.grad[0]) / n);
      for (auto& v : *g) v += share;
    }
  });
}

template <typename T>
Tensor<T> crop(const Tensor<T>& x, int height, int width) {
  require_rank4(x.shape(), "crop");
  const Shape s = x.shape();
  if (height < 1 || width < 1 || height > s.h() || width > s.w())
    throw ShapeError("crop: window " + std::to_string(height) + "x" + std::to_string(width) + " exceeds " + s.str());
  const Shape so = Shape::nchw(s.n(), s.c(), height, width);
  std::vector<T> out(so.numel());
  auto xv = x.data();
  const int planes = s.n() * s.c();
  for (int p = 0; p < planes; ++p)
    for (int y = 0; y < height; ++y)
      std::copy_n(xv.begin() + (static_cast<std::ptrdiff_t>(p) * s.h() + y) * s.w(), width,
                  out.begin() + (static_cast<std::ptrdiff_t>(p) * height + y) * width);
  return make_result<T>(so, std::move(out), {&x}, "crop", [s, height, width, planes](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (int p = 0; p < planes; ++p)
        for (int y = 0; y < height; ++y)
          for (int xx = 0; xx < width; ++xx)
            (*g)[(static_cast<std::size_t>(p) * s.h() + y) * s.w() + xx] +=
                self.grad[(static_cast<std::size_t>(p) * height + y) * width + xx];
  });
}

template <typename T>
Tensor<T> reflect_pad(const Tensor<T>& x, int bottom, int right) {
  require_rank4(x.shape(), "reflect_pad");
  const Shape s = x.shape();
  if (bottom < 0 || right < 0 || bottom >= s.h() || right >= s.w())
    throw ShapeError("reflect_pad: padding " + std::to_string(bottom) + "," + std::to_string(right) +
                     " must be below the extent of " + s.str());
  const int ho = s.h() + bottom, wo = s.w() + right;
  const Shape so = Shape::nchw(s.n(), s.c(), ho, wo);
  const auto src = [s](int y, int xx) {
    const int ry = y < s.h() ? y : 2 * (s.h() - 1) - y;
    const int rx = xx < s.w() ? xx : 2 * (s.w() - 1) - xx;
    return static_cast<std::size_t>(ry) * s.w() + rx;
  };
  std::vector<T> out(so.numel());
  auto xv = x.data();
  const int planes = s.n() * s.c();
  const std::size_t in_plane = static_cast<std::size_t>(s.h()) * s.w(), out_plane = static_cast<std::size_t>(ho) * wo;
  for (int p = 0; p < planes; ++p)
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx) out[p * out_plane + static_cast<std::size_t>(y) * wo + xx] = xv[p * in_plane + src(y, xx)];
  return make_result<T>(so, std::move(out), {&x}, "reflect_pad", [=](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (int p = 0; p < planes; ++p)
        for (int y = 0; y < ho; ++y)
          for (int xx = 0; xx < wo; ++xx)
            (*g)[p * in_plane + src(y, xx)] += self.grad[p * out_plane + static_cast<std::size_t>(y) * wo + xx];
  });
}

namespace {

/// index[i] = position in the mosaic tensor of packed element i.
std::vector<std::size_t> pack_index(const Shape& mosaic, const raw::CfaPattern& cfa) {
  const int ph = mosaic.h() / 2, pw = mosaic.w() / 2;
  std::vector<std::size_t> idx(mosaic.numel());
  std::size_t k = 0;
  for (int n = 0; n < mosaic.n(); ++n)
    for (int role = 0; role < 4; ++role) {
      const auto off = cfa.offset(static_cast<raw::PlaneRole>(role));
      for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x)
          idx[k++] = (static_cast<std::size_t>(n) * mosaic.h() + 2 * y + off.row) * mosaic.w() + 2 * x + off.col;
    }
  return idx;
}

}  // namespace

template <typename T>
Tensor<T> pack_planes(const Tensor<T>& x, const raw::CfaPattern& cfa) {
  require_rank4(x.shape(), "pack_planes");
  const Shape s = x.shape();
  if (s.c() != 1 || s.h() % 2 || s.w() % 2)
    throw ShapeError("pack_planes: expected N x 1 x even x even, got " + s.str());
  auto idx = pack_index(s, cfa);
  std::vector<T> out(s.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[idx[i]];
  const Shape so = Shape::nchw(s.n(), 4, s.h() / 2, s.w() / 2);
  return make_result<T>(so, std::move(out), {&x}, "pack_planes", [idx = std::move(idx)](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < idx.size(); ++i) (*g)[idx[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> unpack_planes(const Tensor<T>& x, const raw::CfaPattern& cfa) {
  require_rank4(x.shape(), "unpack_planes");
  const Shape s = x.shape();
  if (s.c() != 4) throw ShapeError("unpack_planes: expected 4 planes, got " + s.str());
  const Shape so = Shape::nchw(s.n(), 1, s.h() * 2, s.w() * 2);
  auto idx = pack_index(so, cfa);
  std::vector<T> out(so.numel());
  auto xv = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) out[idx[i]] = xv[i];
  return make_result<T>(so, std::move(out), {&x}, "unpack_planes", [idx = std::move(idx)](Node<T>& self) {
    if (auto* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < idx.size(); ++i) (*g)[i] += self.grad[idx[i]];
  });
}

namespace {

inline int reflect(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

// One pass of a 1-D filter along rows (horizontal) or columns of every plane.
// adjoint=true scatters instead of gathers.
template <typename T>
void filter_pass(const T* src, T* dst, int planes, int h, int w, std::span<const double> taps, bool horizontal,
                 bool adjoint) {
  const int r = static_cast<int>(taps.size()) / 2;
  const int len = horizontal ? w : h;
  for (int p = 0; p < planes; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int pos = horizontal ? x : y;
        const std::size_t out_i = base + static_cast<std::size_t>(y) * w + x;
        if (!adjoint) {
          double acc = 0.0;
          for (int k = 0; k <= 2 * r; ++k) {
            const int q = reflect(pos + k - r, len);
            const std::size_t in_i = horizontal ? base + static_cast<std::size_t>(y) * w + q
                                                : base + static_cast<std::size_t>(q) * w + x;
            acc += taps[static_cast<std::size_t>(k)] * static_cast<double>(src[in_i]);
          }
          dst[out_i] = static_cast<T>(acc);
        } else {
          const T gv = src[out_i];
          for (int k = 0; k <= 2 * r; ++k) {
            const int q = reflect(pos + k - r, len);
            const std::size_t in_i = horizontal ? base + static_cast<std::size_t>(y) * w + q
                                                : base + static_cast<std::size_t>(q) * w + x;
            dst[in_i] += static_cast<T>(taps[static_cast<std::size_t>(k)]) * gv;
          }
        }
      }
  }
}

}  // namespace

template <typename T>
Tensor<T> separable_filter(const Tensor<T>& x, std::span<const double> taps) {
  require_rank4(x.shape(), "separable_filter");
  const Shape s = x.shape();
  const int r = static_cast<int>(taps.size()) / 2;
  if (taps.size() % 2 == 0 || r >= s.h() || r >= s.w())
    throw ShapeError("separable_filter: " + std::to_string(taps.size()) + "-tap filter does not fit " + s.str());
  const int planes = s.n() * s.c();
  std::vector<T> tmp(s.numel()), out(s.numel());
  filter_pass(x.data().data(), tmp.data(), planes, s.h(), s.w(), taps, true, false);
  filter_pass(tmp.data(), out.data(), planes, s.h(), s.w(), taps, false, false);
  std::vector<double> kept(taps.begin(), taps.end());
  return make_result<T>(s, std::move(out), {&x}, "separable_filter", [s, planes, kept](Node<T>& self) {
    if (auto* g = parent_grad(self, 0)) {
      std::vector<T> gtmp(self.grad.size(), T(0));
      filter_pass(self.grad.data(), gtmp.data(), planes, s.h(), s.w(), std::span<const double>(kept), false, true);
      filter_pass(gtmp.data(), g->data(), planes, s.h(), s.w(), std::span<const double>(kept), true, true);
    }
  });
}

#define RAWDEBLUR_INSTANTIATE(T)                                                               \
  template class Tensor<T>;                                                                    \
  template void backward<T>(const Tensor<T>&);                                                 \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                            \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                       \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                             \
  template Tensor<T> tanh<T>(const Tensor<T>&);                                                \
  template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                                         \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                 \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                \
  template Tensor<T> crop<T>(const Tensor<T>&, int, int);                                      \
  template Tensor<T> reflect_pad<T>(const Tensor<T>&, int, int);                               \
  template Tensor<T> pack_planes<T>(const Tensor<T>&, const raw::CfaPattern&);                 \
  template Tensor<T> unpack_planes<T>(const Tensor<T>&, const raw::CfaPattern&);               \
  template Tensor<T> separable_filter<T>(const Tensor<T>&, std::span<const double>);

RAWDEBLUR_INSTANTIATE(float)
RAWDEBLUR_INSTANTIATE(double)

#undef RAWDEBLUR_INSTANTIATE

}  // namespace rawdeblur::ad
