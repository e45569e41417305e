#include <cmath>

#include "internal.hpp"

namespace rawdeblur::ad {

using detail::make_result;
using detail::parent_grad;

template <typename T>
BatchNormState<T>::BatchNormState(int channels)
    : gamma(Tensor<T>::full(Shape::nchw(1, channels, 1, 1), T(1), true)),
      beta(Tensor<T>::zeros(Shape::nchw(1, channels, 1, 1), true)),
      running_mean(static_cast<std::size_t>(channels), T(0)),
      running_var(static_cast<std::size_t>(channels), T(1)) {}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, BatchNormState<T>& state) {
  const Shape s = x.shape();
  if (s.rank != 4 || s.c() != state.channels())
    throw ShapeError("batchnorm2d: input " + s.str() + " does not match " + std::to_string(state.channels()) +
                     " channels");
  if (!(state.eps > 0.0)) throw ConfigError("batchnorm2d: epsilon must be positive");
  const int n = s.n(), c = s.c();
  const std::size_t plane = static_cast<std::size_t>(s.h()) * s.w();
  const std::size_t count = static_cast<std::size_t>(n) * plane;
  auto xv = x.data();
  auto gv = state.gamma.data();
  auto bv = state.beta.data();
  const auto at = [&](int i, int ch) { return (static_cast<std::size_t>(i) * c + ch) * plane; };

  std::vector<T> xhat(s.numel());
  std::vector<T> invstd(static_cast<std::size_t>(c));
  std::vector<T> out(s.numel());

  if (state.training) {
    if (count < 2) throw ShapeError("batchnorm2d: train mode needs more than one value per channel, got " + s.str());
    for (int ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i)
        for (std::size_t k = 0; k < plane; ++k) acc += static_cast<double>(xv[at(i, ch) + k]);
      const double mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (int i = 0; i < n; ++i)
        for (std::size_t k = 0; k < plane; ++k) {
          const double d = static_cast<double>(xv[at(i, ch) + k]) - mu;
          sq += d * d;
        }
      const double var = sq / static_cast<double>(count);
      const double is = 1.0 / std::sqrt(var + state.eps);
      invstd[static_cast<std::size_t>(ch)] = static_cast<T>(is);
      for (int i = 0; i < n; ++i)
        for (std::size_t k = 0; k < plane; ++k) {
          const std::size_t idx = at(i, ch) + k;
          xhat[idx] = static_cast<T>((static_cast<double>(xv[idx]) - mu) * is);
          out[idx] = gv[ch] * xhat[idx] + bv[ch];
        }
      const double m = state.momentum;
      auto& rm = state.running_mean[static_cast<std::size_t>(ch)];
      auto& rv = state.running_var[static_cast<std::size_t>(ch)];
      rm = static_cast<T>((1.0 - m) * rm + m * mu);
      rv = static_cast<T>((1.0 - m) * rv + m * var * static_cast<double>(count) / static_cast<double>(count - 1));
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      const double mu = state.running_mean[static_cast<std::size_t>(ch)];
      const double is = 1.0 / std::sqrt(static_cast<double>(state.running_var[static_cast<std::size_t>(ch)]) + state.eps);
      invstd[static_cast<std::size_t>(ch)] = static_cast<T>(is);
      for (int i = 0; i < n; ++i)
        for (std::size_t k = 0; k < plane; ++k) {
          const std::size_t idx = at(i, ch) + k;
          xhat[idx] = static_cast<T>((static_cast<double>(xv[idx]) - mu) * is);
          out[idx] = gv[ch] * xhat[idx] + bv[ch];
        }
    }
  }

  const bool training = state.training;
  return make_result<T>(
      s, std::move(out), {&x, &state.gamma, &state.beta}, "batchnorm2d",
      [n, c, plane, count, training, xhat = std::move(xhat), invstd = std::move(invstd)](Node<T>& self) {
        const auto& gamma = self.parents[1]->value;
        auto* gx = parent_grad(self, 0);
        auto* gg = parent_grad(self, 1);
        auto* gb = parent_grad(self, 2);
        const auto at = [&](int i, int ch) { return (static_cast<std::size_t>(i) * c + ch) * plane; };
        for (int ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int i = 0; i < n; ++i)
            for (std::size_t k = 0; k < plane; ++k) {
              const std::size_t idx = at(i, ch) + k;
              sum_dy += static_cast<double>(self.grad[idx]);
              sum_dy_xhat += static_cast<double>(self.grad[idx]) * static_cast<double>(xhat[idx]);
            }
          if (gg) (*gg)[static_cast<std::size_t>(ch)] += static_cast<T>(sum_dy_xhat);
          if (gb) (*gb)[static_cast<std::size_t>(ch)] += static_cast<T>(sum_dy);
          if (!gx) continue;
          const double g = gamma[static_cast<std::size_t>(ch)];
          const double is = invstd[static_cast<std::size_t>(ch)];
          if (training) {
            const double m = static_cast<double>(count);
            const double k0 = g * is / m;
            for (int i = 0; i < n; ++i)
              for (std::size_t k = 0; k < plane; ++k) {
                const std::size_t idx = at(i, ch) + k;
                (*gx)[idx] += static_cast<T>(
                    k0 * (m * static_cast<double>(self.grad[idx]) - sum_dy - static_cast<double>(xhat[idx]) * sum_dy_xhat));
              }
          } else {
            for (int i = 0; i < n; ++i)
              for (std::size_t k = 0; k < plane; ++k) {
                const std::size_t idx = at(i, ch) + k;
                (*gx)[idx] += static_cast<T>(static_cast<double>(self.grad[idx]) * g * is);
              }
          }
        }
      });
}

template struct BatchNormState<float>;
template struct BatchNormState<double>;
template Tensor<float> batchnorm2d<float>(const Tensor<float>&, BatchNormState<float>&);
template Tensor<double> batchnorm2d<double>(const Tensor<double>&, BatchNormState<double>&);

}  // namespace rawdeblur::ad
