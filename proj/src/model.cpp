#include "rawdeblur/model.hpp"

#include <cmath>

#include "rawdeblur/errors.hpp"
#include "rawdeblur/rng.hpp"

namespace rawdeblur::model {

using ad::Shape;
using ad::Tensor;

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::SpatialOnly:
      return "spatial_only";
    case Variant::ColorOnly:
      return "color_only";
    case Variant::TwoBranch:
      return "two_branch";
    case Variant::TwoBranchBca:
      return "two_branch_bca";
  }
  throw ConfigError("invalid variant code " + std::to_string(static_cast<int>(variant)));
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::SpatialOnly, Variant::ColorOnly, Variant::TwoBranch, Variant::TwoBranchBca})
    if (to_string(v) == name) return v;
  throw ConfigError("unknown variant '" + name +
                    "' (expected spatial_only, color_only, two_branch or two_branch_bca)");
}

void ModelConfig::validate() const {
  if (static_cast<int>(variant) > 3) throw ConfigError("invalid variant code " + std::to_string(static_cast<int>(variant)));
  if (base_channels < 1 || base_channels > 4096) throw ConfigError("base_channels must be in [1, 4096]");
  if (n_resblocks < 1 || n_resblocks > 255) throw ConfigError("n_resblocks must be in [1, 255]");
  if (multiplier != 1 && multiplier != 2) throw ConfigError("channel multiplier must be 1 or 2");
}

template <typename T>
Tensor<T> Conv<T>::operator()(const Tensor<T>& x) const {
  return transposed ? ad::conv_transpose2d(x, weight, bias, opt) : ad::conv2d(x, weight, bias, opt);
}

template <typename T>
Tensor<T> ConvBnRelu<T>::operator()(const Tensor<T>& x) {
  return ad::relu(ad::batchnorm2d(conv(x), bn));
}

template <typename T>
BcaOutput<T> bca(const Tensor<T>& m_space, const Tensor<T>& m_color, const Bca<T>& params) {
  if (m_space.shape() != m_color.shape())
    throw ShapeError("bca: branch shapes differ " + m_space.shape().str() + " vs " + m_color.shape().str());
  BcaOutput<T> out;
  out.space_attention = ad::sigmoid(params.space_gate(m_color));
  out.color_attention = ad::sigmoid(params.color_gate(m_space));
  out.space = ad::mul(m_space, out.space_attention);
  out.color = ad::mul(m_color, out.color_attention);
  return out;
}

template <typename T>
Tensor<T> resblock(const Tensor<T>& x, ResBlock<T>& p) {
  const auto h = ad::relu(ad::batchnorm2d(p.conv1(x), p.bn1));
  return ad::add(x, ad::batchnorm2d(p.conv2(h), p.bn2));
}

template <typename T>
const Shape* Trace<T>::find(const std::string& layer) const {
  for (const auto& [name, shape] : shapes)
    if (name == layer) return &shape;
  return nullptr;
}

namespace {

/// Weights uniform in +-sqrt(6 / fan_in); fan_in counts the inputs feeding one output.
template <typename T>
Conv<T> make_conv(Rng& rng, int cin, int cout, int k, ad::ConvOptions opt, bool with_bias, bool transposed = false) {
  Conv<T> c;
  c.opt = opt;
  c.transposed = transposed;
  const Shape ws = transposed ? Shape::nchw(cin, cout, k, k) : Shape::nchw(cout, cin, k, k);
  const double fan_in = transposed ? static_cast<double>(cin) * k * k / (opt.stride * opt.stride)
                                   : static_cast<double>(cin) * k * k;
  const double bound = std::sqrt(6.0 / fan_in);
  std::vector<T> w(ws.numel());
  for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
  c.weight = Tensor<T>::from(ws, std::move(w), true);
  if (with_bias) c.bias = Tensor<T>::zeros(Shape::nchw(1, cout, 1, 1), true);
  return c;
}

template <typename T>
ConvBnRelu<T> make_cbr(Rng& rng, int cin, int cout, int k, ad::ConvOptions opt, bool transposed = false) {
  ConvBnRelu<T> layer;
  layer.conv = make_conv<T>(rng, cin, cout, k, opt, false, transposed);
  layer.bn = ad::BatchNormState<T>(cout);
  return layer;
}

template <typename T>
void add_conv(std::vector<NamedTensor<T>>& out, const std::string& prefix, Conv<T>& c) {
  const auto dims = [](const Tensor<T>& t) {
    const Shape& s = t.shape();
    return std::vector<int>{s.n(), s.c(), s.h(), s.w()};
  };
  out.push_back({prefix + ".weight", dims(c.weight), c.weight.data(), &c.weight});
  if (c.bias.defined()) out.push_back({prefix + ".bias", {c.bias.shape().c()}, c.bias.data(), &c.bias});
}

template <typename T>
void add_bn(std::vector<NamedTensor<T>>& out, const std::string& prefix, ad::BatchNormState<T>& bn) {
  const int c = bn.channels();
  out.push_back({prefix + ".gamma", {c}, bn.gamma.data(), &bn.gamma});
  out.push_back({prefix + ".beta", {c}, bn.beta.data(), &bn.beta});
  out.push_back({prefix + ".running_mean", {c}, bn.running_mean, nullptr});
  out.push_back({prefix + ".running_var", {c}, bn.running_var, nullptr});
}

template <typename T>
void add_cbr(std::vector<NamedTensor<T>>& out, const std::string& prefix, ConvBnRelu<T>& layer) {
  add_conv(out, prefix + ".conv", layer.conv);
  add_bn(out, prefix + ".bn", layer.bn);
}

}  // namespace

template <typename T>
DeblurNet<T>::DeblurNet(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const int c0 = config_.channels(0), c1 = config_.channels(1), c2 = config_.channels(2);
  if (config_.has_spatial()) {
    spatial_in_ = make_cbr<T>(rng, 1, c0, 7, {1, 3});
    spatial_down1_ = make_cbr<T>(rng, c0, c1, 3, {2, 1});
    spatial_down2_ = make_cbr<T>(rng, c1, c2, 3, {2, 1});
  }
  if (config_.has_color()) {
    color_in_ = make_cbr<T>(rng, 4, c0, 3, {1, 1});
    color_down1_ = make_cbr<T>(rng, c0, c1, 3, {1, 1});
    color_down2_ = make_cbr<T>(rng, c1, c2, 3, {2, 1});
  }
  if (config_.has_bca()) {
    bca1_ = {make_conv<T>(rng, c1, c1, 1, {1, 0}, true), make_conv<T>(rng, c1, c1, 1, {1, 0}, true)};
    bca2_ = {make_conv<T>(rng, c2, c2, 1, {1, 0}, true), make_conv<T>(rng, c2, c2, 1, {1, 0}, true)};
  }
  const bool both = config_.has_spatial() && config_.has_color();
  fuse_ = make_cbr<T>(rng, both ? 2 * c2 : c2, c2, 3, {1, 1});
  for (int i = 0; i < config_.n_resblocks; ++i) {
    ResBlock<T> r;
    r.conv1 = make_conv<T>(rng, c2, c2, 3, {1, 1}, false);
    r.bn1 = ad::BatchNormState<T>(c2);
    r.conv2 = make_conv<T>(rng, c2, c2, 3, {1, 1}, false);
    r.bn2 = ad::BatchNormState<T>(c2);
    res_.push_back(std::move(r));
  }
  up2_ = make_cbr<T>(rng, c2, c1, 3, {2, 1, 1}, true);
  if (config_.has_spatial()) {
    up1_ = make_cbr<T>(rng, c1, c0, 3, {2, 1, 1}, true);
    head_ = make_conv<T>(rng, c0, 1, 7, {1, 3}, true);
  } else {
    // Color-only decodes to half resolution and predicts the four packed planes.
    head_ = make_conv<T>(rng, c1, 4, 7, {1, 3}, true);
  }
  zero_output_head();
}

template <typename T>
void DeblurNet<T>::zero_output_head() {
  std::fill(head_.weight.data().begin(), head_.weight.data().end(), T(0));
  std::fill(head_.bias.data().begin(), head_.bias.data().end(), T(0));
}

template <typename T>
void DeblurNet<T>::set_training(bool on) {
  training_ = on;
  for (auto* layer : {&spatial_in_, &spatial_down1_, &spatial_down2_, &color_in_, &color_down1_, &color_down2_, &fuse_,
                      &up2_, &up1_})
    layer->bn.training = on;
  for (auto& r : res_) r.bn1.training = r.bn2.training = on;
}

template <typename T>
std::vector<NamedTensor<T>> DeblurNet<T>::state() {
  std::vector<NamedTensor<T>> out;
  if (config_.has_spatial()) {
    add_cbr(out, "spatial.in", spatial_in_);
    add_cbr(out, "spatial.down1", spatial_down1_);
    add_cbr(out, "spatial.down2", spatial_down2_);
  }
  if (config_.has_color()) {
    add_cbr(out, "color.in", color_in_);
    add_cbr(out, "color.down1", color_down1_);
    add_cbr(out, "color.down2", color_down2_);
  }
  if (config_.has_bca()) {
    add_conv(out, "bca1.space_gate", bca1_.space_gate);
    add_conv(out, "bca1.color_gate", bca1_.color_gate);
    add_conv(out, "bca2.space_gate", bca2_.space_gate);
    add_conv(out, "bca2.color_gate", bca2_.color_gate);
  }
  add_cbr(out, "fuse", fuse_);
  for (std::size_t i = 0; i < res_.size(); ++i) {
    const std::string p = "res" + std::to_string(i);
    add_conv(out, p + ".conv1", res_[i].conv1);
    add_bn(out, p + ".bn1", res_[i].bn1);
    add_conv(out, p + ".conv2", res_[i].conv2);
    add_bn(out, p + ".bn2", res_[i].bn2);
  }
  add_cbr(out, "up2", up2_);
  if (config_.has_spatial()) add_cbr(out, "up1", up1_);
  add_conv(out, "head", head_);
  return out;
}

template <typename T>
std::vector<Tensor<T>*> DeblurNet<T>::parameters() {
  std::vector<Tensor<T>*> out;
  for (auto& e : state())
    if (e.parameter) out.push_back(e.parameter);
  return out;
}

template <typename T>
std::size_t DeblurNet<T>::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->numel();
  return n;
}

template <typename T>
Tensor<T> DeblurNet<T>::forward(const Tensor<T>& mosaic, const raw::CfaPattern& cfa, Trace<T>* trace) {
  const Shape in = mosaic.shape();
  if (in.rank != 4 || in.c() != 1 || in.h() % 2 || in.w() % 2 || in.h() < 16 || in.w() < 16)
    throw ShapeError("forward: expected N x 1 x H x W with H, W even and >= 16, got " + in.str());
  const auto record = [trace](const std::string& name, const Tensor<T>& t) {
    if (trace) trace->shapes.emplace_back(name, t.shape());
  };

  // Both downsamplings must divide exactly for the decoder to invert them.
  const int pad_h = in.h() % 4, pad_w = in.w() % 4;
  const Tensor<T> x = pad_h || pad_w ? ad::reflect_pad(mosaic, pad_h, pad_w) : mosaic;

  Tensor<T> s, c;
  if (config_.has_spatial()) {
    record("spatial.input", x);
    s = spatial_in_(x);
    record("spatial.in", s);
    s = spatial_down1_(s);
    record("spatial.down1", s);
  }
  if (config_.has_color()) {
    c = ad::pack_planes(x, cfa);
    record("color.input", c);
    c = color_in_(c);
    record("color.in", c);
    c = color_down1_(c);
    record("color.down1", c);
  }
  const auto attend = [&](const Bca<T>& stage, const std::string& name) {
    auto o = bca(s, c, stage);
    record(name + ".space", o.space_attention);
    record(name + ".color", o.color_attention);
    if (trace) {
      trace->attention.emplace_back(name + "_space", o.space_attention);
      trace->attention.emplace_back(name + "_color", o.color_attention);
    }
    s = o.space;
    c = o.color;
  };
  if (config_.has_bca()) attend(bca1_, "bca1");
  if (config_.has_spatial()) {
    s = spatial_down2_(s);
    record("spatial.down2", s);
  }
  if (config_.has_color()) {
    c = color_down2_(c);
    record("color.down2", c);
  }
  if (config_.has_bca()) attend(bca2_, "bca2");

  Tensor<T> f = s.defined() && c.defined() ? ad::concat_channels(s, c) : (s.defined() ? s : c);
  f = fuse_(f);
  record("concat", f);
  for (auto& r : res_) f = resblock(f, r);
  record("resblocks", f);
  f = up2_(f);
  record("up2", f);

  Tensor<T> residual;
  if (config_.has_spatial()) {
    f = up1_(f);
    record("up1", f);
    residual = ad::tanh(head_(f));
    record("output", residual);
  } else {
    residual = ad::tanh(head_(f));
    record("output", residual);
    residual = ad::unpack_planes(residual, cfa);
  }
  if (pad_h || pad_w) residual = ad::crop(residual, in.h(), in.w());
  return ad::clamp(ad::add(mosaic, residual), T(0), T(1));
}

#define RAWDEBLUR_INSTANTIATE(T)                                                                      \
  template struct Conv<T>;                                                                            \
  template struct ConvBnRelu<T>;                                                                      \
  template struct Trace<T>;                                                                           \
  template class DeblurNet<T>;                                                                        \
  template BcaOutput<T> bca<T>(const Tensor<T>&, const Tensor<T>&, const Bca<T>&);                    \
  template Tensor<T> resblock<T>(const Tensor<T>&, ResBlock<T>&);
RAWDEBLUR_INSTANTIATE(float)
RAWDEBLUR_INSTANTIATE(double)
#undef RAWDEBLUR_INSTANTIATE

}  // namespace rawdeblur::model
