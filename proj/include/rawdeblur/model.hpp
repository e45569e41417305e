#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rawdeblur/autodiff.hpp"
#include "rawdeblur/raw_core.hpp"

namespace rawdeblur::model {

enum class Variant : std::uint8_t { SpatialOnly = 0, ColorOnly = 1, TwoBranch = 2, TwoBranchBca = 3 };

std::string to_string(Variant variant);
/// "spatial_only", "color_only", "two_branch" or "two_branch_bca".
Variant parse_variant(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::TwoBranchBca;
  int base_channels = 64;
  int n_resblocks = 9;
  int multiplier = 1;

  /// Throws ConfigError for non-positive sizes or a multiplier outside {1, 2}.
  void validate() const;
  /// Feature width after encoder stage `level` (0: input conv, 1: first downsampling, 2: second).
  int channels(int level) const { return base_channels * multiplier << level; }
  bool has_spatial() const { return variant != Variant::ColorOnly; }
  bool has_color() const { return variant != Variant::SpatialOnly; }
  bool has_bca() const { return variant == Variant::TwoBranchBca; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct Conv {
  ad::Tensor<T> weight;
  ad::Tensor<T> bias;  ///< undefined for convs followed by batch norm
  ad::ConvOptions opt;
  bool transposed = false;

  ad::Tensor<T> operator()(const ad::Tensor<T>& x) const;
};

template <typename T>
struct ConvBnRelu {
  Conv<T> conv;
  ad::BatchNormState<T> bn{1};

  ad::Tensor<T> operator()(const ad::Tensor<T>& x);
};

template <typename T>
struct ResBlock {
  Conv<T> conv1;
  ad::BatchNormState<T> bn1{1};
  Conv<T> conv2;
  ad::BatchNormState<T> bn2{1};
};

/// One cross-attention stage: each gate is a 1x1 conv fed by the other branch.
template <typename T>
struct Bca {
  Conv<T> space_gate;  ///< reads the color features, gates the spatial ones
  Conv<T> color_gate;  ///< reads the spatial features, gates the color ones
};

template <typename T>
struct BcaOutput {
  ad::Tensor<T> space;
  ad::Tensor<T> color;
  ad::Tensor<T> space_attention;  ///< in (0, 1)
  ad::Tensor<T> color_attention;  ///< in (0, 1)
};

/// space * sigmoid(space_gate(color)), color * sigmoid(color_gate(space)).
template <typename T>
BcaOutput<T> bca(const ad::Tensor<T>& m_space, const ad::Tensor<T>& m_color, const Bca<T>& params);

/// x + bn2(conv2(relu(bn1(conv1(x))))), no activation after the sum.
template <typename T>
ad::Tensor<T> resblock(const ad::Tensor<T>& x, ResBlock<T>& params);

template <typename T>
struct Trace {
  /// Output shape of every layer, keyed by layer name ("spatial.down1", "bca2.color", ...).
  std::vector<std::pair<std::string, ad::Shape>> shapes;
  /// Attention maps keyed "bca1_space", "bca1_color", "bca2_space", "bca2_color".
  std::vector<std::pair<std::string, ad::Tensor<T>>> attention;

  const ad::Shape* find(const std::string& layer) const;
};

/// A parameter or batch-norm buffer under its canonical name.
template <typename T>
struct NamedTensor {
  std::string name;
  std::vector<int> dims;
  std::span<T> values;
  ad::Tensor<T>* parameter = nullptr;  ///< null for running statistics
};

/// Two-branch encoder, optional cross attention, residual trunk, decoder and
/// global skip. Inputs are N x 1 x H x W mosaics in [0, 1] with H, W even and
/// at least 16; other extents are reflect-padded to a multiple of 4 internally
/// and cropped back.
template <typename T>
class DeblurNet {
 public:
  /// Kaiming-uniform convs, unit/zero batch norm, zero output head.
  explicit DeblurNet(const ModelConfig& config, std::uint64_t seed = 0);

  const ModelConfig& config() const { return config_; }

  ad::Tensor<T> forward(const ad::Tensor<T>& mosaic, const raw::CfaPattern& cfa = raw::CfaPattern::rggb(),
                        Trace<T>* trace = nullptr);

  /// Switches every batch norm between batch statistics and running estimates.
  void set_training(bool on);
  bool training() const { return training_; }

  /// Trainable tensors in canonical order.
  std::vector<ad::Tensor<T>*> parameters();
  /// Parameters and running statistics in canonical order.
  std::vector<NamedTensor<T>> state();
  std::size_t parameter_count();

  /// Re-zeroes the output head, restoring forward(x) == x.
  void zero_output_head();
  Conv<T>& output_head() { return head_; }

 private:
  ModelConfig config_;
  bool training_ = true;
  ConvBnRelu<T> spatial_in_, spatial_down1_, spatial_down2_;
  ConvBnRelu<T> color_in_, color_down1_, color_down2_;
  Bca<T> bca1_, bca2_;
  ConvBnRelu<T> fuse_;
  std::vector<ResBlock<T>> res_;
  ConvBnRelu<T> up2_, up1_;
  Conv<T> head_;
};

}  // namespace rawdeblur::model
