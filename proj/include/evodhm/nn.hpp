#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evodhm/tensor.hpp"

namespace evodhm {

enum class ConvMode { standard, depthwise, pointwise };

const char* to_string(ConvMode mode);

/// Convolution layer geometry. Weight layouts (row-major, channels-last):
///   standard / pointwise: [S_k, S_k, C_in, C_out]
///   depthwise:            [S_k, S_k, C]   (C_out == C_in)
/// Convolution is cross-correlation (no kernel flip), zero padding.
struct ConvSpec {
  std::size_t kernel = 3;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t stride = 1;
  std::size_t padding = 1;  // "same" for stride 1 when padding == (kernel-1)/2
  ConvMode mode = ConvMode::standard;

  static ConvSpec same(ConvMode mode, std::size_t kernel, std::size_t in_ch,
                       std::size_t out_ch, std::size_t stride = 1);

  void validate() const;
  std::size_t out_size(std::size_t in) const {
    EVODHM_REQUIRE(in + 2 * padding >= kernel, "input smaller than kernel");
    return (in + 2 * padding - kernel) / stride + 1;
  }
  std::vector<std::size_t> weight_shape() const;
  std::size_t weight_count() const { return Tensor::count(weight_shape()); }
};

Tensor conv2d_forward(const Tensor& input, const ConvSpec& spec, const Tensor& weights,
                      const Tensor& bias);

struct ConvGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};
ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& input, const ConvSpec& spec,
                          const Tensor& weights);

Tensor tanh_forward(const Tensor& x);
Tensor tanh_backward(const Tensor& grad_out, const Tensor& y);  // y = tanh(x)
Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& grad_out, const Tensor& x);

/// 2x2 max pooling with stride 2; odd trailing rows/cols are dropped.
Tensor maxpool2_forward(const Tensor& x, std::vector<std::uint32_t>* argmax = nullptr);
Tensor maxpool2_backward(const Tensor& grad_out, const Tensor& x,
                         const std::vector<std::uint32_t>& argmax);

/// y = W x + b with W of shape [out, in].
Tensor fully_connected_forward(const Tensor& x, const Tensor& weights, const Tensor& bias);
struct FcGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};
FcGrads fully_connected_backward(const Tensor& grad_out, const Tensor& x,
                                 const Tensor& weights);

struct AdamState {
  Tensor m;
  Tensor v;
  long step = 0;
};
void adam_step(Tensor& params, const Tensor& grads, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

/// Analytic mult-add / parameter counts per layer, bias excluded from the
/// parameter figure. feature_size is the input spatial size; strided layers
/// substitute their output size in the spatial product.
struct CostReport {
  long long mult_adds = 0;
  long long parameters = 0;

  CostReport& operator+=(const CostReport& o) {
    mult_adds += o.mult_adds;
    parameters += o.parameters;
    return *this;
  }
};
CostReport cost_of(const ConvSpec& spec, std::size_t feature_size);

/// (depthwise + pointwise) / standard mult-add ratio = 1/C_out + 1/S_k^2.
double separable_reduction_ratio(const ConvSpec& spec);

/// He-style fan-in uniform init, deterministic for a fixed generator state.
Tensor he_uniform(const std::vector<std::size_t>& shape, std::size_t fan_in,
                  std::uint64_t seed);

}  // namespace evodhm
