#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "evodhm/autograd.hpp"
#include "evodhm/nn.hpp"

namespace evodhm {

/// Vanilla recurrent cell over flattened CNN features and the 3DMM parameter
/// vector:
///   h_{t+1} = tanh(W_ih f + W_hh h_t)
///   p_{t+1} = p_t + W_ho h_t        (printed form; opt-in variant uses h_{t+1})
struct VanillaRnnCell {
  autograd::Var w_ih;  // hidden x feature
  autograd::Var w_hh;  // hidden x hidden
  autograd::Var w_ho;  // output x hidden
  std::size_t hidden_dim = 0;

  static VanillaRnnCell create(std::size_t feature_dim, std::size_t hidden_dim,
                               std::size_t output_dim, std::uint64_t seed);
  std::vector<autograd::Var> params() const { return {w_ih, w_hh, w_ho}; }
  std::size_t feature_dim() const { return w_ih->value.dim(1); }
  std::size_t output_dim() const { return w_ho->value.dim(0); }
};

struct VanillaStepResult {
  autograd::Var hidden;  // h_{t+1}
  autograd::Var params;  // p_{t+1}
};
VanillaStepResult vanilla_step(const VanillaRnnCell& cell, const autograd::Var& features,
                               const autograd::Var& h_t, const autograd::Var& p_t,
                               bool increment_uses_new_hidden = false);

/// Factorized recurrent cell over feature maps (residual update):
///   F_{t+1} = F_t + tanh(D_i (*) F_t + D_h (*) (W_hh (*) h_t))
/// with the activation reused as h_{t+1}; h_0 = pointwise(F_cnn).
struct FastRecurrentCell {
  autograd::Var d_in;          // depthwise kernel stack, input branch
  autograd::Var d_hidden;      // depthwise kernel stack, hidden branch
  autograd::Var w_hh_pw;       // 1x1 hidden mixing
  autograd::Var init_pw;       // 1x1 producing h_0
  autograd::Var zero_bias;     // shared zero bias, not trained
  std::size_t channels = 0;
  std::size_t kernel = 3;

  static FastRecurrentCell create(std::size_t channels, std::size_t kernel,
                                  std::uint64_t seed);
  std::vector<autograd::Var> params() const { return {d_in, d_hidden, w_hh_pw, init_pw}; }
  ConvSpec depthwise_spec() const {
    return ConvSpec::same(ConvMode::depthwise, kernel, channels, channels);
  }
  ConvSpec pointwise_spec() const {
    return ConvSpec::same(ConvMode::pointwise, 1, channels, channels);
  }
  /// Trainable parameter count: two depthwise stacks plus one pointwise.
  long long parameter_count() const;
};

struct FastState {
  autograd::Var features;  // F_t
  autograd::Var hidden;    // h_t
};

FastState fast_recurrent_init(const FastRecurrentCell& cell, const autograd::Var& cnn_features);
FastState fast_recurrent_step(const FastRecurrentCell& cell, const FastState& state);

/// All intermediate states after the initial one: [state_1, ..., state_T].
std::vector<FastState> unroll(const FastRecurrentCell& cell, const FastState& initial,
                              std::size_t steps);

}  // namespace evodhm
