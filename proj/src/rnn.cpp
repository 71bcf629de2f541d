#include "evodhm/rnn.hpp"

namespace evodhm {

using autograd::Var;

VanillaRnnCell VanillaRnnCell::create(std::size_t feature_dim, std::size_t hidden_dim,
                                      std::size_t output_dim, std::uint64_t seed) {
  VanillaRnnCell cell;
  cell.hidden_dim = hidden_dim;
  cell.w_ih = autograd::parameter(he_uniform({hidden_dim, feature_dim}, feature_dim, seed));
  cell.w_hh = autograd::parameter(he_uniform({hidden_dim, hidden_dim}, hidden_dim, seed + 1));
  // Output weights start small: early parameter increments should be gentle.
  Tensor who = he_uniform({output_dim, hidden_dim}, hidden_dim, seed + 2);
  for (double& v : who.data) v *= 0.01;
  cell.w_ho = autograd::parameter(std::move(who));
  return cell;
}

VanillaStepResult vanilla_step(const VanillaRnnCell& cell, const Var& features,
                               const Var& h_t, const Var& p_t,
                               bool increment_uses_new_hidden) {
  EVODHM_REQUIRE(features->value.size() == cell.feature_dim(), "feature dim mismatch");
  EVODHM_REQUIRE(h_t->value.size() == cell.hidden_dim, "hidden dim mismatch");
  EVODHM_REQUIRE(p_t->value.size() == cell.output_dim(), "param dim mismatch");
  static thread_local Var zero_h, zero_o;
  if (!zero_h || zero_h->value.size() != cell.hidden_dim)
    zero_h = autograd::constant(Tensor({cell.hidden_dim}));
  if (!zero_o || zero_o->value.size() != cell.output_dim())
    zero_o = autograd::constant(Tensor({cell.output_dim()}));

  Var pre = autograd::add(autograd::fully_connected(features, cell.w_ih, zero_h),
                          autograd::fully_connected(h_t, cell.w_hh, zero_h));
  Var h_next = autograd::tanh_op(pre);
  const Var& h_for_update = increment_uses_new_hidden ? h_next : h_t;
  Var p_next = autograd::add(p_t, autograd::fully_connected(h_for_update, cell.w_ho, zero_o));
  return {h_next, p_next};
}

FastRecurrentCell FastRecurrentCell::create(std::size_t channels, std::size_t kernel,
                                            std::uint64_t seed) {
  FastRecurrentCell cell;
  cell.channels = channels;
  cell.kernel = kernel;
  const std::size_t dw_fan = kernel * kernel;
  cell.d_in = autograd::parameter(he_uniform({kernel, kernel, channels}, dw_fan, seed));
  cell.d_hidden = autograd::parameter(he_uniform({kernel, kernel, channels}, dw_fan, seed + 1));
  cell.w_hh_pw = autograd::parameter(he_uniform({1, 1, channels, channels}, channels, seed + 2));
  cell.init_pw = autograd::parameter(he_uniform({1, 1, channels, channels}, channels, seed + 3));
  cell.zero_bias = autograd::constant(Tensor({channels}));
  return cell;
}

long long FastRecurrentCell::parameter_count() const {
  const auto dw = cost_of(depthwise_spec(), 1).parameters;
  const auto pw = cost_of(pointwise_spec(), 1).parameters;
  return 2 * dw + pw;  // init_pw belongs to the CNN/stem side of the graph
}

FastState fast_recurrent_init(const FastRecurrentCell& cell, const Var& cnn_features) {
  EVODHM_REQUIRE(cnn_features->value.dim(2) == cell.channels, "channel mismatch");
  Var h0 = autograd::conv2d(cnn_features, cell.pointwise_spec(), cell.init_pw, cell.zero_bias);
  return {cnn_features, h0};
}

FastState fast_recurrent_step(const FastRecurrentCell& cell, const FastState& state) {
  EVODHM_REQUIRE(state.features->value.same_shape(state.hidden->value),
                 "F_t / h_t shape mismatch");
  // Hidden branch is pointwise-then-depthwise; input branch a single depthwise.
  Var hid_mixed = autograd::conv2d(state.hidden, cell.pointwise_spec(), cell.w_hh_pw,
                                   cell.zero_bias);
  Var hid = autograd::conv2d(hid_mixed, cell.depthwise_spec(), cell.d_hidden, cell.zero_bias);
  Var inp = autograd::conv2d(state.features, cell.depthwise_spec(), cell.d_in, cell.zero_bias);
  Var delta = autograd::tanh_op(autograd::add(inp, hid));
  Var f_next = autograd::add(state.features, delta);
  return {f_next, delta};  // the activation doubles as h_{t+1}
}

std::vector<FastState> unroll(const FastRecurrentCell& cell, const FastState& initial,
                              std::size_t steps) {
  EVODHM_REQUIRE(steps >= 1, "unroll needs at least one step");
  std::vector<FastState> states;
  states.reserve(steps);
  FastState cur = initial;
  for (std::size_t t = 0; t < steps; ++t) {
    cur = fast_recurrent_step(cell, cur);
    states.push_back(cur);
  }
  return states;
}

}  // namespace evodhm
