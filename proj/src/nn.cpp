#include "evodhm/nn.hpp"

#include <cmath>
#include <random>

namespace evodhm {

const char* to_string(ConvMode mode) {
  switch (mode) {
    case ConvMode::standard: return "standard";
    case ConvMode::depthwise: return "depthwise";
    case ConvMode::pointwise: return "pointwise";
  }
  return "?";
}

ConvSpec ConvSpec::same(ConvMode mode, std::size_t kernel, std::size_t in_ch,
                        std::size_t out_ch, std::size_t stride) {
  ConvSpec s;
  s.mode = mode;
  s.kernel = mode == ConvMode::pointwise ? 1 : kernel;
  s.in_channels = in_ch;
  s.out_channels = out_ch;
  s.stride = stride;
  s.padding = (s.kernel - 1) / 2;
  s.validate();
  return s;
}

void ConvSpec::validate() const {
  EVODHM_REQUIRE(kernel >= 1 && stride >= 1, "kernel and stride must be >= 1");
  if (mode == ConvMode::depthwise)
    EVODHM_REQUIRE(out_channels == in_channels, "depthwise requires C_out == C_in");
  if (mode == ConvMode::pointwise)
    EVODHM_REQUIRE(kernel == 1, "pointwise requires 1x1 kernel");
}

std::vector<std::size_t> ConvSpec::weight_shape() const {
  if (mode == ConvMode::depthwise) return {kernel, kernel, in_channels};
  return {kernel, kernel, in_channels, out_channels};
}

Tensor conv2d_forward(const Tensor& input, const ConvSpec& spec, const Tensor& weights,
                      const Tensor& bias) {
  spec.validate();
  EVODHM_REQUIRE(input.rank() == 3 && input.dim(2) == spec.in_channels,
                 "conv input channel mismatch");
  EVODHM_REQUIRE(weights.shape == spec.weight_shape(), "conv weight shape mismatch");
  EVODHM_REQUIRE(bias.size() == spec.out_channels, "conv bias size mismatch");
  const std::size_t H = input.dim(0), W = input.dim(1);
  const std::size_t Ho = spec.out_size(H), Wo = spec.out_size(W);
  const std::size_t Ci = spec.in_channels, Co = spec.out_channels, K = spec.kernel;
  const long pad = static_cast<long>(spec.padding);
  const bool depthwise = spec.mode == ConvMode::depthwise;

  Tensor out({Ho, Wo, Co});
  // Production kernel: iterate kernel taps in the outer loops so the inner
  // loop over output pixels is a contiguous fused multiply-add sweep.
  for (std::size_t ky = 0; ky < K; ++ky) {
    for (std::size_t kx = 0; kx < K; ++kx) {
      for (std::size_t oy = 0; oy < Ho; ++oy) {
        const long iy = static_cast<long>(oy * spec.stride + ky) - pad;
        if (iy < 0 || iy >= static_cast<long>(H)) continue;
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          const long ix = static_cast<long>(ox * spec.stride + kx) - pad;
          if (ix < 0 || ix >= static_cast<long>(W)) continue;
          const double* in_px = &input.data[(static_cast<std::size_t>(iy) * W +
                                             static_cast<std::size_t>(ix)) * Ci];
          double* out_px = &out.data[(oy * Wo + ox) * Co];
          if (depthwise) {
            const double* w = &weights.data[(ky * K + kx) * Ci];
            for (std::size_t c = 0; c < Ci; ++c) out_px[c] += w[c] * in_px[c];
          } else {
            const double* w = &weights.data[((ky * K + kx) * Ci) * Co];
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              const double xv = in_px[ci];
              const double* wc = w + ci * Co;
              for (std::size_t co = 0; co < Co; ++co) out_px[co] += xv * wc[co];
            }
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bias.data[i % Co];
  return out;
}

ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& input, const ConvSpec& spec,
                          const Tensor& weights) {
  spec.validate();
  const std::size_t H = input.dim(0), W = input.dim(1);
  const std::size_t Ho = spec.out_size(H), Wo = spec.out_size(W);
  EVODHM_REQUIRE(grad_out.rank() == 3 && grad_out.dim(0) == Ho && grad_out.dim(1) == Wo &&
                     grad_out.dim(2) == spec.out_channels,
                 "grad_out shape mismatch");
  const std::size_t Ci = spec.in_channels, Co = spec.out_channels, K = spec.kernel;
  const long pad = static_cast<long>(spec.padding);
  const bool depthwise = spec.mode == ConvMode::depthwise;

  ConvGrads g{Tensor(input.shape), Tensor(weights.shape), Tensor({Co})};
  for (std::size_t i = 0; i < grad_out.size(); ++i) g.bias.data[i % Co] += grad_out.data[i];

  for (std::size_t ky = 0; ky < K; ++ky) {
    for (std::size_t kx = 0; kx < K; ++kx) {
      for (std::size_t oy = 0; oy < Ho; ++oy) {
        const long iy = static_cast<long>(oy * spec.stride + ky) - pad;
        if (iy < 0 || iy >= static_cast<long>(H)) continue;
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          const long ix = static_cast<long>(ox * spec.stride + kx) - pad;
          if (ix < 0 || ix >= static_cast<long>(W)) continue;
          const std::size_t in_off = (static_cast<std::size_t>(iy) * W +
                                      static_cast<std::size_t>(ix)) * Ci;
          const double* go_px = &grad_out.data[(oy * Wo + ox) * Co];
          if (depthwise) {
            const double* w = &weights.data[(ky * K + kx) * Ci];
            double* gw = &g.weights.data[(ky * K + kx) * Ci];
            for (std::size_t c = 0; c < Ci; ++c) {
              g.input.data[in_off + c] += w[c] * go_px[c];
              gw[c] += input.data[in_off + c] * go_px[c];
            }
          } else {
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              const double xv = input.data[in_off + ci];
              const double* w = &weights.data[((ky * K + kx) * Ci + ci) * Co];
              double* gw = &g.weights.data[((ky * K + kx) * Ci + ci) * Co];
              double acc = 0.0;
              for (std::size_t co = 0; co < Co; ++co) {
                acc += w[co] * go_px[co];
                gw[co] += xv * go_px[co];
              }
              g.input.data[in_off + ci] += acc;
            }
          }
        }
      }
    }
  }
  return g;
}

Tensor tanh_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data) v = std::tanh(v);
  return y;
}

Tensor tanh_backward(const Tensor& grad_out, const Tensor& y) {
  EVODHM_REQUIRE(grad_out.same_shape(y), "tanh_backward shape mismatch");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= 1.0 - y.data[i] * y.data[i];
  return g;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& x) {
  EVODHM_REQUIRE(grad_out.same_shape(x), "relu_backward shape mismatch");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (x.data[i] <= 0.0) g.data[i] = 0.0;
  return g;
}

Tensor maxpool2_forward(const Tensor& x, std::vector<std::uint32_t>* argmax) {
  EVODHM_REQUIRE(x.rank() == 3, "maxpool expects HxWxC");
  const std::size_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  const std::size_t Ho = H / 2, Wo = W / 2;
  EVODHM_REQUIRE(Ho >= 1 && Wo >= 1, "maxpool input too small");
  Tensor y({Ho, Wo, C});
  if (argmax) argmax->assign(y.size(), 0);
  for (std::size_t oy = 0; oy < Ho; ++oy)
    for (std::size_t ox = 0; ox < Wo; ++ox)
      for (std::size_t c = 0; c < C; ++c) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = 0;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ((oy * 2 + dy) * W + ox * 2 + dx) * C + c;
            if (x.data[idx] > best) {
              best = x.data[idx];
              best_idx = idx;
            }
          }
        y.at(oy, ox, c) = best;
        if (argmax) (*argmax)[(oy * Wo + ox) * C + c] = static_cast<std::uint32_t>(best_idx);
      }
  return y;
}

Tensor maxpool2_backward(const Tensor& grad_out, const Tensor& x,
                         const std::vector<std::uint32_t>& argmax) {
  EVODHM_REQUIRE(argmax.size() == grad_out.size(), "maxpool argmax size mismatch");
  Tensor g(x.shape);
  for (std::size_t i = 0; i < grad_out.size(); ++i) g.data[argmax[i]] += grad_out.data[i];
  return g;
}

Tensor fully_connected_forward(const Tensor& x, const Tensor& weights, const Tensor& bias) {
  const std::size_t out = weights.dim(0), in = weights.dim(1);
  EVODHM_REQUIRE(x.size() == in, "fc input size mismatch");
  EVODHM_REQUIRE(bias.size() == out, "fc bias size mismatch");
  Tensor y({out});
  for (std::size_t r = 0; r < out; ++r) {
    double acc = bias.data[r];
    const double* w = &weights.data[r * in];
    for (std::size_t c = 0; c < in; ++c) acc += w[c] * x.data[c];
    y.data[r] = acc;
  }
  return y;
}

FcGrads fully_connected_backward(const Tensor& grad_out, const Tensor& x,
                                 const Tensor& weights) {
  const std::size_t out = weights.dim(0), in = weights.dim(1);
  EVODHM_REQUIRE(grad_out.size() == out, "fc grad_out size mismatch");
  FcGrads g{Tensor(x.shape), Tensor(weights.shape), grad_out};
  for (std::size_t r = 0; r < out; ++r) {
    const double go = grad_out.data[r];
    const double* w = &weights.data[r * in];
    double* gw = &g.weights.data[r * in];
    for (std::size_t c = 0; c < in; ++c) {
      g.input.data[c] += w[c] * go;
      gw[c] += x.data[c] * go;
    }
  }
  return g;
}

void adam_step(Tensor& params, const Tensor& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
  EVODHM_REQUIRE(params.same_shape(grads), "adam param/grad shape mismatch");
  if (state.step == 0) {
    state.m = Tensor(params.shape);
    state.v = Tensor(params.shape);
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double gr = grads.data[i];
    state.m.data[i] = beta1 * state.m.data[i] + (1.0 - beta1) * gr;
    state.v.data[i] = beta2 * state.v.data[i] + (1.0 - beta2) * gr * gr;
    const double mhat = state.m.data[i] / bc1;
    const double vhat = state.v.data[i] / bc2;
    params.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
  check_finite(params, "adam_step");
}

CostReport cost_of(const ConvSpec& spec, std::size_t feature_size) {
  spec.validate();
  // The analytic formulas assume output size == feature_size (stride 1, same
  // padding); strided layers substitute their output size.
  const long long sf = static_cast<long long>(spec.out_size(feature_size));
  const long long sk = static_cast<long long>(spec.kernel);
  const long long ci = static_cast<long long>(spec.in_channels);
  const long long co = static_cast<long long>(spec.out_channels);
  CostReport r;
  switch (spec.mode) {
    case ConvMode::depthwise:
      r.mult_adds = sf * sf * sk * sk * co;
      r.parameters = sk * sk * co;
      break;
    case ConvMode::pointwise:
      r.mult_adds = sf * sf * ci * co;
      r.parameters = ci * co;
      break;
    case ConvMode::standard:
      r.mult_adds = sf * sf * sk * sk * ci * co;
      r.parameters = sk * sk * ci * co;
      break;
  }
  return r;
}

double separable_reduction_ratio(const ConvSpec& spec) {
  EVODHM_REQUIRE(spec.mode == ConvMode::standard, "ratio defined for standard specs");
  const double sk2 = static_cast<double>(spec.kernel * spec.kernel);
  return 1.0 / static_cast<double>(spec.out_channels) + 1.0 / sk2;
}

Tensor he_uniform(const std::vector<std::size_t>& shape, std::size_t fan_in,
                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(shape);
  for (double& v : t.data) v = dist(rng);
  return t;
}

}  // namespace evodhm
