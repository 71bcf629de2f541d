// Test-only reference implementations, kept independent of the production
// kernels: naive zero-padded convolution with an instrumented multiply-add
// counter, scalar-loop linear algebra, and a central-difference gradient
// checker over autograd graphs.
#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>

#include "evodhm/autograd.hpp"
#include "evodhm/nn.hpp"

namespace evodhm::testing {

// Six-nested-loop reference convolution over an explicitly zero-padded copy
// of the input. Every window position performs its full complement of
// multiply-adds, matching the analytic cost formulas.
inline Tensor naive_conv2d(const Tensor& input, const ConvSpec& spec, const Tensor& weights,
                           const Tensor& bias, long long* mac_counter = nullptr) {
  const std::size_t H = input.dim(0), W = input.dim(1);
  const std::size_t Ci = spec.in_channels, Co = spec.out_channels, K = spec.kernel;
  const std::size_t P = spec.padding;
  const std::size_t Hp = H + 2 * P, Wp = W + 2 * P;
  Tensor padded({Hp, Wp, Ci});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < Ci; ++c) padded.at(y + P, x + P, c) = input.at(y, x, c);

  const std::size_t Ho = spec.out_size(H), Wo = spec.out_size(W);
  Tensor out({Ho, Wo, Co});
  for (std::size_t oy = 0; oy < Ho; ++oy)
    for (std::size_t ox = 0; ox < Wo; ++ox)
      for (std::size_t co = 0; co < Co; ++co) {
        double acc = bias.data[co];
        for (std::size_t ky = 0; ky < K; ++ky)
          for (std::size_t kx = 0; kx < K; ++kx) {
            if (spec.mode == ConvMode::depthwise) {
              acc += weights.data[(ky * K + kx) * Ci + co] *
                     padded.at(oy * spec.stride + ky, ox * spec.stride + kx, co);
              if (mac_counter) ++*mac_counter;
            } else {
              for (std::size_t ci = 0; ci < Ci; ++ci) {
                acc += weights.data[((ky * K + kx) * Ci + ci) * Co + co] *
                       padded.at(oy * spec.stride + ky, ox * spec.stride + kx, ci);
                if (mac_counter) ++*mac_counter;
              }
            }
          }
        out.at(oy, ox, co) = acc;
      }
  return out;
}

inline Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data) v = dist(rng);
  return t;
}

// Scalar-loop matrix-vector product oracle.
inline Tensor naive_matvec(const Tensor& w, const Tensor& x, const Tensor& b) {
  Tensor y({w.dim(0)});
  for (std::size_t r = 0; r < w.dim(0); ++r) {
    double acc = b.data[r];
    for (std::size_t c = 0; c < w.dim(1); ++c) acc += w.at(r, c) * x.data[c];
    y.data[r] = acc;
  }
  return y;
}

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// Central-difference check of the analytic gradients of `build_loss` with
// respect to every entry of `params` (or a random subset per parameter when
// max_entries_per_param > 0).
inline GradCheck grad_check(const std::function<autograd::Var()>& build_loss,
                            const std::vector<autograd::Var>& params,
                            double step = 1e-5, std::size_t max_entries_per_param = 0,
                            std::uint64_t seed = 0) {
  autograd::zero_grad(params);
  autograd::Var loss = build_loss();
  autograd::backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p->grad);

  std::mt19937_64 rng(seed);
  GradCheck result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& value = params[pi]->value;
    std::vector<std::size_t> indices(value.size());
    std::iota(indices.begin(), indices.end(), 0);
    if (max_entries_per_param > 0 && indices.size() > max_entries_per_param) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(max_entries_per_param);
    }
    for (std::size_t idx : indices) {
      const double saved = value.data[idx];
      value.data[idx] = saved + step;
      const double plus = build_loss()->value.data[0];
      value.data[idx] = saved - step;
      const double minus = build_loss()->value.data[0];
      value.data[idx] = saved;
      const double fd = (plus - minus) / (2.0 * step);
      const double an = analytic[pi].data[idx];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-4});
      result.max_rel_err = std::max(result.max_rel_err, std::abs(fd - an) / denom);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace evodhm::testing
