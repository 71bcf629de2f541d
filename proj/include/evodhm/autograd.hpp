#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "evodhm/heatmap.hpp"
#include "evodhm/morphable.hpp"
#include "evodhm/nn.hpp"
#include "evodhm/tensor.hpp"

namespace evodhm::autograd {

/// Reverse-mode tape node. Graphs are built per forward pass; parameter nodes
/// are long-lived and shared, so batch gradients accumulate naturally.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> backprop;  // scatter this->grad to parents

  explicit Node(Tensor v) : value(std::move(v)), grad(value.shape) {}
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor value);
Var parameter(Tensor value);

/// Seeds root.grad with ones and runs reverse topological accumulation.
void backward(const Var& root);
void zero_grad(const std::vector<Var>& params);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, double k);
Var tanh_op(const Var& x);
Var relu_op(const Var& x);
Var maxpool2(const Var& x);
Var conv2d(const Var& x, const ConvSpec& spec, const Var& w, const Var& b);
Var fully_connected(const Var& x, const Var& w, const Var& b);
Var flatten(const Var& x);
Var reshape(const Var& x, std::vector<std::size_t> shape);
Var concat_channels(const Var& a, const Var& b);

/// Sum of squared differences against a fixed target (Frobenius norm squared).
Var sum_squared_error(const Var& pred, const Tensor& target);

/// Posed 3D shape f*R*S(p)+t as a function of the flat parameter vector p
/// (length 6 + K_id + K_exp). Analytic backward through scale, rotation,
/// translation and both bases.
Var pose_project(const MorphableModel& model, const Var& flat_params);

/// First two rows of a 3xL tensor.
Var take_xy(const Var& posed3d);

/// Per-axis (v - min)/(max - min) over rows of a 3xL tensor; degenerate axes
/// become constant 0.5 with zero gradient. Subgradients route min/max terms
/// to the arg-extremum entries.
Var normalize_axes(const Var& posed3d);

/// Differentiable Gaussian splat rasterization. Gradient flows to the
/// normalized values (via the winning landmark per pixel) and to the
/// sub-pixel landmark locations through the Gaussian.
Var rasterize(const Var& shape2d, const Var& normalized_xyz, std::size_t height,
              std::size_t width, double sigma);

}  // namespace evodhm::autograd
