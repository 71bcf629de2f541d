#include "evodhm/autograd.hpp"

#include <cmath>
#include <unordered_set>

namespace evodhm::autograd {

Var constant(Tensor value) { return std::make_shared<Node>(std::move(value)); }

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>(std::move(value));
  n->requires_grad = true;
  return n;
}

namespace {

Var make_node(Tensor value, std::vector<Var> parents,
              std::function<void(const Node&)> backprop) {
  auto n = std::make_shared<Node>(std::move(value));
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

void accumulate(const Var& target, const Tensor& g) {
  if (!target->requires_grad && target->parents.empty() && !target->backprop) {
    // Constants without upstream dependencies still get gradients accumulated
    // when they sit under a differentiable node; skip the work.
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) target->grad.data[i] += g.data[i];
}

}  // namespace

void backward(const Var& root) {
  // Iterative topological order over the requires_grad subgraph.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.push_back({parent, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  std::fill(root->grad.data.begin(), root->grad.data.end(), 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n != root.get() && n->parents.empty()) continue;
    if (n->backprop) n->backprop(*n);
  }
}

void zero_grad(const std::vector<Var>& params) {
  for (const auto& p : params)
    std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
}

Var add(const Var& a, const Var& b) {
  EVODHM_REQUIRE(a->value.same_shape(b->value), "add shape mismatch");
  Tensor v = a->value;
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] += b->value.data[i];
  return make_node(std::move(v), {a, b}, [](const Node& n) {
    accumulate(n.parents[0], n.grad);
    accumulate(n.parents[1], n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  EVODHM_REQUIRE(a->value.same_shape(b->value), "sub shape mismatch");
  Tensor v = a->value;
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] -= b->value.data[i];
  return make_node(std::move(v), {a, b}, [](const Node& n) {
    accumulate(n.parents[0], n.grad);
    Tensor neg = n.grad;
    for (double& x : neg.data) x = -x;
    accumulate(n.parents[1], neg);
  });
}

Var scale(const Var& a, double k) {
  Tensor v = a->value;
  for (double& x : v.data) x *= k;
  return make_node(std::move(v), {a}, [k](const Node& n) {
    Tensor g = n.grad;
    for (double& x : g.data) x *= k;
    accumulate(n.parents[0], g);
  });
}

Var tanh_op(const Var& x) {
  Tensor y = tanh_forward(x->value);
  Tensor y_copy = y;
  return make_node(std::move(y), {x}, [y_copy](const Node& n) {
    accumulate(n.parents[0], tanh_backward(n.grad, y_copy));
  });
}

Var relu_op(const Var& x) {
  Tensor y = relu_forward(x->value);
  return make_node(std::move(y), {x}, [](const Node& n) {
    accumulate(n.parents[0], relu_backward(n.grad, n.parents[0]->value));
  });
}

Var maxpool2(const Var& x) {
  auto argmax = std::make_shared<std::vector<std::uint32_t>>();
  Tensor y = maxpool2_forward(x->value, argmax.get());
  return make_node(std::move(y), {x}, [argmax](const Node& n) {
    accumulate(n.parents[0], maxpool2_backward(n.grad, n.parents[0]->value, *argmax));
  });
}

Var conv2d(const Var& x, const ConvSpec& spec, const Var& w, const Var& b) {
  Tensor y = conv2d_forward(x->value, spec, w->value, b->value);
  return make_node(std::move(y), {x, w, b}, [spec](const Node& n) {
    ConvGrads g = conv2d_backward(n.grad, n.parents[0]->value, spec, n.parents[1]->value);
    accumulate(n.parents[0], g.input);
    accumulate(n.parents[1], g.weights);
    accumulate(n.parents[2], g.bias);
  });
}

Var fully_connected(const Var& x, const Var& w, const Var& b) {
  Tensor y = fully_connected_forward(x->value, w->value, b->value);
  return make_node(std::move(y), {x, w, b}, [](const Node& n) {
    FcGrads g = fully_connected_backward(n.grad, n.parents[0]->value, n.parents[1]->value);
    accumulate(n.parents[0], g.input);
    accumulate(n.parents[1], g.weights);
    accumulate(n.parents[2], g.bias);
  });
}

Var flatten(const Var& x) {
  Tensor v({x->value.size()}, x->value.data);
  return make_node(std::move(v), {x}, [](const Node& n) {
    Tensor g(n.parents[0]->value.shape, n.grad.data);
    accumulate(n.parents[0], g);
  });
}

Var reshape(const Var& x, std::vector<std::size_t> shape) {
  EVODHM_REQUIRE(Tensor::count(shape) == x->value.size(), "reshape element count mismatch");
  Tensor v(std::move(shape), x->value.data);
  return make_node(std::move(v), {x}, [](const Node& n) {
    Tensor g(n.parents[0]->value.shape, n.grad.data);
    accumulate(n.parents[0], g);
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Tensor& ta = a->value;
  const Tensor& tb = b->value;
  EVODHM_REQUIRE(ta.rank() == 3 && tb.rank() == 3 && ta.dim(0) == tb.dim(0) &&
                     ta.dim(1) == tb.dim(1),
                 "concat_channels resolution mismatch");
  const std::size_t h = ta.dim(0), w = ta.dim(1), ca = ta.dim(2), cb = tb.dim(2);
  Tensor v({h, w, ca + cb});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < ca; ++c) v.at(y, x, c) = ta.at(y, x, c);
      for (std::size_t c = 0; c < cb; ++c) v.at(y, x, ca + c) = tb.at(y, x, c);
    }
  return make_node(std::move(v), {a, b}, [h, w, ca, cb](const Node& n) {
    Tensor ga({h, w, ca}), gb({h, w, cb});
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t c = 0; c < ca; ++c) ga.at(y, x, c) = n.grad.at(y, x, c);
        for (std::size_t c = 0; c < cb; ++c) gb.at(y, x, c) = n.grad.at(y, x, ca + c);
      }
    accumulate(n.parents[0], ga);
    accumulate(n.parents[1], gb);
  });
}

Var sum_squared_error(const Var& pred, const Tensor& target) {
  EVODHM_REQUIRE(pred->value.same_shape(target), "loss target shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = pred->value.data[i] - target.data[i];
    acc += d * d;
  }
  Tensor tgt = target;
  return make_node(Tensor::scalar(acc), {pred}, [tgt](const Node& n) {
    const double g = n.grad.data[0];
    Tensor gp(n.parents[0]->value.shape);
    for (std::size_t i = 0; i < gp.size(); ++i)
      gp.data[i] = 2.0 * g * (n.parents[0]->value.data[i] - tgt.data[i]);
    accumulate(n.parents[0], gp);
  });
}

Var pose_project(const MorphableModel& model, const Var& flat_params) {
  const std::size_t kid = model.k_id(), kexp = model.k_exp();
  EVODHM_REQUIRE(flat_params->value.size() == model.param_dim(),
                 "flat param vector length mismatch");
  PoseShapeParams p = PoseShapeParams::from_flat(flat_params->value.data, kid, kexp);
  EVODHM_REQUIRE(p.scale_f > 0, "scale_f must be positive");
  const std::size_t L = model.landmark_count;

  auto shape = std::make_shared<Tensor>(synthesize_shape(model, p).coords);
  auto rot = std::make_shared<Tensor>(rotation_from_euler(p.euler));
  auto drot = std::make_shared<std::array<Tensor, 3>>(rotation_derivatives(p.euler));

  Tensor posed({3, L});
  for (std::size_t k = 0; k < L; ++k)
    for (std::size_t i = 0; i < 3; ++i) {
      double v = p.scale_f * (rot->at(i, 0) * shape->at(0, k) +
                              rot->at(i, 1) * shape->at(1, k) +
                              rot->at(i, 2) * shape->at(2, k));
      if (i < 2) v += p.translation_2d[i];
      posed.at(i, k) = v;
    }

  const MorphableModel* model_ptr = &model;  // models outlive their graphs
  return make_node(std::move(posed), {flat_params},
                   [model_ptr, shape, rot, drot, p, L, kid, kexp](const Node& n) {
    const Tensor& g = n.grad;  // 3 x L
    Tensor gp({6 + kid + kexp});

    // rotated (unscaled) shape, reused for df and dS
    Tensor rs({3, L});
    for (std::size_t k = 0; k < L; ++k)
      for (std::size_t i = 0; i < 3; ++i)
        rs.at(i, k) = rot->at(i, 0) * shape->at(0, k) + rot->at(i, 1) * shape->at(1, k) +
                      rot->at(i, 2) * shape->at(2, k);

    double df = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) df += g.data[i] * rs.data[i];
    gp.data[0] = df;

    for (std::size_t a = 0; a < 3; ++a) {
      const Tensor& dr = (*drot)[a];
      double acc = 0.0;
      for (std::size_t k = 0; k < L; ++k)
        for (std::size_t i = 0; i < 3; ++i)
          acc += g.at(i, k) * (dr.at(i, 0) * shape->at(0, k) + dr.at(i, 1) * shape->at(1, k) +
                               dr.at(i, 2) * shape->at(2, k));
      gp.data[1 + a] = p.scale_f * acc;
    }

    for (std::size_t k = 0; k < L; ++k) {
      gp.data[4] += g.at(0, k);
      gp.data[5] += g.at(1, k);
    }

    // dL/dS = f * R^T * G, flattened axis-major, then through both bases.
    Tensor ds({3, L});
    for (std::size_t k = 0; k < L; ++k)
      for (std::size_t i = 0; i < 3; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < 3; ++j) acc += rot->at(j, i) * g.at(j, k);
        ds.at(i, k) = p.scale_f * acc;
      }
    for (std::size_t r = 0; r < 3 * L; ++r) {
      const double d = ds.data[r];
      if (d == 0.0) continue;
      const double* id_row = &model_ptr->id_basis.data[r * kid];
      for (std::size_t c = 0; c < kid; ++c) gp.data[6 + c] += id_row[c] * d;
      const double* ex_row = &model_ptr->exp_basis.data[r * kexp];
      for (std::size_t c = 0; c < kexp; ++c) gp.data[6 + kid + c] += ex_row[c] * d;
    }
    accumulate(n.parents[0], gp);
  });
}

Var take_xy(const Var& posed3d) {
  const std::size_t L = posed3d->value.dim(1);
  Tensor v({2, L});
  for (std::size_t k = 0; k < L; ++k) {
    v.at(0, k) = posed3d->value.at(0, k);
    v.at(1, k) = posed3d->value.at(1, k);
  }
  return make_node(std::move(v), {posed3d}, [L](const Node& n) {
    Tensor g({3, L});
    for (std::size_t k = 0; k < L; ++k) {
      g.at(0, k) = n.grad.at(0, k);
      g.at(1, k) = n.grad.at(1, k);
    }
    accumulate(n.parents[0], g);
  });
}

Var normalize_axes(const Var& posed3d) {
  const Tensor& x = posed3d->value;
  EVODHM_REQUIRE(x.rank() == 2 && x.dim(0) == 3, "normalize_axes expects 3xL");
  const std::size_t L = x.dim(1);
  Tensor y({3, L});
  auto meta = std::make_shared<std::array<std::array<double, 2>, 3>>();   // {range, degenerate}
  auto extrema = std::make_shared<std::array<std::array<std::size_t, 2>, 3>>();
  for (std::size_t a = 0; a < 3; ++a) {
    std::size_t imin = 0, imax = 0;
    for (std::size_t k = 1; k < L; ++k) {
      if (x.at(a, k) < x.at(a, imin)) imin = k;
      if (x.at(a, k) > x.at(a, imax)) imax = k;
    }
    const double lo = x.at(a, imin), hi = x.at(a, imax);
    (*extrema)[a] = {imin, imax};
    if (hi == lo) {
      (*meta)[a] = {0.0, 1.0};
      for (std::size_t k = 0; k < L; ++k) y.at(a, k) = 0.5;
    } else {
      (*meta)[a] = {hi - lo, 0.0};
      for (std::size_t k = 0; k < L; ++k) y.at(a, k) = (x.at(a, k) - lo) / (hi - lo);
    }
  }
  Tensor y_copy = y;
  return make_node(std::move(y), {posed3d}, [meta, extrema, y_copy, L](const Node& n) {
    Tensor g({3, L});
    for (std::size_t a = 0; a < 3; ++a) {
      if ((*meta)[a][1] != 0.0) continue;  // degenerate axis: zero gradient
      const double inv_r = 1.0 / (*meta)[a][0];
      const auto [imin, imax] = (*extrema)[a];
      double gsum = 0.0, gysum = 0.0;
      for (std::size_t k = 0; k < L; ++k) {
        const double gk = n.grad.at(a, k);
        gsum += gk;
        gysum += gk * y_copy.at(a, k);
        g.at(a, k) += gk * inv_r;
      }
      g.at(a, imin) += (-gsum + gysum) * inv_r;
      g.at(a, imax) += -gysum * inv_r;
    }
    accumulate(n.parents[0], g);
  });
}

Var rasterize(const Var& shape2d, const Var& normalized_xyz, std::size_t height,
              std::size_t width, double sigma) {
  auto provenance = std::make_shared<RasterProvenance>();
  DiffusionHeatMap map = rasterize_heatmap(shape2d->value, normalized_xyz->value, height,
                                           width, sigma, provenance.get());
  const std::size_t L = shape2d->value.dim(1);
  return make_node(std::move(map.data), {shape2d, normalized_xyz},
                   [provenance, height, width, sigma, L](const Node& n) {
    const Tensor& locs = n.parents[0]->value;
    const Tensor& vals = n.parents[1]->value;
    Tensor gloc({2, L}), gval({3, L});
    const double inv_sigma2 = 1.0 / (sigma * sigma);
    for (std::size_t py = 0; py < height; ++py)
      for (std::size_t px = 0; px < width; ++px)
        for (std::size_t j = 0; j < 3; ++j) {
          const std::size_t idx = (py * width + px) * 3 + j;
          const std::int32_t k = provenance->winner[idx];
          if (k < 0) continue;
          const double go = n.grad.data[idx];
          if (go == 0.0) continue;
          const double lx = locs.at(0, static_cast<std::size_t>(k));
          const double ly = locs.at(1, static_cast<std::size_t>(k));
          const double dx = static_cast<double>(px) - lx;
          const double dy = static_cast<double>(py) - ly;
          const double gauss = std::exp(-(dx * dx + dy * dy) * 0.5 * inv_sigma2);
          const double val = vals.at(j, static_cast<std::size_t>(k));
          gval.at(j, static_cast<std::size_t>(k)) += go * gauss;
          gloc.at(0, static_cast<std::size_t>(k)) += go * val * gauss * dx * inv_sigma2;
          gloc.at(1, static_cast<std::size_t>(k)) += go * val * gauss * dy * inv_sigma2;
        }
    accumulate(n.parents[0], gloc);
    accumulate(n.parents[1], gval);
  });
}

}  // namespace evodhm::autograd
