#include "evodhm/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "evodhm/evaluation.hpp"

namespace evodhm {

using autograd::Var;
namespace ag = autograd;

Variant variant_from_string(const std::string& s) {
  if (s == "fast" || s == "fast_dhm") return Variant::fast_dhm;
  if (s == "classic" || s == "classic_dhm") return Variant::classic_dhm;
  throw ContractViolation("unknown variant: " + s);
}

const char* to_string(Variant v) {
  return v == Variant::fast_dhm ? "fast_dhm" : "classic_dhm";
}

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

Var conv_relu_chain(const std::vector<ConvLayer>& layers, Var x) {
  for (const auto& layer : layers) {
    x = ag::conv2d(x, layer.spec, layer.weights, layer.bias);
    // Activation follows the stem and every channel-mixing (pointwise /
    // standard) layer; the depthwise half of a separable block stays linear.
    if (layer.spec.mode != ConvMode::depthwise) x = ag::relu_op(x);
  }
  return x;
}

// 2L coordinate vector (axis-major: all x then all y) to a 2xL pixel tensor.
Tensor coords_to_px(const Tensor& coords, std::size_t image_size) {
  const std::size_t L = coords.size() / 2;
  Tensor px({2, L});
  for (std::size_t k = 0; k < L; ++k) {
    px.at(0, k) = coords.data[k] * static_cast<double>(image_size);
    px.at(1, k) = coords.data[L + k] * static_cast<double>(image_size);
  }
  return px;
}

Tensor target_normalized(const Tensor& gt2d_px, std::size_t image_size) {
  const std::size_t L = gt2d_px.dim(1);
  Tensor t({2 * L});
  for (std::size_t k = 0; k < L; ++k) {
    t.data[k] = gt2d_px.at(0, k) / static_cast<double>(image_size);
    t.data[L + k] = gt2d_px.at(1, k) / static_cast<double>(image_size);
  }
  return t;
}

Tensor xy_normalized_vec(const Tensor& xy_px, std::size_t image_size) {
  return target_normalized(xy_px, image_size);
}

}  // namespace

// ---------------------------------------------------------------------------
// Fast network

FastNetwork FastNetwork::create(const PipelineConfig& cfg, std::uint64_t seed) {
  EVODHM_REQUIRE(cfg.width_multiplier >= 1, "width multiplier must be >= 1");
  FastNetwork net;
  net.cfg = cfg;
  const std::size_t m = cfg.width_multiplier;
  std::uint64_t s = seed;
  std::size_t size = cfg.image_size;
  std::size_t ch = 8 * m;

  auto add_layer = [&](const std::string& name, const ConvSpec& spec, std::size_t in_size) {
    ConvLayer layer;
    layer.name = name;
    layer.spec = spec;
    const std::size_t fan_in = spec.mode == ConvMode::depthwise
                                   ? spec.kernel * spec.kernel
                                   : spec.kernel * spec.kernel * spec.in_channels;
    layer.weights = ag::parameter(he_uniform(spec.weight_shape(), fan_in, s++));
    layer.bias = ag::parameter(Tensor({spec.out_channels}));
    layer.in_size = in_size;
    net.cnn.push_back(std::move(layer));
  };

  add_layer("stem", ConvSpec::same(ConvMode::standard, 3, 6, ch, 2), size);
  size /= 2;
  for (std::size_t b = 1; b <= cfg.cnn_block_count; ++b) {
    const bool strided = (b % 2 == 1);  // blocks 1, 3, 5, ...
    const std::size_t stride = strided ? 2 : 1;
    const std::size_t out_ch = strided ? ch * 2 : ch;
    add_layer("block" + std::to_string(b) + "_dw",
              ConvSpec::same(ConvMode::depthwise, 3, ch, ch, stride), size);
    if (strided) size /= 2;
    add_layer("block" + std::to_string(b) + "_pw",
              ConvSpec::same(ConvMode::pointwise, 1, ch, out_ch), size);
    ch = out_ch;
  }
  EVODHM_REQUIRE(size >= 1, "image_size too small for the CNN downsampling factor");

  net.feature_size = size;
  net.feature_channels = ch;
  net.cell = FastRecurrentCell::create(ch, 3, s);
  s += 8;
  const std::size_t head_in = size * size * ch;
  const std::size_t head_out = 2 * cfg.landmarks;
  net.head_w = ag::parameter(he_uniform({head_out, head_in}, head_in, s++));
  net.head_b = ag::parameter(Tensor({head_out}));
  // Bias the head toward the frame center so the first predictions are sane.
  for (double& v : net.head_b->value.data) v = 0.5;
  return net;
}

std::vector<Var> FastNetwork::params() const {
  std::vector<Var> ps;
  for (const auto& layer : cnn) {
    ps.push_back(layer.weights);
    ps.push_back(layer.bias);
  }
  for (const auto& p : cell.params()) ps.push_back(p);
  ps.push_back(head_w);
  ps.push_back(head_b);
  return ps;
}

std::vector<LayerCost> FastNetwork::layer_costs() const {
  std::vector<LayerCost> rows;
  for (const auto& layer : cnn)
    rows.push_back({layer.name, to_string(layer.spec.mode), cost_of(layer.spec, layer.in_size)});
  rows.push_back({"rnn_init_pw", "pointwise", cost_of(cell.pointwise_spec(), feature_size)});
  const auto dw = cost_of(cell.depthwise_spec(), feature_size);
  const auto pw = cost_of(cell.pointwise_spec(), feature_size);
  const long long T = static_cast<long long>(cfg.steps);
  rows.push_back({"rnn_step_dw_in(x" + std::to_string(T) + ")", "depthwise",
                  {dw.mult_adds * T, dw.parameters}});
  rows.push_back({"rnn_step_pw_hh(x" + std::to_string(T) + ")", "pointwise",
                  {pw.mult_adds * T, pw.parameters}});
  rows.push_back({"rnn_step_dw_hidden(x" + std::to_string(T) + ")", "depthwise",
                  {dw.mult_adds * T, dw.parameters}});
  ConvSpec head_spec = ConvSpec::same(ConvMode::pointwise, 1, feature_size * feature_size * feature_channels,
                                      2 * cfg.landmarks);
  rows.push_back({"head_fc", "pointwise", cost_of(head_spec, 1)});
  return rows;
}

long long FastNetwork::parameter_count() const {
  long long total = 0;
  for (const auto& row : layer_costs()) total += row.cost.parameters;
  return total;
}

long long FastNetwork::mult_adds_per_frame() const {
  long long total = 0;
  for (const auto& row : layer_costs()) total += row.cost.mult_adds;
  return total;
}

FastGraph fast_graph(const FastNetwork& net, const Tensor& input_stack,
                     const Tensor* target_2d_px) {
  EVODHM_REQUIRE(input_stack.rank() == 3 && input_stack.dim(2) == 6,
                 "fast pipeline expects a 6-channel input stack");
  FastGraph g;
  Var x = ag::constant(input_stack);
  Var feats = conv_relu_chain(net.cnn, x);

  auto head = [&](const Var& f) {
    return ag::fully_connected(ag::flatten(f), net.head_w, net.head_b);
  };

  FastState state = fast_recurrent_init(net.cell, feats);
  g.initial_coords = head(state.features);
  if (net.cfg.ablation == Ablation::no_recurrence_3d_cnn) {
    for (std::size_t t = 0; t < net.cfg.steps; ++t) g.stage_coords.push_back(g.initial_coords);
  } else {
    for (const auto& st : unroll(net.cell, state, net.cfg.steps))
      g.stage_coords.push_back(head(st.features));
  }

  if (target_2d_px) {
    Tensor target = target_normalized(*target_2d_px, net.cfg.image_size);
    Var loss = ag::sum_squared_error(g.stage_coords.back(), target);
    const std::size_t T = g.stage_coords.size();
    if (net.cfg.stage_loss_weight > 0 && T > 1 &&
        net.cfg.ablation != Ablation::no_recurrence_3d_cnn) {
      Var aux = ag::sum_squared_error(g.stage_coords[0], target);
      for (std::size_t t = 1; t + 1 < T; ++t)
        aux = ag::add(aux, ag::sum_squared_error(g.stage_coords[t], target));
      loss = ag::add(loss, ag::scale(aux, net.cfg.stage_loss_weight /
                                              static_cast<double>(T - 1)));
    }
    g.loss = loss;
  }
  return g;
}

AlignmentResult fast_forward(const FastNetwork& net, const Tensor& image,
                             const DiffusionHeatMap& mean_map) {
  const double t0 = now_ms();
  Tensor stack = build_input_stack(image, mean_map);
  AlignmentResult res;
  FastGraph g = fast_graph(net, stack);
  const double t1 = now_ms();
  res.initial_landmarks = coords_to_px(g.initial_coords->value, net.cfg.image_size);
  for (const auto& stage : g.stage_coords)
    res.stage_landmarks.push_back(coords_to_px(stage->value, net.cfg.image_size));
  res.final_landmarks = res.stage_landmarks.back();
  res.stage_ms.assign(net.cfg.steps, (t1 - t0) / static_cast<double>(net.cfg.steps));
  res.mult_adds = net.mult_adds_per_frame();
  return res;
}

// ---------------------------------------------------------------------------
// Classic network

ClassicNetwork ClassicNetwork::create(const PipelineConfig& cfg, std::uint64_t seed) {
  ClassicNetwork net;
  net.cfg = cfg;
  std::uint64_t s = seed;
  std::size_t size = cfg.image_size;
  std::size_t ch = 6;
  // Reduced-VGG-style plain stack: strided 3x3 convolutions, width capped.
  for (std::size_t i = 0; i < cfg.classic_conv_layers; ++i) {
    const std::size_t out_ch = std::min<std::size_t>(8 << i, 32);
    ConvLayer layer;
    layer.name = "conv" + std::to_string(i + 1);
    layer.spec = ConvSpec::same(ConvMode::standard, 3, ch, out_ch, 2);
    layer.weights = ag::parameter(
        he_uniform(layer.spec.weight_shape(), 9 * ch, s++));
    layer.bias = ag::parameter(Tensor({out_ch}));
    layer.in_size = size;
    net.cnn.push_back(std::move(layer));
    size /= 2;
    ch = out_ch;
  }
  EVODHM_REQUIRE(size >= 1, "image_size too small for the classic CNN stack");
  net.feature_dim = size * size * ch;
  const std::size_t out_dim = cfg.ablation == Ablation::no_heatmap_2d_rnn
                                  ? 3 * cfg.landmarks
                                  : 6 + cfg.k_id + cfg.k_exp;
  net.cell = VanillaRnnCell::create(net.feature_dim, cfg.hidden_dim, out_dim, s);
  return net;
}

std::vector<Var> ClassicNetwork::params() const {
  std::vector<Var> ps;
  for (const auto& layer : cnn) {
    ps.push_back(layer.weights);
    ps.push_back(layer.bias);
  }
  for (const auto& p : cell.params()) ps.push_back(p);
  return ps;
}

std::vector<LayerCost> ClassicNetwork::layer_costs() const {
  std::vector<LayerCost> rows;
  const long long T = static_cast<long long>(cfg.steps);
  for (const auto& layer : cnn) {
    auto c = cost_of(layer.spec, layer.in_size);
    rows.push_back({layer.name + "(x" + std::to_string(T) + ")",
                    to_string(layer.spec.mode), {c.mult_adds * T, c.parameters}});
  }
  auto fc_cost = [](const Tensor& w) {
    ConvSpec s = ConvSpec::same(ConvMode::pointwise, 1, w.dim(1), w.dim(0));
    return cost_of(s, 1);
  };
  auto ih = fc_cost(cell.w_ih->value), hh = fc_cost(cell.w_hh->value),
       ho = fc_cost(cell.w_ho->value);
  rows.push_back({"rnn_w_ih(x" + std::to_string(T) + ")", "fc", {ih.mult_adds * T, ih.parameters}});
  rows.push_back({"rnn_w_hh(x" + std::to_string(T) + ")", "fc", {hh.mult_adds * T, hh.parameters}});
  rows.push_back({"rnn_w_ho(x" + std::to_string(T) + ")", "fc", {ho.mult_adds * T, ho.parameters}});
  return rows;
}

long long ClassicNetwork::parameter_count() const {
  long long total = 0;
  for (const auto& row : layer_costs()) total += row.cost.parameters;
  return total;
}

long long ClassicNetwork::mult_adds_per_frame() const {
  long long total = 0;
  for (const auto& row : layer_costs()) total += row.cost.mult_adds;
  return total;
}

ClassicGraph classic_graph(const MorphableModel& model, const ClassicNetwork& net,
                           const Tensor& image, const PoseShapeParams& p0,
                           const Tensor* target_2d_px, bool capture_heatmaps) {
  const PipelineConfig& cfg = net.cfg;
  const std::size_t H = cfg.image_size, W = cfg.image_size;
  const std::size_t L = model.landmark_count;
  const bool landmark_state = cfg.ablation == Ablation::no_heatmap_2d_rnn;

  ClassicGraph g;
  Var image_c = ag::constant(image);
  Var h = ag::constant(Tensor({cfg.hidden_dim}));

  Var p;
  if (landmark_state) {
    // State is the flattened 3xL landmark set itself (pixels, axis-major).
    p = ag::constant(Tensor({3 * L}, pose_transform_3d(model, p0).data));
  } else {
    p = ag::constant(Tensor({model.param_dim()}, p0.flatten()));
  }

  Var ones_vals = ag::constant(Tensor::full({3, L}, 1.0));

  auto landmarks_of = [&](const Var& pv) {
    if (landmark_state) return ag::take_xy(ag::reshape(pv, {3, L}));
    return ag::take_xy(ag::pose_project(model, pv));
  };

  for (std::size_t t = 0; t < cfg.steps; ++t) {
    Var posed = landmark_state ? ag::reshape(p, {3, L}) : ag::pose_project(model, p);
    Var xy = ag::take_xy(posed);
    Var map = landmark_state
                  ? ag::rasterize(xy, ones_vals, H, W, cfg.sigma)
                  : ag::rasterize(xy, ag::normalize_axes(posed), H, W, cfg.sigma);
    if (capture_heatmaps) g.iteration_heatmaps.push_back(map->value);
    Var stack = ag::concat_channels(image_c, map);
    Var feats = ag::flatten(conv_relu_chain(net.cnn, stack));
    auto step = vanilla_step(net.cell, feats, h, p, cfg.increment_uses_new_hidden);
    h = step.hidden;
    p = step.params;
    g.stage_params.push_back(p);
    g.stage_landmarks_px.push_back(landmarks_of(p));
  }
  g.final_params = p;

  if (target_2d_px) {
    Var pred_norm = ag::scale(g.stage_landmarks_px.back(),
                              1.0 / static_cast<double>(cfg.image_size));
    Tensor target({2, L});
    for (std::size_t k = 0; k < L; ++k) {
      target.at(0, k) = target_2d_px->at(0, k) / static_cast<double>(cfg.image_size);
      target.at(1, k) = target_2d_px->at(1, k) / static_cast<double>(cfg.image_size);
    }
    g.loss = ag::sum_squared_error(pred_norm, target);
  }
  return g;
}

AlignmentResult classic_forward(const MorphableModel& model, const ClassicNetwork& net,
                                const Tensor& image, const PoseShapeParams& p0,
                                bool capture_heatmaps) {
  AlignmentResult res;
  const double t0 = now_ms();
  ClassicGraph g = classic_graph(model, net, image, p0, nullptr, capture_heatmaps);
  const double t1 = now_ms();

  Tensor init_posed = pose_transform_3d(model, p0);
  Tensor init_xy({2, model.landmark_count});
  for (std::size_t k = 0; k < model.landmark_count; ++k) {
    init_xy.at(0, k) = init_posed.at(0, k);
    init_xy.at(1, k) = init_posed.at(1, k);
  }
  res.initial_landmarks = std::move(init_xy);
  for (const auto& lm : g.stage_landmarks_px) res.stage_landmarks.push_back(lm->value);
  for (const auto& pv : g.stage_params) res.param_trajectory.push_back(pv->value.data);
  res.final_landmarks = res.stage_landmarks.back();
  res.iteration_heatmaps = std::move(g.iteration_heatmaps);
  res.stage_ms.assign(net.cfg.steps, (t1 - t0) / static_cast<double>(net.cfg.steps));
  res.mult_adds = net.mult_adds_per_frame();
  return res;
}

// ---------------------------------------------------------------------------
// Training

namespace {

double schedule_lr(const PipelineConfig& cfg, std::size_t global_step, std::size_t epoch) {
  const double lr0 = cfg.effective_learning_rate();
  if (lr0 == 0.0) return 0.0;
  if (cfg.variant == Variant::classic_dhm) {
    const double k = std::floor(static_cast<double>(global_step) /
                                static_cast<double>(cfg.classic_decay_every));
    return lr0 * std::pow(cfg.classic_lr_decay, k);
  }
  return epoch < cfg.epochs / 2 ? lr0 : cfg.fast_lr_floor;
}

}  // namespace

TrainedModel train(const Dataset& dataset, const PipelineConfig& cfg, std::uint64_t seed) {
  EVODHM_REQUIRE(!dataset.samples.empty(), "empty training dataset");
  EVODHM_REQUIRE(dataset.image_size == cfg.image_size, "dataset/config image size mismatch");

  TrainedModel tm;
  tm.cfg = cfg;
  tm.model = dataset.model;

  std::vector<Var> params;
  std::optional<DiffusionHeatMap> mean_map;
  PoseShapeParams p0 = default_centered_pose(dataset.model, cfg.image_size);
  if (cfg.variant == Variant::fast_dhm) {
    tm.fast = FastNetwork::create(cfg, seed);
    params = tm.fast->params();
    mean_map = mean_initial_heatmap(dataset.model, p0, cfg.image_size, cfg.image_size,
                                    cfg.sigma);
  } else {
    tm.classic = ClassicNetwork::create(cfg, seed);
    params = tm.classic->params();
  }

  std::vector<AdamState> states(params.size());
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(dataset.samples.size());
  std::iota(order.begin(), order.end(), 0);

  const std::size_t batch = std::max<std::size_t>(1, std::min(cfg.batch, order.size()));
  std::size_t global_step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    double epoch_nme = 0.0;
    std::size_t seen = 0;
    double lr = schedule_lr(cfg, global_step, epoch);

    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      ag::zero_grad(params);
      double batch_loss = 0.0;
      std::vector<std::size_t> batch_ids(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      for (std::size_t idx : batch_ids) {
        const TrainingSample& sample = dataset.samples[idx];
        Var loss;
        Tensor pred;
        if (cfg.variant == Variant::fast_dhm) {
          Tensor stack = build_input_stack(sample.image, *mean_map);
          FastGraph g = fast_graph(*tm.fast, stack, &sample.ground_truth_2d);
          loss = g.loss;
          pred = coords_to_px(g.stage_coords.back()->value, cfg.image_size);
        } else {
          ClassicGraph g = classic_graph(dataset.model, *tm.classic, sample.image, p0,
                                         &sample.ground_truth_2d);
          loss = g.loss;
          pred = g.stage_landmarks_px.back()->value;
        }
        if (!std::isfinite(loss->value.data[0])) {
          std::ostringstream oss;
          oss << "NaN loss at epoch " << epoch << " step " << global_step << "; batch [";
          for (std::size_t b : batch_ids) oss << b << " ";
          oss << "]";
          throw NumericFailure(oss.str());
        }
        ag::backward(loss);
        batch_loss += loss->value.data[0];
        const auto [w, h2] = bbox_from_landmarks(sample.ground_truth_2d);
        epoch_nme += nme(pred, sample.ground_truth_2d, w, h2);
        ++seen;
      }
      const double inv_n = 1.0 / static_cast<double>(end - start);
      lr = schedule_lr(cfg, global_step, epoch);
      for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor g = params[i]->grad;
        for (double& v : g.data) v *= inv_n;
        adam_step(params[i]->value, g, states[i], lr);
      }
      epoch_loss += batch_loss;
      ++global_step;
    }

    tm.log.push_back({epoch, global_step, epoch_loss / static_cast<double>(seen), lr,
                      epoch_nme / static_cast<double>(seen)});
  }
  return tm;
}

AlignmentResult TrainedModel::run(const Tensor& image) const {
  if (fast) {
    PoseShapeParams p0 = default_centered_pose(model, cfg.image_size);
    auto mean_map = mean_initial_heatmap(model, p0, cfg.image_size, cfg.image_size,
                                         cfg.sigma);
    return fast_forward(*fast, image, mean_map);
  }
  PoseShapeParams p0 = default_centered_pose(model, cfg.image_size);
  return classic_forward(model, *classic, image, p0);
}

long long TrainedModel::parameter_count() const {
  return fast ? fast->parameter_count() : classic->parameter_count();
}

long long TrainedModel::mult_adds_per_frame() const {
  return fast ? fast->mult_adds_per_frame() : classic->mult_adds_per_frame();
}

// ---------------------------------------------------------------------------
// Synthetic data

Dataset generate_synthetic_dataset(const MorphableModel& model, std::size_t n,
                                   std::uint64_t seed, const PipelineConfig& cfg) {
  EVODHM_REQUIRE(n >= 1, "dataset size must be >= 1");
  Dataset ds;
  ds.model = model;
  ds.image_size = cfg.image_size;
  ds.seed = seed;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double size = static_cast<double>(cfg.image_size);
  const double deg = M_PI / 180.0;

  for (std::size_t i = 0; i < n; ++i) {
    PoseShapeParams pose;
    pose.euler[0] = (unit(rng) * 40.0 - 20.0) * deg;                     // pitch
    pose.euler[1] = (unit(rng) * 178.0 - 89.0) * deg;                    // yaw
    pose.euler[2] = (unit(rng) * 40.0 - 20.0) * deg;                     // roll
    pose.scale_f = 0.60 * size * (0.95 + 0.10 * unit(rng));
    pose.translation_2d = {size / 2.0 + (unit(rng) - 0.5) * 0.06 * size,
                           size / 2.0 + (unit(rng) - 0.5) * 0.06 * size};
    pose.p_id.resize(model.k_id());
    pose.p_exp.resize(model.k_exp());
    for (double& v : pose.p_id) v = 2.0 * unit(rng) - 1.0;
    for (double& v : pose.p_exp) v = 2.0 * unit(rng) - 1.0;

    Tensor posed = pose_transform_3d(model, pose);
    const std::size_t L = model.landmark_count;
    TrainingSample sample;
    sample.yaw = pose.euler[1];
    sample.gt_params = pose.flatten();
    sample.ground_truth_2d = Tensor({2, L});
    for (std::size_t k = 0; k < L; ++k) {
      sample.ground_truth_2d.at(0, k) = posed.at(0, k);
      sample.ground_truth_2d.at(1, k) = posed.at(1, k);
    }

    // Face-proxy image: structured noise background plus shaded splats at the
    // ground-truth landmarks (channel shading follows normalized x/y/z).
    Tensor normalized({3, L});
    for (std::size_t axis = 0; axis < 3; ++axis) {
      std::vector<double> row(L);
      for (std::size_t k = 0; k < L; ++k) row[k] = posed.at(axis, k);
      auto nc = normalize_channel(row);
      for (std::size_t k = 0; k < L; ++k) normalized.at(axis, k) = nc.values[k];
    }
    Tensor image({cfg.image_size, cfg.image_size, 3});
    std::array<double, 3> phase{unit(rng) * 6.28, unit(rng) * 6.28, unit(rng) * 6.28};
    std::array<double, 2> freq{2.0 + 3.0 * unit(rng), 2.0 + 3.0 * unit(rng)};
    for (std::size_t y = 0; y < cfg.image_size; ++y)
      for (std::size_t x = 0; x < cfg.image_size; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          image.at(y, x, c) =
              0.18 +
              0.07 * std::sin(freq[0] * 6.2832 * static_cast<double>(x) / size +
                              freq[1] * 6.2832 * static_cast<double>(y) / size + phase[c]) +
              0.05 * unit(rng);

    const double splat_sigma = 1.8;
    const long radius = 5;
    for (std::size_t k = 0; k < L; ++k) {
      const double lx = sample.ground_truth_2d.at(0, k);
      const double ly = sample.ground_truth_2d.at(1, k);
      const long cx = std::lround(lx), cy = std::lround(ly);
      for (long py = cy - radius; py <= cy + radius; ++py) {
        if (py < 0 || py >= static_cast<long>(cfg.image_size)) continue;
        for (long px = cx - radius; px <= cx + radius; ++px) {
          if (px < 0 || px >= static_cast<long>(cfg.image_size)) continue;
          const double dx = static_cast<double>(px) - lx;
          const double dy = static_cast<double>(py) - ly;
          const double g =
              std::exp(-(dx * dx + dy * dy) / (2.0 * splat_sigma * splat_sigma));
          for (std::size_t c = 0; c < 3; ++c) {
            const double v = (0.45 + 0.55 * normalized.at(c, k)) * g;
            double& cell = image.at(static_cast<std::size_t>(py),
                                    static_cast<std::size_t>(px), c);
            cell = std::max(cell, v);
          }
        }
      }
    }
    sample.image = std::move(image);
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset and model files

namespace fs = std::filesystem;

namespace {

std::string sample_stem(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return buf;
}

}  // namespace

void save_dataset(const Dataset& dataset, const fs::path& dir, const PipelineConfig& cfg) {
  fs::create_directories(dir);
  write_chunks(dir / "model.evam", model_to_chunks(dataset.model));

  nlohmann::json meta;
  meta["schema_version"] = 1;
  meta["seed"] = dataset.seed;
  meta["count"] = dataset.samples.size();
  meta["image_size"] = dataset.image_size;
  meta["landmarks"] = dataset.model.landmark_count;
  meta["k_id"] = dataset.model.k_id();
  meta["k_exp"] = dataset.model.k_exp();
  meta["sigma"] = cfg.sigma;
  std::array<std::size_t, 3> bins{0, 0, 0};
  nlohmann::json yaws = nlohmann::json::array();
  nlohmann::json params = nlohmann::json::array();
  for (const auto& s : dataset.samples) {
    const double yaw_deg = s.yaw * 180.0 / M_PI;
    yaws.push_back(yaw_deg);
    params.push_back(s.gt_params);
    const double a = std::abs(yaw_deg);
    bins[a < 30.0 ? 0 : (a < 60.0 ? 1 : 2)] += 1;
  }
  meta["yaw_deg"] = yaws;
  meta["gt_params"] = params;
  meta["yaw_bins"] = bins;
  std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";

  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    write_ppm(s.image, dir / ("img" + sample_stem(i) + ".ppm"));
    std::ofstream lm(dir / ("lm" + sample_stem(i) + ".txt"));
    const std::size_t L = s.ground_truth_2d.dim(1);
    lm.precision(17);
    for (std::size_t k = 0; k < L; ++k)
      lm << s.ground_truth_2d.at(0, k) << " " << s.ground_truth_2d.at(1, k) << "\n";
  }
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream meta_file(dir / "meta.json");
  if (!meta_file) throw std::runtime_error("missing meta.json in " + dir.string());
  nlohmann::json meta = nlohmann::json::parse(meta_file);

  Dataset ds;
  ds.model = model_from_chunks(read_chunks(dir / "model.evam"));
  ds.image_size = meta.at("image_size").get<std::size_t>();
  ds.seed = meta.at("seed").get<std::uint64_t>();
  const std::size_t n = meta.at("count").get<std::size_t>();
  const auto& yaws = meta.at("yaw_deg");
  const auto gt_params = meta.value("gt_params", nlohmann::json::array());

  for (std::size_t i = 0; i < n; ++i) {
    TrainingSample s;
    s.image = read_ppm(dir / ("img" + sample_stem(i) + ".ppm"));
    std::ifstream lm(dir / ("lm" + sample_stem(i) + ".txt"));
    if (!lm) throw std::runtime_error("missing landmark file for sample " + std::to_string(i));
    std::vector<std::array<double, 2>> pts;
    std::string line;
    while (std::getline(lm, line)) {
      if (line.empty()) continue;
      std::istringstream iss(line);
      double x, y, z;
      iss >> x >> y;
      if (!(iss >> z)) z = 0.0;  // optional depth column
      pts.push_back({x, y});
    }
    s.ground_truth_2d = Tensor({2, pts.size()});
    for (std::size_t k = 0; k < pts.size(); ++k) {
      s.ground_truth_2d.at(0, k) = pts[k][0];
      s.ground_truth_2d.at(1, k) = pts[k][1];
    }
    s.yaw = yaws.at(i).get<double>() * M_PI / 180.0;
    if (i < gt_params.size()) s.gt_params = gt_params.at(i).get<std::vector<double>>();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

namespace {

Tensor config_tensor(const PipelineConfig& c) {
  return Tensor({13}, {static_cast<double>(c.variant == Variant::fast_dhm ? 1 : 0),
                       static_cast<double>(c.image_size), static_cast<double>(c.steps),
                       static_cast<double>(c.width_multiplier),
                       static_cast<double>(c.cnn_block_count),
                       static_cast<double>(c.classic_conv_layers),
                       static_cast<double>(static_cast<int>(c.ablation)),
                       static_cast<double>(c.landmarks),
                       static_cast<double>(c.k_id), static_cast<double>(c.k_exp), c.sigma,
                       static_cast<double>(c.hidden_dim),
                       c.increment_uses_new_hidden ? 1.0 : 0.0});
}

PipelineConfig config_from_tensor(const Tensor& t) {
  PipelineConfig c;
  c.variant = t[0] > 0.5 ? Variant::fast_dhm : Variant::classic_dhm;
  c.image_size = static_cast<std::size_t>(t[1]);
  c.steps = static_cast<std::size_t>(t[2]);
  c.width_multiplier = static_cast<std::size_t>(t[3]);
  c.cnn_block_count = static_cast<std::size_t>(t[4]);
  c.classic_conv_layers = static_cast<std::size_t>(t[5]);
  c.ablation = static_cast<Ablation>(static_cast<int>(t[6]));
  c.landmarks = static_cast<std::size_t>(t[7]);
  c.k_id = static_cast<std::size_t>(t[8]);
  c.k_exp = static_cast<std::size_t>(t[9]);
  c.sigma = t[10];
  c.hidden_dim = static_cast<std::size_t>(t[11]);
  c.increment_uses_new_hidden = t[12] > 0.5;
  return c;
}

}  // namespace

void save_trained_model(const TrainedModel& tm, const fs::path& path) {
  std::vector<NamedTensor> chunks;
  chunks.push_back({"config", config_tensor(tm.cfg)});
  // mode tag mirrors the variant for quick inspection
  chunks.push_back({"mode", Tensor({1}, {tm.fast ? 1.0 : 0.0})});
  for (auto& c : model_to_chunks(tm.model)) chunks.push_back({"mm/" + c.name, c.tensor});
  if (tm.fast) {
    for (const auto& layer : tm.fast->cnn) {
      chunks.push_back({"cnn/" + layer.name + "/w", layer.weights->value});
      chunks.push_back({"cnn/" + layer.name + "/b", layer.bias->value});
    }
    chunks.push_back({"cell/d_in", tm.fast->cell.d_in->value});
    chunks.push_back({"cell/d_hidden", tm.fast->cell.d_hidden->value});
    chunks.push_back({"cell/w_hh_pw", tm.fast->cell.w_hh_pw->value});
    chunks.push_back({"cell/init_pw", tm.fast->cell.init_pw->value});
    chunks.push_back({"head/w", tm.fast->head_w->value});
    chunks.push_back({"head/b", tm.fast->head_b->value});
  } else {
    for (const auto& layer : tm.classic->cnn) {
      chunks.push_back({"cnn/" + layer.name + "/w", layer.weights->value});
      chunks.push_back({"cnn/" + layer.name + "/b", layer.bias->value});
    }
    chunks.push_back({"cell/w_ih", tm.classic->cell.w_ih->value});
    chunks.push_back({"cell/w_hh", tm.classic->cell.w_hh->value});
    chunks.push_back({"cell/w_ho", tm.classic->cell.w_ho->value});
  }
  write_chunks(path, chunks);
}

TrainedModel load_trained_model(const fs::path& path) {
  auto chunks = read_chunks(path);
  TrainedModel tm;
  tm.cfg = config_from_tensor(find_chunk(chunks, "config"));

  std::vector<NamedTensor> mm_chunks;
  for (const auto& c : chunks)
    if (c.name.rfind("mm/", 0) == 0) mm_chunks.push_back({c.name.substr(3), c.tensor});
  tm.model = model_from_chunks(mm_chunks);

  if (tm.cfg.variant == Variant::fast_dhm) {
    tm.fast = FastNetwork::create(tm.cfg, 0);
    for (auto& layer : tm.fast->cnn) {
      layer.weights->value = find_chunk(chunks, "cnn/" + layer.name + "/w");
      layer.bias->value = find_chunk(chunks, "cnn/" + layer.name + "/b");
    }
    tm.fast->cell.d_in->value = find_chunk(chunks, "cell/d_in");
    tm.fast->cell.d_hidden->value = find_chunk(chunks, "cell/d_hidden");
    tm.fast->cell.w_hh_pw->value = find_chunk(chunks, "cell/w_hh_pw");
    tm.fast->cell.init_pw->value = find_chunk(chunks, "cell/init_pw");
    tm.fast->head_w->value = find_chunk(chunks, "head/w");
    tm.fast->head_b->value = find_chunk(chunks, "head/b");
  } else {
    tm.classic = ClassicNetwork::create(tm.cfg, 0);
    for (auto& layer : tm.classic->cnn) {
      layer.weights->value = find_chunk(chunks, "cnn/" + layer.name + "/w");
      layer.bias->value = find_chunk(chunks, "cnn/" + layer.name + "/b");
    }
    tm.classic->cell.w_ih->value = find_chunk(chunks, "cell/w_ih");
    tm.classic->cell.w_hh->value = find_chunk(chunks, "cell/w_hh");
    tm.classic->cell.w_ho->value = find_chunk(chunks, "cell/w_ho");
  }
  return tm;
}

std::string training_log_csv(const std::vector<TrainLogRow>& log) {
  std::ostringstream oss;
  oss << "epoch,step,loss,lr,nme_train\n";
  oss.precision(12);
  for (const auto& row : log)
    oss << row.epoch << "," << row.step << "," << row.loss << "," << row.lr << ","
        << row.nme_train << "\n";
  return oss.str();
}

}  // namespace evodhm
