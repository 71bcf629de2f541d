#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "evodhm/heatmap.hpp"
#include "evodhm/morphable.hpp"
#include "evodhm/rnn.hpp"

namespace evodhm {

enum class Variant { classic_dhm, fast_dhm };
enum class Ablation { none, no_heatmap_2d_rnn, no_recurrence_3d_cnn };

Variant variant_from_string(const std::string& s);
const char* to_string(Variant v);

struct PipelineConfig {
  Variant variant = Variant::fast_dhm;
  std::size_t image_size = 64;   // paper scale 224
  std::size_t steps = 4;         // unroll depth T
  std::size_t width_multiplier = 1;
  std::size_t cnn_block_count = 5;     // fast separable blocks
  std::size_t classic_conv_layers = 4; // reduced-VGG-style stack
  Ablation ablation = Ablation::none;
  std::size_t landmarks = 68;
  std::size_t k_id = 8;
  std::size_t k_exp = 4;
  double sigma = 1.0;
  std::size_t hidden_dim = 64;  // classic RNN hidden size
  bool increment_uses_new_hidden = false;

  // optimizer schedule
  std::size_t batch = 16;
  std::size_t epochs = 120;
  double learning_rate = -1.0;  // < 0 selects the per-variant default
  double classic_lr_decay = 0.95;
  std::size_t classic_decay_every = 2000;  // iterations
  double fast_lr_floor = 1e-5;             // after half the epochs
  double stage_loss_weight = 0.3;          // weight of intermediate-stage terms

  std::uint64_t seed = 1;
  bool deterministic = true;

  double default_learning_rate() const {
    return variant == Variant::fast_dhm ? 0.005 : 0.001;
  }
  double effective_learning_rate() const {
    return learning_rate >= 0 ? learning_rate : default_learning_rate();
  }
};

struct TrainingSample {
  Tensor image;                    // H x W x 3, values in [0,1]
  Tensor ground_truth_2d;          // 2 x L, pixels
  std::vector<double> gt_params;   // flat pose/shape vector (may be empty)
  double yaw = 0.0;                // radians, signed
};

struct Dataset {
  MorphableModel model;
  std::vector<TrainingSample> samples;
  std::size_t image_size = 0;
  std::uint64_t seed = 0;
};

struct AlignmentResult {
  Tensor final_landmarks;                        // 2 x L, pixels
  Tensor initial_landmarks;                      // 2 x L, pixels
  std::vector<Tensor> stage_landmarks;           // T entries
  std::vector<std::vector<double>> param_trajectory;  // classic only
  std::vector<double> stage_ms;
  long long mult_adds = 0;
  std::vector<Tensor> iteration_heatmaps;        // classic, when captured
};

struct ConvLayer {
  std::string name;
  ConvSpec spec;
  autograd::Var weights;
  autograd::Var bias;
  std::size_t in_size = 0;  // spatial input size, for cost reporting
};

struct LayerCost {
  std::string name;
  std::string mode;
  CostReport cost;
};

/// Fast DHM network: strided standard stem, depthwise-separable blocks with
/// stride 2 at blocks 1/3/5 and channel doubling at each strided block, a
/// factorized recurrent module, and a shared fully-connected landmark head.
struct FastNetwork {
  PipelineConfig cfg;
  std::vector<ConvLayer> cnn;
  FastRecurrentCell cell;
  autograd::Var head_w;
  autograd::Var head_b;
  std::size_t feature_size = 0;      // spatial side of the recurrent maps
  std::size_t feature_channels = 0;

  static FastNetwork create(const PipelineConfig& cfg, std::uint64_t seed);
  std::vector<autograd::Var> params() const;
  std::vector<LayerCost> layer_costs() const;
  long long parameter_count() const;
  long long mult_adds_per_frame() const;
};

/// Classic DHM network: reduced-VGG-style plain conv stack plus the vanilla
/// parameter-space recurrent cell.
struct ClassicNetwork {
  PipelineConfig cfg;
  std::vector<ConvLayer> cnn;
  VanillaRnnCell cell;
  std::size_t feature_dim = 0;

  static ClassicNetwork create(const PipelineConfig& cfg, std::uint64_t seed);
  std::vector<autograd::Var> params() const;
  std::vector<LayerCost> layer_costs() const;
  long long parameter_count() const;
  long long mult_adds_per_frame() const;
};

/// Differentiable end-to-end graphs (used for both inference and training).
struct ClassicGraph {
  autograd::Var loss;  // null unless a target was supplied
  autograd::Var final_params;
  std::vector<autograd::Var> stage_params;
  std::vector<autograd::Var> stage_landmarks_px;
  std::vector<Tensor> iteration_heatmaps;
};
ClassicGraph classic_graph(const MorphableModel& model, const ClassicNetwork& net,
                           const Tensor& image, const PoseShapeParams& p0,
                           const Tensor* target_2d_px = nullptr,
                           bool capture_heatmaps = false);

struct FastGraph {
  autograd::Var loss;  // null unless a target was supplied
  std::vector<autograd::Var> stage_coords;  // normalized 2L vectors, T entries
  autograd::Var initial_coords;             // head applied to F_0
};
FastGraph fast_graph(const FastNetwork& net, const Tensor& input_stack,
                     const Tensor* target_2d_px = nullptr);

AlignmentResult classic_forward(const MorphableModel& model, const ClassicNetwork& net,
                                const Tensor& image, const PoseShapeParams& p0,
                                bool capture_heatmaps = false);
AlignmentResult fast_forward(const FastNetwork& net, const Tensor& image,
                             const DiffusionHeatMap& mean_map);

struct TrainLogRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double nme_train = 0.0;
};

struct TrainedModel {
  PipelineConfig cfg;
  std::optional<FastNetwork> fast;
  std::optional<ClassicNetwork> classic;
  MorphableModel model;
  std::vector<TrainLogRow> log;

  AlignmentResult run(const Tensor& image) const;
  long long parameter_count() const;
  long long mult_adds_per_frame() const;
};

TrainedModel train(const Dataset& dataset, const PipelineConfig& cfg, std::uint64_t seed);

Dataset generate_synthetic_dataset(const MorphableModel& model, std::size_t n,
                                   std::uint64_t seed, const PipelineConfig& cfg);

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir,
                  const PipelineConfig& cfg);
Dataset load_dataset(const std::filesystem::path& dir);

void save_trained_model(const TrainedModel& tm, const std::filesystem::path& path);
TrainedModel load_trained_model(const std::filesystem::path& path);

std::string training_log_csv(const std::vector<TrainLogRow>& log);

}  // namespace evodhm
