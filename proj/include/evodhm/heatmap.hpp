#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "evodhm/morphable.hpp"
#include "evodhm/tensor.hpp"

namespace evodhm {

/// 3-channel Gaussian-diffused landmark map; channels 0/1/2 carry normalized
/// x/y/z. All values stay in [0,1] by construction (max combination of
/// normalized splats), which is asserted rather than clamped.
struct DiffusionHeatMap {
  Tensor data;  // H x W x 3
  double sigma = 1.0;
  std::array<bool, 3> degenerate_axis{false, false, false};

  std::size_t height() const { return data.dim(0); }
  std::size_t width() const { return data.dim(1); }
};

struct NormalizedChannel {
  std::vector<double> values;  // range exactly [0,1] unless degenerate
  bool degenerate = false;     // max == min; all values set to 0.5
};

/// (v - min) / (max - min); a degenerate axis maps to constant 0.5.
NormalizedChannel normalize_channel(const std::vector<double>& values);

/// Per-pixel splat provenance used by the backward pass: which landmark won
/// the max at each (pixel, channel), or -1 where the map is zero.
struct RasterProvenance {
  std::vector<std::int32_t> winner;  // H*W*3, landmark index or -1
};

DiffusionHeatMap rasterize_heatmap(const Tensor& shape2d, const Tensor& normalized_xyz,
                                   std::size_t height, std::size_t width, double sigma,
                                   RasterProvenance* provenance = nullptr);

/// Normalize the posed 3D shape per axis and splat it; the common path used by
/// both pipelines and the CLI exporter.
DiffusionHeatMap heatmap_from_posed_shape(const Tensor& posed3d, std::size_t height,
                                          std::size_t width, double sigma);

Tensor build_input_stack(const Tensor& image, const DiffusionHeatMap& heatmap);

DiffusionHeatMap mean_initial_heatmap(const MorphableModel& model,
                                      const PoseShapeParams& default_pose,
                                      std::size_t height, std::size_t width, double sigma);

/// Default centered pose for a given square image size: face spans ~70% of
/// the frame, translation at the image center.
PoseShapeParams default_centered_pose(const MorphableModel& model, std::size_t image_size);

/// 8-bit binary PPM export, value*255 rounded half-up. channel: 0..2 writes a
/// grayscale composite of one channel; -1 writes the three channels as RGB.
void write_ppm(const Tensor& hwc, const std::filesystem::path& path, int channel = -1);
Tensor read_ppm(const std::filesystem::path& path);

}  // namespace evodhm
