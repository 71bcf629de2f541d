#include "evodhm/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace evodhm {

NormalizedChannel normalize_channel(const std::vector<double>& values) {
  EVODHM_REQUIRE(values.size() >= 2, "normalize_channel needs at least 2 values");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  NormalizedChannel out;
  out.values.resize(values.size());
  if (hi == lo) {
    std::fill(out.values.begin(), out.values.end(), 0.5);
    out.degenerate = true;
    return out;
  }
  const double inv = 1.0 / (hi - lo);
  for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = (values[i] - lo) * inv;
  return out;
}

DiffusionHeatMap rasterize_heatmap(const Tensor& shape2d, const Tensor& normalized_xyz,
                                   std::size_t height, std::size_t width, double sigma,
                                   RasterProvenance* provenance) {
  EVODHM_REQUIRE(sigma > 0, "sigma must be positive");
  EVODHM_REQUIRE(shape2d.rank() == 2 && shape2d.dim(0) == 2, "shape2d must be 2xL");
  EVODHM_REQUIRE(normalized_xyz.rank() == 2 && normalized_xyz.dim(0) == 3 &&
                     normalized_xyz.dim(1) == shape2d.dim(1),
                 "normalized_xyz must be 3xL matching shape2d");
  const std::size_t L = shape2d.dim(1);

  DiffusionHeatMap map;
  map.data = Tensor({height, width, 3});
  map.sigma = sigma;
  if (provenance) provenance->winner.assign(height * width * 3, -1);

  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);

  for (std::size_t k = 0; k < L; ++k) {
    const double lx = shape2d.at(0, k), ly = shape2d.at(1, k);
    // Window centered on the nearest pixel; Gaussian evaluated at the true
    // sub-pixel location so the peak value is not aliased.
    const long cx = std::lround(lx), cy = std::lround(ly);
    for (long py = cy - radius; py <= cy + radius; ++py) {
      if (py < 0 || py >= static_cast<long>(height)) continue;
      for (long px = cx - radius; px <= cx + radius; ++px) {
        if (px < 0 || px >= static_cast<long>(width)) continue;
        const double dx = static_cast<double>(px) - lx;
        const double dy = static_cast<double>(py) - ly;
        const double g = std::exp(-(dx * dx + dy * dy) * inv_two_sigma2);
        for (std::size_t j = 0; j < 3; ++j) {
          const double v = normalized_xyz.at(j, k) * g;
          double& cell = map.data.at(static_cast<std::size_t>(py),
                                     static_cast<std::size_t>(px), j);
          if (v > cell) {  // overlapping splats combine by max
            cell = v;
            if (provenance) {
              provenance->winner[(static_cast<std::size_t>(py) * width +
                                  static_cast<std::size_t>(px)) * 3 + j] =
                  static_cast<std::int32_t>(k);
            }
          }
        }
      }
    }
  }
  for (double v : map.data.data)
    if (!(v >= 0.0 && v <= 1.0))
      throw NumericFailure("heat-map value escaped [0,1]");
  return map;
}

DiffusionHeatMap heatmap_from_posed_shape(const Tensor& posed3d, std::size_t height,
                                          std::size_t width, double sigma) {
  const std::size_t L = posed3d.dim(1);
  Tensor shape2d({2, L});
  Tensor normalized({3, L});
  std::array<bool, 3> degenerate{};
  for (std::size_t axis = 0; axis < 3; ++axis) {
    std::vector<double> row(L);
    for (std::size_t k = 0; k < L; ++k) row[k] = posed3d.at(axis, k);
    auto norm = normalize_channel(row);
    degenerate[axis] = norm.degenerate;
    for (std::size_t k = 0; k < L; ++k) normalized.at(axis, k) = norm.values[k];
  }
  for (std::size_t k = 0; k < L; ++k) {
    shape2d.at(0, k) = posed3d.at(0, k);
    shape2d.at(1, k) = posed3d.at(1, k);
  }
  auto map = rasterize_heatmap(shape2d, normalized, height, width, sigma);
  map.degenerate_axis = degenerate;
  return map;
}

Tensor build_input_stack(const Tensor& image, const DiffusionHeatMap& heatmap) {
  EVODHM_REQUIRE(image.rank() == 3 && image.dim(2) == 3, "image must be HxWx3");
  EVODHM_REQUIRE(image.dim(0) == heatmap.height() && image.dim(1) == heatmap.width(),
                 "image/heatmap resolution mismatch");
  const std::size_t h = image.dim(0), w = image.dim(1);
  Tensor out({h, w, 6});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        out.at(y, x, c) = image.at(y, x, c);
        out.at(y, x, c + 3) = heatmap.data.at(y, x, c);
      }
  return out;
}

PoseShapeParams default_centered_pose(const MorphableModel& model, std::size_t image_size) {
  PoseShapeParams pose;
  pose.scale_f = 0.7 * static_cast<double>(image_size);
  pose.translation_2d = {static_cast<double>(image_size) / 2.0,
                         static_cast<double>(image_size) / 2.0};
  pose.p_id.assign(model.k_id(), 0.0);
  pose.p_exp.assign(model.k_exp(), 0.0);
  return pose;
}

DiffusionHeatMap mean_initial_heatmap(const MorphableModel& model,
                                      const PoseShapeParams& default_pose,
                                      std::size_t height, std::size_t width, double sigma) {
  Tensor posed = pose_transform_3d(model, default_pose);
  return heatmap_from_posed_shape(posed, height, width, sigma);
}

void write_ppm(const Tensor& hwc, const std::filesystem::path& path, int channel) {
  EVODHM_REQUIRE(hwc.rank() == 3 && hwc.dim(2) == 3, "write_ppm expects HxWx3");
  const std::size_t h = hwc.dim(0), w = hwc.dim(1);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os << "P6\n" << w << " " << h << "\n255\n";
  auto quantize = [](double v) {
    const long q = static_cast<long>(std::floor(255.0 * v + 0.5));  // round half up
    return static_cast<unsigned char>(std::clamp(q, 0L, 255L));
  };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = channel < 0 ? hwc.at(y, x, c)
                                     : hwc.at(y, x, static_cast<std::size_t>(channel));
        os.put(static_cast<char>(quantize(v)));
      }
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0;
  int maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255) throw std::runtime_error("unsupported PPM: " + path.string());
  is.get();  // single whitespace after header
  Tensor out({h, w, 3});
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int byte = is.get();
    if (byte < 0) throw std::runtime_error("truncated PPM: " + path.string());
    out.data[i] = static_cast<double>(byte) / 255.0;
  }
  return out;
}

}  // namespace evodhm
