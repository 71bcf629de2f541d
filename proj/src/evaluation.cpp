#include "evodhm/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>

#include <nlohmann/json.hpp>

#include "evodhm/pipeline.hpp"

namespace evodhm {

double nme(const Tensor& predicted, const Tensor& ground_truth, double bbox_w, double bbox_h) {
  EVODHM_REQUIRE(bbox_w > 0 && bbox_h > 0, "degenerate bounding box");
  EVODHM_REQUIRE(predicted.same_shape(ground_truth) && predicted.rank() == 2 &&
                     predicted.dim(0) == 2,
                 "nme expects matching 2xL landmark sets");
  const std::size_t L = predicted.dim(1);
  const double d = std::sqrt(bbox_w * bbox_h);
  double acc = 0.0;
  for (std::size_t k = 0; k < L; ++k) {
    const double dx = predicted.at(0, k) - ground_truth.at(0, k);
    const double dy = predicted.at(1, k) - ground_truth.at(1, k);
    acc += std::sqrt(dx * dx + dy * dy);  // Euclidean, unsquared
  }
  return acc / (static_cast<double>(L) * d);
}

std::pair<double, double> bbox_from_landmarks(const Tensor& ground_truth) {
  EVODHM_REQUIRE(ground_truth.rank() == 2 && ground_truth.dim(0) == 2 &&
                     ground_truth.dim(1) >= 2,
                 "bbox needs a 2xL set with L >= 2");
  const std::size_t L = ground_truth.dim(1);
  double min_x = ground_truth.at(0, 0), max_x = min_x;
  double min_y = ground_truth.at(1, 0), max_y = min_y;
  for (std::size_t k = 1; k < L; ++k) {
    min_x = std::min(min_x, ground_truth.at(0, k));
    max_x = std::max(max_x, ground_truth.at(0, k));
    min_y = std::min(min_y, ground_truth.at(1, k));
    max_y = std::max(max_y, ground_truth.at(1, k));
  }
  const double w = max_x - min_x, h = max_y - min_y;
  EVODHM_REQUIRE(w > 0 || h > 0, "all landmarks coincident");
  return {w, h};
}

std::vector<std::pair<double, double>> ced_curve(const std::vector<double>& per_sample_nme,
                                                 const std::vector<double>& grid) {
  EVODHM_REQUIRE(!per_sample_nme.empty(), "ced_curve needs samples");
  std::vector<std::pair<double, double>> curve;
  curve.reserve(grid.size());
  const double n = static_cast<double>(per_sample_nme.size());
  for (double threshold : grid) {
    std::size_t count = 0;
    for (double v : per_sample_nme)
      if (v <= threshold) ++count;
    curve.emplace_back(threshold, static_cast<double>(count) / n);
  }
  return curve;
}

std::vector<double> default_ced_grid() {
  std::vector<double> grid(121);
  for (std::size_t i = 0; i < grid.size(); ++i)
    grid[i] = 0.12 * static_cast<double>(i) / 120.0;
  return grid;
}

NmeReport pose_binned_report(const std::vector<double>& per_sample_nme,
                             const std::vector<double>& yaw_radians) {
  EVODHM_REQUIRE(per_sample_nme.size() == yaw_radians.size(),
                 "per-sample NME / yaw length mismatch");
  NmeReport report;
  report.per_sample_nme = per_sample_nme;
  std::array<double, 3> sums{0, 0, 0};
  std::array<std::size_t, 3> counts{0, 0, 0};
  double total = 0.0;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < per_sample_nme.size(); ++i) {
    const double v = per_sample_nme[i];
    total += v;
    if (v > kFailureThreshold) ++failures;
    const double yaw_deg = std::abs(yaw_radians[i]) * 180.0 / M_PI;
    const std::size_t bin = yaw_deg < 30.0 ? 0 : (yaw_deg < 60.0 ? 1 : 2);
    sums[bin] += v;
    counts[bin] += 1;
  }
  report.mean_nme = total / static_cast<double>(per_sample_nme.size());
  report.failure_rate =
      static_cast<double>(failures) / static_cast<double>(per_sample_nme.size());
  for (std::size_t b = 0; b < 3; ++b)
    if (counts[b] > 0) report.pose_bin_means[b] = sums[b] / static_cast<double>(counts[b]);
  return report;
}

BenchReport benchmark(const TrainedModel& model, std::size_t warmup, std::size_t iters) {
  EVODHM_REQUIRE(iters >= 10, "benchmark needs at least 10 iterations");
  BenchReport report;
  report.parameters = model.parameter_count();
  report.mult_adds_per_frame = model.mult_adds_per_frame();

  const auto tmp =
      std::filesystem::temp_directory_path() / "evodhm_bench_model.evam";
  save_trained_model(model, tmp);
  report.serialized_bytes = static_cast<long long>(std::filesystem::file_size(tmp));
  std::filesystem::remove(tmp);

  Tensor image({model.cfg.image_size, model.cfg.image_size, 3});
  for (std::size_t i = 0; i < image.size(); ++i)
    image.data[i] = 0.5 + 0.3 * std::sin(static_cast<double>(i) * 0.013);

  for (std::size_t i = 0; i < warmup; ++i) (void)model.run(image);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < iters; ++i) (void)model.run(image);
  const auto t1 = std::chrono::steady_clock::now();
  const double seconds = std::chrono::duration<double>(t1 - t0).count();
  report.frames_per_second = static_cast<double>(iters) / seconds;
  return report;
}

std::string ced_curve_svg(const std::vector<std::pair<double, double>>& curve) {
  const double width = 480, height = 320, margin = 40;
  std::ostringstream oss;
  oss << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\">\n";
  oss << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const double x0 = margin, y0 = height - margin;
  const double plot_w = width - 2 * margin, plot_h = height - 2 * margin;
  oss << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 + plot_w << "\" y2=\""
      << y0 << "\" stroke=\"black\"/>\n";
  oss << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\""
      << y0 - plot_h << "\" stroke=\"black\"/>\n";
  if (!curve.empty()) {
    const double max_t = std::max(curve.back().first, 1e-9);
    oss << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (const auto& [t, f] : curve)
      oss << x0 + plot_w * (t / max_t) << "," << y0 - plot_h * f << " ";
    oss << "\"/>\n";
    // failure-threshold marker
    if (kFailureThreshold <= max_t) {
      const double fx = x0 + plot_w * (kFailureThreshold / max_t);
      oss << "<line x1=\"" << fx << "\" y1=\"" << y0 << "\" x2=\"" << fx << "\" y2=\""
          << y0 - plot_h << "\" stroke=\"tomato\" stroke-dasharray=\"4\"/>\n";
    }
  }
  oss << "<text x=\"" << x0 + plot_w / 2 << "\" y=\"" << height - 8
      << "\" font-size=\"12\" text-anchor=\"middle\">NME threshold</text>\n";
  oss << "<text x=\"12\" y=\"" << y0 - plot_h / 2
      << "\" font-size=\"12\" transform=\"rotate(-90 12 " << y0 - plot_h / 2
      << ")\" text-anchor=\"middle\">fraction of samples</text>\n";
  oss << "</svg>\n";
  return oss.str();
}

std::string nme_report_json(const NmeReport& report) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["mean_nme"] = report.mean_nme;
  j["failure_rate"] = report.failure_rate;
  j["failure_threshold"] = kFailureThreshold;
  j["per_sample_nme"] = report.per_sample_nme;
  const char* names[3] = {"yaw_0_30", "yaw_30_60", "yaw_60_90"};
  for (std::size_t b = 0; b < 3; ++b) {
    if (report.pose_bin_means[b])
      j["pose_bins"][names[b]] = *report.pose_bin_means[b];
    else
      j["pose_bins"][names[b]] = nullptr;
  }
  return j.dump(2);
}

std::string nme_report_csv(const NmeReport& report) {
  std::ostringstream oss;
  oss << "sample,nme\n";
  oss.precision(12);
  for (std::size_t i = 0; i < report.per_sample_nme.size(); ++i)
    oss << i << "," << report.per_sample_nme[i] << "\n";
  return oss.str();
}

std::string bench_report_json(const BenchReport& report) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["frames_per_second"] = report.frames_per_second;
  j["parameters"] = report.parameters;
  j["serialized_bytes"] = report.serialized_bytes;
  j["mult_adds_per_frame"] = report.mult_adds_per_frame;
  j["thread_policy"] = report.thread_policy;
  j["measurement_boundary"] = report.measurement_boundary;
  return j.dump(2);
}

}  // namespace evodhm
