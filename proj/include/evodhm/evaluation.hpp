#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "evodhm/tensor.hpp"

namespace evodhm {

struct TrainedModel;  // pipeline.hpp

struct NmeReport {
  std::vector<double> per_sample_nme;
  double mean_nme = 0.0;
  // yaw bins [0,30) / [30,60) / [60,90]; absent when a bin is empty
  std::array<std::optional<double>, 3> pose_bin_means;
  double failure_rate = 0.0;  // fraction with NME > 0.06
};

struct BenchReport {
  double frames_per_second = 0.0;  // single thread
  long long parameters = 0;
  long long serialized_bytes = 0;
  long long mult_adds_per_frame = 0;
  std::string thread_policy = "single-thread";
  std::string measurement_boundary =
      "forward pass including heat-map construction; model load excluded";
};

inline constexpr double kFailureThreshold = 0.06;

/// Mean per-landmark Euclidean error over d = sqrt(w_bbox * h_bbox).
double nme(const Tensor& predicted, const Tensor& ground_truth, double bbox_w, double bbox_h);

/// Tight axis-aligned extent (w, h) of a 2xL landmark set.
std::pair<double, double> bbox_from_landmarks(const Tensor& ground_truth);

/// Cumulative error distribution over a threshold grid; non-decreasing.
std::vector<std::pair<double, double>> ced_curve(const std::vector<double>& per_sample_nme,
                                                 const std::vector<double>& threshold_grid);

/// Default CED grid: 121 uniform points on [0, 0.12].
std::vector<double> default_ced_grid();

NmeReport pose_binned_report(const std::vector<double>& per_sample_nme,
                             const std::vector<double>& yaw_radians);

BenchReport benchmark(const TrainedModel& model, std::size_t warmup, std::size_t iters);

std::string ced_curve_svg(const std::vector<std::pair<double, double>>& curve);
std::string nme_report_json(const NmeReport& report);
std::string nme_report_csv(const NmeReport& report);
std::string bench_report_json(const BenchReport& report);

}  // namespace evodhm
