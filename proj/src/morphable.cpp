#include "evodhm/morphable.hpp"

#include <atomic>
#include <cmath>
#include <random>

namespace evodhm {

namespace {
std::atomic<std::uint64_t> g_mm_evals{0};
}

std::uint64_t morphable_eval_count() { return g_mm_evals.load(); }
void reset_morphable_eval_count() { g_mm_evals.store(0); }

void MorphableModel::validate() const {
  EVODHM_REQUIRE(landmark_count >= 1, "landmark_count must be positive");
  EVODHM_REQUIRE(mean_shape.rank() == 2 && mean_shape.dim(0) == 3 &&
                     mean_shape.dim(1) == landmark_count,
                 "mean_shape must be 3xL");
  EVODHM_REQUIRE(id_basis.rank() == 2 && id_basis.dim(0) == 3 * landmark_count,
                 "id_basis row count must equal 3L");
  EVODHM_REQUIRE(exp_basis.rank() == 2 && exp_basis.dim(0) == 3 * landmark_count,
                 "exp_basis row count must equal 3L");
  check_finite(mean_shape, "mean_shape");
  check_finite(id_basis, "id_basis");
  check_finite(exp_basis, "exp_basis");
}

std::vector<double> PoseShapeParams::flatten() const {
  std::vector<double> v;
  v.reserve(flat_dim());
  v.push_back(scale_f);
  v.insert(v.end(), euler.begin(), euler.end());
  v.insert(v.end(), translation_2d.begin(), translation_2d.end());
  v.insert(v.end(), p_id.begin(), p_id.end());
  v.insert(v.end(), p_exp.begin(), p_exp.end());
  return v;
}

PoseShapeParams PoseShapeParams::from_flat(const std::vector<double>& v, std::size_t k_id,
                                           std::size_t k_exp) {
  EVODHM_REQUIRE(v.size() == 6 + k_id + k_exp, "flat param vector length mismatch");
  PoseShapeParams p;
  p.scale_f = v[0];
  p.euler = {v[1], v[2], v[3]};
  p.translation_2d = {v[4], v[5]};
  p.p_id.assign(v.begin() + 6, v.begin() + 6 + static_cast<std::ptrdiff_t>(k_id));
  p.p_exp.assign(v.begin() + 6 + static_cast<std::ptrdiff_t>(k_id), v.end());
  return p;
}

Shape3D synthesize_shape(const MorphableModel& model, const PoseShapeParams& params) {
  EVODHM_REQUIRE(params.p_id.size() == model.k_id(), "p_id length mismatch");
  EVODHM_REQUIRE(params.p_exp.size() == model.k_exp(), "p_exp length mismatch");
  g_mm_evals.fetch_add(1, std::memory_order_relaxed);
  const std::size_t n = 3 * model.landmark_count;
  Tensor out = model.mean_shape;
  for (std::size_t r = 0; r < n; ++r) {
    double acc = 0.0;
    const double* id_row = &model.id_basis.data[r * model.k_id()];
    for (std::size_t c = 0; c < model.k_id(); ++c) acc += id_row[c] * params.p_id[c];
    const double* ex_row = &model.exp_basis.data[r * model.k_exp()];
    for (std::size_t c = 0; c < model.k_exp(); ++c) acc += ex_row[c] * params.p_exp[c];
    out.data[r] += acc;
  }
  return Shape3D{std::move(out)};
}

Tensor rotation_from_euler(const std::array<double, 3>& euler) {
  const double cp = std::cos(euler[0]), sp = std::sin(euler[0]);
  const double cy = std::cos(euler[1]), sy = std::sin(euler[1]);
  const double cr = std::cos(euler[2]), sr = std::sin(euler[2]);
  // R = Rz(roll) * Ry(yaw) * Rx(pitch)
  Tensor r({3, 3});
  r.at(0, 0) = cr * cy;
  r.at(0, 1) = cr * sy * sp - sr * cp;
  r.at(0, 2) = cr * sy * cp + sr * sp;
  r.at(1, 0) = sr * cy;
  r.at(1, 1) = sr * sy * sp + cr * cp;
  r.at(1, 2) = sr * sy * cp - cr * sp;
  r.at(2, 0) = -sy;
  r.at(2, 1) = cy * sp;
  r.at(2, 2) = cy * cp;
  return r;
}

std::array<Tensor, 3> rotation_derivatives(const std::array<double, 3>& euler) {
  const double cp = std::cos(euler[0]), sp = std::sin(euler[0]);
  const double cy = std::cos(euler[1]), sy = std::sin(euler[1]);
  const double cr = std::cos(euler[2]), sr = std::sin(euler[2]);
  Tensor dp({3, 3}), dy({3, 3}), dr({3, 3});
  // d/d(pitch)
  dp.at(0, 0) = 0;
  dp.at(0, 1) = cr * sy * cp + sr * sp;
  dp.at(0, 2) = -cr * sy * sp + sr * cp;
  dp.at(1, 0) = 0;
  dp.at(1, 1) = sr * sy * cp - cr * sp;
  dp.at(1, 2) = -sr * sy * sp - cr * cp;
  dp.at(2, 0) = 0;
  dp.at(2, 1) = cy * cp;
  dp.at(2, 2) = -cy * sp;
  // d/d(yaw)
  dy.at(0, 0) = -cr * sy;
  dy.at(0, 1) = cr * cy * sp;
  dy.at(0, 2) = cr * cy * cp;
  dy.at(1, 0) = -sr * sy;
  dy.at(1, 1) = sr * cy * sp;
  dy.at(1, 2) = sr * cy * cp;
  dy.at(2, 0) = -cy;
  dy.at(2, 1) = -sy * sp;
  dy.at(2, 2) = -sy * cp;
  // d/d(roll)
  dr.at(0, 0) = -sr * cy;
  dr.at(0, 1) = -sr * sy * sp - cr * cp;
  dr.at(0, 2) = -sr * sy * cp + cr * sp;
  dr.at(1, 0) = cr * cy;
  dr.at(1, 1) = cr * sy * sp - sr * cp;
  dr.at(1, 2) = cr * sy * cp + sr * sp;
  dr.at(2, 0) = 0;
  dr.at(2, 1) = 0;
  dr.at(2, 2) = 0;
  return {std::move(dp), std::move(dy), std::move(dr)};
}

Tensor pose_transform_3d(const MorphableModel& model, const PoseShapeParams& params) {
  EVODHM_REQUIRE(params.scale_f > 0, "scale_f must be positive");
  Shape3D s = synthesize_shape(model, params);
  const Tensor r = rotation_from_euler(params.euler);
  const std::size_t L = model.landmark_count;
  Tensor out({3, L});
  for (std::size_t k = 0; k < L; ++k) {
    const double x = s.coords.at(0, k), y = s.coords.at(1, k), z = s.coords.at(2, k);
    for (std::size_t i = 0; i < 3; ++i) {
      double v = params.scale_f * (r.at(i, 0) * x + r.at(i, 1) * y + r.at(i, 2) * z);
      if (i < 2) v += params.translation_2d[i];
      out.at(i, k) = v;
    }
  }
  return out;
}

Tensor project_weak_perspective(const MorphableModel& model, const PoseShapeParams& params) {
  Tensor posed = pose_transform_3d(model, params);
  const std::size_t L = model.landmark_count;
  Tensor out({2, L});
  for (std::size_t k = 0; k < L; ++k) {
    out.at(0, k) = posed.at(0, k);
    out.at(1, k) = posed.at(1, k);
  }
  return out;
}

MorphableModel generate_synthetic_model(std::uint64_t seed, std::size_t landmarks,
                                        std::size_t k_id, std::size_t k_exp) {
  EVODHM_REQUIRE(landmarks >= 4, "need at least 4 landmarks");
  EVODHM_REQUIRE(k_id >= 1 && k_exp >= 1, "basis counts must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);

  const std::size_t L = landmarks;
  Tensor mean({3, L});
  // Golden-angle spiral over the front hemisphere of an ellipsoid: a face-like
  // oval layout with depth falling off toward the rim.
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (std::size_t k = 0; k < L; ++k) {
    const double u = (static_cast<double>(k) + 0.5) / static_cast<double>(L);
    const double rad = std::sqrt(u);
    const double ang = golden * static_cast<double>(k);
    const double x = 0.45 * rad * std::cos(ang);
    const double y = 0.55 * rad * std::sin(ang);
    const double z = 0.35 * std::sqrt(std::max(0.0, 1.0 - rad * rad));
    mean.at(0, k) = x;
    mean.at(1, k) = y;
    mean.at(2, k) = z;
  }
  // Normalize bounding cube to side 1, centered at the origin.
  for (std::size_t axis = 0; axis < 3; ++axis) {
    double lo = mean.at(axis, 0), hi = lo;
    for (std::size_t k = 1; k < L; ++k) {
      lo = std::min(lo, mean.at(axis, k));
      hi = std::max(hi, mean.at(axis, k));
    }
    const double mid = 0.5 * (lo + hi);
    for (std::size_t k = 0; k < L; ++k) mean.at(axis, k) -= mid;
  }
  double extent = 0.0;
  for (double v : mean.data) extent = std::max(extent, std::abs(v));
  for (double& v : mean.data) v /= (2.0 * extent);

  auto make_basis = [&](std::size_t cols) {
    Tensor basis({3 * L, cols});
    for (std::size_t c = 0; c < cols; ++c) {
      // Smooth deformation field: few low-frequency sinusoids over the
      // landmark layout, amplitude decaying with column index.
      const double amp = 0.08 / (1.0 + 0.5 * static_cast<double>(c));
      std::array<double, 3> ph{phase(rng), phase(rng), phase(rng)};
      std::array<double, 3> freq{1.0 + static_cast<double>(c % 3),
                                 1.0 + static_cast<double>((c + 1) % 3),
                                 1.0 + static_cast<double>((c + 2) % 3)};
      for (std::size_t axis = 0; axis < 3; ++axis) {
        for (std::size_t k = 0; k < L; ++k) {
          const double sx = mean.at(0, k), sy = mean.at(1, k);
          const double val =
              amp * std::sin(freq[axis] * (2.0 * M_PI) * (sx + 0.31 * sy) + ph[axis]);
          basis.data[(axis * L + k) * cols + c] = val;
        }
      }
    }
    return basis;
  };

  MorphableModel model;
  model.mean_shape = std::move(mean);
  model.id_basis = make_basis(k_id);
  model.exp_basis = make_basis(k_exp);
  model.landmark_count = L;
  model.validate();
  return model;
}

std::vector<NamedTensor> model_to_chunks(const MorphableModel& model) {
  return {{"mean_shape", model.mean_shape},
          {"id_basis", model.id_basis},
          {"exp_basis", model.exp_basis}};
}

MorphableModel model_from_chunks(const std::vector<NamedTensor>& chunks) {
  MorphableModel m;
  m.mean_shape = find_chunk(chunks, "mean_shape");
  m.id_basis = find_chunk(chunks, "id_basis");
  m.exp_basis = find_chunk(chunks, "exp_basis");
  m.landmark_count = m.mean_shape.dim(1);
  m.validate();
  return m;
}

}  // namespace evodhm
