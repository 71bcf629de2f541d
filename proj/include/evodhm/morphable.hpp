#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "evodhm/serialize.hpp"
#include "evodhm/tensor.hpp"

namespace evodhm {

/// Linear 3D landmark shape model: mean shape plus identity and expression
/// basis deformations. Flattening convention: flat index = axis * L + k,
/// i.e. basis row r corresponds to mean_shape.data[r] (row-major 3xL).
struct MorphableModel {
  Tensor mean_shape;  // 3 x L, bounding cube normalized to side 1
  Tensor id_basis;    // 3L x K_id
  Tensor exp_basis;   // 3L x K_exp
  std::size_t landmark_count = 0;

  std::size_t k_id() const { return id_basis.dim(1); }
  std::size_t k_exp() const { return exp_basis.dim(1); }
  std::size_t param_dim() const { return 6 + k_id() + k_exp(); }

  void validate() const;
};

/// Pose + shape parameter vector p = [f, euler, t_2d, p_id, p_exp].
struct PoseShapeParams {
  double scale_f = 1.0;
  std::array<double, 3> euler{0, 0, 0};  // pitch, yaw, roll (radians)
  std::array<double, 2> translation_2d{0, 0};
  std::vector<double> p_id;
  std::vector<double> p_exp;

  std::size_t flat_dim() const { return 6 + p_id.size() + p_exp.size(); }
  std::vector<double> flatten() const;
  static PoseShapeParams from_flat(const std::vector<double>& v, std::size_t k_id,
                                   std::size_t k_exp);
};

struct Shape3D {
  Tensor coords;  // 3 x L
};

// Instrumentation: counts morphable-model evaluations (synthesize + project).
// Used to assert the fast pipeline never touches the model at inference time.
std::uint64_t morphable_eval_count();
void reset_morphable_eval_count();

Shape3D synthesize_shape(const MorphableModel& model, const PoseShapeParams& params);

/// R = R_z(roll) * R_y(yaw) * R_x(pitch); always orthonormal, det +1.
Tensor rotation_from_euler(const std::array<double, 3>& euler);

/// Analytic dR/d(pitch), dR/d(yaw), dR/d(roll) for the same composition.
std::array<Tensor, 3> rotation_derivatives(const std::array<double, 3>& euler);

/// Weak perspective projection F(p) = f*M*R*S + t_2d, output 2 x L in pixels.
Tensor project_weak_perspective(const MorphableModel& model, const PoseShapeParams& params);

/// Posed 3D shape f*R*S with t_2d added to the x/y rows; the z row keeps the
/// scaled rotated depth. Rows 0..1 equal project_weak_perspective exactly.
Tensor pose_transform_3d(const MorphableModel& model, const PoseShapeParams& params);

/// Deterministic synthetic stand-in for a licensed face basis: ellipsoidal
/// mean landmark layout with depth variation, smooth random basis columns
/// with magnitude decaying per column index.
MorphableModel generate_synthetic_model(std::uint64_t seed, std::size_t landmarks,
                                        std::size_t k_id, std::size_t k_exp);

std::vector<NamedTensor> model_to_chunks(const MorphableModel& model);
MorphableModel model_from_chunks(const std::vector<NamedTensor>& chunks);

}  // namespace evodhm
