#include <doctest.h>

#include <cmath>
#include <random>

#include "evodhm/morphable.hpp"
#include "oracles.hpp"

using namespace evodhm;

namespace {

const double kPi = 3.14159265358979323846;

PoseShapeParams random_params(const MorphableModel& mm, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PoseShapeParams p;
  p.scale_f = 1.0 + 0.5 * u(rng);
  p.euler = {0.4 * u(rng), 1.2 * u(rng), 0.4 * u(rng)};
  p.translation_2d = {10 * u(rng), 10 * u(rng)};
  p.p_id.resize(mm.k_id());
  p.p_exp.resize(mm.k_exp());
  for (auto& v : p.p_id) v = u(rng);
  for (auto& v : p.p_exp) v = u(rng);
  return p;
}

// Scalar-loop oracle for S = mean + E_id p_id + E_exp p_exp, flat index
// convention axis * L + k.
Tensor naive_synthesize(const MorphableModel& mm, const PoseShapeParams& p) {
  const std::size_t L = mm.landmark_count;
  Tensor s = mm.mean_shape;
  for (std::size_t r = 0; r < 3 * L; ++r) {
    for (std::size_t c = 0; c < mm.k_id(); ++c) s.data[r] += mm.id_basis.at(r, c) * p.p_id[c];
    for (std::size_t c = 0; c < mm.k_exp(); ++c)
      s.data[r] += mm.exp_basis.at(r, c) * p.p_exp[c];
  }
  return s;
}

}  // namespace

TEST_CASE("shape synthesis matches the scalar-loop oracle") {
  auto mm = generate_synthetic_model(11, 31, 6, 3);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = random_params(mm, rng);
    CHECK(max_abs_diff(synthesize_shape(mm, p).coords, naive_synthesize(mm, p)) < 1e-12);
  }
}

TEST_CASE("quarter-turn yaw maps +x onto -z") {
  Tensor r = rotation_from_euler({0.0, kPi / 2.0, 0.0});
  // column 0 of R is the image of (1,0,0)
  CHECK(r.at(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.at(1, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.at(2, 0) == doctest::Approx(-1.0));
}

TEST_CASE("rotation matrices are orthonormal with det +1") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-kPi, kPi);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor r = rotation_from_euler({u(rng), u(rng), u(rng)});
    // R R^T == I
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double dot = 0;
        for (std::size_t k = 0; k < 3; ++k) dot += r.at(i, k) * r.at(j, k);
        CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
      }
    double det = r.at(0, 0) * (r.at(1, 1) * r.at(2, 2) - r.at(1, 2) * r.at(2, 1)) -
                 r.at(0, 1) * (r.at(1, 0) * r.at(2, 2) - r.at(1, 2) * r.at(2, 0)) +
                 r.at(0, 2) * (r.at(1, 0) * r.at(2, 1) - r.at(1, 1) * r.at(2, 0));
    CHECK(det == doctest::Approx(1.0));
  }
}

TEST_CASE("analytic rotation derivatives match central differences") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  const double h = 1e-6;
  for (int trial = 0; trial < 10; ++trial) {
    std::array<double, 3> e{u(rng), u(rng), u(rng)};
    auto d = rotation_derivatives(e);
    for (int axis = 0; axis < 3; ++axis) {
      auto ep = e, em = e;
      ep[axis] += h;
      em[axis] -= h;
      Tensor rp = rotation_from_euler(ep), rm = rotation_from_euler(em);
      for (std::size_t i = 0; i < 9; ++i) {
        double fd = (rp.data[i] - rm.data[i]) / (2 * h);
        CHECK(d[axis].data[i] == doctest::Approx(fd).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("projection against an explicit per-landmark loop") {
  auto mm = generate_synthetic_model(2, 17, 4, 2);
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = random_params(mm, rng);
    Tensor s = naive_synthesize(mm, p);
    Tensor r = rotation_from_euler(p.euler);
    const std::size_t L = mm.landmark_count;
    Tensor expect({2, L});
    for (std::size_t k = 0; k < L; ++k)
      for (std::size_t row = 0; row < 2; ++row) {
        double acc = 0;
        for (std::size_t ax = 0; ax < 3; ++ax) acc += r.at(row, ax) * s.data[ax * L + k];
        expect.at(row, k) = p.scale_f * acc + p.translation_2d[row];
      }
    CHECK(max_abs_diff(project_weak_perspective(mm, p), expect) < 1e-12);
  }
}

TEST_CASE("posed 3D shape agrees with the 2D projection on its first two rows") {
  auto mm = generate_synthetic_model(8, 21, 5, 3);
  std::mt19937_64 rng(41);
  auto p = random_params(mm, rng);
  Tensor posed = pose_transform_3d(mm, p);
  Tensor proj = project_weak_perspective(mm, p);
  const std::size_t L = mm.landmark_count;
  for (std::size_t k = 0; k < L; ++k) {
    CHECK(posed.at(0, k) == doctest::Approx(proj.at(0, k)).epsilon(1e-14));
    CHECK(posed.at(1, k) == doctest::Approx(proj.at(1, k)).epsilon(1e-14));
  }
}

TEST_CASE("parameter vector flatten/from_flat round trip") {
  PoseShapeParams p;
  p.scale_f = 2.5;
  p.euler = {0.1, -0.2, 0.3};
  p.translation_2d = {4, -5};
  p.p_id = {1, 2, 3};
  p.p_exp = {-1, -2};
  auto flat = p.flatten();
  REQUIRE(flat.size() == 11);
  auto q = PoseShapeParams::from_flat(flat, 3, 2);
  CHECK(q.flatten() == flat);
}

TEST_CASE("synthetic model generation is deterministic and unit-cube normalized") {
  auto a = generate_synthetic_model(123, 68, 8, 4);
  auto b = generate_synthetic_model(123, 68, 8, 4);
  CHECK(a.mean_shape.data == b.mean_shape.data);
  CHECK(a.id_basis.data == b.id_basis.data);

  auto c = generate_synthetic_model(124, 68, 8, 4);
  CHECK(max_abs_diff(a.id_basis, c.id_basis) > 0);

  double widest = 0;
  const std::size_t L = a.landmark_count;
  for (std::size_t ax = 0; ax < 3; ++ax) {
    double lo = 1e9, hi = -1e9;
    for (std::size_t k = 0; k < L; ++k) {
      lo = std::min(lo, a.mean_shape.at(ax, k));
      hi = std::max(hi, a.mean_shape.at(ax, k));
    }
    widest = std::max(widest, hi - lo);
    CHECK(std::abs(lo + hi) < 1e-9);  // centered
  }
  CHECK(widest == doctest::Approx(1.0));
}

TEST_CASE("model chunk round trip and eval counter") {
  auto mm = generate_synthetic_model(55, 12, 3, 2);
  auto back = model_from_chunks(model_to_chunks(mm));
  CHECK(back.landmark_count == mm.landmark_count);
  CHECK(back.mean_shape.data == mm.mean_shape.data);
  CHECK(back.exp_basis.data == mm.exp_basis.data);

  reset_morphable_eval_count();
  PoseShapeParams p;
  p.p_id.assign(mm.k_id(), 0.0);
  p.p_exp.assign(mm.k_exp(), 0.0);
  synthesize_shape(mm, p);
  synthesize_shape(mm, p);
  CHECK(morphable_eval_count() == 2);
}
