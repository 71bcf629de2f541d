#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace evodhm {

// Contract-violation errors carry enough context to locate the call site.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define EVODHM_REQUIRE(cond, msg)                                   \
  do {                                                              \
    if (!(cond)) throw ::evodhm::ContractViolation(std::string(msg)); \
  } while (0)

// Dense row-major N-d array of doubles. Images are channels-last (H, W, C).
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(count(shape), 0.0);
  }
  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    EVODHM_REQUIRE(data.size() == count(shape), "tensor data/shape mismatch");
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }
  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<std::size_t> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  std::size_t size() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // (row, col) for rank-2 tensors
  double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  // (h, w, c) for channels-last rank-3 tensors
  double& at(std::size_t h, std::size_t w, std::size_t c) {
    return data[(h * shape[1] + w) * shape[2] + c];
  }
  double at(std::size_t h, std::size_t w, std::size_t c) const {
    return data[(h * shape[1] + w) * shape[2] + c];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline void check_finite(const Tensor& t, const char* ctx) {
  if (!t.all_finite()) throw NumericFailure(std::string("non-finite values in ") + ctx);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  EVODHM_REQUIRE(a.same_shape(b), "max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace evodhm
