#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gaintune/common.hpp"

namespace gt {

/// Extents of a dense 4-D array: (batch, channel, height, width).
struct Shape {
  std::int64_t n = 0, c = 0, h = 0, w = 0;

  std::int64_t numel() const { return n * c * h * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

/// Dense 64-bit float tensor, row-major with batch outermost and width
/// innermost.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0)
      : shape(s), data(static_cast<std::size_t>(s.numel()), fill) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
      throw ValidationError("tensor: negative extent in shape " + s.str());
  }
  Tensor(Shape s, std::vector<double> values) : shape(s), data(std::move(values)) {
    if (static_cast<std::int64_t>(data.size()) != s.numel())
      throw ValidationError("tensor: data length " + std::to_string(data.size()) +
                            " does not match shape " + s.str());
  }

  std::int64_t numel() const { return shape.numel(); }

  double& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
    return data[static_cast<std::size_t>(((n * shape.c + c) * shape.h + y) * shape.w + x)];
  }
  double at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
    return data[static_cast<std::size_t>(((n * shape.c + c) * shape.h + y) * shape.w + x)];
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Shape shape;
  std::vector<double> data;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!(a.shape == b.shape))
    throw ValidationError(std::string(op) + ": shape mismatch " + a.shape.str() +
                          " vs " + b.shape.str());
}

}  // namespace gt
