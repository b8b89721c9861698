#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace fda {

/// Raised when an input violates a documented precondition or invariant.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for filesystem and serialization failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a numerical computation diverges (NaN/Inf loss and similar).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Voxel counts in (depth, height, width) order.
struct Shape3 {
  int64_t d = 0;
  int64_t h = 0;
  int64_t w = 0;

  constexpr int64_t numel() const { return d * h * w; }
  constexpr int64_t index(int64_t z, int64_t y, int64_t x) const { return (z * h + y) * w + x; }
  constexpr bool contains(int64_t z, int64_t y, int64_t x) const {
    return z >= 0 && y >= 0 && x >= 0 && z < d && y < h && x < w;
  }
  constexpr int64_t operator[](int axis) const { return axis == 0 ? d : (axis == 1 ? h : w); }
  friend constexpr bool operator==(const Shape3&, const Shape3&) = default;
};

/// Millimeters per voxel along (z, y, x).
struct Spacing {
  double z = 1.0;
  double y = 1.0;
  double x = 1.0;

  constexpr double operator[](int axis) const { return axis == 0 ? z : (axis == 1 ? y : x); }
  friend constexpr bool operator==(const Spacing&, const Spacing&) = default;
};

/// Integer voxel coordinate (z, y, x).
struct Voxel {
  int64_t z = 0;
  int64_t y = 0;
  int64_t x = 0;
  friend constexpr bool operator==(const Voxel&, const Voxel&) = default;
  friend constexpr auto operator<=>(const Voxel&, const Voxel&) = default;
};

inline std::string to_string(const Shape3& s) {
  return std::to_string(s.d) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

}  // namespace fda
