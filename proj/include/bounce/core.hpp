#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace bounce {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

// Rotate v by +90 degrees (counter-clockwise).
inline Vec2 rot90(const Vec2& v) { return Vec2(-v.y(), v.x()); }

// Rotate v by -90 degrees (clockwise).
inline Vec2 rot270(const Vec2& v) { return Vec2(v.y(), -v.x()); }

inline Mat2 rotation(double angle) {
  Mat2 r;
  r << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return r;
}

// sign with sign(0) := +1, so friction terms are deterministic at rest.
inline double sign_pos(double x) { return x < 0.0 ? -1.0 : 1.0; }

// Thrown when an operation is called outside its stated preconditions or
// when inputs are structurally invalid (bad map spec, bad config, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  explicit InvalidArgument(const std::string& what) : std::invalid_argument(what) {}
};

// Thrown for runtime faults that indicate a broken invariant rather than a
// recoverable planning outcome (tunneling, singular KKT system, ...).
class RuntimeFault : public std::runtime_error {
 public:
  explicit RuntimeFault(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bounce
