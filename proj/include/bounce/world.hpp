#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "bounce/core.hpp"

namespace bounce {

enum class CellState : std::uint8_t { Free = 0, Occupied = 1, Infeasible = 2 };

struct RectObstacle {
  Vec2 min;
  Vec2 max;
};

struct CircleObstacle {
  Vec2 center;
  double radius = 0.0;
};

struct PolygonObstacle {
  std::vector<Vec2> vertices;  // simple polygon, either winding
};

using Obstacle = std::variant<RectObstacle, CircleObstacle, PolygonObstacle>;

struct MapSpec {
  double width_m = 0.0;
  double height_m = 0.0;
  double resolution = 1.0;       // epsilon_map, meters per cell
  double corner_radius = 0.3;    // P^inf inflation radius around convex corners
  std::vector<Obstacle> obstacles;
};

// Rasterized workspace. Immutable after construction except for the sim's
// known-map accumulation, which goes through mark_known_* and re-derives the
// infeasible cells.
class OccupancyGrid {
 public:
  OccupancyGrid() = default;
  OccupancyGrid(double width_m, double height_m, double resolution, double corner_radius);

  double width_m() const { return width_m_; }
  double height_m() const { return height_m_; }
  double resolution() const { return resolution_; }
  double corner_radius() const { return corner_radius_; }
  int cols() const { return cols_; }
  int rows() const { return rows_; }

  bool in_extent(const Vec2& p) const {
    return p.x() >= 0.0 && p.x() < width_m_ && p.y() >= 0.0 && p.y() < height_m_;
  }
  bool valid_cell(int cx, int cy) const { return cx >= 0 && cx < cols_ && cy >= 0 && cy < rows_; }

  int cell_x(double x) const { return static_cast<int>(std::floor(x / resolution_)); }
  int cell_y(double y) const { return static_cast<int>(std::floor(y / resolution_)); }
  Vec2 cell_center(int cx, int cy) const {
    return Vec2((cx + 0.5) * resolution_, (cy + 0.5) * resolution_);
  }

  CellState at(int cx, int cy) const { return cells_[idx(cx, cy)]; }
  void set(int cx, int cy, CellState s) { cells_[idx(cx, cy)] = s; }

  // State of the cell containing p. Throws InvalidArgument outside the extent.
  CellState state_at(const Vec2& p) const;

  bool is_free(const Vec2& p) const { return state_at(p) == CellState::Free; }

  // True iff every cell touched by segment ab is Free. Exact supercover
  // traversal; endpoints are canonicalized so the result is symmetric in
  // (a, b). Throws if either endpoint is outside the extent.
  bool segment_free(const Vec2& a, const Vec2& b) const;

  // Cells touched by segment ab (supercover). Exposed for the mapping update
  // and for tests.
  std::vector<std::pair<int, int>> supercover(const Vec2& a, const Vec2& b) const;

  std::size_t count(CellState s) const;

  // Occupied-region connected components (4-connectivity). Label -1 for
  // non-occupied cells. Computed lazily, cached.
  const std::vector<int>& occupied_components() const;
  int component_at(int cx, int cy) const { return occupied_components()[idx(cx, cy)]; }

  // Re-derive Infeasible cells from the current Occupied set: free cells whose
  // cell rectangle lies within corner_radius of a convex corner of the
  // occupied region. Clears previous Infeasible marks.
  void mark_infeasible_corners();

  bool operator==(const OccupancyGrid& other) const {
    return width_m_ == other.width_m_ && height_m_ == other.height_m_ &&
           resolution_ == other.resolution_ && corner_radius_ == other.corner_radius_ &&
           cells_ == other.cells_;
  }

 private:
  std::size_t idx(int cx, int cy) const { return static_cast<std::size_t>(cy) * cols_ + cx; }

  double width_m_ = 0.0;
  double height_m_ = 0.0;
  double resolution_ = 1.0;
  double corner_radius_ = 0.3;
  int cols_ = 0;
  int rows_ = 0;
  std::vector<CellState> cells_;
  mutable std::vector<int> components_;
  mutable bool components_valid_ = false;
};

// Rasterize a MapSpec: cells whose center lies inside an obstacle are
// Occupied, the outermost cell ring is Occupied, free cells near convex
// obstacle corners are Infeasible. Deterministic: identical spec gives a
// bit-identical grid.
OccupancyGrid build_grid(const MapSpec& spec);

struct Beam {
  double angle = 0.0;  // rad, world frame
  double range = 0.0;  // m
  bool hit = false;
};

struct Scan {
  Vec2 origin;
  std::vector<Beam> beams;  // angles strictly increasing
  double max_range = 0.0;
};

// Emulated 2D range sensor: n_beams rays at angles 2*pi*i/n_beams, each
// reporting the distance to the first non-Free cell boundary, capped at
// max_range. Throws if the origin cell is Occupied. An origin inside an
// Infeasible cell is allowed (that space is physically free).
Scan raycast_scan(const OccupancyGrid& grid, const Vec2& origin, int n_beams, double max_range);

struct SurfaceSegment {
  Vec2 a;                // endpoints, world frame
  Vec2 b;
  Vec2 tangent;          // unit, tangent = normal rotated -90 deg
  Vec2 normal;           // unit, points into free space
  int source = -1;       // index of the scan run this segment was fitted from
  int first_beam = -1;   // beam index range of the run (inclusive)
  int last_beam = -1;
};

struct SurfaceFitParams {
  double gap_threshold;      // split runs at range jumps larger than this
  double angle_threshold;    // rad, split runs at direction changes larger than this
  double fit_tol;            // max RMS point-to-line residual; worse fits are dropped
  static SurfaceFitParams defaults_for(double resolution) {
    return {2.0 * resolution, 20.0 * M_PI / 180.0, 0.5 * resolution};
  }
};

// Split scan hits into runs at range discontinuities and corners, then fit a
// total-least-squares line to each run. Runs with fewer than two points or an
// RMS residual above fit_tol are discarded.
std::vector<SurfaceSegment> fit_surfaces(const OccupancyGrid& grid, const Scan& scan,
                                         const SurfaceFitParams& params);

// Local frame at a contact point: x along the surface normal (away from the
// surface, toward the robot), y tangent, det(R_wc) = +1.
struct CollisionFrame {
  Vec2 origin;
  Vec2 normal;
  Vec2 tangent;

  Mat2 rotation_world_from_frame() const {
    Mat2 r;
    r.col(0) = normal;
    r.col(1) = tangent;
    return r;
  }
  Vec2 to_frame(const Vec2& world_vec) const {
    return rotation_world_from_frame().transpose() * world_vec;
  }
  Vec2 to_world(const Vec2& frame_vec) const { return rotation_world_from_frame() * frame_vec; }
};

// Build the collision frame for a contact at p_c supported by the given
// surface. Throws InvalidArgument("no supporting surface") when p_c projects
// outside the segment inflated by robot_radius.
CollisionFrame collision_frame(const SurfaceSegment& surface, const Vec2& p_c,
                               double robot_radius);

// Exact Euclidean distance transform of the Occupied set (distances measured
// between cell centers, queried continuously). Nearest-occupied-cell labels
// are kept so gradients are consistent with the evaluated distance.
class DistanceField {
 public:
  DistanceField() = default;
  // exclude_components: occupied components to leave out of the field
  // (used when refining through planned collisions).
  explicit DistanceField(const OccupancyGrid& grid, const std::vector<int>& exclude_components = {});

  bool empty() const { return nearest_.empty(); }

  // Distance from p to the nearest (non-excluded) occupied cell center.
  // Returns +inf when there are no occupied cells. Out-of-extent points are
  // clamped to the extent.
  double distance(const Vec2& p) const;

  // d(distance)/dp. Zero at points with no defined direction.
  Vec2 gradient(const Vec2& p) const;

  // Distance from p to the nearest occupied cell rectangle (not center);
  // used when relocating collision waypoints flush with an obstacle.
  double boundary_distance(const Vec2& p) const;
  Vec2 nearest_boundary_point(const Vec2& p) const;

  // Cell index of the nearest occupied cell, (-1,-1) when the field is empty.
  std::pair<int, int> nearest_occupied_cell(const Vec2& p) const {
    return empty() ? std::pair<int, int>{-1, -1} : nearest_cell(p);
  }

 private:
  std::pair<int, int> nearest_cell(const Vec2& p) const;

  double resolution_ = 1.0;
  int cols_ = 0;
  int rows_ = 0;
  double width_m_ = 0.0;
  double height_m_ = 0.0;
  std::vector<std::int32_t> nearest_;  // flattened (cx,cy) of nearest occupied cell, -1 if none
};

}  // namespace bounce
