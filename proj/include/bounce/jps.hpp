#pragma once

#include <optional>
#include <vector>

#include "bounce/core.hpp"
#include "bounce/world.hpp"

namespace bounce {

// Jump point search over the occupancy grid (8-connected, unit-cost cells,
// no corner cutting; non-Free cells are blocked). Returns the full cell-center
// path from start to goal, start first, or nullopt when no path exists.
std::optional<std::vector<Vec2>> jps_path(const OccupancyGrid& grid, const Vec2& start,
                                          const Vec2& goal);

// Distance from p along dir to the first non-Free cell boundary, capped.
double free_distance(const OccupancyGrid& grid, const Vec2& p, const Vec2& dir, double max_range);

}  // namespace bounce
