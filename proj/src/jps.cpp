#include "bounce/jps.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace bounce {

namespace {

struct Node {
  double f;
  double g;
  int index;
  int order;
  bool operator>(const Node& o) const {
    if (f != o.f) return f > o.f;
    if (g != o.g) return g > o.g;
    return order > o.order;
  }
};

struct JpsGrid {
  const OccupancyGrid& grid;
  bool walkable(int x, int y) const {
    return grid.valid_cell(x, y) && grid.at(x, y) == CellState::Free;
  }
  // Diagonal motion requires both adjacent cardinals free (no corner cutting).
  bool can_step(int x, int y, int dx, int dy) const {
    if (!walkable(x + dx, y + dy)) return false;
    if (dx != 0 && dy != 0) return walkable(x + dx, y) && walkable(x, y + dy);
    return true;
  }
};

double octile(int x0, int y0, int x1, int y1) {
  const int dx = std::abs(x1 - x0), dy = std::abs(y1 - y0);
  return (dx + dy) + (std::sqrt(2.0) - 2.0) * std::min(dx, dy);
}

// With corner cutting disallowed, an optimal turn happens one cell after the
// obstacle corner has been passed: scanning in cardinal direction d, the cell
// is a jump point when the diagonally-behind cell is blocked while the side
// cell is free.
bool cardinal_turn(const JpsGrid& g, int x, int y, int dx, int dy) {
  if (dx != 0)
    return (!g.walkable(x - dx, y + 1) && g.walkable(x, y + 1)) ||
           (!g.walkable(x - dx, y - 1) && g.walkable(x, y - 1));
  return (!g.walkable(x + 1, y - dy) && g.walkable(x + 1, y)) ||
         (!g.walkable(x - 1, y - dy) && g.walkable(x - 1, y));
}

std::optional<std::pair<int, int>> jump(const JpsGrid& g, int x, int y, int dx, int dy, int gx,
                                        int gy) {
  while (true) {
    if (!g.can_step(x, y, dx, dy)) return std::nullopt;
    x += dx;
    y += dy;
    if (x == gx && y == gy) return std::make_pair(x, y);
    if (dx != 0 && dy != 0) {
      // diagonal scans stop when either cardinal sub-scan finds something
      if (jump(g, x, y, dx, 0, gx, gy) || jump(g, x, y, 0, dy, gx, gy))
        return std::make_pair(x, y);
    } else {
      if (cardinal_turn(g, x, y, dx, dy)) return std::make_pair(x, y);
    }
  }
}

void successor_directions(const JpsGrid& g, int x, int y, int px, int py,
                          std::vector<std::pair<int, int>>& dirs) {
  dirs.clear();
  if (px == x && py == y) {  // start node: all directions
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        if ((dx || dy) && g.can_step(x, y, dx, dy)) dirs.emplace_back(dx, dy);
    return;
  }
  const int dx = (x > px) - (x < px);
  const int dy = (y > py) - (y < py);
  auto add = [&](int ax, int ay) {
    if (g.can_step(x, y, ax, ay)) dirs.emplace_back(ax, ay);
  };
  if (dx != 0 && dy != 0) {
    add(dx, 0);
    add(0, dy);
    add(dx, dy);
  } else if (dx != 0) {
    add(dx, 0);
    if (!g.walkable(x - dx, y + 1) && g.walkable(x, y + 1)) {
      add(0, 1);
      add(dx, 1);
    }
    if (!g.walkable(x - dx, y - 1) && g.walkable(x, y - 1)) {
      add(0, -1);
      add(dx, -1);
    }
  } else {
    add(0, dy);
    if (!g.walkable(x + 1, y - dy) && g.walkable(x + 1, y)) {
      add(1, 0);
      add(1, dy);
    }
    if (!g.walkable(x - 1, y - dy) && g.walkable(x - 1, y)) {
      add(-1, 0);
      add(-1, dy);
    }
  }
}

}  // namespace

std::optional<std::vector<Vec2>> jps_path(const OccupancyGrid& grid, const Vec2& start,
                                          const Vec2& goal) {
  if (!grid.in_extent(start) || !grid.in_extent(goal)) return std::nullopt;
  const JpsGrid g{grid};
  const int sx = grid.cell_x(start.x()), sy = grid.cell_y(start.y());
  const int gx = grid.cell_x(goal.x()), gy = grid.cell_y(goal.y());
  if (!g.walkable(gx, gy) || !g.walkable(sx, sy)) return std::nullopt;

  const int cols = grid.cols();
  auto key = [cols](int x, int y) { return y * cols + x; };
  const std::size_t n_cells = static_cast<std::size_t>(cols) * grid.rows();
  std::vector<double> best_g(n_cells, std::numeric_limits<double>::infinity());
  std::vector<int> parent(n_cells, -1);
  std::vector<bool> closed(n_cells, false);
  std::priority_queue<Node, std::vector<Node>, std::greater<Node>> open;

  best_g[key(sx, sy)] = 0;
  parent[key(sx, sy)] = key(sx, sy);
  int order = 0;
  open.push({octile(sx, sy, gx, gy), 0, key(sx, sy), order++});

  std::vector<std::pair<int, int>> dirs;
  while (!open.empty()) {
    const Node node = open.top();
    open.pop();
    const int x = node.index % cols, y = node.index / cols;
    if (closed[node.index]) continue;
    closed[node.index] = true;
    if (x == gx && y == gy) break;

    const int p = parent[node.index];
    successor_directions(g, x, y, p % cols, p / cols, dirs);
    for (const auto& [dx, dy] : dirs) {
      const auto jp = jump(g, x, y, dx, dy, gx, gy);
      if (!jp) continue;
      const auto [jx, jy] = *jp;
      const int jk = key(jx, jy);
      const double ng = best_g[node.index] + octile(x, y, jx, jy);
      if (ng < best_g[jk] - 1e-12) {
        best_g[jk] = ng;
        parent[jk] = node.index;
        open.push({ng + octile(jx, jy, gx, gy), ng, jk, order++});
      }
    }
  }
  if (!closed[key(gx, gy)]) return std::nullopt;

  // Expand jump segments back into per-cell steps so callers can walk the
  // path cell by cell.
  std::vector<std::pair<int, int>> cells;
  int cur = key(gx, gy);
  cells.emplace_back(gx, gy);
  while (parent[cur] != cur) {
    const int prev = parent[cur];
    int cx = cur % cols, cy = cur / cols;
    const int px = prev % cols, py = prev / cols;
    while (cx != px || cy != py) {
      cx -= (cx > px) - (cx < px);
      cy -= (cy > py) - (cy < py);
      cells.emplace_back(cx, cy);
    }
    cur = prev;
  }
  std::reverse(cells.begin(), cells.end());
  std::vector<Vec2> path;
  path.reserve(cells.size());
  for (const auto& [cx, cy] : cells) path.push_back(grid.cell_center(cx, cy));
  return path;
}

double free_distance(const OccupancyGrid& grid, const Vec2& p, const Vec2& dir, double max_range) {
  if (!grid.in_extent(p)) return 0.0;
  const Vec2 d = dir.normalized();
  const double res = grid.resolution();
  int x = grid.cell_x(p.x()), y = grid.cell_y(p.y());
  const int ox = x, oy = y;
  const int sx = d.x() > 0 ? 1 : (d.x() < 0 ? -1 : 0);
  const int sy = d.y() > 0 ? 1 : (d.y() < 0 ? -1 : 0);
  auto boundary = [&](int c, int s) { return (c + (s > 0 ? 1 : 0)) * res; };
  constexpr double inf = std::numeric_limits<double>::infinity();
  double t_max_x = sx != 0 ? (boundary(x, sx) - p.x()) / d.x() : inf;
  double t_max_y = sy != 0 ? (boundary(y, sy) - p.y()) / d.y() : inf;
  const double t_dx = sx != 0 ? res / std::abs(d.x()) : inf;
  const double t_dy = sy != 0 ? res / std::abs(d.y()) : inf;
  while (true) {
    const double t = std::min(t_max_x, t_max_y);
    if (t >= max_range) return max_range;
    if (t_max_x <= t_max_y) {
      x += sx;
      t_max_x += t_dx;
    } else {
      y += sy;
      t_max_y += t_dy;
    }
    if (!grid.valid_cell(x, y)) return t;
    if (grid.at(x, y) != CellState::Free && !(x == ox && y == oy)) return t;
  }
}

}  // namespace bounce
