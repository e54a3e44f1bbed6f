#include "bounce/world.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace bounce {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool point_in_rect(const Vec2& p, const RectObstacle& r) {
  return p.x() >= r.min.x() && p.x() <= r.max.x() && p.y() >= r.min.y() && p.y() <= r.max.y();
}

bool point_in_circle(const Vec2& p, const CircleObstacle& c) {
  return (p - c.center).squaredNorm() <= c.radius * c.radius;
}

bool point_on_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double cross = ab.x() * (p.y() - a.y()) - ab.y() * (p.x() - a.x());
  if (std::abs(cross) > 1e-12 * std::max(1.0, ab.norm())) return false;
  const double dot = (p - a).dot(ab);
  return dot >= -1e-12 && dot <= ab.squaredNorm() + 1e-12;
}

bool point_in_polygon(const Vec2& p, const PolygonObstacle& poly) {
  const auto& v = poly.vertices;
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (point_on_segment(p, v[i], v[(i + 1) % n])) return true;
  }
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    if ((v[i].y() > p.y()) != (v[j].y() > p.y())) {
      const double x_cross =
          v[j].x() + (p.y() - v[j].y()) / (v[i].y() - v[j].y()) * (v[i].x() - v[j].x());
      if (p.x() < x_cross) inside = !inside;
    }
  }
  return inside;
}

bool point_in_obstacle(const Vec2& p, const Obstacle& obs) {
  return std::visit(
      [&](const auto& o) -> bool {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, RectObstacle>) return point_in_rect(p, o);
        if constexpr (std::is_same_v<T, CircleObstacle>) return point_in_circle(p, o);
        if constexpr (std::is_same_v<T, PolygonObstacle>) return point_in_polygon(p, o);
      },
      obs);
}

// Proper or improper intersection of open segments (shared endpoints of
// adjacent polygon edges are skipped by the caller).
bool segments_intersect(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  auto orient = [](const Vec2& p, const Vec2& q, const Vec2& r) {
    const double v = (q.x() - p.x()) * (r.y() - p.y()) - (q.y() - p.y()) * (r.x() - p.x());
    if (std::abs(v) < 1e-12) return 0;
    return v > 0 ? 1 : -1;
  };
  const int o1 = orient(a, b, c), o2 = orient(a, b, d);
  const int o3 = orient(c, d, a), o4 = orient(c, d, b);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && point_on_segment(c, a, b)) return true;
  if (o2 == 0 && point_on_segment(d, a, b)) return true;
  if (o3 == 0 && point_on_segment(a, c, d)) return true;
  if (o4 == 0 && point_on_segment(b, c, d)) return true;
  return false;
}

void validate_obstacle(const Obstacle& obs, double w, double h, std::size_t index) {
  const std::string tag = "obstacle " + std::to_string(index);
  std::visit(
      [&](const auto& o) {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, RectObstacle>) {
          if (o.min.x() > o.max.x() || o.min.y() > o.max.y())
            throw InvalidArgument(tag + ": rect min exceeds max");
          if (o.min.x() < 0 || o.min.y() < 0 || o.max.x() > w || o.max.y() > h)
            throw InvalidArgument(tag + ": rect outside map bounds");
        }
        if constexpr (std::is_same_v<T, CircleObstacle>) {
          if (o.radius < 0) throw InvalidArgument(tag + ": negative radius");
          if (o.center.x() - o.radius < 0 || o.center.y() - o.radius < 0 ||
              o.center.x() + o.radius > w || o.center.y() + o.radius > h)
            throw InvalidArgument(tag + ": circle outside map bounds");
        }
        if constexpr (std::is_same_v<T, PolygonObstacle>) {
          const auto& v = o.vertices;
          if (v.size() < 3) throw InvalidArgument(tag + ": polygon needs >= 3 vertices");
          for (const auto& p : v)
            if (p.x() < 0 || p.y() < 0 || p.x() > w || p.y() > h)
              throw InvalidArgument(tag + ": polygon outside map bounds");
          const std::size_t n = v.size();
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
              // skip adjacent edges (they share a vertex)
              if (j == i || (j + 1) % n == i || (i + 1) % n == j) continue;
              if (segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]))
                throw InvalidArgument(tag + ": self-intersecting polygon");
            }
          }
        }
      },
      obs);
}

int cells_along(double extent, double resolution, const char* axis) {
  const double n = extent / resolution;
  const int ni = static_cast<int>(std::llround(n));
  if (ni < 3 || std::abs(n - ni) > 1e-9)
    throw InvalidArgument(std::string("map ") + axis +
                          " extent must be an integral number of cells (>= 3)");
  return ni;
}

double point_rect_distance(const Vec2& p, const Vec2& lo, const Vec2& hi, Vec2* closest = nullptr) {
  const double cx = std::clamp(p.x(), lo.x(), hi.x());
  const double cy = std::clamp(p.y(), lo.y(), hi.y());
  if (closest) *closest = Vec2(cx, cy);
  return (p - Vec2(cx, cy)).norm();
}

}  // namespace

OccupancyGrid::OccupancyGrid(double width_m, double height_m, double resolution,
                             double corner_radius)
    : width_m_(width_m), height_m_(height_m), resolution_(resolution),
      corner_radius_(corner_radius) {
  if (resolution <= 0) throw InvalidArgument("resolution must be > 0");
  cols_ = cells_along(width_m, resolution, "x");
  rows_ = cells_along(height_m, resolution, "y");
  cells_.assign(static_cast<std::size_t>(cols_) * rows_, CellState::Free);
}

CellState OccupancyGrid::state_at(const Vec2& p) const {
  if (!in_extent(p)) throw InvalidArgument("query point outside map extent");
  return at(cell_x(p.x()), cell_y(p.y()));
}

std::vector<std::pair<int, int>> OccupancyGrid::supercover(const Vec2& a0, const Vec2& b0) const {
  if (!in_extent(a0) || !in_extent(b0))
    throw InvalidArgument("segment endpoint outside map extent");
  // Canonical endpoint order keeps the traversal symmetric in (a, b).
  Vec2 a = a0, b = b0;
  if (b.x() < a.x() || (b.x() == a.x() && b.y() < a.y())) std::swap(a, b);

  std::vector<std::pair<int, int>> out;
  int x = cell_x(a.x()), y = cell_y(a.y());
  const int xe = cell_x(b.x()), ye = cell_y(b.y());
  out.emplace_back(x, y);
  const double dx = b.x() - a.x(), dy = b.y() - a.y();
  const int sx = dx > 0 ? 1 : (dx < 0 ? -1 : 0);
  const int sy = dy > 0 ? 1 : (dy < 0 ? -1 : 0);
  auto boundary = [&](int c, int s) { return (c + (s > 0 ? 1 : 0)) * resolution_; };
  double t_max_x = sx != 0 ? (boundary(x, sx) - a.x()) / dx : kInf;
  double t_max_y = sy != 0 ? (boundary(y, sy) - a.y()) / dy : kInf;
  const double t_dx = sx != 0 ? resolution_ / std::abs(dx) : kInf;
  const double t_dy = sy != 0 ? resolution_ / std::abs(dy) : kInf;
  constexpr double eps = 1e-12;

  const int max_steps = std::abs(xe - x) + std::abs(ye - y) + 4;
  for (int step = 0; step < max_steps && (x != xe || y != ye); ++step) {
    if (t_max_x < t_max_y - eps) {
      x += sx;
      t_max_x += t_dx;
      out.emplace_back(x, y);
    } else if (t_max_y < t_max_x - eps) {
      y += sy;
      t_max_y += t_dy;
      out.emplace_back(x, y);
    } else {
      // Exact corner crossing: the segment touches both axis-neighbors too.
      if (valid_cell(x + sx, y)) out.emplace_back(x + sx, y);
      if (valid_cell(x, y + sy)) out.emplace_back(x, y + sy);
      x += sx;
      y += sy;
      t_max_x += t_dx;
      t_max_y += t_dy;
      out.emplace_back(x, y);
    }
  }
  if (out.back() != std::make_pair(xe, ye)) out.emplace_back(xe, ye);
  return out;
}

bool OccupancyGrid::segment_free(const Vec2& a, const Vec2& b) const {
  for (const auto& [cx, cy] : supercover(a, b)) {
    if (!valid_cell(cx, cy) || at(cx, cy) != CellState::Free) return false;
  }
  return true;
}

std::size_t OccupancyGrid::count(CellState s) const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), s));
}

const std::vector<int>& OccupancyGrid::occupied_components() const {
  if (components_valid_) return components_;
  components_.assign(cells_.size(), -1);
  int next = 0;
  std::deque<std::pair<int, int>> queue;
  for (int cy = 0; cy < rows_; ++cy) {
    for (int cx = 0; cx < cols_; ++cx) {
      if (at(cx, cy) != CellState::Occupied || components_[idx(cx, cy)] >= 0) continue;
      components_[idx(cx, cy)] = next;
      queue.emplace_back(cx, cy);
      while (!queue.empty()) {
        auto [qx, qy] = queue.front();
        queue.pop_front();
        constexpr int nx[4] = {1, -1, 0, 0}, ny[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int ux = qx + nx[k], uy = qy + ny[k];
          if (!valid_cell(ux, uy) || at(ux, uy) != CellState::Occupied) continue;
          if (components_[idx(ux, uy)] >= 0) continue;
          components_[idx(ux, uy)] = next;
          queue.emplace_back(ux, uy);
        }
      }
      ++next;
    }
  }
  components_valid_ = true;
  return components_;
}

void OccupancyGrid::mark_infeasible_corners() {
  for (auto& c : cells_)
    if (c == CellState::Infeasible) c = CellState::Free;

  // A lattice point with exactly one Occupied incident cell is a convex corner
  // of the occupied region. Cells beyond the map edge count as occupied so the
  // outer boundary ring produces no corners.
  auto occ = [&](int cx, int cy) {
    return !valid_cell(cx, cy) || at(cx, cy) == CellState::Occupied;
  };
  std::vector<Vec2> corners;
  for (int j = 0; j <= rows_; ++j) {
    for (int i = 0; i <= cols_; ++i) {
      const int n = (occ(i - 1, j - 1) ? 1 : 0) + (occ(i, j - 1) ? 1 : 0) +
                    (occ(i - 1, j) ? 1 : 0) + (occ(i, j) ? 1 : 0);
      if (n == 1) corners.emplace_back(i * resolution_, j * resolution_);
    }
  }
  const int reach = static_cast<int>(std::ceil(corner_radius_ / resolution_)) + 1;
  for (const Vec2& corner : corners) {
    const int ci = cell_x(std::min(corner.x(), width_m_ - 0.5 * resolution_));
    const int cj = cell_y(std::min(corner.y(), height_m_ - 0.5 * resolution_));
    for (int cy = cj - reach; cy <= cj + reach; ++cy) {
      for (int cx = ci - reach; cx <= ci + reach; ++cx) {
        if (!valid_cell(cx, cy) || at(cx, cy) != CellState::Free) continue;
        const Vec2 lo(cx * resolution_, cy * resolution_);
        const Vec2 hi = lo + Vec2(resolution_, resolution_);
        if (point_rect_distance(corner, lo, hi) <= corner_radius_)
          set(cx, cy, CellState::Infeasible);
      }
    }
  }
  components_valid_ = false;
}

OccupancyGrid build_grid(const MapSpec& spec) {
  if (spec.resolution <= 0) throw InvalidArgument("resolution must be > 0");
  if (spec.width_m <= 0 || spec.height_m <= 0) throw InvalidArgument("map bounds must be > 0");
  for (std::size_t i = 0; i < spec.obstacles.size(); ++i)
    validate_obstacle(spec.obstacles[i], spec.width_m, spec.height_m, i);

  OccupancyGrid grid(spec.width_m, spec.height_m, spec.resolution, spec.corner_radius);
  for (int cy = 0; cy < grid.rows(); ++cy) {
    for (int cx = 0; cx < grid.cols(); ++cx) {
      if (cx == 0 || cy == 0 || cx == grid.cols() - 1 || cy == grid.rows() - 1) {
        grid.set(cx, cy, CellState::Occupied);
        continue;
      }
      const Vec2 center = grid.cell_center(cx, cy);
      for (const auto& obs : spec.obstacles) {
        if (point_in_obstacle(center, obs)) {
          grid.set(cx, cy, CellState::Occupied);
          break;
        }
      }
    }
  }
  grid.mark_infeasible_corners();
  return grid;
}

Scan raycast_scan(const OccupancyGrid& grid, const Vec2& origin, int n_beams, double max_range) {
  if (n_beams < 1) throw InvalidArgument("n_beams must be >= 1");
  if (max_range <= 0) throw InvalidArgument("max_range must be > 0");
  if (!grid.in_extent(origin)) throw InvalidArgument("scan origin outside map extent");
  if (grid.state_at(origin) == CellState::Occupied)
    throw InvalidArgument("scan origin inside an occupied cell");

  Scan scan;
  scan.origin = origin;
  scan.max_range = max_range;
  scan.beams.reserve(n_beams);
  const double res = grid.resolution();
  const int ox = grid.cell_x(origin.x()), oy = grid.cell_y(origin.y());

  for (int i = 0; i < n_beams; ++i) {
    const double angle = 2.0 * M_PI * i / n_beams;
    const Vec2 dir(std::cos(angle), std::sin(angle));
    int x = ox, y = oy;
    const int sx = dir.x() > 0 ? 1 : (dir.x() < 0 ? -1 : 0);
    const int sy = dir.y() > 0 ? 1 : (dir.y() < 0 ? -1 : 0);
    auto boundary = [&](int c, int s) { return (c + (s > 0 ? 1 : 0)) * res; };
    double t_max_x = sx != 0 ? (boundary(x, sx) - origin.x()) / dir.x() : kInf;
    double t_max_y = sy != 0 ? (boundary(y, sy) - origin.y()) / dir.y() : kInf;
    const double t_dx = sx != 0 ? res / std::abs(dir.x()) : kInf;
    const double t_dy = sy != 0 ? res / std::abs(dir.y()) : kInf;

    double range = max_range;
    bool hit = false;
    while (true) {
      const double t = std::min(t_max_x, t_max_y);
      if (t >= max_range) break;
      if (t_max_x <= t_max_y) {
        x += sx;
        t_max_x += t_dx;
      } else {
        y += sy;
        t_max_y += t_dy;
      }
      if (!grid.valid_cell(x, y)) break;
      // Infeasible cells are free space: the beam passes through them.
      if (grid.at(x, y) == CellState::Occupied && !(x == ox && y == oy)) {
        range = t;
        hit = true;
        break;
      }
    }
    scan.beams.push_back({angle, hit ? range : max_range, hit});
  }
  return scan;
}

namespace {

struct Run {
  std::vector<Vec2> points;
  std::vector<int> beam_indices;
};

std::vector<SurfaceSegment> fit_runs(const OccupancyGrid& grid, const Scan& scan,
                                     const std::vector<Run>& runs, double fit_tol) {
  std::vector<SurfaceSegment> out;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const auto& pts = runs[r].points;
    if (pts.size() < 2) continue;

    Vec2 centroid = Vec2::Zero();
    for (const auto& p : pts) centroid += p;
    centroid /= static_cast<double>(pts.size());
    double sxx = 0, sxy = 0, syy = 0;
    for (const auto& p : pts) {
      const Vec2 d = p - centroid;
      sxx += d.x() * d.x();
      sxy += d.x() * d.y();
      syy += d.y() * d.y();
    }
    // Principal direction of the 2x2 scatter matrix (total least squares).
    const double tr = sxx + syy, det = sxx * syy - sxy * sxy;
    const double lambda = 0.5 * tr + std::sqrt(std::max(0.0, 0.25 * tr * tr - det));
    Vec2 dir;
    if (std::abs(sxy) > 1e-15)
      dir = Vec2(lambda - syy, sxy).normalized();
    else
      dir = sxx >= syy ? Vec2(1, 0) : Vec2(0, 1);

    double rss = 0, smin = kInf, smax = -kInf;
    const Vec2 perp = rot90(dir);
    for (const auto& p : pts) {
      const Vec2 d = p - centroid;
      rss += std::pow(d.dot(perp), 2);
      smin = std::min(smin, d.dot(dir));
      smax = std::max(smax, d.dot(dir));
    }
    if (std::sqrt(rss / pts.size()) > fit_tol) continue;

    SurfaceSegment seg;
    seg.a = centroid + smin * dir;
    seg.b = centroid + smax * dir;
    seg.source = static_cast<int>(r);
    seg.first_beam = runs[r].beam_indices.front();
    seg.last_beam = runs[r].beam_indices.back();

    const Vec2 mid = 0.5 * (seg.a + seg.b);
    auto free_probe = [&](const Vec2& n) {
      const Vec2 q = mid + grid.resolution() * n;
      return grid.in_extent(q) && grid.is_free(q);
    };
    Vec2 n = rot90(dir);
    const bool plus_free = free_probe(n), minus_free = free_probe(-n);
    if (plus_free != minus_free) {
      if (minus_free) n = -n;
    } else if ((scan.origin - mid).dot(n) < 0) {
      n = -n;  // ambiguous probe, orient toward the sensor
    }
    seg.normal = n;
    seg.tangent = rot270(n);
    out.push_back(seg);
  }
  return out;
}

}  // namespace

std::vector<SurfaceSegment> fit_surfaces(const OccupancyGrid& grid, const Scan& scan,
                                         const SurfaceFitParams& params) {
  struct HitPoint {
    Vec2 p;
    double range;
    int beam;
  };
  std::vector<HitPoint> hits;
  for (std::size_t i = 0; i < scan.beams.size(); ++i) {
    const auto& b = scan.beams[i];
    if (!b.hit) continue;
    hits.push_back({scan.origin + b.range * Vec2(std::cos(b.angle), std::sin(b.angle)), b.range,
                    static_cast<int>(i)});
  }
  if (hits.size() < 2) return {};

  std::vector<Run> runs;
  Run current;
  auto flush = [&]() {
    if (!current.points.empty()) runs.push_back(std::move(current));
    current = {};
  };
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (!current.points.empty()) {
      const auto& prev = hits[i - 1];
      const bool adjacent = hits[i].beam == prev.beam + 1;
      const bool gap = std::abs(hits[i].range - prev.range) > params.gap_threshold;
      bool corner = false;
      if (current.points.size() >= 2) {
        const Vec2 c0 = current.points.back() - current.points[current.points.size() - 2];
        const Vec2 c1 = hits[i].p - current.points.back();
        if (c0.norm() > 1e-12 && c1.norm() > 1e-12) {
          const double cosang = std::clamp(c0.normalized().dot(c1.normalized()), -1.0, 1.0);
          corner = std::acos(cosang) > params.angle_threshold;
        }
      }
      if (!adjacent || gap || corner) flush();
    }
    current.points.push_back(hits[i].p);
    current.beam_indices.push_back(hits[i].beam);
  }
  flush();

  // The beam sweep wraps: merge the last run into the first when beam 0 and
  // beam n-1 are angle-adjacent hits on the same straight surface.
  if (runs.size() >= 2) {
    Run& first = runs.front();
    Run& last = runs.back();
    const int n = static_cast<int>(scan.beams.size());
    const bool index_adjacent =
        first.beam_indices.front() == 0 && last.beam_indices.back() == n - 1;
    const double wrap_gap =
        2.0 * M_PI - (scan.beams.back().angle - scan.beams.front().angle);
    const bool angle_adjacent = wrap_gap <= 2.5 * (2.0 * M_PI / n);
    if (index_adjacent && angle_adjacent) {
      const double r0 = (first.points.front() - scan.origin).norm();
      const double r1 = (last.points.back() - scan.origin).norm();
      const Vec2 junction = first.points.front() - last.points.back();
      bool corner = false;
      if (last.points.size() >= 2 && junction.norm() > 1e-12) {
        const Vec2 chord = last.points.back() - last.points[last.points.size() - 2];
        if (chord.norm() > 1e-12) {
          const double cosang =
              std::clamp(chord.normalized().dot(junction.normalized()), -1.0, 1.0);
          corner = std::acos(cosang) > params.angle_threshold;
        }
      }
      if (std::abs(r0 - r1) <= params.gap_threshold && !corner) {
        last.points.insert(last.points.end(), first.points.begin(), first.points.end());
        last.beam_indices.insert(last.beam_indices.end(), first.beam_indices.begin(),
                                 first.beam_indices.end());
        runs.front() = std::move(runs.back());
        runs.pop_back();
      }
    }
  }
  return fit_runs(grid, scan, runs, params.fit_tol);
}

CollisionFrame collision_frame(const SurfaceSegment& surface, const Vec2& p_c,
                               double robot_radius) {
  const Vec2 ab = surface.b - surface.a;
  const double len = ab.norm();
  const Vec2 t = len > 1e-12 ? Vec2(ab / len) : surface.tangent;
  const double s = (p_c - surface.a).dot(t);
  if (s < -robot_radius || s > len + robot_radius)
    throw InvalidArgument("no supporting surface: contact projects outside segment");

  Vec2 n = surface.normal;
  const double side = (p_c - surface.a).dot(n);
  if (side < -1e-9) n = -n;  // robot on the other side of the fitted line
  CollisionFrame frame;
  frame.origin = p_c;
  frame.normal = n;
  frame.tangent = rot90(n);  // det(R_wc) = +1
  return frame;
}

DistanceField::DistanceField(const OccupancyGrid& grid, const std::vector<int>& exclude_components) {
  resolution_ = grid.resolution();
  cols_ = grid.cols();
  rows_ = grid.rows();
  width_m_ = grid.width_m();
  height_m_ = grid.height_m();
  const std::size_t n = static_cast<std::size_t>(cols_) * rows_;
  nearest_.assign(n, -1);

  std::vector<bool> occupied(n, false);
  bool any = false;
  for (int cy = 0; cy < rows_; ++cy) {
    for (int cx = 0; cx < cols_; ++cx) {
      if (grid.at(cx, cy) != CellState::Occupied) continue;
      if (!exclude_components.empty()) {
        const int comp = grid.component_at(cx, cy);
        if (std::find(exclude_components.begin(), exclude_components.end(), comp) !=
            exclude_components.end())
          continue;
      }
      occupied[static_cast<std::size_t>(cy) * cols_ + cx] = true;
      any = true;
    }
  }
  if (!any) return;

  // Column pass: nearest occupied row per (column, row).
  std::vector<std::int32_t> col_src(n, -1);
  std::vector<double> col_d2(n, kInf);
  for (int cx = 0; cx < cols_; ++cx) {
    int last = -1;
    for (int cy = 0; cy < rows_; ++cy) {
      const std::size_t k = static_cast<std::size_t>(cy) * cols_ + cx;
      if (occupied[k]) last = cy;
      if (last >= 0) {
        col_src[k] = last;
        col_d2[k] = static_cast<double>(cy - last) * (cy - last);
      }
    }
    last = -1;
    for (int cy = rows_ - 1; cy >= 0; --cy) {
      const std::size_t k = static_cast<std::size_t>(cy) * cols_ + cx;
      if (occupied[k]) last = cy;
      if (last >= 0) {
        const double d2 = static_cast<double>(last - cy) * (last - cy);
        if (d2 < col_d2[k]) {
          col_d2[k] = d2;
          col_src[k] = last;
        }
      }
    }
  }

  // Row pass: lower envelope of parabolas (Felzenszwalb-Huttenlocher).
  std::vector<int> hull(cols_);
  std::vector<double> breaks(cols_ + 1);
  for (int cy = 0; cy < rows_; ++cy) {
    const std::size_t row = static_cast<std::size_t>(cy) * cols_;
    int k = -1;
    for (int q = 0; q < cols_; ++q) {
      if (col_d2[row + q] == kInf) continue;
      double s;
      while (true) {
        if (k < 0) break;
        const int p = hull[k];
        s = ((col_d2[row + q] + q * q) - (col_d2[row + p] + p * p)) / (2.0 * (q - p));
        if (s > breaks[k]) break;
        --k;
      }
      if (k < 0) {
        k = 0;
        hull[0] = q;
        breaks[0] = -kInf;
        breaks[1] = kInf;
      } else {
        ++k;
        hull[k] = q;
        breaks[k] = s;
        breaks[k + 1] = kInf;
      }
    }
    if (k < 0) continue;  // empty row and empty columns elsewhere handled above
    int j = 0;
    for (int q = 0; q < cols_; ++q) {
      while (breaks[j + 1] < q) ++j;
      const int src_col = hull[j];
      nearest_[row + q] =
          static_cast<std::int32_t>(col_src[row + src_col] * cols_ + src_col);
    }
  }
}

std::pair<int, int> DistanceField::nearest_cell(const Vec2& p) const {
  const double x = std::clamp(p.x(), 0.0, width_m_ - 1e-9);
  const double y = std::clamp(p.y(), 0.0, height_m_ - 1e-9);
  const int cx = static_cast<int>(std::floor(x / resolution_));
  const int cy = static_cast<int>(std::floor(y / resolution_));
  // Labels are exact for cell centers; a query point inside the cell may be
  // closer to a neighbor's label, so refine over the 3x3 neighborhood.
  int best = -1;
  double best_d2 = kInf;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const int nx = cx + dx, ny = cy + dy;
      if (nx < 0 || nx >= cols_ || ny < 0 || ny >= rows_) continue;
      const std::int32_t label = nearest_[static_cast<std::size_t>(ny) * cols_ + nx];
      if (label < 0) continue;
      const Vec2 center((label % cols_ + 0.5) * resolution_,
                        (label / cols_ + 0.5) * resolution_);
      const double d2 = (p - center).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = label;
      }
    }
  }
  if (best < 0) return {-1, -1};
  return {best % cols_, best / cols_};
}

double DistanceField::distance(const Vec2& p) const {
  if (empty()) return kInf;
  const auto [nx, ny] = nearest_cell(p);
  if (nx < 0) return kInf;
  return (p - Vec2((nx + 0.5) * resolution_, (ny + 0.5) * resolution_)).norm();
}

Vec2 DistanceField::gradient(const Vec2& p) const {
  if (empty()) return Vec2::Zero();
  const auto [nx, ny] = nearest_cell(p);
  if (nx < 0) return Vec2::Zero();
  const Vec2 d = p - Vec2((nx + 0.5) * resolution_, (ny + 0.5) * resolution_);
  const double norm = d.norm();
  return norm > 1e-12 ? Vec2(d / norm) : Vec2::Zero();
}

double DistanceField::boundary_distance(const Vec2& p) const {
  if (empty()) return kInf;
  const auto [nx, ny] = nearest_cell(p);
  if (nx < 0) return kInf;
  double best = kInf;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const int cx = nx + dx, cy = ny + dy;
      if (cx < 0 || cx >= cols_ || cy < 0 || cy >= rows_) continue;
      const std::size_t k = static_cast<std::size_t>(cy) * cols_ + cx;
      if (nearest_[k] != static_cast<std::int32_t>(k)) continue;  // not an in-field occupied cell
      const Vec2 lo(cx * resolution_, cy * resolution_);
      best = std::min(best, point_rect_distance(p, lo, lo + Vec2(resolution_, resolution_)));
    }
  }
  return best;
}

Vec2 DistanceField::nearest_boundary_point(const Vec2& p) const {
  const auto [nx, ny] = nearest_cell(p);
  if (nx < 0) return p;
  double best = kInf;
  Vec2 best_point = p;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const int cx = nx + dx, cy = ny + dy;
      if (cx < 0 || cx >= cols_ || cy < 0 || cy >= rows_) continue;
      const std::size_t k = static_cast<std::size_t>(cy) * cols_ + cx;
      if (nearest_[k] != static_cast<std::int32_t>(k)) continue;
      const Vec2 lo(cx * resolution_, cy * resolution_);
      Vec2 candidate;
      const double d = point_rect_distance(p, lo, lo + Vec2(resolution_, resolution_), &candidate);
      if (d < best) {
        best = d;
        best_point = candidate;
      }
    }
  }
  return best_point;
}

}  // namespace bounce
