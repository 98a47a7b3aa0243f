#include "dcmrta/planner.hpp"

#include <algorithm>
#include <numbers>
#include <queue>
#include <stdexcept>
#include <string>

namespace dcmrta {

namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;

struct OpenEntry {
  double f;
  double g;
  Cell cell;
};

// priority_queue pops the "largest"; an entry is larger when it should be expanded first.
struct ExpandLater {
  bool operator()(const OpenEntry& a, const OpenEntry& b) const {
    if (a.f != b.f) return a.f > b.f;
    if (a.g != b.g) return a.g < b.g;
    return b.cell < a.cell;
  }
};

void require_free(const Layout& layout, Cell c, const char* what) {
  if (!layout.is_free(c))
    throw std::invalid_argument(std::string(what) + " (" + std::to_string(c.x) + "," +
                                std::to_string(c.y) + ") is not a free cell");
}

}  // namespace

double octile_distance(Cell a, Cell b) {
  const int dx = std::abs(a.x - b.x);
  const int dy = std::abs(a.y - b.y);
  return std::max(dx, dy) + (kSqrt2 - 1.0) * std::min(dx, dy);
}

std::optional<Path> astar(const Layout& layout, Cell start, Cell goal) {
  require_free(layout, start, "start");
  require_free(layout, goal, "goal");

  const std::size_t n = layout.cell_count();
  std::vector<double> g(n, kUnreachable);
  std::vector<std::int64_t> parent(n, -1);
  std::vector<std::uint8_t> closed(n, 0);
  std::priority_queue<OpenEntry, std::vector<OpenEntry>, ExpandLater> open;

  g[layout.index(start)] = 0.0;
  open.push({octile_distance(start, goal), 0.0, start});
  bool found = false;
  while (!open.empty()) {
    const OpenEntry top = open.top();
    open.pop();
    const std::size_t ti = layout.index(top.cell);
    if (closed[ti]) continue;
    closed[ti] = 1;
    if (top.cell == goal) {
      found = true;
      break;
    }
    for_each_neighbor(layout, top.cell, [&](Cell nb, bool diagonal) {
      const std::size_t ni = layout.index(nb);
      if (closed[ni]) return;
      const double ng = top.g + (diagonal ? kSqrt2 : 1.0);
      if (ng < g[ni]) {
        g[ni] = ng;
        parent[ni] = static_cast<std::int64_t>(ti);
        open.push({ng + octile_distance(nb, goal), ng, nb});
      }
    });
  }
  if (!found) return std::nullopt;

  Path path;
  for (std::int64_t i = static_cast<std::int64_t>(layout.index(goal)); i >= 0; i = parent[i])
    path.cells.push_back(layout.cell_at(static_cast<std::size_t>(i)));
  std::reverse(path.cells.begin(), path.cells.end());
  path.waypoints.reserve(path.cells.size());
  for (std::size_t i = 0; i < path.cells.size(); ++i) {
    path.waypoints.push_back(center(path.cells[i]));
    if (i == 0) continue;
    const bool diagonal =
        path.cells[i].x != path.cells[i - 1].x && path.cells[i].y != path.cells[i - 1].y;
    path.length += diagonal ? kSqrt2 : 1.0;
    ++(diagonal ? path.diagonal_steps : path.orthogonal_steps);
  }
  return path;
}

DistanceField::DistanceField(const Layout& layout, Cell source)
    : layout_(&layout), source_(source), dist_(layout.cell_count(), kUnreachable) {
  require_free(layout, source, "distance field source");
  using Entry = std::pair<double, std::size_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
  dist_[layout.index(source)] = 0.0;
  open.push({0.0, layout.index(source)});
  while (!open.empty()) {
    const auto [d, idx] = open.top();
    open.pop();
    if (d > dist_[idx]) continue;
    for_each_neighbor(layout, layout.cell_at(idx), [&](Cell nb, bool diagonal) {
      const std::size_t ni = layout.index(nb);
      const double nd = d + (diagonal ? kSqrt2 : 1.0);
      if (nd < dist_[ni]) {
        dist_[ni] = nd;
        open.push({nd, ni});
      }
    });
  }
}

double DistanceField::at(Cell c) const {
  return layout_->in_bounds(c) ? dist_[layout_->index(c)] : kUnreachable;
}

DistanceMode parse_distance_mode(std::string_view text) {
  if (text == "direct") return DistanceMode::Direct;
  if (text == "astar") return DistanceMode::AStar;
  throw std::invalid_argument("unknown distance mode '" + std::string(text) + "'");
}

std::string_view to_string(DistanceMode mode) {
  return mode == DistanceMode::Direct ? "direct" : "astar";
}

double nav_distance(const Layout& layout, Cell a, Cell b, DistanceMode mode) {
  if (mode == DistanceMode::Direct) return distance(center(a), center(b));
  const auto path = astar(layout, a, b);
  return path ? path->length : kUnreachable;
}

NavDistance::NavDistance(const Layout& layout, DistanceMode mode, std::size_t cache_capacity)
    : layout_(&layout), mode_(mode), cache_(cache_capacity) {}

const DistanceField& NavDistance::field(Cell target) {
  if (const auto* hit = cache_.find(target)) return **hit;
  return *cache_.insert(target, std::make_shared<const DistanceField>(*layout_, target));
}

double NavDistance::between(Cell a, Cell b) {
  if (mode_ == DistanceMode::Direct) return distance(center(a), center(b));
  if (!layout_->is_free(a) || !layout_->is_free(b)) return kUnreachable;
  // Fields are keyed by the target; the graph is undirected so this equals astar(a, b).
  return field(b).at(a);
}

double NavDistance::from_point(const Vec2& from, Cell target) {
  if (mode_ == DistanceMode::Direct) return distance(from, center(target));
  if (!layout_->is_free(target)) return kUnreachable;
  const DistanceField& f = field(target);
  const Cell c = cell_of(from);
  if (layout_->is_free(c)) return f.at(c);
  double best = kUnreachable;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const Cell n{c.x + dx, c.y + dy};
      if (!layout_->is_free(n)) continue;
      best = std::min(best, f.at(n) + distance(from, center(n)));
    }
  return best;
}

PathPlanner::PathPlanner(const Layout& layout, std::size_t cache_capacity)
    : layout_(&layout), cache_(cache_capacity) {}

std::shared_ptr<const Path> PathPlanner::plan(Cell start, Cell goal) {
  const auto key = std::make_pair(start, goal);
  if (const auto* hit = cache_.find(key)) return *hit;
  auto path = astar(*layout_, start, goal);
  std::shared_ptr<const Path> result =
      path ? std::make_shared<const Path>(std::move(*path)) : nullptr;
  cache_.insert(key, result);
  return result;
}

Path straight_path(const Vec2& from, const Vec2& to) {
  Path path;
  path.waypoints = {from, to};
  path.length = distance(from, to);
  return path;
}

WaypointTarget next_waypoint(const Path& path, const Vec2& position, double lookahead,
                             std::size_t from_index) {
  if (path.waypoints.empty()) throw std::invalid_argument("next_waypoint on an empty path");
  const std::size_t n = path.waypoints.size();
  std::size_t j = std::min(from_index, n - 1);
  // A follower that has moved past its cursor catches up along the path first.
  while (j + 1 < n && distance(path.waypoints[j], position) > lookahead &&
         distance(path.waypoints[j + 1], position) < distance(path.waypoints[j], position))
    ++j;
  const std::size_t first = j;
  while (j + 1 < n && distance(path.waypoints[j + 1], position) <= lookahead) ++j;
  if (j == first && j + 1 < n && distance(path.waypoints[j], position) <= lookahead) ++j;
  return {j, path.waypoints[j]};
}

}  // namespace dcmrta
