#pragma once

#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <string_view>
#include <vector>

#include "dcmrta/geometry.hpp"
#include "dcmrta/lru_cache.hpp"
#include "dcmrta/world.hpp"

namespace dcmrta {

inline constexpr double kUnreachable = std::numeric_limits<double>::infinity();

/// Grid path through cell centers. Steps are 8-connected and never cut corners.
struct Path {
  std::vector<Cell> cells;
  std::vector<Vec2> waypoints;
  double length = 0.0;
  int orthogonal_steps = 0;
  int diagonal_steps = 0;

  std::size_t size() const { return waypoints.size(); }
  const Vec2& goal() const { return waypoints.back(); }
};

/// Octile distance: exact shortest length on an obstacle-free 8-connected grid.
double octile_distance(Cell a, Cell b);

/// Shortest path with unit orthogonal and sqrt(2) diagonal costs.
///
/// Ties in the open list are broken by lower f, then higher g, then the
/// lexicographically smaller cell, so results are reproducible. Returns nullopt
/// when the goal is unreachable. Throws std::invalid_argument if start or goal
/// is not a free cell.
std::optional<Path> astar(const Layout& layout, Cell start, Cell goal);

/// Single-source shortest distances over the same graph astar searches.
class DistanceField {
 public:
  DistanceField(const Layout& layout, Cell source);

  Cell source() const { return source_; }
  /// kUnreachable for obstacle, out-of-bounds and disconnected cells.
  double at(Cell c) const;

 private:
  const Layout* layout_;
  Cell source_;
  std::vector<double> dist_;
};

enum class DistanceMode { Direct, AStar };

DistanceMode parse_distance_mode(std::string_view text);
std::string_view to_string(DistanceMode mode);

/// Direct: Euclidean distance between cell centers. AStar: astar(...).length,
/// or kUnreachable.
double nav_distance(const Layout& layout, Cell a, Cell b, DistanceMode mode);

/// Per-run distance model with an LRU cache of distance fields keyed by target.
///
/// AStar queries from a continuous point use the cell containing the point; if
/// that cell is blocked, the best free 8-neighbor plus the step to it is used.
class NavDistance {
 public:
  NavDistance(const Layout& layout, DistanceMode mode, std::size_t cache_capacity = 256);

  DistanceMode mode() const { return mode_; }
  const Layout& layout() const { return *layout_; }

  double between(Cell a, Cell b);
  double from_point(const Vec2& from, Cell target);

 private:
  const DistanceField& field(Cell target);

  const Layout* layout_;
  DistanceMode mode_;
  LruCache<Cell, std::shared_ptr<const DistanceField>, CellHash> cache_;
};

/// Per-run astar front end with an LRU cache keyed by (start, goal).
class PathPlanner {
 public:
  explicit PathPlanner(const Layout& layout, std::size_t cache_capacity = 4096);

  const Layout& layout() const { return *layout_; }
  /// nullptr when unreachable.
  std::shared_ptr<const Path> plan(Cell start, Cell goal);
  std::size_t cache_size() const { return cache_.size(); }

 private:
  struct PairHash {
    std::size_t operator()(const std::pair<Cell, Cell>& p) const noexcept {
      return CellHash{}(p.first) * 1000003u ^ CellHash{}(p.second);
    }
  };

  const Layout* layout_;
  LruCache<std::pair<Cell, Cell>, std::shared_ptr<const Path>, PairHash> cache_;
};

/// Straight segment path used by direct navigation.
Path straight_path(const Vec2& from, const Vec2& to);

struct WaypointTarget {
  std::size_t index = 0;
  Vec2 point;
};

/// Farthest waypoint at or after `from_index` that is still within `lookahead`
/// of `position`, scanning forward while waypoints stay in range. When the
/// waypoint at from_index is out of range, the scan first advances while the
/// next waypoint is closer. If only the
/// waypoint at from_index is in range and it is not the last, the next one is
/// returned instead so the follower never stalls. Passing the previous result's
/// index as from_index makes the returned index monotone over a traversal.
WaypointTarget next_waypoint(const Path& path, const Vec2& position, double lookahead,
                             std::size_t from_index = 0);

}  // namespace dcmrta
