#pragma once

// Independent reference implementations used only by the tests.

#include <cmath>
#include <deque>
#include <limits>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "dcmrta/world.hpp"

namespace dcmrta::testing {

inline bool open_cell(const Layout& layout, int x, int y) {
  return x >= 0 && y >= 0 && x < layout.width() && y < layout.height() &&
         !layout.is_obstacle({x, y});
}

// Plain Dijkstra over the 8-connected grid without corner cutting, written
// without the library's neighbor helper.
inline std::vector<double> dijkstra(const Layout& layout, Cell source) {
  const double inf = std::numeric_limits<double>::infinity();
  const int w = layout.width();
  std::vector<double> dist(layout.cell_count(), inf);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  dist[static_cast<std::size_t>(source.y) * w + source.x] = 0.0;
  open.push({0.0, source.y * w + source.x});
  while (!open.empty()) {
    const auto [d, id] = open.top();
    open.pop();
    if (d > dist[static_cast<std::size_t>(id)]) continue;
    const int x = id % w;
    const int y = id / w;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0) continue;
        if (!open_cell(layout, x + dx, y + dy)) continue;
        if (dx != 0 && dy != 0 && (!open_cell(layout, x + dx, y) || !open_cell(layout, x, y + dy)))
          continue;
        const double nd = d + ((dx != 0 && dy != 0) ? std::sqrt(2.0) : 1.0);
        const int nid = (y + dy) * w + (x + dx);
        if (nd < dist[static_cast<std::size_t>(nid)]) {
          dist[static_cast<std::size_t>(nid)] = nd;
          open.push({nd, nid});
        }
      }
  }
  return dist;
}

// 8-connected BFS reachability, again without the library helper.
inline std::vector<char> bfs_reach(const Layout& layout, Cell source) {
  const int w = layout.width();
  std::vector<char> seen(layout.cell_count(), 0);
  std::deque<std::pair<int, int>> frontier{{source.x, source.y}};
  seen[static_cast<std::size_t>(source.y) * w + source.x] = 1;
  while (!frontier.empty()) {
    const auto [x, y] = frontier.front();
    frontier.pop_front();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int nx = x + dx;
        const int ny = y + dy;
        if (!open_cell(layout, nx, ny)) continue;
        if (dx != 0 && dy != 0 && (!open_cell(layout, nx, y) || !open_cell(layout, x, ny))) continue;
        char& s = seen[static_cast<std::size_t>(ny) * w + nx];
        if (!s) {
          s = 1;
          frontier.push_back({nx, ny});
        }
      }
  }
  return seen;
}

// Grid text with the given rows; row i becomes y = i.
inline std::string grid(std::initializer_list<const char*> rows) {
  std::string out;
  for (const char* r : rows) {
    out += r;
    out += '\n';
  }
  return out;
}

}  // namespace dcmrta::testing
