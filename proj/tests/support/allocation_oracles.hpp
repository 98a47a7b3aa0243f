#pragma once

// Random allocation scenes and brute-force selectors computed from positions.

#include <algorithm>
#include <cmath>
#include <vector>

#include "dcmrta/allocation.hpp"

namespace dcmrta::testing {

struct Scene {
  std::vector<RobotFeature> robots;
  std::vector<Task> tasks;
  std::size_t selected = 0;
};

inline Scene random_scene(const Layout& layout, Rng& rng) {
  Scene scene;
  const int m = 1 + static_cast<int>(rng.below(6));
  const int n = 1 + static_cast<int>(rng.below(10));
  for (int j = 0; j < m; ++j) {
    const Cell c{static_cast<int>(rng.below(layout.width())),
                 static_cast<int>(rng.below(layout.height()))};
    scene.robots.push_back({center(c), rng.below(2) ? 0.0 : rng.uniform(1.0, 9.0)});
  }
  scene.selected = rng.below(static_cast<std::uint64_t>(m));
  scene.robots[scene.selected].remaining_time = 0.0;
  for (int i = 0; i < n; ++i) scene.tasks.push_back(sample_task(layout, rng, i, 0.0));
  return scene;
}

struct BruteForce {
  std::size_t mpdm = 0;
  std::size_t rbts = 0;
  std::size_t rbts_exclude_selected = 0;
};

// Euclidean distances; the first index wins every tie.
inline BruteForce brute_force(const Scene& scene) {
  const Vec2 here = scene.robots[scene.selected].position;
  BruteForce out;
  double best_k = kUnreachable;
  double best_regret = -kUnreachable;
  double best_excl = -kUnreachable;
  for (std::size_t i = 0; i < scene.tasks.size(); ++i) {
    const Vec2 o = center(scene.tasks[i].origin);
    const double k = std::hypot(here.x - o.x, here.y - o.y);
    double c = kUnreachable;
    double c_other = kUnreachable;
    for (std::size_t j = 0; j < scene.robots.size(); ++j) {
      const Vec2 p = scene.robots[j].position;
      const double d = std::hypot(p.x - o.x, p.y - o.y);
      c = std::min(c, d);
      if (j != scene.selected) c_other = std::min(c_other, d);
    }
    if (k < best_k) best_k = k, out.mpdm = i;
    if (c - k > best_regret) best_regret = c - k, out.rbts = i;
    if (c_other - k > best_excl) best_excl = c_other - k, out.rbts_exclude_selected = i;
  }
  return out;
}

}  // namespace dcmrta::testing
