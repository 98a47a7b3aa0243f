#include "dcmrta/orca.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <optional>
#include <span>
#include <vector>

#include "gtest/gtest.h"
#include "support/oracles.hpp"

namespace dcmrta {
namespace {

AgentBody body(Vec2 p, Vec2 v, double r = 1.5, double v_max = 2.0) {
  AgentBody b;
  b.position = p;
  b.velocity = v;
  b.radius = r;
  b.max_speed = v_max;
  return b;
}

Vec2 random_in_disk(Rng& rng, double radius) {
  while (true) {
    const Vec2 v{rng.uniform(-radius, radius), rng.uniform(-radius, radius)};
    if (norm(v) <= radius) return v;
  }
}

// Minimum over dense samples of t in (0, tau] of |t v - p| - r.
double sampled_clearance(const Vec2& p, double r, const Vec2& v, double tau) {
  double best = kUnreachable;
  constexpr int kSamples = 20000;
  for (int i = 1; i <= kSamples; ++i) {
    const double t = tau * i / kSamples;
    best = std::min(best, norm(v * t - p) - r);
  }
  return best;
}

TEST(VelocityObstacle, head_on_contact) {
  EXPECT_TRUE(in_velocity_obstacle({4, 0}, 3, {2, 0}, 2));
}

TEST(VelocityObstacle, perpendicular_miss) {
  EXPECT_FALSE(in_velocity_obstacle({4, 0}, 3, {0, 1}, 2));
  EXPECT_GT(sampled_clearance({4, 0}, 3, {0, 1}, 2), 0.0);
}

TEST(VelocityObstacle, stationary_never_closes) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const Vec2 p = random_in_disk(rng, 20.0);
    if (norm(p) <= 3.0) continue;
    EXPECT_FALSE(in_velocity_obstacle(p, 3.0, {0, 0}, 2.0));
  }
}

TEST(VelocityObstacle, agrees_with_dense_sampling) {
  Rng rng(11);
  int checked = 0;
  for (int i = 0; i < 3000; ++i) {
    const Vec2 p = random_in_disk(rng, 10.0);
    if (norm(p) <= 3.0) continue;
    const Vec2 v = random_in_disk(rng, 6.0);
    const double gap = sampled_clearance(p, 3.0, v, 2.0);
    if (std::abs(gap) < 1e-3) continue;  // too close to the boundary to call
    EXPECT_EQ(in_velocity_obstacle(p, 3.0, v, 2.0), gap <= 0.0) << p.x << "," << p.y;
    ++checked;
  }
  EXPECT_GT(checked, 2000);
}

TEST(OrcaHalfplane, far_agents_do_not_restrict) {
  const AgentBody a = body({0, 0}, {0, 0});
  const AgentBody b = body({100, 0}, {0, 0});
  const HalfPlane h = orca_halfplane(a, b, 2.0, 0.25);
  EXPECT_NEAR(norm(h.normal), 1.0, 1e-9);
  EXPECT_TRUE(h.contains({0, 0}));
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) EXPECT_TRUE(h.contains(random_in_disk(rng, 2.0)));
}

TEST(OrcaHalfplane, head_on_planes_mirror_each_other) {
  const AgentBody i = body({0, 0}, {1, 0});
  const AgentBody j = body({4, 0}, {-1, 0});
  const HalfPlane hi = orca_halfplane(i, j, 2.0, 0.25);
  const HalfPlane hj = orca_halfplane(j, i, 2.0, 0.25);
  // A half turn about (2, 0) maps one agent onto the other, and velocities to
  // their negatives.
  EXPECT_NEAR(hi.point.x, -hj.point.x, 1e-12);
  EXPECT_NEAR(hi.point.y, -hj.point.y, 1e-12);
  EXPECT_NEAR(hi.normal.x, -hj.normal.x, 1e-12);
  EXPECT_NEAR(hi.normal.y, -hj.normal.y, 1e-12);
  // Current velocities are on a collision course, so both must change.
  EXPECT_FALSE(hi.contains(i.velocity));
  EXPECT_FALSE(hj.contains(j.velocity));
}

TEST(OrcaHalfplane, reciprocity) {
  Rng rng(5);
  for (int n = 0; n < 2000; ++n) {
    const AgentBody a = body(random_in_disk(rng, 8.0), random_in_disk(rng, 2.0));
    const AgentBody b = body(random_in_disk(rng, 8.0), random_in_disk(rng, 2.0));
    if (distance(a.position, b.position) < 1e-3) continue;
    const auto ca = orca_correction(a, b, 2.0, 0.25);
    const auto cb = orca_correction(b, a, 2.0, 0.25);
    EXPECT_NEAR(ca.u.x, -cb.u.x, 1e-9);
    EXPECT_NEAR(ca.u.y, -cb.u.y, 1e-9);
    EXPECT_NEAR(ca.normal.x, -cb.normal.x, 1e-9);
    EXPECT_NEAR(ca.normal.y, -cb.normal.y, 1e-9);
    EXPECT_NEAR(norm(ca.normal), 1.0, 1e-9);
  }
}

TEST(OrcaHalfplane, permitted_velocity_pairs_never_collide_within_horizon) {
  constexpr double kTau = 2.0;
  Rng rng(2024);
  int trials = 0;
  for (int n = 0; trials < 10000 && n < 100000; ++n) {
    const AgentBody a = body(random_in_disk(rng, 6.0), random_in_disk(rng, 2.0));
    const AgentBody b = body(random_in_disk(rng, 6.0), random_in_disk(rng, 2.0));
    if (distance(a.position, b.position) <= 3.0) continue;
    const HalfPlane ha = orca_halfplane(a, b, kTau, 0.25);
    const HalfPlane hb = orca_halfplane(b, a, kTau, 0.25);
    Vec2 va;
    Vec2 vb;
    bool found = false;
    for (int k = 0; k < 200 && !found; ++k) {
      va = random_in_disk(rng, 2.0);
      vb = random_in_disk(rng, 2.0);
      found = ha.contains(va) && hb.contains(vb);
    }
    if (!found) continue;
    ++trials;
    // Closest approach under constant velocities over [0, tau].
    const Vec2 dp = b.position - a.position;
    const Vec2 dv = vb - va;
    const double t = abs_sq(dv) > 0 ? std::clamp(-dot(dp, dv) / abs_sq(dv), 0.0, kTau) : 0.0;
    ASSERT_GE(norm(dp + dv * t), 3.0 - 1e-9) << "trial " << trials;
  }
  EXPECT_EQ(trials, 10000);
}

TEST(OrcaHalfplane, overlap_resolves_within_one_step) {
  const AgentBody a = body({0, 0}, {0, 0});
  const AgentBody b = body({2, 0}, {0, 0});
  const HalfPlane ha = orca_halfplane(a, b, 2.0, 0.25);
  const HalfPlane hb = orca_halfplane(b, a, 2.0, 0.25);
  const Vec2 va = solve_velocity(std::vector<HalfPlane>{ha}, {0, 0}, 10.0);
  const Vec2 vb = solve_velocity(std::vector<HalfPlane>{hb}, {0, 0}, 10.0);
  EXPECT_NEAR(distance(a.position + va * 0.25, b.position + vb * 0.25), 3.0, 1e-9);
}

TEST(SolveVelocity, unconstrained_returns_preference) {
  EXPECT_EQ(solve_velocity({}, {1.0, -0.5}, 2.0), (Vec2{1.0, -0.5}));
  const Vec2 clipped = solve_velocity({}, {3.0, 4.0}, 2.0);
  EXPECT_NEAR(clipped.x, 1.2, 1e-12);
  EXPECT_NEAR(clipped.y, 1.6, 1e-12);
}

TEST(SolveVelocity, projects_onto_single_halfplane) {
  const std::vector<HalfPlane> planes{{{1, 0}, {1, 0}}};
  const Vec2 v = solve_velocity(planes, {0, 0}, 2.0);
  EXPECT_NEAR(v.x, 1.0, 1e-12);
  EXPECT_NEAR(v.y, 0.0, 1e-12);
}

HalfPlane random_plane(Rng& rng) {
  const double angle = rng.uniform(0.0, 2.0 * M_PI);
  const Vec2 n{std::cos(angle), std::sin(angle)};
  return {n * rng.uniform(-1.5, 1.0), n};
}

double max_violation(std::span<const HalfPlane> planes, const Vec2& v) {
  double worst = 0.0;
  for (const auto& h : planes) worst = std::max(worst, -h.signed_distance(v));
  return worst;
}

// Closest feasible point by exhaustive enumeration of the candidate optima:
// the preference, its projections on lines and circle, line-line and
// line-circle intersections.
std::optional<Vec2> enumerate_optimum(std::span<const HalfPlane> planes, const Vec2& pref,
                                      double v_max) {
  std::vector<Vec2> candidates{pref};
  if (norm(pref) > 0) candidates.push_back(pref * (v_max / norm(pref)));
  for (std::size_t i = 0; i < planes.size(); ++i) {
    const auto& a = planes[i];
    candidates.push_back(pref - a.normal * a.signed_distance(pref));
    const Vec2 d = a.direction();
    const double b = dot(a.point, d);
    const double disc = b * b - abs_sq(a.point) + v_max * v_max;
    if (disc >= 0) {
      candidates.push_back(a.point + d * (-b + std::sqrt(disc)));
      candidates.push_back(a.point + d * (-b - std::sqrt(disc)));
    }
    for (std::size_t j = i + 1; j < planes.size(); ++j) {
      const auto& c = planes[j];
      const double den = det(d, c.direction());
      if (std::abs(den) < 1e-12) continue;
      const double t = det(c.direction(), a.point - c.point) / den;
      candidates.push_back(a.point + d * t);
    }
  }
  std::optional<Vec2> best;
  for (const Vec2& v : candidates) {
    if (norm(v) > v_max + 1e-9 || max_violation(planes, v) > 1e-9) continue;
    if (!best || distance(v, pref) < distance(*best, pref)) best = v;
  }
  return best;
}

TEST(SolveVelocity, matches_enumeration_oracle) {
  Rng rng(77);
  int feasible = 0;
  for (int n = 0; n < 5000; ++n) {
    std::vector<HalfPlane> planes;
    const int count = 3 + static_cast<int>(rng.below(6));
    for (int k = 0; k < count; ++k) planes.push_back(random_plane(rng));
    const Vec2 pref = random_in_disk(rng, 3.0);
    const auto oracle = enumerate_optimum(planes, pref, 2.0);
    const Vec2 v = solve_velocity(planes, pref, 2.0);
    ASSERT_LE(norm(v), 2.0 + 1e-9);
    if (!oracle) continue;
    ++feasible;
    EXPECT_NEAR(v.x, oracle->x, 1e-6);
    EXPECT_NEAR(v.y, oracle->y, 1e-6);
  }
  EXPECT_GT(feasible, 500);
}

// Two-level grid search over the disk: best point by `score`, restricted to
// points where `allowed` holds.
template <typename Score, typename Allowed>
std::optional<Vec2> grid_search(double v_max, Score score, Allowed allowed) {
  std::optional<Vec2> best;
  double best_score = kUnreachable;
  auto scan = [&](Vec2 lo, Vec2 hi, double h) {
    for (double x = lo.x; x <= hi.x; x += h)
      for (double y = lo.y; y <= hi.y; y += h) {
        const Vec2 v{x, y};
        if (norm(v) > v_max || !allowed(v)) continue;
        const double s = score(v);
        if (s < best_score) {
          best_score = s;
          best = v;
        }
      }
  };
  scan({-v_max, -v_max}, {v_max, v_max}, 0.01);
  if (!best) return best;
  const Vec2 c = *best;
  scan(c - Vec2{0.02, 0.02}, c + Vec2{0.02, 0.02}, 1e-4);
  return best;
}

TEST(SolveVelocity, matches_grid_search_oracle) {
  Rng rng(8);
  int feasible = 0;
  for (int n = 0; n < 40; ++n) {
    std::vector<HalfPlane> planes;
    const int count = 3 + static_cast<int>(rng.below(6));
    for (int k = 0; k < count; ++k) planes.push_back(random_plane(rng));
    const Vec2 pref = random_in_disk(rng, 3.0);
    const Vec2 v = solve_velocity(planes, pref, 2.0);
    const auto oracle = grid_search(
        2.0, [&](const Vec2& c) { return distance(c, pref); },
        [&](const Vec2& c) { return max_violation(planes, c) <= 0.0; });
    if (oracle) {
      ++feasible;
      EXPECT_LE(max_violation(planes, v), 1e-9);
      EXPECT_LE(distance(v, pref), distance(*oracle, pref) + 1e-9);
    } else {
      // Infeasible: the fallback minimizes the largest violation.
      const auto least = grid_search(
          2.0, [&](const Vec2& c) { return max_violation(planes, c); },
          [](const Vec2&) { return true; });
      ASSERT_TRUE(least);
      EXPECT_LT(max_violation(planes, v), max_violation(planes, *least) + 1e-3);
    }
  }
  EXPECT_GT(feasible, 5);
}

TEST(SolveVelocity, infeasible_set_minimizes_largest_violation) {
  // v.x >= 1 and v.x <= -1 cannot both hold; the best compromise violates each by 1.
  const std::vector<HalfPlane> planes{{{1, 0}, {1, 0}}, {{-1, 0}, {-1, 0}}};
  const Vec2 v = solve_velocity(planes, {0.5, 0.3}, 2.0);
  EXPECT_NEAR(v.x, 0.0, 1e-9);
  EXPECT_NEAR(max_violation(planes, v), 1.0, 1e-9);
}

TEST(SolveVelocity, hard_constraints_are_kept_when_soft_ones_conflict) {
  const std::vector<HalfPlane> planes{
      {{0, 0.5}, {0, 1}},     // hard: v.y >= 0.5
      {{0, -1}, {0, -1}},     // soft: v.y <= -1
      {{0, -0.5}, {0, -1}}};  // soft: v.y <= -0.5
  const Vec2 v = solve_velocity(planes, {0, 0}, 2.0, 1);
  EXPECT_GE(v.y, 0.5 - 1e-9);
  EXPECT_LE(norm(v), 2.0 + 1e-9);
}

TEST(SolveVelocity, keeps_feasible_preference_and_speed_bound) {
  Rng rng(4);
  for (int n = 0; n < 3000; ++n) {
    std::vector<HalfPlane> planes;
    const int count = static_cast<int>(rng.below(8));
    for (int k = 0; k < count; ++k) planes.push_back(random_plane(rng));
    const Vec2 pref = random_in_disk(rng, 3.0);
    const Vec2 v = solve_velocity(planes, pref, 2.0);
    EXPECT_LE(norm(v), 2.0 + 1e-9);
    if (norm(pref) <= 2.0 && max_violation(planes, pref) == 0.0) EXPECT_EQ(v, pref);
    const Vec2 again = solve_velocity(planes, pref, 2.0);
    EXPECT_EQ(std::memcmp(&v, &again, sizeof v), 0);
  }
}

TEST(ObstacleHalfplanes, block_motion_into_wall_only) {
  const Layout layout = load_layout(testing::grid({"P.........", "..........", "#####.....",
                                                   "..........", ".........D"}));
  // Agent centered two units above the wall's top face (wall occupies y in [2,3)).
  const AgentBody agent = body({2.5, 0.0}, {0, 0});
  const auto planes = obstacle_halfplanes(agent, layout, 1.0, 0.25);
  ASSERT_FALSE(planes.empty());
  const Vec2 into = solve_velocity(planes, {0, 2}, 2.0, planes.size());
  const Vec2 away = solve_velocity(planes, {0, -2}, 2.0, planes.size());
  EXPECT_LE(into.y, 0.5 + 1e-9);  // may close the 0.5 gap within tau = 1, no more
  EXPECT_EQ(away, (Vec2{0, -2}));
}

TEST(ObstacleHalfplanes, permitted_velocities_stay_clear_over_horizon) {
  const Layout layout = generate_layout(40, 40, shelf_preset("desk"), 1);
  Rng rng(6);
  int checked = 0;
  for (int n = 0; n < 4000; ++n) {
    const Vec2 p{rng.uniform(2.0, 38.0), rng.uniform(2.0, 38.0)};
    const AgentBody agent = body(p, {0, 0});
    if (testing::open_cell(layout, cell_of(p).x, cell_of(p).y) == false) continue;
    const auto planes = obstacle_halfplanes(agent, layout, 1.0, 0.25);
    const Vec2 v = random_in_disk(rng, 2.0);
    if (max_violation(planes, v) > 0.0) continue;
    // Start clearance: keep only configurations that begin collision free.
    auto clearance = [&](const Vec2& q) {
      double best = kUnreachable;
      for (int y = 0; y < layout.height(); ++y)
        for (int x = 0; x < layout.width(); ++x)
          if (layout.is_obstacle({x, y}))
            best = std::min(best, distance(q, {std::clamp(q.x, double(x), x + 1.0),
                                                std::clamp(q.y, double(y), y + 1.0)}));
      return best;
    };
    if (clearance(p) < 1.5) continue;
    ++checked;
    for (int k = 1; k <= 20; ++k) ASSERT_GE(clearance(p + v * (k / 20.0)), 1.5 - 1e-9);
    if (checked == 300) break;
  }
  EXPECT_EQ(checked, 300);
}

Path straight(int n) {
  Path p;
  for (int i = 0; i < n; ++i) {
    p.cells.push_back({i, 0});
    p.waypoints.push_back(center({i, 0}));
  }
  p.length = n - 1;
  return p;
}

TEST(PreferredVelocity, zero_at_goal) {
  const Path path = straight(6);
  std::size_t cursor = 0;
  const AgentBody agent = body(path.goal(), {0, 0});
  EXPECT_EQ(preferred_velocity(agent, path, 2.0, {}, cursor), (Vec2{0, 0}));
}

TEST(PreferredVelocity, nominal_speed_along_corridor) {
  const Path path = straight(20);
  std::size_t cursor = 0;
  const AgentBody agent = body({2.5, 0.5}, {0, 0});
  const Vec2 v = preferred_velocity(agent, path, 2.0, {}, cursor);
  EXPECT_NEAR(v.x, 2.0, 1e-12);
  EXPECT_NEAR(v.y, 0.0, 1e-12);
  EXPECT_EQ(cursor, 4u);
}

TEST(PreferredVelocity, slows_down_near_goal) {
  const Path path = straight(6);
  std::size_t cursor = 0;
  const AgentBody agent = body(path.goal() - Vec2{0.3, 0.0}, {0, 0});
  GuidanceParams params;
  params.arrival_threshold = 0.1;
  const Vec2 v = preferred_velocity(agent, path, 2.0, params, cursor);
  EXPECT_NEAR(norm(v), 1.2, 1e-12);
  EXPECT_GT(v.x, 0.0);
}

}  // namespace
}  // namespace dcmrta
