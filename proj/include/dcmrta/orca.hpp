#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dcmrta/geometry.hpp"
#include "dcmrta/planner.hpp"
#include "dcmrta/world.hpp"

namespace dcmrta {

/// Kinematic state of one disk-shaped, velocity-controlled robot.
struct AgentBody {
  Vec2 position;
  Vec2 velocity;  // also the optimization velocity of the reciprocal constraint
  double radius = 1.5;
  double max_speed = 2.0;
  Vec2 pref_velocity;
};

/// Linear velocity constraint; the allowed set is { v : (v - point) . normal >= 0 }.
struct HalfPlane {
  Vec2 point;
  Vec2 normal;  // unit length, pointing into the allowed side

  double signed_distance(const Vec2& v) const { return dot(v - point, normal); }
  bool contains(const Vec2& v, double eps = 0.0) const { return signed_distance(v) >= -eps; }
  /// Boundary direction with the allowed side on its left.
  Vec2 direction() const { return {normal.y, -normal.x}; }
};

/// True iff some t in (0, tau] has |t * v_rel - p_rel| <= r_sum.
bool in_velocity_obstacle(const Vec2& p_rel, double r_sum, const Vec2& v_rel, double tau);

/// Smallest change `u` of the relative velocity that leaves the truncated
/// velocity obstacle, and the outward boundary normal at the exit point.
struct VelocityCorrection {
  Vec2 u;
  Vec2 normal;
};

/// Overlapping agents use `dt` as the horizon so they separate within one step.
VelocityCorrection orca_correction(const AgentBody& self, const AgentBody& other, double tau,
                                   double dt);

/// Reciprocal constraint: point = v_self + u / 2, normal as in orca_correction.
HalfPlane orca_halfplane(const AgentBody& self, const AgentBody& other, double tau, double dt);

/// Constraints against nearby obstacle cells, with full responsibility on the
/// agent. Each obstacle square contributes the supporting line at its closest
/// point; overlaps are resolved within one `dt`.
std::vector<HalfPlane> obstacle_halfplanes(const AgentBody& agent, const Layout& layout,
                                           double tau_obstacle, double dt);

/// Velocity inside every half-plane and the disk |v| <= v_max that is closest to
/// v_pref. The first `hard_count` constraints (obstacles) are never relaxed; when
/// the remaining ones are jointly infeasible, the velocity minimizing the largest
/// violation is returned instead. The result always satisfies |v| <= v_max.
Vec2 solve_velocity(std::span<const HalfPlane> constraints, const Vec2& v_pref, double v_max,
                    std::size_t hard_count = 0);

struct GuidanceParams {
  double dt = 0.25;
  double lookahead = 2.0;
  double arrival_threshold = 0.5;
};

/// Velocity of magnitude min(v_nominal, goal distance / dt) toward the lookahead
/// waypoint, zero within the arrival threshold of the path's goal. `cursor` is
/// the follower's waypoint index and only ever moves forward.
Vec2 preferred_velocity(const AgentBody& agent, const Path& path, double v_nominal,
                        const GuidanceParams& params, std::size_t& cursor);

}  // namespace dcmrta
