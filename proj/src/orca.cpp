#include "dcmrta/orca.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dcmrta {

namespace {

constexpr double kParallelEps = 1e-12;

// Boundary line in point/direction form; the allowed side is to the left.
struct Line {
  Vec2 point;
  Vec2 direction;
};

Line to_line(const HalfPlane& h) { return {h.point, h.direction()}; }

// Violated when det(direction, point - v) > 0.
bool violates(const Line& line, const Vec2& v) { return det(line.direction, line.point - v) > 0.0; }

// Optimizes along line `k` subject to lines [0, k) and the speed disk.
bool program_on_line(std::span<const Line> lines, std::size_t k, double radius,
                     const Vec2& target, bool direction_opt, Vec2& result) {
  const Line& line = lines[k];
  const double along = dot(line.point, line.direction);
  const double discriminant = along * along + radius * radius - abs_sq(line.point);
  if (discriminant < 0.0) return false;  // line misses the speed disk

  const double root = std::sqrt(discriminant);
  double t_left = -along - root;
  double t_right = -along + root;

  for (std::size_t i = 0; i < k; ++i) {
    const double denominator = det(line.direction, lines[i].direction);
    const double numerator = det(lines[i].direction, line.point - lines[i].point);
    if (std::fabs(denominator) <= kParallelEps) {
      if (numerator < 0.0) return false;
      continue;
    }
    const double t = numerator / denominator;
    if (denominator >= 0.0)
      t_right = std::min(t_right, t);
    else
      t_left = std::max(t_left, t);
    if (t_left > t_right) return false;
  }

  if (direction_opt) {
    result = line.point + (dot(target, line.direction) > 0.0 ? t_right : t_left) * line.direction;
  } else {
    const double t = std::clamp(dot(line.direction, target - line.point), t_left, t_right);
    result = line.point + t * line.direction;
  }
  return true;
}

// Incremental 2-D LP. Returns lines.size() on success, else the failing index.
std::size_t program_2d(std::span<const Line> lines, double radius, const Vec2& target,
                       bool direction_opt, Vec2& result) {
  if (direction_opt)
    result = target * radius;
  else if (abs_sq(target) > radius * radius)
    result = normalized(target) * radius;
  else
    result = target;

  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (!violates(lines[i], result)) continue;
    const Vec2 previous = result;
    if (!program_on_line(lines, i, radius, target, direction_opt, result)) {
      result = previous;
      return i;
    }
  }
  return lines.size();
}

// Lifted LP: minimizes the largest violation of the soft lines from `begin` on,
// keeping the first `hard_count` lines satisfied.
void program_3d(std::span<const Line> lines, std::size_t hard_count, std::size_t begin,
                double radius, Vec2& result) {
  double worst = 0.0;
  for (std::size_t i = begin; i < lines.size(); ++i) {
    if (det(lines[i].direction, lines[i].point - result) <= worst) continue;

    std::vector<Line> projected(lines.begin(), lines.begin() + static_cast<std::ptrdiff_t>(hard_count));
    for (std::size_t j = hard_count; j < i; ++j) {
      Line line;
      const double determinant = det(lines[i].direction, lines[j].direction);
      if (std::fabs(determinant) <= kParallelEps) {
        if (dot(lines[i].direction, lines[j].direction) > 0.0) continue;  // same direction
        line.point = 0.5 * (lines[i].point + lines[j].point);
      } else {
        line.point = lines[i].point +
                     (det(lines[j].direction, lines[i].point - lines[j].point) / determinant) *
                         lines[i].direction;
      }
      line.direction = normalized(lines[j].direction - lines[i].direction);
      projected.push_back(line);
    }

    const Vec2 previous = result;
    const Vec2 outward{-lines[i].direction.y, lines[i].direction.x};
    if (program_2d(projected, radius, outward, true, result) < projected.size()) result = previous;
    worst = det(lines[i].direction, lines[i].point - result);
  }
}

}  // namespace

bool in_velocity_obstacle(const Vec2& p_rel, double r_sum, const Vec2& v_rel, double tau) {
  const double speed_sq = abs_sq(v_rel);
  if (speed_sq == 0.0) return abs_sq(p_rel) <= r_sum * r_sum;
  // |t v - p|^2 is a convex quadratic in t, minimized at t* = v.p / |v|^2.
  const double t = std::clamp(dot(v_rel, p_rel) / speed_sq, 0.0, tau);
  if (t <= 0.0) return false;  // closest approach is at t = 0, excluded
  return abs_sq(t * v_rel - p_rel) <= r_sum * r_sum;
}

VelocityCorrection orca_correction(const AgentBody& self, const AgentBody& other, double tau,
                                   double dt) {
  if (tau <= 0.0 || dt <= 0.0) throw std::invalid_argument("ORCA horizons must be positive");
  const Vec2 rel_pos = other.position - self.position;
  const Vec2 rel_vel = self.velocity - other.velocity;
  const double dist_sq = abs_sq(rel_pos);
  const double r_sum = self.radius + other.radius;
  const double r_sum_sq = r_sum * r_sum;

  Vec2 direction;
  Vec2 u;
  if (dist_sq > r_sum_sq) {
    const Vec2 w = rel_vel - rel_pos / tau;  // from cutoff-circle center to rel_vel
    const double w_len_sq = abs_sq(w);
    const double along = dot(w, rel_pos);
    if (along < 0.0 && along * along > r_sum_sq * w_len_sq) {
      // Closest boundary point lies on the cutoff circle.
      const double w_len = std::sqrt(w_len_sq);
      const Vec2 unit_w = w / w_len;
      direction = {unit_w.y, -unit_w.x};
      u = (r_sum / tau - w_len) * unit_w;
    } else {
      const double leg = std::sqrt(dist_sq - r_sum_sq);
      if (det(rel_pos, w) > 0.0) {
        direction = Vec2{rel_pos.x * leg - rel_pos.y * r_sum, rel_pos.x * r_sum + rel_pos.y * leg} /
                    dist_sq;
      } else {
        direction = -Vec2{rel_pos.x * leg + rel_pos.y * r_sum, -rel_pos.x * r_sum + rel_pos.y * leg} /
                    dist_sq;
      }
      u = dot(rel_vel, direction) * direction - rel_vel;
    }
  } else {
    // Already overlapping: leave the VO of horizon dt.
    const Vec2 w = rel_vel - rel_pos / dt;
    const double w_len = norm(w);
    const Vec2 unit_w = w_len > 0.0 ? w / w_len : normalized(-rel_pos);
    direction = {unit_w.y, -unit_w.x};
    u = (r_sum / dt - w_len) * unit_w;
  }
  // Allowed side is left of `direction`, so the normal is direction rotated +90 degrees.
  return {u, {-direction.y, direction.x}};
}

HalfPlane orca_halfplane(const AgentBody& self, const AgentBody& other, double tau, double dt) {
  const auto c = orca_correction(self, other, tau, dt);
  return {self.velocity + 0.5 * c.u, c.normal};
}

std::vector<HalfPlane> obstacle_halfplanes(const AgentBody& agent, const Layout& layout,
                                           double tau_obstacle, double dt) {
  std::vector<HalfPlane> planes;
  const double range = agent.radius + agent.max_speed * tau_obstacle;
  const Vec2 p = agent.position;
  const int x0 = static_cast<int>(std::floor(p.x - range));
  const int x1 = static_cast<int>(std::floor(p.x + range));
  const int y0 = static_cast<int>(std::floor(p.y - range));
  const int y1 = static_cast<int>(std::floor(p.y + range));
  for (int y = std::max(y0, 0); y <= std::min(y1, layout.height() - 1); ++y)
    for (int x = std::max(x0, 0); x <= std::min(x1, layout.width() - 1); ++x) {
      const Cell c{x, y};
      if (!layout.is_obstacle(c)) continue;
      const Vec2 closest{std::clamp(p.x, double(x), x + 1.0), std::clamp(p.y, double(y), y + 1.0)};
      const Vec2 away = p - closest;
      const double dist = norm(away);
      if (dist >= range) continue;
      const Vec2 n = dist > 0.0 ? away / dist : normalized(p - center(c));
      if (dist > agent.radius)
        planes.push_back({-n * ((dist - agent.radius) / tau_obstacle), n});
      else
        planes.push_back({n * ((agent.radius - dist) / dt), n});
    }
  return planes;
}

Vec2 solve_velocity(std::span<const HalfPlane> constraints, const Vec2& v_pref, double v_max,
                    std::size_t hard_count) {
  if (v_max <= 0.0) throw std::invalid_argument("v_max must be positive");
  hard_count = std::min(hard_count, constraints.size());
  std::vector<Line> lines;
  lines.reserve(constraints.size());
  for (const auto& h : constraints) lines.push_back(to_line(h));

  Vec2 result;
  const std::size_t failed = program_2d(lines, v_max, v_pref, false, result);
  if (failed < lines.size()) program_3d(lines, hard_count, std::max(failed, hard_count), v_max, result);

  const double speed = norm(result);
  if (speed > v_max) result = result * (v_max / speed);
  return result;
}

Vec2 preferred_velocity(const AgentBody& agent, const Path& path, double v_nominal,
                        const GuidanceParams& params, std::size_t& cursor) {
  if (path.waypoints.empty()) throw std::invalid_argument("preferred_velocity on an empty path");
  const double to_goal = distance(agent.position, path.goal());
  if (to_goal <= params.arrival_threshold) return {};
  const auto target = next_waypoint(path, agent.position, params.lookahead, cursor);
  cursor = target.index;
  const Vec2 heading = normalized(target.point - agent.position);
  return heading * std::min(v_nominal, to_goal / params.dt);
}

}  // namespace dcmrta
