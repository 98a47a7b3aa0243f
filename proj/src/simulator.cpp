#include "dcmrta/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace dcmrta {

namespace {

constexpr double kExactArrival = 1e-9;
constexpr double kHysteresis = 1.1;
constexpr double kBucketSize = 4.0;
constexpr double kReplanSlack = 3.0;

// Uniform bucket grid over agent positions, rebuilt every tick.
struct Buckets {
  int nx = 1;
  int ny = 1;
  std::vector<std::vector<int>> cells;

  Buckets(const Layout& layout, std::span<const AgentState> agents) {
    nx = static_cast<int>(std::ceil(layout.width() / kBucketSize)) + 1;
    ny = static_cast<int>(std::ceil(layout.height() / kBucketSize)) + 1;
    cells.assign(static_cast<std::size_t>(nx) * ny, {});
    for (const auto& a : agents) cells[slot(a.body.position)].push_back(a.id);
  }

  std::pair<int, int> coords(const Vec2& p) const {
    const int bx = std::clamp(static_cast<int>(std::floor(p.x / kBucketSize)), 0, nx - 1);
    const int by = std::clamp(static_cast<int>(std::floor(p.y / kBucketSize)), 0, ny - 1);
    return {bx, by};
  }
  std::size_t slot(const Vec2& p) const {
    const auto [bx, by] = coords(p);
    return static_cast<std::size_t>(by) * nx + bx;
  }

  // Calls fn(id) for every agent in buckets overlapping the disk (p, reach).
  template <typename Fn>
  void visit(const Vec2& p, double reach, Fn&& fn) const {
    const auto [lo_x, lo_y] = coords(p - Vec2{reach, reach});
    const auto [hi_x, hi_y] = coords(p + Vec2{reach, reach});
    for (int by = lo_y; by <= hi_y; ++by)
      for (int bx = lo_x; bx <= hi_x; ++bx)
        for (int id : cells[static_cast<std::size_t>(by) * nx + bx]) fn(id);
  }
};

double obstacle_distance(const Vec2& p, double reach, const Layout& layout) {
  double best = kUnreachable;
  const int x0 = std::max(0, static_cast<int>(std::floor(p.x - reach)));
  const int x1 = std::min(layout.width() - 1, static_cast<int>(std::floor(p.x + reach)));
  const int y0 = std::max(0, static_cast<int>(std::floor(p.y - reach)));
  const int y1 = std::min(layout.height() - 1, static_cast<int>(std::floor(p.y + reach)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      if (!layout.is_obstacle({x, y})) continue;
      const Vec2 q{std::clamp(p.x, double(x), x + 1.0), std::clamp(p.y, double(y), y + 1.0)};
      best = std::min(best, distance(p, q));
    }
  return best;
}

std::vector<double> prefix_lengths(const Path& path) {
  std::vector<double> prefix(path.waypoints.size(), 0.0);
  for (std::size_t i = 1; i < prefix.size(); ++i)
    prefix[i] = prefix[i - 1] + distance(path.waypoints[i - 1], path.waypoints[i]);
  return prefix;
}

// Nearest free cell of `layout` around `p`, searching outward ring by ring.
Cell nearest_free_cell(const Layout& layout, const Vec2& p) {
  const Cell c = cell_of(p);
  if (layout.is_free(c)) return c;
  const int limit = layout.width() + layout.height();
  for (int ring = 1; ring < limit; ++ring) {
    Cell best{-1, -1};
    double best_d = kUnreachable;
    for (int dy = -ring; dy <= ring; ++dy)
      for (int dx = -ring; dx <= ring; ++dx) {
        if (std::max(std::abs(dx), std::abs(dy)) != ring) continue;
        const Cell n{c.x + dx, c.y + dy};
        if (!layout.is_free(n)) continue;
        const double d = distance(p, center(n));
        if (d < best_d) {
          best_d = d;
          best = n;
        }
      }
    if (best_d < kUnreachable) return best;
  }
  throw std::logic_error("layout has no free cell");
}

bool regions_usable(const Layout& layout) {
  for (auto region : {layout.pickup_region(), layout.delivery_region()})
    for (Cell c : region)
      if (!layout.is_free(c)) return false;
  const auto seen = reachable_from(layout, layout.pickup_region().front());
  for (auto region : {layout.pickup_region(), layout.delivery_region()})
    for (Cell c : region)
      if (!seen[layout.index(c)]) return false;
  return true;
}

}  // namespace

NavMode parse_nav_mode(std::string_view text) {
  if (text == "direct") return NavMode::Direct;
  if (text == "astar") return NavMode::AStar;
  if (text == "astar_orca") return NavMode::AStarOrca;
  throw std::invalid_argument("unknown nav mode '" + std::string(text) + "'");
}

std::string_view to_string(NavMode mode) {
  switch (mode) {
    case NavMode::Direct:
      return "direct";
    case NavMode::AStar:
      return "astar";
    case NavMode::AStarOrca:
      return "astar_orca";
  }
  return "?";
}

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::Idle:
      return "idle";
    case Phase::ToPickup:
      return "to_pickup";
    case Phase::ToDropoff:
      return "to_dropoff";
  }
  return "?";
}

void SimConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid config: " + what); };
  if (!layout) fail("layout is missing");
  if (!(dt > 0.0)) fail("dt must be positive");
  if (!(radius > 0.0)) fail("radius must be positive");
  if (!(v_max > 0.0)) fail("v_max must be positive");
  if (!(nominal_speed > 0.0)) fail("nominal_speed must be positive");
  if (n_robots < 1) fail("n_robots must be at least 1");
  if (queue_len < 1) fail("queue_len must be at least 1");
  if (total_tasks < 1) fail("total_tasks must be at least 1");
  if (arrival_threshold < 0.0) fail("arrival_threshold must be nonnegative");
  if (!(orca_tau > 0.0) || !(orca_tau_obstacle > 0.0)) fail("ORCA horizons must be positive");
  if (max_neighbors < 0) fail("max_neighbors must be nonnegative");
  if (!(lookahead > 0.0)) fail("lookahead must be positive");
  if (stall_ticks < 1) fail("stall_ticks must be positive");
  if (!start_cells.empty() && static_cast<int>(start_cells.size()) != n_robots)
    fail("start_cells must list one cell per robot");
}

double SimConfig::travel_speed() const {
  return nav_mode == NavMode::AStarOrca ? v_max : nominal_speed;
}

std::vector<SimEvent> CollisionTracker::update(std::span<const AgentState> agents,
                                               const Layout& layout, double time,
                                               Metrics& metrics) {
  std::vector<SimEvent> events;
  touching_obstacle_.resize(agents.size(), 0);
  double max_radius = 0.0;
  for (const auto& a : agents) max_radius = std::max(max_radius, a.body.radius);
  const double reach = 2.0 * max_radius * kHysteresis;

  Buckets buckets(layout, agents);
  std::set<std::pair<int, int>> next;
  double tick_min = kUnreachable;
  for (const auto& a : agents) {
    buckets.visit(a.body.position, reach, [&](int j) {
      if (j <= a.id) return;
      const auto& b = agents[static_cast<std::size_t>(j)];
      const double sep = distance(a.body.position, b.body.position);
      const double r_sum = a.body.radius + b.body.radius;
      tick_min = std::min(tick_min, sep);
      const auto key = std::make_pair(a.id, j);
      const bool was = pairs_.contains(key);
      if (sep < r_sum) {
        if (!was) {
          events.push_back({SimEvent::Kind::CollisionDetected, time, a.id, j, -1});
          ++metrics.collisions;
        }
        next.insert(key);
      } else if (was && sep <= kHysteresis * r_sum) {
        next.insert(key);
      }
    });
  }
  pairs_ = std::move(next);

  if (layout.has_obstacles()) {
    for (const auto& a : agents) {
      const double r = a.body.radius;
      const double d = obstacle_distance(a.body.position, kHysteresis * r, layout);
      auto& touching = touching_obstacle_[static_cast<std::size_t>(a.id)];
      if (d < r) {
        if (!touching) {
          events.push_back({SimEvent::Kind::CollisionDetected, time, a.id, -1, -1});
          ++metrics.obstacle_collisions;
        }
        touching = 1;
      } else if (d > kHysteresis * r) {
        touching = 0;
      }
    }
  }

  last_min_ = tick_min;
  metrics.min_separation = std::min(metrics.min_separation, tick_min);
  return events;
}

Simulator::Simulator(SimConfig config, Allocator& allocator,
                     std::function<void(const AllocationRecord&)> on_allocation)
    : config_(std::move(config)),
      allocator_(&allocator),
      on_allocation_(std::move(on_allocation)),
      rng_(config_.seed),
      queue_(0) {
  config_.validate();
  const Layout& layout = *config_.layout;

  nav_layout_ = config_.layout;
  if (config_.nav_mode != NavMode::Direct && config_.plan_with_clearance && layout.has_obstacles()) {
    const int grow = static_cast<int>(std::ceil(config_.radius - 0.5));
    if (grow > 0) {
      auto inflated = std::make_shared<const Layout>(inflate_obstacles(layout, grow));
      if (regions_usable(*inflated)) nav_layout_ = std::move(inflated);
    }
  }
  const auto mode =
      config_.nav_mode == NavMode::Direct ? DistanceMode::Direct : DistanceMode::AStar;
  distances_ = std::make_unique<NavDistance>(*nav_layout_, mode);
  planner_ = std::make_unique<PathPlanner>(*nav_layout_);

  place_robots();
  queue_ = TaskQueue(static_cast<std::size_t>(config_.queue_len));
  while (!queue_.full()) queue_.push(draw_task());

  allocator_->reset(Rng::mix(config_.seed, 0x5EED));
  for (auto& agent : agents_) allocate(agent.id, initial_events_);
}

void Simulator::place_robots() {
  const Layout& free_space = *nav_layout_;
  agents_.resize(static_cast<std::size_t>(config_.n_robots));
  std::vector<Cell> chosen;
  if (!config_.start_cells.empty()) {
    chosen = config_.start_cells;
    for (Cell c : chosen)
      if (!config_.layout->is_free(c)) throw std::invalid_argument("start cell is not free");
  } else {
    // Lattice cells at robot-diameter spacing first, so dense fleets still fit.
    const int spacing = static_cast<int>(std::ceil(2.0 * config_.radius));
    std::vector<Cell> lattice;
    std::vector<Cell> rest;
    for (int y = 0; y < free_space.height(); ++y)
      for (int x = 0; x < free_space.width(); ++x) {
        const Cell c{x, y};
        if (!free_space.is_free(c)) continue;
        (x % spacing == 0 && y % spacing == 0 ? lattice : rest).push_back(c);
      }
    auto shuffle = [&](std::vector<Cell>& v) {
      for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng_.below(i)]);
    };
    shuffle(lattice);
    shuffle(rest);
    lattice.insert(lattice.end(), rest.begin(), rest.end());

    const double min_sep = 2.0 * config_.radius;
    const int window = static_cast<int>(std::ceil(min_sep));
    std::vector<std::uint8_t> taken(free_space.cell_count(), 0);
    for (Cell c : lattice) {
      if (static_cast<int>(chosen.size()) == config_.n_robots) break;
      bool ok = true;
      for (int dy = -window; dy <= window && ok; ++dy)
        for (int dx = -window; dx <= window && ok; ++dx) {
          const Cell n{c.x + dx, c.y + dy};
          if (free_space.in_bounds(n) && taken[free_space.index(n)] &&
              distance(center(n), center(c)) < min_sep)
            ok = false;
        }
      if (!ok) continue;
      taken[free_space.index(c)] = 1;
      chosen.push_back(c);
    }
    if (static_cast<int>(chosen.size()) < config_.n_robots)
      throw std::invalid_argument("only " + std::to_string(chosen.size()) +
                                  " non-overlapping start cells exist for " +
                                  std::to_string(config_.n_robots) + " robots");
  }
  for (int i = 0; i < config_.n_robots; ++i) {
    auto& a = agents_[static_cast<std::size_t>(i)];
    a.id = i;
    a.body.position = center(chosen[static_cast<std::size_t>(i)]);
    a.body.radius = config_.radius;
    a.body.max_speed = config_.v_max;
  }
}

Task Simulator::draw_task() {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Task t = sample_task(*config_.layout, rng_, next_task_id_, time());
    if (distances_->between(t.origin, t.destination) < kUnreachable &&
        nav_layout_->is_free(t.origin) && nav_layout_->is_free(t.destination)) {
      ++next_task_id_;
      return t;
    }
  }
  throw std::runtime_error("could not sample a reachable task");
}

void Simulator::assign_path(AgentState& agent, Cell goal) {
  agent.cursor = 0;
  agent.progress = 0.0;
  if (config_.nav_mode == NavMode::Direct) {
    agent.path = std::make_shared<const Path>(straight_path(agent.body.position, center(goal)));
  } else {
    const Cell start = nearest_free_cell(*nav_layout_, agent.body.position);
    agent.path = planner_->plan(start, goal);
    if (!agent.path)
      throw std::runtime_error("no path from (" + std::to_string(start.x) + "," +
                               std::to_string(start.y) + ") to (" + std::to_string(goal.x) + "," +
                               std::to_string(goal.y) + ")");
  }
  agent.path_prefix = prefix_lengths(*agent.path);
}

void Simulator::refresh_remaining_time(AgentState& agent) const {
  if (agent.phase == Phase::Idle || !agent.path) {
    agent.remaining_time = 0.0;
    return;
  }
  const Path& path = *agent.path;
  double remaining = 0.0;
  switch (config_.nav_mode) {
    case NavMode::Direct:
      remaining = distance(agent.body.position, path.goal());
      break;
    case NavMode::AStar:
      remaining = std::max(0.0, agent.path_prefix.back() - agent.progress);
      break;
    case NavMode::AStarOrca: {
      const std::size_t k = std::min(agent.cursor, path.size() - 1);
      remaining = distance(agent.body.position, path.waypoints[k]) +
                  (agent.path_prefix.back() - agent.path_prefix[k]);
      break;
    }
  }
  if (agent.phase == Phase::ToPickup) remaining += agent.delivery_leg;
  agent.remaining_time = remaining / config_.travel_speed();
}

void Simulator::allocate(int robot, std::vector<SimEvent>& events) {
  auto& agent = agents_[static_cast<std::size_t>(robot)];
  std::vector<RobotFeature> features;
  features.reserve(agents_.size());
  for (const auto& a : agents_) features.push_back({a.body.position, a.remaining_time});

  const AllocationState state = build_state(features, queue_.tasks(), static_cast<std::size_t>(robot), *distances_);
  const std::size_t action = allocator_->select(state);
  if (action >= queue_.size())
    throw std::out_of_range(allocator_->name() + " returned task index " + std::to_string(action) +
                            " for a queue of " + std::to_string(queue_.size()));
  const Task task = queue_.take(action);
  queue_.push(draw_task());
  ++metrics_.allocations;
  if (on_allocation_) on_allocation_({robot, task.id, action, time(), &state});

  agent.task = task;
  agent.phase = Phase::ToPickup;
  agent.allocation_time = time();
  agent.delivery_leg = state.tasks[action].task_length;
  assign_path(agent, task.origin);
  refresh_remaining_time(agent);

  // A robot already standing on the origin picks up immediately.
  std::vector<int> unused;
  check_arrival(agent, events, unused);
}

void Simulator::check_arrival(AgentState& agent, std::vector<SimEvent>& events,
                              std::vector<int>& available) {
  if (agent.phase == Phase::Idle) return;
  const double threshold =
      config_.nav_mode == NavMode::AStarOrca ? config_.arrival_threshold : kExactArrival;
  const Cell goal = agent.phase == Phase::ToPickup ? agent.task->origin : agent.task->destination;
  if (distance(agent.body.position, center(goal)) > threshold) return;

  const double now = time();
  if (agent.phase == Phase::ToPickup) {
    const double ttd = now - agent.allocation_time;
    metrics_.per_task_ttd.push_back(ttd);
    metrics_.ttd_total += ttd;
    events.push_back({SimEvent::Kind::PickupReached, now, agent.id, -1, agent.task->id});
    agent.phase = Phase::ToDropoff;
    assign_path(agent, agent.task->destination);
    refresh_remaining_time(agent);
    return;
  }
  events.push_back({SimEvent::Kind::TaskCompleted, now, agent.id, -1, agent.task->id});
  ++metrics_.tasks_completed;
  last_completion_tick_ = metrics_.ticks;
  if (metrics_.tasks_completed == config_.total_tasks) metrics_.makespan = now;
  agent.phase = Phase::Idle;
  agent.task.reset();
  agent.path.reset();
  agent.remaining_time = 0.0;
  events.push_back({SimEvent::Kind::RobotAvailable, now, agent.id, -1, -1});
  available.push_back(agent.id);
}

Vec2 Simulator::kinematic_step(AgentState& agent) const {
  if (agent.phase == Phase::Idle || !agent.path) return agent.body.position;
  const Path& path = *agent.path;
  const double step = config_.nominal_speed * config_.dt;
  if (config_.nav_mode == NavMode::Direct) {
    const Vec2 to_goal = path.goal() - agent.body.position;
    const double d = norm(to_goal);
    if (d <= step) return path.goal();
    return agent.body.position + to_goal * (step / d);
  }
  // Exact polyline following at nominal speed.
  const double total = agent.path_prefix.back();
  agent.progress = std::min(agent.progress + step, total);
  if (agent.progress >= total) return path.goal();
  auto it = std::upper_bound(agent.path_prefix.begin(), agent.path_prefix.end(), agent.progress);
  const std::size_t k = static_cast<std::size_t>(it - agent.path_prefix.begin());  // k >= 1
  const double seg = agent.path_prefix[k] - agent.path_prefix[k - 1];
  const double f = (agent.progress - agent.path_prefix[k - 1]) / seg;
  agent.cursor = k;
  return path.waypoints[k - 1] + (path.waypoints[k] - path.waypoints[k - 1]) * f;
}

std::vector<SimEvent> Simulator::tick() {
  std::vector<SimEvent> events;
  if (finished()) return events;
  const std::size_t n = agents_.size();

  // Phase 1: velocities from the frozen previous state.
  std::vector<Vec2> next_position(n);
  std::vector<Vec2> next_velocity(n);
  if (config_.nav_mode == NavMode::AStarOrca) {
    Buckets buckets(*config_.layout, agents_);
    const GuidanceParams guidance{config_.dt, config_.lookahead, config_.arrival_threshold};
    std::vector<std::pair<double, int>> near;
    for (std::size_t i = 0; i < n; ++i) {
      AgentState& agent = agents_[i];
      AgentBody body = agent.body;
      body.pref_velocity = {};
      if (agent.phase != Phase::Idle && agent.path) {
        const auto& wp = agent.path->waypoints;
        const std::size_t k = std::min(agent.cursor, wp.size() - 1);
        if (distance(body.position, wp[k]) > config_.lookahead + kReplanSlack) {
          const Cell goal =
              agent.phase == Phase::ToPickup ? agent.task->origin : agent.task->destination;
          assign_path(agent, goal);
        }
        body.pref_velocity =
            preferred_velocity(body, *agent.path, config_.v_max, guidance, agent.cursor);
      }

      std::vector<HalfPlane> planes =
          obstacle_halfplanes(body, *config_.layout, config_.orca_tau_obstacle, config_.dt);
      const std::size_t hard = planes.size();
      near.clear();
      const double sense_sq = config_.sensing_radius * config_.sensing_radius;
      buckets.visit(body.position, config_.sensing_radius, [&](int j) {
        if (j == agent.id) return;
        const double d2 = abs_sq(agents_[static_cast<std::size_t>(j)].body.position - body.position);
        if (d2 <= sense_sq) near.emplace_back(d2, j);
      });
      std::sort(near.begin(), near.end());
      if (near.size() > static_cast<std::size_t>(config_.max_neighbors))
        near.resize(static_cast<std::size_t>(config_.max_neighbors));
      for (const auto& [d2, j] : near)
        planes.push_back(orca_halfplane(body, agents_[static_cast<std::size_t>(j)].body,
                                        config_.orca_tau, config_.dt));
      next_velocity[i] = solve_velocity(planes, body.pref_velocity, config_.v_max, hard);
      next_position[i] = body.position + next_velocity[i] * config_.dt;
      agent.body.pref_velocity = body.pref_velocity;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      next_position[i] = kinematic_step(agents_[i]);
      next_velocity[i] = (next_position[i] - agents_[i].body.position) / config_.dt;
    }
  }

  // Phase 2: integrate, then detect events in id order.
  ++metrics_.ticks;
  for (std::size_t i = 0; i < n; ++i) {
    agents_[i].body.position = next_position[i];
    agents_[i].body.velocity = next_velocity[i];
  }
  std::vector<int> available;
  for (auto& agent : agents_) check_arrival(agent, events, available);
  for (auto& agent : agents_) refresh_remaining_time(agent);

  const double now = time();
  auto contacts = collisions_.update(agents_, *config_.layout, now, metrics_);
  if (config_.record_separation)
    metrics_.per_tick_min_separation.push_back(collisions_.last_min_separation());
  events.insert(events.end(), contacts.begin(), contacts.end());

  // Ascending id; each decision sees the queue left by the previous one.
  std::sort(available.begin(), available.end());
  for (int robot : available) {
    if (finished()) break;
    allocate(robot, events);
  }

  if (trajectory_) write_trajectory();
  if (!finished() && metrics_.ticks - last_completion_tick_ > config_.stall_ticks)
    throw SimulationStalled("no task completed within " + std::to_string(config_.stall_ticks) +
                                " ticks (t=" + std::to_string(time()) + " s, " +
                                std::to_string(metrics_.tasks_completed) + "/" +
                                std::to_string(config_.total_tasks) + " tasks done)",
                            metrics_.ticks);
  return events;
}

const Metrics& Simulator::run() {
  while (!finished()) tick();
  return metrics_;
}

int Simulator::in_progress() const {
  return static_cast<int>(std::count_if(agents_.begin(), agents_.end(),
                                        [](const AgentState& a) { return a.phase != Phase::Idle; }));
}

void Simulator::set_trajectory_sink(std::ostream* out) {
  trajectory_ = out;
  if (trajectory_) *trajectory_ << "tick,robot_id,x,y,vx,vy,phase\n";
}

void Simulator::write_trajectory() {
  for (const auto& a : agents_)
    *trajectory_ << metrics_.ticks << ',' << a.id << ',' << a.body.position.x << ','
                 << a.body.position.y << ',' << a.body.velocity.x << ',' << a.body.velocity.y << ','
                 << to_string(a.phase) << '\n';
}

Metrics run(const SimConfig& config, Allocator& allocator) {
  Simulator sim(config, allocator);
  return sim.run();
}

}  // namespace dcmrta
