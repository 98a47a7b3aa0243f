#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dcmrta/allocation.hpp"
#include "dcmrta/orca.hpp"
#include "dcmrta/planner.hpp"
#include "dcmrta/world.hpp"

namespace dcmrta {

/// direct: straight line, no avoidance. astar: exact A* path following, no
/// avoidance. astar_orca: A* guidance filtered by ORCA.
enum class NavMode { Direct, AStar, AStarOrca };

NavMode parse_nav_mode(std::string_view text);
std::string_view to_string(NavMode mode);

struct SimConfig {
  std::shared_ptr<const Layout> layout;
  int n_robots = 10;
  int queue_len = 10;
  int total_tasks = 500;
  double dt = 0.25;
  double radius = 1.5;
  double v_max = 2.0;          // physical speed limit, used by astar_orca
  double nominal_speed = 1.0;  // travel speed of the direct and astar modes
  NavMode nav_mode = NavMode::AStar;
  std::uint64_t seed = 1;
  double arrival_threshold = 0.5;  // astar_orca only; kinematic modes land exactly

  double orca_tau = 2.0;
  double orca_tau_obstacle = 1.0;
  double sensing_radius = 10.0;
  int max_neighbors = 10;
  double lookahead = 2.0;
  long stall_ticks = 100000;
  // Plan on a copy of the layout whose obstacles are grown by the robot radius.
  bool plan_with_clearance = true;
  bool record_separation = false;
  // Optional explicit start cells, one per robot.
  std::vector<Cell> start_cells;

  /// Throws std::invalid_argument on an invalid field.
  void validate() const;
  /// Speed used for timing estimates: nominal_speed, or v_max under astar_orca.
  double travel_speed() const;
};

enum class Phase { Idle, ToPickup, ToDropoff };
std::string_view to_string(Phase phase);

struct AgentState {
  int id = 0;
  AgentBody body;
  Phase phase = Phase::Idle;
  std::optional<Task> task;
  std::shared_ptr<const Path> path;
  std::vector<double> path_prefix;  // cumulative length at each waypoint
  std::size_t cursor = 0;           // waypoint index being followed
  double progress = 0.0;            // distance travelled along path (astar mode)
  double remaining_time = 0.0;
  double allocation_time = 0.0;
  double delivery_leg = 0.0;  // nav distance origin -> destination of the task
};

struct SimEvent {
  enum class Kind { RobotAvailable, PickupReached, TaskCompleted, CollisionDetected };
  Kind kind;
  double time = 0.0;
  int robot = -1;
  int other = -1;  // second robot of a collision; -1 for an obstacle collision
  int task = -1;
};

struct Metrics {
  double ttd_total = 0.0;
  std::vector<double> per_task_ttd;  // one entry per pickup reached, in order
  double makespan = 0.0;
  long collisions = 0;           // inter-agent contact events
  long obstacle_collisions = 0;  // agent-obstacle contact events
  double min_separation = kUnreachable;
  std::vector<double> per_tick_min_separation;  // filled when record_separation
  int tasks_completed = 0;
  int allocations = 0;
  long ticks = 0;
};

/// Raised by the watchdog when no task completes within the stall budget.
class SimulationStalled : public std::runtime_error {
 public:
  SimulationStalled(const std::string& what, long tick) : std::runtime_error(what), tick_(tick) {}
  long tick() const { return tick_; }

 private:
  long tick_;
};

/// Rising-edge contact counter with 10% release hysteresis.
class CollisionTracker {
 public:
  /// Events for contacts that start at this time; bumps the counters in `metrics`.
  std::vector<SimEvent> update(std::span<const AgentState> agents, const Layout& layout,
                               double time, Metrics& metrics);
  std::size_t active_pairs() const { return pairs_.size(); }
  /// Smallest separation among nearby pairs in the last update (infinity if none).
  double last_min_separation() const { return last_min_; }

 private:
  std::set<std::pair<int, int>> pairs_;
  std::vector<std::uint8_t> touching_obstacle_;
  double last_min_ = kUnreachable;
};

/// One allocation decision, reported to observers.
struct AllocationRecord {
  int robot = 0;
  int task_id = 0;
  std::size_t action = 0;
  double time = 0.0;
  const AllocationState* state = nullptr;
};

/// Discrete-time warehouse run: navigation, event detection and allocation.
///
/// A tick first computes every agent's velocity from the frozen state of the
/// previous tick, then integrates and detects events serially in id order.
class Simulator {
 public:
  /// Places robots, fills the queue and performs the initial allocations.
  Simulator(SimConfig config, Allocator& allocator,
            std::function<void(const AllocationRecord&)> on_allocation = {});

  /// Advances one step. The watchdog throws SimulationStalled when no task
  /// has completed for stall_ticks ticks.
  std::vector<SimEvent> tick();
  bool finished() const { return metrics_.tasks_completed >= config_.total_tasks; }
  /// Ticks until finished().
  const Metrics& run();

  const SimConfig& config() const { return config_; }
  const Layout& layout() const { return *config_.layout; }
  const Layout& navigation_layout() const { return *nav_layout_; }
  const Metrics& metrics() const { return metrics_; }
  double time() const { return metrics_.ticks * config_.dt; }
  std::span<const AgentState> agents() const { return agents_; }
  const TaskQueue& queue() const { return queue_; }
  /// Events emitted by the initial allocations (pickups of co-located tasks).
  std::span<const SimEvent> initial_events() const { return initial_events_; }
  int in_progress() const;

  /// CSV rows "tick,robot_id,x,y,vx,vy,phase" for every agent after each tick.
  void set_trajectory_sink(std::ostream* out);

 private:
  void place_robots();
  Task draw_task();
  void allocate(int robot, std::vector<SimEvent>& events);
  void assign_path(AgentState& agent, Cell goal);
  void check_arrival(AgentState& agent, std::vector<SimEvent>& events, std::vector<int>& available);
  void refresh_remaining_time(AgentState& agent) const;
  Vec2 kinematic_step(AgentState& agent) const;
  void write_trajectory();

  SimConfig config_;
  Allocator* allocator_;
  std::function<void(const AllocationRecord&)> on_allocation_;
  std::shared_ptr<const Layout> nav_layout_;
  std::unique_ptr<NavDistance> distances_;
  std::unique_ptr<PathPlanner> planner_;
  Rng rng_;
  TaskQueue queue_;
  std::vector<AgentState> agents_;
  CollisionTracker collisions_;
  Metrics metrics_;
  std::vector<SimEvent> initial_events_;
  int next_task_id_ = 0;
  long last_completion_tick_ = 0;
  std::ostream* trajectory_ = nullptr;
};

/// Builds a simulator and runs it to completion.
Metrics run(const SimConfig& config, Allocator& allocator);

}  // namespace dcmrta
