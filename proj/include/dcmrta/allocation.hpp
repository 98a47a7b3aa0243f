#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dcmrta/geometry.hpp"
#include "dcmrta/planner.hpp"
#include "dcmrta/random.hpp"
#include "dcmrta/world.hpp"

namespace dcmrta {

struct RobotFeature {
  Vec2 position;
  double remaining_time = 0.0;  // seconds left on the current task, 0 when idle
};

struct TaskFeature {
  Vec2 origin;
  Vec2 destination;
  double pickup_distance = 0.0;  // selected robot to origin
  double task_length = 0.0;      // origin to destination
  // Closest robot to the origin over all robots, and over all but the selected one.
  double nearest_robot_distance = 0.0;
  double nearest_other_robot_distance = kUnreachable;
};

/// Decision-time snapshot: every robot, every queued task, and the idle robot.
struct AllocationState {
  std::vector<RobotFeature> robots;
  std::vector<TaskFeature> tasks;
  std::size_t selected = 0;
};

/// Fills task features from the selected robot's viewpoint. Throws
/// std::logic_error when `selected` is out of range or not idle.
AllocationState build_state(std::span<const RobotFeature> robots, std::span<const Task> tasks,
                            std::size_t selected, NavDistance& distances);

/// Greedy: smallest pickup distance, lowest index on ties.
std::size_t mpdm_select(const AllocationState& state);

struct RbtsOptions {
  bool exclude_selected = false;  // closest robot taken over the other robots only
  bool reverse_order = false;     // regret = k - c instead of c - k
};

/// Maximum regret c_i - k_i where c_i is the closest robot's distance to the
/// origin; lowest index on ties.
std::size_t rbts_select(const AllocationState& state, const RbtsOptions& options = {});

/// Decision rule invoked each time a robot becomes available.
class Allocator {
 public:
  virtual ~Allocator() = default;
  virtual std::string name() const = 0;
  /// Called once per simulation run before the first decision.
  virtual void reset(std::uint64_t /*run_seed*/) {}
  virtual std::size_t select(const AllocationState& state) = 0;
};

class MpdmAllocator final : public Allocator {
 public:
  std::string name() const override { return "mpdm"; }
  std::size_t select(const AllocationState& state) override { return mpdm_select(state); }
};

class RbtsAllocator final : public Allocator {
 public:
  explicit RbtsAllocator(RbtsOptions options = {}) : options_(options) {}
  std::string name() const override { return "rbts"; }
  std::size_t select(const AllocationState& state) override { return rbts_select(state, options_); }

 private:
  RbtsOptions options_;
};

/// Uniformly random task; the reference point for learned policies.
class RandomAllocator final : public Allocator {
 public:
  std::string name() const override { return "random"; }
  void reset(std::uint64_t run_seed) override { rng_ = Rng(Rng::mix(run_seed, 0xA110C)); }
  std::size_t select(const AllocationState& state) override {
    return static_cast<std::size_t>(rng_.below(state.tasks.size()));
  }

 private:
  Rng rng_;
};

}  // namespace dcmrta
